//! One-step-ahead forecasts and their rolling out-of-sample evaluation.
//!
//! Probabilities are scored at the realized outcome: the reported champion
//! probability of an edition is the forecast probability of the team that
//! actually won, and likewise for the medal and playoff sets. Whether the
//! modal ranking hit each of those is kept as a supplementary flag.
//! Rank errors compare the modal ranking with the realized one; the modal
//! ranking is not the mean ranking, so treat those errors with caution.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{fit, FitOptions, ModelSpec};
use crate::filter::{run_filter, static_strength, Coefficients, PanelDataset};
use crate::json::fmt_f64;
use crate::pl::{self, Ranking, StrengthVector, TeamId, DEFAULT_EXACT_CAP};

/// Default Monte-Carlo budget for playoff sets too large to enumerate.
pub const DEFAULT_MC_DRAWS: usize = 1_000_000;

/// Playoff size used when none is given: 8 of 16, 4 of 8, otherwise half
/// the field rounded up (at least 3, the medal set).
pub fn default_k_playoff(n: usize) -> usize {
    match n {
        16 => 8,
        8 => 4,
        _ => n.div_ceil(2).max(3.min(n)),
    }
}

/// Strengths for the edition after the last one in `dataset`, for the given
/// participants with predictor rows aligned to them. A team that never
/// appeared contributes a zero fixed effect and zero dynamic state.
pub fn one_step_forecast(
    dataset: &PanelDataset,
    coef: &Coefficients,
    participants: &[TeamId],
    predictors_next: &[Vec<f64>],
) -> Result<StrengthVector> {
    let out = run_filter(dataset, coef)?;
    if participants.len() != predictors_next.len() {
        return Err(Error::Data(format!(
            "{} predictor rows for {} participants",
            predictors_next.len(),
            participants.len()
        )));
    }
    let u = out.u_next();
    let mut f = StrengthVector::new();
    for (&team, row) in participants.iter().zip(predictors_next) {
        let name = dataset
            .teams
            .get(team)
            .ok_or_else(|| Error::Data(format!("team id {team} outside the registry")))?;
        if row.len() != dataset.n_variables() {
            return Err(Error::Data(format!(
                "team `{name}` has {} predictor values, expected {}",
                row.len(),
                dataset.n_variables()
            )));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "missing value of `{}` for team `{name}`",
                dataset.variables[j]
            )));
        }
        if f.get(team).is_some() {
            return Err(Error::Data(format!("team `{name}` listed twice")));
        }
        f.insert(team, static_strength(coef, team, row) + u[team]);
    }
    Ok(f)
}

/// One team's line in an edition evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeamForecast {
    pub team: TeamId,
    pub name: String,
    pub strength: f64,
    pub modal_rank: usize,
    pub realized_rank: usize,
    pub abs_error: usize,
}

/// Forecast quality for one held-out edition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditionEvaluation {
    pub label: i32,
    pub n_teams: usize,
    pub k_playoff: usize,
    /// Log-probability of the realized ranking.
    pub loglik: f64,
    pub champion_prob: f64,
    pub medal_prob: f64,
    pub playoff_prob: f64,
    /// Monte-Carlo standard error, when the playoff set was too large to
    /// enumerate.
    pub playoff_std_error: Option<f64>,
    pub modal_champion_hit: bool,
    pub modal_medal_hit: bool,
    pub modal_playoff_hit: bool,
    pub mae: f64,
    pub rmse: f64,
    pub teams: Vec<TeamForecast>,
}

impl EditionEvaluation {
    /// Attach the edition label and team names.
    pub fn named(mut self, label: i32, names: &[String]) -> Self {
        self.label = label;
        for t in &mut self.teams {
            if let Some(n) = names.get(t.team) {
                t.name = n.clone();
            }
        }
        self
    }
}

/// Score a forecast against the realized ranking. The playoff probability
/// is exact when `k_playoff!` orderings fit the enumeration cap and a
/// Monte-Carlo estimate with `mc_draws` draws otherwise.
pub fn evaluate_edition<R: Rng + ?Sized>(
    forecast: &StrengthVector,
    realized: &Ranking,
    k_playoff: usize,
    mc_draws: usize,
    rng: &mut R,
) -> Result<EditionEvaluation> {
    let n = realized.len();
    let forecast_set: BTreeSet<TeamId> = forecast.teams().collect();
    if forecast_set != realized.participants() {
        return Err(Error::Data(
            "realized ranking and forecast cover different teams".into(),
        ));
    }
    if n < 3 {
        return Err(Error::Domain(format!("need at least 3 teams for a medal set, got {n}")));
    }
    if !(3..=n).contains(&k_playoff) {
        return Err(Error::Domain(format!("playoff size {k_playoff} outside 3..={n}")));
    }
    let set = |k: usize| -> BTreeSet<TeamId> { realized.top(k).iter().copied().collect() };
    let medal_set = set(3);
    let playoff_set = set(k_playoff);

    let loglik = pl::log_pmf(realized, forecast)?;
    let champion_prob = pl::champion_probability(forecast, realized.winner())?;
    let medal_prob = pl::top_k_set_probability_exact(forecast, &medal_set, DEFAULT_EXACT_CAP)?;
    let (playoff_prob, playoff_std_error) =
        match pl::top_k_set_probability_exact(forecast, &playoff_set, DEFAULT_EXACT_CAP) {
            Ok(p) => (p, None),
            Err(Error::Capacity(_)) => {
                let est = pl::top_k_set_probability_mc(forecast, &playoff_set, mc_draws, rng)?;
                (est.value, Some(est.std_error))
            }
            Err(e) => return Err(e),
        };

    let modal = pl::modal_ranking(forecast)?;
    let modal_top = |k: usize| -> BTreeSet<TeamId> { modal.top(k).iter().copied().collect() };
    let mut teams = Vec::with_capacity(n);
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    for (r, &team) in realized.ordering().iter().enumerate() {
        let modal_rank = modal.rank_of(team).expect("same participants");
        let err = modal_rank.abs_diff(r + 1);
        abs_sum += err as f64;
        sq_sum += (err * err) as f64;
        teams.push(TeamForecast {
            team,
            name: String::new(),
            strength: forecast.get(team).expect("same participants"),
            modal_rank,
            realized_rank: r + 1,
            abs_error: err,
        });
    }

    Ok(EditionEvaluation {
        label: 0,
        n_teams: n,
        k_playoff,
        loglik,
        champion_prob,
        medal_prob,
        playoff_prob,
        playoff_std_error,
        modal_champion_hit: modal.winner() == realized.winner(),
        modal_medal_hit: modal_top(3) == medal_set,
        modal_playoff_hit: modal_top(k_playoff) == playoff_set,
        mae: abs_sum / n as f64,
        rmse: (sq_sum / n as f64).sqrt(),
        teams,
    })
}

/// Means of the per-edition entries plus modal hit counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_editions: usize,
    pub loglik: f64,
    pub champion_prob: f64,
    pub medal_prob: f64,
    pub playoff_prob: f64,
    pub mae: f64,
    pub rmse: f64,
    pub modal_champion_hits: usize,
    pub modal_medal_hits: usize,
    pub modal_playoff_hits: usize,
}

impl Aggregate {
    pub fn of(rows: &[EditionForecast]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |g: fn(&EditionEvaluation) -> f64| rows.iter().map(|r| g(&r.evaluation)).sum::<f64>() / n;
        let count = |g: fn(&EditionEvaluation) -> bool| rows.iter().filter(|r| g(&r.evaluation)).count();
        Aggregate {
            n_editions: rows.len(),
            loglik: mean(|e| e.loglik),
            champion_prob: mean(|e| e.champion_prob),
            medal_prob: mean(|e| e.medal_prob),
            playoff_prob: mean(|e| e.playoff_prob),
            mae: mean(|e| e.mae),
            rmse: mean(|e| e.rmse),
            modal_champion_hits: count(|e| e.modal_champion_hit),
            modal_medal_hits: count(|e| e.modal_medal_hit),
            modal_playoff_hits: count(|e| e.modal_playoff_hit),
        }
    }
}

/// A held-out edition with the coefficients fitted on its training window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditionForecast {
    /// Labels of the first and last training editions.
    pub train_from: i32,
    pub train_to: i32,
    pub coef: Coefficients,
    pub evaluation: EditionEvaluation,
    /// The fit stopped on its evaluation budget.
    pub unconverged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastOptions {
    pub fit: FitOptions,
    /// Playoff size; `None` applies [`default_k_playoff`] per edition.
    pub k_playoff: Option<usize>,
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        ForecastOptions {
            fit: FitOptions::default(),
            k_playoff: None,
            mc_draws: DEFAULT_MC_DRAWS,
            seed: 20_240_502,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub spec: ModelSpec,
    pub holdout: usize,
    pub options: ForecastOptions,
    pub editions: Vec<EditionForecast>,
    pub aggregate: Aggregate,
    pub notes: Vec<String>,
}

/// Column order of [`ForecastReport::to_csv`].
pub const CSV_COLUMNS: [&str; 14] = [
    "edition",
    "n_teams",
    "k_playoff",
    "loglik",
    "champion_prob",
    "medal_prob",
    "playoff_prob",
    "playoff_std_error",
    "mae",
    "rmse",
    "modal_champion_hit",
    "modal_medal_hit",
    "modal_playoff_hit",
    "lambda",
];

impl ForecastReport {
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }

    /// One row per held-out edition and a final `AGG` row. Hit columns are
    /// 0/1 per edition and counts in the aggregate row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS)?;
        let lambda = fmt_f64(self.spec.lambda);
        let flag = |b: bool| if b { "1" } else { "0" }.to_string();
        for r in &self.editions {
            let e = &r.evaluation;
            w.write_record([
                e.label.to_string(),
                e.n_teams.to_string(),
                e.k_playoff.to_string(),
                fmt_f64(e.loglik),
                fmt_f64(e.champion_prob),
                fmt_f64(e.medal_prob),
                fmt_f64(e.playoff_prob),
                e.playoff_std_error.map(fmt_f64).unwrap_or_default(),
                fmt_f64(e.mae),
                fmt_f64(e.rmse),
                flag(e.modal_champion_hit),
                flag(e.modal_medal_hit),
                flag(e.modal_playoff_hit),
                lambda.clone(),
            ])?;
        }
        let a = &self.aggregate;
        w.write_record([
            "AGG".to_string(),
            String::new(),
            String::new(),
            fmt_f64(a.loglik),
            fmt_f64(a.champion_prob),
            fmt_f64(a.medal_prob),
            fmt_f64(a.playoff_prob),
            String::new(),
            fmt_f64(a.mae),
            fmt_f64(a.rmse),
            a.modal_champion_hits.to_string(),
            a.modal_medal_hits.to_string(),
            a.modal_playoff_hits.to_string(),
            lambda,
        ])?;
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Refit on all editions before each of the last `holdout` ranked editions
/// and forecast it one step ahead.
pub fn rolling_evaluation(
    dataset: &PanelDataset,
    spec: &ModelSpec,
    holdout: usize,
    opts: &ForecastOptions,
) -> Result<ForecastReport> {
    let ds = dataset.select_variables(&spec.predictors)?;
    ds.validate()?;
    let ranked: Vec<usize> = (0..ds.n_editions())
        .filter(|&e| !ds.editions[e].is_cancelled())
        .collect();
    if holdout == 0 || holdout >= ranked.len() {
        return Err(Error::Domain(format!(
            "holdout {holdout} must be between 1 and {} (ranked editions minus one)",
            ranked.len().saturating_sub(1)
        )));
    }
    let fit_spec = ModelSpec {
        predictors: ds.variables.clone(),
        ..spec.clone()
    };
    let held = &ranked[ranked.len() - holdout..];
    let fit_opts = FitOptions {
        allow_unconverged: true,
        ..opts.fit.clone()
    };
    let editions: Vec<EditionForecast> = held
        .par_iter()
        .map(|&e| {
            let train = ds.truncated(e);
            let edition = &ds.editions[e];
            let (from, to) = (train.editions[0].label, train.editions[e - 1].label);
            let fitted = fit(&train, &fit_spec, None, &fit_opts).map_err(|err| match err {
                Error::Partition { .. } | Error::Validation(_) | Error::Data(_) => Error::Data(format!(
                    "training window {from}-{to} for edition {}: {err}",
                    edition.label
                )),
                other => other,
            })?;
            let f = one_step_forecast(&train, &fitted.coef, &edition.ordering, &edition.predictors)?;
            let realized = Ranking::new(edition.ordering.clone())?;
            let k = opts.k_playoff.unwrap_or_else(|| default_k_playoff(realized.len()));
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(e as u64);
            let evaluation =
                evaluate_edition(&f, &realized, k, opts.mc_draws, &mut rng)?.named(edition.label, &ds.teams);
            Ok(EditionForecast {
                train_from: from,
                train_to: to,
                coef: fitted.coef,
                evaluation,
                unconverged: !fitted.convergence.converged,
            })
        })
        .collect::<Result<_>>()?;
    let aggregate = Aggregate::of(&editions);
    let mut notes = vec![
        "probabilities are forecast probabilities of the realized outcome, averaged over editions".to_string(),
        "rank errors compare the modal ranking, not the mean ranking, with the realized one; interpret with caution".to_string(),
        "modal rankings break equal strengths by ascending team index".to_string(),
    ];
    for r in editions.iter().filter(|r| r.unconverged) {
        notes.push(format!(
            "edition {}: optimizer stopped on its evaluation budget; forecast uses the best point found",
            r.evaluation.label
        ));
    }
    Ok(ForecastReport {
        spec: spec.clone(),
        holdout,
        options: opts.clone(),
        editions,
        aggregate,
        notes,
    })
}

/// Penalty choices used when none are given.
pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.0, 0.001, 0.01, 0.1, 1.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaResult {
    pub lambda: f64,
    pub report: Option<ForecastReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSearch {
    /// Penalty with the highest average predictive log-likelihood; ties go
    /// to the earlier grid entry.
    pub best: f64,
    pub results: Vec<LambdaResult>,
}

impl LambdaSearch {
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }
}

/// Rolling evaluation at every penalty in `grid`.
pub fn lambda_grid_search(
    dataset: &PanelDataset,
    spec: &ModelSpec,
    grid: &[f64],
    holdout: usize,
    opts: &ForecastOptions,
) -> Result<LambdaSearch> {
    if grid.is_empty() {
        return Err(Error::Domain("penalty grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::Domain(format!("penalty {bad} must be finite and >= 0")));
    }
    let results: Vec<LambdaResult> = grid
        .iter()
        .map(|&lambda| {
            let s = spec.clone().with_lambda(lambda);
            match rolling_evaluation(dataset, &s, holdout, opts) {
                Ok(r) => LambdaResult {
                    lambda,
                    report: Some(r),
                    error: None,
                },
                Err(e) => LambdaResult {
                    lambda,
                    report: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best = results
        .iter()
        .filter_map(|r| r.report.as_ref().map(|rep| (r.lambda, rep.aggregate.loglik)))
        .fold(None, |acc: Option<(f64, f64)>, (l, ll)| match acc {
            Some((_, best_ll)) if best_ll >= ll => acc,
            _ => Some((l, ll)),
        });
    match best {
        Some((best, _)) => Ok(LambdaSearch { best, results }),
        None => Err(Error::Data(format!(
            "every penalty failed: {}",
            results
                .iter()
                .map(|r| format!("{}: {}", r.lambda, r.error.as_deref().unwrap_or("")))
                .collect::<Vec<_>>()
                .join("; ")
        ))),
    }
}
