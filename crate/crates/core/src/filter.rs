//! Score-driven strength recursion over a panel of tournament editions.
//!
//! For a team `i` taking part in edition `t` the strength is
//!
//! ```text
//! f[i,t] = omega[i] + sum_j beta[j] * x[i,t,j] + u[i,t]
//! u[i,t] = phi * u[i,t-1] + 1{i took part in t-1} * alpha * score_i(f[t-1] | y[t-1])
//! ```
//!
//! with `u[i,0] = 0`. The dynamic component `u` is tracked for every team
//! at every step, so teams that skip editions (or editions that were never
//! held) simply decay towards zero by `phi` per step.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pl::{self, Ranking, TeamId};

/// One tournament edition. An empty `ordering` marks a cancelled edition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edition {
    pub label: i32,
    /// Participating teams, best first.
    pub ordering: Vec<TeamId>,
    /// Predictor values, one row per entry of `ordering`, one column per
    /// dataset variable.
    pub predictors: Vec<Vec<f64>>,
}

impl Edition {
    pub fn cancelled(label: i32) -> Self {
        Edition {
            label,
            ordering: Vec::new(),
            predictors: Vec::new(),
        }
    }

    pub fn is_cancelled(&self) -> bool {
        self.ordering.is_empty()
    }

    pub fn ranking(&self) -> Option<Ranking> {
        Ranking::new(self.ordering.clone()).ok()
    }

    pub fn participants(&self) -> BTreeSet<TeamId> {
        self.ordering.iter().copied().collect()
    }

    /// Predictor row of `team`, if it takes part.
    pub fn predictors_of(&self, team: TeamId) -> Option<&[f64]> {
        self.ordering
            .iter()
            .position(|&t| t == team)
            .map(|r| self.predictors[r].as_slice())
    }
}

/// Time-indexed participation sets, rankings and predictors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    /// Team registry; a [`TeamId`] indexes into it.
    pub teams: Vec<String>,
    /// Predictor variable names, in column order.
    pub variables: Vec<String>,
    pub editions: Vec<Edition>,
}

impl PanelDataset {
    pub fn n_teams(&self) -> usize {
        self.teams.len()
    }

    pub fn n_variables(&self) -> usize {
        self.variables.len()
    }

    pub fn n_editions(&self) -> usize {
        self.editions.len()
    }

    /// Number of editions that were actually held.
    pub fn n_ranked(&self) -> usize {
        self.editions.iter().filter(|e| !e.is_cancelled()).count()
    }

    pub fn team_id(&self, name: &str) -> Option<TeamId> {
        self.teams.iter().position(|t| t == name)
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    /// Number of editions each team took part in.
    pub fn appearances(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_teams()];
        for e in &self.editions {
            for &t in &e.ordering {
                counts[t] += 1;
            }
        }
        counts
    }

    /// The panel restricted to its first `len` editions.
    pub fn truncated(&self, len: usize) -> PanelDataset {
        PanelDataset {
            teams: self.teams.clone(),
            variables: self.variables.clone(),
            editions: self.editions[..len.min(self.editions.len())].to_vec(),
        }
    }

    /// The panel with only the named predictor columns, in the given order.
    pub fn select_variables(&self, names: &[String]) -> Result<PanelDataset> {
        let mut cols = Vec::with_capacity(names.len());
        let mut missing = Vec::new();
        for n in names {
            match self.variable_index(n) {
                Some(c) => cols.push(c),
                None => missing.push(format!("unknown predictor variable `{n}`")),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Validation(missing));
        }
        let editions = self
            .editions
            .iter()
            .map(|e| Edition {
                label: e.label,
                ordering: e.ordering.clone(),
                predictors: e
                    .predictors
                    .iter()
                    .map(|row| cols.iter().map(|&c| row[c]).collect())
                    .collect(),
            })
            .collect();
        Ok(PanelDataset {
            teams: self.teams.clone(),
            variables: names.to_vec(),
            editions,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let n = self.n_teams();
        let m = self.n_variables();
        if n < 2 {
            problems.push(format!("need at least 2 teams, registry has {n}"));
        }
        if self.editions.is_empty() {
            problems.push("need at least 1 edition".to_string());
        }
        let names: BTreeSet<&String> = self.teams.iter().collect();
        if names.len() != n {
            problems.push("team names are not unique".to_string());
        }
        for (e, ed) in self.editions.iter().enumerate() {
            let tag = format!("edition {} ({})", e, ed.label);
            if ed.ordering.len() == 1 {
                problems.push(format!("{tag}: a single participant cannot be ranked"));
            }
            let mut seen = BTreeSet::new();
            for &t in &ed.ordering {
                if t >= n {
                    problems.push(format!("{tag}: team id {t} outside registry of {n}"));
                } else if !seen.insert(t) {
                    problems.push(format!("{tag}: team `{}` ranked twice", self.teams[t]));
                }
            }
            if ed.predictors.len() != ed.ordering.len() {
                problems.push(format!(
                    "{tag}: {} predictor rows for {} participants",
                    ed.predictors.len(),
                    ed.ordering.len()
                ));
                continue;
            }
            for (r, row) in ed.predictors.iter().enumerate() {
                let team = ed.ordering[r];
                let name = self.teams.get(team).map(String::as_str).unwrap_or("?");
                if row.len() != m {
                    problems.push(format!(
                        "{tag}: team `{name}` has {} predictor values, expected {m}",
                        row.len()
                    ));
                }
                for (j, v) in row.iter().enumerate() {
                    if !v.is_finite() {
                        let var = self.variables.get(j).map(String::as_str).unwrap_or("?");
                        problems.push(format!("{tag}: team `{name}` variable `{var}` is {v}"));
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Model coefficients: fixed effects, regression weights, autoregressive
/// and score coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub omega: Vec<f64>,
    pub beta: Vec<f64>,
    pub phi: f64,
    pub alpha: f64,
}

impl Coefficients {
    /// All-zero coefficients for `n` teams and `m` predictors.
    pub fn zeros(n: usize, m: usize) -> Self {
        Coefficients {
            omega: vec![0.0; n],
            beta: vec![0.0; m],
            phi: 0.0,
            alpha: 0.0,
        }
    }

    /// Copy with the fixed effects shifted to sum to zero.
    pub fn standardized(&self) -> Self {
        let mean = self.omega.iter().sum::<f64>() / self.omega.len().max(1) as f64;
        Coefficients {
            omega: self.omega.iter().map(|w| w - mean).collect(),
            ..self.clone()
        }
    }

    /// Problems that prevent running the filter on `dataset`.
    pub fn problems(&self, dataset: &PanelDataset) -> Vec<String> {
        let mut out = Vec::new();
        if self.omega.len() != dataset.n_teams() {
            out.push(format!(
                "{} fixed effects for {} teams",
                self.omega.len(),
                dataset.n_teams()
            ));
        }
        if self.beta.len() != dataset.n_variables() {
            out.push(format!(
                "{} regression coefficients for {} predictors",
                self.beta.len(),
                dataset.n_variables()
            ));
        }
        for (i, w) in self.omega.iter().enumerate() {
            if !w.is_finite() {
                let name = dataset.teams.get(i).map(String::as_str).unwrap_or("?");
                out.push(format!("omega[{name}] is {w}"));
            }
        }
        for (j, b) in self.beta.iter().enumerate() {
            if !b.is_finite() {
                out.push(format!("beta[{j}] is {b}"));
            }
        }
        if !self.phi.is_finite() {
            out.push(format!("phi is {}", self.phi));
        }
        if !self.alpha.is_finite() {
            out.push(format!("alpha is {}", self.alpha));
        }
        let sum: f64 = self.omega.iter().sum();
        if sum.abs() > 1e-10 {
            out.push(format!("fixed effects sum to {sum:e}, not 0"));
        }
        out
    }

    fn check(&self, dataset: &PanelDataset) -> Result<()> {
        let problems = self.problems(dataset);
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

/// Everything the recursion computes for one `(dataset, coefficients)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOutput {
    /// Dynamic component for every team. Row `0` is the initial state
    /// (all zero), row `t` belongs to edition `t - 1` (0-based), and the
    /// final row is the one-step-ahead state after the last edition.
    pub u: Vec<Vec<f64>>,
    /// Strengths per edition, aligned with that edition's ordering.
    pub strengths: Vec<Vec<f64>>,
    /// Scores per edition, aligned with that edition's ordering.
    pub scores: Vec<Vec<f64>>,
    /// Log-likelihood contribution per edition (0 for cancelled editions).
    pub loglik: Vec<f64>,
}

impl FilterOutput {
    /// Dynamic component in force at 0-based edition `e`.
    pub fn u_at(&self, e: usize) -> &[f64] {
        &self.u[e + 1]
    }

    /// Dynamic component for the edition after the last one.
    pub fn u_next(&self) -> &[f64] {
        self.u.last().expect("filter output always has rows")
    }

    /// Strength of `team` at 0-based edition `e`, if it took part.
    pub fn strength(&self, dataset: &PanelDataset, e: usize, team: TeamId) -> Option<f64> {
        dataset.editions[e]
            .ordering
            .iter()
            .position(|&t| t == team)
            .map(|r| self.strengths[e][r])
    }

    pub fn total_loglik(&self) -> f64 {
        self.loglik.iter().sum()
    }
}

/// Regression part of the strength: `omega[team] + beta . x`.
pub(crate) fn static_strength(coef: &Coefficients, team: TeamId, x: &[f64]) -> f64 {
    coef.omega[team]
        + coef
            .beta
            .iter()
            .zip(x)
            .map(|(b, v)| b * v)
            .sum::<f64>()
}

/// The recursion shared by [`run_filter`] and [`filtered_loglik`].
/// `on_edition(e, strengths, scores, loglik)` fires for every held edition,
/// `on_state(u)` after every state update including the initial one and
/// the one-step-ahead one.
fn recurse(
    dataset: &PanelDataset,
    coef: &Coefficients,
    mut on_edition: impl FnMut(usize, &[f64], &[f64], f64),
    mut on_state: impl FnMut(&[f64]),
) {
    let n = dataset.n_teams();
    let mut u = vec![0.0; n];
    on_state(&u);
    let cap = dataset
        .editions
        .iter()
        .map(|e| e.ordering.len())
        .max()
        .unwrap_or(0);
    let mut strengths = vec![0.0; cap];
    let mut scores = vec![0.0; cap];
    let mut scratch = vec![0.0; cap];
    let mut prev: Option<usize> = None;

    for step in 0..=dataset.n_editions() {
        for v in u.iter_mut() {
            *v *= coef.phi;
        }
        if let Some(p) = prev {
            let ordering = &dataset.editions[p].ordering;
            for (r, &team) in ordering.iter().enumerate() {
                u[team] += coef.alpha * scores[r];
            }
        }
        on_state(&u);
        prev = None;
        let Some(edition) = dataset.editions.get(step) else {
            break;
        };
        let k = edition.ordering.len();
        if k == 0 {
            continue;
        }
        for (r, &team) in edition.ordering.iter().enumerate() {
            strengths[r] = static_strength(coef, team, &edition.predictors[r]) + u[team];
        }
        let ll = pl::log_pmf_ordered(&strengths[..k]);
        pl::score_ordered(&strengths[..k], &mut scratch[..k], &mut scores[..k]);
        on_edition(step, &strengths[..k], &scores[..k], ll);
        prev = Some(step);
    }
}

/// Run the recursion over every edition of `dataset`.
pub fn run_filter(dataset: &PanelDataset, coef: &Coefficients) -> Result<FilterOutput> {
    dataset.validate()?;
    coef.check(dataset)?;
    let t = dataset.n_editions();
    let mut out = FilterOutput {
        u: Vec::with_capacity(t + 2),
        strengths: vec![Vec::new(); t],
        scores: vec![Vec::new(); t],
        loglik: vec![0.0; t],
    };
    let mut u_rows = Vec::with_capacity(t + 2);
    recurse(
        dataset,
        coef,
        |e, f, s, ll| {
            out.strengths[e] = f.to_vec();
            out.scores[e] = s.to_vec();
            out.loglik[e] = ll;
        },
        |u| u_rows.push(u.to_vec()),
    );
    out.u = u_rows;
    Ok(out)
}

/// Total log-likelihood of the observed rankings under the filtered strengths.
pub fn filtered_loglik(dataset: &PanelDataset, coef: &Coefficients) -> Result<f64> {
    dataset.validate()?;
    coef.check(dataset)?;
    Ok(filtered_loglik_unchecked(dataset, coef))
}

/// [`filtered_loglik`] without validation, for inner optimization loops.
/// Callers guarantee the dataset and coefficient dimensions agree.
pub fn filtered_loglik_unchecked(dataset: &PanelDataset, coef: &Coefficients) -> f64 {
    let mut total = 0.0;
    recurse(dataset, coef, |_, _, _, ll| total += ll, |_| {});
    total
}
