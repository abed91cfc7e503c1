//! Synthetic panels drawn from the dynamic model itself.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{Coefficients, Edition, PanelDataset};
use crate::pl::{self, StrengthVector, TeamId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub n_editions: usize,
    /// True coefficients; `omega.len()` fixes the number of teams and
    /// `beta.len()` the number of predictors.
    pub coef: Coefficients,
    /// Standard deviation of the i.i.d. normal predictors.
    pub predictor_sd: f64,
    /// Probability that a team takes part in a given edition. At least two
    /// teams are always kept.
    pub participation: f64,
    /// Probability that an edition is cancelled outright.
    pub cancellation: f64,
    pub first_label: i32,
}

impl SimulationConfig {
    /// Every team in every edition, standard-normal predictors.
    pub fn full(n_editions: usize, coef: Coefficients) -> Self {
        SimulationConfig {
            n_editions,
            coef,
            predictor_sd: 1.0,
            participation: 1.0,
            cancellation: 0.0,
            first_label: 1,
        }
    }
}

/// A simulated panel together with the strengths that generated it.
#[derive(Clone, Debug)]
pub struct Simulated {
    pub panel: PanelDataset,
    /// True strengths per edition aligned with the drawn ordering.
    pub strengths: Vec<Vec<f64>>,
}

/// Evenly spaced fixed effects in `[-spread, spread]`, summing to zero.
pub fn spread_omega(n: usize, spread: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n)
        .map(|i| spread * (2.0 * i as f64 / (n - 1) as f64 - 1.0))
        .collect()
}

/// Draw a panel by running the strength recursion forward and sampling each
/// ranking from the Plackett-Luce distribution.
pub fn simulate_panel<R: Rng + ?Sized>(cfg: &SimulationConfig, rng: &mut R) -> Result<Simulated> {
    let n = cfg.coef.omega.len();
    let m = cfg.coef.beta.len();
    if n < 2 {
        return Err(Error::Domain("simulation needs at least 2 teams".into()));
    }
    if !(0.0..=1.0).contains(&cfg.participation) || !(0.0..=1.0).contains(&cfg.cancellation) {
        return Err(Error::Domain("probabilities must lie in [0, 1]".into()));
    }
    let noise = Normal::new(0.0, cfg.predictor_sd)
        .map_err(|e| Error::Domain(format!("predictor sd: {e}")))?;
    let coef = &cfg.coef;
    let mut u = vec![0.0; n];
    let mut last: Option<(Vec<TeamId>, Vec<f64>)> = None;
    let mut editions = Vec::with_capacity(cfg.n_editions);
    let mut strengths = Vec::with_capacity(cfg.n_editions);

    for t in 0..cfg.n_editions {
        for v in &mut u {
            *v *= coef.phi;
        }
        if let Some((ordering, score)) = last.take() {
            for (team, s) in ordering.iter().zip(score) {
                u[*team] += coef.alpha * s;
            }
        }
        let label = cfg.first_label + t as i32;
        let cancelled = cfg.cancellation > 0.0 && rng.random::<f64>() < cfg.cancellation;
        if cancelled {
            editions.push(Edition::cancelled(label));
            strengths.push(Vec::new());
            continue;
        }
        let mut present: Vec<TeamId> = (0..n)
            .filter(|_| cfg.participation >= 1.0 || rng.random::<f64>() < cfg.participation)
            .collect();
        while present.len() < 2 {
            let extra = rng.random_range(0..n);
            if !present.contains(&extra) {
                present.push(extra);
            }
        }
        present.sort_unstable();

        let mut rows = std::collections::BTreeMap::new();
        let mut f = StrengthVector::new();
        for &team in &present {
            let x: Vec<f64> = (0..m).map(|_| noise.sample(rng)).collect();
            let value = coef.omega[team]
                + coef.beta.iter().zip(&x).map(|(b, v)| b * v).sum::<f64>()
                + u[team];
            f.insert(team, value);
            rows.insert(team, x);
        }
        let ranking = pl::sample_ranking(&f, rng)?;
        let score = pl::score(&ranking, &f)?;
        let ordering = ranking.ordering().to_vec();
        strengths.push(ordering.iter().map(|&t| f.get(t).unwrap()).collect());
        let predictors = ordering.iter().map(|t| rows.remove(t).unwrap()).collect();
        let score_vals = ordering.iter().map(|&t| score.get(t).unwrap()).collect();
        editions.push(Edition {
            label,
            ordering: ordering.clone(),
            predictors,
        });
        last = Some((ordering, score_vals));
    }

    Ok(Simulated {
        panel: PanelDataset {
            teams: (0..n).map(|i| format!("team{i:02}")).collect(),
            variables: (0..m).map(|j| format!("x{}", j + 1)).collect(),
            editions,
        },
        strengths,
    })
}
