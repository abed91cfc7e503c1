//! Rank correlations across editions and tournaments, with percentile
//! bootstrap bands.
//!
//! A lag-`k` pair is a team's rank in the edition labelled `y` together with
//! its rank in the edition labelled `y - k` of the other panel (the same
//! panel for autocorrelations), so teams are matched by name and editions by
//! label. Teams absent from either edition contribute nothing. The bootstrap
//! resamples these pairs i.i.d.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::PanelDataset;
use crate::json::fmt_f64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationMethod {
    /// Pearson on the raw values.
    #[default]
    Pearson,
    /// Pearson on mid-ranks.
    Spearman,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub replications: usize,
    pub seed: u64,
    pub level: f64,
    pub method: CorrelationMethod,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            replications: 2000,
            seed: 20_240_503,
            level: 0.95,
            method: CorrelationMethod::Pearson,
        }
    }
}

/// Pearson correlation, `None` for fewer than two points or a constant
/// input.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Mid-ranks (ties share the average position), 1-based.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

pub fn correlation(x: &[f64], y: &[f64], method: CorrelationMethod) -> Option<f64> {
    match method {
        CorrelationMethod::Pearson => pearson(x, y),
        CorrelationMethod::Spearman => pearson(&mid_ranks(x), &mid_ranks(y)),
    }
}

/// Rank pairs `(a at y, b at y - lag)` for every label `y` present in `a`.
pub fn lagged_pairs(a: &PanelDataset, b: &PanelDataset, lag: i32) -> Vec<(f64, f64)> {
    let ranks = |p: &PanelDataset| -> BTreeMap<i32, BTreeMap<String, f64>> {
        p.editions
            .iter()
            .map(|e| {
                let m = e
                    .ordering
                    .iter()
                    .enumerate()
                    .map(|(r, &t)| (p.teams[t].clone(), (r + 1) as f64))
                    .collect();
                (e.label, m)
            })
            .collect()
    };
    let ra = ranks(a);
    let rb = ranks(b);
    let mut out = Vec::new();
    for (year, teams) in &ra {
        let Some(other) = rb.get(&(year - lag)) else {
            continue;
        };
        for (team, &r) in teams {
            if let Some(&s) = other.get(team) {
                out.push((r, s));
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagCorrelation {
    pub lag: i32,
    pub n_pairs: usize,
    pub estimate: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub pairing: String,
    pub options: BootstrapOptions,
    pub lags: Vec<LagCorrelation>,
}

impl CorrelationReport {
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }

    /// Tidy `lag,n_pairs,estimate,lo,hi` rows; undefined cells are empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["lag", "n_pairs", "estimate", "lo", "hi"])?;
        let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for l in &self.lags {
            w.write_record([
                l.lag.to_string(),
                l.n_pairs.to_string(),
                cell(l.estimate),
                cell(l.lower),
                cell(l.upper),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn lag_report(pairs: &[(f64, f64)], lag: i32, slot: u64, opts: &BootstrapOptions) -> LagCorrelation {
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let estimate = correlation(&x, &y, opts.method);
    let mut out = LagCorrelation {
        lag,
        n_pairs: pairs.len(),
        estimate,
        lower: None,
        upper: None,
        note: None,
    };
    let Some(est) = estimate else {
        out.note = Some(if pairs.is_empty() {
            "no team appears in both editions of any pair".into()
        } else {
            "correlation undefined (constant ranks or a single pair)".into()
        });
        return out;
    };
    if opts.replications == 0 {
        return out;
    }
    let n = pairs.len();
    let mut reps: Vec<f64> = (0..opts.replications)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream((slot << 32) | b as u64);
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let (a, c) = pairs[rng.random_range(0..n)];
                xs.push(a);
                ys.push(c);
            }
            correlation(&xs, &ys, opts.method)
        })
        .collect();
    let skipped = opts.replications - reps.len();
    if reps.is_empty() {
        out.note = Some("every bootstrap resample was degenerate".into());
        return out;
    }
    reps.sort_by(f64::total_cmp);
    let tail = (1.0 - opts.level) / 2.0;
    // percentile bands can miss a skewed estimate; widen to contain it
    out.lower = Some(quantile(&reps, tail).min(est));
    out.upper = Some(quantile(&reps, 1.0 - tail).max(est));
    if skipped > 0 {
        out.note = Some(format!("{skipped} degenerate resamples skipped"));
    }
    out
}

fn check_options(opts: &BootstrapOptions) -> Result<()> {
    if !(opts.level > 0.0 && opts.level < 1.0) {
        return Err(Error::Domain(format!("band level {} outside (0, 1)", opts.level)));
    }
    Ok(())
}

/// Correlation of ranks `k` editions apart within one panel.
pub fn rank_autocorrelation(
    panel: &PanelDataset,
    lags: &[i32],
    opts: &BootstrapOptions,
) -> Result<CorrelationReport> {
    check_options(opts)?;
    if let Some(l) = lags.iter().find(|&&l| l < 1) {
        return Err(Error::Domain(format!("autocorrelation lag {l} must be at least 1")));
    }
    Ok(CorrelationReport {
        pairing: "same team in editions labelled y and y - lag".into(),
        options: opts.clone(),
        lags: lags
            .iter()
            .enumerate()
            .map(|(i, &l)| lag_report(&lagged_pairs(panel, panel, l), l, i as u64, opts))
            .collect(),
    })
}

/// Correlation of ranks in `panel_a` with ranks in `panel_b` `lag` editions
/// earlier (lag 0 is concurrent).
pub fn cross_correlation(
    panel_a: &PanelDataset,
    panel_b: &PanelDataset,
    lags: &[i32],
    opts: &BootstrapOptions,
) -> Result<CorrelationReport> {
    check_options(opts)?;
    Ok(CorrelationReport {
        pairing: "same team name, first panel at label y, second at y - lag".into(),
        options: opts.clone(),
        lags: lags
            .iter()
            .enumerate()
            .map(|(i, &l)| lag_report(&lagged_pairs(panel_a, panel_b, l), l, i as u64, opts))
            .collect(),
    })
}

/// Pairwise correlations among the rank and every predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub method: CorrelationMethod,
    /// `rank` followed by the panel's variables.
    pub variables: Vec<String>,
    /// `None` where a column is constant.
    pub values: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.variables.iter().position(|v| v == a)?;
        let j = self.variables.iter().position(|v| v == b)?;
        self.values[i][j]
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("variable").chain(self.variables.iter().map(String::as_str)))?;
        for (name, row) in self.variables.iter().zip(&self.values) {
            w.write_record(
                std::iter::once(name.clone())
                    .chain(row.iter().map(|v| v.map(fmt_f64).unwrap_or_default())),
            )?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// Correlations over participating `(team, edition)` cells.
pub fn predictor_rank_correlations(panel: &PanelDataset, method: CorrelationMethod) -> CorrelationMatrix {
    let m = panel.n_variables();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); m + 1];
    for e in &panel.editions {
        for (r, row) in e.predictors.iter().enumerate() {
            cols[0].push((r + 1) as f64);
            for j in 0..m {
                cols[j + 1].push(row[j]);
            }
        }
    }
    let k = m + 1;
    let mut values = vec![vec![None; k]; k];
    for i in 0..k {
        let defined = correlation(&cols[i], &cols[i], method).is_some();
        values[i][i] = defined.then_some(1.0);
        for j in 0..i {
            let c = correlation(&cols[i], &cols[j], method);
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    CorrelationMatrix {
        method,
        variables: std::iter::once("rank".to_string())
            .chain(panel.variables.iter().cloned())
            .collect(),
        values,
    }
}
