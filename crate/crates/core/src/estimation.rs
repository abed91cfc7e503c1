//! Maximum-likelihood and ridge-penalized estimation of the dynamic model.
//!
//! The last appearing team's fixed effect is eliminated through the
//! sum-to-zero constraint, so the search runs over `(N - 1) + M + d` free
//! coordinates where `d` is the number of estimated dynamic coefficients.
//! In the bounded regime `phi` and `alpha` are searched on the logistic and
//! softplus scales respectively. Standard errors are always taken on the
//! untransformed coefficients.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::filter::{filtered_loglik, filtered_loglik_unchecked, Coefficients, PanelDataset};
use crate::linalg;
use crate::optim::{subplex, Minimum, SubplexOptions};
use crate::pl::TeamId;

/// How the dynamic coefficients are constrained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsRegime {
    /// `phi` in `[0, 1)`, `alpha >= 0`.
    #[default]
    Bounded,
    /// `phi = 1` fixed, `alpha` free.
    Persistent,
    /// Both free on the real line.
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    /// Dataset variables entering the regression, in coefficient order.
    #[serde(default)]
    pub predictors: Vec<String>,
    /// Estimate `phi` and `alpha`; otherwise both are fixed at 0.
    #[serde(default = "yes")]
    pub include_dynamics: bool,
    #[serde(default)]
    pub regime: BoundsRegime,
    #[serde(default)]
    pub lambda: f64,
}

fn yes() -> bool {
    true
}

impl ModelSpec {
    /// Fixed effects only.
    pub fn fixed_effects(name: &str) -> Self {
        ModelSpec {
            name: name.to_string(),
            predictors: Vec::new(),
            include_dynamics: false,
            regime: BoundsRegime::Bounded,
            lambda: 0.0,
        }
    }

    /// Fixed effects, the given predictors and bounded dynamics.
    pub fn dynamic(name: &str, predictors: &[&str]) -> Self {
        ModelSpec {
            name: name.to_string(),
            predictors: predictors.iter().map(|s| s.to_string()).collect(),
            include_dynamics: true,
            regime: BoundsRegime::Bounded,
            lambda: 0.0,
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_regime(mut self, regime: BoundsRegime) -> Self {
        self.regime = regime;
        self
    }

    /// Number of estimated dynamic coefficients.
    pub fn n_dynamic(&self) -> usize {
        match (self.include_dynamics, self.regime) {
            (false, _) => 0,
            (true, BoundsRegime::Persistent) => 1,
            (true, _) => 2,
        }
    }

    pub fn problems(&self, dataset: &PanelDataset) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            out.push(format!("spec `{}`: penalty {} must be finite and >= 0", self.name, self.lambda));
        }
        for (i, p) in self.predictors.iter().enumerate() {
            if dataset.variable_index(p).is_none() {
                out.push(format!("spec `{}`: unknown predictor `{p}`", self.name));
            }
            if self.predictors[..i].contains(p) {
                out.push(format!("spec `{}`: predictor `{p}` listed twice", self.name));
            }
        }
        out
    }

    fn check(&self, dataset: &PanelDataset) -> Result<()> {
        let p = self.problems(dataset);
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Number of starting points; the first is deterministic, the rest are
    /// seeded jitters of it.
    pub restarts: usize,
    pub ftol_rel: f64,
    pub xtol_rel: f64,
    /// Evaluation budget per Subplex run.
    pub max_evals: usize,
    pub seed: u64,
    /// Jitter standard deviation, in units of each coordinate's scale.
    pub jitter: f64,
    /// Extra Subplex runs restarted from each local optimum.
    pub polish: usize,
    /// Return the best point with a warning, rather than an error, when
    /// every start stops on its evaluation budget.
    pub allow_unconverged: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 10,
            ftol_rel: 1e-9,
            xtol_rel: 1e-8,
            max_evals: 100_000,
            seed: 20_240_501,
            jitter: 0.5,
            polish: 4,
            allow_unconverged: false,
        }
    }
}

/// Outcome of the identifiability check on the beats graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PartitionCheck {
    Pass,
    /// `dominant` is closed: no team outside it ever finished above a team
    /// inside it.
    Fail {
        dominant: Vec<TeamId>,
        rest: Vec<TeamId>,
    },
}

impl PartitionCheck {
    pub fn passed(&self) -> bool {
        matches!(self, PartitionCheck::Pass)
    }

    pub fn report(&self, dataset: &PanelDataset) -> PartitionReport {
        let names = |ids: &[TeamId]| ids.iter().map(|&t| dataset.teams[t].clone()).collect();
        match self {
            PartitionCheck::Pass => PartitionReport {
                passed: true,
                dominant: Vec::new(),
                rest: Vec::new(),
            },
            PartitionCheck::Fail { dominant, rest } => PartitionReport {
                passed: false,
                dominant: names(dominant),
                rest: names(rest),
            },
        }
    }
}

/// [`PartitionCheck`] with team names, as written to reports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionReport {
    pub passed: bool,
    pub dominant: Vec<String>,
    pub rest: Vec<String>,
}

/// Strongly connected components of the beats graph (edge `i -> j` when `i`
/// finished above `j` in some edition) restricted to teams that appear.
/// Components are sorted internally and listed in topological order, so the
/// first one is never beaten by a team outside it.
pub fn beats_components(dataset: &PanelDataset) -> Vec<Vec<TeamId>> {
    let n = dataset.n_teams();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, 0);
    for _ in 0..n {
        graph.add_node(());
    }
    let mut seen = vec![false; n * n];
    for e in &dataset.editions {
        for (r, &a) in e.ordering.iter().enumerate() {
            for &b in &e.ordering[r + 1..] {
                if !std::mem::replace(&mut seen[a * n + b], true) {
                    graph.add_edge(NodeIndex::new(a), NodeIndex::new(b), ());
                }
            }
        }
    }
    let appears = dataset.appearances();
    // tarjan emits components in reverse topological order
    tarjan_scc(&graph)
        .into_iter()
        .rev()
        .map(|c| {
            let mut c: Vec<TeamId> = c.into_iter().map(|v| v.index()).collect();
            c.sort_unstable();
            c
        })
        .filter(|c| appears[c[0]] > 0)
        .collect()
}

/// Whether the unpenalized maximum-likelihood estimate can exist: the beats
/// graph over appearing teams must be strongly connected.
pub fn check_partition_condition(dataset: &PanelDataset) -> PartitionCheck {
    let mut comps = beats_components(dataset);
    if comps.len() <= 1 {
        return PartitionCheck::Pass;
    }
    let dominant = comps.remove(0);
    let mut rest: Vec<TeamId> = comps.into_iter().flatten().collect();
    rest.sort_unstable();
    PartitionCheck::Fail { dominant, rest }
}

/// A coefficient with its inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub name: String,
    pub value: f64,
    /// Free search coordinate. The eliminated fixed effect, fixed dynamics
    /// and effects of teams that never appear are not.
    pub free: bool,
    pub std_error: Option<f64>,
    pub z_value: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub evaluations: usize,
    pub final_rel_change: f64,
    pub starts: usize,
    pub starts_converged: usize,
    pub best_start: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub teams: Vec<String>,
    pub variables: Vec<String>,
    pub coef: Coefficients,
    pub loglik: f64,
    /// Log-likelihood minus the penalty.
    pub penalized_loglik: f64,
    pub aic: f64,
    pub n_free: usize,
    pub n_rankings: usize,
    pub estimates: Vec<CoefficientEstimate>,
    pub convergence: Convergence,
    pub partition_check: PartitionReport,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn estimate(&self, name: &str) -> Option<&CoefficientEstimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    pub fn has_standard_errors(&self) -> bool {
        self.estimates.iter().any(|e| e.std_error.is_some())
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }
}

/// Coefficient names in report order: fixed effects, predictors, dynamics.
pub fn coefficient_names(dataset: &PanelDataset) -> Vec<String> {
    dataset
        .teams
        .iter()
        .map(|t| format!("omega[{t}]"))
        .chain(dataset.variables.iter().map(|v| format!("beta[{v}]")))
        .chain(["phi".to_string(), "alpha".to_string()])
        .collect()
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn softplus_inv(a: f64) -> f64 {
    let a = a.max(1e-12);
    if a > 30.0 {
        a
    } else {
        a.exp_m1().ln()
    }
}

/// Mapping between free coordinates and full coefficient vectors.
struct Layout {
    free_teams: Vec<TeamId>,
    derived: TeamId,
    m: usize,
    n_teams: usize,
    dynamics: Option<BoundsRegime>,
}

impl Layout {
    fn new(dataset: &PanelDataset, spec: &ModelSpec) -> Result<Self> {
        let appearing: Vec<TeamId> = dataset
            .appearances()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(t, _)| t)
            .collect();
        let Some((&derived, free)) = appearing.split_last() else {
            return Err(Error::Data("no ranked editions to fit".into()));
        };
        Ok(Layout {
            free_teams: free.to_vec(),
            derived,
            m: dataset.n_variables(),
            n_teams: dataset.n_teams(),
            dynamics: spec.include_dynamics.then_some(spec.regime),
        })
    }

    fn n_dynamic(&self) -> usize {
        match self.dynamics {
            None => 0,
            Some(BoundsRegime::Persistent) => 1,
            Some(_) => 2,
        }
    }

    fn len(&self) -> usize {
        self.free_teams.len() + self.m + self.n_dynamic()
    }

    /// Write natural free coordinates `theta` into `coef`.
    fn fill(&self, theta: &[f64], coef: &mut Coefficients) {
        let k = self.free_teams.len();
        let mut sum = 0.0;
        for (&t, &w) in self.free_teams.iter().zip(theta) {
            coef.omega[t] = w;
            sum += w;
        }
        coef.omega[self.derived] = -sum;
        coef.beta.copy_from_slice(&theta[k..k + self.m]);
        let d = &theta[k + self.m..];
        (coef.phi, coef.alpha) = match self.dynamics {
            None => (0.0, 0.0),
            Some(BoundsRegime::Persistent) => (1.0, d[0]),
            Some(_) => (d[0], d[1]),
        };
    }

    fn coefficients(&self, theta: &[f64]) -> Coefficients {
        let mut c = Coefficients::zeros(self.n_teams, self.m);
        self.fill(theta, &mut c);
        c
    }

    fn natural(&self, coef: &Coefficients) -> Vec<f64> {
        let mut theta: Vec<f64> = self.free_teams.iter().map(|&t| coef.omega[t]).collect();
        theta.extend_from_slice(&coef.beta);
        match self.dynamics {
            None => {}
            Some(BoundsRegime::Persistent) => theta.push(coef.alpha),
            Some(_) => theta.extend([coef.phi, coef.alpha]),
        }
        theta
    }

    fn dyn_offset(&self) -> usize {
        self.free_teams.len() + self.m
    }

    fn to_search(&self, theta: &[f64]) -> Vec<f64> {
        let mut z = theta.to_vec();
        if self.dynamics == Some(BoundsRegime::Bounded) {
            let o = self.dyn_offset();
            z[o] = logit(theta[o]);
            z[o + 1] = softplus_inv(theta[o + 1]);
        }
        z
    }

    fn from_search(&self, z: &[f64]) -> Vec<f64> {
        let mut theta = z.to_vec();
        if self.dynamics == Some(BoundsRegime::Bounded) {
            let o = self.dyn_offset();
            theta[o] = logistic(z[o]);
            theta[o + 1] = softplus(z[o + 1]);
        }
        theta
    }

    /// Typical magnitude of each search coordinate.
    fn scales(&self, dataset: &PanelDataset) -> Vec<f64> {
        let mut s = vec![1.0; self.free_teams.len()];
        s.extend(predictor_sds(dataset).into_iter().map(|sd| {
            if sd > 0.0 && sd.is_finite() {
                1.0 / sd
            } else {
                1.0
            }
        }));
        let dyn_scale = if self.dynamics == Some(BoundsRegime::Bounded) {
            1.0
        } else {
            0.2
        };
        s.extend(std::iter::repeat_n(dyn_scale, self.n_dynamic()));
        s
    }

    fn default_start(&self) -> Vec<f64> {
        let mut theta = vec![0.0; self.free_teams.len() + self.m];
        match self.dynamics {
            None => {}
            Some(BoundsRegime::Persistent) => theta.push(0.1),
            Some(_) => theta.extend([0.5, 0.1]),
        }
        theta
    }
}

/// Standard deviation of every predictor over all participant rows.
fn predictor_sds(dataset: &PanelDataset) -> Vec<f64> {
    let m = dataset.n_variables();
    let mut sum = vec![0.0; m];
    let mut sq = vec![0.0; m];
    let mut count = 0usize;
    for row in dataset.editions.iter().flat_map(|e| &e.predictors) {
        for (j, v) in row.iter().enumerate() {
            sum[j] += v;
            sq[j] += v * v;
        }
        count += 1;
    }
    (0..m)
        .map(|j| {
            if count < 2 {
                return 0.0;
            }
            let mean = sum[j] / count as f64;
            ((sq[j] / count as f64 - mean * mean).max(0.0)).sqrt()
        })
        .collect()
}

fn penalty(coef: &Coefficients, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let ss: f64 = coef.omega.iter().chain(&coef.beta).map(|v| v * v).sum::<f64>()
        + coef.phi * coef.phi
        + coef.alpha * coef.alpha;
    lambda * ss
}

/// `L(theta) - lambda * sum(theta_k^2)` over all coefficients, including the
/// eliminated fixed effect and fixed dynamics.
pub fn penalized_loglik(dataset: &PanelDataset, coef: &Coefficients, lambda: f64) -> Result<f64> {
    Ok(filtered_loglik(dataset, coef)? - penalty(coef, lambda))
}

fn p_value(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Significance marker for a two-sided p-value.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Inverse observed information of the log-likelihood `loglik` at `theta`,
/// from a central-difference Hessian with steps `max(1e-4, 1e-4 |theta|)`.
pub fn observed_covariance<F: FnMut(&[f64]) -> f64>(loglik: F, theta: &[f64]) -> Result<DMatrix<f64>> {
    let steps: Vec<f64> = theta.iter().map(|&x| linalg::fd_step(x)).collect();
    let h = linalg::hessian(loglik, theta, &steps);
    linalg::spd_inverse(&(-h))
}

/// Standard errors and normal p-values for every coefficient of `spec` at
/// `coef`. The eliminated fixed effect gets its error by the delta method;
/// coefficients that are not estimated carry none.
pub fn standard_errors(
    dataset: &PanelDataset,
    spec: &ModelSpec,
    coef: &Coefficients,
) -> Result<Vec<CoefficientEstimate>> {
    spec.check(dataset)?;
    let ds = dataset.select_variables(&spec.predictors)?;
    filtered_loglik(&ds, coef)?;
    let layout = Layout::new(&ds, spec)?;
    let theta = layout.natural(coef);
    let mut scratch = coef.clone();
    let cov = observed_covariance(
        |t| {
            layout.fill(t, &mut scratch);
            filtered_loglik_unchecked(&ds, &scratch)
        },
        &theta,
    )?;
    Ok(assemble_estimates(&ds, &layout, coef, Some(&cov)))
}

fn assemble_estimates(
    ds: &PanelDataset,
    layout: &Layout,
    coef: &Coefficients,
    cov: Option<&DMatrix<f64>>,
) -> Vec<CoefficientEstimate> {
    let names = coefficient_names(ds);
    let k = layout.free_teams.len();
    // index of each coefficient among the free coordinates
    let mut slot: Vec<Option<usize>> = vec![None; names.len()];
    for (i, &t) in layout.free_teams.iter().enumerate() {
        slot[t] = Some(i);
    }
    let n = ds.n_teams();
    for j in 0..layout.m {
        slot[n + j] = Some(k + j);
    }
    match layout.dynamics {
        None => {}
        Some(BoundsRegime::Persistent) => slot[n + layout.m + 1] = Some(k + layout.m),
        Some(_) => {
            slot[n + layout.m] = Some(k + layout.m);
            slot[n + layout.m + 1] = Some(k + layout.m + 1);
        }
    }
    let values: Vec<f64> = coef
        .omega
        .iter()
        .chain(&coef.beta)
        .copied()
        .chain([coef.phi, coef.alpha])
        .collect();
    names
        .into_iter()
        .enumerate()
        .map(|(c, name)| {
            let variance = cov.and_then(|cov| match slot[c] {
                Some(s) => Some(cov[(s, s)]),
                // delta method: the eliminated effect is minus the sum of the free ones
                None if c == layout.derived && k > 0 => Some(cov.view((0, 0), (k, k)).sum()),
                None => None,
            });
            let std_error = variance.map(|v| v.max(0.0).sqrt());
            let z_value = std_error.map(|s| values[c] / s);
            CoefficientEstimate {
                name,
                value: values[c],
                free: slot[c].is_some(),
                std_error,
                z_value,
                p_value: z_value.map(p_value),
            }
        })
        .collect()
}

/// Maximize the (penalized) filtered log-likelihood of `spec` on `dataset`.
///
/// `init` seeds the deterministic first start; the remaining starts jitter
/// it with a generator seeded from `opts.seed` and the start index.
pub fn fit(
    dataset: &PanelDataset,
    spec: &ModelSpec,
    init: Option<&Coefficients>,
    opts: &FitOptions,
) -> Result<FitResult> {
    spec.check(dataset)?;
    let ds = dataset.select_variables(&spec.predictors)?;
    ds.validate()?;
    if let Some(c) = init {
        if c.omega.len() != ds.n_teams() || c.beta.len() != ds.n_variables() {
            return Err(Error::Validation(vec![format!(
                "initial coefficients have {} fixed effects and {} predictors, expected {} and {}",
                c.omega.len(),
                c.beta.len(),
                ds.n_teams(),
                ds.n_variables()
            )]));
        }
    }
    let partition = check_partition_condition(&ds);
    if spec.lambda == 0.0 {
        if let PartitionCheck::Fail { .. } = &partition {
            let report = partition.report(&ds);
            return Err(Error::Partition {
                dominant: report.dominant,
                rest: report.rest,
            });
        }
    }
    let layout = Layout::new(&ds, spec)?;
    let scales = layout.scales(&ds);
    let mut start = match init {
        Some(c) => layout.natural(c),
        None => layout.default_start(),
    };
    if layout.dynamics == Some(BoundsRegime::Bounded) {
        let o = layout.dyn_offset();
        start[o] = start[o].clamp(0.01, 0.99);
        start[o + 1] = start[o + 1].max(1e-3);
    }
    let z0 = layout.to_search(&start);
    let sub_opts = SubplexOptions {
        ftol_rel: opts.ftol_rel,
        xtol_rel: opts.xtol_rel,
        max_evals: opts.max_evals,
        ..SubplexOptions::default()
    };

    let n_starts = opts.restarts.max(1);
    let runs: Vec<(Minimum, usize)> = (0..n_starts)
        .into_par_iter()
        .map(|s| {
            let mut z = z0.clone();
            if s > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(s as u64);
                for (zi, sc) in z.iter_mut().zip(&scales) {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *zi += opts.jitter * sc * e;
                }
            }
            let mut scratch = Coefficients::zeros(layout.n_teams, layout.m);
            let mut objective = |z: &[f64]| {
                let theta = layout.from_search(z);
                layout.fill(&theta, &mut scratch);
                -(filtered_loglik_unchecked(&ds, &scratch) - penalty(&scratch, spec.lambda))
            };
            let steps: Vec<f64> = scales.iter().map(|s| 0.5 * s).collect();
            let mut best = subplex(&mut objective, &z, &steps, &sub_opts);
            let mut evals = best.evals;
            for _ in 0..opts.polish {
                let small: Vec<f64> = scales.iter().map(|s| 0.05 * s).collect();
                let next = subplex(&mut objective, &best.x, &small, &sub_opts);
                evals += next.evals;
                let gain = best.value - next.value;
                let done = gain <= opts.ftol_rel * best.value.abs().max(1e-12);
                if next.value < best.value {
                    best = Minimum {
                        converged: next.converged,
                        ..next
                    };
                } else {
                    best.converged |= next.converged;
                }
                if done {
                    break;
                }
            }
            (best, evals)
        })
        .collect();

    let evaluations = runs.iter().map(|(_, e)| e).sum();
    let starts_converged = runs.iter().filter(|(m, _)| m.converged).count();
    let (best_start, (best, _)) = runs
        .iter()
        .enumerate()
        .min_by(|(i, (a, _)), (j, (b, _))| a.value.total_cmp(&b.value).then(i.cmp(j)))
        .expect("at least one start");
    let theta = layout.from_search(&best.x);
    if !best.value.is_finite() || (starts_converged == 0 && !opts.allow_unconverged) {
        return Err(Error::NonConvergence {
            restarts: n_starts,
            best_value: -best.value,
            best_point: theta,
        });
    }
    let coef = layout.coefficients(&theta);
    let loglik = filtered_loglik_unchecked(&ds, &coef);
    let penalized = loglik - penalty(&coef, spec.lambda);
    let n_free = layout.len();

    let mut warnings = Vec::new();
    if starts_converged == 0 {
        warnings.push(format!("no start converged within {} evaluations; using the best point found", opts.max_evals));
    } else if !best.converged {
        warnings.push("best start stopped on its evaluation budget".to_string());
    }
    for (t, name) in ds.teams.iter().enumerate() {
        if ds.appearances()[t] == 0 {
            warnings.push(format!("team `{name}` never appears; its fixed effect is held at 0"));
        }
    }
    if let PartitionCheck::Fail { .. } = partition {
        warnings.push(
            "partition condition fails; estimates exist only because of the penalty".to_string(),
        );
    }
    if layout.dynamics == Some(BoundsRegime::Bounded) {
        if coef.phi < 1e-4 || coef.phi > 1.0 - 1e-4 {
            warnings.push(format!("phi = {} is at its bound; its standard error is unreliable", coef.phi));
        }
        if coef.alpha < 1e-4 {
            warnings.push(format!("alpha = {} is at its bound; its standard error is unreliable", coef.alpha));
        }
    }

    let estimates = if spec.lambda > 0.0 {
        warnings.push(
            "standard errors are not reported for penalized fits; they are not informative there"
                .to_string(),
        );
        assemble_estimates(&ds, &layout, &coef, None)
    } else {
        match standard_errors(&ds, &ModelSpec { predictors: ds.variables.clone(), ..spec.clone() }, &coef) {
            Ok(e) => e,
            Err(Error::SingularInformation { eigenvalues }) => {
                warnings.push(format!(
                    "observed information is not positive definite (smallest eigenvalue {:e}); standard errors suppressed",
                    eigenvalues.first().copied().unwrap_or(f64::NAN)
                ));
                assemble_estimates(&ds, &layout, &coef, None)
            }
            Err(e) => return Err(e),
        }
    };

    Ok(FitResult {
        spec: spec.clone(),
        teams: ds.teams.clone(),
        variables: ds.variables.clone(),
        coef,
        loglik,
        penalized_loglik: penalized,
        aic: 2.0 * n_free as f64 - 2.0 * loglik,
        n_free,
        n_rankings: ds.n_ranked(),
        estimates,
        convergence: Convergence {
            converged: best.converged,
            evaluations,
            final_rel_change: best.last_rel_change,
            starts: n_starts,
            starts_converged,
            best_start,
        },
        partition_check: partition.report(&ds),
        warnings,
    })
}

/// Log-likelihood of `spec` at `coef` with `alpha` replaced by each grid
/// value and everything else held fixed.
pub fn profile_score_coefficient(
    dataset: &PanelDataset,
    spec: &ModelSpec,
    coef: &Coefficients,
    alpha_grid: &[f64],
) -> Result<Vec<(f64, f64)>> {
    spec.check(dataset)?;
    let ds = dataset.select_variables(&spec.predictors)?;
    let mut c = coef.clone();
    alpha_grid
        .iter()
        .map(|&a| {
            c.alpha = a;
            Ok((a, filtered_loglik(&ds, &c)?))
        })
        .collect()
}

/// One column of a [`ModelTable`]: a fit or the reason it failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelColumn {
    pub spec: ModelSpec,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

/// Side-by-side comparison of several specifications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelTable {
    pub columns: Vec<ModelColumn>,
    /// Column with the lowest AIC among successful fits.
    pub best: Option<usize>,
}

/// Fit every spec; failures are recorded per column.
pub fn model_table(dataset: &PanelDataset, specs: &[ModelSpec], opts: &FitOptions) -> ModelTable {
    let columns: Vec<ModelColumn> = specs
        .par_iter()
        .map(|spec| match fit(dataset, spec, None, opts) {
            Ok(f) => ModelColumn {
                spec: spec.clone(),
                fit: Some(f),
                error: None,
            },
            Err(e) => ModelColumn {
                spec: spec.clone(),
                fit: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let best = columns
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.fit.as_ref().map(|f| (i, f.aic)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i);
    ModelTable { columns, best }
}

impl ModelTable {
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }

    /// Plain-text table: estimates with stars, standard errors in
    /// parentheses, log-likelihood and AIC. Fixed effects are omitted.
    pub fn render(&self) -> String {
        const W: usize = 16;
        let mut rows: Vec<(String, String)> = Vec::new();
        for c in &self.columns {
            for p in &c.spec.predictors {
                let key = format!("beta[{p}]");
                if !rows.iter().any(|(k, _)| *k == key) {
                    rows.push((key, p.clone()));
                }
            }
        }
        rows.push(("phi".into(), "phi".into()));
        rows.push(("alpha".into(), "alpha".into()));
        let label_w = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(14);

        let mut out = String::new();
        let _ = write!(out, "{:label_w$}", "");
        for c in &self.columns {
            let _ = write!(out, "{:>W$}", truncate(&c.spec.name, W - 1));
        }
        out.push('\n');
        for (key, label) in &rows {
            let mut est = format!("{label:label_w$}");
            let mut se = format!("{:label_w$}", "");
            for c in &self.columns {
                let e = c
                    .fit
                    .as_ref()
                    .and_then(|f| f.estimate(key))
                    .filter(|e| e.free);
                match e {
                    Some(e) => {
                        let s = e.p_value.map(stars).unwrap_or("");
                        let _ = write!(est, "{:>W$}", format!("{:.3}{s:<3}", e.value));
                        match e.std_error {
                            Some(v) => {
                                let _ = write!(se, "{:>W$}", format!("({v:.3})   "));
                            }
                            None => {
                                let _ = write!(se, "{:W$}", "");
                            }
                        }
                    }
                    None => {
                        let _ = write!(est, "{:W$}", "");
                        let _ = write!(se, "{:W$}", "");
                    }
                }
            }
            out.push_str(est.trim_end());
            out.push('\n');
            if !se.trim().is_empty() {
                out.push_str(se.trim_end());
                out.push('\n');
            }
        }
        for (label, get) in [
            ("Log-likelihood", (|f: &FitResult| f.loglik) as fn(&FitResult) -> f64),
            ("AIC", |f: &FitResult| f.aic),
        ] {
            let _ = write!(out, "{label:label_w$}");
            for c in &self.columns {
                match &c.fit {
                    Some(f) => {
                        let _ = write!(out, "{:>W$}", format!("{:.3}   ", get(f)));
                    }
                    None => {
                        let _ = write!(out, "{:>W$}", "failed   ");
                    }
                }
            }
            out.push('\n');
        }
        if let Some(b) = self.best {
            let _ = writeln!(out, "lowest AIC: {}", self.columns[b].spec.name);
        }
        out.push_str("*** p < 0.01, ** p < 0.05, * p < 0.1\n");
        out
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::Edition;

    fn panel(n: usize, orderings: &[&[TeamId]]) -> PanelDataset {
        PanelDataset {
            teams: (0..n).map(|i| format!("T{i}")).collect(),
            variables: vec![],
            editions: orderings
                .iter()
                .enumerate()
                .map(|(e, o)| Edition {
                    label: e as i32,
                    ordering: o.to_vec(),
                    predictors: vec![vec![]; o.len()],
                })
                .collect(),
        }
    }

    #[test]
    fn partition_examples() {
        let ds = panel(3, &[&[0, 1, 2], &[2, 1, 0]]);
        assert_eq!(check_partition_condition(&ds), PartitionCheck::Pass);
        let ds = panel(3, &[&[0, 1, 2], &[0, 2, 1]]);
        assert_eq!(
            check_partition_condition(&ds),
            PartitionCheck::Fail {
                dominant: vec![0],
                rest: vec![1, 2]
            }
        );
    }

    #[test]
    fn absent_teams_are_ignored_by_partition_check() {
        let ds = panel(4, &[&[0, 1, 2], &[2, 1, 0]]);
        assert!(check_partition_condition(&ds).passed());
    }

    #[test]
    fn layout_roundtrip_and_constraint() {
        let ds = panel(4, &[&[0, 1, 2], &[2, 1, 0]]);
        let spec = ModelSpec::dynamic("d", &[]);
        let layout = Layout::new(&ds, &spec).unwrap();
        assert_eq!(layout.len(), 2 + 2);
        let theta = vec![0.3, -0.1, 0.4, 0.2];
        let c = layout.coefficients(&theta);
        assert_eq!(c.omega[3], 0.0);
        assert!((c.omega.iter().sum::<f64>()).abs() < 1e-15);
        assert_eq!(layout.natural(&c), theta);
        let z = layout.to_search(&theta);
        let back = layout.from_search(&z);
        for (a, b) in back.iter().zip(&theta) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_team_closed_form() {
        let mut orderings: Vec<&[TeamId]> = vec![&[0, 1]; 6];
        orderings.extend([&[1, 0][..], &[1, 0][..]]);
        let ds = panel(2, &orderings);
        let r = fit(&ds, &ModelSpec::fixed_effects("s"), None, &FitOptions::default()).unwrap();
        let want = 0.5 * 3f64.ln();
        assert!((r.coef.omega[0] - want).abs() < 1e-4, "{:?}", r.coef);
        assert!((r.loglik - (6.0 * 0.75f64.ln() + 2.0 * 0.25f64.ln())).abs() < 1e-6);
        let se = r.estimate("omega[T0]").unwrap().std_error.unwrap();
        assert!((se - 1.0 / 6f64.sqrt()).abs() < 5e-3, "{se}");
        // the eliminated effect mirrors the free one
        let se1 = r.estimate("omega[T1]").unwrap().std_error.unwrap();
        assert!((se1 - se).abs() < 1e-9);
        assert_eq!(r.n_free, 1);
    }

    #[test]
    fn unit_curvature_gives_unit_error() {
        let cov = observed_covariance(|t| -0.5 * t[0] * t[0], &[0.7]).unwrap();
        assert!((cov[(0, 0)].sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn refuses_unidentified_panel_without_penalty() {
        let ds = panel(3, &[&[0, 1, 2], &[0, 2, 1]]);
        let err = fit(&ds, &ModelSpec::fixed_effects("s"), None, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Partition { .. }));
        let r = fit(
            &ds,
            &ModelSpec::fixed_effects("s").with_lambda(0.1),
            None,
            &FitOptions::default(),
        )
        .unwrap();
        assert!(r.coef.omega[0] > r.coef.omega[1]);
        assert!(!r.has_standard_errors());
    }

    #[test]
    fn stars_thresholds() {
        assert_eq!(stars(0.005), "***");
        assert_eq!(stars(0.02), "**");
        assert_eq!(stars(0.07), "*");
        assert_eq!(stars(0.5), "");
    }
}
