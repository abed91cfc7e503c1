//! The Plackett-Luce distribution over rankings of a finite participant set.
//!
//! A ranking is stored as its ordering: position `r` holds the team placed
//! `r + 1`-th. Team `i` carries a log-scale strength `f_i`; rank positions
//! are filled one after another, each remaining team chosen with probability
//! proportional to `exp f_i`.
//!
//! Everything below works in log space. Suffix log-masses
//! `lse_r = ln sum_{s >= r} exp f_(s)` are accumulated once from the bottom
//! of the ordering, which keeps the likelihood finite for strength gaps of
//! hundreds of units.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a team in the dataset registry. Registries are sorted by team
/// name, so ordering ids numerically is the same as ordering names
/// lexicographically.
pub type TeamId = usize;

/// Largest number of orderings the exact top-k set probability will sum.
pub const DEFAULT_EXACT_CAP: usize = 40_320;

/// An observed ordering of distinct teams, best first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<TeamId>", into = "Vec<TeamId>")]
pub struct Ranking {
    ordering: Vec<TeamId>,
}

impl Ranking {
    pub fn new(ordering: Vec<TeamId>) -> Result<Self> {
        if ordering.len() < 2 {
            return Err(Error::Domain(format!(
                "a ranking needs at least 2 teams, got {}",
                ordering.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for &team in &ordering {
            if !seen.insert(team) {
                return Err(Error::Domain(format!("team {team} appears twice in ranking")));
            }
        }
        Ok(Ranking { ordering })
    }

    /// Teams best first (the inverse of the rank mapping).
    pub fn ordering(&self) -> &[TeamId] {
        &self.ordering
    }

    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    /// Team holding 1-based rank `rank`.
    pub fn team_at(&self, rank: usize) -> Option<TeamId> {
        rank.checked_sub(1).and_then(|r| self.ordering.get(r).copied())
    }

    /// 1-based rank of `team`, if it participates.
    pub fn rank_of(&self, team: TeamId) -> Option<usize> {
        self.ordering.iter().position(|&t| t == team).map(|r| r + 1)
    }

    /// The rank mapping `team -> rank`.
    pub fn ranks(&self) -> BTreeMap<TeamId, usize> {
        self.ordering
            .iter()
            .enumerate()
            .map(|(r, &t)| (t, r + 1))
            .collect()
    }

    pub fn winner(&self) -> TeamId {
        self.ordering[0]
    }

    /// The first `k` teams.
    pub fn top(&self, k: usize) -> &[TeamId] {
        &self.ordering[..k.min(self.ordering.len())]
    }

    pub fn participants(&self) -> BTreeSet<TeamId> {
        self.ordering.iter().copied().collect()
    }
}

impl TryFrom<Vec<TeamId>> for Ranking {
    type Error = Error;

    fn try_from(value: Vec<TeamId>) -> Result<Self> {
        Ranking::new(value)
    }
}

impl From<Ranking> for Vec<TeamId> {
    fn from(value: Ranking) -> Self {
        value.ordering
    }
}

/// Log-scale strengths keyed by team.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrengthVector {
    values: BTreeMap<TeamId, f64>,
}

impl StrengthVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Strengths for teams `0..values.len()`.
    pub fn from_dense(values: &[f64]) -> Self {
        values.iter().copied().enumerate().collect()
    }

    pub fn insert(&mut self, team: TeamId, strength: f64) {
        self.values.insert(team, strength);
    }

    pub fn get(&self, team: TeamId) -> Option<f64> {
        self.values.get(&team).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn teams(&self) -> impl Iterator<Item = TeamId> + '_ {
        self.values.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (TeamId, f64)> + '_ {
        self.values.iter().map(|(&t, &v)| (t, v))
    }

    /// Every strength plus `c`.
    pub fn shifted(&self, c: f64) -> Self {
        self.iter().map(|(t, v)| (t, v + c)).collect()
    }

    fn checked(&self, team: TeamId) -> Result<f64> {
        let v = self
            .get(team)
            .ok_or_else(|| Error::Data(format!("no strength for team {team}")))?;
        if !v.is_finite() {
            return Err(Error::Domain(format!("strength of team {team} is {v}")));
        }
        Ok(v)
    }

    fn check_all_finite(&self) -> Result<()> {
        for (t, v) in self.iter() {
            if !v.is_finite() {
                return Err(Error::Domain(format!("strength of team {t} is {v}")));
            }
        }
        Ok(())
    }

    /// Strengths of `teams` in the given order.
    fn gather(&self, teams: &[TeamId]) -> Result<Vec<f64>> {
        teams.iter().map(|&t| self.checked(t)).collect()
    }
}

impl FromIterator<(TeamId, f64)> for StrengthVector {
    fn from_iter<I: IntoIterator<Item = (TeamId, f64)>>(iter: I) -> Self {
        StrengthVector {
            values: iter.into_iter().collect(),
        }
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln sum exp x`, stable for any finite input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Suffix log-masses: `out[r] = ln sum_{s >= r} exp s_strengths[s]`.
fn suffix_log_mass(ordered: &[f64], out: &mut [f64]) {
    let n = ordered.len();
    if n == 0 {
        return;
    }
    out[n - 1] = ordered[n - 1];
    for r in (0..n - 1).rev() {
        out[r] = log_add_exp(ordered[r], out[r + 1]);
    }
}

/// Log-likelihood of an ordering given the strengths of its teams listed in
/// rank order (`ordered[r]` is the strength of the team ranked `r + 1`).
pub fn log_pmf_ordered(ordered: &[f64]) -> f64 {
    let n = ordered.len();
    let mut acc = 0.0;
    // Walk from the bottom so the suffix mass is carried in a scalar.
    let mut lse = f64::NEG_INFINITY;
    for r in (0..n).rev() {
        lse = if r == n - 1 {
            ordered[r]
        } else {
            log_add_exp(ordered[r], lse)
        };
        acc += ordered[r] - lse;
    }
    acc
}

/// Score vector in rank order: `out[q]` is the derivative of the
/// log-likelihood with respect to the strength of the team ranked `q + 1`.
/// `scratch` must be as long as `ordered`.
pub fn score_ordered(ordered: &[f64], scratch: &mut [f64], out: &mut [f64]) {
    let n = ordered.len();
    suffix_log_mass(ordered, scratch);
    for q in 0..n {
        let s = ordered[q];
        let mut sum = 0.0;
        for &lse in &scratch[..=q] {
            sum += (s - lse).exp();
        }
        out[q] = 1.0 - sum;
    }
}

/// Log-probability of `ranking` under strengths `f`.
pub fn log_pmf(ranking: &Ranking, f: &StrengthVector) -> Result<f64> {
    let ordered = f.gather(ranking.ordering())?;
    Ok(log_pmf_ordered(&ordered))
}

/// Gradient of [`log_pmf`] with respect to the strengths of the ranked teams.
pub fn score(ranking: &Ranking, f: &StrengthVector) -> Result<StrengthVector> {
    let ordered = f.gather(ranking.ordering())?;
    let mut scratch = vec![0.0; ordered.len()];
    let mut out = vec![0.0; ordered.len()];
    score_ordered(&ordered, &mut scratch, &mut out);
    Ok(ranking.ordering().iter().copied().zip(out).collect())
}

/// Normalized weights `exp(f_i) / sum_j exp(f_j)` in the order of `values`.
fn softmax(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|&v| (v - lse).exp()).collect()
}

/// Draw the first `k` positions of a ranking from normalized weights.
/// Writes indices into `weights` to `out`; `pool` is scratch space.
fn sample_prefix<R: Rng + ?Sized>(
    weights: &[f64],
    k: usize,
    rng: &mut R,
    pool: &mut Vec<usize>,
    out: &mut Vec<usize>,
) {
    pool.clear();
    pool.extend(0..weights.len());
    out.clear();
    for _ in 0..k {
        let total: f64 = pool.iter().map(|&i| weights[i]).sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (slot, &i) in pool.iter().enumerate() {
            target -= weights[i];
            if target < 0.0 {
                pick = slot;
                break;
            }
        }
        out.push(pool.remove(pick));
    }
}

/// Draw one ranking of all teams in `f`, filling rank 1, 2, ... in turn.
pub fn sample_ranking<R: Rng + ?Sized>(f: &StrengthVector, rng: &mut R) -> Result<Ranking> {
    if f.len() < 2 {
        return Err(Error::Domain(format!(
            "cannot sample a ranking of {} team(s)",
            f.len()
        )));
    }
    f.check_all_finite()?;
    let teams: Vec<TeamId> = f.teams().collect();
    let values: Vec<f64> = f.iter().map(|(_, v)| v).collect();
    let weights = softmax(&values);
    let mut pool = Vec::with_capacity(teams.len());
    let mut picks = Vec::with_capacity(teams.len());
    sample_prefix(&weights, teams.len(), rng, &mut pool, &mut picks);
    Ranking::new(picks.into_iter().map(|i| teams[i]).collect())
}

/// Probability that `team` is ranked first.
pub fn champion_probability(f: &StrengthVector, team: TeamId) -> Result<f64> {
    let own = f.checked(team)?;
    f.check_all_finite()?;
    let values: Vec<f64> = f.iter().map(|(_, v)| v).collect();
    Ok((own - log_sum_exp(&values)).exp())
}

fn check_subset(f: &StrengthVector, team_set: &BTreeSet<TeamId>) -> Result<()> {
    if team_set.is_empty() {
        return Err(Error::Data("empty team set".into()));
    }
    let missing: Vec<TeamId> = team_set
        .iter()
        .copied()
        .filter(|&t| f.get(t).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "teams {missing:?} are not among the participants"
        )));
    }
    f.check_all_finite()
}

fn factorial_capped(k: usize, cap: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for i in 2..=k {
        acc = acc.checked_mul(i)?;
        if acc > cap {
            return None;
        }
    }
    Some(acc)
}

/// Exact probability that `team_set` occupies ranks `1..=k` in some order,
/// summing the sequential-choice product over all `k!` orderings of the set.
pub fn top_k_set_probability_exact(
    f: &StrengthVector,
    team_set: &BTreeSet<TeamId>,
    cap: usize,
) -> Result<f64> {
    check_subset(f, team_set)?;
    let k = team_set.len();
    if factorial_capped(k, cap).is_none() {
        return Err(Error::Capacity(format!(
            "{k}! orderings exceed the exact-enumeration cap of {cap}"
        )));
    }
    let values: Vec<f64> = f.iter().map(|(_, v)| v).collect();
    let lse = log_sum_exp(&values);
    let inside: Vec<f64> = team_set
        .iter()
        .map(|&t| (f.get(t).unwrap() - lse).exp())
        .collect();
    let outside: f64 = f
        .iter()
        .filter(|(t, _)| !team_set.contains(t))
        .map(|(_, v)| (v - lse).exp())
        .sum();

    fn walk(inside: &[f64], used: &mut [bool], outside: f64, prob: f64) -> f64 {
        let remaining: f64 = inside
            .iter()
            .zip(used.iter())
            .filter(|(_, &u)| !u)
            .map(|(&w, _)| w)
            .sum();
        if used.iter().all(|&u| u) {
            return prob;
        }
        let denom = remaining + outside;
        let mut total = 0.0;
        for j in 0..inside.len() {
            if used[j] {
                continue;
            }
            used[j] = true;
            total += walk(inside, used, outside, prob * inside[j] / denom);
            used[j] = false;
        }
        total
    }

    let mut used = vec![false; k];
    Ok(walk(&inside, &mut used, outside, 1.0))
}

/// A Monte-Carlo probability with its binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub draws: usize,
}

/// Monte-Carlo frequency of `team_set` filling ranks `1..=k`.
pub fn top_k_set_probability_mc<R: Rng + ?Sized>(
    f: &StrengthVector,
    team_set: &BTreeSet<TeamId>,
    draws: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    check_subset(f, team_set)?;
    if draws == 0 {
        return Err(Error::Domain("Monte-Carlo estimate needs at least one draw".into()));
    }
    let teams: Vec<TeamId> = f.teams().collect();
    let values: Vec<f64> = f.iter().map(|(_, v)| v).collect();
    let weights = softmax(&values);
    let member: Vec<bool> = teams.iter().map(|t| team_set.contains(t)).collect();
    let k = team_set.len();
    let mut pool = Vec::with_capacity(teams.len());
    let mut picks = Vec::with_capacity(k);
    let mut hits = 0usize;
    for _ in 0..draws {
        sample_prefix(&weights, k, rng, &mut pool, &mut picks);
        if picks.iter().all(|&i| member[i]) {
            hits += 1;
        }
    }
    let p = hits as f64 / draws as f64;
    Ok(McEstimate {
        value: p,
        std_error: (p * (1.0 - p) / draws as f64).sqrt(),
        draws,
    })
}

/// How [`top_k_set_probability`] computes its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetProbabilityMethod {
    Exact { cap: usize },
    MonteCarlo { draws: usize },
}

pub fn top_k_set_probability<R: Rng + ?Sized>(
    f: &StrengthVector,
    team_set: &BTreeSet<TeamId>,
    method: SetProbabilityMethod,
    rng: &mut R,
) -> Result<f64> {
    match method {
        SetProbabilityMethod::Exact { cap } => top_k_set_probability_exact(f, team_set, cap),
        SetProbabilityMethod::MonteCarlo { draws } => {
            top_k_set_probability_mc(f, team_set, draws, rng).map(|e| e.value)
        }
    }
}

/// The most probable ranking: descending strength, ties broken by the
/// smaller team id.
pub fn modal_ranking(f: &StrengthVector) -> Result<Ranking> {
    f.check_all_finite()?;
    let mut teams: Vec<(TeamId, f64)> = f.iter().collect();
    teams.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ranking::new(teams.into_iter().map(|(t, _)| t).collect())
}
