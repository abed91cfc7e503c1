#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dynrank::pl::{self, StrengthVector};
use dynrank::{Edition, PanelDataset, Ranking};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every permutation of `0..n`, in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Plackett-Luce probability written out as a product, no log-space tricks.
pub fn naive_pmf(f: &[f64], ordering: &[usize]) -> f64 {
    let mut p = 1.0;
    for (r, &t) in ordering.iter().enumerate() {
        let denom: f64 = ordering[r..].iter().map(|&j| f[j].exp()).sum();
        p *= f[t].exp() / denom;
    }
    p
}

pub fn random_strengths(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn pmf(f: &[f64], ordering: &[usize]) -> f64 {
    let r = Ranking::new(ordering.to_vec()).unwrap();
    pl::log_pmf(&r, &StrengthVector::from_dense(f)).unwrap().exp()
}

/// A panel in which the same teams meet every edition.
pub fn panel(n_teams: usize, orderings: &[Vec<usize>]) -> PanelDataset {
    PanelDataset {
        teams: (0..n_teams).map(|i| format!("t{i}")).collect(),
        variables: Vec::new(),
        editions: orderings
            .iter()
            .enumerate()
            .map(|(i, o)| Edition {
                label: i as i32 + 1,
                ordering: o.clone(),
                predictors: vec![Vec::new(); o.len()],
            })
            .collect(),
    }
}

pub const FIXTURE_TEAMS: [&str; 8] = [
    "Canada", "Sweden", "Finland", "Russia", "Czechia", "USA", "Switzerland", "Slovakia",
];
const LOWER_TEAMS: [&str; 3] = ["Norway", "Latvia", "Denmark"];
pub const FIXTURE_FIRST_YEAR: i32 = 2000;
pub const FIXTURE_LAST_YEAR: i32 = 2019;
/// Senior championship not held this year.
pub const FIXTURE_GAP_YEAR: i32 = 2010;

fn draw_order(rng: &mut ChaCha8Rng, strengths: &[f64]) -> Vec<usize> {
    pl::sample_ranking(&StrengthVector::from_dense(strengths), rng)
        .unwrap()
        .ordering()
        .to_vec()
}

/// Write seeded `results.csv` and `rosters.csv` into `dir`: a senior
/// championship with eight teams and a small second division, plus junior
/// and under-18 events that feed the reciprocal-rank predictors.
pub fn write_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let base: Vec<f64> = (0..FIXTURE_TEAMS.len()).map(|i| 1.2 - 0.35 * i as f64).collect();
    let mut results = String::from("edition_year,tournament_code,team_id,final_rank,division_tier\n");
    let mut rosters = String::from(
        "edition_year,tournament_code,team_id,avg_height_cm,avg_weight_kg,avg_age_years,\
         iihf_games_avg,nhl_games_avg,other_league_games_avg,hosting_flag\n",
    );
    for year in FIXTURE_FIRST_YEAR - 1..=FIXTURE_LAST_YEAR {
        for code in ["WJC", "U18"] {
            let noisy: Vec<f64> = base.iter().map(|b| b + rng.random_range(-0.5..0.5)).collect();
            for (r, &t) in draw_order(&mut rng, &noisy).iter().enumerate() {
                let _ = writeln!(results, "{year},{code},{},{},1", FIXTURE_TEAMS[t], r + 1);
            }
        }
        if year < FIXTURE_FIRST_YEAR || year == FIXTURE_GAP_YEAR {
            continue;
        }
        let host = (year as usize) % FIXTURE_TEAMS.len();
        let order = draw_order(&mut rng, &base);
        for (r, &t) in order.iter().enumerate() {
            let _ = writeln!(results, "{year},WC,{},{},1", FIXTURE_TEAMS[t], r + 1);
            let _ = writeln!(
                rosters,
                "{year},WC,{},{:.1},{:.1},{:.2},{:.1},{:.1},{:.1},{}",
                FIXTURE_TEAMS[t],
                180.0 + rng.random_range(-3.0..3.0),
                85.0 + rng.random_range(-4.0..4.0),
                26.0 + rng.random_range(-2.0..2.0),
                rng.random_range(5.0..40.0),
                rng.random_range(0.0..300.0) * (1.0 - t as f64 / 8.0),
                rng.random_range(100.0..400.0),
                (t == host) as u8
            );
        }
        for (r, team) in LOWER_TEAMS.iter().enumerate() {
            let _ = writeln!(results, "{year},WC,{team},{},2", r + 1);
        }
    }
    let r = dir.join("results.csv");
    let s = dir.join("rosters.csv");
    std::fs::write(&r, results).unwrap();
    std::fs::write(&s, rosters).unwrap();
    (r, s)
}

/// A run configuration for the fixture with a light optimizer budget.
pub fn write_fixture_config(dir: &Path, extra: &str) -> PathBuf {
    write_fixture(dir);
    let text = format!(
        r#"seed = 11
out_dir = "out"

[data]
results = "results.csv"
rosters = "rosters.csv"

[build]
tournament = "WC"

[fit]
restarts = 2
polish = 1

[[specs]]
name = "static"
include_dynamics = false

[[specs]]
name = "final"
predictors = ["hosting", "last_wjc", "nhl_exp"]

[forecast]
spec = "final"
lambda_grid = [0.0, 0.1]
holdout = 2
mc_draws = 2000

[diagnose]
lags = [1, 2]
cross_tournament = "WJC"
replications = 50
{extra}"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}
