//! CSV ingestion, panel construction and the `panel.json` format.
//!
//! `results.csv` columns:
//! `edition_year,tournament_code,team_id,final_rank,division_tier`
//! (tier 1 is the top division).
//!
//! `rosters.csv` columns:
//! `edition_year,tournament_code,team_id,avg_height_cm,avg_weight_kg,avg_age_years,iihf_games_avg,nhl_games_avg,other_league_games_avg,hosting_flag`
//! (empty cells are missing values).
//!
//! Lower-division ranks continue the top division's numbering: the winner
//! of tier 2 gets rank `n1 + 1` where `n1` is the size of tier 1 that year.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{beats_components, check_partition_condition, PartitionReport};
use crate::filter::{Edition, PanelDataset};
use crate::pl::TeamId;

pub const RESULTS_HEADER: [&str; 5] = [
    "edition_year",
    "tournament_code",
    "team_id",
    "final_rank",
    "division_tier",
];

pub const ROSTERS_HEADER: [&str; 10] = [
    "edition_year",
    "tournament_code",
    "team_id",
    "avg_height_cm",
    "avg_weight_kg",
    "avg_age_years",
    "iihf_games_avg",
    "nhl_games_avg",
    "other_league_games_avg",
    "hosting_flag",
];

/// Tournament codes with built-in season alignment.
pub const KNOWN_TOURNAMENTS: [&str; 4] = ["WC", "WJC", "U18", "OG"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub edition_year: i32,
    pub tournament_code: String,
    pub team_id: String,
    pub final_rank: u32,
    pub division_tier: u32,
    /// Source line, 0 when not read from a file.
    #[serde(skip)]
    pub line: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RosterRow {
    pub edition_year: i32,
    pub tournament_code: String,
    pub team_id: String,
    pub avg_height_cm: Option<f64>,
    pub avg_weight_kg: Option<f64>,
    pub avg_age_years: Option<f64>,
    pub iihf_games_avg: Option<f64>,
    pub nhl_games_avg: Option<f64>,
    pub other_league_games_avg: Option<f64>,
    pub hosting_flag: Option<f64>,
    #[serde(skip)]
    pub line: u64,
}

trait Located {
    fn set_line(&mut self, line: u64);
}

impl Located for ResultRow {
    fn set_line(&mut self, line: u64) {
        self.line = line;
    }
}

impl Located for RosterRow {
    fn set_line(&mut self, line: u64) {
        self.line = line;
    }
}

fn parse_csv<T, R>(reader: R, source: &str, header: &[&str]) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de> + Located,
    R: std::io::Read,
{
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let missing: Vec<String> = header
        .iter()
        .filter(|h| !headers.iter().any(|x| x == **h))
        .map(|h| format!("{source}: missing column `{h}`"))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(missing));
    }
    let mut rows = Vec::new();
    let mut problems = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        match rec.deserialize::<T>(Some(&headers)) {
            Ok(mut row) => {
                row.set_line(line);
                rows.push(row);
            }
            Err(e) => problems.push(format!("{source} line {line}: {e}")),
        }
    }
    if problems.is_empty() {
        Ok(rows)
    } else {
        Err(Error::Validation(problems))
    }
}

pub fn parse_results<R: std::io::Read>(reader: R, source: &str) -> Result<Vec<ResultRow>> {
    let rows: Vec<ResultRow> = parse_csv(reader, source, &RESULTS_HEADER)?;
    let mut problems = Vec::new();
    for r in &rows {
        if r.edition_year <= 0 {
            problems.push(format!("{source} line {}: year {} is not positive", r.line, r.edition_year));
        }
        if r.final_rank == 0 {
            problems.push(format!("{source} line {}: rank must be at least 1", r.line));
        }
        if r.division_tier == 0 {
            problems.push(format!("{source} line {}: division tier must be at least 1", r.line));
        }
        if r.tournament_code.is_empty() || r.team_id.is_empty() {
            problems.push(format!("{source} line {}: empty tournament or team", r.line));
        }
    }
    if problems.is_empty() {
        Ok(rows)
    } else {
        Err(Error::Validation(problems))
    }
}

pub fn parse_rosters<R: std::io::Read>(reader: R, source: &str) -> Result<Vec<RosterRow>> {
    let rows: Vec<RosterRow> = parse_csv(reader, source, &ROSTERS_HEADER)?;
    let mut problems = Vec::new();
    let window = |v: Option<f64>, lo: f64, hi: f64, what: &str, r: &RosterRow, p: &mut Vec<String>| {
        if let Some(v) = v {
            if !(lo..=hi).contains(&v) {
                p.push(format!(
                    "{source} line {}: {what} {v} outside [{lo}, {hi}] for `{}` {}",
                    r.line, r.team_id, r.edition_year
                ));
            }
        }
    };
    for r in &rows {
        window(r.avg_height_cm, 150.0, 220.0, "height", r, &mut problems);
        window(r.avg_weight_kg, 50.0, 130.0, "weight", r, &mut problems);
        window(r.avg_age_years, 15.0, 45.0, "age", r, &mut problems);
        for (v, what) in [
            (r.iihf_games_avg, "IIHF games"),
            (r.nhl_games_avg, "NHL games"),
            (r.other_league_games_avg, "other-league games"),
        ] {
            window(v, 0.0, f64::MAX, what, r, &mut problems);
        }
        if let Some(h) = r.hosting_flag {
            if h != 0.0 && h != 1.0 {
                problems.push(format!("{source} line {}: hosting flag {h} is not 0 or 1", r.line));
            }
        }
    }
    if problems.is_empty() {
        Ok(rows)
    } else {
        Err(Error::Validation(problems))
    }
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    parse_results(open(path)?, &path.display().to_string())
}

pub fn read_rosters(path: &Path) -> Result<Vec<RosterRow>> {
    parse_rosters(open(path)?, &path.display().to_string())
}

/// Follow `merges` from `team` to its canonical name.
pub fn resolve_team(merges: &BTreeMap<String, String>, team: &str) -> Result<String> {
    let mut chain = vec![team.to_string()];
    let mut current = team;
    while let Some(next) = merges.get(current) {
        if chain.iter().any(|c| c == next) {
            chain.push(next.clone());
            return Err(Error::Validation(vec![format!(
                "merge cycle: {}",
                chain.join(" -> ")
            )]));
        }
        chain.push(next.clone());
        current = next;
    }
    Ok(current.to_string())
}

/// Ranks with lower divisions appended below the higher ones.
#[derive(Clone, Debug, Default)]
pub struct RankIndex {
    ranks: BTreeMap<(String, i32), BTreeMap<String, u32>>,
}

impl RankIndex {
    /// Index merged result rows. Team names are used as given.
    pub fn new(rows: &[ResultRow]) -> Self {
        let mut sizes: BTreeMap<(&str, i32, u32), u32> = BTreeMap::new();
        for r in rows {
            *sizes
                .entry((&r.tournament_code, r.edition_year, r.division_tier))
                .or_default() += 1;
        }
        let mut ranks: BTreeMap<(String, i32), BTreeMap<String, u32>> = BTreeMap::new();
        for r in rows {
            let offset: u32 = sizes
                .range((r.tournament_code.as_str(), r.edition_year, 0)..(r.tournament_code.as_str(), r.edition_year, r.division_tier))
                .map(|(_, n)| n)
                .sum();
            ranks
                .entry((r.tournament_code.clone(), r.edition_year))
                .or_default()
                .insert(r.team_id.clone(), offset + r.final_rank);
        }
        RankIndex { ranks }
    }

    pub fn has_code(&self, code: &str) -> bool {
        self.ranks.keys().any(|(c, _)| c == code)
    }

    pub fn global_rank(&self, code: &str, year: i32, team: &str) -> Option<u32> {
        self.ranks
            .get(&(code.to_string(), year))
            .and_then(|m| m.get(team))
            .copied()
    }

    /// `1 / rank` of `team` in `code` held in `year`, 0 when it did not take
    /// part or the tournament was not held.
    pub fn reciprocal_rank(&self, code: &str, year: i32, team: &str) -> f64 {
        self.global_rank(code, year, team)
            .map(|r| 1.0 / r as f64)
            .unwrap_or(0.0)
    }
}

/// Reciprocal ranks in tournament `source`, `offset` years from each
/// `(year, team)` cell.
pub fn reciprocal_rank_predictor(
    index: &RankIndex,
    source: &str,
    offset: i32,
    cells: &[(i32, &str)],
) -> Result<Vec<f64>> {
    if !KNOWN_TOURNAMENTS.contains(&source) && !index.has_code(source) {
        return Err(Error::Validation(vec![format!("unknown tournament code `{source}`")]));
    }
    Ok(cells
        .iter()
        .map(|&(year, team)| index.reciprocal_rank(source, year + offset, team))
        .collect())
}

/// Year offsets of the reciprocal-rank sources for a target tournament.
/// The senior championship in spring follows that season's junior events;
/// every other target looks back one season.
pub fn default_lag_offsets(target: &str) -> BTreeMap<String, i32> {
    let table: [(&str, i32); 3] = if target == "WC" {
        [("WC", -1), ("WJC", 0), ("U18", 0)]
    } else {
        [("WC", -1), ("WJC", -1), ("U18", -1)]
    };
    table.iter().map(|(c, o)| (c.to_string(), *o)).collect()
}

/// Roster-derived predictor names and their columns.
pub const ROSTER_VARIABLES: [&str; 7] = [
    "hosting",
    "height",
    "weight",
    "age",
    "iihf_exp",
    "nhl_exp",
    "other_exp",
];

fn roster_value(row: &RosterRow, name: &str) -> Option<f64> {
    match name {
        "hosting" => row.hosting_flag,
        "height" => row.avg_height_cm,
        "weight" => row.avg_weight_kg,
        "age" => row.avg_age_years,
        "iihf_exp" => row.iihf_games_avg,
        "nhl_exp" => row.nhl_games_avg,
        "other_exp" => row.other_league_games_avg,
        _ => None,
    }
}

/// Default predictor set: hosting, the reciprocal ranks and the roster
/// averages.
pub fn default_predictors() -> Vec<String> {
    ["hosting", "last_wc", "last_wjc", "last_u18", "height", "weight", "age", "iihf_exp", "nhl_exp", "other_exp"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildConfig {
    /// Code of the tournament whose top division forms the panel.
    pub tournament: String,
    pub first_year: Option<i32>,
    pub last_year: Option<i32>,
    /// Alias to canonical team name; chains are followed.
    pub merges: BTreeMap<String, String>,
    /// Teams removed from the panel outright.
    pub exclude: Vec<String>,
    /// Repeatedly keep only the largest strongly connected group of the
    /// beats graph, reporting the teams dropped.
    pub drop_partition_violators: bool,
    /// Predictor columns: roster names or `last_<code>` reciprocal ranks.
    pub predictors: Vec<String>,
    /// Overrides of [`default_lag_offsets`], keyed by tournament code.
    pub lag_offsets: BTreeMap<String, i32>,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            tournament: "WC".to_string(),
            first_year: None,
            last_year: None,
            merges: BTreeMap::new(),
            exclude: Vec::new(),
            drop_partition_violators: false,
            predictors: default_predictors(),
            lag_offsets: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeApplied {
    pub alias: String,
    pub canonical: String,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub team: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub tournament: String,
    pub first_year: i32,
    pub last_year: i32,
    pub n_editions: usize,
    pub n_ranked: usize,
    pub n_teams: usize,
    pub merges_applied: Vec<MergeApplied>,
    pub excluded: Vec<Exclusion>,
    /// Years in the span without a top-division result.
    pub gap_editions: Vec<i32>,
    pub partition_check: PartitionReport,
    pub warnings: Vec<String>,
}

impl BuildReport {
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }
}

fn apply_merges(
    results: &[ResultRow],
    rosters: &[RosterRow],
    merges: &BTreeMap<String, String>,
) -> Result<(Vec<ResultRow>, Vec<RosterRow>, Vec<MergeApplied>)> {
    let mut canonical = BTreeMap::new();
    let mut problems = Vec::new();
    for alias in merges.keys() {
        match resolve_team(merges, alias) {
            Ok(c) => {
                canonical.insert(alias.clone(), c);
            }
            Err(Error::Validation(p)) => problems.extend(p),
            Err(e) => return Err(e),
        }
    }
    if !problems.is_empty() {
        problems.dedup();
        return Err(Error::Validation(problems));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut rename = |team: &mut String| {
        if let Some(c) = canonical.get(team.as_str()) {
            *counts.entry(team.clone()).or_default() += 1;
            *team = c.clone();
        }
    };
    let mut res = results.to_vec();
    for r in &mut res {
        rename(&mut r.team_id);
    }
    let mut ros = rosters.to_vec();
    for r in &mut ros {
        rename(&mut r.team_id);
    }
    let applied = counts
        .into_iter()
        .map(|(alias, rows)| MergeApplied {
            canonical: canonical[&alias].clone(),
            alias,
            rows,
        })
        .collect();
    Ok((res, ros, applied))
}

fn check_results(rows: &[ResultRow]) -> Result<()> {
    let mut problems = Vec::new();
    let mut seen: BTreeMap<(&str, i32, &str), u64> = BTreeMap::new();
    let mut tiers: BTreeMap<(&str, i32, u32), Vec<(u32, u64)>> = BTreeMap::new();
    for r in rows {
        if let Some(first) = seen.insert((&r.tournament_code, r.edition_year, &r.team_id), r.line) {
            problems.push(format!(
                "line {}: team `{}` already listed for {} {} on line {first}",
                r.line, r.team_id, r.tournament_code, r.edition_year
            ));
        }
        tiers
            .entry((&r.tournament_code, r.edition_year, r.division_tier))
            .or_default()
            .push((r.final_rank, r.line));
    }
    for ((code, year, tier), mut ranks) in tiers {
        ranks.sort_unstable();
        let mut expected = 1;
        for (i, &(rank, line)) in ranks.iter().enumerate() {
            if i > 0 && ranks[i - 1].0 == rank {
                problems.push(format!(
                    "line {line}: rank {rank} repeated in {code} {year} tier {tier} (line {})",
                    ranks[i - 1].1
                ));
                continue;
            }
            if rank != expected {
                problems.push(format!(
                    "line {line}: rank {rank} in {code} {year} tier {tier} leaves a gap after {}",
                    expected - 1
                ));
            }
            expected = rank + 1;
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems))
    }
}

/// Assemble the panel of `config.tournament`'s top division.
pub fn build_panel(
    results: &[ResultRow],
    rosters: &[RosterRow],
    config: &BuildConfig,
) -> Result<(PanelDataset, BuildReport)> {
    let (results, rosters, merges_applied) = apply_merges(results, rosters, &config.merges)?;
    check_results(&results)?;
    let code = config.tournament.as_str();
    let top: Vec<&ResultRow> = results
        .iter()
        .filter(|r| r.tournament_code == code && r.division_tier == 1)
        .collect();
    let years: BTreeSet<i32> = top.iter().map(|r| r.edition_year).collect();
    let (Some(&lo), Some(&hi)) = (years.first(), years.last()) else {
        return Err(Error::Data(format!("no top-division results for tournament `{code}`")));
    };
    let first_year = config.first_year.unwrap_or(lo);
    let last_year = config.last_year.unwrap_or(hi);
    if first_year > last_year {
        return Err(Error::Validation(vec![format!(
            "first year {first_year} is after last year {last_year}"
        )]));
    }

    // predictor definitions
    let mut offsets = default_lag_offsets(code);
    offsets.extend(config.lag_offsets.clone());
    let index = RankIndex::new(&results);
    enum Source {
        Roster(String),
        Rank(String, i32),
    }
    let mut sources = Vec::new();
    let mut problems = Vec::new();
    for p in &config.predictors {
        if ROSTER_VARIABLES.contains(&p.as_str()) {
            sources.push(Source::Roster(p.clone()));
        } else if let Some(src) = p.strip_prefix("last_") {
            let src = src.to_uppercase();
            if !KNOWN_TOURNAMENTS.contains(&src.as_str()) && !index.has_code(&src) {
                problems.push(format!("predictor `{p}`: unknown tournament code `{src}`"));
            } else {
                match offsets.get(&src) {
                    Some(&o) => sources.push(Source::Rank(src, o)),
                    None => problems.push(format!("predictor `{p}`: no lag offset for `{src}`")),
                }
            }
        } else {
            problems.push(format!("unknown predictor `{p}`"));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }

    // rankings per year, best first
    let mut by_year: BTreeMap<i32, Vec<(u32, String)>> = BTreeMap::new();
    for r in &top {
        if (first_year..=last_year).contains(&r.edition_year) {
            by_year
                .entry(r.edition_year)
                .or_default()
                .push((r.final_rank, r.team_id.clone()));
        }
    }
    for v in by_year.values_mut() {
        v.sort();
    }

    let mut excluded: Vec<Exclusion> = Vec::new();
    let mut dropped: BTreeSet<String> = BTreeSet::new();
    for t in &config.exclude {
        let t = resolve_team(&config.merges, t)?;
        if dropped.insert(t.clone()) {
            excluded.push(Exclusion {
                team: t,
                reason: "excluded by configuration".into(),
            });
        }
    }

    let mut warnings = Vec::new();
    let assemble = |dropped: &BTreeSet<String>| -> (Vec<String>, Vec<(i32, Vec<String>)>) {
        let mut teams = BTreeSet::new();
        let mut eds = Vec::new();
        for year in first_year..=last_year {
            let ordering: Vec<String> = by_year
                .get(&year)
                .map(|v| v.iter().filter(|(_, t)| !dropped.contains(t)).map(|(_, t)| t.clone()).collect())
                .unwrap_or_default();
            let ordering = if ordering.len() < 2 { Vec::new() } else { ordering };
            teams.extend(ordering.iter().cloned());
            eds.push((year, ordering));
        }
        (teams.into_iter().collect(), eds)
    };
    let to_panel = |teams: &[String], eds: &[(i32, Vec<String>)]| -> PanelDataset {
        let id: BTreeMap<&str, TeamId> = teams.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
        PanelDataset {
            teams: teams.to_vec(),
            variables: Vec::new(),
            editions: eds
                .iter()
                .map(|(y, o)| Edition {
                    label: *y,
                    ordering: o.iter().map(|t| id[t.as_str()]).collect(),
                    predictors: vec![Vec::new(); o.len()],
                })
                .collect(),
        }
    };

    let (mut teams, mut eds) = assemble(&dropped);
    if config.drop_partition_violators {
        loop {
            let panel = to_panel(&teams, &eds);
            let comps = beats_components(&panel);
            if comps.len() <= 1 {
                break;
            }
            // largest group; ties go to the earlier (dominant) one
            let keep = comps
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap();
            for (i, c) in comps.iter().enumerate() {
                if i == keep {
                    continue;
                }
                let side = if i < keep { "never ranked below" } else { "never ranked above" };
                for &t in c {
                    dropped.insert(teams[t].clone());
                    excluded.push(Exclusion {
                        team: teams[t].clone(),
                        reason: format!("partition condition: {side} the connected majority"),
                    });
                }
            }
            (teams, eds) = assemble(&dropped);
        }
    }

    let mut panel = to_panel(&teams, &eds);
    let gap_editions: Vec<i32> = (first_year..=last_year)
        .filter(|y| !by_year.contains_key(y))
        .collect();
    for (y, o) in &eds {
        if o.is_empty() && by_year.contains_key(y) {
            warnings.push(format!("edition {y} has fewer than 2 teams left and is treated as not held"));
        }
    }

    // predictor matrix
    let roster_map: BTreeMap<(i32, &str), &RosterRow> = rosters
        .iter()
        .filter(|r| r.tournament_code == code)
        .map(|r| ((r.edition_year, r.team_id.as_str()), r))
        .collect();
    let mut problems = Vec::new();
    for ed in &mut panel.editions {
        for (r, &team) in ed.ordering.iter().enumerate() {
            let name = &teams[team];
            let mut row = Vec::with_capacity(sources.len());
            for (s, p) in sources.iter().zip(&config.predictors) {
                let v = match s {
                    Source::Rank(src, o) => Some(index.reciprocal_rank(src, ed.label + o, name)),
                    Source::Roster(var) => roster_map
                        .get(&(ed.label, name.as_str()))
                        .and_then(|row| roster_value(row, var)),
                };
                match v {
                    Some(v) => row.push(v),
                    None => {
                        problems.push(format!("{code} {}: team `{name}` has no value for `{p}`", ed.label));
                        row.push(f64::NAN);
                    }
                }
            }
            ed.predictors[r] = row;
        }
    }
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    panel.variables = config.predictors.clone();
    panel.validate()?;

    let partition_check = check_partition_condition(&panel).report(&panel);
    let report = BuildReport {
        tournament: code.to_string(),
        first_year,
        last_year,
        n_editions: panel.n_editions(),
        n_ranked: panel.n_ranked(),
        n_teams: panel.n_teams(),
        merges_applied,
        excluded,
        gap_editions,
        partition_check,
        warnings,
    };
    Ok((panel, report))
}

/// Five-number summary of one predictor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub variable: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn median_sorted(x: &[f64]) -> f64 {
    let n = x.len();
    if n % 2 == 1 {
        x[n / 2]
    } else {
        0.5 * (x[n / 2 - 1] + x[n / 2])
    }
}

/// Quartiles are medians of the lower and upper halves, the middle value
/// excluded when the count is odd.
pub fn five_number(variable: &str, values: &[f64]) -> Option<FiveNumber> {
    let mut x: Vec<f64> = values.to_vec();
    if x.is_empty() {
        return None;
    }
    x.sort_by(f64::total_cmp);
    let n = x.len();
    let half = n / 2;
    let median = median_sorted(&x);
    let (q1, q3) = if half == 0 {
        (median, median)
    } else {
        (median_sorted(&x[..half]), median_sorted(&x[n - half..]))
    };
    Some(FiveNumber {
        variable: variable.to_string(),
        n,
        min: x[0],
        q1,
        median,
        q3,
        max: x[n - 1],
    })
}

/// Five-number summaries of every predictor over participating cells.
pub fn summary_stats(panel: &PanelDataset) -> Vec<FiveNumber> {
    (0..panel.n_variables())
        .filter_map(|j| {
            let values: Vec<f64> = panel
                .editions
                .iter()
                .flat_map(|e| e.predictors.iter().map(move |row| row[j]))
                .collect();
            five_number(&panel.variables[j], &values)
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct PanelEditionFile {
    label: i32,
    held: bool,
    /// One character per registry team: `1` when it took part.
    participation: String,
    ordering: Vec<TeamId>,
    predictors: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PanelFile {
    format: String,
    version: u32,
    /// Provenance written by the command-line tool; ignored on reading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
    teams: Vec<String>,
    variables: Vec<String>,
    editions: Vec<PanelEditionFile>,
}

const PANEL_FORMAT: &str = "dynrank-panel";

/// Serialize a panel to the canonical `panel.json` text.
pub fn panel_to_json(panel: &PanelDataset) -> Result<String> {
    panel_to_json_with_meta(panel, None)
}

/// [`panel_to_json`] with a provenance block.
pub fn panel_to_json_with_meta(panel: &PanelDataset, meta: Option<serde_json::Value>) -> Result<String> {
    let file = PanelFile {
        format: PANEL_FORMAT.into(),
        version: 1,
        meta,
        teams: panel.teams.clone(),
        variables: panel.variables.clone(),
        editions: panel
            .editions
            .iter()
            .map(|e| {
                let mut bits = vec![b'0'; panel.n_teams()];
                for &t in &e.ordering {
                    if let Some(b) = bits.get_mut(t) {
                        *b = b'1';
                    }
                }
                PanelEditionFile {
                    label: e.label,
                    held: !e.is_cancelled(),
                    participation: String::from_utf8(bits).expect("ascii"),
                    ordering: e.ordering.clone(),
                    predictors: e.predictors.clone(),
                }
            })
            .collect(),
    };
    crate::json::to_string(&file)
}

/// Parse and validate `panel.json` text.
pub fn panel_from_json(text: &str) -> Result<PanelDataset> {
    let file: PanelFile = serde_json::from_str(text)?;
    let mut problems = Vec::new();
    if file.format != PANEL_FORMAT || file.version != 1 {
        problems.push(format!("unsupported panel format {} v{}", file.format, file.version));
    }
    let n = file.teams.len();
    let editions = file
        .editions
        .into_iter()
        .map(|e| {
            let mut bits = vec![b'0'; n];
            for &t in &e.ordering {
                if let Some(b) = bits.get_mut(t) {
                    *b = b'1';
                }
            }
            if e.participation.as_bytes() != bits.as_slice() {
                problems.push(format!("edition {}: participation bitmap disagrees with ordering", e.label));
            }
            if e.held == e.ordering.is_empty() {
                problems.push(format!("edition {}: held flag disagrees with ordering", e.label));
            }
            Edition {
                label: e.label,
                ordering: e.ordering,
                predictors: e.predictors,
            }
        })
        .collect();
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let panel = PanelDataset {
        teams: file.teams,
        variables: file.variables,
        editions,
    };
    panel.validate()?;
    Ok(panel)
}

pub fn read_panel(path: &Path) -> Result<PanelDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    panel_from_json(&text)
}
