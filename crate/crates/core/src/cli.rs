//! The `dynrank` command-line tool.
//!
//! Every command reads an optional TOML run configuration; flags override
//! the matching configuration entries. Each file written carries the tool
//! version, a SHA-256 digest of the effective configuration and the seeds
//! used, and nothing time-dependent, so identical runs give identical bytes.
//!
//! Exit codes: 0 on success, 2 for usage and validation errors, 3 for
//! numerical failures (non-convergence, singular information).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data_io::{self, BuildConfig, BuildReport};
use crate::diagnostics::{self, BootstrapOptions, CorrelationMethod, CorrelationReport};
use crate::error::{Error, Result};
use crate::estimation::{self, FitOptions, FitResult, ModelSpec, ModelTable};
use crate::filter::{Coefficients, PanelDataset};
use crate::forecast::{self, ForecastOptions, DEFAULT_LAMBDA_GRID, DEFAULT_MC_DRAWS};
use crate::json::{self, fmt_f64};
use crate::sim::{self, SimulationConfig};

pub const DEFAULT_SEED: u64 = 20_240_501;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
    Table,
}

#[derive(Parser, Debug)]
#[command(name = "dynrank", version, about = "Dynamic Plackett-Luce ranking models for tournament panels")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; the per-task seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// What to print on standard output.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build `panel.json` and a build report from the CSV inputs.
    Build,
    /// Fit one specification or compare all of them.
    Fit {
        #[arg(long, conflicts_with = "all_specs")]
        spec: Option<String>,
        #[arg(long)]
        all_specs: bool,
    },
    /// Rolling one-step-ahead evaluation over a penalty grid.
    Forecast {
        #[arg(long)]
        spec: Option<String>,
        /// Comma-separated penalty grid.
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        #[arg(long)]
        holdout: Option<usize>,
        #[arg(long)]
        k_playoff: Option<usize>,
        #[arg(long)]
        mc_draws: Option<usize>,
    },
    /// Rank autocorrelations, cross-tournament correlations and predictor
    /// correlations.
    Diagnose {
        #[arg(long, value_delimiter = ',')]
        lags: Vec<i32>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        spearman: bool,
    },
    /// Log-likelihood over a grid of score coefficients at the fitted optimum.
    Profile {
        #[arg(long)]
        spec: Option<String>,
        /// Comma-separated score-coefficient grid.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        alpha_grid: Vec<f64>,
    },
    /// Draw a synthetic panel from the model.
    Simulate {
        #[arg(long)]
        teams: Option<usize>,
        #[arg(long)]
        editions: Option<usize>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub results: Option<PathBuf>,
    pub rosters: Option<PathBuf>,
    /// A prebuilt panel, used instead of the CSV files.
    pub panel: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    pub spec: Option<String>,
    pub lambda_grid: Vec<f64>,
    pub holdout: usize,
    pub k_playoff: Option<usize>,
    pub mc_draws: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            spec: None,
            lambda_grid: DEFAULT_LAMBDA_GRID.to_vec(),
            holdout: 16,
            k_playoff: None,
            mc_draws: DEFAULT_MC_DRAWS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub lags: Vec<i32>,
    /// Second tournament built from the same CSV files for cross-correlation.
    pub cross_tournament: Option<String>,
    /// Or a prebuilt second panel.
    pub cross_panel: Option<PathBuf>,
    pub cross_lags: Vec<i32>,
    pub replications: usize,
    pub level: f64,
    pub method: CorrelationMethod,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            lags: (1..=10).collect(),
            cross_tournament: None,
            cross_panel: None,
            cross_lags: vec![0],
            replications: 2000,
            level: 0.95,
            method: CorrelationMethod::Pearson,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub spec: Option<String>,
    pub alpha_grid: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub teams: usize,
    pub editions: usize,
    /// Fixed effects are spread evenly over `[-spread, spread]`.
    pub spread: f64,
    pub beta: Vec<f64>,
    pub phi: f64,
    pub alpha: f64,
    pub predictor_sd: f64,
    pub participation: f64,
    pub cancellation: f64,
    pub first_label: i32,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            teams: 8,
            editions: 50,
            spread: 1.0,
            beta: vec![0.5],
            phi: 0.7,
            alpha: 0.2,
            predictor_sd: 1.0,
            participation: 1.0,
            cancellation: 0.0,
            first_label: 1,
        }
    }
}

/// Everything a run can be configured with.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub build: BuildConfig,
    /// Model specifications; the standard families are used when empty.
    pub specs: Vec<ModelSpec>,
    pub fit: FitOptions,
    pub forecast: ForecastConfig,
    pub diagnose: DiagnoseConfig,
    pub profile: ProfileConfig,
    pub simulate: SimulateConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(format!("configuration: {e}")))
    }

    /// SHA-256 of the canonical JSON form. The output directory is left out
    /// so that identical runs written to different places match.
    pub fn digest(&self) -> String {
        let keyed = RunConfig {
            out_dir: None,
            ..self.clone()
        };
        let text = serde_json::to_string(&keyed).expect("configuration serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn seeds(&self) -> BTreeMap<&'static str, u64> {
        let base = self.seed.unwrap_or(DEFAULT_SEED);
        BTreeMap::from([
            ("master", base),
            ("fit", base),
            ("forecast", base.wrapping_add(1)),
            ("bootstrap", base.wrapping_add(2)),
            ("simulate", base.wrapping_add(3)),
        ])
    }

    fn specs(&self) -> Result<Vec<ModelSpec>> {
        let specs = if self.specs.is_empty() {
            standard_specs(&self.build.tournament)
        } else {
            self.specs.clone()
        };
        let mut seen = std::collections::BTreeSet::new();
        for s in &specs {
            if !seen.insert(&s.name) {
                return Err(Error::Validation(vec![format!("spec name `{}` used twice", s.name)]));
            }
        }
        Ok(specs)
    }

    fn spec(&self, name: Option<&str>) -> Result<ModelSpec> {
        let specs = self.specs()?;
        let wanted = name.unwrap_or("final");
        specs
            .iter()
            .find(|s| s.name == wanted)
            .or_else(|| name.is_none().then(|| specs.last()).flatten())
            .cloned()
            .ok_or_else(|| {
                Error::Usage(format!(
                    "no spec named `{wanted}`; available: {}",
                    specs.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(", ")
                ))
            })
    }
}

/// The seven standard specification families. The `final` predictor sets
/// are the AIC-selected ones for the senior and junior championships.
pub fn standard_specs(tournament: &str) -> Vec<ModelSpec> {
    let final_set: &[&str] = if tournament == "WC" {
        &["last_wjc", "last_wc", "age", "iihf_exp", "nhl_exp"]
    } else {
        &["hosting", "height", "weight", "iihf_exp"]
    };
    vec![
        ModelSpec::fixed_effects("static"),
        ModelSpec::dynamic("dynamic", &[]),
        ModelSpec::dynamic("tournament", &["hosting", "last_wc", "last_wjc", "last_u18"]),
        ModelSpec::dynamic("physical", &["hosting", "height", "weight", "age"]),
        ModelSpec::dynamic("experience", &["hosting", "iihf_exp", "nhl_exp", "other_exp"]),
        ModelSpec::dynamic(
            "full",
            &[
                "hosting", "last_wc", "last_wjc", "last_u18", "height", "weight", "age", "iihf_exp",
                "nhl_exp", "other_exp",
            ],
        ),
        ModelSpec::dynamic("final", final_set),
    ]
}

#[derive(Serialize)]
struct Meta {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config_sha256: String,
    seeds: BTreeMap<&'static str, u64>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    meta: &'a Meta,
    result: &'a T,
}

struct Ctx {
    cfg: RunConfig,
    base: PathBuf,
    out_dir: PathBuf,
    format: Format,
    meta: Meta,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn envelope<T: Serialize>(&self, value: &T) -> Result<String> {
        json::to_string(&Envelope {
            meta: &self.meta,
            result: value,
        })
    }

    fn csv_header(&self) -> String {
        let seeds: Vec<String> = self.meta.seeds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!(
            "# {} {} {} config_sha256={} seeds:{}\n",
            self.meta.tool,
            self.meta.version,
            self.meta.command,
            self.meta.config_sha256,
            seeds.join(",")
        )
    }

    fn write(&self, name: &str, contents: &str) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<String> {
        let text = self.envelope(value)?;
        self.write(name, &text)?;
        Ok(text)
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<String> {
        let text = format!("{}{body}", self.csv_header());
        self.write(name, &text)?;
        Ok(text)
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            seed: self.meta.seeds["fit"],
            ..self.cfg.fit.clone()
        }
    }

    fn load_panel(&self) -> Result<(PanelDataset, Option<BuildReport>)> {
        if let Some(p) = &self.cfg.data.panel {
            return Ok((data_io::read_panel(&self.path(p))?, None));
        }
        let (panel, report) = self.build(&self.cfg.build)?;
        Ok((panel, Some(report)))
    }

    fn build(&self, config: &BuildConfig) -> Result<(PanelDataset, BuildReport)> {
        let results = self
            .cfg
            .data
            .results
            .as_ref()
            .ok_or_else(|| Error::Usage("no input: set data.results or data.panel in the configuration".into()))?;
        let results = data_io::read_results(&self.path(results))?;
        let rosters = match &self.cfg.data.rosters {
            Some(p) => data_io::read_rosters(&self.path(p))?,
            None => Vec::new(),
        };
        data_io::build_panel(&results, &rosters, config)
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

/// Run the tool on `args` (including the program name), writing the primary
/// result to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let (mut cfg, base) = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (RunConfig::from_toml(&text)?, base)
        }
        None => (RunConfig::default(), PathBuf::new()),
    };
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = Some(d.clone());
    }
    let command = match &cli.command {
        Command::Build => "build",
        Command::Fit { .. } => "fit",
        Command::Forecast { .. } => "forecast",
        Command::Diagnose { .. } => "diagnose",
        Command::Profile { .. } => "profile",
        Command::Simulate { .. } => "simulate",
    };
    apply_overrides(&mut cfg, &cli.command);
    let out_dir = match (&cli.out_dir, &cfg.out_dir) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) if d.is_absolute() => d.clone(),
        (None, Some(d)) => base.join(d),
        (None, None) => PathBuf::from("out"),
    };
    let meta = Meta {
        tool: "dynrank",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_sha256: cfg.digest(),
        seeds: cfg.seeds(),
    };
    let ctx = Ctx {
        cfg,
        base,
        out_dir,
        format: cli.format,
        meta,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::Usage("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    let mut warnings = Vec::new();
    let text = pool.install(|| match &cli.command {
        Command::Build => cmd_build(&ctx, &mut warnings),
        Command::Fit { spec, all_specs } => cmd_fit(&ctx, spec.as_deref(), *all_specs, &mut warnings),
        Command::Forecast { .. } => cmd_forecast(&ctx, &mut warnings),
        Command::Diagnose { .. } => cmd_diagnose(&ctx),
        Command::Profile { .. } => cmd_profile(&ctx, &mut warnings),
        Command::Simulate { .. } => cmd_simulate(&ctx),
    });
    for w in &warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let text = text?;
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn apply_overrides(cfg: &mut RunConfig, command: &Command) {
    match command {
        Command::Forecast {
            spec,
            lambda,
            holdout,
            k_playoff,
            mc_draws,
        } => {
            let f = &mut cfg.forecast;
            if spec.is_some() {
                f.spec = spec.clone();
            }
            if !lambda.is_empty() {
                f.lambda_grid = lambda.clone();
            }
            f.holdout = holdout.unwrap_or(f.holdout);
            if k_playoff.is_some() {
                f.k_playoff = *k_playoff;
            }
            f.mc_draws = mc_draws.unwrap_or(f.mc_draws);
        }
        Command::Diagnose {
            lags,
            replications,
            spearman,
        } => {
            let d = &mut cfg.diagnose;
            if !lags.is_empty() {
                d.lags = lags.clone();
            }
            d.replications = replications.unwrap_or(d.replications);
            if *spearman {
                d.method = CorrelationMethod::Spearman;
            }
        }
        Command::Profile { spec, alpha_grid } => {
            if spec.is_some() {
                cfg.profile.spec = spec.clone();
            }
            if !alpha_grid.is_empty() {
                cfg.profile.alpha_grid = alpha_grid.clone();
            }
        }
        Command::Simulate { teams, editions } => {
            let s = &mut cfg.simulate;
            s.teams = teams.unwrap_or(s.teams);
            s.editions = editions.unwrap_or(s.editions);
        }
        Command::Build | Command::Fit { .. } => {}
    }
}

fn warn(err: &mut Vec<String>, warnings: &[String]) {
    err.extend(warnings.iter().cloned());
}

fn cmd_build(ctx: &Ctx, err: &mut Vec<String>) -> Result<String> {
    let (panel, report) = ctx.build(&ctx.cfg.build)?;
    let meta = serde_json::to_value(&ctx.meta)?;
    ctx.write("panel.json", &data_io::panel_to_json_with_meta(&panel, Some(meta))?)?;
    let json = ctx.write_json("build_report.json", &report)?;
    let stats = data_io::summary_stats(&panel);
    ctx.write_json("summary_stats.json", &stats)?;
    warn(err, &report.warnings);
    Ok(match ctx.format {
        Format::Json => json,
        Format::Csv => {
            let mut s = String::from("variable,n,min,q1,median,q3,max\n");
            for f in &stats {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    f.variable,
                    f.n,
                    fmt_f64(f.min),
                    fmt_f64(f.q1),
                    fmt_f64(f.median),
                    fmt_f64(f.q3),
                    fmt_f64(f.max)
                );
            }
            s
        }
        Format::Table => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "{} {}-{}: {} editions, {} ranked, {} teams",
                report.tournament, report.first_year, report.last_year, report.n_editions, report.n_ranked, report.n_teams
            );
            if !report.gap_editions.is_empty() {
                let _ = writeln!(s, "not held: {:?}", report.gap_editions);
            }
            for x in &report.excluded {
                let _ = writeln!(s, "excluded {}: {}", x.team, x.reason);
            }
            let _ = writeln!(
                s,
                "partition condition: {}",
                if report.partition_check.passed { "pass" } else { "FAIL" }
            );
            let _ = writeln!(s, "{:<12}{:>10}{:>10}{:>10}{:>10}{:>10}", "variable", "min", "q1", "median", "q3", "max");
            for f in &stats {
                let _ = writeln!(
                    s,
                    "{:<12}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}",
                    f.variable, f.min, f.q1, f.median, f.q3, f.max
                );
            }
            s
        }
    })
}

fn fit_csv(fit: &FitResult) -> String {
    let mut s = String::from("coefficient,estimate,std_error,p_value,free\n");
    let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for e in &fit.estimates {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            csv_field(&e.name),
            fmt_f64(e.value),
            cell(e.std_error),
            cell(e.p_value),
            e.free as u8
        );
    }
    let _ = writeln!(s, "loglik,{},,,", fmt_f64(fit.loglik));
    let _ = writeln!(s, "aic,{},,,", fmt_f64(fit.aic));
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn cmd_fit(ctx: &Ctx, spec: Option<&str>, all: bool, err: &mut Vec<String>) -> Result<String> {
    let (panel, _) = ctx.load_panel()?;
    let opts = ctx.fit_options();
    if all {
        let specs = ctx.cfg.specs()?;
        let table = estimation::model_table(&panel, &specs, &opts);
        let json = ctx.write_json("model_table.json", &table)?;
        let text = table.render();
        ctx.write("model_table.txt", &format!("{}{text}", ctx.csv_header()))?;
        for c in &table.columns {
            if let Some(e) = &c.error {
                err.push(format!("spec `{}` failed: {e}", c.spec.name));
            }
        }
        if table.best.is_none() {
            return Err(Error::Data("every specification failed to fit".into()));
        }
        return Ok(match ctx.format {
            Format::Json => json,
            Format::Table => text,
            Format::Csv => table
                .columns
                .iter()
                .filter_map(|c| c.fit.as_ref())
                .map(|f| format!("# spec {}\n{}", f.spec.name, fit_csv(f)))
                .collect(),
        });
    }
    let spec = ctx.cfg.spec(spec)?;
    let fit = estimation::fit(&panel, &spec, None, &opts)?;
    warn(err, &fit.warnings);
    let json = ctx.write_json(&format!("fit_{}.json", spec.name), &fit)?;
    let csv = ctx.write_csv(&format!("fit_{}.csv", spec.name), &fit_csv(&fit))?;
    Ok(match ctx.format {
        Format::Json => json,
        Format::Csv => csv,
        Format::Table => ModelTable {
            columns: vec![estimation::ModelColumn {
                spec: spec.clone(),
                fit: Some(fit),
                error: None,
            }],
            best: Some(0),
        }
        .render(),
    })
}

fn cmd_forecast(ctx: &Ctx, err: &mut Vec<String>) -> Result<String> {
    let (panel, _) = ctx.load_panel()?;
    let fc = &ctx.cfg.forecast;
    let spec = ctx.cfg.spec(fc.spec.as_deref())?;
    let opts = ForecastOptions {
        fit: ctx.fit_options(),
        k_playoff: fc.k_playoff,
        mc_draws: fc.mc_draws,
        seed: ctx.meta.seeds["forecast"],
    };
    let search = forecast::lambda_grid_search(&panel, &spec, &fc.lambda_grid, fc.holdout, &opts)?;

    #[derive(Serialize)]
    struct Row<'a> {
        lambda: f64,
        aggregate: Option<&'a forecast::Aggregate>,
        error: Option<&'a str>,
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        spec: &'a str,
        holdout: usize,
        best_lambda: f64,
        grid: Vec<Row<'a>>,
    }
    for r in &search.results {
        let stem = format!("forecast_{}_lambda_{}", spec.name, r.lambda);
        match (&r.report, &r.error) {
            (Some(rep), _) => {
                ctx.write_json(&format!("{stem}.json"), rep)?;
                ctx.write_csv(&format!("{stem}.csv"), &rep.to_csv()?)?;
            }
            (None, Some(e)) => {
                err.push(format!("lambda {} failed: {e}", r.lambda));
            }
            (None, None) => {}
        }
    }
    let summary = Summary {
        spec: &spec.name,
        holdout: fc.holdout,
        best_lambda: search.best,
        grid: search
            .results
            .iter()
            .map(|r| Row {
                lambda: r.lambda,
                aggregate: r.report.as_ref().map(|x| &x.aggregate),
                error: r.error.as_deref(),
            })
            .collect(),
    };
    let json = ctx.write_json(&format!("forecast_{}_summary.json", spec.name), &summary)?;
    let mut csv = String::from("lambda,loglik,champion_prob,medal_prob,playoff_prob,mae,rmse,best\n");
    let mut table = format!(
        "{:>10}{:>12}{:>12}{:>12}{:>12}{:>10}{:>10}\n",
        "lambda", "loglik", "P[champ]", "P[medal]", "P[playoff]", "MAE", "RMSE"
    );
    for r in &search.results {
        let best = r.lambda == search.best;
        match &r.report {
            Some(rep) => {
                let a = &rep.aggregate;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{}",
                    fmt_f64(r.lambda),
                    fmt_f64(a.loglik),
                    fmt_f64(a.champion_prob),
                    fmt_f64(a.medal_prob),
                    fmt_f64(a.playoff_prob),
                    fmt_f64(a.mae),
                    fmt_f64(a.rmse),
                    best as u8
                );
                let _ = writeln!(
                    table,
                    "{:>10}{:>12.3}{:>12.3}{:>12.3}{:>12.3}{:>10.3}{:>10.3}{}",
                    r.lambda,
                    a.loglik,
                    a.champion_prob,
                    a.medal_prob,
                    a.playoff_prob,
                    a.mae,
                    a.rmse,
                    if best { "  <- best" } else { "" }
                );
            }
            None => {
                let _ = writeln!(csv, "{},,,,,,,0", fmt_f64(r.lambda));
                let _ = writeln!(table, "{:>10}  failed", r.lambda);
            }
        }
    }
    let csv = ctx.write_csv(&format!("forecast_{}_summary.csv", spec.name), &csv)?;
    Ok(match ctx.format {
        Format::Json => json,
        Format::Csv => csv,
        Format::Table => table,
    })
}

fn correlation_table(title: &str, r: &CorrelationReport) -> String {
    let mut s = format!("{title}\n{:>5}{:>8}{:>10}{:>10}{:>10}\n", "lag", "pairs", "estimate", "lo", "hi");
    let cell = |v: Option<f64>| v.map(|x| format!("{x:>10.3}")).unwrap_or_else(|| format!("{:>10}", "-"));
    for l in &r.lags {
        let _ = writeln!(
            s,
            "{:>5}{:>8}{}{}{}",
            l.lag,
            l.n_pairs,
            cell(l.estimate),
            cell(l.lower),
            cell(l.upper)
        );
    }
    s
}

fn cmd_diagnose(ctx: &Ctx) -> Result<String> {
    let (panel, _) = ctx.load_panel()?;
    let d = &ctx.cfg.diagnose;
    let opts = BootstrapOptions {
        replications: d.replications,
        seed: ctx.meta.seeds["bootstrap"],
        level: d.level,
        method: d.method,
    };
    let auto = diagnostics::rank_autocorrelation(&panel, &d.lags, &opts)?;
    let mut json = ctx.write_json("autocorrelation.json", &auto)?;
    let mut csv = ctx.write_csv("autocorrelation.csv", &auto.to_csv()?)?;
    let mut table = correlation_table("rank autocorrelation", &auto);

    let other = match (&d.cross_panel, &d.cross_tournament) {
        (Some(p), _) => Some(data_io::read_panel(&ctx.path(p))?),
        (None, Some(t)) => {
            let cfg = BuildConfig {
                tournament: t.clone(),
                predictors: Vec::new(),
                first_year: None,
                last_year: None,
                ..ctx.cfg.build.clone()
            };
            Some(ctx.build(&cfg)?.0)
        }
        (None, None) => None,
    };
    if let Some(other) = other {
        let cross = diagnostics::cross_correlation(&panel, &other, &d.cross_lags, &opts)?;
        json.push_str(&ctx.write_json("cross_correlation.json", &cross)?);
        csv.push_str(&ctx.write_csv("cross_correlation.csv", &cross.to_csv()?)?);
        table.push('\n');
        table.push_str(&correlation_table("cross-tournament correlation", &cross));
    }

    let matrix = diagnostics::predictor_rank_correlations(&panel, d.method);
    json.push_str(&ctx.write_json("predictor_correlations.json", &matrix)?);
    csv.push_str(&ctx.write_csv("predictor_correlations.csv", &matrix.to_csv()?)?);
    let _ = write!(table, "\ncorrelation with rank\n");
    for v in &matrix.variables[1..] {
        let c = matrix.get("rank", v).map(|x| format!("{x:.3}")).unwrap_or_else(|| "undefined".into());
        let _ = writeln!(table, "{v:<12}{c:>10}");
    }
    Ok(match ctx.format {
        Format::Json => json,
        Format::Csv => csv,
        Format::Table => table,
    })
}

fn cmd_profile(ctx: &Ctx, err: &mut Vec<String>) -> Result<String> {
    let grid = &ctx.cfg.profile.alpha_grid;
    if grid.is_empty() {
        return Err(Error::Usage("profile needs a non-empty --alpha-grid".into()));
    }
    if let Some(bad) = grid.iter().find(|a| !a.is_finite()) {
        return Err(Error::Usage(format!("grid value {bad} is not finite")));
    }
    let (panel, _) = ctx.load_panel()?;
    let spec = ctx.cfg.spec(ctx.cfg.profile.spec.as_deref())?;
    if !spec.include_dynamics {
        return Err(Error::Usage(format!("spec `{}` has no score coefficient", spec.name)));
    }
    let fit = estimation::fit(&panel, &spec, None, &ctx.fit_options())?;
    warn(err, &fit.warnings);
    let profile = estimation::profile_score_coefficient(&panel, &spec, &fit.coef, grid)?;
    let mut body = String::from("alpha,loglik\n");
    for (a, ll) in &profile {
        let _ = writeln!(body, "{},{}", fmt_f64(*a), fmt_f64(*ll));
    }
    let csv = ctx.write_csv(&format!("profile_{}.csv", spec.name), &body)?;
    #[derive(Serialize)]
    struct Profile<'a> {
        spec: &'a str,
        fitted_alpha: f64,
        fitted_loglik: f64,
        points: Vec<[f64; 2]>,
    }
    let json = ctx.write_json(
        &format!("profile_{}.json", spec.name),
        &Profile {
            spec: &spec.name,
            fitted_alpha: fit.coef.alpha,
            fitted_loglik: fit.loglik,
            points: profile.iter().map(|&(a, l)| [a, l]).collect(),
        },
    )?;
    Ok(match ctx.format {
        Format::Json => json,
        Format::Csv => csv,
        Format::Table => {
            let mut s = format!("fitted alpha {:.4}, log-likelihood {:.3}\n", fit.coef.alpha, fit.loglik);
            for (a, ll) in &profile {
                let _ = writeln!(s, "{a:>10.4}{ll:>14.4}");
            }
            s
        }
    })
}

fn cmd_simulate(ctx: &Ctx) -> Result<String> {
    let s = &ctx.cfg.simulate;
    if s.teams < 2 || s.editions == 0 {
        return Err(Error::Usage("simulation needs at least 2 teams and 1 edition".into()));
    }
    let cfg = SimulationConfig {
        n_editions: s.editions,
        coef: Coefficients {
            omega: sim::spread_omega(s.teams, s.spread),
            beta: s.beta.clone(),
            phi: s.phi,
            alpha: s.alpha,
        },
        predictor_sd: s.predictor_sd,
        participation: s.participation,
        cancellation: s.cancellation,
        first_label: s.first_label,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.meta.seeds["simulate"]);
    let simulated = sim::simulate_panel(&cfg, &mut rng)?;
    let meta = serde_json::to_value(&ctx.meta)?;
    let text = data_io::panel_to_json_with_meta(&simulated.panel, Some(meta))?;
    ctx.write("panel.json", &text)?;
    Ok(match ctx.format {
        Format::Json => text,
        _ => format!(
            "simulated {} editions of {} teams into {}\n",
            s.editions,
            s.teams,
            ctx.out_dir.join("panel.json").display()
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parses_with_defaults() {
        let cfg = RunConfig::from_toml(
            r#"
            seed = 7
            [data]
            results = "r.csv"
            [build]
            tournament = "WJC"
            [[specs]]
            name = "s"
            include_dynamics = false
            [fit]
            restarts = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.fit.restarts, 2);
        assert_eq!(cfg.fit.ftol_rel, 1e-9);
        assert_eq!(cfg.forecast.holdout, 16);
        assert_eq!(cfg.specs[0].lambda, 0.0);
        assert_eq!(cfg.seeds()["forecast"], 8);
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let err = RunConfig::from_toml("[fit]\nrestart = 2\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.digest(), b.digest());
        b.seed = Some(1);
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn empty_profile_grid_exits_two() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(["dynrank", "profile"], &mut out, &mut err);
        assert_eq!(code, 2, "{}", String::from_utf8_lossy(&err));
    }

    #[test]
    fn standard_families_have_unique_names() {
        let specs = standard_specs("WC");
        assert_eq!(specs.len(), 7);
        assert_eq!(specs[5].predictors.len(), 10);
    }
}
