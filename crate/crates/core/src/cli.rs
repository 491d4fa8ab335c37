//! Command-line front end.
//!
//! Flags take precedence over `PMBVS_*` environment variables, which take
//! precedence over entries of a `key = value` file given with `--config`.
//! Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::data::{load_csv_dataset, load_csv_table, read_header, write_csv, DataSet};
use crate::error::Error;
use crate::exec::Execution;
use crate::io::{self, RunManifest, RunSubset, StabilitySummary};
use crate::model::{CovarianceStructure, HyperParams, Mode, DEFAULT_IG_A, DEFAULT_IG_B};
use crate::predictor::{metrics, predict_rows, refit_with_report, Zone};
use crate::sampler::{run_chain_with, run_chains, ChainOptions, RunReport};
use crate::selection::{cw_rel, overlap_table, rank_counts, rank_selections, select_top, SelectionRule};
use crate::simgen::{generate, split_half_by_group, Preset, SimConfig};

pub const ENV_PREFIX: &str = "PMBVS_";

#[derive(Parser, Debug)]
#[command(
    name = "pmbvs",
    version,
    about = "Bayesian variable selection for probit mixed models"
)]
pub struct Cli {
    /// File of `key = value` lines used as defaults for the subcommand's flags.
    #[arg(long, global = true, env = "PMBVS_CONFIG")]
    pub config: Option<PathBuf>,
    /// Run everything on the calling thread.
    #[arg(long, global = true, env = "PMBVS_SEQUENTIAL")]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the sampler and write selection counts and a ranking.
    #[command(args_override_self = true)]
    Select(SelectArgs),
    /// Consistency of selected subsets across runs.
    #[command(args_override_self = true)]
    Stability(StabilityArgs),
    /// Generate a synthetic dataset with known support.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Fit a model on a fixed feature subset.
    #[command(args_override_self = true)]
    Refit(RefitArgs),
    /// Classify observations with a fitted model.
    #[command(args_override_self = true)]
    Predict(PredictArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Select(_) => "select",
            Command::Stability(_) => "stability",
            Command::Simulate(_) => "simulate",
            Command::Refit(_) => "refit",
            Command::Predict(_) => "predict",
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct ColumnArgs {
    /// Response column (0/1).
    #[arg(long, default_value = "y", env = "PMBVS_Y_COL")]
    pub y_col: String,
    /// Group column; required in mixed mode.
    #[arg(long, default_value = "group", env = "PMBVS_GROUP_COL")]
    pub group_col: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CovKind {
    General,
    Block,
    Diag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Mixed,
    Fixed,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Mixed => Mode::Mixed,
            ModeArg::Fixed => Mode::FixedEffectsOnly,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct SamplerArgs {
    /// g-prior scale.
    #[arg(long, default_value_t = 50.0, env = "PMBVS_C")]
    pub c: f64,
    /// Prior inclusion probability.
    #[arg(long, default_value_t = 0.5, env = "PMBVS_PI")]
    pub pi: f64,
    /// Features selected at every iteration.
    #[arg(long, default_value_t = 30, env = "PMBVS_NUM_SELECTED")]
    pub num_selected: usize,
    /// Components changed per proposal (even).
    #[arg(long, default_value_t = 10, env = "PMBVS_SWAP")]
    pub swap: usize,
    /// Metropolis-Hastings steps per Gibbs iteration.
    #[arg(long, default_value_t = 500, env = "PMBVS_MH_ITERS")]
    pub mh_iters: usize,
    #[arg(long, default_value_t = 60_000, env = "PMBVS_ITERS")]
    pub iters: usize,
    #[arg(long, default_value_t = 30_000, env = "PMBVS_BURNIN")]
    pub burnin: usize,
    /// Random-effect covariance structure.
    #[arg(long, value_enum, default_value_t = CovKind::Diag, env = "PMBVS_COV")]
    pub cov: CovKind,
    /// Inverse-Wishart scale: psi times the identity.
    #[arg(long, default_value_t = 1.0, env = "PMBVS_IW_PSI")]
    pub iw_psi: f64,
    /// Inverse-Wishart degrees of freedom; defaults to the block dimension.
    #[arg(long, env = "PMBVS_IW_M")]
    pub iw_m: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_IG_A, env = "PMBVS_IG_A")]
    pub ig_a: f64,
    #[arg(long, default_value_t = DEFAULT_IG_B, env = "PMBVS_IG_B")]
    pub ig_b: f64,
    /// Random-effect block sizes for block or diag covariance, e.g. 2,2.
    #[arg(long, value_delimiter = ',', env = "PMBVS_BLOCK_SIZES")]
    pub block_sizes: Vec<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Mixed, env = "PMBVS_MODE")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0, env = "PMBVS_SEED")]
    pub seed: u64,
}

impl SamplerArgs {
    /// Hyperparameters for a dataset with `q` random-effect columns.
    pub fn hyper_params(&self, q: usize) -> Result<HyperParams, Failure> {
        let mode = Mode::from(self.mode);
        let cov = match (mode, q) {
            (Mode::FixedEffectsOnly, _) | (_, 0) => None,
            (Mode::Mixed, q) => {
                let sizes = if self.block_sizes.is_empty() {
                    vec![q]
                } else {
                    self.block_sizes.clone()
                };
                Some(match self.cov {
                    CovKind::General => CovarianceStructure::general(
                        &(nalgebra::DMatrix::identity(q, q) * self.iw_psi),
                        self.iw_m.unwrap_or(q as f64),
                    ),
                    CovKind::Block => {
                        let m = self
                            .iw_m
                            .unwrap_or_else(|| *sizes.iter().max().unwrap_or(&q) as f64);
                        CovarianceStructure::block_diagonal(self.iw_psi, m, &sizes)
                    }
                    CovKind::Diag => CovarianceStructure::diagonal(self.ig_a, self.ig_b, &sizes),
                })
            }
        };
        let hp = HyperParams {
            c: self.c,
            pi: self.pi,
            d: self.num_selected,
            r: self.swap,
            k: self.mh_iters,
            total_iters: self.iters,
            burn_in: self.burnin,
            seed: self.seed,
            mode,
            cov,
        };
        hp.validate().map_err(|e| Failure::Usage(e.to_string()))?;
        Ok(hp)
    }

    /// Data-independent checks, run before any file is read.
    pub fn check(&self) -> Result<(), Failure> {
        self.hyper_params(0).map(|_| ())
    }

    fn record(&self, m: &mut RunManifest) {
        m.seed = Some(self.seed);
        m.set("c", self.c);
        m.set("pi", self.pi);
        m.set("num-selected", self.num_selected);
        m.set("swap", self.swap);
        m.set("mh-iters", self.mh_iters);
        m.set("iters", self.iters);
        m.set("burnin", self.burnin);
        m.set("cov", format!("{:?}", self.cov).to_lowercase());
        m.set("iw-psi", self.iw_psi);
        m.set("iw-m", self.iw_m.map(|v| v.to_string()).unwrap_or_default());
        m.set("ig-a", self.ig_a);
        m.set("ig-b", self.ig_b);
        m.set("block-sizes", join(&self.block_sizes));
        m.set("mode", format!("{:?}", self.mode).to_lowercase());
    }
}

#[derive(Args, Debug, Clone)]
pub struct SelectArgs {
    /// Training CSV.
    #[arg(long, env = "PMBVS_DATA")]
    pub data: PathBuf,
    /// Directory for report.json, ranking.csv and selection_counts.csv.
    #[arg(long, env = "PMBVS_OUT_DIR")]
    pub out_dir: PathBuf,
    /// Scale every feature to mean 0 and unit variance first.
    #[arg(long, env = "PMBVS_STANDARDIZE")]
    pub standardize: bool,
    /// Keep per-iteration diagnostics in the report.
    #[arg(long, env = "PMBVS_TRACES")]
    pub traces: bool,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Args, Debug, Clone)]
#[command(group(ArgGroup::new("rule").required(true).args(["top_k", "min_count"])))]
pub struct StabilityArgs {
    /// Report JSON files or ranking / selection-count CSV files.
    pub runs: Vec<PathBuf>,
    /// Run the sampler once per value, e.g. c=10,50,100,1000. Repeat to
    /// sweep a grid.
    #[arg(long, value_name = "KEY=V1,V2,...")]
    pub sweep: Vec<String>,
    /// Training CSV for sweep runs.
    #[arg(long, env = "PMBVS_DATA")]
    pub data: Option<PathBuf>,
    /// Keep the k most frequently selected features of each run.
    #[arg(long, env = "PMBVS_TOP_K")]
    pub top_k: Option<usize>,
    /// Keep features selected at least this many times.
    #[arg(long, env = "PMBVS_MIN_COUNT")]
    pub min_count: Option<u64>,
    /// Directory for stability.json and overlap.csv.
    #[arg(long, env = "PMBVS_OUT_DIR")]
    pub out_dir: PathBuf,
    #[arg(long, env = "PMBVS_STANDARDIZE")]
    pub standardize: bool,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    /// Random-effect preset, U1 to U5.
    #[arg(long, default_value = "U1", env = "PMBVS_PRESET")]
    pub preset: String,
    /// Explicit offsets for the four groups, overriding the preset.
    #[arg(
        long,
        value_delimiter = ',',
        allow_negative_numbers = true,
        env = "PMBVS_U_LEVELS"
    )]
    pub u_levels: Vec<f64>,
    #[arg(long, default_value_t = 200, env = "PMBVS_N")]
    pub n: usize,
    /// Number of features; 200 by default, 1000 with --full-scale.
    #[arg(long, env = "PMBVS_P")]
    pub p: Option<usize>,
    #[arg(long, env = "PMBVS_FULL_SCALE")]
    pub full_scale: bool,
    #[arg(long, default_value_t = 0, env = "PMBVS_SEED")]
    pub seed: u64,
    /// Also write train.csv and validation.csv, half of each group apiece.
    #[arg(long, env = "PMBVS_SPLIT")]
    pub split: bool,
    /// Seed of the split; defaults to --seed.
    #[arg(long, env = "PMBVS_SPLIT_SEED")]
    pub split_seed: Option<u64>,
    /// Directory for data.csv and truth.json.
    #[arg(long, env = "PMBVS_OUT_DIR")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug, Clone)]
#[command(group(ArgGroup::new("source").required(true).args(["features", "from_run"])))]
pub struct RefitArgs {
    #[arg(long, env = "PMBVS_DATA")]
    pub data: PathBuf,
    /// Comma-separated feature names.
    #[arg(long, value_delimiter = ',')]
    pub features: Vec<String>,
    /// Take the top features of a select run (report JSON or counts CSV).
    #[arg(long, requires = "top_k")]
    pub from_run: Option<PathBuf>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Model JSON to write.
    #[arg(long, env = "PMBVS_OUT")]
    pub out: PathBuf,
    #[command(flatten)]
    pub columns: ColumnArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    /// Model JSON written by `refit`.
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with the model's features; the response column is optional.
    #[arg(long, env = "PMBVS_DATA")]
    pub data: PathBuf,
    /// Predictions CSV to write.
    #[arg(long, env = "PMBVS_OUT")]
    pub out: PathBuf,
    /// Probability band with no label, e.g. 0.1,0.9.
    #[arg(long, env = "PMBVS_ZONE")]
    pub zone: Option<String>,
    /// Ignore group labels and predict from the fixed part only.
    #[arg(long, env = "PMBVS_NO_RANDOM_EFFECTS")]
    pub no_random_effects: bool,
    /// Also write confusion counts as JSON when the response is present.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[command(flatten)]
    pub columns: ColumnArgs,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidHyperParams(m) => Failure::Usage(format!("invalid hyperparameters: {m}")),
            other => Failure::Runtime(other),
        }
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// `PMBVS_NUM_SELECTED` for `num-selected`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_uppercase().replace('-', "_"))
}

/// Flags from a `key = value` file. `true` and `false` switch boolean
/// flags; keys already set through the environment are skipped.
pub fn config_flags(text: &str, path: &Path) -> Result<Vec<OsString>, Failure> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        let (key, value) = (key.trim().trim_start_matches("--"), value.trim());
        if key.is_empty() {
            return Err(Failure::Usage(format!("{}:{}: empty key", path.display(), n + 1)));
        }
        if std::env::var_os(env_name(key)).is_some() {
            continue;
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => out.push(format!("--{key}={value}").into()),
        }
    }
    Ok(out)
}

fn clap_failure(e: clap::Error) -> Failure {
    Failure::Usage(e.render().to_string())
}

/// Parse arguments, folding in the config file when one is named.
pub fn parse_args(args: Vec<OsString>) -> Result<Cli, Failure> {
    let first = parse_plain(&args)?;
    let Some(config) = &first.config else {
        return Ok(first);
    };
    let text = fs::read_to_string(config).map_err(|e| Failure::Runtime(Error::io(config, e)))?;
    let injected = config_flags(&text, config)?;
    let name = first.command.name();
    let pos = args
        .iter()
        .enumerate()
        .skip(1)
        .find(|(i, a)| *a == name && args[i - 1] != "--config")
        .map(|(i, _)| i)
        .ok_or_else(|| Failure::Usage("cannot locate the subcommand".into()))?;
    let mut merged = args[..=pos].to_vec();
    merged.extend(injected);
    merged.extend_from_slice(&args[pos + 1..]);
    parse_plain(&merged)
}

fn parse_plain(args: &[OsString]) -> Result<Cli, Failure> {
    let matches = Cli::command().try_get_matches_from(args).map_err(clap_failure)?;
    Cli::from_arg_matches(&matches).map_err(clap_failure)
}

/// Run the command line and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    // Help and version go to stdout with status 0.
    if let Err(e) = Cli::command().try_get_matches_from(&args) {
        if !e.use_stderr() {
            let _ = e.print();
            return 0;
        }
    }
    match parse_args(args).and_then(|cli| dispatch(&cli)) {
        Ok(()) => 0,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("{}", m.trim_end()),
                Failure::Runtime(e) => eprintln!("error: {e}"),
            }
            f.exit_code()
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<(), Failure> {
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match &cli.command {
        Command::Select(a) => cmd_select(a, exec),
        Command::Stability(a) => cmd_stability(a, exec),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Refit(a) => cmd_refit(a, exec),
        Command::Predict(a) => cmd_predict(a, exec),
    }
}

/// Load training data; the group column is optional in fixed-effects mode.
fn load_training(
    path: &Path,
    columns: &ColumnArgs,
    mode: ModeArg,
    standardize: bool,
) -> Result<DataSet, Failure> {
    let header = read_header(path)?;
    let group = match mode {
        ModeArg::Fixed if !header.contains(&columns.group_col) => None,
        _ => Some(columns.group_col.as_str()),
    };
    let data = load_csv_dataset(path, &columns.y_col, group)?;
    Ok(if standardize { data.standardized() } else { data })
}

fn record_columns(m: &mut RunManifest, columns: &ColumnArgs) {
    m.set("y-col", &columns.y_col);
    m.set("group-col", &columns.group_col);
}

pub const REPORT_FILE: &str = "report.json";
pub const RANKING_FILE: &str = "ranking.csv";
pub const COUNTS_FILE: &str = "selection_counts.csv";

pub fn cmd_select(a: &SelectArgs, exec: Execution) -> Result<(), Failure> {
    a.sampler.check()?;
    let data = load_training(&a.data, &a.columns, a.sampler.mode, a.standardize)?;
    let hp = a.sampler.hyper_params(data.q())?;
    hp.validate_for(&data)?;
    let mut manifest = RunManifest::new("select");
    a.sampler.record(&mut manifest);
    record_columns(&mut manifest, &a.columns);
    manifest.set("standardize", a.standardize);
    manifest.set("traces", a.traces);
    manifest.add_input("data", &a.data)?;
    let paths = [REPORT_FILE, RANKING_FILE, COUNTS_FILE].map(|f| a.out_dir.join(f));
    manifest.outputs = paths.to_vec();

    let opts = ChainOptions {
        exec,
        record_traces: a.traces,
        ..ChainOptions::default()
    };
    let report = run_chain_with(&data, &hp, None, &opts, |_, _| {})?.report;
    let digest = manifest.digest();
    let ranking = rank_selections(&report)?;
    io::write_report(&paths[0], &report, &manifest)?;
    io::write_ranking(&paths[1], &ranking, &report, &digest)?;
    io::write_selection_counts(&paths[2], &report, &digest)?;

    println!(
        "{} kept iterations, MH acceptance {:.4}, {:.1}s",
        report.kept, report.mh_accept_rate, report.wall_time_secs
    );
    for (i, r) in ranking.ranked.iter().take(10).enumerate() {
        println!(
            "{:>3}  {:<24} {:>8}  {:.4}",
            i + 1,
            r.feature,
            r.count,
            r.frequency
        );
    }
    if let Some((cut, gap)) = ranking.max_gap() {
        println!("largest count gap ({gap}) after rank {cut}");
    }
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

/// Apply `key=value` to a copy of `hp`.
fn apply_sweep_value(hp: &HyperParams, key: &str, value: &str) -> Result<HyperParams, Failure> {
    let bad = || Failure::Usage(format!("bad sweep value {key}={value}"));
    let mut out = hp.clone();
    match key {
        "c" => out.c = value.parse().map_err(|_| bad())?,
        "pi" => out.pi = value.parse().map_err(|_| bad())?,
        "num-selected" => out.d = value.parse().map_err(|_| bad())?,
        "swap" => out.r = value.parse().map_err(|_| bad())?,
        "mh-iters" => out.k = value.parse().map_err(|_| bad())?,
        "iters" => out.total_iters = value.parse().map_err(|_| bad())?,
        "burnin" => out.burn_in = value.parse().map_err(|_| bad())?,
        "seed" => out.seed = value.parse().map_err(|_| bad())?,
        _ => {
            return Err(Failure::Usage(format!(
                "cannot sweep {key:?}; use c, pi, num-selected, swap, mh-iters, iters, burnin or seed"
            )))
        }
    }
    out.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(out)
}

/// Grid of configurations and their labels from `--sweep` specs.
pub fn expand_sweep(base: &HyperParams, specs: &[String]) -> Result<Vec<(String, HyperParams)>, Failure> {
    let mut grid = vec![(String::new(), base.clone())];
    for spec in specs {
        let (key, values) = spec
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("sweep {spec:?} is not key=v1,v2,...")))?;
        let key = key.trim();
        let values: Vec<&str> = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(Failure::Usage(format!("sweep {key} has no values")));
        }
        let mut next = Vec::with_capacity(grid.len() * values.len());
        for (label, hp) in &grid {
            for v in &values {
                let label = if label.is_empty() {
                    format!("{key}={v}")
                } else {
                    format!("{label} {key}={v}")
                };
                next.push((label, apply_sweep_value(hp, key, v)?));
            }
        }
        grid = next;
    }
    Ok(grid)
}

pub const STABILITY_FILE: &str = "stability.json";
pub const OVERLAP_FILE: &str = "overlap.csv";

pub fn cmd_stability(a: &StabilityArgs, exec: Execution) -> Result<(), Failure> {
    let rule = match (a.top_k, a.min_count) {
        (Some(k), None) => SelectionRule::TopK(k),
        (None, Some(t)) => SelectionRule::MinCount(t),
        _ => {
            return Err(Failure::Usage(
                "give exactly one of --top-k or --min-count".into(),
            ))
        }
    };
    a.sampler.check()?;
    let mut manifest = RunManifest::new("stability");
    manifest.set("rule", format!("{rule:?}"));
    let mut runs: Vec<(String, Vec<String>, Vec<u64>, usize)> = Vec::new();
    for path in &a.runs {
        manifest.add_input("run", path)?;
        let (names, counts, kept) = io::read_run_counts(path)?;
        runs.push((path.display().to_string(), names, counts, kept));
    }
    if !a.sweep.is_empty() {
        let data_path = a
            .data
            .as_ref()
            .ok_or_else(|| Failure::Usage("--sweep needs --data".into()))?;
        let data = load_training(data_path, &a.columns, a.sampler.mode, a.standardize)?;
        let base = a.sampler.hyper_params(data.q())?;
        let grid = expand_sweep(&base, &a.sweep)?;
        for (_, hp) in &grid {
            hp.validate_for(&data)?;
        }
        a.sampler.record(&mut manifest);
        record_columns(&mut manifest, &a.columns);
        manifest.set("standardize", a.standardize);
        manifest.set("sweep", a.sweep.join(";"));
        manifest.add_input("data", data_path)?;
        let configs: Vec<HyperParams> = grid.iter().map(|(_, hp)| hp.clone()).collect();
        let reports = run_chains(&data, &configs, exec);
        let run_dir = a.out_dir.join("runs");
        for (i, ((label, _), report)) in grid.iter().zip(reports).enumerate() {
            let report: RunReport = report?;
            let mut run_manifest = manifest.clone();
            run_manifest.command = "stability-run".into();
            run_manifest.set("run", i + 1);
            run_manifest.set("run-settings", label);
            let path = run_dir.join(format!("run-{:03}.json", i + 1));
            run_manifest.outputs = vec![path.clone()];
            io::write_report(&path, &report, &run_manifest)?;
            runs.push((
                label.clone(),
                report.feature_names,
                report.selection_counts,
                report.kept,
            ));
        }
    }
    if runs.len() < 2 {
        return Err(Failure::Usage(format!(
            "stability needs at least 2 runs, got {}",
            runs.len()
        )));
    }
    let names = runs[0].1.clone();
    let index: std::collections::HashMap<&str, usize> =
        names.iter().enumerate().map(|(j, n)| (n.as_str(), j)).collect();
    let mut subsets = Vec::with_capacity(runs.len());
    let mut listed = Vec::with_capacity(runs.len());
    for (label, run_names, counts, kept) in &runs {
        // Runs may list features in any order; align them with the first.
        let mut aligned = vec![None; names.len()];
        for (name, &count) in run_names.iter().zip(counts) {
            match index.get(name.as_str()) {
                Some(&j) if aligned[j].is_none() => aligned[j] = Some(count),
                _ => aligned = Vec::new(),
            }
        }
        let aligned: Option<Vec<u64>> = aligned.into_iter().collect();
        let Some(aligned) = aligned.filter(|a| a.len() == names.len() && run_names.len() == names.len())
        else {
            return Err(Failure::Runtime(Error::InvalidData(format!(
                "run {label} does not cover the same features as {}",
                runs[0].0
            ))));
        };
        let ranking = rank_counts(&names, &aligned, *kept)?;
        let chosen = select_top(&ranking, rule)?;
        listed.push(RunSubset {
            run: label.clone(),
            features: chosen.iter().map(|&j| names[j].clone()).collect(),
        });
        subsets.push(chosen.into_iter().collect::<BTreeSet<usize>>());
    }
    let value = cw_rel(&subsets, names.len())?;
    let summary_path = a.out_dir.join(STABILITY_FILE);
    let overlap_path = a.out_dir.join(OVERLAP_FILE);
    manifest.outputs = vec![summary_path.clone(), overlap_path.clone()];
    let digest = manifest.digest();
    let overlap: Vec<(String, usize)> = overlap_table(&subsets)
        .into_iter()
        .map(|(j, n)| (names[j].clone(), n))
        .collect();
    io::write_stability(
        &summary_path,
        &StabilitySummary {
            manifest_digest: digest.clone(),
            manifest,
            p_total: names.len(),
            runs: runs.len(),
            cw_rel: value,
            subsets: listed,
        },
    )?;
    io::write_overlap(&overlap_path, &overlap, &digest)?;
    println!(
        "CW_rel = {value:.6} over {} runs of {} features",
        runs.len(),
        names.len()
    );
    for (f, n) in overlap.iter().take(10) {
        println!("{f:<24} {n}/{}", runs.len());
    }
    Ok(())
}

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const TRAIN_FILE: &str = "train.csv";
pub const VALIDATION_FILE: &str = "validation.csv";

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let preset = Preset::parse(&a.preset).map_err(|e| Failure::Usage(e.to_string()))?;
    let p = a.p.unwrap_or(if a.full_scale { 1000 } else { 200 });
    let mut config = SimConfig::preset(preset, a.n, p, a.seed).map_err(|e| Failure::Usage(e.to_string()))?;
    if !a.u_levels.is_empty() {
        config.u_levels = a.u_levels.clone();
    }
    config.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut manifest = RunManifest::new("simulate");
    manifest.seed = Some(a.seed);
    manifest.set("n", a.n);
    manifest.set("p", p);
    manifest.set("u-levels", join(&config.u_levels));
    manifest.set("split", a.split);
    manifest.set("split-seed", a.split_seed.unwrap_or(a.seed));
    let (data, truth) = generate(&config)?;
    let data_path = a.out_dir.join(DATA_FILE);
    let truth_path = a.out_dir.join(TRUTH_FILE);
    manifest.outputs = vec![data_path.clone(), truth_path.clone()];
    let split = if a.split {
        let parts = split_half_by_group(&data, a.split_seed.unwrap_or(a.seed))?;
        manifest.outputs.push(a.out_dir.join(TRAIN_FILE));
        manifest.outputs.push(a.out_dir.join(VALIDATION_FILE));
        Some(parts)
    } else {
        None
    };
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let comment = format!("{}{}", io::MANIFEST_PREFIX, manifest.digest());
    write_csv(&data, &data_path, Some(&comment))?;
    io::write_truth(&truth_path, &truth, &manifest)?;
    if let Some((train, val)) = split {
        write_csv(&train, &a.out_dir.join(TRAIN_FILE), Some(&comment))?;
        write_csv(&val, &a.out_dir.join(VALIDATION_FILE), Some(&comment))?;
    }
    println!(
        "{} rows, {} features, support {}",
        data.n(),
        data.p(),
        truth.support_names.join(",")
    );
    println!("wrote {}", a.out_dir.display());
    Ok(())
}

pub fn cmd_refit(a: &RefitArgs, exec: Execution) -> Result<(), Failure> {
    a.sampler.check()?;
    let mut manifest = RunManifest::new("refit");
    let features = match (&a.from_run, a.top_k) {
        (Some(run), Some(k)) => {
            manifest.add_input("run", run)?;
            manifest.set("top-k", k);
            let (names, counts, kept) = io::read_run_counts(run)?;
            let ranking = rank_counts(&names, &counts, kept)?;
            select_top(&ranking, SelectionRule::TopK(k))?
                .into_iter()
                .map(|j| names[j].clone())
                .collect()
        }
        _ => a.features.clone(),
    };
    if features.is_empty() {
        return Err(Failure::Usage("no features given".into()));
    }
    let data = load_training(&a.data, &a.columns, a.sampler.mode, false)?;
    let hp = a.sampler.hyper_params(data.q())?;
    a.sampler.record(&mut manifest);
    record_columns(&mut manifest, &a.columns);
    manifest.set("features", features.join(","));
    manifest.add_input("data", &a.data)?;
    manifest.outputs = vec![a.out.clone()];
    let (model, report) = refit_with_report(&data, &features, &hp, exec)?;
    io::write_model(&a.out, &model, &manifest)?;
    println!("{} kept iterations", report.kept);
    let names = std::iter::once("(Intercept)".to_string()).chain(model.features.iter().cloned());
    for (name, b) in names.zip(&model.beta_hat) {
        println!("{name:<24} {b:>10.4}");
    }
    for (g, u) in &model.u_hat {
        println!("group {g:<18} {u:>10.4}");
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn parse_zone(s: &str) -> Result<Zone, Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let nums: Option<Vec<f64>> = parts.iter().map(|p| p.parse().ok()).collect();
    match nums.as_deref() {
        Some(&[lo, hi]) => Zone::new(lo, hi).map_err(|e| Failure::Usage(e.to_string())),
        _ => Err(Failure::Usage(format!("--zone expects lo,hi, got {s:?}"))),
    }
}

pub fn cmd_predict(a: &PredictArgs, exec: Execution) -> Result<(), Failure> {
    let zone = a.zone.as_deref().map(parse_zone).transpose()?;
    let model_file = io::read_model(&a.model)?;
    let header = read_header(&a.data)?;
    let y_col = header
        .contains(&a.columns.y_col)
        .then_some(a.columns.y_col.as_str());
    let g_col = header
        .contains(&a.columns.group_col)
        .then_some(a.columns.group_col.as_str());
    let table = load_csv_table(&a.data, y_col, g_col)?;
    let mut manifest = RunManifest::new("predict");
    manifest.add_input("model", &a.model)?;
    manifest.add_input("data", &a.data)?;
    record_columns(&mut manifest, &a.columns);
    manifest.set("zone", a.zone.clone().unwrap_or_default());
    manifest.set("no-random-effects", a.no_random_effects);
    manifest.outputs = std::iter::once(a.out.clone()).chain(a.metrics.clone()).collect();
    let groups = table.group_labels.as_deref().filter(|_| !a.no_random_effects);
    let preds = predict_rows(
        &model_file.model,
        &table.x,
        &table.feature_names,
        groups,
        zone,
        exec,
    )?;
    let digest = manifest.digest();
    io::write_predictions(
        &a.out,
        &preds,
        table.group_labels.as_deref(),
        table.y.as_deref(),
        &digest,
    )?;
    if let Some(y) = &table.y {
        let m = metrics(&preds, y);
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "misclassified {} of {}, undetermined {} ({:.1}%), sensitivity {}, specificity {}",
            m.misclassified,
            m.n,
            m.undetermined,
            100.0 * m.undetermined_fraction,
            fmt(m.sensitivity),
            fmt(m.specificity)
        );
        if let Some(path) = &a.metrics {
            let mut bytes = serde_json::to_vec_pretty(&m).map_err(Error::from)?;
            bytes.push(b'\n');
            io::write_atomic(path, &bytes)?;
        }
    }
    println!("wrote {}", a.out.display());
    Ok(())
}
