//! Command implementations behind the `ghost2` binary.
//!
//! Every command reads settings from flags, an optional TOML file
//! (`--config`, flags win) and built-in defaults, writes only inside
//! `--out`, and is deterministic given `--seed`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ghost2_core::dataset::{load_csv, normalize, time_split, write_csv, CsvSchema, WarningDataset};
use ghost2_core::evaluation::{run_cells, results_csv, AblationTable, AucMode, Cell, EvalOptions, EvalReport, Family, MedianPolicy, Recipe, TreatmentId};
use ghost2_core::landscape::{landscape_pair, smooth_stability, DEFAULT_ALPHA, DEFAULT_GRID};
use ghost2_core::learners::TrainOptions;
use ghost2_core::synthetic;
use ghost2_core::treatments::TreatmentPlan;
use ghost2_core::tuner::DodgeParams;
use serde::Deserialize;

/// Exit status for a run with failed cells.
pub const EXIT_CELL_ERROR: u8 = 1;
/// Exit status for unusable configuration or input data.
pub const EXIT_CONFIG_ERROR: u8 = 2;

/// An error in the configuration or the input data.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Maps a command error to its exit status.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        EXIT_CONFIG_ERROR
    } else {
        EXIT_CELL_ERROR
    }
}

#[derive(Debug, Parser)]
#[command(name = "ghost2", version, about = "Warning triage with treated training data and tuned learners")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run treatments (or a custom plan) on every project and seed.
    Run(RunArgs),
    /// Run the ablation grid and render the per-metric report.
    Ablate(AblateArgs),
    /// Slice the loss surface before and after treatment.
    Landscape(LandscapeArgs),
    /// Measure how stable SMOOTH's leaf medians are across reruns.
    Stability(StabilityArgs),
    /// Write the synthetic benchmark dataset as CSV.
    Synth(SynthArgs),
}

/// Flags shared by every data-driven command.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// A CSV file or a directory of `*.csv` files, one project each.
    #[arg(long, env = "GHOST2_DATA")]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seed: Option<Vec<u64>>,
    /// Fraction of rows (oldest first) used for training.
    #[arg(long)]
    pub split: Option<f64>,
    /// DODGE evaluations per tuned learner.
    #[arg(long)]
    pub budget: Option<usize>,
    /// DODGE tabu radius.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Skip failing treatment steps instead of failing the cell.
    #[arg(long)]
    pub lenient: bool,
    /// Network training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// AUC from `scores` or hard `labels`.
    #[arg(long)]
    pub auc_mode: Option<String>,
    /// TOML file with defaults for any of these settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Treatment ids, comma separated (default A1).
    #[arg(long, alias = "treatments", value_delimiter = ',')]
    pub treatment: Option<Vec<String>>,
    /// Custom plan such as `smooth>smote>ghost+dodge`, run instead of the
    /// named treatments.
    #[arg(long, conflicts_with = "treatment")]
    pub plan: Option<String>,
    /// Learner family for `--plan`: `ffnet` or `traditional`.
    #[arg(long, requires = "plan")]
    pub family: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Restrict the grid to these treatment ids.
    #[arg(long, alias = "treatment", value_delimiter = ',')]
    pub treatments: Option<Vec<String>>,
    /// Even-count medians: `lower` middle value or `mean` of the middles.
    #[arg(long)]
    pub median: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LandscapeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Treatment whose plan is applied (default A1).
    #[arg(long)]
    pub treatment: Option<String>,
    /// Custom plan, used instead of `--treatment`.
    #[arg(long, conflicts_with = "treatment")]
    pub plan: Option<String>,
    /// Grid resolution per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Half-width of the sliced square.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Also write grayscale SVG heatmaps named `<project>-before-<NAME>`
    /// and `<project>-after-<NAME>` inside `--out`.
    #[arg(long)]
    pub svg: Option<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// SMOOTH reruns.
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = synthetic::BENCHMARK_ROWS)]
    pub rows: usize,
    #[arg(long, default_value_t = synthetic::BENCHMARK_MINORITY)]
    pub minority: f64,
    #[arg(long, default_value_t = synthetic::BENCHMARK_SIGMA)]
    pub sigma: f64,
    /// Generator seed.
    #[arg(long, default_value_t = synthetic::BENCHMARK_SEED)]
    pub seed: u64,
}

/// Settings a `--config` TOML file may provide.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub split: Option<f64>,
    pub budget: Option<usize>,
    pub epsilon: Option<f64>,
    pub jobs: Option<usize>,
    pub lenient: Option<bool>,
    pub epochs: Option<usize>,
    pub auc_mode: Option<String>,
    pub treatments: Option<Vec<String>>,
    pub plan: Option<String>,
    pub family: Option<String>,
    pub median: Option<String>,
    pub grid: Option<usize>,
    pub alpha: Option<f64>,
    pub repeats: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_err(format!("bad config {}: {e}", path.display())))
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub split: f64,
    pub jobs: Option<usize>,
    pub eval: EvalOptions,
}

pub const DEFAULT_OUT: &str = "ghost2-out";
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_SPLIT: f64 = 0.8;
pub const DEFAULT_REPEATS: usize = 20;

impl RunConfig {
    /// Flags override the file, which overrides the defaults.
    pub fn resolve(args: &CommonArgs, file: &FileConfig) -> Result<Self> {
        let split = args.split.or(file.split).unwrap_or(DEFAULT_SPLIT);
        if !(split > 0.0 && split < 1.0) {
            return Err(config_err(format!("--split {split} must be in (0, 1)")));
        }
        let dodge = DodgeParams {
            budget: args.budget.or(file.budget).unwrap_or(DodgeParams::default().budget),
            epsilon: args.epsilon.or(file.epsilon).unwrap_or(DodgeParams::default().epsilon),
        };
        dodge.validate().map_err(|e| config_err(e.to_string()))?;
        let mut train = TrainOptions::default();
        if let Some(e) = args.epochs.or(file.epochs) {
            if e == 0 {
                return Err(config_err("--epochs must be at least 1"));
            }
            train.epochs = e;
        }
        let auc_mode = match args.auc_mode.as_ref().or(file.auc_mode.as_ref()) {
            Some(m) => m.parse::<AucMode>().map_err(|e| config_err(e.to_string()))?,
            None => AucMode::default(),
        };
        let seeds = args.seed.clone().or_else(|| file.seeds.clone()).unwrap_or_else(|| vec![DEFAULT_SEED]);
        if seeds.is_empty() {
            return Err(config_err("at least one seed is required"));
        }
        let jobs = args.jobs.or(file.jobs);
        if jobs == Some(0) {
            return Err(config_err("--jobs must be at least 1"));
        }
        Ok(Self {
            data: args.data.clone().or_else(|| file.data.clone()),
            out: args.out.clone().or_else(|| file.out.clone()).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            seeds,
            split,
            jobs,
            eval: EvalOptions {
                dodge,
                train,
                auc_mode,
                lenient: args.lenient || file.lenient.unwrap_or(false),
            },
        })
    }
}

fn load_file_config(args: &CommonArgs) -> Result<FileConfig> {
    match &args.config {
        Some(p) => FileConfig::load(p),
        None => Ok(FileConfig::default()),
    }
}

/// Loads one project per CSV; the project name is the file stem. A
/// directory contributes its `*.csv` files in name order.
pub fn load_projects(path: &Path) -> Result<Vec<WarningDataset>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        v.sort();
        v
    } else if path.is_file() {
        vec![path.to_path_buf()]
    } else {
        return Err(config_err(format!("data path {} does not exist", path.display())));
    };
    if files.is_empty() {
        return Err(config_err(format!("no *.csv files in {}", path.display())));
    }
    files
        .iter()
        .map(|f| {
            let mut d = load_csv(f, &CsvSchema::default()).map_err(|e| config_err(format!("{}: {e}", f.display())))?;
            if let Some(stem) = f.file_stem() {
                d.project = stem.to_string_lossy().into_owned();
            }
            Ok(d)
        })
        .collect()
}

fn require_data(cfg: &RunConfig) -> Result<Vec<WarningDataset>> {
    match &cfg.data {
        Some(p) => load_projects(p),
        None => Err(config_err("no data: pass --data or set GHOST2_DATA")),
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| config_err(format!("cannot create {}: {e}", dir.display())))
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        b = b.num_threads(n);
    }
    let pool = b.build().context("cannot start worker pool")?;
    Ok(pool.install(f))
}

fn parse_treatments(names: &[String]) -> Result<Vec<TreatmentId>> {
    names.iter().map(|n| n.parse::<TreatmentId>().map_err(|e| config_err(e.to_string()))).collect()
}

fn parse_family(name: Option<&str>) -> Result<Family> {
    match name.unwrap_or("ffnet") {
        "ffnet" | "feedforward" => Ok(Family::FeedForward),
        "traditional" | "T" => Ok(Family::Traditional),
        other => Err(config_err(format!("unknown learner family `{other}`"))),
    }
}

fn parse_plan(text: &str) -> Result<TreatmentPlan> {
    text.parse::<TreatmentPlan>().map_err(|e| config_err(e.to_string()))
}

/// Writes results, report and tuning logs; returns the exit status.
fn write_results(out: &Path, reports: &[EvalReport], median: MedianPolicy) -> Result<u8> {
    fs::write(out.join("results.csv"), results_csv(reports))?;
    let table = AblationTable::build(reports, "A1", median);
    let report = table.render();
    fs::write(out.join("report.md"), &report)?;
    print!("{report}");
    let logs = out.join("logs");
    for r in reports {
        for (kind, csv) in &r.tuning_logs {
            fs::create_dir_all(&logs)?;
            fs::write(logs.join(format!("{}_{}_{}_{}.csv", r.project, r.treatment, r.seed, kind)), csv)?;
        }
    }
    let failed = reports.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", reports.len());
        return Ok(EXIT_CELL_ERROR);
    }
    Ok(0)
}

fn grid_cells(datasets: &[WarningDataset], recipes: &[(String, Recipe)], seeds: &[u64]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for d in 0..datasets.len() {
        for (name, recipe) in recipes {
            for &s in seeds {
                cells.push(Cell {
                    dataset: d,
                    name: name.clone(),
                    recipe: recipe.clone(),
                    master_seed: s,
                });
            }
        }
    }
    cells
}

pub fn cmd_run(args: &RunArgs) -> Result<u8> {
    let file = load_file_config(&args.common)?;
    let cfg = RunConfig::resolve(&args.common, &file)?;
    let recipes: Vec<(String, Recipe)> = match args.plan.as_ref().or(file.plan.as_ref()) {
        Some(text) => {
            let plan = parse_plan(text)?;
            let family = parse_family(args.family.as_deref().or(file.family.as_deref()))?;
            vec![(plan.to_string(), Recipe { plan, family })]
        }
        None => {
            let names = args.treatment.clone().or_else(|| file.treatments.clone()).unwrap_or_else(|| vec!["A1".into()]);
            parse_treatments(&names)?.into_iter().map(|t| (t.to_string(), t.recipe())).collect()
        }
    };
    let datasets = require_data(&cfg)?;
    prepare_out(&cfg.out)?;
    let cells = grid_cells(&datasets, &recipes, &cfg.seeds);
    let reports = with_pool(cfg.jobs, || run_cells(&datasets, &cells, cfg.split, &cfg.eval))?;
    write_results(&cfg.out, &reports, MedianPolicy::default())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<u8> {
    let file = load_file_config(&args.common)?;
    let cfg = RunConfig::resolve(&args.common, &file)?;
    let treatments = match args.treatments.clone().or_else(|| file.treatments.clone()) {
        Some(names) => parse_treatments(&names)?,
        None => TreatmentId::ALL.to_vec(),
    };
    let median = match args.median.as_deref().or(file.median.as_deref()) {
        None | Some("lower") => MedianPolicy::LowerMiddle,
        Some("mean") => MedianPolicy::MeanOfMiddles,
        Some(other) => return Err(config_err(format!("unknown median policy `{other}`"))),
    };
    let datasets = match &cfg.data {
        Some(p) => load_projects(p)?,
        None => {
            log::info!("no data given; using the built-in synthetic benchmark");
            vec![synthetic::benchmark()]
        }
    };
    prepare_out(&cfg.out)?;
    let recipes: Vec<(String, Recipe)> = treatments.iter().map(|t| (t.to_string(), t.recipe())).collect();
    let cells = grid_cells(&datasets, &recipes, &cfg.seeds);
    let reports = with_pool(cfg.jobs, || run_cells(&datasets, &cells, cfg.split, &cfg.eval))?;
    write_results(&cfg.out, &reports, median)
}

pub fn cmd_landscape(args: &LandscapeArgs) -> Result<u8> {
    let file = load_file_config(&args.common)?;
    let cfg = RunConfig::resolve(&args.common, &file)?;
    let plan = match args.plan.as_ref().or(file.plan.as_ref()) {
        Some(text) => parse_plan(text)?,
        None => {
            let name = args.treatment.clone().unwrap_or_else(|| "A1".into());
            parse_treatments(&[name])?[0].recipe().plan
        }
    };
    let g = args.grid.or(file.grid).unwrap_or(DEFAULT_GRID);
    if g < 3 {
        return Err(config_err(format!("--grid {g} must be at least 3")));
    }
    let alpha = args.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA);
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(config_err(format!("--alpha {alpha} must be >= 0")));
    }
    let datasets = require_data(&cfg)?;
    prepare_out(&cfg.out)?;
    let recipe = Recipe {
        plan,
        family: Family::FeedForward,
    };
    let seed = cfg.seeds[0];
    let mut summary = String::new();
    for d in &datasets {
        let split = time_split(d, cfg.split)?;
        let cell_seed = ghost2_core::evaluation::cell_seed(seed, &d.project, "landscape");
        let pair = with_pool(cfg.jobs, || landscape_pair(&split, &recipe, cell_seed, &cfg.eval, g, alpha))?
            .with_context(|| format!("landscape for {}", d.project))?;
        fs::write(cfg.out.join(format!("{}-before.csv", d.project)), pair.before.to_csv())?;
        fs::write(cfg.out.join(format!("{}-after.csv", d.project)), pair.after.to_csv())?;
        if let Some(name) = &args.svg {
            let name = Path::new(name).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            fs::write(cfg.out.join(format!("{}-before-{name}", d.project)), pair.before.to_svg(12))?;
            fs::write(cfg.out.join(format!("{}-after-{name}", d.project)), pair.after.to_svg(12))?;
        }
        let line = format!(
            "{}: smoothness before {} after {} change {:+.2}% ({})",
            d.project, pair.smoothness_before, pair.smoothness_after, pair.change, pair.learner
        );
        println!("{line}");
        summary.push_str(&line);
        summary.push('\n');
    }
    fs::write(cfg.out.join("landscape.txt"), summary)?;
    Ok(0)
}

pub fn cmd_stability(args: &StabilityArgs) -> Result<u8> {
    let file = load_file_config(&args.common)?;
    let cfg = RunConfig::resolve(&args.common, &file)?;
    let repeats = args.repeats.or(file.repeats).unwrap_or(DEFAULT_REPEATS);
    if repeats == 0 {
        return Err(config_err("--repeats must be at least 1"));
    }
    let datasets = require_data(&cfg)?;
    prepare_out(&cfg.out)?;
    let mut summary = String::new();
    for d in &datasets {
        let split = time_split(d, cfg.split)?;
        let (scaled, _) = normalize(&split);
        let cell_seed = ghost2_core::evaluation::cell_seed(cfg.seeds[0], &d.project, "stability");
        let r = with_pool(cfg.jobs, || smooth_stability(&scaled.train, repeats, cell_seed))?
            .with_context(|| format!("stability for {}", d.project))?;
        let mut csv = String::from("cluster");
        for j in 0..scaled.train.d() {
            csv.push_str(&format!(",m{j}"));
        }
        csv.push('\n');
        for (m, c) in r.medians.iter().zip(&r.assignments) {
            csv.push_str(&c.to_string());
            for v in m {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
        fs::write(cfg.out.join(format!("{}-stability.csv", d.project)), csv)?;
        let line = format!(
            "{}: {:.2}% (k={}, repeats={}, l1_norm={})",
            d.project, r.headline, r.k, r.repeats, r.l1_norm
        );
        println!("{line}");
        summary.push_str(&line);
        summary.push('\n');
    }
    fs::write(cfg.out.join("stability.txt"), summary)?;
    Ok(0)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<u8> {
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let d = synthetic::xor_gaussians("xor", args.rows, args.minority, args.sigma, args.seed).map_err(|e| config_err(e.to_string()))?;
    prepare_out(&out)?;
    let path = out.join("xor.csv");
    let schema = CsvSchema {
        project: None,
        ..CsvSchema::default()
    };
    write_csv(&d, &path, &schema)?;
    println!("wrote {}", path.display());
    Ok(0)
}

pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Landscape(a) => cmd_landscape(a),
        Command::Stability(a) => cmd_stability(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `argv` and runs the command; errors are printed to stderr.
pub fn main_with_args<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG_ERROR } else { 0 };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
