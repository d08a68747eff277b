//! `medcross` — simulate synthetic mediation benchmarks, estimate natural
//! direct/indirect effects from observation CSVs, and replicate scenarios
//! across nuisance learners.
//!
//! Every run writes a `manifest.json` into the output directory recording
//! the fully resolved configuration; rerunning with the same configuration
//! reproduces every output byte for byte. Exit codes are a stable contract:
//! 0 success, 2 user/configuration error, 3 I/O failure, 4 learner failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use medcross_core::error::Error as CoreError;
use medcross_core::estimator::Estimate;
use medcross_core::harness::{run_benchmark, BenchmarkConfig, BenchmarkResult, LearnerConfig};
use medcross_core::nuisance::{default_grid, parse_grid_json, pretune_plan};
use medcross_core::synth::{generate, CaseId, OracleNuisance, ScenarioSpec};
use medcross_core::{
    estimate, read_observations_csv, write_observations_csv, Effect, FitPlan, LearnerKind,
    MediatorKind, NetworkSpec, ObservationTable,
};

type Result<T> = std::result::Result<T, CoreError>;

#[derive(Parser)]
#[command(
    name = "medcross",
    version,
    about = "Cross-fitted multiply-robust estimation of natural direct and indirect effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic benchmark dataset plus a JSON sidecar with the
    /// design truths.
    Simulate(SimulateArgs),
    /// Estimate mediation effects from a CSV of observations.
    Estimate(EstimateArgs),
    /// Replicate a synthetic scenario across learners and summarize
    /// bias / SE / RMSE / coverage.
    Benchmark(BenchmarkArgs),
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MediatorArg {
    Binary,
    Continuous,
}

impl From<MediatorArg> for MediatorKind {
    fn from(value: MediatorArg) -> MediatorKind {
        match value {
            MediatorArg::Binary => MediatorKind::Binary,
            MediatorArg::Continuous => MediatorKind::Continuous,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum LearnerArg {
    Oracle,
    Linear,
    Dnn,
}

impl LearnerArg {
    fn name(self) -> &'static str {
        match self {
            LearnerArg::Oracle => "oracle",
            LearnerArg::Linear => "linear",
            LearnerArg::Dnn => "dnn",
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Benchmark case (1–5).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    case: u8,
    /// Sample size.
    #[arg(long)]
    n: usize,
    /// Covariate count.
    #[arg(long, default_value_t = 5)]
    p: usize,
    /// Hölder exponent for the wavelet cases (defaults per case).
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// CSV with columns D, M, Y and covariates (all other columns, in file
    /// order).
    input: PathBuf,
    /// Mediator kind — always explicit, never inferred.
    #[arg(long, value_enum)]
    mediator: MediatorArg,
    #[arg(long, value_enum, default_value = "dnn")]
    learner: LearnerArg,
    /// JSON hyperparameter grid for the DNN learner (defaults to the full
    /// published grid).
    #[arg(long)]
    grid: Option<PathBuf>,
    /// CSV used once for hyperparameter selection; folds then reuse the
    /// chosen spec instead of tuning in-split.
    #[arg(long)]
    tune_sample: Option<PathBuf>,
    /// Cross-fitting folds V (2–10).
    #[arg(long, default_value_t = 5)]
    v_folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Benchmark case the data came from — required by the oracle learner.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    case: Option<u8>,
    /// Hölder exponent for the oracle learner (defaults per case).
    #[arg(long)]
    alpha: Option<f64>,
    /// Worker threads (defaults to MEDCROSS_THREADS, then all cores).
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    case: u8,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    p: usize,
    #[arg(long)]
    alpha: Option<f64>,
    /// Base seed; replicate r uses seed + r.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo replicates (at least 2).
    #[arg(long)]
    replicates: usize,
    #[arg(long, default_value_t = 5)]
    v_folds: usize,
    /// Learners to compare (comma-separated).
    #[arg(long, value_enum, value_delimiter = ',', default_value = "oracle")]
    learner: Vec<LearnerArg>,
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long)]
    tune_sample: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Benchmark(args) => cmd_benchmark(&args),
    }
}

/// Map an error to the exit-code contract. Chained replicate failures are
/// classified by their root cause.
fn exit_code_for(err: &CoreError) -> u8 {
    match err.root() {
        CoreError::Io(_) => 3,
        CoreError::Csv(e) => match e.kind() {
            csv::ErrorKind::Io(_) => 3,
            _ => 2,
        },
        CoreError::Json(e) if e.classify() == serde_json::error::Category::Io => 3,
        CoreError::DivergedLoss { .. }
        | CoreError::PredictionNonFinite { .. }
        | CoreError::InsufficientData { .. }
        | CoreError::UncoveredRow { .. } => 4,
        _ => 2,
    }
}

/// Resolve the worker-thread count: flag, then MEDCROSS_THREADS, then the
/// library default. Returns the count actually recorded in the manifest.
fn configure_parallelism(flag: Option<usize>) -> Result<Option<usize>> {
    let resolved = match flag {
        Some(n) => Some(n),
        None => match std::env::var("MEDCROSS_THREADS") {
            Ok(raw) => Some(raw.parse::<usize>().map_err(|_| {
                CoreError::InvalidConfig(format!(
                    "MEDCROSS_THREADS must be a positive integer, got '{raw}'"
                ))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = resolved {
        if n == 0 {
            return Err(CoreError::InvalidConfig(
                "parallelism must be at least 1".into(),
            ));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CoreError::InvalidConfig(format!("thread pool: {e}")))?;
    }
    Ok(resolved)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

fn resolve_case(case: u8) -> Result<CaseId> {
    CaseId::from_index(case)
}

fn build_scenario(case: u8, n: usize, p: usize, alpha: Option<f64>, seed: u64) -> Result<ScenarioSpec> {
    let case_id = resolve_case(case)?;
    let mut spec = ScenarioSpec::new(case_id, n, p, seed);
    if let Some(a) = alpha {
        spec = spec.with_alpha(a);
    }
    spec.validate()?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let spec = build_scenario(args.case, args.n, args.p, args.alpha, args.seed)?;
    let (table, oracle) = generate(&spec)?;
    fs::create_dir_all(&args.out)?;
    write_observations_csv(&table, &args.out.join("observations.csv"))?;

    let truths = oracle.effect_truths();
    let sidecar = json!({
        "case": spec.case_id.to_string(),
        "n": spec.n,
        "p": spec.p,
        "alpha": spec.alpha,
        "seed": spec.seed,
        "mediator": "continuous",
        "truths": truths,
    });
    write_json(&args.out.join("truths.json"), &sidecar)?;

    let manifest = json!({
        "command": "simulate",
        "config": {
            "case": args.case,
            "n": spec.n,
            "p": spec.p,
            "alpha": spec.alpha,
            "seed": spec.seed,
            "out": args.out.display().to_string(),
        },
        "outputs": ["observations.csv", "truths.json"],
    });
    write_json(&args.out.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} rows to {}",
        table.len(),
        args.out.join("observations.csv").display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

/// Resolved DNN grid: the file's grid if given, else the published default.
fn load_grid(path: &Option<PathBuf>) -> Result<Vec<NetworkSpec>> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p)?;
            parse_grid_json(&text)
        }
        None => Ok(default_grid()),
    }
}

fn load_tune_table(
    path: &Option<PathBuf>,
    mediator: MediatorKind,
) -> Result<Option<ObservationTable>> {
    match path {
        Some(p) => Ok(Some(read_observations_csv(p, mediator)?)),
        None => Ok(None),
    }
}

fn oracle_for(case: Option<u8>, alpha: Option<f64>) -> Result<OracleNuisance> {
    let case = case.ok_or_else(|| {
        CoreError::InvalidConfig("--learner oracle requires --case (and optionally --alpha)".into())
    })?;
    let case_id = resolve_case(case)?;
    OracleNuisance::new(case_id, alpha.unwrap_or(case_id.default_alpha()))
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let parallelism = configure_parallelism(args.parallelism)?;
    let mediator = MediatorKind::from(args.mediator);
    let table = read_observations_csv(&args.input, mediator)?;

    let mut plan = FitPlan::new(mediator).with_seed(args.seed);
    let grid_used: Option<Vec<NetworkSpec>>;
    let kind = match args.learner {
        LearnerArg::Oracle => {
            grid_used = None;
            LearnerKind::Oracle(oracle_for(args.case, args.alpha)?)
        }
        LearnerArg::Linear => {
            grid_used = None;
            LearnerKind::Linear
        }
        LearnerArg::Dnn => {
            let grid = load_grid(&args.grid)?;
            if let Some(tune) = load_tune_table(&args.tune_sample, mediator)? {
                plan = pretune_plan(&grid, &tune, &plan)?;
            }
            grid_used = Some(grid.clone());
            LearnerKind::Dnn(grid)
        }
    };

    let est = estimate(&table, &kind, &plan, args.v_folds, args.seed)?;

    fs::create_dir_all(&args.out)?;
    let report = render_estimate_json(&est, args)?;
    write_json(&args.out.join("report.json"), &report)?;
    let text = render_estimate_text(&est, args.learner.name());
    write_text(&args.out.join("report.txt"), &text)?;

    let manifest = json!({
        "command": "estimate",
        "config": {
            "input": args.input.display().to_string(),
            "mediator": mediator,
            "learner": args.learner.name(),
            "grid": grid_used,
            "tune_sample": args.tune_sample.as_ref().map(|p| p.display().to_string()),
            "v_folds": args.v_folds,
            "seed": args.seed,
            "case": args.case,
            "alpha": args.alpha,
            "parallelism": parallelism,
            "out": args.out.display().to_string(),
        },
        "outputs": ["report.json", "report.txt"],
    });
    write_json(&args.out.join("manifest.json"), &manifest)?;
    print!("{text}");
    Ok(())
}

fn render_estimate_json(est: &Estimate, args: &EstimateArgs) -> Result<serde_json::Value> {
    let mut effects = serde_json::Map::new();
    let mut warnings = Vec::new();
    for (effect, report) in &est.reports {
        effects.insert(
            effect_key(*effect).to_string(),
            json!({
                "label": effect.to_string(),
                "estimate": report.estimate,
                "se": report.se(),
                "variance": report.variance,
                "ci95": [report.ci_low, report.ci_high],
                "variance_floored": report.variance_floored,
            }),
        );
        if report.variance_floored {
            warnings.push(format!("variance floored at zero for {effect}"));
        }
    }
    let mut phi = serde_json::Map::new();
    for ((d, dp), value) in &est.phi {
        phi.insert(format!("phi_{d}{dp}"), json!(value));
    }
    Ok(json!({
        "n": est.n,
        "v_folds": est.folds,
        "learner": args.learner.name(),
        "mediator": MediatorKind::from(args.mediator),
        "seed": args.seed,
        "effects": effects,
        "phi": phi,
        "warnings": warnings,
        "folds": est.fold_diagnostics,
    }))
}

fn effect_key(effect: Effect) -> &'static str {
    match effect {
        Effect::Total => "total",
        Effect::Nde0 => "nde0",
        Effect::Nde1 => "nde1",
        Effect::Nie0 => "nie0",
        Effect::Nie1 => "nie1",
    }
}

fn render_estimate_text(est: &Estimate, learner: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:>10} {:>10} {:>22}",
        "effect", "estimate", "se", "95% CI"
    );
    for (effect, report) in &est.reports {
        let flag = if report.variance_floored { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:<12} {:>10.5} {:>10.5} [{:>9.5}, {:>9.5}]{}",
            effect.to_string(),
            report.estimate,
            report.se(),
            report.ci_low,
            report.ci_high,
            flag
        );
    }
    let _ = writeln!(out, "n = {}, V = {}, learner = {}", est.n, est.folds, learner);
    if est
        .reports
        .values()
        .any(|r| r.variance_floored)
    {
        let _ = writeln!(out, "* variance estimate was negative and floored at zero");
    }
    out
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let parallelism = configure_parallelism(args.parallelism)?;
    let scenario = build_scenario(args.case, args.n, args.p, args.alpha, args.seed)?;
    if args.learner.is_empty() {
        return Err(CoreError::InvalidConfig(
            "at least one learner must be selected".into(),
        ));
    }
    let needs_grid = args.learner.contains(&LearnerArg::Dnn);
    let grid = if needs_grid {
        Some(load_grid(&args.grid)?)
    } else {
        None
    };
    let learners: Vec<LearnerConfig> = args
        .learner
        .iter()
        .map(|l| match l {
            LearnerArg::Oracle => LearnerConfig::Oracle,
            LearnerArg::Linear => LearnerConfig::Linear,
            LearnerArg::Dnn => LearnerConfig::Dnn(grid.clone().expect("grid resolved")),
        })
        .collect();

    let mut cfg = BenchmarkConfig::new(scenario, args.replicates, args.v_folds);
    cfg.learners = learners;
    cfg.tune_table = load_tune_table(&args.tune_sample, MediatorKind::Continuous)?;
    let result = run_benchmark(&cfg)?;

    fs::create_dir_all(&args.out)?;
    write_json(
        &args.out.join("benchmark.json"),
        &serde_json::to_value(&result)?,
    )?;
    let text = render_benchmark_text(&result);
    write_text(&args.out.join("benchmark.txt"), &text)?;

    let manifest = json!({
        "command": "benchmark",
        "config": {
            "case": args.case,
            "n": args.n,
            "p": args.p,
            "alpha": cfg.scenario.alpha,
            "seed": args.seed,
            "replicates": args.replicates,
            "v_folds": args.v_folds,
            "learners": args.learner.iter().map(|l| l.name()).collect::<Vec<_>>(),
            "grid": grid,
            "tune_sample": args.tune_sample.as_ref().map(|p| p.display().to_string()),
            "parallelism": parallelism,
            "out": args.out.display().to_string(),
        },
        "outputs": ["benchmark.json", "benchmark.txt"],
    });
    write_json(&args.out.join("manifest.json"), &manifest)?;
    print!("{text}");
    Ok(())
}

fn render_benchmark_text(result: &BenchmarkResult) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "case {}  n = {}  p = {}  alpha = {}  replicates = {}  V = {}",
        result.case, result.n, result.p, result.alpha, result.replicates, result.folds
    );
    let _ = writeln!(
        out,
        "{:<8} {:<12} {:>10} {:>10} {:>10} {:>8}",
        "learner", "effect", "bias", "se", "rmse", "cp"
    );
    for learner in &result.learners {
        for summary in learner.effects.values() {
            let _ = writeln!(
                out,
                "{:<8} {:<12} {:>10.5} {:>10.5} {:>10.5} {:>8.4}",
                learner.learner,
                summary.effect.to_string(),
                summary.bias,
                summary.se_population,
                summary.rmse,
                summary.coverage
            );
        }
    }
    let truths: BTreeMap<String, f64> = result
        .truths
        .iter()
        .map(|(e, v)| (e.to_string(), *v))
        .collect();
    let _ = writeln!(
        out,
        "truths: {}",
        truths
            .iter()
            .map(|(k, v)| format!("{k} = {v}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    out
}
