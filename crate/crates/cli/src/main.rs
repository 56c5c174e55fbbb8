//! `cpembed`: split conformal prediction over embedding files.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid input or arguments.

mod predictions;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cpembed_core::charts::{bar_chart, coverage_chart, Series};
use cpembed_core::config::{parse_grid, SimulationConfig};
use cpembed_core::conformal::{ensure_disjoint, PValueMode};
use cpembed_core::io::{file_fingerprint, read_to_string, write_atomic};
use cpembed_core::metrics::default_grid;
use cpembed_core::{
    calibrate, evaluate, load_embeddings, normalize, p_value_rows, run_validity_experiment,
    save_split, split, sweep, CalibrationTable, ClassPartitionedIndex, EmbeddingSet, Error,
    Execution, Format, KnnConfig, SplitSpec,
};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_io() => 1,
            _ => 2,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "cpembed", version, about = "Split conformal prediction over labeled embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split one embedding file into train / calibration / test files.
    Split(SplitArgs),
    /// Score a calibration set against a training index.
    Calibrate(CalibrateArgs),
    /// Compute p-values and prediction sets for a test set.
    Predict(PredictArgs),
    /// Metrics at a single significance level.
    Evaluate(EvaluateArgs),
    /// Metrics along an epsilon grid, with coverage and efficiency charts.
    Sweep(SweepArgs),
    /// Monte-Carlo validity experiment on synthetic data.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    Auto,
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Deterministic,
    Randomized,
}

#[derive(Args)]
struct InputFormat {
    /// Input format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Jsonl,
}

impl InputFormat {
    fn for_path(&self, path: &Path) -> Format {
        match self.format {
            Some(FormatArg::Csv) => Format::Csv,
            Some(FormatArg::Jsonl) => Format::Jsonl,
            None => Format::from_path(path),
        }
    }
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    /// Train, calibration and test fractions.
    #[arg(long, default_value = "0.8,0.16,0.04")]
    fractions: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "on")]
    stratified: Toggle,
    /// `auto` keeps groups together when every example has one.
    #[arg(long, value_enum, default_value = "auto")]
    group_aware: Toggle,
    #[command(flatten)]
    format: InputFormat,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    cal: PathBuf,
    #[arg(long, default_value_t = cpembed_core::knn::DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    format: InputFormat,
    /// Calibration table path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    table: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    #[arg(long, value_enum, default_value = "deterministic")]
    mode: Mode,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    format: InputFormat,
    /// Predictions path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Metrics JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// One predictions file per run; repeat to compare runs.
    #[arg(long, required = true)]
    predictions: Vec<PathBuf>,
    /// Comma-separated epsilons; defaults to 0.01..0.50 by 0.01.
    #[arg(long)]
    grid: Option<String>,
    /// Level for the JSON report and the efficiency chart.
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    grid: Option<String>,
    /// Base generator seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn provenance(seed: u64, k: Option<usize>, inputs: &[(&str, &Path)]) -> CliResult<Vec<String>> {
    let mut lines = vec![format!("tool=cpembed {VERSION}"), format!("seed={seed}")];
    if let Some(k) = k {
        lines.push(format!("k={k}"));
    }
    for (name, path) in inputs {
        lines.push(format!("input.{name}={}", file_fingerprint(path)?));
    }
    Ok(lines)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| {
        CliError::Core(Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

fn load_normalized(path: &Path, format: &InputFormat) -> CliResult<EmbeddingSet> {
    let raw = load_embeddings(path, format.for_path(path))?;
    Ok(normalize(&raw)?)
}

fn grid_arg(grid: &Option<String>) -> CliResult<Vec<f64>> {
    Ok(match grid {
        Some(text) => parse_grid(text)?,
        None => default_grid(),
    })
}

fn cmd_split(args: &SplitArgs) -> CliResult<()> {
    let fractions: Vec<f64> = args
        .fractions
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("invalid fractions {:?}", args.fractions)))?;
    let fractions: [f64; 3] = fractions
        .try_into()
        .map_err(|_| CliError::Usage("--fractions needs exactly three values".to_string()))?;
    let set = load_embeddings(&args.input, args.format.for_path(&args.input))?;
    let group_aware = match args.group_aware {
        Toggle::On => true,
        Toggle::Off => false,
        Toggle::Auto => !set.is_empty() && set.examples().iter().all(|e| e.group.is_some()),
    };
    let spec = SplitSpec {
        fractions,
        seed: args.seed,
        stratified: !matches!(args.stratified, Toggle::Off),
        group_aware,
    };
    let out = split(&set, &spec)?;
    ensure_dir(&args.out)?;
    let comments = provenance(args.seed, None, &[("source", &args.input)])?;
    save_split(&out, &spec, &args.out, &comments)?;
    println!(
        "split seed={} train={} calibration={} test={} group_aware={} stratified={}",
        spec.seed,
        out.train.len(),
        out.calibration.len(),
        out.test.len(),
        spec.group_aware,
        spec.stratified
    );
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<()> {
    let k = KnnConfig::new(args.k)?.k;
    let train = load_normalized(&args.train, &args.format)?;
    let cal = load_normalized(&args.cal, &args.format)?;
    ensure_disjoint(&train, &cal)?;
    let index = ClassPartitionedIndex::build(&train)?;
    let table = calibrate(&cal, &index, k, Execution::Parallel)?;
    let comments = provenance(args.seed, Some(k), &[("train", &args.train), ("cal", &args.cal)])?;
    table.save(&args.out, &comments)?;
    println!(
        "calibrated n={} k={} fingerprint={}",
        table.len(),
        k,
        table.fingerprint()
    );
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> CliResult<()> {
    cpembed_core::conformal::check_epsilon(args.epsilon)?;
    let table = CalibrationTable::load(&args.table)?;
    let train = load_normalized(&args.train, &args.format)?;
    let test = load_normalized(&args.test, &args.format)?;
    let index = ClassPartitionedIndex::build(&train)?;
    table.ensure_matches(&index)?;
    let mode = match args.mode {
        Mode::Deterministic => PValueMode::Deterministic,
        Mode::Randomized => PValueMode::Randomized { seed: args.seed },
    };
    let rows = p_value_rows(&test, &index, &table, mode, Execution::Parallel)?;
    let mut comments = provenance(
        args.seed,
        Some(table.k()),
        &[("train", &args.train), ("table", &args.table), ("test", &args.test)],
    )?;
    comments.push(format!(
        "mode={}",
        match args.mode {
            Mode::Deterministic => "deterministic",
            Mode::Randomized => "randomized",
        }
    ));
    comments.push(format!("n_cal={}", table.len()));
    let text = predictions::render(&test, &rows, index.classes(), args.epsilon, &comments)?;
    write_atomic(&args.out, text.as_bytes())?;
    println!("predicted n={} epsilon={}", rows.len(), args.epsilon);
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let preds = predictions::load(&args.predictions)?;
    let report = evaluate(&preds.rows, &preds.truth, args.epsilon)?;
    write_atomic(&args.out, format!("{}\n", report.to_json()).as_bytes())?;
    println!("{}", report.summary());
    Ok(())
}

fn run_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string())
}

fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    let grid = grid_arg(&args.grid)?;
    cpembed_core::conformal::check_epsilon(args.epsilon)?;
    ensure_dir(&args.out)?;
    let single = args.predictions.len() == 1;
    let mut series = Vec::new();
    let mut bars = Vec::new();
    let inputs: Vec<(String, &Path)> = args
        .predictions
        .iter()
        .map(|p| (run_name(p), p.as_path()))
        .collect();
    let input_refs: Vec<(&str, &Path)> = inputs.iter().map(|(n, p)| (n.as_str(), *p)).collect();
    let comments = provenance(0, None, &input_refs)?;

    for (name, path) in &inputs {
        let preds = predictions::load(path)?;
        let report = evaluate(&preds.rows, &preds.truth, args.epsilon)?;
        let curve = sweep(&preds.rows, &preds.truth, &grid)?;
        let prefix = if single {
            String::new()
        } else {
            format!("{name}.")
        };
        write_atomic(
            &args.out.join(format!("{prefix}metrics.json")),
            format!("{}\n", report.to_json()).as_bytes(),
        )?;
        write_atomic(
            &args.out.join(format!("{prefix}curve.csv")),
            curve.to_csv(&comments).as_bytes(),
        )?;
        println!("{name}: {}", report.summary());
        series.push(Series {
            name: name.clone(),
            points: curve.points.iter().map(|p| (p.epsilon, p.coverage)).collect(),
        });
        bars.push((name.clone(), report.correct_efficiency));
    }
    if grid.len() > 1 {
        write_charts(&args.out, &series, &bars, args.epsilon, &comments)?;
    }
    Ok(())
}

fn write_charts(
    dir: &Path,
    series: &[Series],
    bars: &[(String, f64)],
    epsilon: f64,
    comments: &[String],
) -> CliResult<()> {
    let coverage = coverage_chart(series, "Marginal coverage", comments);
    write_atomic(&dir.join("coverage.svg"), coverage.as_bytes())?;
    let efficiency = bar_chart(
        bars,
        &format!("Correct efficiency at ε = {epsilon}"),
        "correct efficiency",
        comments,
    );
    write_atomic(&dir.join("efficiency.svg"), efficiency.as_bytes())?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let text = read_to_string(&args.config)?;
    let mut config = SimulationConfig::parse(&text)?;
    if let Some(seeds) = args.seeds {
        config.n_seeds = seeds;
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if args.grid.is_some() {
        config.grid = grid_arg(&args.grid)?;
    }
    if let Some(seed) = args.seed {
        config.generator.seed = seed;
    }
    if let Some(eps) = args.epsilon {
        config.epsilon = eps;
    }
    config.validate()?;

    let table = run_validity_experiment(
        &config.generator,
        &config.shifts,
        config.k,
        &config.grid,
        config.n_seeds,
        Execution::Parallel,
    )?;
    ensure_dir(&args.out)?;
    let mut comments = provenance(config.generator.seed, Some(config.k), &[("config", &args.config)])?;
    comments.push(format!("seeds={}", config.n_seeds));
    write_atomic(&args.out.join("experiment.csv"), table.to_csv(&comments).as_bytes())?;
    write_atomic(
        &args.out.join("aggregate.csv"),
        table.aggregate_csv(&comments).as_bytes(),
    )?;

    let aggregate = table.aggregate();
    // Grid point nearest the operating epsilon.
    let operating = config
        .grid
        .iter()
        .copied()
        .min_by(|a, b| (a - config.epsilon).abs().total_cmp(&(b - config.epsilon).abs()))
        .expect("validated grid is nonempty");
    let mut series = Vec::new();
    let mut bars = Vec::new();
    for cond in &config.shifts {
        let rows: Vec<_> = aggregate.iter().filter(|a| a.shift_id == cond.id).collect();
        series.push(Series {
            name: cond.id.clone(),
            points: rows.iter().map(|a| (a.epsilon, a.coverage.mean)).collect(),
        });
        if let Some(a) = rows.iter().find(|a| a.epsilon == operating) {
            bars.push((cond.id.clone(), a.correct_efficiency.mean));
            println!(
                "{}: epsilon={:.3} coverage={:.3} avg_set_size={:.3} correct_efficiency={:.3}",
                cond.id, operating, a.coverage.mean, a.avg_set_size.mean, a.correct_efficiency.mean
            );
        }
    }
    if config.grid.len() > 1 {
        write_charts(&args.out, &series, &bars, operating, &comments)?;
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Split(a) => cmd_split(a),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
