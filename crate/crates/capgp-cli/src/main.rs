//! Command-line front end: fit a joint capacity model, forecast a cell, or
//! run the benchmark scenarios.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use capgp::bench::{render_forecast_csv, render_report, run_scenario, ModelKind};
use capgp::data::{load_csv, DataError, Scenario};
use capgp::mcgp::{mcgp_fit_with, mcgp_predict, CellObservations, McgpError, McgpModel, TrainingSet};
use capgp::optimizer::OptimizerConfig;

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit classes: 1 usage, 2 data, 3 numeric/fit.
enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Numeric(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<McgpError> for CliError {
    fn from(e: McgpError) -> Self {
        match e {
            McgpError::UnknownCell { .. } => Self::Data(e.to_string()),
            McgpError::Persistence(_) | McgpError::Io(_) | McgpError::InvalidTrainingSet(_) => {
                Self::Data(e.to_string())
            }
            other => Self::Numeric(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "capgp",
    version,
    about = "Joint Gaussian-process forecasting of battery-cell capacity",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the joint model on a capacity CSV and persist it.
    Fit(FitArgs),
    /// Forecast one cell from a persisted model.
    Forecast(ForecastArgs),
    /// Run a hide-the-tail scenario and score the models.
    Bench(BenchArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Capacity CSV (cell_id,cycle,capacity_ah).
    #[arg(long)]
    data: PathBuf,
    /// Number of latent functions.
    #[arg(long, default_value_t = 2)]
    latent: usize,
    /// Multi-start restarts.
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training downsampling: keep every stride-th observation.
    #[arg(long, default_value_t = 3)]
    stride: usize,
    /// Which offset of each stride block to keep.
    #[arg(long, default_value_t = 0)]
    phase: usize,
    /// Output model file.
    #[arg(long, default_value = "model.toml")]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    /// Persisted model file from `fit` or `bench`.
    #[arg(long)]
    model: PathBuf,
    /// Cell to forecast (must be in the model's training set).
    #[arg(long)]
    cell: String,
    /// Inclusive cycle range, e.g. 101..168.
    #[arg(long)]
    cycles: String,
    /// Output forecast CSV.
    #[arg(long, default_value = "forecast.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Capacity CSV (cell_id,cycle,capacity_ah).
    #[arg(long)]
    data: PathBuf,
    /// Built-in scenario (a|b|c) or a scenario TOML file.
    #[arg(long)]
    scenario: String,
    /// Comma-separated list: mcgp,igp_linear.
    #[arg(long, default_value = "mcgp,igp_linear")]
    models: String,
    #[arg(long, default_value_t = 2)]
    latent: usize,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the scenario's training downsample stride.
    #[arg(long)]
    stride: Option<usize>,
    /// Overrides the scenario's training downsample phase.
    #[arg(long)]
    phase: Option<usize>,
    /// Output directory for the report, forecast dumps, and model file.
    #[arg(long, default_value = "bench_out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Keep clap's rendered message but own the exit code contract.
            let _ = e.print();
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(&args),
        Command::Forecast(args) => cmd_forecast(&args),
        Command::Bench(args) => cmd_bench(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

/// `# capgp <version>` plus the full invocation, embedded at the top of every
/// output file.
fn header_lines() -> Vec<String> {
    let invocation: Vec<String> = std::env::args().collect();
    vec![
        format!("capgp {VERSION}"),
        format!("invocation: {}", invocation.join(" ")),
    ]
}

fn prepend_header(body: &str) -> String {
    let mut out = String::new();
    for line in header_lines() {
        out.push_str("# ");
        out.push_str(&line);
        out.push('\n');
    }
    out.push_str(body);
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn training_set_from_csv(
    data: &Path,
    stride: usize,
    phase: usize,
) -> Result<TrainingSet, CliError> {
    if stride < 1 {
        return Err(CliError::Usage("--stride must be at least 1".into()));
    }
    if phase >= stride {
        return Err(CliError::Usage(format!(
            "--phase {phase} must be smaller than --stride {stride}"
        )));
    }
    let series = load_csv(data)?;
    let cells = series
        .iter()
        .map(|s| {
            let kept = capgp::data::downsample(s, stride, phase);
            CellObservations {
                id: kept.cell_id.clone(),
                cycles: kept.cycles.iter().map(|&c| f64::from(c)).collect(),
                capacities: kept.capacities,
            }
        })
        .collect();
    TrainingSet::new(cells).map_err(CliError::from)
}

fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    if args.latent < 1 {
        return Err(CliError::Usage("--latent must be at least 1".into()));
    }
    if args.restarts < 1 {
        return Err(CliError::Usage("--restarts must be at least 1".into()));
    }
    let train = training_set_from_csv(&args.data, args.stride, args.phase)?;
    let cfg = OptimizerConfig::with_restarts_and_seed(args.restarts, args.seed);
    let model = mcgp_fit_with(&train, args.latent, &cfg)?;
    model
        .save(&args.out, &header_lines())
        .map_err(CliError::from)?;

    let report = model.fit_report();
    println!(
        "fitted {} cells, {} observations, {} latent functions",
        train.cell_count(),
        train.total_count(),
        args.latent
    );
    println!("deviance       {:.6}", report.final_deviance);
    println!("log-likelihood {:.6}", report.final_loglik);
    println!("iterations     {}", report.iterations);
    println!("restarts used  {}/{}", report.restarts_used, args.restarts);
    println!("jitter used    {:e}", report.jitter_used);
    println!("model written to {}", args.out.display());
    Ok(())
}

/// Parses an inclusive `A..B` cycle range with A <= B.
fn parse_cycle_range(text: &str) -> Result<(u32, u32), CliError> {
    let invalid = || {
        CliError::Usage(format!(
            "--cycles expects an inclusive range like 101..168, got {text:?}"
        ))
    };
    let (a, b) = text.split_once("..").ok_or_else(invalid)?;
    let start: u32 = a.parse().map_err(|_| invalid())?;
    let end: u32 = b.parse().map_err(|_| invalid())?;
    if start == 0 || start > end {
        return Err(invalid());
    }
    Ok((start, end))
}

fn cmd_forecast(args: &ForecastArgs) -> Result<(), CliError> {
    let (start, end) = parse_cycle_range(&args.cycles)?;
    let model = McgpModel::load(&args.model)?;
    let cycles: Vec<f64> = (start..=end).map(f64::from).collect();
    let pred = mcgp_predict(&model, &args.cell, &cycles)?;
    let mut body = String::from("cycle,mean_ah,stddev_ah,truth_ah\n");
    for (k, cycle) in (start..=end).enumerate() {
        body.push_str(&format!("{},{},{},\n", cycle, pred.mean[k], pred.stddev[k]));
    }
    write_file(&args.out, &prepend_header(&body))?;
    println!(
        "forecast for {} over cycles {start}..{end} written to {}",
        args.cell,
        args.out.display()
    );
    Ok(())
}

fn resolve_scenario(spec: &str) -> Result<Scenario, CliError> {
    if let Some(builtin) = Scenario::builtin(spec) {
        return Ok(builtin);
    }
    let path = Path::new(spec);
    if path.exists() {
        return Scenario::load(path).map_err(CliError::from);
    }
    Err(CliError::Usage(format!(
        "unknown scenario {spec:?}: expected a, b, c, or a scenario TOML file"
    )))
}

fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    if args.latent < 1 {
        return Err(CliError::Usage("--latent must be at least 1".into()));
    }
    if args.restarts < 1 {
        return Err(CliError::Usage("--restarts must be at least 1".into()));
    }
    let mut scenario = resolve_scenario(&args.scenario)?;
    if let Some(stride) = args.stride {
        scenario.downsample_stride = stride;
    }
    if let Some(phase) = args.phase {
        scenario.downsample_phase = phase;
    }
    scenario.validate().map_err(CliError::from)?;

    let mut models = Vec::new();
    for token in args.models.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let kind: ModelKind = token.parse().map_err(CliError::Usage)?;
        if !models.contains(&kind) {
            models.push(kind);
        }
    }
    if models.is_empty() {
        return Err(CliError::Usage("--models selected nothing".into()));
    }

    let series = load_csv(&args.data)?;
    let cfg = OptimizerConfig::with_restarts_and_seed(args.restarts, args.seed);
    let run = run_scenario(&series, &scenario, &models, args.latent, &cfg).map_err(|e| match e {
        capgp::bench::BenchError::Mcgp(m) => CliError::from(m),
        capgp::bench::BenchError::Igp(i) => CliError::Numeric(i.to_string()),
        other => CliError::Data(other.to_string()),
    })?;

    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", args.out.display())))?;
    let report_text = prepend_header(&render_report(&run.report));
    write_file(&args.out.join("report.txt"), &report_text)?;
    for (kind, points) in &run.report.forecasts {
        let name = format!("forecast_{}.csv", kind.label().to_ascii_lowercase());
        write_file(
            &args.out.join(name),
            &prepend_header(&render_forecast_csv(points)),
        )?;
    }
    if let Some(model) = &run.mcgp_model {
        model
            .save(&args.out.join("model_mcgp.toml"), &header_lines())
            .map_err(CliError::from)?;
    }
    print!("{}", render_report(&run.report));
    println!("outputs written to {}", args.out.display());
    Ok(())
}
