//! `gstar`: aggregate trips, simulate data, fit and evaluate GSTAR models.
//!
//! Settings come from one TOML file (`--config`) with command-line flags
//! layered on top. Relative paths inside the config file are resolved
//! against the file's directory. Any failure prints a single line
//! `error: class=<Class> msg="<message>"` to stderr and exits with status 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gstar::eval::Scaling;
use gstar::penalty::PenaltyKind;
use gstar::pipeline::{
    render_report, run_aggregate, run_pipeline, run_simulate, PipelineConfig, Stage,
};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] gstar::Error),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    fn class(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.class(),
            CliError::Config(_) => "InvalidConfig",
            CliError::Usage(_) => "Usage",
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gstar",
    version,
    about = "Sparse space-time autoregressive models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Bin trip records into per-zone counts (writes series.csv).
    Aggregate(Common),
    /// Simulate a random sparse model (writes series.csv, adjacency.txt, true_model.json).
    Simulate(Common),
    /// Tune and fit every configured model (writes models/ and coefficients.csv).
    Fit(Common),
    /// Tune, fit and score every configured model; prints the report table.
    Evaluate(Common),
    /// Print the table of an existing report.json.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    series: Option<PathBuf>,
    #[arg(long)]
    trips: Option<PathBuf>,
    #[arg(long)]
    adjacency: Option<PathBuf>,
    /// Bin width in minutes for trip aggregation.
    #[arg(long)]
    interval: Option<u32>,
    #[arg(long)]
    min_nonzero: Option<usize>,
    /// Temporal order.
    #[arg(long)]
    p: Option<usize>,
    /// Comma-separated neighborhood depths, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    etas: Option<Vec<usize>>,
    /// Comma-separated families among star, lasso, hglasso, dhglasso.
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<String>>,
    /// Skip the VAR baseline.
    #[arg(long)]
    no_var: bool,
    /// global, train_only or as_is.
    #[arg(long)]
    scaling: Option<String>,
    #[arg(long)]
    t1: Option<usize>,
    #[arg(long)]
    t2: Option<usize>,
    #[arg(long)]
    grid_points: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directory holding report.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Explicit report.json path; overrides `--out`.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn resolve(base: &Path, path: &mut Option<PathBuf>) {
    if let Some(p) = path.as_mut() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
}

fn load_config(args: &Common) -> Result<PipelineConfig, CliError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| gstar::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let mut c: PipelineConfig = toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
            let base = path.parent().unwrap_or(Path::new(""));
            resolve(base, &mut c.input.series);
            resolve(base, &mut c.input.trips);
            resolve(base, &mut c.input.adjacency);
            resolve(base, &mut c.simulate.adjacency);
            if c.out.is_relative() {
                c.out = base.join(&c.out);
            }
            c
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(o) = &args.out {
        config.out = o.clone();
    }
    if args.series.is_some() {
        config.input.series = args.series.clone();
    }
    if args.trips.is_some() {
        config.input.trips = args.trips.clone();
    }
    if args.adjacency.is_some() {
        config.input.adjacency = args.adjacency.clone();
    }
    if let Some(i) = args.interval {
        config.input.interval_minutes = i;
    }
    if args.min_nonzero.is_some() {
        config.min_nonzero = args.min_nonzero;
    }
    if let Some(p) = args.p {
        config.p = p;
    }
    if let Some(e) = &args.etas {
        config.etas = e.clone();
    }
    if let Some(k) = &args.kinds {
        config.kinds = k
            .iter()
            .map(|s| s.parse::<PenaltyKind>())
            .collect::<Result<_, _>>()?;
    }
    if args.no_var {
        config.include_var = false;
    }
    if let Some(s) = &args.scaling {
        config.scaling = match s.as_str() {
            "global" => Scaling::Global,
            "train_only" => Scaling::TrainOnly,
            "as_is" => Scaling::AsIs,
            other => return Err(CliError::Usage(format!("unknown scaling `{other}`"))),
        };
    }
    if args.t1.is_some() {
        config.split.t1 = args.t1;
    }
    if args.t2.is_some() {
        config.split.t2 = args.t2;
    }
    if let Some(g) = args.grid_points {
        config.grid.points = g;
    }
    Ok(config)
}

fn init_logging(verbose: bool) {
    let level = if verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Report(args) => {
            let path = args.report.unwrap_or_else(|| args.out.join("report.json"));
            print!("{}", render_report(&path)?);
        }
        Command::Aggregate(args) => {
            init_logging(args.verbose);
            let config = load_config(&args)?;
            let series = run_aggregate(&config)?;
            println!(
                "wrote {} ({} zones x {} bins)",
                config.out.join("series.csv").display(),
                series.k(),
                series.len()
            );
        }
        Command::Simulate(args) => {
            init_logging(args.verbose);
            let config = load_config(&args)?;
            let series = run_simulate(&config)?;
            println!(
                "wrote {} ({} locations x {} times)",
                config.out.display(),
                series.k(),
                series.len()
            );
        }
        Command::Fit(args) => {
            init_logging(args.verbose);
            let config = load_config(&args)?;
            let outcome = run_pipeline(&config, Stage::Fit)?;
            for (path, _) in &outcome.outputs {
                println!("{}", config.out.join(path).display());
            }
        }
        Command::Evaluate(args) => {
            init_logging(args.verbose);
            let config = load_config(&args)?;
            let outcome = run_pipeline(&config, Stage::Evaluate)?;
            print!("{}", outcome.comparison.report.to_text());
        }
    }
    Ok(())
}

fn one_line(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace('"', "'")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let err = CliError::Usage(e.to_string());
            eprintln!(
                "error: class={} msg=\"{}\"",
                err.class(),
                one_line(&err.to_string())
            );
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!(
                "error: class={} msg=\"{}\"",
                e.class(),
                one_line(&e.to_string())
            );
            ExitCode::FAILURE
        }
    }
}
