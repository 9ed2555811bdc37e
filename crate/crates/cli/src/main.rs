//! `fiberlink`: scenario-driven batch runner.
//!
//! Exit codes: 0 success, 1 compare failure, 2 configuration error,
//! 3 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fiberlink::bundle::{compare, counter_bundle, decomposition_bundle, record_bundle, report_bundle, ReportBundle, Tolerance};
use fiberlink::pipeline::{analyze, analyze_counts, simulate_scenario, CounterOptions, Measurements};
use fiberlink::regression::DecomposeOptions;
use fiberlink::scenario::{bundled, ScenarioConfig, BUNDLED};
use fiberlink::series::FrequencySeries;
use fiberlink::Error;

const OUT_ROOT_ENV: &str = "FIBERLINK_OUT_ROOT";

#[derive(Parser)]
#[command(name = "fiberlink", version, about = "Simulate and analyse two-way fiber frequency-comparison links")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its beat record.
    Simulate(RunArgs),
    /// Counters, stability curves, offsets, slips and identities.
    Analyze(AnalyzeArgs),
    /// Thermal decomposition of the local two-way phase.
    Decompose(InputArgs),
    /// Simulation, analysis and decomposition in one bundle.
    Report(RunArgs),
    /// Compare two bundles file by file.
    Compare(CompareArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with = "scenario")]
    config: Option<PathBuf>,
    /// Bundled scenario name.
    #[arg(long)]
    scenario: Option<String>,
    /// Override a config key, e.g. `--set link.anc.gain_per_s=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print the resolved config and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InputArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Record directory written by `simulate`; simulates in memory when absent.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Record directory, or counter CSV files (`gate_start,freq_hz,kind`).
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Carrier used for fractional conversion of counter CSV input.
    #[arg(long, default_value_t = fiberlink::noise::DEFAULT_CARRIER_HZ)]
    carrier_hz: f64,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Absolute tolerance per numeric token.
    #[arg(long, default_value_t = 0.0)]
    tolerance: f64,
    /// Relative tolerance per numeric token.
    #[arg(long, default_value_t = 0.0)]
    relative: f64,
}

enum Failure {
    Config(String),
    Runtime(String),
    Compare,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load(args: &ScenarioArgs) -> Result<ScenarioConfig, Failure> {
    let base = match (&args.config, &args.scenario) {
        (Some(path), _) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
            ScenarioConfig::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(name)) => bundled(name)?,
        (None, None) => {
            return Err(Failure::Config(format!(
                "pass --config <file> or --scenario <name> (bundled: {})",
                BUNDLED.join(", ")
            )))
        }
    };
    let mut cfg = base.with_overrides(&args.overrides)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(args: &RunArgs, cfg: &ScenarioConfig, command: &str) -> PathBuf {
    if let Some(p) = &args.out {
        return p.clone();
    }
    if let Some(p) = &cfg.output_dir {
        return PathBuf::from(p);
    }
    let root = std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fiberlink-out"));
    root.join(format!("{}-{command}", cfg.name))
}

fn write(bundle: &ReportBundle, dir: &Path) -> Result<(), Failure> {
    bundle.write(dir)?;
    println!("wrote {} files to {}", bundle.files.len() + 1, dir.display());
    Ok(())
}

fn measurements(input: Option<&Path>, cfg: &ScenarioConfig) -> Result<Measurements, Failure> {
    match input {
        Some(dir) => Ok(Measurements::read_dir(dir)?),
        None => Ok(simulate_scenario(cfg)?.1),
    }
}

/// Prints the resolved config when asked; true if the command should stop.
fn maybe_print(args: &ScenarioArgs, cfg: &ScenarioConfig) -> Result<bool, Failure> {
    if args.print_config {
        println!("{}", cfg.to_json()?);
    }
    Ok(args.print_config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(a) => {
            let cfg = load(&a.scenario)?;
            if maybe_print(&a.scenario, &cfg)? {
                return Ok(());
            }
            let (_, m) = simulate_scenario(&cfg)?;
            write(&record_bundle(&cfg, &m)?, &out_dir(&a, &cfg, "simulate"))
        }
        Command::Analyze(a) => {
            let counter_files = !a.input.is_empty() && a.input.iter().all(|p| p.is_file());
            if counter_files {
                return analyze_counter_files(&a);
            }
            if a.input.len() > 1 {
                return Err(Failure::Config("pass one record directory or counter CSV files".into()));
            }
            let cfg = load(&a.run.scenario)?;
            if maybe_print(&a.run.scenario, &cfg)? {
                return Ok(());
            }
            let m = measurements(a.input.first().map(PathBuf::as_path), &cfg)?;
            let analysis = analyze(&m, &cfg.pipeline, None)?;
            write(&report_bundle(&cfg, &analysis)?, &out_dir(&a.run, &cfg, "analyze"))
        }
        Command::Decompose(a) => {
            let cfg = load(&a.run.scenario)?;
            if maybe_print(&a.run.scenario, &cfg)? {
                return Ok(());
            }
            let m = measurements(a.input.as_deref(), &cfg)?;
            let opts = cfg
                .pipeline
                .decomposition
                .map(|d| d.options(&cfg.link))
                .unwrap_or_else(DecomposeOptions::default);
            let d = m.decompose(&opts)?;
            write(&decomposition_bundle(&cfg, &d)?, &out_dir(&a.run, &cfg, "decompose"))
        }
        Command::Report(a) => {
            let cfg = load(&a.scenario)?;
            if maybe_print(&a.scenario, &cfg)? {
                return Ok(());
            }
            let (_, m) = simulate_scenario(&cfg)?;
            let opts = cfg.pipeline.decomposition.map(|d| d.options(&cfg.link));
            let analysis = analyze(&m, &cfg.pipeline, opts.as_ref())?;
            write(&report_bundle(&cfg, &analysis)?, &out_dir(&a, &cfg, "report"))
        }
        Command::Compare(c) => {
            let tol = Tolerance {
                absolute: c.tolerance,
                relative: c.relative,
            };
            if !(tol.absolute >= 0.0 && tol.relative >= 0.0) {
                return Err(Failure::Config("tolerances must be >= 0".into()));
            }
            let report = compare(&c.a, &c.b, tol)?;
            print!("{}", report.render());
            if report.passed() {
                Ok(())
            } else {
                Err(Failure::Compare)
            }
        }
    }
}

fn analyze_counter_files(a: &AnalyzeArgs) -> Result<(), Failure> {
    let mut raw = Vec::new();
    let mut counts: Vec<FrequencySeries> = Vec::new();
    for p in &a.input {
        let bytes = fs::read(p).map_err(|e| Failure::Runtime(format!("{}: {e}", p.display())))?;
        counts.push(FrequencySeries::read_counter_csv(bytes.as_slice())?);
        raw.push(bytes);
    }
    let spec = match (&a.run.scenario.config, &a.run.scenario.scenario) {
        (None, None) => None,
        _ => Some(load(&a.run.scenario)?.pipeline),
    };
    let estimators = spec
        .as_ref()
        .map(|s| s.estimators.clone())
        .unwrap_or_else(|| vec![fiberlink::stability::Estimator::Oadev, fiberlink::stability::Estimator::Mdev]);
    let opts = CounterOptions {
        offsets: spec.as_ref().is_none_or(|s| s.offsets),
        slips: spec.as_ref().is_none_or(|s| s.slips),
        slip_threshold_hz: spec.as_ref().and_then(|s| s.slip_threshold_hz),
    };
    let analysis = analyze_counts("input", counts, &estimators, a.carrier_hz, opts)?;
    let dir = a.run.out.clone().unwrap_or_else(|| {
        std::env::var_os(OUT_ROOT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("fiberlink-out"))
            .join("counters-analyze")
    });
    write(&counter_bundle("input", &raw, &[analysis])?, &dir)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Compare) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
