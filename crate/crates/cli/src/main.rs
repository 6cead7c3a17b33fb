//! `panel-impute` command-line entry point.
//!
//! Every flag can also be set through an environment variable named
//! `PANEL_IMPUTE_<FLAG>` (for example `PANEL_IMPUTE_SEED=7`). Command-line
//! flags take precedence.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use panel_impute::bench::{evaluate_cell, MethodError, ReportFormat};
use panel_impute::{
    emit_report, generate_synthetic_panel, pseudo_treatment_eval, BenchmarkConfig, CsvLayout,
    Error, EstimatorConfig, ImputationResult, Method, MethodRegistry, OutcomeTransform, Panel,
    SyntheticSpec,
};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "panel-impute", version, about = "Counterfactual imputation for panel data")]
struct Cli {
    /// Worker threads for parallel evaluation. Output does not depend on it.
    #[arg(long, global = true, env = "PANEL_IMPUTE_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Impute one cell and report the treatment-effect estimate.
    Impute(ImputeArgs),
    /// Pseudo-treatment benchmark over the last T - T0 periods.
    Benchmark(BenchmarkArgs),
    /// Write a synthetic factor-model panel as long CSV.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Panel CSV; `-` reads standard input.
    #[arg(long, env = "PANEL_IMPUTE_INPUT")]
    input: PathBuf,
    /// CSV layout of the input.
    #[arg(long, default_value = "long", env = "PANEL_IMPUTE_FORMAT")]
    format: Layout,
    #[arg(long, default_value = "level", env = "PANEL_IMPUTE_TRANSFORM")]
    transform: Transform,
    #[arg(long, default_value_t = panel_impute::DEFAULT_SEED, env = "PANEL_IMPUTE_SEED")]
    seed: u64,
    /// Reuse the main-problem penalties inside ensemble folds (approximation).
    #[arg(long, env = "PANEL_IMPUTE_FAST")]
    fast: bool,
    /// Held-out periods for ENS_HC.
    #[arg(long = "S", env = "PANEL_IMPUTE_S")]
    s: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long, env = "PANEL_IMPUTE_OUTPUT")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ImputeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Method name or `all`.
    #[arg(long, default_value = "all", env = "PANEL_IMPUTE_METHOD")]
    method: String,
    /// Label of the treated unit.
    #[arg(long, env = "PANEL_IMPUTE_UNIT")]
    unit: String,
    /// Label of the treated period.
    #[arg(long, env = "PANEL_IMPUTE_PERIOD")]
    period: String,
    #[arg(long, default_value = "json", env = "PANEL_IMPUTE_OUTPUT_FORMAT")]
    output_format: ImputeFormat,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated method names or `all`.
    #[arg(long, default_value = "all", env = "PANEL_IMPUTE_METHOD")]
    method: String,
    /// Periods before the first pseudo-treated one; default ceil(0.8 T).
    #[arg(long = "T0", env = "PANEL_IMPUTE_T0")]
    t0: Option<usize>,
    #[arg(long, default_value = "json", env = "PANEL_IMPUTE_OUTPUT_FORMAT")]
    output_format: BenchFormat,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long = "N", default_value_t = 20, env = "PANEL_IMPUTE_N")]
    n: usize,
    #[arg(long = "T", default_value_t = 20, env = "PANEL_IMPUTE_T")]
    t: usize,
    #[arg(long, default_value_t = 2, env = "PANEL_IMPUTE_RANK")]
    rank: usize,
    #[arg(long, default_value_t = 0.3, env = "PANEL_IMPUTE_NOISE")]
    noise: f64,
    #[arg(long, default_value_t = 1.0, env = "PANEL_IMPUTE_FE")]
    fe: f64,
    #[arg(long, default_value_t = 1.0, env = "PANEL_IMPUTE_FACTOR_SCALE")]
    factor_scale: f64,
    #[arg(long, default_value_t = panel_impute::DEFAULT_SEED, env = "PANEL_IMPUTE_SEED")]
    seed: u64,
    #[arg(long, env = "PANEL_IMPUTE_OUTPUT")]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Long,
    Wide,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transform {
    Level,
    Log,
    Growth,
}

#[derive(Clone, Copy, ValueEnum)]
enum ImputeFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchFormat {
    Json,
    Csv,
    #[value(alias = "text-table", alias = "text")]
    Table,
}

enum Failure {
    Usage(String),
    Runtime(MethodError),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

#[derive(Serialize)]
struct ErrorReport {
    error: String,
    message: String,
}

#[derive(Serialize)]
struct MethodOutcome {
    method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    effect: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<ImputationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<MethodError>,
}

#[derive(Serialize)]
struct ImputeReport {
    unit: String,
    period: String,
    transform: OutcomeTransform,
    observed: f64,
    seed: u64,
    fast_mode: bool,
    results: Vec<MethodOutcome>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.jobs {
        Some(0) => Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Failure::from(Error::Config(e.to_string())))
            .and_then(|pool| pool.install(|| run(cli.command))),
        None => run(cli.command),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            let report = ErrorReport {
                error: e.kind,
                message: e.message,
            };
            eprintln!("{}", serde_json::to_string(&report).expect("error report serializes"));
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Impute(args) => impute(args),
        Command::Benchmark(args) => benchmark(args),
        Command::Simulate(args) => simulate(args),
    }
}

fn parse_methods(spec: &str) -> Result<Vec<Method>, Failure> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Method::ALL.to_vec());
    }
    let mut methods = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: Method = name
            .parse()
            .map_err(|e: Error| Failure::Usage(e.to_string()))?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    if methods.is_empty() {
        return Err(Failure::Usage("--method names no methods".into()));
    }
    Ok(methods)
}

fn check_s(s: Option<usize>) -> Result<(), Failure> {
    match s {
        Some(s) if s < 2 => Err(Failure::Usage(format!("--S must be at least 2, got {s}"))),
        _ => Ok(()),
    }
}

fn transform(t: Transform) -> OutcomeTransform {
    match t {
        Transform::Level => OutcomeTransform::Level,
        Transform::Log => OutcomeTransform::Log,
        Transform::Growth => OutcomeTransform::Growth,
    }
}

fn read_panel(args: &InputArgs) -> Result<Panel, Failure> {
    Ok(read_raw_panel(args)?.transform(transform(args.transform))?)
}

fn read_raw_panel(args: &InputArgs) -> Result<Panel, Failure> {
    let layout = match args.format {
        Layout::Long => CsvLayout::Long,
        Layout::Wide => CsvLayout::Wide,
    };
    let panel = if args.input.as_os_str() == "-" {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf)?;
        Panel::from_csv(buf.as_slice(), layout)?
    } else {
        Panel::from_csv(File::open(&args.input)?, layout)?
    };
    Ok(panel)
}

fn write_output(path: &Option<PathBuf>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => File::create(p)?.write_all(bytes)?,
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn impute(args: ImputeArgs) -> Result<(), Failure> {
    let methods = parse_methods(&args.method)?;
    check_s(args.input.s)?;
    let panel = read_panel(&args.input)?;
    let unit = panel
        .unit_index(&args.unit)
        .ok_or_else(|| Failure::Usage(format!("unknown unit `{}`", args.unit)))?;
    let period = panel
        .period_index(&args.period)
        .ok_or_else(|| Failure::Usage(format!("unknown period `{}`", args.period)))?;
    let registry = MethodRegistry::standard(&EstimatorConfig {
        seed: args.input.seed,
        fast_mode: args.input.fast,
        hc_periods: args.input.s,
    });
    let cell = evaluate_cell(&panel, unit, period, &registry, &methods)?;
    let mut first_error = None;
    let results: Vec<MethodOutcome> = cell
        .results
        .into_iter()
        .map(|(method, r)| match r {
            Ok(res) => MethodOutcome {
                method,
                effect: Some(cell.truth - res.value),
                result: Some(res),
                error: None,
            },
            Err(e) => {
                first_error.get_or_insert_with(|| MethodError {
                    kind: e.kind.clone(),
                    message: format!("{method}: {}", e.message),
                });
                MethodOutcome {
                    method,
                    effect: None,
                    result: None,
                    error: Some(e),
                }
            }
        })
        .collect();
    let report = ImputeReport {
        unit: args.unit,
        period: args.period,
        transform: transform(args.input.transform),
        observed: cell.truth,
        seed: args.input.seed,
        fast_mode: args.input.fast,
        results,
    };
    let bytes = match args.output_format {
        ImputeFormat::Json => {
            let mut v = serde_json::to_vec_pretty(&report).map_err(Error::from)?;
            v.push(b'\n');
            v
        }
        ImputeFormat::Csv => impute_csv(&report)?,
    };
    write_output(&args.input.output, &bytes)?;
    match first_error {
        Some(e) => Err(Failure::Runtime(e)),
        None => Ok(()),
    }
}

fn impute_csv(report: &ImputeReport) -> Result<Vec<u8>, Failure> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(["method", "value", "observed", "effect", "complexity", "error"])
            .map_err(Error::from)?;
        for r in &report.results {
            let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            w.write_record([
                r.method.name().to_string(),
                num(r.result.as_ref().map(|x| x.value)),
                report.observed.to_string(),
                num(r.effect),
                num(r.result.as_ref().and_then(|x| x.complexity)),
                r.error.as_ref().map(|e| e.to_string()).unwrap_or_default(),
            ])
            .map_err(Error::from)?;
        }
        w.flush()?;
    }
    Ok(out)
}

fn benchmark(args: BenchmarkArgs) -> Result<(), Failure> {
    let methods = parse_methods(&args.method)?;
    check_s(args.input.s)?;
    if let Some(t0) = args.t0 {
        if t0 < 2 {
            return Err(Failure::Usage(format!("--T0 must be at least 2, got {t0}")));
        }
    }
    let raw = read_raw_panel(&args.input)?;
    let n_periods = raw.transform(transform(args.input.transform))?.n_periods();
    let cfg = BenchmarkConfig {
        methods,
        t0: args.t0,
        transform: transform(args.input.transform),
        hc_periods: args.input.s,
        seed: args.input.seed,
        fast_mode: args.input.fast,
    };
    if let Err(e) = cfg.resolve_t0(n_periods) {
        return Err(Failure::Usage(e.to_string()));
    }
    let report = pseudo_treatment_eval(&raw, &cfg)?;
    let format = match args.output_format {
        BenchFormat::Json => ReportFormat::Json,
        BenchFormat::Csv => ReportFormat::Csv,
        BenchFormat::Table => ReportFormat::Table,
    };
    write_output(&args.input.output, &emit_report(&report, format)?)
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    for (name, v) in [("--noise", args.noise), ("--fe", args.fe), ("--factor-scale", args.factor_scale)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Failure::Usage(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    if args.n < 2 || args.t < 2 {
        return Err(Failure::Usage("--N and --T must be at least 2".into()));
    }
    let panel = generate_synthetic_panel(&SyntheticSpec {
        n_units: args.n,
        n_periods: args.t,
        rank: args.rank,
        factor_scale: args.factor_scale,
        noise_scale: args.noise,
        fe_scale: args.fe,
        seed: args.seed,
    })?;
    let mut bytes = Vec::new();
    panel.write_long_csv(&mut bytes)?;
    write_output(&args.output, &bytes)
}
