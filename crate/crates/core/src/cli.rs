//! Command-line front end. [`run`] returns the process exit code:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | `verify` ran and at least one check failed |
//! | 2 | bad arguments, unreadable or malformed input |
//! | 3 | infeasible ratio or plan |
//! | 4 | numerical failure |

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::calibration::{CalibrationSet, Ridge, DEFAULT_CALIBRATION_SAMPLES, DEFAULT_RELATIVE_RIDGE};
use crate::compensation::DEFAULT_BETA;
use crate::demo::{self, DemoSpec};
use crate::error::{Error, ErrorKind, Result};
use crate::io::{self, ModelBundle};
use crate::linalg::DenseMatrix;
use crate::model::{layerwise_error, Activation, ReportConfig};
use crate::oracle::{self, CompensationBoundConfig};
use crate::planner::{self, PlannerConfig};
use crate::ratio::Ratio;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Environment variable fixing the worker-thread count.
pub const THREADS_ENV: &str = "ERC_THREADS";

/// Crate version plus `git describe` of the build.
pub fn tool_version() -> String {
    format!("{} {} ({})", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"), env!("RESIDUAL_SVD_GIT_DESCRIBE"))
}

#[derive(Debug, Parser)]
#[command(name = "residual-svd", version, about = "Low-rank compression with residual compensation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded demo model and calibration pool.
    GenDemo(GenDemoArgs),
    /// Plan and compress a model, writing the model, plan.json and errors.csv.
    Compress(CompressArgs),
    /// Print the candidate table of the tail-layer search as CSV.
    Plan(PlanArgs),
    /// Layer-wise relative errors of a compressed model against the original.
    Analyze(AnalyzeArgs),
    /// Run the numerical self-checks and emit a JSON report.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CalibFormat {
    Csv,
    Bin,
}

#[derive(Debug, Args)]
struct GenDemoArgs {
    #[arg(long)]
    out_model: PathBuf,
    #[arg(long)]
    out_calib: PathBuf,
    #[arg(long, default_value_t = 8)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "relu")]
    activation: Activation,
    #[arg(long, value_enum, default_value = "bin")]
    format: CalibFormat,
}

/// Options shared by `compress` and `plan`.
#[derive(Debug, Args)]
struct PlanOptions {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Overall compression ratio, e.g. `0.2`, `1/5` or `20%`.
    #[arg(long)]
    ratio: Ratio,
    #[arg(long, default_value_t = DEFAULT_BETA)]
    beta: f64,
    /// Spacing of candidate tail lengths.
    #[arg(long, default_value_t = 1)]
    step: usize,
    /// Calibration rows drawn from the pool.
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Ridge relative to the mean diagonal of `X^T X`.
    #[arg(long, default_value_t = DEFAULT_RELATIVE_RIDGE, conflicts_with = "ridge_abs")]
    ridge: f64,
    /// Absolute ridge added to `X^T X`.
    #[arg(long)]
    ridge_abs: Option<f64>,
}

#[derive(Debug, Args)]
struct CompressArgs {
    #[command(flatten)]
    opts: PlanOptions,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlanArgs {
    #[command(flatten)]
    opts: PlanOptions,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    compressed: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the full report, including the run configuration, as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Everything that determines a `compress` / `plan` result.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: String,
    pub calibration: String,
    pub overall_ratio: Ratio,
    pub beta: f64,
    pub step: usize,
    pub calibration_samples: usize,
    pub seed: u64,
    pub ridge: Ridge,
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Diagnostics go to stderr as a single line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                // --help / --version
                let _ = e.print();
                return EXIT_OK;
            }
            let rendered = e.render().to_string();
            eprintln!("{}", rendered.lines().find(|l| !l.trim().is_empty()).unwrap_or("error: invalid arguments"));
            return EXIT_INPUT;
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_INPUT;
    }
    let outcome = match cli.command {
        Command::GenDemo(a) => gen_demo(a).map(|()| EXIT_OK),
        Command::Compress(a) => compress(a).map(|()| EXIT_OK),
        Command::Plan(a) => plan(a).map(|()| EXIT_OK),
        Command::Analyze(a) => analyze(a).map(|()| EXIT_OK),
        Command::Verify(a) => verify(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Input => EXIT_INPUT,
        ErrorKind::Infeasible => EXIT_INFEASIBLE,
        ErrorKind::Numerical => EXIT_NUMERICAL,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // Fails only if a pool already exists (e.g. repeated calls in tests).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn gen_demo(a: GenDemoArgs) -> Result<()> {
    let spec = DemoSpec {
        layers: a.layers,
        width: a.width,
        samples: a.samples,
        seed: a.seed,
        activation: a.activation,
        ..DemoSpec::default()
    };
    let demo = demo::generate(&spec)?;
    let mut bundle = ModelBundle::new(demo.model);
    bundle.metadata.insert("generator".into(), to_value(&spec));
    bundle.metadata.insert("forward_checksum".into(), json!(demo.forward_checksum));
    bundle.metadata.insert("tool_version".into(), json!(tool_version()));
    io::save_model_dir(&a.out_model, &bundle)?;
    match a.format {
        CalibFormat::Csv => io::write_calibration_csv(&a.out_calib, &demo.calibration)?,
        CalibFormat::Bin => io::write_calibration_bin(&a.out_calib, &demo.calibration)?,
    }
    info!("demo written to {} and {}", a.out_model.display(), a.out_calib.display());
    Ok(())
}

struct Prepared {
    bundle: ModelBundle,
    calib: CalibrationSet,
    planner: PlannerConfig,
    run: RunConfig,
}

fn prepare(o: &PlanOptions) -> Result<Prepared> {
    let bundle = io::load_model_dir(&o.model)?;
    let calib = load_calibration(&o.calib, o.samples, o.seed)?;
    let ridge = match o.ridge_abs {
        Some(r) if r.is_finite() && r >= 0.0 => Ridge::Absolute(r),
        Some(r) => return Err(Error::InvalidArgument(format!("ridge {r} must be finite and non-negative"))),
        None if o.ridge.is_finite() && o.ridge >= 0.0 => Ridge::Relative(o.ridge),
        None => return Err(Error::InvalidArgument(format!("ridge {} must be finite and non-negative", o.ridge))),
    };
    let mut planner = PlannerConfig::new(o.ratio).with_step(o.step).with_beta(o.beta).with_seed(o.seed);
    planner.ridge = ridge;
    let run = RunConfig {
        model: o.model.display().to_string(),
        calibration: o.calib.display().to_string(),
        overall_ratio: o.ratio,
        beta: o.beta,
        step: o.step,
        calibration_samples: calib.num_samples(),
        seed: o.seed,
        ridge,
    };
    Ok(Prepared { bundle, calib, planner, run })
}

fn load_calibration(path: &Path, samples: usize, seed: u64) -> Result<CalibrationSet> {
    if samples == 0 {
        return Err(Error::InvalidArgument("--samples must be positive".into()));
    }
    let pool = io::read_calibration(path)?;
    CalibrationSet::sample_from(&pool, samples, seed, path.display().to_string())
}

fn compress(a: CompressArgs) -> Result<()> {
    let p = prepare(&a.opts)?;
    let (compressed, plan) = planner::run(&p.bundle.model, &p.calib, &p.planner)?;
    info!("chose k = {} at layer ratio {}", plan.k, plan.layer_ratio);

    let report = layerwise_error(&p.bundle.model, &compressed, &p.calib)?;
    let budget = budget_summary(&p.bundle.model, &compressed, plan.overall_ratio);
    let mut bundle = ModelBundle::new(compressed);
    bundle.metadata.insert(
        "compression".into(),
        json!({
            "n_layers": plan.n_layers,
            "overall_ratio": plan.overall_ratio,
            "k": plan.k,
            "layer_ratio": plan.layer_ratio,
            "chosen_error": plan.chosen_error,
            "budget": budget,
        }),
    );
    bundle.metadata.insert("run_config".into(), to_value(&p.run));
    bundle.metadata.insert("tool_version".into(), json!(tool_version()));
    io::save_model_dir(&a.out, &bundle)?;

    let plan_json = json!({
        "tool_version": tool_version(),
        "run_config": p.run,
        "plan": plan,
        "budget": budget,
    });
    write_json(&a.out.join("plan.json"), &plan_json)?;
    write_text(&a.out.join("errors.csv"), &io::layerwise_csv(&report))
}

/// Achieved parameter and per-row MAC counts. Rank flooring can only keep
/// fewer parameters than `1 − R_o` allows; the shortfall is reported here.
fn budget_summary(
    original: &crate::model::SequentialModel,
    compressed: &crate::model::SequentialModel,
    overall_ratio: Ratio,
) -> Value {
    let (p0, p1) = (original.parameter_count(), compressed.parameter_count());
    let (m0, m1) = (original.mac_count(1), compressed.mac_count(1));
    let target = 1.0 - overall_ratio.to_f64();
    json!({
        "original_parameters": p0,
        "compressed_parameters": p1,
        "parameter_ratio": p1 as f64 / p0 as f64,
        "target_ratio": target,
        "parameter_shortfall": target - p1 as f64 / p0 as f64,
        "original_macs_per_row": m0,
        "compressed_macs_per_row": m1,
        "mac_ratio": m1 as f64 / m0 as f64,
    })
}

fn plan(a: PlanArgs) -> Result<()> {
    let p = prepare(&a.opts)?;
    let plan = planner::plan(&p.bundle.model, &p.calib, &p.planner)?;
    emit(a.out.as_deref(), &io::candidate_table_csv(&plan.candidate_table))
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let original = io::load_model_dir(&a.original)?;
    let compressed = io::load_model_dir(&a.compressed)?;
    let calib = load_calibration(&a.calib, a.samples, a.seed)?;
    let report = layerwise_error(&original.model, &compressed.model, &calib)?;
    let summary = compressed.metadata.get("compression");
    let field = |key: &str| summary.and_then(|s| s.get(key)).cloned();
    let config = ReportConfig {
        overall_ratio: field("overall_ratio").and_then(|v| serde_json::from_value(v).ok()),
        k: field("k").and_then(|v| v.as_u64()).map(|k| k as usize),
        beta: compressed.metadata.get("run_config").and_then(|c| c.get("beta")).and_then(Value::as_f64),
        seed: Some(a.seed),
    };
    let report = report.with_config(config);
    if let Some(path) = &a.json {
        write_json(path, &to_value(&report))?;
    }
    emit(a.out.as_deref(), &io::layerwise_csv(&report))
}

#[derive(Debug, Serialize)]
struct Suite {
    name: &'static str,
    passed: bool,
    report: Value,
}

fn verify(a: VerifyArgs) -> Result<i32> {
    if a.trials == 0 {
        return Err(Error::InvalidArgument("--trials must be at least 1".into()));
    }
    let mut suites = Vec::new();
    let mut push = |name, passed, report: Value| suites.push(Suite { name, passed, report });

    let bound = oracle::check_compensation_bound(&CompensationBoundConfig::new(a.trials, a.seed))?;
    push("compensation_bound", bound.passed, to_value(&bound));

    let beta0 = oracle::check_compensation_bound(&CompensationBoundConfig {
        beta: 0.0,
        ..CompensationBoundConfig::new(a.trials, a.seed)
    })?;
    let beta0_passed = beta0.passed && beta0.max_gap <= oracle::EQUALITY_TOLERANCE * 10.0;
    push("beta_zero", beta0_passed, to_value(&beta0));

    let ident = oracle::check_compensation_bound(&CompensationBoundConfig {
        identity_scaling: true,
        ..CompensationBoundConfig::new(a.trials, a.seed)
    })?;
    push("identity_scaling", ident.passed, to_value(&ident));

    let ey = oracle::check_eckart_young(a.trials, 20, a.seed)?;
    push("eckart_young", ey.passed, to_value(&ey));

    let bd = oracle::check_beta_degeneration(a.trials.min(50), a.seed)?;
    push("beta_degeneration", bd.passed, to_value(&bd));

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut deltas = Vec::new();
    for (m, n, r_i, r) in [(24, 24, 4, 6), (32, 20, 6, 9), (16, 40, 3, 5)] {
        let w = DenseMatrix::gaussian(m, n, &mut rng);
        let ctx = oracle::random_scaling_context(&mut rng, n)?;
        deltas.push(oracle::check_delta_decomposition(&w, &ctx, r_i, r)?);
    }
    push("delta", deltas.iter().all(|d| d.passed), to_value(&deltas));

    let mut macs = Vec::new();
    for (ratio, ks) in [("1/5", [2, 4, 8]), ("1/4", [3, 4, 8]), ("1/2", [5, 6, 8])] {
        let ratio: Ratio = ratio.parse()?;
        for k in ks {
            macs.push(oracle::check_mac_formula(64, 8, ratio, k, a.seed)?);
        }
    }
    push("mac", macs.iter().all(|m| m.passed), to_value(&macs));

    let passed = suites.iter().all(|s| s.passed);
    let out = json!({
        "tool_version": tool_version(),
        "trials": a.trials,
        "seed": a.seed,
        "passed": passed,
        "suites": suites,
    });
    match &a.out {
        Some(path) => write_json(path, &out)?,
        None => emit(None, &pretty(&out))?,
    }
    for s in &suites {
        eprintln!("{:<18} {}", s.name, if s.passed { "ok" } else { "FAILED" });
    }
    Ok(if passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    write_text(path, &pretty(v))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    io::write_file(path, text.as_bytes())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_text(path, text),
        None => std::io::stdout().lock().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}
