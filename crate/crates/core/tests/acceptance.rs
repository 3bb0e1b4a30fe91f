//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! fails. Run with `cargo test -p residual-svd --test acceptance`.

use std::path::Path;
use std::time::{Duration, Instant};

use residual_svd::calibration::{CalibrationSet, Ridge};
use residual_svd::demo::{self, DemoSpec};
use residual_svd::model::{layerwise_error, relative_error, SequentialModel};
use residual_svd::oracle::{self, CompensationBoundConfig, INEQUALITY_TOLERANCE};
use residual_svd::planner::{
    self, enumerate_candidates, enumerate_feasible_candidates, CompressionPlan, PlannerConfig,
};
use residual_svd::{io, Ratio, Result};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Result<Outcome> {
    Ok(Outcome { passed, detail: detail.into() })
}

fn ratio(s: &str) -> Ratio {
    s.parse().expect("ratio literal")
}

fn demo_set(spec: &DemoSpec) -> Result<(SequentialModel, CalibrationSet)> {
    let d = demo::generate(spec)?;
    let calib = CalibrationSet::new(d.calibration, spec.seed, "demo")?;
    Ok((d.model, calib))
}

fn final_error(original: &SequentialModel, compressed: &SequentialModel, calib: &CalibrationSet) -> Result<f64> {
    let y = original.forward(calib.samples())?.pop().expect("layers");
    let y_hat = compressed.forward(calib.samples())?.pop().expect("layers");
    Ok(relative_error(&y_hat, &y)?.expect("non-zero reference output"))
}

fn compensation_bound() -> Result<Outcome> {
    let start = Instant::now();
    let report = oracle::check_compensation_bound(&CompensationBoundConfig::new(100, 2024))?;
    let elapsed = start.elapsed();
    let ok = report.passed && report.max_violation <= INEQUALITY_TOLERANCE && elapsed < Duration::from_secs(30);
    outcome(
        ok,
        format!(
            "100 trials, max violation {:.3e}, {} violations, {:.2?}",
            report.max_violation,
            report.violations.len(),
            elapsed
        ),
    )
}

fn eckart_young() -> Result<Outcome> {
    let report = oracle::check_eckart_young(100, 20, 2024)?;
    outcome(
        report.passed && report.violations == 0,
        format!("100 trials x 20 competitors, {} violations", report.violations),
    )
}

fn beta_degeneration() -> Result<Outcome> {
    let report = oracle::check_beta_degeneration(50, 2024)?;
    outcome(
        report.passed,
        format!(
            "50 matrices, max deviation {:.3e} (library) / {:.3e} (reference)",
            report.max_library_deviation, report.max_reference_deviation
        ),
    )
}

fn budget_arithmetic() -> Result<Outcome> {
    let cfg = PlannerConfig::new(ratio("0.2"));
    let ks: Vec<usize> = enumerate_candidates(32, &cfg)?.iter().map(|c| c.k).collect();
    let exact_set = ks == (7..=31).collect::<Vec<_>>();
    let mut identity = true;
    let mut plans = 0;
    for n in 1..=32 {
        for r in ["0.05", "0.2", "0.25", "1/3", "0.5", "0.7"] {
            let cfg = PlannerConfig::new(ratio(r));
            let Ok(cands) = enumerate_candidates(n, &cfg) else { continue };
            for c in cands {
                let plan = CompressionPlan::fixed(n, cfg.overall_ratio, c.k)?;
                identity &= plan.budget_identity_holds() && plan.layer_ratio == c.layer_ratio;
                plans += 1;
            }
        }
    }
    outcome(
        exact_set && identity,
        format!("k in {}..={} ({} values), identity exact over {plans} plans", ks[0], ks[ks.len() - 1], ks.len()),
    )
}

fn accounting() -> Result<Outcome> {
    let start = Instant::now();
    let (model, calib) = demo_set(&DemoSpec::default())?;
    let (m, n) = (64.0, 64.0);
    let slack = (m + n) / (m * n);
    let batch = calib.num_samples();
    let mut ok = true;
    let mut worst = Vec::new();
    for r in ["0.2", "0.25", "0.5"] {
        let cfg = PlannerConfig::new(ratio(r));
        let r_o = cfg.overall_ratio.to_f64();
        let (lo, hi) = (1.0 - r_o - slack, 1.0 - r_o);
        let (planned, plan) = planner::run(&model, &calib, &cfg)?;
        let mut models = vec![(plan.k, planned)];
        for c in enumerate_feasible_candidates(&model, &cfg)? {
            if c.k != plan.k {
                let fixed = CompressionPlan::fixed(8, cfg.overall_ratio, c.k)?;
                models.push((c.k, planner::compress_model(&model, &calib, &fixed, cfg.beta, cfg.ridge)?));
            }
        }
        let uniform = CompressionPlan::fixed(8, cfg.overall_ratio, 8)?;
        models.push((8, planner::compress_model(&model, &calib, &uniform, cfg.beta, cfg.ridge)?));
        let mut min_p = f64::INFINITY;
        for (_, c) in &models {
            let p = c.parameter_count() as f64 / model.parameter_count() as f64;
            let mac = c.mac_count(batch) as f64 / model.mac_count(batch) as f64;
            ok &= (lo..=hi).contains(&p) && (lo..=hi).contains(&mac);
            min_p = min_p.min(p.min(mac));
        }
        worst.push(format!("R_o={r}: k*={} band [{lo:.5}, {hi:.5}] min {min_p:.5}", plan.k));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(5);
    outcome(ok, format!("{}; {elapsed:.2?}", worst.join("; ")))
}

fn planner_brute_force() -> Result<Outcome> {
    let mut mismatches = Vec::new();
    for seed in 0..10u64 {
        let spec = DemoSpec {
            layers: 3 + (seed as usize % 6),
            width: 12 + 4 * (seed as usize % 3),
            samples: 64,
            seed,
            ..DemoSpec::default()
        };
        let (model, calib) = demo_set(&spec)?;
        let cfg = PlannerConfig::new(ratio(["0.2", "0.25", "0.3"][seed as usize % 3]));
        let plan = planner::plan(&model, &calib, &cfg)?;
        let mut best: Option<(usize, f64)> = None;
        for c in enumerate_feasible_candidates(&model, &cfg)? {
            let fixed = CompressionPlan::fixed(model.num_layers(), cfg.overall_ratio, c.k)?;
            let compressed = planner::compress_model(&model, &calib, &fixed, cfg.beta, cfg.ridge)?;
            let err = final_error(&model, &compressed, &calib)?;
            if best.is_none_or(|(_, b)| err < b - planner::TIE_TOLERANCE) {
                best = Some((c.k, err));
            }
        }
        if best.map(|b| b.0) != Some(plan.k) {
            mismatches.push(format!("seed {seed}: planned {} vs brute force {best:?}", plan.k));
        }
    }
    outcome(
        mismatches.is_empty(),
        format!(
            "10 seeds, {} mismatches{}",
            mismatches.len(),
            mismatches.iter().map(|m| format!("; {m}")).collect::<String>()
        ),
    )
}

fn prefix_exact() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut reports = 0;
    for seed in [3u64, 7] {
        let (model, calib) = demo_set(&DemoSpec { seed, width: 32, samples: 128, ..DemoSpec::default() })?;
        for r in ["0.1", "0.2", "0.25", "0.5"] {
            let cfg = PlannerConfig::new(ratio(r));
            for c in enumerate_feasible_candidates(&model, &cfg)? {
                let plan = CompressionPlan::fixed(8, cfg.overall_ratio, c.k)?;
                let compressed = planner::compress_model(&model, &calib, &plan, cfg.beta, Ridge::default())?;
                let report = layerwise_error(&model, &compressed, &calib)?;
                for e in &report.per_layer[..plan.first_compressed()] {
                    worst = worst.max(e.relative_error.unwrap_or(f64::INFINITY));
                }
                reports += 1;
            }
        }
    }
    outcome(worst <= 1e-12, format!("{reports} reports, max prefix error {worst:.3e}"))
}

fn demo_trend() -> Result<Outcome> {
    let (model, calib) = demo_set(&DemoSpec::default())?;
    let cfg = PlannerConfig::new(ratio("0.2"));
    let (tail, plan) = planner::run(&model, &calib, &cfg)?;
    let uniform_plan = CompressionPlan::fixed(8, cfg.overall_ratio, 8)?;
    let uniform = planner::compress_model(&model, &calib, &uniform_plan, cfg.beta, cfg.ridge)?;
    let tail_err = final_error(&model, &tail, &calib)?;
    let uniform_err = final_error(&model, &uniform, &calib)?;
    outcome(tail_err < uniform_err, format!("tail k={} error {tail_err:.6} vs uniform error {uniform_err:.6}", plan.k))
}

fn run_cli(args: &[&str]) -> i32 {
    residual_svd::cli::run(std::iter::once("residual-svd").chain(args.iter().copied()))
}

fn dir_bytes(dir: &Path) -> std::io::Result<Vec<(String, Vec<u8>)>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        files.push((entry.file_name().to_string_lossy().into_owned(), std::fs::read(entry.path())?));
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Result<Outcome> {
    let tmp = tempfile::tempdir().expect("temp dir");
    let p = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    let (model, calib, a, b) = (p("model"), p("calib.bin"), p("out-a"), p("out-b"));
    let mut codes = vec![run_cli(&["gen-demo", "--out-model", &model, "--out-calib", &calib, "--seed", "7"])];
    for out in [&a, &b] {
        codes.push(run_cli(&[
            "compress",
            "--model",
            &model,
            "--calib",
            &calib,
            "--ratio",
            "0.2",
            "--seed",
            "11",
            "--samples",
            "200",
            "--out",
            out,
        ]));
    }
    let (fa, fb) = (dir_bytes(Path::new(&a)).expect("read a"), dir_bytes(Path::new(&b)).expect("read b"));
    let identical = fa == fb && !fa.is_empty();
    let loaded = io::load_model_dir(Path::new(&a))?;
    outcome(
        codes.iter().all(|&c| c == 0) && identical && loaded.model.num_layers() == 8,
        format!("exit codes {codes:?}, {} files, identical: {identical}", fa.len()),
    )
}

type Check = fn() -> Result<Outcome>;

fn main() {
    let criteria: [(&str, Check); 9] = [
        ("residual compensation never worse than direct truncation", compensation_bound),
        ("truncated SVD beats random rank-r competitors", eckart_young),
        ("beta = 0 equals single-stage whitened truncation", beta_degeneration),
        ("candidate set and exact budget identity", budget_arithmetic),
        ("parameter and MAC ratios within the flooring band", accounting),
        ("planner matches brute force", planner_brute_force),
        ("uncompressed prefix layers are exact", prefix_exact),
        ("demo: tail-k beats uniform compression", demo_trend),
        ("compress is byte-for-byte deterministic", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (passed, detail) = match check() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!passed);
        println!("criterion {} {}: {name} — {detail}", i + 1, if passed { "PASS" } else { "FAIL" });
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
