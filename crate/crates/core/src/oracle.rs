//! Brute-force verifiers for the approximation guarantees.
//!
//! The reference sides are computed with nalgebra's Golub–Kahan SVD and
//! triangular solves, not with this crate's Jacobi SVD or the compensation
//! code, so each check compares two independently coded routes.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{default_ridge, whiten, ScalingContext};
use crate::compensation::{compress_matrix, direct_truncate_matrix, CompensationConfig};
use crate::error::{Error, Result};
use crate::linalg::{frobenius_error, rank_budget, svd, truncate, DenseMatrix, FactorPair};
use crate::ratio::Ratio;

/// Absolute tolerance on Frobenius-norm inequalities.
pub const INEQUALITY_TOLERANCE: f64 = 1e-9;
/// Absolute tolerance where two routes must agree exactly in exact arithmetic.
pub const EQUALITY_TOLERANCE: f64 = 1e-10;

fn to_na(m: &DenseMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> DenseMatrix {
    DenseMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]).expect("finite nalgebra result")
}

/// Best rank-`r` approximation by nalgebra's SVD.
fn reference_truncation(a: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut out = DMatrix::zeros(a.nrows(), a.ncols());
    for &k in order.iter().take(r) {
        out += u.column(k) * vt.row(k) * svd.singular_values[k];
    }
    out
}

fn reference_inverse_lower(s: &DMatrix<f64>) -> DMatrix<f64> {
    s.solve_lower_triangular(&DMatrix::identity(s.nrows(), s.ncols())).expect("scaling matrix has positive diagonal")
}

/// `SVD_r(W S) S^{-1}` by the reference route.
fn reference_direct(w: &DMatrix<f64>, s: &DMatrix<f64>, s_inv: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    reference_truncation(&(w * s), r) * s_inv
}

/// Residual-compensated approximation by the reference route.
fn reference_compensated(
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
    s_inv: &DMatrix<f64>,
    r_i: usize,
    r_r: usize,
) -> DMatrix<f64> {
    let w_ri = reference_direct(w, s, s_inv, r_i);
    if r_r == 0 {
        return w_ri;
    }
    let residual = w - &w_ri;
    w_ri + reference_truncation(&residual, r_r)
}

/// Random anisotropic activations for an `n`-wide input, whitened with the
/// default ridge.
pub fn random_scaling_context<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Result<ScalingContext> {
    let samples = 2 * n + rng.random_range(0..2 * n);
    let decay = DenseMatrix::from_fn(n, n, |i, j| {
        let base = if i == j { 1.0 } else { 0.0 };
        base * (1.0 - 0.9 * i as f64 / n as f64)
    })?;
    let mix = DenseMatrix::gaussian(n, n, rng).scale(0.5 / (n as f64).sqrt()).add(&DenseMatrix::identity(n))?;
    let x = DenseMatrix::gaussian(samples, n, rng).matmul(&decay)?.matmul(&mix)?;
    whiten(&x, default_ridge(&x))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationBoundConfig {
    pub trials: usize,
    pub seed: u64,
    pub min_dim: usize,
    pub max_dim: usize,
    pub ratios: Vec<Ratio>,
    pub beta: f64,
    /// Use `S = I` instead of random whitening.
    pub identity_scaling: bool,
}

impl CompensationBoundConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            min_dim: 8,
            max_dim: 64,
            ratios: ["0.2", "0.3", "0.5"].iter().map(|s| s.parse().expect("literal")).collect(),
            beta: 0.05,
            identity_scaling: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationBoundTrial {
    pub trial: usize,
    pub seed: u64,
    pub m: usize,
    pub n: usize,
    pub layer_ratio: Ratio,
    pub rank: usize,
    pub residual_rank: usize,
    /// `‖W − Ŵ_r‖_F` of the library's compensated factors.
    pub compensated_error: f64,
    /// `‖W − SVD_r(WS) S^{-1}‖_F` by the reference route.
    pub direct_error: f64,
    /// `‖W − Ŵ_r‖_F` by the reference route.
    pub reference_compensated_error: f64,
}

impl CompensationBoundTrial {
    pub fn violation(&self) -> f64 {
        self.compensated_error - self.direct_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationBoundReport {
    pub config: CompensationBoundConfig,
    pub tolerance: f64,
    /// Largest `compensated − direct`; non-positive when the inequality holds.
    pub max_violation: f64,
    /// Largest `|compensated − direct|`.
    pub max_gap: f64,
    /// Largest disagreement between library and reference compensated errors.
    pub max_route_disagreement: f64,
    pub violations: Vec<CompensationBoundTrial>,
    pub passed: bool,
}

/// Checks `‖W − Ŵ_r‖_F ≤ ‖W − W_r‖_F` on random `(W, S)` pairs.
pub fn check_compensation_bound(cfg: &CompensationBoundConfig) -> Result<CompensationBoundReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if cfg.ratios.is_empty() || cfg.min_dim == 0 || cfg.min_dim > cfg.max_dim {
        return Err(Error::InvalidArgument("compensation-bound check needs ratios and a valid dim range".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.trials).map(|_| master.random()).collect();
    let trials = seeds.par_iter().enumerate().map(|(t, &s)| bound_trial(cfg, t, s)).collect::<Result<Vec<_>>>()?;

    let max_violation = trials.iter().map(CompensationBoundTrial::violation).fold(f64::NEG_INFINITY, f64::max);
    let max_gap = trials.iter().map(|t| t.violation().abs()).fold(0.0, f64::max);
    let max_route_disagreement =
        trials.iter().map(|t| (t.compensated_error - t.reference_compensated_error).abs()).fold(0.0, f64::max);
    let violations: Vec<CompensationBoundTrial> =
        trials.into_iter().filter(|t| t.violation() > INEQUALITY_TOLERANCE).collect();
    let passed = violations.is_empty() && max_route_disagreement <= INEQUALITY_TOLERANCE;
    Ok(CompensationBoundReport {
        config: cfg.clone(),
        tolerance: INEQUALITY_TOLERANCE,
        max_violation,
        max_gap,
        max_route_disagreement,
        violations,
        passed,
    })
}

fn bound_trial(cfg: &CompensationBoundConfig, trial: usize, seed: u64) -> Result<CompensationBoundTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.random_range(cfg.min_dim..=cfg.max_dim);
    let n = rng.random_range(cfg.min_dim..=cfg.max_dim);
    let layer_ratio = cfg.ratios[trial % cfg.ratios.len()];
    let w = DenseMatrix::gaussian(m, n, &mut rng);
    let ctx = if cfg.identity_scaling { ScalingContext::identity(n) } else { random_scaling_context(&mut rng, n)? };
    let budget = rank_budget(m, n, layer_ratio, cfg.beta)?;

    let ours = compress_matrix(&w, &ctx, &CompensationConfig::new(layer_ratio).with_beta(cfg.beta))?;
    let compensated_error = frobenius_error(&w, &ours.product())?;

    let (wn, sn, sin) = (to_na(&w), to_na(ctx.s()), reference_inverse_lower(&to_na(ctx.s())));
    let direct_error = (&wn - reference_direct(&wn, &sn, &sin, budget.rank)).norm();
    let reference_compensated_error =
        (&wn - reference_compensated(&wn, &sn, &sin, budget.intermediate_rank, budget.residual_rank)).norm();

    Ok(CompensationBoundTrial {
        trial,
        seed,
        m,
        n,
        layer_ratio,
        rank: budget.rank,
        residual_rank: budget.residual_rank,
        compensated_error,
        direct_error,
        reference_compensated_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EckartYoungReport {
    pub trials: usize,
    pub competitors: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Largest `‖W − A_r‖ − ‖W − B‖` over all competitors.
    pub max_violation: f64,
    pub violations: usize,
    pub passed: bool,
}

/// Truncated SVD versus random rank-`r` competitors: half are random
/// products, half are perturbations of the optimum itself.
pub fn check_eckart_young(trials: usize, competitors: usize, seed: u64) -> Result<EckartYoungReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..trials).map(|_| master.random()).collect();
    let per_trial = seeds
        .par_iter()
        .map(|&s| -> Result<Vec<f64>> {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let m = rng.random_range(4..=32);
            let n = rng.random_range(4..=32);
            let r = rng.random_range(1..=m.min(n));
            let w = DenseMatrix::gaussian(m, n, &mut rng);
            let best = truncate(&svd(&w)?, r)?;
            let best_err = frobenius_error(&w, &best.product())?;
            let mut gaps = Vec::with_capacity(competitors);
            for c in 0..competitors {
                let b = if c % 2 == 0 {
                    let scale = w.frobenius_norm() / (m * n) as f64;
                    DenseMatrix::gaussian(m, r, &mut rng)
                        .matmul(&DenseMatrix::gaussian(r, n, &mut rng))?
                        .scale(scale * rng.random_range(0.1..10.0))
                } else {
                    let eps = 10f64.powf(rng.random_range(-4.0..-1.0));
                    let u = best.u_hat().add(&DenseMatrix::gaussian(m, r, &mut rng).scale(eps))?;
                    let v = best.v_hat().add(&DenseMatrix::gaussian(r, n, &mut rng).scale(eps))?;
                    FactorPair::new(u, v)?.product()
                };
                gaps.push(best_err - frobenius_error(&w, &b)?);
            }
            Ok(gaps)
        })
        .collect::<Result<Vec<_>>>()?;
    let gaps: Vec<f64> = per_trial.into_iter().flatten().collect();
    let max_violation = gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let violations = gaps.iter().filter(|&&g| g > INEQUALITY_TOLERANCE).count();
    Ok(EckartYoungReport {
        trials,
        competitors,
        seed,
        tolerance: INEQUALITY_TOLERANCE,
        max_violation,
        violations,
        passed: violations == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaDegenerationReport {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Largest elementwise difference to the library's single-stage path.
    pub max_library_deviation: f64,
    /// Largest elementwise difference to the reference `SVD_r(WS) S^{-1}`.
    pub max_reference_deviation: f64,
    pub passed: bool,
}

/// With `beta = 0` the compensated path must reduce to plain whitened
/// truncation.
pub fn check_beta_degeneration(trials: usize, seed: u64) -> Result<BetaDegenerationReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let ratios: [Ratio; 3] = [Ratio::new(1, 5)?, Ratio::new(3, 10)?, Ratio::new(1, 2)?];
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..trials).map(|_| master.random()).collect();
    let devs = seeds
        .par_iter()
        .enumerate()
        .map(|(t, &s)| -> Result<(f64, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let m = rng.random_range(8..=48);
            let n = rng.random_range(8..=48);
            let w = DenseMatrix::gaussian(m, n, &mut rng);
            let ctx = random_scaling_context(&mut rng, n)?;
            let ratio = ratios[t % ratios.len()];
            let r = rank_budget(m, n, ratio, 0.0)?.rank;
            let ours = compress_matrix(&w, &ctx, &CompensationConfig::new(ratio).with_beta(0.0))?.product();
            let lib = direct_truncate_matrix(&w, &ctx, r)?.product();
            let (wn, sn) = (to_na(&w), to_na(ctx.s()));
            let reference = from_na(&reference_direct(&wn, &sn, &reference_inverse_lower(&sn), r));
            Ok((ours.sub(&lib)?.max_abs(), ours.sub(&reference)?.max_abs()))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_library_deviation = devs.iter().map(|d| d.0).fold(0.0, f64::max);
    let max_reference_deviation = devs.iter().map(|d| d.1).fold(0.0, f64::max);
    Ok(BetaDegenerationReport {
        trials,
        seed,
        tolerance: EQUALITY_TOLERANCE,
        max_library_deviation,
        max_reference_deviation,
        passed: max_library_deviation <= EQUALITY_TOLERANCE && max_reference_deviation <= EQUALITY_TOLERANCE,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub intermediate_rank: usize,
    pub rank: usize,
    /// `max |W_r − (W_{r_i} + Δ)|`.
    pub max_abs_deviation: f64,
    /// `max |Δ|`.
    pub delta_max_abs: f64,
    /// `‖R − R_{r_r}‖_F`.
    pub residual_truncation_error: f64,
    /// `‖R − Δ‖_F`, which equals the direct-truncation error.
    pub residual_delta_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    #[serde(skip)]
    pub delta: Option<DenseMatrix>,
}

/// Verifies `W_r = W_{r_i} + Δ` with `Δ = (SVD_r(WS) − SVD_{r_i}(WS)) S^{-1}`
/// built as an explicit sum of the rank-one terms `r_i..r`, and that the
/// residual's own truncation beats `Δ` as a rank-`(r − r_i)` fit of `R`.
pub fn check_delta_decomposition(w: &DenseMatrix, ctx: &ScalingContext, r_i: usize, r: usize) -> Result<DeltaReport> {
    let (m, n) = w.shape();
    if r_i == 0 || r_i > r || r > m.min(n) {
        return Err(Error::InvalidArgument(format!("need 1 <= r_i <= r <= {}, got r_i = {r_i}, r = {r}", m.min(n))));
    }
    if ctx.dim() != n {
        return Err(Error::dimension("scaling context", n, ctx.dim()));
    }
    let f = svd(&w.matmul(ctx.s())?)?;
    let w_r = truncate(&f, r)?.product().matmul(ctx.s_inv())?;
    let w_ri = truncate(&f, r_i)?.product().matmul(ctx.s_inv())?;

    let mut tail = DenseMatrix::zeros(m, n);
    for k in r_i..r {
        let sigma = f.sigma()[k];
        let uk = f.u().column(k);
        let vk = f.vt().row(k).to_vec();
        tail = tail.add(&DenseMatrix::from_fn(m, n, |i, j| sigma * uk[i] * vk[j])?)?;
    }
    let delta = tail.matmul(ctx.s_inv())?;
    let max_abs_deviation = w_r.sub(&w_ri.add(&delta)?)?.max_abs();

    let residual = w.sub(&w_ri)?;
    let residual_truncation_error = if r > r_i {
        frobenius_error(&residual, &truncate(&svd(&residual)?, r - r_i)?.product())?
    } else {
        residual.frobenius_norm()
    };
    let residual_delta_error = frobenius_error(&residual, &delta)?;
    let passed = max_abs_deviation <= INEQUALITY_TOLERANCE
        && residual_truncation_error <= residual_delta_error + INEQUALITY_TOLERANCE;
    Ok(DeltaReport {
        intermediate_rank: r_i,
        rank: r,
        max_abs_deviation,
        delta_max_abs: delta.max_abs(),
        residual_truncation_error,
        residual_delta_error,
        tolerance: INEQUALITY_TOLERANCE,
        passed,
        delta: Some(delta),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacReport {
    pub width: usize,
    pub n_layers: usize,
    pub overall_ratio: Ratio,
    pub k: usize,
    pub rank: usize,
    pub original_macs: u64,
    pub compressed_macs: u64,
    pub ratio: f64,
    pub expected: f64,
    pub slack: f64,
    pub passed: bool,
}

/// Counts multiply-accumulates of an instrumented forward pass over a
/// uniform `width x width` model whose last `k` layers are factored at
/// `N R_o / k`, and checks the ratio lies in `[1 − R_o − slack, 1 − R_o]`
/// with `slack = (m + n) / (m n)`.
pub fn check_mac_formula(
    width: usize,
    n_layers: usize,
    overall_ratio: Ratio,
    k: usize,
    seed: u64,
) -> Result<MacReport> {
    if width == 0 || n_layers == 0 || k == 0 || k > n_layers {
        return Err(Error::InvalidArgument(format!("invalid MAC check: width {width}, {n_layers} layers, k = {k}")));
    }
    let layer_ratio = overall_ratio
        .mul_int(n_layers)
        .and_then(|r| r.div_int(k))
        .ok_or_else(|| Error::InvalidArgument("ratio overflow".into()))?;
    let rank = rank_budget(width, width, layer_ratio, 0.0)?.rank;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = 3;
    let x = DenseMatrix::gaussian(batch, width, &mut rng);
    let mut original_macs = 0u64;
    let mut compressed_macs = 0u64;
    let mut h_orig = x.clone();
    let mut h_comp = x;
    for layer in 0..n_layers {
        let w = DenseMatrix::gaussian(width, width, &mut rng).scale(1.0 / (width as f64).sqrt());
        h_orig = counted_product(&h_orig, &w, &mut original_macs);
        if layer >= n_layers - k {
            let f = truncate(&svd(&w)?, rank)?;
            let inner = counted_product(&h_comp, f.v_hat(), &mut compressed_macs);
            h_comp = counted_product(&inner, f.u_hat(), &mut compressed_macs);
        } else {
            h_comp = counted_product(&h_comp, &w, &mut compressed_macs);
        }
    }
    let ratio = compressed_macs as f64 / original_macs as f64;
    let expected = 1.0 - overall_ratio.to_f64();
    let slack = (2 * width) as f64 / (width * width) as f64;
    // exact rational comparison for the upper bound
    let upper_ok = (compressed_macs as i128) * (overall_ratio.denom() as i128)
        <= (original_macs as i128) * ((overall_ratio.denom() - overall_ratio.numer()) as i128);
    let passed = upper_ok && ratio >= expected - slack - 1e-15;
    Ok(MacReport {
        width,
        n_layers,
        overall_ratio,
        k,
        rank,
        original_macs,
        compressed_macs,
        ratio,
        expected,
        slack,
        passed,
    })
}

/// `x w^T` by explicit loops, counting one MAC per multiply-add.
fn counted_product(x: &DenseMatrix, w: &DenseMatrix, macs: &mut u64) -> DenseMatrix {
    let (b, n) = x.shape();
    let m = w.rows();
    assert_eq!(w.cols(), n);
    let mut out = vec![0.0; b * m];
    for s in 0..b {
        for o in 0..m {
            let mut acc = 0.0;
            for i in 0..n {
                acc += x.get(s, i) * w.get(o, i);
                *macs += 1;
            }
            out[s * m + o] = acc;
        }
    }
    DenseMatrix::new(b, m, out).expect("finite")
}
