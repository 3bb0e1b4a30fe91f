//! Two-stage truncation with residual compensation.
//!
//! Stage one truncates the whitened matrix `W S` to `r_i` components and maps
//! back with `S^{-1}`. Stage two takes the best rank-`r_r` approximation of
//! the residual `R = W − W_{r_i}` in the original (unwhitened) space. The two
//! factor pairs are concatenated into one rank-`r` pair.

use serde::{Deserialize, Serialize};

use crate::calibration::ScalingContext;
use crate::error::{Error, Result};
use crate::linalg::{rank_budget, svd_labeled, truncate, DenseMatrix, FactorPair, RankBudget};
use crate::ratio::Ratio;

pub const DEFAULT_BETA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensationConfig {
    pub layer_ratio: Ratio,
    /// Fraction of the matrix scale given to the residual stage.
    pub beta: f64,
}

impl CompensationConfig {
    pub fn new(layer_ratio: Ratio) -> Self {
        Self { layer_ratio, beta: DEFAULT_BETA }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

/// Every intermediate of one compensated compression.
#[derive(Debug, Clone)]
pub struct CompensationStages {
    pub budget: RankBudget,
    /// Factors of `SVD_{r_i}(W S) S^{-1}`.
    pub intermediate: FactorPair,
    /// `W − W_{r_i}`.
    pub residual: DenseMatrix,
    /// Best rank-`r_r` factors of the residual; `None` when `r_r = 0`.
    pub residual_factors: Option<FactorPair>,
    pub combined: FactorPair,
}

pub fn compress_matrix(w: &DenseMatrix, ctx: &ScalingContext, cfg: &CompensationConfig) -> Result<FactorPair> {
    Ok(compress_matrix_staged(w, ctx, cfg)?.combined)
}

pub fn compress_matrix_staged(
    w: &DenseMatrix,
    ctx: &ScalingContext,
    cfg: &CompensationConfig,
) -> Result<CompensationStages> {
    let (m, n) = w.shape();
    let budget = rank_budget(m, n, cfg.layer_ratio, cfg.beta)?;
    compress_with_budget(w, ctx, budget)
}

/// Runs both stages with an explicit rank split. The budget must satisfy
/// `intermediate_rank >= 1` and `rank <= min(m, n)`.
pub fn compress_with_budget(w: &DenseMatrix, ctx: &ScalingContext, budget: RankBudget) -> Result<CompensationStages> {
    let (m, n) = w.shape();
    if budget.intermediate_rank == 0
        || budget.intermediate_rank + budget.residual_rank != budget.rank
        || budget.rank > m.min(n)
    {
        return Err(Error::InvalidArgument(format!(
            "inconsistent rank budget {}+{}={} for {m}x{n} matrix",
            budget.intermediate_rank, budget.residual_rank, budget.rank
        )));
    }
    let intermediate = whitened_truncation(w, ctx, budget.intermediate_rank)?;
    let residual = w.sub(&intermediate.product())?;
    let (residual_factors, combined) = if budget.residual_rank > 0 {
        let f = truncate(&svd_labeled(&residual, "residual matrix")?, budget.residual_rank)?;
        let combined = intermediate.concat(&f)?;
        (Some(f), combined)
    } else {
        (None, intermediate.clone())
    };
    Ok(CompensationStages { budget, intermediate, residual, residual_factors, combined })
}

/// Single-stage baseline `SVD_r(W S) S^{-1}` in factored form.
pub fn direct_truncate_matrix(w: &DenseMatrix, ctx: &ScalingContext, r: usize) -> Result<FactorPair> {
    whitened_truncation(w, ctx, r)
}

/// `S^{-1}` is folded into the right factor: `v_hat = sqrt(S_r) V_r^T S^{-1}`.
fn whitened_truncation(w: &DenseMatrix, ctx: &ScalingContext, r: usize) -> Result<FactorPair> {
    if ctx.dim() != w.cols() {
        return Err(Error::dimension("scaling context", w.cols(), ctx.dim()));
    }
    let ws = w.matmul(ctx.s())?;
    let f = truncate(&svd_labeled(&ws, "whitened weight matrix")?, r)?;
    let out = f.map_right(ctx.s_inv())?;
    if !out.v_hat().is_finite() {
        return Err(Error::numerical("whitened truncation", "S^-1 produced non-finite factors"));
    }
    Ok(out)
}

impl RankBudget {
    /// A budget with an explicit split, bypassing the ratio formula.
    pub fn explicit(m: usize, n: usize, intermediate_rank: usize, residual_rank: usize) -> Result<Self> {
        let rank = intermediate_rank + residual_rank;
        if intermediate_rank == 0 || rank > m.min(n) {
            return Err(Error::InvalidRank { rank, max: m.min(n) });
        }
        Ok(RankBudget { alpha: (m * n) as f64 / (m + n) as f64, rank, intermediate_rank, residual_rank })
    }
}
