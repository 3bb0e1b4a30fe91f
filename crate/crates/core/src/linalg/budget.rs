use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ratio::Ratio;

/// Rank split for one `m x n` matrix: `rank = intermediate_rank + residual_rank`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankBudget {
    /// Matrix scale `m n / (m + n)`: the rank at which factors cost as much
    /// as the dense matrix.
    pub alpha: f64,
    pub rank: usize,
    pub intermediate_rank: usize,
    pub residual_rank: usize,
}

/// Splits the rank allowed by `layer_ratio` into a whitened-truncation part
/// and a residual part of size about `alpha * beta`.
///
/// The target rank is `floor((1 - layer_ratio) * alpha)`, computed exactly.
/// The residual rank is `round(alpha * beta)`, at least 1 when `beta > 0`,
/// and at most `rank - 1` so the whitened stage keeps one component.
pub fn rank_budget(m: usize, n: usize, layer_ratio: Ratio, beta: f64) -> Result<RankBudget> {
    if m == 0 || n == 0 {
        return Err(Error::dimension("rank budget", "positive dims", format!("{m}x{n}")));
    }
    if layer_ratio >= Ratio::ONE {
        return Err(Error::InvalidArgument(format!("layer ratio {layer_ratio} must be below 1")));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta {beta} must lie in [0, 1)")));
    }
    let alpha = (m * n) as f64 / (m + n) as f64;
    let (p, q) = (layer_ratio.numer() as i128, layer_ratio.denom() as i128);
    let (mi, ni) = (m as i128, n as i128);
    let rank = ((q - p) * mi * ni / (q * (mi + ni))) as usize;
    if rank < 1 {
        return Err(Error::InfeasibleBudget { m, n, layer_ratio: layer_ratio.to_string() });
    }
    let floor = if beta > 0.0 { 1 } else { 0 };
    let residual_rank = ((alpha * beta).round() as usize).max(floor).min(rank - 1);
    Ok(RankBudget { alpha, rank, intermediate_rank: rank - residual_rank, residual_rank })
}
