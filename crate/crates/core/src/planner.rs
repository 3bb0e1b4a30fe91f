//! Tail-layer compression planning.
//!
//! Under an overall ratio `R_o` on an `N`-layer model, compressing only the
//! last `k` layers at `R_l = N R_o / k` removes the same share of parameters
//! while leaving the first `N − k` layers exact. The planner tries every
//! `k ∈ {s, 2s, …, N − s}` with `R_l < 1`, compresses a trial copy, and keeps
//! the `k` with the smallest final-layer error on the calibration batch.

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{capture_activations, whiten_labeled, CalibrationSet, Ridge, ScalingContext};
use crate::compensation::{compress_matrix, CompensationConfig, DEFAULT_BETA};
use crate::error::{Error, Result};
use crate::linalg::rank_budget;
use crate::model::{relative_error, Dtype, SequentialModel, Weight};
use crate::ratio::Ratio;

/// Candidates whose errors differ by at most this much count as tied; the
/// smaller `k` wins.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub overall_ratio: Ratio,
    pub step: usize,
    pub beta: f64,
    pub seed: u64,
    #[serde(default)]
    pub ridge: Ridge,
}

impl PlannerConfig {
    pub fn new(overall_ratio: Ratio) -> Self {
        Self { overall_ratio, step: 1, beta: DEFAULT_BETA, seed: 0, ridge: Ridge::default() }
    }

    pub fn with_step(mut self, step: usize) -> Self {
        self.step = step;
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.overall_ratio.is_zero() || self.overall_ratio >= Ratio::ONE {
            return Err(Error::InvalidArgument(format!("overall ratio {} must lie in (0, 1)", self.overall_ratio)));
        }
        if self.step == 0 {
            return Err(Error::InvalidArgument("step must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!("beta {} must lie in [0, 1)", self.beta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub k: usize,
    pub layer_ratio: Ratio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub k: usize,
    pub layer_ratio: Ratio,
    pub final_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub n_layers: usize,
    pub overall_ratio: Ratio,
    /// Number of trailing layers to compress.
    pub k: usize,
    pub layer_ratio: Ratio,
    pub candidate_table: Vec<CandidateResult>,
    /// Final-layer relative error of the chosen candidate; `None` for plans
    /// built with [`CompressionPlan::fixed`].
    pub chosen_error: Option<f64>,
}

impl CompressionPlan {
    /// Compress exactly the last `k` layers at `N R_o / k`, without search.
    /// `k = n_layers` gives uniform all-layer compression at `R_o`.
    pub fn fixed(n_layers: usize, overall_ratio: Ratio, k: usize) -> Result<Self> {
        if k == 0 || k > n_layers {
            return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={n_layers}")));
        }
        let layer_ratio = layer_ratio_for(n_layers, overall_ratio, k)?;
        if layer_ratio >= Ratio::ONE {
            return Err(Error::InfeasibleTail {
                n_layers,
                k,
                overall_ratio: overall_ratio.to_string(),
                layer_ratio: layer_ratio.to_string(),
            });
        }
        Ok(Self { n_layers, overall_ratio, k, layer_ratio, candidate_table: Vec::new(), chosen_error: None })
    }

    /// `k * R_l == N * R_o`, compared as exact rationals.
    pub fn budget_identity_holds(&self) -> bool {
        self.layer_ratio.mul_int(self.k) == self.overall_ratio.mul_int(self.n_layers)
    }

    /// Index of the first compressed layer (0-based).
    pub fn first_compressed(&self) -> usize {
        self.n_layers - self.k
    }
}

fn layer_ratio_for(n_layers: usize, overall_ratio: Ratio, k: usize) -> Result<Ratio> {
    overall_ratio
        .mul_int(n_layers)
        .and_then(|r| r.div_int(k))
        .ok_or_else(|| Error::InvalidArgument("ratio arithmetic overflow".into()))
}

/// `k' ∈ {s, 2s, …, N − s}` with `R_l' = N R_o / k' < 1`, ascending.
pub fn enumerate_candidates(n_layers: usize, cfg: &PlannerConfig) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    if n_layers < 2 {
        return Err(Error::InvalidArgument(format!("planning needs at least 2 layers, got {n_layers}")));
    }
    let mut out = Vec::new();
    let mut k = cfg.step;
    while k + cfg.step <= n_layers {
        let layer_ratio = layer_ratio_for(n_layers, cfg.overall_ratio, k)?;
        if layer_ratio < Ratio::ONE {
            out.push(Candidate { k, layer_ratio });
        }
        k += cfg.step;
    }
    if out.is_empty() {
        return Err(Error::InfeasiblePlan { n_layers, overall_ratio: cfg.overall_ratio.to_string(), step: cfg.step });
    }
    Ok(out)
}

/// [`enumerate_candidates`] restricted to candidates whose every tail
/// matrix has a rank budget of at least one.
pub fn enumerate_feasible_candidates(model: &SequentialModel, cfg: &PlannerConfig) -> Result<Vec<Candidate>> {
    let n = model.num_layers();
    let all = enumerate_candidates(n, cfg)?;
    let feasible: Vec<Candidate> = all
        .into_iter()
        .filter(|c| {
            model.layers()[n - c.k..].iter().flat_map(|l| &l.matrices).all(|e| {
                let (m, cols) = e.weight.shape();
                rank_budget(m, cols, c.layer_ratio, cfg.beta).is_ok()
            })
        })
        .collect();
    if feasible.is_empty() {
        return Err(Error::InfeasiblePlan {
            n_layers: n,
            overall_ratio: cfg.overall_ratio.to_string(),
            step: cfg.step,
        });
    }
    Ok(feasible)
}

/// Whitening contexts for layers `first..N`, captured from the original
/// model. Failures are kept per matrix so that only candidates touching a
/// failed layer are affected.
struct TailContexts {
    first: usize,
    layers: Vec<Vec<std::result::Result<ScalingContext, String>>>,
}

impl TailContexts {
    fn build(model: &SequentialModel, calib: &CalibrationSet, first: usize, ridge: Ridge) -> Result<Self> {
        let acts = capture_activations(model, calib)?;
        let layers = (first..model.num_layers())
            .into_par_iter()
            .map(|li| {
                let layer = &model.layers()[li];
                acts.layers()[li]
                    .iter()
                    .zip(&layer.matrices)
                    .map(|(x, entry)| {
                        let label = format!("layer {} ({}) matrix {}", li + 1, layer.name, entry.name);
                        whiten_labeled(x, ridge.resolve(x), &label).map_err(|e| e.to_string())
                    })
                    .collect()
            })
            .collect();
        Ok(Self { first, layers })
    }

    fn get(&self, layer: usize, matrix: usize) -> Result<&ScalingContext> {
        self.layers[layer - self.first][matrix].as_ref().map_err(|reason| Error::numerical("whitening", reason.clone()))
    }
}

/// Replaces every matrix of the last `k` layers by its compensated factors.
fn compress_tail(
    model: &SequentialModel,
    contexts: &TailContexts,
    k: usize,
    layer_ratio: Ratio,
    beta: f64,
) -> Result<SequentialModel> {
    let n = model.num_layers();
    let first = n - k;
    debug_assert!(first >= contexts.first);
    let cfg = CompensationConfig::new(layer_ratio).with_beta(beta);
    let new_layers = (first..n)
        .into_par_iter()
        .map(|li| {
            let mut layer = model.layers()[li].clone();
            for (mi, entry) in layer.matrices.iter_mut().enumerate() {
                let w = match &entry.weight {
                    Weight::Dense(w) => w,
                    Weight::Factored(_) => {
                        return Err(Error::Structure(format!(
                            "layer {} ({}) matrix {} is already factored",
                            li + 1,
                            model.layers()[li].name,
                            entry.name
                        )))
                    }
                };
                let ctx = contexts.get(li, mi)?;
                let factors = compress_matrix(w, ctx, &cfg).map_err(|e| match e {
                    Error::Numerical { context, reason } => Error::Numerical {
                        context: format!("layer {} matrix {}: {context}", li + 1, entry.name),
                        reason,
                    },
                    other => other,
                })?;
                entry.weight = Weight::Factored(factors);
                entry.dtype = Dtype::F64;
            }
            Ok(layer)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut layers = model.layers()[..first].to_vec();
    layers.extend(new_layers);
    SequentialModel::new(model.input_dim(), layers)
}

/// Searches the tail-layer count with the lowest final-layer error.
pub fn plan(model: &SequentialModel, calib: &CalibrationSet, cfg: &PlannerConfig) -> Result<CompressionPlan> {
    let candidates = enumerate_feasible_candidates(model, cfg)?;
    let n = model.num_layers();
    let k_max = candidates.iter().map(|c| c.k).max().expect("non-empty");
    let contexts = TailContexts::build(model, calib, n - k_max, cfg.ridge)?;
    let reference = model.forward(calib.samples())?.pop().expect("at least one layer");

    let table: Vec<CandidateResult> = candidates
        .par_iter()
        .map(|c| {
            let outcome = compress_tail(model, &contexts, c.k, c.layer_ratio, cfg.beta).and_then(|trial| {
                let y = trial.forward(calib.samples())?.pop().expect("at least one layer");
                relative_error(&y, &reference)?
                    .ok_or_else(|| Error::numerical("final-layer error", "original output is identically zero"))
            });
            match outcome {
                Ok(err) => {
                    debug!("k = {}, R_l = {}: final error {err:.6e}", c.k, c.layer_ratio);
                    CandidateResult { k: c.k, layer_ratio: c.layer_ratio, final_error: Some(err), failure: None }
                }
                Err(e) => {
                    warn!("candidate k = {} (R_l = {}) failed: {e}", c.k, c.layer_ratio);
                    CandidateResult {
                        k: c.k,
                        layer_ratio: c.layer_ratio,
                        final_error: None,
                        failure: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();

    let best = select(&table).ok_or_else(|| {
        let reasons: Vec<String> = table.iter().filter_map(|r| r.failure.clone()).collect();
        Error::numerical("plan", format!("every candidate failed: {}", reasons.join("; ")))
    })?;
    Ok(CompressionPlan {
        n_layers: n,
        overall_ratio: cfg.overall_ratio,
        k: best.k,
        layer_ratio: best.layer_ratio,
        chosen_error: best.final_error,
        candidate_table: table,
    })
}

/// Lowest error in ascending-`k` order; a later candidate replaces the
/// incumbent only if it is lower by more than [`TIE_TOLERANCE`].
pub fn select(table: &[CandidateResult]) -> Option<&CandidateResult> {
    let mut best: Option<(&CandidateResult, f64)> = None;
    for row in table {
        let Some(err) = row.final_error else { continue };
        match best {
            Some((_, b)) if err >= b - TIE_TOLERANCE => {}
            _ => best = Some((row, err)),
        }
    }
    best.map(|(r, _)| r)
}

/// Compresses the last `plan.k` layers at `plan.layer_ratio`; the first
/// `N − k` layers are copied unchanged. Whitening uses activations of the
/// original model.
pub fn compress_model(
    model: &SequentialModel,
    calib: &CalibrationSet,
    plan: &CompressionPlan,
    beta: f64,
    ridge: Ridge,
) -> Result<SequentialModel> {
    let n = model.num_layers();
    if plan.n_layers != n {
        return Err(Error::InvalidArgument(format!("plan is for {} layers but the model has {n}", plan.n_layers)));
    }
    if plan.k == 0 || plan.k > n || plan.layer_ratio >= Ratio::ONE {
        return Err(Error::InvalidArgument(format!("invalid plan: k = {}, layer ratio {}", plan.k, plan.layer_ratio)));
    }
    let contexts = TailContexts::build(model, calib, n - plan.k, ridge)?;
    compress_tail(model, &contexts, plan.k, plan.layer_ratio, beta)
}

/// Plans and compresses in one call.
pub fn run(
    model: &SequentialModel,
    calib: &CalibrationSet,
    cfg: &PlannerConfig,
) -> Result<(SequentialModel, CompressionPlan)> {
    let plan = plan(model, calib, cfg)?;
    let compressed = compress_model(model, calib, &plan, cfg.beta, cfg.ridge)?;
    Ok((compressed, plan))
}
