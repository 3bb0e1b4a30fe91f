//! Calibration samples, activation capture and whitening.
//!
//! For a weight `W` (`m x n`) that receives the stacked input rows `X`
//! (`samples x n`), the whitening matrix is the lower Cholesky factor `S` of
//! `X^T X + ridge I`. Then `‖(W − W') X^T‖_F = ‖(W − W') S‖_F`, so truncating
//! `W S` minimizes the output error over the calibration batch.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, lower_triangular_inverse, DenseMatrix};
use crate::model::SequentialModel;

pub const DEFAULT_CALIBRATION_SAMPLES: usize = 256;
pub const DEFAULT_RELATIVE_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    samples: DenseMatrix,
    seed: u64,
    source: String,
}

impl CalibrationSet {
    pub fn new(samples: DenseMatrix, seed: u64, source: impl Into<String>) -> Result<Self> {
        Ok(Self { samples, seed, source: source.into() })
    }

    pub fn from_rows(rows: &[Vec<f64>], seed: u64, source: impl Into<String>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("calibration set has no samples".into()));
        }
        Self::new(DenseMatrix::from_rows(rows)?, seed, source)
    }

    /// Draws `count` distinct rows from `pool` with a seeded generator,
    /// keeping their original order. Uses every row when `count` is at least
    /// the pool size.
    pub fn sample_from(pool: &DenseMatrix, count: usize, seed: u64, source: impl Into<String>) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("calibration sample count must be positive".into()));
        }
        let samples = if count >= pool.rows() {
            pool.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = sample(&mut rng, pool.rows(), count).into_vec();
            idx.sort_unstable();
            pool.select_rows(&idx)?
        };
        Self::new(samples, seed, source)
    }

    pub fn samples(&self) -> &DenseMatrix {
        &self.samples
    }

    pub fn num_samples(&self) -> usize {
        self.samples.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

/// Inputs seen by each weight matrix, indexed `[layer][matrix]`.
#[derive(Debug, Clone)]
pub struct ActivationMap {
    inputs: Vec<Vec<DenseMatrix>>,
}

impl ActivationMap {
    pub fn get(&self, layer: usize, matrix: usize) -> Option<&DenseMatrix> {
        self.inputs.get(layer)?.get(matrix)
    }

    pub fn layers(&self) -> &[Vec<DenseMatrix>] {
        &self.inputs
    }
}

/// Runs the calibration batch through `model` and records the input of
/// every weight matrix, all samples stacked row-wise.
pub fn capture_activations(model: &SequentialModel, calib: &CalibrationSet) -> Result<ActivationMap> {
    Ok(ActivationMap { inputs: model.matrix_inputs(calib.samples())? })
}

/// `S` (lower Cholesky factor of `X^T X + ridge I`) and its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingContext {
    s: DenseMatrix,
    s_inv: DenseMatrix,
    ridge: f64,
}

impl ScalingContext {
    pub fn identity(n: usize) -> Self {
        Self { s: DenseMatrix::identity(n), s_inv: DenseMatrix::identity(n), ridge: 0.0 }
    }

    /// Wraps an explicit lower-triangular `S` with positive diagonal.
    pub fn from_lower(s: DenseMatrix) -> Result<Self> {
        let n = s.rows();
        if s.cols() != n {
            return Err(Error::dimension("scaling matrix", "square", format!("{}x{}", n, s.cols())));
        }
        for i in 0..n {
            if s.get(i, i).is_nan() || s.get(i, i) <= 0.0 || (i + 1..n).any(|j| s.get(i, j) != 0.0) {
                return Err(Error::InvalidArgument(
                    "scaling matrix must be lower-triangular with positive diagonal".into(),
                ));
            }
        }
        let s_inv = lower_triangular_inverse(&s)?;
        Ok(Self { s, s_inv, ridge: 0.0 })
    }

    pub fn s(&self) -> &DenseMatrix {
        &self.s
    }

    pub fn s_inv(&self) -> &DenseMatrix {
        &self.s_inv
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn dim(&self) -> usize {
        self.s.rows()
    }
}

/// `1e-6 * trace(X^T X) / n`.
pub fn default_ridge(x: &DenseMatrix) -> f64 {
    DEFAULT_RELATIVE_RIDGE * mean_gram_diagonal(x)
}

fn mean_gram_diagonal(x: &DenseMatrix) -> f64 {
    let trace: f64 = x.as_slice().iter().map(|v| v * v).sum();
    trace / x.cols() as f64
}

pub fn whiten(x: &DenseMatrix, ridge: f64) -> Result<ScalingContext> {
    whiten_labeled(x, ridge, "activations")
}

pub fn whiten_labeled(x: &DenseMatrix, ridge: f64, label: &str) -> Result<ScalingContext> {
    if !ridge.is_finite() || ridge < 0.0 {
        return Err(Error::InvalidArgument(format!("ridge {ridge} must be finite and non-negative")));
    }
    let mut gram = x.gram();
    let n = gram.rows();
    if ridge > 0.0 {
        for i in 0..n {
            gram.set(i, i, gram.get(i, i) + ridge);
        }
    }
    let s = cholesky_lower(&gram, label)?;
    let s_inv = lower_triangular_inverse(&s)?;
    Ok(ScalingContext { s, s_inv, ridge })
}

/// How the ridge added to `X^T X` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Ridge {
    /// `factor * trace(X^T X) / n`.
    Relative(f64),
    Absolute(f64),
}

impl Default for Ridge {
    fn default() -> Self {
        Ridge::Relative(DEFAULT_RELATIVE_RIDGE)
    }
}

impl Ridge {
    pub fn resolve(&self, x: &DenseMatrix) -> f64 {
        match *self {
            Ridge::Relative(f) => f * mean_gram_diagonal(x),
            Ridge::Absolute(r) => r,
        }
    }
}

/// Scaling contexts for every matrix of `model`, indexed `[layer][matrix]`.
/// Matrices are whitened in parallel; results do not depend on scheduling.
pub fn scaling_contexts(
    acts: &ActivationMap,
    model: &SequentialModel,
    ridge: Ridge,
) -> Result<Vec<Vec<ScalingContext>>> {
    acts.layers()
        .par_iter()
        .enumerate()
        .map(|(li, xs)| {
            let layer = &model.layers()[li];
            xs.iter()
                .zip(&layer.matrices)
                .map(|(x, entry)| {
                    let label = format!("layer {} ({}) matrix {}", li + 1, layer.name, entry.name);
                    whiten_labeled(x, ridge.resolve(x), &label)
                })
                .collect()
        })
        .collect()
}
