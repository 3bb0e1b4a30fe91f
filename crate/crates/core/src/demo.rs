//! Seeded toy models and calibration data.
//!
//! Weights get a power-law singular spectrum (like trained layers, unlike
//! i.i.d. Gaussian matrices) scaled so activations keep their magnitude
//! through ReLU. Calibration inputs are correlated with decaying variance,
//! so whitening differs noticeably from the identity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{svd, DenseMatrix};
use crate::model::{Activation, Layer, SequentialModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSpec {
    pub layers: usize,
    pub width: usize,
    pub samples: usize,
    pub seed: u64,
    pub activation: Activation,
    /// Exponent of the singular-value decay `(j + 1)^-decay`.
    pub spectrum_decay: f64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self { layers: 8, width: 64, samples: 256, seed: 7, activation: Activation::Relu, spectrum_decay: 0.5 }
    }
}

#[derive(Debug, Clone)]
pub struct Demo {
    pub model: SequentialModel,
    pub calibration: DenseMatrix,
    /// Sum of all final-layer outputs on `calibration`.
    pub forward_checksum: f64,
}

pub fn generate(spec: &DemoSpec) -> Result<Demo> {
    if spec.layers == 0 || spec.width == 0 || spec.samples == 0 {
        return Err(Error::InvalidArgument("demo needs positive layers, width and samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.width;
    let gain = match spec.activation {
        Activation::Relu | Activation::Silu => 2.0,
        Activation::Identity => 1.0,
    };
    let raw: Vec<f64> = (0..n).map(|j| (j as f64 + 1.0).powf(-spec.spectrum_decay)).collect();
    let norm = (raw.iter().map(|s| s * s).sum::<f64>() / (gain * n as f64)).sqrt();
    let spectrum: Vec<f64> = raw.iter().map(|s| s / norm).collect();

    let mut layers = Vec::with_capacity(spec.layers);
    for i in 0..spec.layers {
        let left = svd(&DenseMatrix::gaussian(n, n, &mut rng))?;
        let right = svd(&DenseMatrix::gaussian(n, n, &mut rng))?;
        let w = left.u().scale_columns(&spectrum)?.matmul(right.vt())?;
        layers.push(Layer::single(format!("layer{i}"), spec.activation, w));
    }
    let model = SequentialModel::new(n, layers)?;

    let variance = DenseMatrix::from_diagonal(&(0..n).map(|j| (j as f64 + 1.0).powf(-0.5)).collect::<Vec<_>>())?;
    let mix = DenseMatrix::gaussian(n, n, &mut rng).scale(0.3 / (n as f64).sqrt()).add(&DenseMatrix::identity(n))?;
    let calibration = DenseMatrix::gaussian(spec.samples, n, &mut rng).matmul(&variance)?.matmul(&mix)?;

    let forward_checksum = forward_checksum(&model, &calibration)?;
    Ok(Demo { model, calibration, forward_checksum })
}

pub fn forward_checksum(model: &SequentialModel, x: &DenseMatrix) -> Result<f64> {
    let y = model.forward(x)?.pop().expect("at least one layer");
    Ok(y.as_slice().iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_demo() {
        let spec = DemoSpec { layers: 3, width: 12, samples: 20, ..DemoSpec::default() };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.calibration, b.calibration);
        assert_eq!(a.forward_checksum.to_bits(), b.forward_checksum.to_bits());
        assert_eq!(a.model.num_layers(), 3);
        assert_eq!(a.calibration.shape(), (20, 12));
        let c = generate(&DemoSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn activations_keep_their_scale() {
        let demo = generate(&DemoSpec::default()).unwrap();
        let outs = demo.model.forward(&demo.calibration).unwrap();
        let first = outs[1].frobenius_norm();
        let last = outs[8].frobenius_norm();
        assert!(last > 0.05 * first && last < 20.0 * first, "{first} -> {last}");
    }
}
