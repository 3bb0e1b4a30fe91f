//! Sequential layered models, forward evaluation, layer-wise error
//! reports and parameter / MAC accounting.
//!
//! A layer holds one or more weight matrices applied in order; the layer's
//! activation follows every matrix. Weights act on row-major sample batches
//! as `y = act(x W^T)`.

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationSet;
use crate::error::{Error, Result};
use crate::linalg::{frobenius_error, DenseMatrix, FactorPair};
use crate::ratio::Ratio;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Relu,
    Silu,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Silu => v / (1.0 + (-v).exp()),
        }
    }

    fn apply_matrix(self, m: DenseMatrix) -> DenseMatrix {
        match self {
            Activation::Identity => m,
            _ => m.map(|v| self.apply(v)),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "silu" => Ok(Activation::Silu),
            _ => Err(Error::InvalidArgument(format!("unknown activation {s:?}"))),
        }
    }
}

/// Element type used when the weight is written to disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    Dense(DenseMatrix),
    Factored(FactorPair),
}

impl Weight {
    /// `(m, n)` of the dense matrix this weight represents.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Weight::Dense(w) => w.shape(),
            Weight::Factored(f) => f.shape(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Weight::Dense(w) => w.rows() * w.cols(),
            Weight::Factored(f) => f.parameter_count(),
        }
    }

    /// Multiply-accumulates for a batch of `batch` rows.
    pub fn mac_count(&self, batch: usize) -> usize {
        let (m, n) = self.shape();
        match self {
            Weight::Dense(_) => batch * m * n,
            Weight::Factored(f) => batch * n * f.rank() + batch * f.rank() * m,
        }
    }

    /// `x W^T`; factored weights never materialize `u_hat v_hat`.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            Weight::Dense(w) => x.matmul_transpose(w),
            Weight::Factored(f) => f.apply(x),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match self {
            Weight::Dense(w) => w.clone(),
            Weight::Factored(f) => f.product(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub weight: Weight,
    pub dtype: Dtype,
}

impl WeightEntry {
    pub fn dense(name: impl Into<String>, w: DenseMatrix) -> Self {
        Self { name: name.into(), weight: Weight::Dense(w), dtype: Dtype::F64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub name: String,
    pub activation: Activation,
    pub matrices: Vec<WeightEntry>,
}

impl Layer {
    pub fn new(name: impl Into<String>, activation: Activation, matrices: Vec<WeightEntry>) -> Self {
        Self { name: name.into(), activation, matrices }
    }

    /// Single dense matrix named `weight`.
    pub fn single(name: impl Into<String>, activation: Activation, w: DenseMatrix) -> Self {
        Self::new(name, activation, vec![WeightEntry::dense("weight", w)])
    }

    pub fn input_dim(&self) -> usize {
        self.matrices[0].weight.shape().1
    }

    pub fn output_dim(&self) -> usize {
        self.matrices[self.matrices.len() - 1].weight.shape().0
    }

    pub fn parameter_count(&self) -> usize {
        self.matrices.iter().map(|e| e.weight.parameter_count()).sum()
    }

    pub fn is_compressed(&self) -> bool {
        self.matrices.iter().any(|e| matches!(e.weight, Weight::Factored(_)))
    }

    fn forward(&self, x: &DenseMatrix, mut on_input: impl FnMut(&DenseMatrix)) -> Result<DenseMatrix> {
        let mut h = x.clone();
        for entry in &self.matrices {
            on_input(&h);
            h = self.activation.apply_matrix(entry.weight.apply(&h)?);
        }
        Ok(h)
    }
}

/// Ordered layers whose widths chain.
#[derive(Debug, Clone, PartialEq)]
pub struct SequentialModel {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl SequentialModel {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Structure("model has no layers".into()));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            if layer.matrices.is_empty() {
                return Err(Error::Structure(format!("layer {i} ({}) has no matrices", layer.name)));
            }
            for entry in &layer.matrices {
                let (m, n) = entry.weight.shape();
                if n != width {
                    return Err(Error::Structure(format!(
                        "layer {i} ({}) matrix {} expects input width {n} but receives {width}",
                        layer.name, entry.name
                    )));
                }
                width = m;
            }
        }
        Ok(Self { input_dim, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Returns a copy with layer `index` replaced, re-validating the chain.
    pub fn with_layer(&self, index: usize, layer: Layer) -> Result<Self> {
        if index >= self.layers.len() {
            return Err(Error::Structure(format!("layer index {index} out of range")));
        }
        let mut layers = self.layers.clone();
        layers[index] = layer;
        Self::new(self.input_dim, layers)
    }

    fn check_input(&self, x: &DenseMatrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::dimension(
                format!("model input (layer 0, {})", self.layers[0].name),
                self.input_dim,
                x.cols(),
            ));
        }
        Ok(())
    }

    /// All layer outputs: index 0 is the input, index `i` the output of
    /// layer `i` (1-based).
    pub fn forward(&self, x: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
        self.check_input(x)?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x.clone());
        for layer in &self.layers {
            let y = layer.forward(outputs.last().expect("non-empty"), |_| {})?;
            outputs.push(y);
        }
        Ok(outputs)
    }

    /// Input batch seen by every weight matrix, grouped by layer.
    pub fn matrix_inputs(&self, x: &DenseMatrix) -> Result<Vec<Vec<DenseMatrix>>> {
        self.check_input(x)?;
        let mut captured = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let mut inputs = Vec::with_capacity(layer.matrices.len());
            h = layer.forward(&h, |inp| inputs.push(inp.clone()))?;
            captured.push(inputs);
        }
        Ok(captured)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn mac_count(&self, batch: usize) -> usize {
        self.layers.iter().flat_map(|l| &l.matrices).map(|e| e.weight.mac_count(batch)).sum()
    }

    /// Same layer count, names, activations and matrix shapes.
    pub fn check_same_skeleton(&self, other: &SequentialModel) -> Result<()> {
        if self.input_dim != other.input_dim || self.layers.len() != other.layers.len() {
            return Err(Error::Structure(format!(
                "models differ: {} layers from width {} vs {} layers from width {}",
                self.layers.len(),
                self.input_dim,
                other.layers.len(),
                other.input_dim
            )));
        }
        for (i, (a, b)) in self.layers.iter().zip(&other.layers).enumerate() {
            let same = a.activation == b.activation
                && a.matrices.len() == b.matrices.len()
                && a.matrices
                    .iter()
                    .zip(&b.matrices)
                    .all(|(x, y)| x.name == y.name && x.weight.shape() == y.weight.shape());
            if !same {
                return Err(Error::Structure(format!("layer {i} ({}) differs between models", a.name)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    /// 1-based layer index.
    pub layer_index: usize,
    /// `None` when the original layer output is identically zero.
    pub relative_error: Option<f64>,
}

/// Settings echoed into an error report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub overall_ratio: Option<Ratio>,
    pub k: Option<usize>,
    pub beta: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerwiseErrorReport {
    pub per_layer: Vec<LayerError>,
    pub final_error: Option<f64>,
    pub config: ReportConfig,
}

impl LayerwiseErrorReport {
    pub fn with_config(mut self, config: ReportConfig) -> Self {
        self.config = config;
        self
    }
}

/// `‖observed − reference‖_F / ‖reference‖_F`, or `None` when the
/// reference is identically zero.
pub fn relative_error(observed: &DenseMatrix, reference: &DenseMatrix) -> Result<Option<f64>> {
    let norm = reference.frobenius_norm();
    if norm > 0.0 {
        Ok(Some(frobenius_error(observed, reference)? / norm))
    } else {
        Ok(None)
    }
}

/// Relative Frobenius error `‖Y' − Y‖ / ‖Y‖` of every layer output, where
/// both models run on the same calibration inputs and errors propagate
/// through the compressed model's own forward pass.
pub fn layerwise_error(
    original: &SequentialModel,
    compressed: &SequentialModel,
    calib: &CalibrationSet,
) -> Result<LayerwiseErrorReport> {
    original.check_same_skeleton(compressed)?;
    let reference = original.forward(calib.samples())?;
    let observed = compressed.forward(calib.samples())?;
    let per_layer = reference
        .iter()
        .zip(&observed)
        .enumerate()
        .skip(1)
        .map(|(i, (y, y_c))| Ok(LayerError { layer_index: i, relative_error: relative_error(y_c, y)? }))
        .collect::<Result<Vec<_>>>()?;
    let final_error = per_layer.last().and_then(|e| e.relative_error);
    Ok(LayerwiseErrorReport { per_layer, final_error, config: ReportConfig::default() })
}
