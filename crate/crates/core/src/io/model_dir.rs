use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, FactorPair};
use crate::model::{Activation, Dtype, Layer, SequentialModel, Weight, WeightEntry};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FORMAT: &str = "residual-svd-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    input_dim: usize,
    layers: Vec<LayerManifest>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, Value>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerManifest {
    name: String,
    activation: Activation,
    matrices: Vec<MatrixManifest>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixManifest {
    name: String,
    rows: usize,
    cols: usize,
    dtype: Dtype,
    storage: Storage,
    file: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Storage {
    Dense,
    Factored { rank: usize },
}

/// A model together with free-form manifest metadata (plan summary, run
/// configuration, checksums), preserved across load and save.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub model: SequentialModel,
    pub metadata: BTreeMap<String, Value>,
}

impl ModelBundle {
    pub fn new(model: SequentialModel) -> Self {
        Self { model, metadata: BTreeMap::new() }
    }
}

fn tensor_file_name(layer: usize, matrix: usize) -> String {
    format!("layer{layer:03}_m{matrix:02}.bin")
}

fn encode(values: &[f64], dtype: Dtype, out: &mut Vec<u8>) {
    match dtype {
        Dtype::F64 => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Dtype::F32 => values.iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
}

fn decode(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect(),
        Dtype::F32 => {
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64).collect()
        }
    }
}

fn dtype_size(dtype: Dtype) -> usize {
    match dtype {
        Dtype::F32 => 4,
        Dtype::F64 => 8,
    }
}

/// Writes `manifest.json` and tensor files into `dir`, creating it if
/// needed. Output depends only on the bundle, so save → load → save is
/// byte-identical.
pub fn save_model_dir(dir: &Path, bundle: &ModelBundle) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::with_capacity(bundle.model.num_layers());
    for (li, layer) in bundle.model.layers().iter().enumerate() {
        let mut matrices = Vec::with_capacity(layer.matrices.len());
        for (mi, entry) in layer.matrices.iter().enumerate() {
            let file = tensor_file_name(li, mi);
            let (rows, cols) = entry.weight.shape();
            let mut bytes = Vec::new();
            let storage = match &entry.weight {
                Weight::Dense(w) => {
                    encode(w.as_slice(), entry.dtype, &mut bytes);
                    Storage::Dense
                }
                Weight::Factored(f) => {
                    encode(f.u_hat().as_slice(), entry.dtype, &mut bytes);
                    encode(f.v_hat().as_slice(), entry.dtype, &mut bytes);
                    Storage::Factored { rank: f.rank() }
                }
            };
            write_file(&dir.join(&file), &bytes)?;
            matrices.push(MatrixManifest { name: entry.name.clone(), rows, cols, dtype: entry.dtype, storage, file });
        }
        layers.push(LayerManifest { name: layer.name.clone(), activation: layer.activation, matrices });
    }
    let manifest = Manifest {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_FORMAT_VERSION,
        input_dim: bundle.model.input_dim(),
        layers,
        metadata: bundle.metadata.clone(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&dir.join(MANIFEST_FILE), json.as_bytes())
}

pub fn load_model_dir(dir: &Path) -> Result<ModelBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let raw = read_file(&manifest_path)?;
    let manifest: Manifest = serde_json::from_slice(&raw).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    if manifest.format != MODEL_FORMAT {
        return Err(Error::format(&manifest_path, format!("unknown format {:?}", manifest.format)));
    }
    if manifest.version != MODEL_FORMAT_VERSION {
        return Err(Error::format(&manifest_path, format!("unsupported version {}", manifest.version)));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for lm in &manifest.layers {
        let mut entries = Vec::with_capacity(lm.matrices.len());
        for mm in &lm.matrices {
            let path = tensor_path(dir, &mm.file)?;
            let weight = load_weight(&path, mm)?;
            entries.push(WeightEntry { name: mm.name.clone(), weight, dtype: mm.dtype });
        }
        layers.push(Layer::new(lm.name.clone(), lm.activation, entries));
    }
    let model =
        SequentialModel::new(manifest.input_dim, layers).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    Ok(ModelBundle { model, metadata: manifest.metadata })
}

fn tensor_path(dir: &Path, file: &str) -> Result<PathBuf> {
    let p = Path::new(file);
    let plain = p.components().count() == 1 && matches!(p.components().next(), Some(std::path::Component::Normal(_)));
    if !plain {
        return Err(Error::format(dir.join(MANIFEST_FILE), format!("tensor file {file:?} must be a plain file name")));
    }
    Ok(dir.join(p))
}

fn load_weight(path: &Path, mm: &MatrixManifest) -> Result<Weight> {
    let bytes = read_file(path)?;
    let (rows, cols) = (mm.rows, mm.cols);
    let elems = match mm.storage {
        Storage::Dense => rows.checked_mul(cols),
        Storage::Factored { rank } => rows.checked_add(cols).and_then(|s| s.checked_mul(rank)),
    }
    .ok_or_else(|| Error::format(path, "tensor size overflows"))?;
    let expected = elems * dtype_size(mm.dtype);
    if bytes.len() != expected {
        return Err(Error::format(path, format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let values = decode(&bytes, mm.dtype);
    let bad = |e: Error| Error::format(path, e.to_string());
    match mm.storage {
        Storage::Dense => Ok(Weight::Dense(DenseMatrix::new(rows, cols, values).map_err(bad)?)),
        Storage::Factored { rank } => {
            if rank == 0 || rank > rows.min(cols) {
                return Err(Error::format(path, format!("rank {rank} invalid for {rows}x{cols}")));
            }
            let split = rows * rank;
            let u = DenseMatrix::new(rows, rank, values[..split].to_vec()).map_err(bad)?;
            let v = DenseMatrix::new(rank, cols, values[split..].to_vec()).map_err(bad)?;
            Ok(Weight::Factored(FactorPair::new(u, v).map_err(bad)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{svd, truncate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_bundle() -> ModelBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w0 = DenseMatrix::gaussian(5, 4, &mut rng);
        let w1 = DenseMatrix::gaussian(3, 5, &mut rng);
        let f1 = truncate(&svd(&w1).unwrap(), 2).unwrap();
        let mut e0 = WeightEntry::dense("weight", w0.map(|v| v as f32 as f64));
        e0.dtype = Dtype::F32;
        let model = SequentialModel::new(
            4,
            vec![
                Layer::new("first", Activation::Relu, vec![e0]),
                Layer::new(
                    "second",
                    Activation::Silu,
                    vec![WeightEntry { name: "weight".into(), weight: Weight::Factored(f1), dtype: Dtype::F64 }],
                ),
            ],
        )
        .unwrap();
        let mut b = ModelBundle::new(model);
        b.metadata.insert("note".into(), Value::from("hello"));
        b.metadata.insert("checksum".into(), Value::from(0.1 + 0.2));
        b
    }

    #[test]
    fn round_trip_is_exact_and_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        let bundle = sample_bundle();
        save_model_dir(&a, &bundle).unwrap();
        let loaded = load_model_dir(&a).unwrap();
        assert_eq!(loaded, bundle);
        save_model_dir(&b, &loaded).unwrap();
        for name in ["manifest.json", "layer000_m00.bin", "layer001_m00.bin"] {
            assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
        }
        // f32 storage really is 4 bytes per value; factored stores u then v
        assert_eq!(std::fs::metadata(a.join("layer000_m00.bin")).unwrap().len(), 5 * 4 * 4);
        assert_eq!(std::fs::metadata(a.join("layer001_m00.bin")).unwrap().len(), (3 * 2 + 2 * 5) * 8);
    }

    #[test]
    fn rejects_corrupt_directories() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        save_model_dir(dir, &sample_bundle()).unwrap();
        // truncated tensor
        let t = dir.join("layer001_m00.bin");
        let bytes = std::fs::read(&t).unwrap();
        std::fs::write(&t, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(load_model_dir(dir), Err(Error::Format { .. })));
        std::fs::write(&t, &bytes).unwrap();
        // path escape in manifest
        let m = std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap();
        std::fs::write(dir.join(MANIFEST_FILE), m.replace("layer001_m00.bin", "../x.bin")).unwrap();
        assert!(matches!(load_model_dir(dir), Err(Error::Format { .. })));
        std::fs::write(dir.join(MANIFEST_FILE), "{not json").unwrap();
        assert!(matches!(load_model_dir(dir), Err(Error::Format { .. })));
        assert!(matches!(load_model_dir(&dir.join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn rejects_broken_chain_and_nan() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path();
        save_model_dir(dir, &sample_bundle()).unwrap();
        let m = std::fs::read_to_string(dir.join(MANIFEST_FILE)).unwrap();
        std::fs::write(dir.join(MANIFEST_FILE), m.replace("\"input_dim\": 4", "\"input_dim\": 6")).unwrap();
        assert!(load_model_dir(dir).is_err());
        std::fs::write(dir.join(MANIFEST_FILE), &m).unwrap();
        let t = dir.join("layer000_m00.bin");
        let mut bytes = std::fs::read(&t).unwrap();
        bytes[..4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&t, &bytes).unwrap();
        assert!(load_model_dir(dir).is_err());
    }
}
