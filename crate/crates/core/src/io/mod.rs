//! On-disk formats.
//!
//! - Model directories: `manifest.json` plus one raw little-endian,
//!   row-major tensor file per weight. Factored weights store `u_hat`
//!   followed by `v_hat` in the same file.
//! - Calibration files: `ERCC` magic, `u32` version, `u64` rows, `u64` cols,
//!   then `f64` payload, all little-endian. CSV rows are accepted too.
//! - CSV reports with 17 significant digits.

mod calib_file;
mod csv_report;
mod model_dir;

pub use calib_file::{
    read_calibration, read_calibration_bytes, write_calibration_bin, write_calibration_csv, CALIB_MAGIC, CALIB_VERSION,
};
pub use csv_report::{candidate_table_csv, format_real, layerwise_csv, parse_layerwise_csv};
pub use model_dir::{load_model_dir, save_model_dir, ModelBundle, MANIFEST_FILE, MODEL_FORMAT, MODEL_FORMAT_VERSION};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
