use std::path::Path;

use super::{read_file, write_file};
use crate::error::{Error, Result};
use crate::io::csv_report::format_real;
use crate::linalg::DenseMatrix;

pub const CALIB_MAGIC: &[u8; 4] = b"ERCC";
pub const CALIB_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8;

/// Reads a calibration matrix from the binary container, or from CSV when
/// the file does not start with the magic bytes.
pub fn read_calibration(path: &Path) -> Result<DenseMatrix> {
    let bytes = read_file(path)?;
    read_calibration_bytes(&bytes).map_err(|reason| Error::format(path, reason))
}

pub fn read_calibration_bytes(bytes: &[u8]) -> std::result::Result<DenseMatrix, String> {
    if bytes.starts_with(CALIB_MAGIC) {
        parse_binary(bytes)
    } else {
        parse_csv(bytes)
    }
}

fn parse_binary(bytes: &[u8]) -> std::result::Result<DenseMatrix, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CALIB_VERSION {
        return Err(format!("unsupported calibration version {version}"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let payload = &bytes[HEADER_LEN..];
    let expected = rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or("calibration dims overflow")?;
    if payload.len() as u64 != expected {
        return Err(format!("{rows}x{cols} payload needs {expected} bytes, found {}", payload.len()));
    }
    let data = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    DenseMatrix::new(rows as usize, cols as usize, data).map_err(|e| e.to_string())
}

/// Comma-separated rows of reals; `#` starts a comment line and a leading
/// non-numeric row is taken as a header.
fn parse_csv(bytes: &[u8]) -> std::result::Result<DenseMatrix, String> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_reader(bytes);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 && record.iter().all(|f| f.parse::<f64>().is_err()) => continue,
            Err(e) => return Err(format!("row {}: {e}", i + 1)),
        }
    }
    if rows.is_empty() {
        return Err("no calibration samples".into());
    }
    DenseMatrix::from_rows(&rows).map_err(|e| e.to_string())
}

pub fn write_calibration_bin(path: &Path, samples: &DenseMatrix) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + samples.as_slice().len() * 8);
    bytes.extend_from_slice(CALIB_MAGIC);
    bytes.extend_from_slice(&CALIB_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(samples.rows() as u64).to_le_bytes());
    bytes.extend_from_slice(&(samples.cols() as u64).to_le_bytes());
    for v in samples.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn write_calibration_csv(path: &Path, samples: &DenseMatrix) -> Result<()> {
    let mut out = String::new();
    for i in 0..samples.rows() {
        let row: Vec<String> = samples.row(i).iter().map(|&v| format_real(v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_header_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("c.bin");
        let m = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.5]]).unwrap();
        write_calibration_bin(&p, &m).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"ERCC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 24 + 32);
        assert_eq!(read_calibration(&p).unwrap(), m);
    }

    #[test]
    fn rejects_malformed_binary() {
        let mut bytes = b"ERCC".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 24]);
        assert!(read_calibration_bytes(&bytes).unwrap_err().contains("payload"));
        bytes[4] = 9;
        assert!(read_calibration_bytes(&bytes).is_err());
        assert!(read_calibration_bytes(b"ERCC\x01").is_err());
        let mut zero = b"ERCC".to_vec();
        zero.extend_from_slice(&1u32.to_le_bytes());
        zero.extend_from_slice(&0u64.to_le_bytes());
        zero.extend_from_slice(&3u64.to_le_bytes());
        assert!(read_calibration_bytes(&zero).is_err());
    }

    #[test]
    fn csv_with_header_and_comments() {
        let text = b"# demo\nx0,x1\n0.1, 2\n\n-3e-2,4\n";
        let m = read_calibration_bytes(text).unwrap();
        assert_eq!(m.as_slice(), &[0.1, 2.0, -0.03, 4.0]);
        assert!(read_calibration_bytes(b"1,2\n3\n").is_err());
        assert!(read_calibration_bytes(b"1,2\n3,abc\n").is_err());
        assert!(read_calibration_bytes(b"# nothing\n").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(values in proptest::collection::vec(-1e300f64..1e300, 1..24)) {
            let tmp = tempfile::tempdir().unwrap();
            let p = tmp.path().join("c.csv");
            let m = DenseMatrix::new(1, values.len(), values).unwrap();
            write_calibration_csv(&p, &m).unwrap();
            prop_assert_eq!(read_calibration(&p).unwrap(), m);
        }
    }
}
