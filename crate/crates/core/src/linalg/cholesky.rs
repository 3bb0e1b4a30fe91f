use crate::error::{Error, Result};
use crate::linalg::matrix::DenseMatrix;

/// Lower Cholesky factor `L` with `L L^T = a`. Pivots at or below
/// `n * eps * max_diag` are treated as singular.
pub fn cholesky_lower(a: &DenseMatrix, context: &str) -> Result<DenseMatrix> {
    let (n, cols) = a.shape();
    if n != cols {
        return Err(Error::dimension("cholesky input", "square matrix", format!("{n}x{cols}")));
    }
    let max_diag = (0..n).map(|i| a.get(i, i).abs()).fold(0.0, f64::max);
    let floor = (n as f64) * f64::EPSILON * max_diag;
    let mut l = DenseMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if d.is_nan() || d <= floor {
            return Err(Error::SingularWhitening { context: context.to_string(), column: j, pivot: d });
        }
        let djj = d.sqrt();
        l.set(j, j, djj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / djj);
        }
    }
    Ok(l)
}

/// Inverse of a lower-triangular matrix with non-zero diagonal, by forward
/// substitution column by column.
pub fn lower_triangular_inverse(l: &DenseMatrix) -> Result<DenseMatrix> {
    let n = l.rows();
    if l.cols() != n {
        return Err(Error::dimension("triangular inverse", "square matrix", format!("{}x{}", n, l.cols())));
    }
    let mut inv = DenseMatrix::zeros(n, n);
    for c in 0..n {
        for i in c..n {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for k in c..i {
                s -= l.get(i, k) * inv.get(k, c);
            }
            let d = l.get(i, i);
            if d == 0.0 {
                return Err(Error::numerical("triangular inverse", format!("zero diagonal at {i}")));
            }
            inv.set(i, c, s / d);
        }
    }
    if !inv.is_finite() {
        return Err(Error::numerical("triangular inverse", "overflow"));
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix::frobenius_error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn factor_and_invert_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DenseMatrix::gaussian(20, 6, &mut rng);
        let g = x.gram();
        let l = cholesky_lower(&g, "test").unwrap();
        for i in 0..6 {
            assert!(l.get(i, i) > 0.0);
            for j in i + 1..6 {
                assert_eq!(l.get(i, j), 0.0);
            }
        }
        assert!(frobenius_error(&l.matmul(&l.transpose()).unwrap(), &g).unwrap() <= 1e-10 * g.frobenius_norm());
        let inv = lower_triangular_inverse(&l).unwrap();
        assert!(frobenius_error(&l.matmul(&inv).unwrap(), &DenseMatrix::identity(6)).unwrap() <= 1e-10);
    }

    #[test]
    fn singular_input_is_reported() {
        let g = DenseMatrix::from_diagonal(&[4.0, 0.0]).unwrap();
        assert!(matches!(cholesky_lower(&g, "layer"), Err(Error::SingularWhitening { column: 1, .. })));
    }
}
