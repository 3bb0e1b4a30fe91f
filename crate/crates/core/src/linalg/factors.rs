use crate::error::{Error, Result};
use crate::linalg::matrix::DenseMatrix;
use crate::linalg::svd::SvdFactors;

/// Low-rank factors `(u_hat, v_hat)` of an `m x n` matrix: `u_hat` is
/// `m x r`, `v_hat` is `r x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorPair {
    u_hat: DenseMatrix,
    v_hat: DenseMatrix,
}

impl FactorPair {
    pub fn new(u_hat: DenseMatrix, v_hat: DenseMatrix) -> Result<Self> {
        if u_hat.cols() != v_hat.rows() {
            return Err(Error::dimension("factor pair inner rank", u_hat.cols(), v_hat.rows()));
        }
        let (m, n) = (u_hat.rows(), v_hat.cols());
        if u_hat.cols() > m.min(n) {
            return Err(Error::InvalidRank { rank: u_hat.cols(), max: m.min(n) });
        }
        Ok(Self { u_hat, v_hat })
    }

    pub fn u_hat(&self) -> &DenseMatrix {
        &self.u_hat
    }

    pub fn v_hat(&self) -> &DenseMatrix {
        &self.v_hat
    }

    pub fn rank(&self) -> usize {
        self.u_hat.cols()
    }

    /// Shape `(m, n)` of the approximated matrix.
    pub fn shape(&self) -> (usize, usize) {
        (self.u_hat.rows(), self.v_hat.cols())
    }

    pub fn parameter_count(&self) -> usize {
        let (m, n) = self.shape();
        (m + n) * self.rank()
    }

    /// Materializes `u_hat · v_hat`.
    pub fn product(&self) -> DenseMatrix {
        self.u_hat.matmul(&self.v_hat).expect("inner dims checked at construction")
    }

    /// `x · (u_hat v_hat)^T` evaluated as `(x · v_hat^T) · u_hat^T`.
    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        x.matmul_transpose(&self.v_hat)?.matmul_transpose(&self.u_hat)
    }

    /// Column-concatenates the left factors and row-concatenates the right
    /// factors; the product is the sum of both products.
    pub fn concat(&self, other: &FactorPair) -> Result<FactorPair> {
        if self.shape() != other.shape() {
            return Err(Error::dimension(
                "factor pair concat",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        FactorPair::new(self.u_hat.hconcat(&other.u_hat)?, self.v_hat.vconcat(&other.v_hat)?)
    }

    /// Right-multiplies `v_hat` by `t`.
    pub fn map_right(&self, t: &DenseMatrix) -> Result<FactorPair> {
        FactorPair::new(self.u_hat.clone(), self.v_hat.matmul(t)?)
    }
}

/// Keeps the top `r` singular triplets, splitting `sqrt(sigma)` between the
/// two factors: `u_hat = U_r sqrt(S_r)`, `v_hat = sqrt(S_r) V_r^T`.
pub fn truncate(f: &SvdFactors, r: usize) -> Result<FactorPair> {
    if r == 0 || r > f.len() {
        return Err(Error::InvalidRank { rank: r, max: f.len() });
    }
    let root: Vec<f64> = f.sigma[..r].iter().map(|s| s.sqrt()).collect();
    let u_hat = f.u.columns_range(0, r)?.scale_columns(&root)?;
    let v_hat = f.vt.rows_range(0, r)?.scale_rows(&root)?;
    FactorPair::new(u_hat, v_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::matrix::frobenius_error;
    use crate::linalg::svd::svd;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn diagonal_truncation_errors() {
        let w = DenseMatrix::from_diagonal(&[3.0, 2.0, 1.0]).unwrap();
        let f = svd(&w).unwrap();
        let full = truncate(&f, 3).unwrap();
        assert!(frobenius_error(&full.product(), &w).unwrap() <= 1e-10);
        let two = truncate(&f, 2).unwrap();
        assert!((frobenius_error(&two.product(), &w).unwrap() - 1.0).abs() <= 1e-12);
        assert!(matches!(truncate(&f, 0), Err(Error::InvalidRank { .. })));
        assert!(matches!(truncate(&f, 4), Err(Error::InvalidRank { rank: 4, max: 3 })));
    }

    #[test]
    fn rank_one_input_is_recovered() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [0.3, 1.5, -1.0];
        let w = DenseMatrix::from_fn(4, 3, |i, j| u[i] * v[j]).unwrap();
        let p = truncate(&svd(&w).unwrap(), 1).unwrap();
        assert!(frobenius_error(&p.product(), &w).unwrap() <= 1e-10);
        assert_eq!(p.parameter_count(), 7);
    }

    #[test]
    fn factored_apply_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = DenseMatrix::gaussian(6, 5, &mut rng);
        let x = DenseMatrix::gaussian(3, 5, &mut rng);
        let p = truncate(&svd(&w).unwrap(), 3).unwrap();
        let dense = x.matmul_transpose(&p.product()).unwrap();
        assert!(frobenius_error(&p.apply(&x).unwrap(), &dense).unwrap() <= 1e-12);
    }

    #[test]
    fn concat_sums_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = truncate(&svd(&DenseMatrix::gaussian(5, 4, &mut rng)).unwrap(), 1).unwrap();
        let b = truncate(&svd(&DenseMatrix::gaussian(5, 4, &mut rng)).unwrap(), 2).unwrap();
        let c = a.concat(&b).unwrap();
        assert_eq!(c.rank(), 3);
        let sum = a.product().add(&b.product()).unwrap();
        assert!(frobenius_error(&c.product(), &sum).unwrap() <= 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn error_is_monotone_and_full_rank_is_exact(seed in any::<u64>(), m in 1usize..12, n in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = DenseMatrix::gaussian(m, n, &mut rng);
            let f = svd(&w).unwrap();
            let p = m.min(n);
            let errs: Vec<f64> = (1..=p)
                .map(|r| frobenius_error(&w, &truncate(&f, r).unwrap().product()).unwrap())
                .collect();
            for pair in errs.windows(2) {
                prop_assert!(pair[1] <= pair[0] + 1e-12);
            }
            prop_assert!(errs[p - 1] <= 1e-8 * w.frobenius_norm());
            // error equals the discarded tail of the spectrum
            for r in 1..=p {
                let tail: f64 = f.sigma()[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
                prop_assert!((errs[r - 1] - tail).abs() <= 1e-9 * (1.0 + tail));
            }
        }

        #[test]
        fn product_ignores_sign_flips(seed in any::<u64>(), flips in proptest::collection::vec(any::<bool>(), 6)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = DenseMatrix::gaussian(7, 6, &mut rng);
            let f = svd(&w).unwrap();
            let g = f.with_flipped_pairs(&flips);
            for r in 1..=6 {
                let a = truncate(&f, r).unwrap().product();
                let b = truncate(&g, r).unwrap().product();
                prop_assert!(a.sub(&b).unwrap().max_abs() <= 1e-9);
            }
        }
    }
}
