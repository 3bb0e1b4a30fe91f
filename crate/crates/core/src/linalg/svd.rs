//! Thin SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of the working matrix are rotated pairwise until every pair is
//! orthogonal relative to its norms; the column norms are then the singular
//! values. This keeps small singular values accurate to high relative
//! precision, which matters when the whitening matrix is ill-conditioned.

use crate::error::{Error, Result};
use crate::linalg::matrix::{dot, DenseMatrix};

const MAX_SWEEPS: usize = 80;

/// `u · diag(sigma) · vt` with `p = min(m, n)` singular triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub(crate) u: DenseMatrix,
    pub(crate) sigma: Vec<f64>,
    pub(crate) vt: DenseMatrix,
}

impl SvdFactors {
    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    /// Singular values, non-increasing.
    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn vt(&self) -> &DenseMatrix {
        &self.vt
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// `u · diag(sigma) · vt`.
    pub fn reconstruct(&self) -> DenseMatrix {
        self.u
            .scale_columns(&self.sigma)
            .and_then(|us| us.matmul(&self.vt))
            .expect("svd factors have consistent shapes")
    }

    /// Flips the sign of selected singular pairs `(u_k, v_k)`. The product
    /// is unchanged; used to exercise sign-convention independence.
    pub fn with_flipped_pairs(&self, flip: &[bool]) -> Self {
        let mut out = self.clone();
        for (k, _) in flip.iter().enumerate().filter(|(_, &f)| f).take(self.len()) {
            for i in 0..out.u.rows() {
                out.u.set(i, k, -out.u.get(i, k));
            }
            for j in 0..out.vt.cols() {
                out.vt.set(k, j, -out.vt.get(k, j));
            }
        }
        out
    }
}

pub fn svd(w: &DenseMatrix) -> Result<SvdFactors> {
    svd_labeled(w, "matrix")
}

/// SVD with a label used in numerical-failure diagnostics.
pub fn svd_labeled(w: &DenseMatrix, label: &str) -> Result<SvdFactors> {
    if !w.is_finite() {
        return Err(Error::numerical(format!("svd of {label}"), "input has non-finite entries"));
    }
    let (m, n) = w.shape();
    let factors = if m >= n {
        let (u, sigma, v) = jacobi_tall(w, label)?;
        SvdFactors { u, sigma, vt: v.transpose() }
    } else {
        // A^T = U' S V'^T  =>  A = V' S U'^T
        let (u_t, sigma, v_t) = jacobi_tall(&w.transpose(), label)?;
        SvdFactors { u: v_t, sigma, vt: u_t.transpose() }
    };
    Ok(fix_signs(factors))
}

/// One-sided Jacobi on an `m x n` matrix with `m >= n`. Returns `(U, sigma, V)`
/// with `U` of shape `m x n` and `V` of shape `n x n`, sorted by decreasing
/// singular value.
fn jacobi_tall(a: &DenseMatrix, label: &str) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    let (m, n) = a.shape();
    debug_assert!(m >= n);
    // column-major working copies
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = f64::EPSILON * (m as f64);
    // Columns this small are zero to working precision; rotating them only
    // churns rounding noise and can stall convergence on rank-deficient input.
    let norm2: f64 = cols.iter().map(|c| dot(c, c)).sum();
    let negligible = (f64::EPSILON * f64::EPSILON) * norm2 * 1e-2;

    let mut converged = n < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || alpha.min(beta) <= negligible || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut cols, p, q, c, s);
                rotate(&mut vcols, p, q, c, s);
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(Error::numerical(
            format!("svd of {label} ({m}x{n})"),
            format!("Jacobi iteration did not converge in {MAX_SWEEPS} sweeps"),
        ));
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let sigma_max = sigma[0];

    let mut u_cols: Vec<Option<Vec<f64>>> = order
        .iter()
        .map(|&j| {
            let s = norms[j];
            if s > 0.0 && s > sigma_max * 1e-30 {
                Some(cols[j].iter().map(|v| v / s).collect())
            } else {
                None
            }
        })
        .collect();
    complete_orthonormal(&mut u_cols, m);

    let u = DenseMatrix::from_fn(m, n, |i, k| u_cols[k].as_ref().expect("completed")[i])?;
    let v = DenseMatrix::from_fn(n, n, |i, k| vcols[order[k]][i])?;
    Ok((u, sigma, v))
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let yq = *y;
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// Fills `None` slots with unit vectors orthogonal to every other column,
/// choosing among the standard basis the candidate with the largest
/// residual after projection.
fn complete_orthonormal(cols: &mut [Option<Vec<f64>>], m: usize) {
    for slot in 0..cols.len() {
        if cols[slot].is_some() {
            continue;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for _ in 0..2 {
                for c in cols.iter().flatten() {
                    let proj = dot(&cand, c);
                    for (x, y) in cand.iter_mut().zip(c) {
                        *x -= proj * y;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, cand));
            }
        }
        let (norm, cand) = best.expect("m >= number of columns");
        cols[slot] = Some(cand.into_iter().map(|v| v / norm).collect());
    }
}

/// Makes the largest-magnitude entry of each left singular vector
/// non-negative, flipping the matching right vector.
fn fix_signs(mut f: SvdFactors) -> SvdFactors {
    let (m, p) = f.u.shape();
    for k in 0..p {
        let mut arg = 0;
        let mut best = -1.0;
        for i in 0..m {
            let a = f.u.get(i, k).abs();
            if a > best {
                best = a;
                arg = i;
            }
        }
        if f.u.get(arg, k) < 0.0 {
            for i in 0..m {
                f.u.set(i, k, -f.u.get(i, k));
            }
            for j in 0..f.vt.cols() {
                f.vt.set(k, j, -f.vt.get(k, j));
            }
        }
    }
    f
}
