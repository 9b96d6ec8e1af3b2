//! Small dense linear-algebra kernels used across the crate.
//!
//! Problem sizes here are modest (a few hundred unknowns at most, from
//! channels x lags design matrices), so hand-rolled Cholesky and Jacobi
//! eigendecomposition are plenty and keep the dependency set lean.

use ndarray::{Array1, Array2};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Cholesky factorization of a symmetric positive-definite matrix.
/// Returns the lower-triangular factor L with A = L Lᵀ.
pub fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(LinalgError::NotPositiveDefinite {
                index: j,
                pivot: diag,
            });
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / ljj;
        }
    }
    Ok(l)
}

/// Solves A x = b for symmetric positive-definite A via Cholesky.
pub fn solve_spd(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>, LinalgError> {
    let l = cholesky(a)?;
    let n = l.nrows();
    if b.len() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "rhs length {} does not match matrix size {}",
            b.len(),
            n
        )));
    }
    // forward: L y = b
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * y[k];
        }
        y[i] = s / l[[i, i]];
    }
    // backward: Lᵀ x = y
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[[k, i]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    Ok(x)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns (eigenvalues, eigenvectors as columns).
pub fn jacobi_eigh(a: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&m)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = Array1::from_iter((0..n).map(|i| m[[i, i]]));
    (eig, v)
}

/// Least-squares solve of (AᵀA) X = AᵀB through the pseudoinverse of the
/// Gram matrix, tolerant of rank deficiency. `gram` is AᵀA (k x k) and
/// `rhs` is AᵀB (k x m); eigenvalues below `rel_tol * max_eig` are
/// dropped. Returns the solution and the number of dropped directions.
pub fn pinv_solve_gram(
    gram: &Array2<f64>,
    rhs: &Array2<f64>,
    rel_tol: f64,
) -> (Array2<f64>, usize) {
    let (eig, vecs) = jacobi_eigh(gram);
    let max_eig = eig.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = rel_tol * max_eig;
    // X = V diag(1/λ) Vᵀ rhs, skipping small λ
    let vt_rhs = vecs.t().dot(rhs);
    let mut scaled = vt_rhs;
    let mut dropped = 0;
    for (i, lam) in eig.iter().enumerate() {
        let inv = if *lam > cutoff && *lam > 0.0 {
            1.0 / lam
        } else {
            dropped += 1;
            0.0
        };
        for val in scaled.row_mut(i) {
            *val *= inv;
        }
    }
    (vecs.dot(&scaled), dropped)
}

/// Frobenius norm.
pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Pearson correlation between two equal-length slices.
/// Returns 0.0 when either input is (numerically) constant.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn cholesky_roundtrip() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = cholesky(&a).unwrap();
        let back = l.dot(&l.t());
        for (x, y) in a.iter().zip(back.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn spd_solve_matches_direct() {
        let a = array![[4.0, 1.0], [1.0, 3.0]];
        let b = array![1.0, 2.0];
        let x = solve_spd(&a, &b).unwrap();
        // inverse of [[4,1],[1,3]] is 1/11 [[3,-1],[-1,4]]
        assert_relative_eq!(x[0], (3.0 - 2.0) / 11.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], (-1.0 + 8.0) / 11.0, epsilon = 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(cholesky(&a).is_err());
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = array![[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
        let (eig, v) = jacobi_eigh(&a);
        // reconstruct and compare
        let mut rec = Array2::<f64>::zeros((3, 3));
        for k in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    rec[[i, j]] += eig[k] * v[[i, k]] * v[[j, k]];
                }
            }
        }
        for (x, y) in a.iter().zip(rec.iter()) {
            assert_relative_eq!(x, y, epsilon = 1e-10);
        }
        // known eigenvalues 2, 2 ± sqrt(2)
        let mut sorted: Vec<f64> = eig.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_relative_eq!(sorted[0], 2.0 - 2.0_f64.sqrt(), epsilon = 1e-10);
        assert_relative_eq!(sorted[1], 2.0, epsilon = 1e-10);
        assert_relative_eq!(sorted[2], 2.0 + 2.0_f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn pinv_solve_handles_rank_deficiency() {
        // gram of a rank-1 "design": a = [1, 2]ᵀ replicated
        let gram = array![[1.0, 2.0], [2.0, 4.0]];
        let rhs = array![[1.0], [2.0]];
        let (x, dropped) = pinv_solve_gram(&gram, &rhs, 1e-12);
        assert_eq!(dropped, 1);
        // minimum-norm solution of gram x = rhs is [0.2, 0.4]
        assert_relative_eq!(x[[0, 0]], 0.2, epsilon = 1e-10);
        assert_relative_eq!(x[[1, 0]], 0.4, epsilon = 1e-10);
    }

    #[test]
    fn pearson_basics() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        assert_relative_eq!(pearson(&x, &y), 1.0, epsilon = 1e-12);
        let yneg = [8.0, 6.0, 4.0, 2.0];
        assert_relative_eq!(pearson(&x, &yneg), -1.0, epsilon = 1e-12);
        let konst = [5.0, 5.0, 5.0, 5.0];
        assert_eq!(pearson(&x, &konst), 0.0);
    }
}
