//! Dense linear-algebra kernels: Moore-Penrose pseudoinverse, spectral norm
//! and least-norm consistent solves.
//!
//! Everything is SVD-based with a relative singular-value cutoff, which is
//! robust for the rank-deficient incidence matrices that arise throughout
//! (rank B = n − 1 for a connected graph). Vector norms are Euclidean and the
//! matrix norm is the induced 2-norm (largest singular value).

use crate::error::Error;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Default relative cutoff: singular values below `tol · σ_max` are treated
/// as zero.
pub const DEFAULT_SV_CUTOFF: f64 = 1e-12;

/// Default residual tolerance for [`least_norm_solve`]:
/// `‖Ax − b‖ ≤ tol · max(1, ‖b‖)`.
pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-10;

fn check_finite(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} contains a non-finite entry"
        )))
    }
}

/// Thin singular value decomposition `A = U·diag(σ)·Vᵀ` with `k = min(m, n)`
/// columns in `U` and `V`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub sigma: DVector<f64>,
    pub v: DMatrix<f64>,
}

/// One-sided Jacobi SVD.
///
/// Rotates pairs of columns of `W = A·V` until they are mutually orthogonal;
/// the column norms are then the singular values. This converges for every
/// matrix and stays accurate for clustered, repeated and exactly zero
/// singular values (where Golub-Reinsch bidiagonalization codes can
/// misconverge), which matters here because incidence matrices are exactly
/// rank deficient.
pub fn svd(a: &DMatrix<f64>) -> Svd {
    let (m, n) = a.shape();
    if m < n {
        let t = svd(&a.transpose());
        return Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        };
    }
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = 1e-15;
    for _sweep in 0..64 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let wp = w.column(p);
                let wq = w.column(q);
                let app = wp.dot(&wp);
                let aqq = wq.dot(&wq);
                let apq = wp.dot(&wq);
                if apq.abs() <= tol * (app * aqq).sqrt() || apq == 0.0 {
                    continue;
                }
                rotated = true;
                // Jacobi rotation diagonalizing [[app, apq], [apq, aqq]].
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let (wip, wiq) = (w[(i, p)], w[(i, q)]);
                    w[(i, p)] = c * wip - s * wiq;
                    w[(i, q)] = s * wip + c * wiq;
                }
                for i in 0..n {
                    let (vip, viq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let sigma_max = norms.iter().cloned().fold(0.0f64, f64::max);
    let mut u = DMatrix::zeros(m, n);
    let mut sigma = DVector::zeros(n);
    let mut v_sorted = DMatrix::zeros(n, n);
    let mut completed = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        sigma[k] = norms[j];
        if norms[j] > 1e-14 * sigma_max {
            u.set_column(k, &(w.column(j) / norms[j]));
        } else {
            completed.push(k);
        }
        v_sorted.set_column(k, &v.column(j));
    }
    // Columns with vanished singular values carry no direction information;
    // complete them to an orthonormal set so both factors always have
    // orthonormal columns.
    for &k in &completed {
        let mut best = DVector::zeros(m);
        let mut best_norm = -1.0;
        for trial in 0..m {
            let mut cand = DVector::zeros(m);
            cand[trial] = 1.0;
            for c in 0..n {
                if c != k {
                    let col = u.column(c);
                    let proj = col.dot(&cand);
                    cand -= col * proj;
                }
            }
            let norm = cand.norm();
            if norm > best_norm {
                best_norm = norm;
                best = cand;
            }
        }
        if best_norm > 0.0 {
            // One reorthogonalization pass for accuracy.
            for c in 0..n {
                if c != k {
                    let col = u.column(c);
                    let proj = col.dot(&best);
                    best -= col * proj;
                }
            }
            best /= best.norm();
            u.set_column(k, &best);
        }
    }
    Svd {
        u,
        sigma,
        v: v_sorted,
    }
}

/// Singular values of `A`, largest first.
pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return DVector::zeros(0);
    }
    svd(a).sigma
}

/// Moore-Penrose pseudoinverse `A†` with relative singular-value cutoff `tol`.
///
/// Satisfies the four Penrose conditions to tight relative accuracy:
/// `A A† A = A`, `A† A A† = A†`, and both `A A†` and `A† A` symmetric.
pub fn pseudoinverse(a: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    check_finite(a, "pseudoinverse input")?;
    if tol < 0.0 {
        return Err(Error::Validation(
            "pseudoinverse cutoff must be >= 0".into(),
        ));
    }
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(DMatrix::zeros(cols, rows));
    }
    let dec = svd(a);
    let sigma_max = dec.sigma.max();
    let cutoff = tol * sigma_max;
    // A† = V Σ† Uᵀ with small singular values zeroed.
    let mut pinv = DMatrix::zeros(cols, rows);
    for k in 0..dec.sigma.len() {
        let s = dec.sigma[k];
        if s > cutoff && s > 0.0 {
            pinv += dec.v.column(k) * dec.u.column(k).transpose() / s;
        }
    }
    Ok(pinv)
}

/// Spectral norm (induced 2-norm): the largest singular value of `A`.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    svd(a).sigma.max()
}

/// Minimum-Euclidean-norm solution of `A x = b`.
///
/// Returns `x = A† b` when the residual satisfies
/// `‖Ax − b‖ ≤ tol · max(1, ‖b‖)`, otherwise an [`Error::Inconsistent`];
/// an inconsistent right-hand side signals, for instance, a disturbance the
/// network cannot absorb. The returned solution is orthogonal to `ker(A)`.
pub fn least_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    check_finite(a, "least_norm_solve matrix")?;
    if !b.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("least_norm_solve rhs".into()));
    }
    if a.nrows() != b.len() {
        return Err(Error::Dimension(format!(
            "matrix has {} rows but rhs has length {}",
            a.nrows(),
            b.len()
        )));
    }
    let pinv = pseudoinverse(a, DEFAULT_SV_CUTOFF)?;
    let x = &pinv * b;
    let residual = (a * &x - b).norm();
    if residual > tol * b.norm().max(1.0) {
        return Err(Error::Inconsistent { residual, tol });
    }
    Ok(x)
}
