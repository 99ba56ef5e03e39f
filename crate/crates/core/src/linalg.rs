//! Small dense linear-algebra helpers: a cyclic Jacobi eigensolver for
//! symmetric matrices and a Cholesky solve. Both are deterministic, which
//! keeps every decomposition in the crate bit-reproducible.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::float::Float;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues sorted descending
/// and eigenvectors as matching columns. Each eigenvector's largest-magnitude
/// component is made positive so the decomposition is sign-deterministic.
pub fn jacobi_eigh<F: Float>(m: &Array2<F>) -> (Array1<F>, Array2<F>) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "jacobi_eigh needs a square matrix");
    let mut a = m.clone();
    let mut v = Array2::<F>::eye(n);

    let off = |a: &Array2<F>| {
        let mut s = F::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                s = s + a[[p, q]] * a[[p, q]];
            }
        }
        s
    };
    let scale = (0..n)
        .map(|i| m[[i, i]].abs())
        .fold(F::zero(), |acc, x| acc.max(x))
        .max(F::one());
    let tol = F::cast(1e-30) * scale * scale;

    for _sweep in 0..100 {
        if off(&a) <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq == F::zero() {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (F::cast(2.0) * apq);
                let t = {
                    let sign = if theta >= F::zero() { F::one() } else { -F::one() };
                    sign / (theta.abs() + (theta * theta + F::one()).sqrt())
                };
                let c = F::one() / (t * t + F::one()).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
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

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].partial_cmp(&a[[i, i]]).unwrap());

    let mut evals = Array1::<F>::zeros(n);
    let mut evecs = Array2::<F>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        evals[dst] = a[[src, src]];
        // Deterministic sign: largest-|.| component positive.
        let col = v.column(src);
        let mut best = 0;
        for k in 1..n {
            if col[k].abs() > col[best].abs() {
                best = k;
            }
        }
        let flip = if col[best] < F::zero() { -F::one() } else { F::one() };
        for k in 0..n {
            evecs[[k, dst]] = flip * col[k];
        }
    }
    (evals, evecs)
}

/// Solve `A x = b` for symmetric positive-definite `A` via Cholesky.
pub fn cholesky_solve<F: Float>(a: &Array2<F>, b: &Array1<F>) -> Result<Array1<F>> {
    let n = a.nrows();
    let mut l = Array2::<F>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum = sum - l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= F::zero() {
                    return Err(Error::RankDeficient(
                        "matrix not positive definite in Cholesky".into(),
                    ));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    // Forward then backward substitution.
    let mut y = Array1::<F>::zeros(n);
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum = sum - l[[i, k]] * y[k];
        }
        y[i] = sum / l[[i, i]];
    }
    let mut x = Array1::<F>::zeros(n);
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum = sum - l[[k, i]] * x[k];
        }
        x[i] = sum / l[[i, i]];
    }
    Ok(x)
}
