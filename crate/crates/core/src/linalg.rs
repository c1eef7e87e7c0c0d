//! Dense symmetric positive-definite solves for the small normal equations
//! of the logistic fit.

use crate::scalar::Scalar;

/// In-place Cholesky factorisation of the row-major `k×k` matrix `a`
/// (lower triangle holds `L` afterwards). On failure returns the index of
/// the first pivot that is not positive beyond `tol`.
pub(crate) fn cholesky<T: Scalar>(a: &mut [T], k: usize, tol: T) -> Result<(), usize> {
    for j in 0..k {
        let mut d = a[j * k + j];
        for m in 0..j {
            d = d - a[j * k + m] * a[j * k + m];
        }
        if !(d > tol) {
            return Err(j);
        }
        let d = d.sqrt();
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for m in 0..j {
                s = s - a[i * k + m] * a[j * k + m];
            }
            a[i * k + j] = s / d;
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` given the factor produced by [`cholesky`].
pub(crate) fn cholesky_solve<T: Scalar>(l: &[T], k: usize, b: &[T]) -> Vec<T> {
    let mut y = b.to_vec();
    for i in 0..k {
        let mut s = y[i];
        for m in 0..i {
            s = s - l[i * k + m] * y[m];
        }
        y[i] = s / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = y[i];
        for m in i + 1..k {
            s = s - l[m * k + i] * y[m];
        }
        y[i] = s / l[i * k + i];
    }
    y
}
