//! Small dense helpers: all matrices here are tiny (client count or model
//! dimension), so plain Gaussian elimination and power iteration suffice.

use ndarray::{Array1, Array2};

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
/// Panics on non-square inputs; returns `None` for (numerically) singular `A`.
pub fn solve_dense(a: &Array2<f64>, b: &Array1<f64>) -> Option<Array1<f64>> {
    let n = a.nrows();
    assert_eq!(a.ncols(), n, "square matrix required");
    assert_eq!(b.len(), n);
    let mut m = a.clone();
    let mut rhs = b.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&r1, &r2| m[[r1, col]].abs().partial_cmp(&m[[r2, col]].abs()).unwrap())?;
        if m[[pivot, col]].abs() < 1e-14 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                m.swap([pivot, k], [col, k]);
            }
            rhs.swap(pivot, col);
        }
        for row in (col + 1)..n {
            let f = m[[row, col]] / m[[col, col]];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                m[[row, k]] -= f * m[[col, k]];
            }
            rhs[row] -= f * rhs[col];
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..n {
            acc -= m[[row, k]] * x[k];
        }
        x[row] = acc / m[[row, row]];
    }
    Some(x)
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration with a
/// Rayleigh-quotient readout.
pub fn psd_lambda_max(a: &Array2<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    if n == 0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0f64;
    for _ in 0..max_iter {
        let w = a.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let v_next = &w / norm;
        let new_lambda = v_next.dot(&a.dot(&v_next));
        let done = (new_lambda - lambda).abs() <= tol * new_lambda.abs().max(1.0);
        lambda = new_lambda;
        v = v_next;
        if done {
            break;
        }
    }
    lambda
}

/// Smallest eigenvalue of a symmetric PSD matrix via the shifted complement
/// `λ_min(A) = s − λ_max(sI − A)` with `s` just above `λ_max(A)`.
pub fn psd_lambda_min(a: &Array2<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = a.nrows();
    let shift = psd_lambda_max(a, tol, max_iter) * 1.01 + 1e-12;
    let mut shifted = -a.clone();
    for i in 0..n {
        shifted[[i, i]] += shift;
    }
    shift - psd_lambda_max(&shifted, tol, max_iter)
}
