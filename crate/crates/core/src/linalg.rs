//! Small dense linear-algebra helpers shared across modules.
//!
//! Data matrices live in `ndarray`; factorizations (Cholesky, symmetric
//! eigen, LU) go through `nalgebra` on the small dense systems that arise
//! here (grid-sized covariances, basis-sized normal equations).

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Trapezoid quadrature weights for an ordered set of points.
pub fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let m = points.len();
    assert!(m >= 2, "trapezoid weights need at least two points");
    let mut w = vec![0.0; m];
    for i in 0..m - 1 {
        let h = points[i + 1] - points[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Trapezoid integral of `values` sampled at `points`.
pub fn trapezoid_integral(points: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(points.len(), values.len());
    let mut acc = 0.0;
    for i in 0..points.len() - 1 {
        acc += 0.5 * (points[i + 1] - points[i]) * (values[i] + values[i + 1]);
    }
    acc
}

pub fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn to_nd(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Solve the symmetric positive-definite system `a x = b` by Cholesky,
/// escalating a diagonal jitter from `jitter0` by factors of 10 up to
/// `jitter_max` if the factorization fails.
pub fn solve_spd_jittered(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    jitter0: f64,
    jitter_max: f64,
) -> Result<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let scale = a.diagonal().amax().max(1.0);
    let mut jitter = jitter0;
    while jitter <= jitter_max {
        let mut aj = a.clone();
        for i in 0..aj.nrows() {
            aj[(i, i)] += jitter * scale;
        }
        if let Some(chol) = aj.cholesky() {
            log::warn!("cholesky required jitter {jitter:.1e}");
            return Ok(chol.solve(b));
        }
        jitter *= 10.0;
    }
    Err(Error::numeric(format!(
        "cholesky failed at max jitter {jitter_max:.1e}"
    )))
}

/// Cholesky factor (lower) of `a`, with the same escalating jitter scheme.
pub fn cholesky_jittered(
    a: &DMatrix<f64>,
    jitter0: f64,
    jitter_max: f64,
) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(chol.l());
    }
    let mut jitter = jitter0;
    while jitter <= jitter_max {
        let mut aj = a.clone();
        for i in 0..aj.nrows() {
            aj[(i, i)] += jitter;
        }
        if let Some(chol) = aj.cholesky() {
            return Ok(chol.l());
        }
        jitter *= 10.0;
    }
    Err(Error::numeric(format!(
        "cholesky failed at max jitter {jitter_max:.1e}"
    )))
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues sorted
/// descending. Returns (eigenvalues, eigenvectors as columns).
pub fn symmetric_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let se = a.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        se.eigenvalues[j]
            .partial_cmp(&se.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vecs.set_column(k, &se.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Solve a general square system by LU; error on singularity.
pub fn solve_lu(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| Error::numeric("singular system in LU solve"))
}

/// Root-mean-square difference of two equally long slices.
pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().max(1) as f64;
    (a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// Mean of a slice.
pub fn mean(a: &[f64]) -> f64 {
    a.iter().sum::<f64>() / a.len().max(1) as f64
}

/// Sample variance (denominator n-1).
pub fn variance(a: &[f64]) -> f64 {
    let m = mean(a);
    a.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (a.len() - 1).max(1) as f64
}

/// Trapezoid inner product of two functions sampled on `points`.
pub fn trapezoid_inner(points: &[f64], f: &[f64], g: &[f64]) -> f64 {
    let w = trapezoid_weights(points);
    f.iter()
        .zip(g)
        .zip(&w)
        .map(|((&a, &b), &wi)| a * b * wi)
        .sum()
}

pub fn array1_to_dvec(a: &Array1<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len(), a.iter().copied())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trapezoid_weights_sum_to_domain() {
        let pts: Vec<f64> = (0..11).map(|i| i as f64 / 10.0).collect();
        let w = trapezoid_weights(&pts);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn trapezoid_integral_linear_exact() {
        let pts: Vec<f64> = (0..5).map(|i| i as f64 / 4.0).collect();
        let vals: Vec<f64> = pts.iter().map(|t| 2.0 * t + 1.0).collect();
        assert_abs_diff_eq!(trapezoid_integral(&pts, &vals), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn spd_solve_roundtrip() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_row_slice(&[1.0, 2.0]);
        let x = solve_spd_jittered(&a, &b, 1e-10, 1e-6).unwrap();
        let r = &a * &x - &b;
        assert!(r.amax() < 1e-12);
    }
}
