//! B-spline bases and interpolating splines.
//!
//! The basis type backs both the binning pipeline (interpolating completed
//! bin values back to the full grid) and the penalized regression fits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A B-spline basis on a clamped knot vector.
///
/// `knots` is the full knot vector with the boundary knots repeated
/// `degree + 1` times, so `n_basis = knots.len() - degree - 1`
/// (equivalently, number of interior knots + degree + 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplineBasis {
    pub degree: usize,
    pub knots: Vec<f64>,
    pub n_basis: usize,
}

impl SplineBasis {
    /// Cubic basis with `n_basis` functions and equally spaced interior
    /// knots on `[lo, hi]`.
    pub fn cubic_uniform(n_basis: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::uniform(3, n_basis, lo, hi)
    }

    /// Basis of the given degree with equally spaced interior knots.
    pub fn uniform(degree: usize, n_basis: usize, lo: f64, hi: f64) -> Result<Self> {
        if n_basis < degree + 1 {
            return Err(Error::invalid(format!(
                "need at least degree+1 = {} basis functions, got {n_basis}",
                degree + 1
            )));
        }
        if !(hi > lo) {
            return Err(Error::invalid("knot span must have positive width"));
        }
        let n_interior = n_basis - degree - 1;
        let mut knots = Vec::with_capacity(n_basis + degree + 1);
        for _ in 0..=degree {
            knots.push(lo);
        }
        for i in 1..=n_interior {
            knots.push(lo + (hi - lo) * i as f64 / (n_interior + 1) as f64);
        }
        for _ in 0..=degree {
            knots.push(hi);
        }
        Ok(SplineBasis {
            degree,
            knots,
            n_basis,
        })
    }

    pub fn lo(&self) -> f64 {
        self.knots[0]
    }

    pub fn hi(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Index of the knot span containing `t` (clamped to the boundary spans).
    fn span(&self, t: f64) -> usize {
        let d = self.degree;
        let hi_span = self.knots.len() - d - 2; // last valid span index
        if t >= self.hi() {
            return hi_span;
        }
        if t <= self.lo() {
            return d;
        }
        // binary search over knots[d ..= hi_span+1]
        let mut lo = d;
        let mut hi = hi_span;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.knots[mid] <= t {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// All basis function values at `t` (inside the knot span; callers
    /// needing extrapolation use [`SplineBasis::eval_extrapolated`]).
    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_basis];
        let t = t.clamp(self.lo(), self.hi());
        let span = self.span(t);
        let nz = self.nonzero_at(t, span);
        for (offset, &v) in nz.iter().enumerate() {
            let j = span - self.degree + offset;
            if j < self.n_basis {
                out[j] = v;
            }
        }
        out
    }

    /// The `degree + 1` non-zero basis values on the span containing `t`
    /// (Cox–de Boor triangular scheme).
    fn nonzero_at(&self, t: f64, span: usize) -> Vec<f64> {
        let d = self.degree;
        let k = &self.knots;
        let mut vals = vec![0.0; d + 1];
        vals[0] = 1.0;
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        for j in 1..=d {
            left[j] = t - k[span + 1 - j];
            right[j] = k[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom != 0.0 { vals[r] / denom } else { 0.0 };
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }
        vals
    }

    /// Basis values with linear continuation outside the knot span.
    pub fn eval_extrapolated(&self, t: f64) -> Vec<f64> {
        let lo = self.lo();
        let hi = self.hi();
        if t >= lo && t <= hi {
            return self.eval(t);
        }
        let (edge, x) = if t < lo { (lo, t) } else { (hi, t) };
        let b = self.eval(edge);
        let db = self.eval_derivative(edge, 1);
        b.iter()
            .zip(&db)
            .map(|(&v, &dv)| v + dv * (x - edge))
            .collect()
    }

    /// Derivative of order 1 or 2 of every basis function at `t`.
    pub fn eval_derivative(&self, t: f64, order: usize) -> Vec<f64> {
        assert!(order == 1 || order == 2, "only first/second derivatives");
        if self.degree < order {
            return vec![0.0; self.n_basis];
        }
        if order == 1 {
            self.derivative_from(&|s: &SplineBasis, x: f64| s.eval(x), t)
        } else {
            self.derivative_from(&|s: &SplineBasis, x: f64| s.eval_derivative(x, 1), t)
        }
    }

    /// One application of the B-spline derivative recursion to the values
    /// produced by `lower` on the degree-(d-1) basis sharing this knot vector.
    fn derivative_from(&self, lower: &dyn Fn(&SplineBasis, f64) -> Vec<f64>, t: f64) -> Vec<f64> {
        let d = self.degree;
        assert!(d >= 1);
        // degree-(d-1) basis on the same knot vector, dropping one knot at
        // each end
        let sub = SplineBasis {
            degree: d - 1,
            knots: self.knots[1..self.knots.len() - 1].to_vec(),
            n_basis: self.n_basis - 1,
        };
        let bl = lower(&sub, t);
        let k = &self.knots;
        let mut out = vec![0.0; self.n_basis];
        for (j, o) in out.iter_mut().enumerate() {
            let mut v = 0.0;
            let den1 = k[j + d] - k[j];
            if den1 > 0.0 && j >= 1 {
                v += d as f64 / den1 * bl[j - 1];
            }
            let den2 = k[j + d + 1] - k[j + 1];
            if den2 > 0.0 && j < bl.len() {
                v -= d as f64 / den2 * bl[j];
            }
            *o = v;
        }
        out
    }

    /// Roughness penalty matrix `P[j][l] = ∫ B_j''(t) B_l''(t) dt`.
    ///
    /// For cubic splines the second derivatives are piecewise linear, so
    /// two-point Gauss quadrature per knot span is exact.
    pub fn second_derivative_penalty(&self) -> Vec<Vec<f64>> {
        let q = self.n_basis;
        let mut p = vec![vec![0.0; q]; q];
        let d = self.degree;
        let gauss = [
            -1.0 / (3.0f64).sqrt(),
            1.0 / (3.0f64).sqrt(),
        ];
        for s in d..self.knots.len() - d - 1 {
            let a = self.knots[s];
            let b = self.knots[s + 1];
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for &g in &gauss {
                let t = mid + half * g;
                let d2 = self.eval_derivative(t, 2);
                for j in 0..q {
                    if d2[j] == 0.0 {
                        continue;
                    }
                    for l in j..q {
                        let v = d2[j] * d2[l] * half;
                        p[j][l] += v;
                        if l != j {
                            p[l][j] += v;
                        }
                    }
                }
            }
        }
        p
    }
}

/// Second-difference penalty matrix `D2ᵀD2` for a coefficient vector of
/// length `q`.
pub fn second_difference_penalty(q: usize) -> Vec<Vec<f64>> {
    let mut p = vec![vec![0.0; q]; q];
    if q < 3 {
        return p;
    }
    for r in 0..q - 2 {
        let idx = [r, r + 1, r + 2];
        let coef = [1.0, -2.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                p[idx[a]][idx[b]] += coef[a] * coef[b];
            }
        }
    }
    p
}

/// Interpolate `(x, y)` pairs with a natural cubic spline and evaluate at
/// `targets`. Falls back to exact polynomial interpolation of degree
/// `x.len() - 1` when fewer than four points are given.
pub fn natural_cubic_interpolate(x: &[f64], y: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    let k = x.len();
    if k != y.len() || k == 0 {
        return Err(Error::invalid("interpolation needs matching nonempty x/y"));
    }
    for w in x.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::invalid("interpolation abscissae must increase"));
        }
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("interpolation values must be finite"));
    }
    if k < 4 {
        return Ok(targets
            .iter()
            .map(|&t| lagrange_eval(x, y, t))
            .collect());
    }

    // Second derivatives m_i with natural end conditions: tridiagonal solve.
    let mut m = vec![0.0; k];
    {
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        let mut sub = vec![0.0; k];
        let mut sup = vec![0.0; k];
        for i in 1..k - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            sub[i] = h0;
            diag[i] = 2.0 * (h0 + h1);
            sup[i] = h1;
            rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        }
        // Thomas algorithm over interior rows 1..k-1 (m_0 = m_{k-1} = 0)
        for i in 2..k - 1 {
            let w = sub[i] / diag[i - 1];
            diag[i] -= w * sup[i - 1];
            rhs[i] -= w * rhs[i - 1];
        }
        for i in (1..k - 1).rev() {
            let upper = if i + 1 < k - 1 { sup[i] * m[i + 1] } else { 0.0 };
            m[i] = (rhs[i] - upper) / diag[i];
        }
    }

    let eval_one = |t: f64| -> f64 {
        // locate segment (clamp outside the abscissa range)
        let i = match x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(k - 2),
            Err(0) => 0,
            Err(i) if i >= k => k - 2,
            Err(i) => i - 1,
        };
        let h = x[i + 1] - x[i];
        let a = (x[i + 1] - t) / h;
        let b = (t - x[i]) / h;
        a * y[i]
            + b * y[i + 1]
            + ((a * a * a - a) * m[i] + (b * b * b - b) * m[i + 1]) * h * h / 6.0
    };
    Ok(targets.iter().map(|&t| eval_one(t)).collect())
}

fn lagrange_eval(x: &[f64], y: &[f64], t: f64) -> f64 {
    let k = x.len();
    let mut acc = 0.0;
    for i in 0..k {
        let mut li = 1.0;
        for j in 0..k {
            if j != i {
                li *= (t - x[j]) / (x[i] - x[j]);
            }
        }
        acc += y[i] * li;
    }
    acc
}
