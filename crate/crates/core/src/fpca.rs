//! Sparse functional PCA and PACE conditional-expectation imputation.
//!
//! The pipeline estimates a mean curve and covariance surface from pooled
//! sparse observations by local linear smoothing, eigendecomposes the
//! surface under trapezoid quadrature, and predicts per-curve principal
//! component scores as Gaussian conditional means (BLUPs).

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::func_data::{Grid, SparseCurve, SparseFunctionalDataset};
use crate::linalg::{solve_spd_jittered, symmetric_eigen_desc, trapezoid_weights};

/// Estimated mean curve on the grid.
#[derive(Debug, Clone)]
pub struct MeanEstimate {
    pub values: Vec<f64>,
    pub bandwidth: f64,
}

/// Estimated covariance surface with the measurement-noise variance split
/// off the diagonal.
#[derive(Debug, Clone)]
pub struct CovSurface {
    pub surface: Array2<f64>,
    pub noise_var: f64,
    pub bandwidth: f64,
}

/// Truncated eigen-decomposition of the covariance surface.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// J×m matrix; row j is the j-th eigenfunction on the grid.
    pub eigenfunctions: Array2<f64>,
    /// Nonincreasing positive eigenvalues.
    pub eigenvalues: Vec<f64>,
    pub mean: MeanEstimate,
    pub noise_var: f64,
    /// Achieved fraction of variance explained by the retained components.
    pub fve: f64,
    pub grid: Grid,
}

/// Options for the PACE pipeline.
#[derive(Debug, Clone, Copy)]
pub struct PaceOptions {
    /// Mean-smoother bandwidth; `None` selects by 5-fold cross-validation.
    pub mean_bandwidth: Option<f64>,
    /// Covariance-smoother bandwidth; `None` selects by cross-validation.
    pub cov_bandwidth: Option<f64>,
    pub fve_threshold: f64,
    pub max_components: usize,
}

impl Default for PaceOptions {
    fn default() -> Self {
        PaceOptions {
            mean_bandwidth: None,
            cov_bandwidth: None,
            fve_threshold: 0.95,
            max_components: 20,
        }
    }
}

/// Completed curves together with the fitted model.
#[derive(Debug, Clone)]
pub struct PaceResult {
    pub completed: Array2<f64>,
    pub eigen: EigenSystem,
}

const BANDWIDTH_FRACTIONS: [f64; 5] = [0.05, 0.1, 0.15, 0.2, 0.3];
const CV_FOLDS: usize = 5;

fn epanechnikov(u: f64) -> f64 {
    let a = u.abs();
    if a < 1.0 {
        0.75 * (1.0 - a * a)
    } else {
        0.0
    }
}

/// A weighted 1-D point cloud aggregated by coordinate (identical
/// coordinates collapse into one weighted entry, which leaves local linear
/// fits unchanged).
#[derive(Debug, Clone, Default)]
struct Cloud1 {
    t: Vec<f64>,
    w: Vec<f64>,
    wy: Vec<f64>,
}

impl Cloud1 {
    fn from_points(points: &mut Vec<(f64, f64)>) -> Self {
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut out = Cloud1::default();
        for &(t, y) in points.iter() {
            if out.t.last() == Some(&t) {
                let i = out.t.len() - 1;
                out.w[i] += 1.0;
                out.wy[i] += y;
            } else {
                out.t.push(t);
                out.w.push(1.0);
                out.wy.push(y);
            }
        }
        out
    }

    fn merge(clouds: &[&Cloud1]) -> Cloud1 {
        let mut pts: Vec<(f64, f64, f64)> = Vec::new();
        for c in clouds {
            for i in 0..c.t.len() {
                pts.push((c.t[i], c.w[i], c.wy[i]));
            }
        }
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut out = Cloud1::default();
        for (t, w, wy) in pts {
            if out.t.last() == Some(&t) {
                let i = out.t.len() - 1;
                out.w[i] += w;
                out.wy[i] += wy;
            } else {
                out.t.push(t);
                out.w.push(w);
                out.wy.push(wy);
            }
        }
        out
    }

    /// Local linear fit at `x0`. Falls back to widening the bandwidth and,
    /// as a last resort, the nearest point's mean value.
    fn local_linear(&self, x0: f64, h: f64, domain: f64) -> f64 {
        let mut h = h;
        let mut widened = false;
        loop {
            if let Some(v) = self.try_local_linear(x0, h) {
                if widened {
                    log::warn!("no kernel mass at {x0}; bandwidth widened to {h:.3}");
                }
                return v;
            }
            if h > 2.0 * domain {
                break;
            }
            h *= 1.5;
            widened = true;
        }
        let i = self.nearest(x0);
        self.wy[i] / self.w[i]
    }

    fn nearest(&self, x0: f64) -> usize {
        match self.t.binary_search_by(|v| v.partial_cmp(&x0).unwrap()) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i >= self.t.len() => self.t.len() - 1,
            Err(i) => {
                if (x0 - self.t[i - 1]) <= (self.t[i] - x0) {
                    i - 1
                } else {
                    i
                }
            }
        }
    }

    fn try_local_linear(&self, x0: f64, h: f64) -> Option<f64> {
        let lo = self.t.partition_point(|&t| t < x0 - h);
        let hi = self.t.partition_point(|&t| t <= x0 + h);
        if lo >= hi {
            return None;
        }
        let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in lo..hi {
            let d = self.t[i] - x0;
            let k = self.w[i] * epanechnikov(d / h);
            if k == 0.0 {
                continue;
            }
            let ybar = self.wy[i] / self.w[i];
            s0 += k;
            s1 += k * d;
            s2 += k * d * d;
            t0 += k * ybar;
            t1 += k * d * ybar;
        }
        if s0 <= 0.0 {
            return None;
        }
        let denom = s0 * s2 - s1 * s1;
        if denom.abs() <= 1e-12 * (s0 * s2).abs().max(1e-300) {
            // degenerate design (all mass at one coordinate)
            return Some(t0 / s0);
        }
        Some((s2 * t0 - s1 * t1) / denom)
    }
}

/// A weighted 2-D point cloud sorted by the first coordinate.
#[derive(Debug, Clone, Default)]
struct Cloud2 {
    s: Vec<f64>,
    t: Vec<f64>,
    w: Vec<f64>,
    wy: Vec<f64>,
}

impl Cloud2 {
    fn from_points(points: &mut Vec<(f64, f64, f64)>) -> Self {
        points.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
        let mut out = Cloud2::default();
        for &(s, t, y) in points.iter() {
            if out.s.last() == Some(&s) && out.t.last() == Some(&t) {
                let i = out.s.len() - 1;
                out.w[i] += 1.0;
                out.wy[i] += y;
            } else {
                out.s.push(s);
                out.t.push(t);
                out.w.push(1.0);
                out.wy.push(y);
            }
        }
        out
    }

    fn merge(clouds: &[&Cloud2]) -> Cloud2 {
        let mut pts: Vec<(f64, f64, f64, f64)> = Vec::new();
        for c in clouds {
            for i in 0..c.s.len() {
                pts.push((c.s[i], c.t[i], c.w[i], c.wy[i]));
            }
        }
        pts.sort_by(|a, b| (a.0, a.1).partial_cmp(&(b.0, b.1)).unwrap());
        let mut out = Cloud2::default();
        for (s, t, w, wy) in pts {
            if out.s.last() == Some(&s) && out.t.last() == Some(&t) {
                let i = out.s.len() - 1;
                out.w[i] += w;
                out.wy[i] += wy;
            } else {
                out.s.push(s);
                out.t.push(t);
                out.w.push(w);
                out.wy.push(wy);
            }
        }
        out
    }

    fn local_plane(&self, s0: f64, t0: f64, h: f64, domain: f64) -> f64 {
        let mut h = h;
        loop {
            if let Some(v) = self.try_local_plane(s0, t0, h) {
                return v;
            }
            if h > 2.0 * domain {
                break;
            }
            h *= 1.5;
        }
        // nearest point by Chebyshev distance
        let mut best = (f64::INFINITY, 0usize);
        for i in 0..self.s.len() {
            let d = (self.s[i] - s0).abs().max((self.t[i] - t0).abs());
            if d < best.0 {
                best = (d, i);
            }
        }
        self.wy[best.1] / self.w[best.1]
    }

    fn try_local_plane(&self, s0: f64, t0: f64, h: f64) -> Option<f64> {
        let lo = self.s.partition_point(|&v| v < s0 - h);
        let hi = self.s.partition_point(|&v| v <= s0 + h);
        if lo >= hi {
            return None;
        }
        // weighted normal equations for y ~ 1 + (s-s0) + (t-t0)
        let mut a = [[0.0f64; 3]; 3];
        let mut b = [0.0; 3];
        let mut any = false;
        for i in lo..hi {
            let dt = self.t[i] - t0;
            if dt.abs() >= h {
                continue;
            }
            let ds = self.s[i] - s0;
            let k = self.w[i] * epanechnikov(ds / h) * epanechnikov(dt / h);
            if k == 0.0 {
                continue;
            }
            any = true;
            let ybar = self.wy[i] / self.w[i];
            let z = [1.0, ds, dt];
            for r in 0..3 {
                for c in 0..3 {
                    a[r][c] += k * z[r] * z[c];
                }
                b[r] += k * z[r] * ybar;
            }
        }
        if !any || a[0][0] <= 0.0 {
            return None;
        }
        match solve3(a, b) {
            Some(sol) => Some(sol[0]),
            // degenerate design: weighted mean
            None => Some(b[0] / a[0][0]),
        }
    }
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    let scale = a[0][0].abs().max(a[1][1].abs()).max(a[2][2].abs());
    for col in 0..3 {
        let mut piv = col;
        for r in col + 1..3 {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() <= 1e-12 * scale.max(1e-300) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let mut acc = b[r];
        for c in r + 1..3 {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Some(x)
}

fn pooled_clouds_by_fold(ds: &SparseFunctionalDataset) -> Vec<Cloud1> {
    let mut folds: Vec<Vec<(f64, f64)>> = vec![Vec::new(); CV_FOLDS];
    for (i, curve) in ds.curves.iter().enumerate() {
        let f = i % CV_FOLDS;
        for &(t, x) in curve.observations() {
            folds[f].push((t, x));
        }
    }
    folds.iter_mut().map(Cloud1::from_points).collect()
}

/// Cross-validated squared-error score for a bandwidth (an additive
/// constant independent of the bandwidth is dropped).
fn cv_score_1d(folds: &[Cloud1], h: f64, domain: f64) -> f64 {
    let mut loss = 0.0;
    for f in 0..folds.len() {
        let train_refs: Vec<&Cloud1> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != f)
            .map(|(_, c)| c)
            .collect();
        let train = Cloud1::merge(&train_refs);
        if train.t.is_empty() {
            continue;
        }
        let test = &folds[f];
        for i in 0..test.t.len() {
            let pred = train.local_linear(test.t[i], h, domain);
            loss += test.w[i] * pred * pred - 2.0 * pred * test.wy[i];
        }
    }
    loss
}

fn select_bandwidth_1d(ds: &SparseFunctionalDataset, grid: &Grid) -> f64 {
    let domain = grid.max() - grid.min();
    let folds = pooled_clouds_by_fold(ds);
    let mut best = (f64::INFINITY, BANDWIDTH_FRACTIONS[0] * domain);
    for &frac in &BANDWIDTH_FRACTIONS {
        let h = frac * domain;
        let score = cv_score_1d(&folds, h, domain);
        if score < best.0 {
            best = (score, h);
        }
    }
    best.1
}

/// Local linear mean estimate over all pooled observations, evaluated on
/// the grid with an Epanechnikov kernel.
pub fn estimate_mean(
    ds: &SparseFunctionalDataset,
    grid: &Grid,
    bandwidth: Option<f64>,
) -> Result<MeanEstimate> {
    if ds.n_observations() < 10 {
        return Err(Error::insufficient(
            "mean estimation needs at least 10 pooled observations",
        ));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(_) => return Err(Error::invalid("bandwidth must be positive")),
        None => select_bandwidth_1d(ds, grid),
    };
    let domain = grid.max() - grid.min();
    let mut pts: Vec<(f64, f64)> = ds
        .curves
        .iter()
        .flat_map(|c| c.observations().iter().copied())
        .collect();
    let cloud = Cloud1::from_points(&mut pts);
    let values: Vec<f64> = grid
        .points()
        .iter()
        .map(|&t| cloud.local_linear(t, h, domain))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("mean estimate produced non-finite values"));
    }
    Ok(MeanEstimate {
        values,
        bandwidth: h,
    })
}

struct RawCov {
    /// Off-diagonal raw products, split into CV folds by source curve.
    off_folds: Vec<Cloud2>,
    /// Same-point squared residuals (raw variance including noise).
    diag: Cloud1,
}

fn raw_cov_points(ds: &SparseFunctionalDataset, mean: &MeanEstimate, grid: &Grid) -> RawCov {
    let mut off: Vec<Vec<(f64, f64, f64)>> = vec![Vec::new(); CV_FOLDS];
    let mut diag_pts: Vec<(f64, f64)> = Vec::new();
    for (ci, curve) in ds.curves.iter().enumerate() {
        let fold = ci % CV_FOLDS;
        let resid: Vec<(f64, f64)> = curve
            .observations()
            .iter()
            .map(|&(t, x)| (t, x - interp_mean(mean, grid, t)))
            .collect();
        for a in 0..resid.len() {
            diag_pts.push((resid[a].0, resid[a].1 * resid[a].1));
            for b in 0..resid.len() {
                if a != b {
                    off[fold].push((resid[a].0, resid[b].0, resid[a].1 * resid[b].1));
                }
            }
        }
    }
    RawCov {
        off_folds: off.iter_mut().map(Cloud2::from_points).collect(),
        diag: Cloud1::from_points(&mut diag_pts),
    }
}

/// Mean value at an arbitrary time: linear interpolation between grid
/// points (observation times normally sit on the grid, making this exact).
fn interp_mean(mean: &MeanEstimate, grid: &Grid, t: f64) -> f64 {
    let pts = grid.points();
    if t <= pts[0] {
        return mean.values[0];
    }
    if t >= pts[pts.len() - 1] {
        return mean.values[pts.len() - 1];
    }
    let i = (pts.partition_point(|&p| p <= t) - 1).min(pts.len() - 2);
    let frac = (t - pts[i]) / (pts[i + 1] - pts[i]);
    mean.values[i] * (1.0 - frac) + mean.values[i + 1] * frac
}

fn cv_score_2d(folds: &[Cloud2], h: f64, domain: f64) -> f64 {
    let mut loss = 0.0;
    for f in 0..folds.len() {
        let train_refs: Vec<&Cloud2> = folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != f)
            .map(|(_, c)| c)
            .collect();
        let train = Cloud2::merge(&train_refs);
        if train.s.is_empty() {
            continue;
        }
        let test = &folds[f];
        for i in 0..test.s.len() {
            let pred = train.local_plane(test.s[i], test.t[i], h, domain);
            loss += test.w[i] * pred * pred - 2.0 * pred * test.wy[i];
        }
    }
    loss
}

/// Covariance surface by 2-D local linear smoothing of the off-diagonal
/// raw covariance products. The measurement-noise variance is the average
/// gap between the smoothed raw diagonal and the surface diagonal over the
/// middle 50% of the domain, floored at zero.
pub fn estimate_cov(
    ds: &SparseFunctionalDataset,
    mean: &MeanEstimate,
    grid: &Grid,
    bandwidth: Option<f64>,
) -> Result<CovSurface> {
    if !ds.curves.iter().any(|c| c.len() >= 2) {
        return Err(Error::insufficient(
            "covariance estimation needs a curve with at least 2 observations",
        ));
    }
    let raw = raw_cov_points(ds, mean, grid);
    let domain = grid.max() - grid.min();
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(_) => return Err(Error::invalid("bandwidth must be positive")),
        None => {
            let mut best = (f64::INFINITY, BANDWIDTH_FRACTIONS[0] * domain);
            for &frac in &BANDWIDTH_FRACTIONS {
                let cand = frac * domain;
                let score = cv_score_2d(&raw.off_folds, cand, domain);
                if score < best.0 {
                    best = (score, cand);
                }
            }
            best.1
        }
    };
    let all_refs: Vec<&Cloud2> = raw.off_folds.iter().collect();
    let cloud = Cloud2::merge(&all_refs);
    let m = grid.len();
    let pts = grid.points();
    let mut surface = Array2::zeros((m, m));
    // raw points are symmetric in (s, t): compute the upper triangle only
    let upper: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i..m).map(move |j| (i, j)))
        .collect();
    let vals: Vec<f64> = upper
        .par_iter()
        .map(|&(i, j)| cloud.local_plane(pts[i], pts[j], h, domain))
        .collect();
    for (&(i, j), &v) in upper.iter().zip(&vals) {
        surface[[i, j]] = v;
        surface[[j, i]] = v;
    }
    // noise variance from the diagonal gap over the middle 50% of the domain
    let lo = grid.min() + 0.25 * domain;
    let hi = grid.min() + 0.75 * domain;
    let mut gap = 0.0;
    let mut count = 0usize;
    for (j, &t) in pts.iter().enumerate() {
        if t >= lo && t <= hi {
            gap += raw.diag.local_linear(t, h, domain) - surface[[j, j]];
            count += 1;
        }
    }
    let noise_var = if count > 0 {
        (gap / count as f64).max(0.0)
    } else {
        0.0
    };
    Ok(CovSurface {
        surface,
        noise_var,
        bandwidth: h,
    })
}

/// Discrete eigen-decomposition of the covariance surface under trapezoid
/// quadrature. Keeps the smallest J whose cumulative eigenvalue fraction
/// reaches `fve_threshold`, capped at `max_components` and `m - 1`;
/// eigenfunctions have unit trapezoid L² norm with the largest-magnitude
/// element positive.
pub fn eigen_decompose(
    cov: &CovSurface,
    grid: &Grid,
    mean: MeanEstimate,
    opts: &PaceOptions,
) -> Result<EigenSystem> {
    let m = grid.len();
    let w = trapezoid_weights(grid.points());
    let sqrt_w: Vec<f64> = w.iter().map(|&x| x.sqrt()).collect();
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            let sym = 0.5 * (cov.surface[[i, j]] + cov.surface[[j, i]]);
            a[(i, j)] = sqrt_w[i] * sym * sqrt_w[j];
        }
    }
    let (vals, vecs) = symmetric_eigen_desc(&a);
    let positive: Vec<(f64, usize)> = vals
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| (v, i))
        .collect();
    if positive.is_empty() {
        return Err(Error::numeric(
            "covariance surface has no positive eigenvalues",
        ));
    }
    let total: f64 = positive.iter().map(|(v, _)| v).sum();
    let cap = opts.max_components.min(m - 1).max(1);
    let mut j_keep = 0;
    let mut cum = 0.0;
    for (v, _) in &positive {
        cum += v;
        j_keep += 1;
        if cum / total >= opts.fve_threshold || j_keep == cap {
            break;
        }
    }
    let fve = cum / total;
    let mut eigenfunctions = Array2::zeros((j_keep, m));
    let mut eigenvalues = Vec::with_capacity(j_keep);
    for (row, &(lam, col)) in positive.iter().take(j_keep).enumerate() {
        eigenvalues.push(lam);
        let u = vecs.column(col);
        let mut v: Vec<f64> = (0..m).map(|i| u[i] / sqrt_w[i]).collect();
        let mut max_idx = 0;
        for (i, val) in v.iter().enumerate() {
            if val.abs() > v[max_idx].abs() {
                max_idx = i;
            }
        }
        if v[max_idx] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..m {
            eigenfunctions[[row, i]] = v[i];
        }
    }
    Ok(EigenSystem {
        eigenfunctions,
        eigenvalues,
        mean,
        noise_var: cov.noise_var,
        fve,
        grid: grid.clone(),
    })
}

impl EigenSystem {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Reconstruction μ̂ + Σⱼ ξⱼ vⱼ on the grid.
    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let m = self.grid.len();
        let mut out = self.mean.values.clone();
        for (j, &xi) in scores.iter().enumerate() {
            for i in 0..m {
                out[i] += xi * self.eigenfunctions[[j, i]];
            }
        }
        out
    }
}

/// BLUP scores for one curve: ξ̂ = Λ Φ (ΦᵀΛΦ + σ̂²I)⁻¹ (x − μ̂), with Φ the
/// eigenfunctions at the observed times and the noise variance floored at
/// 1e-8 to keep the solve well-posed.
pub fn pace_scores(curve: &SparseCurve, es: &EigenSystem) -> Result<Vec<f64>> {
    let j_dim = es.n_components();
    let obs = curve.observations();
    let n_i = obs.len();
    let mut idx = Vec::with_capacity(n_i);
    for &(t, _) in obs {
        let gi = es.grid.index_of(t, 1e-9).ok_or_else(|| {
            Error::invalid(format!("observation time {t} is not on the model grid"))
        })?;
        idx.push(gi);
    }
    let sigma2 = es.noise_var.max(1e-8);
    // M = Φᵀ Λ Φ + σ² I  (n_i × n_i)
    let mut m_mat = DMatrix::zeros(n_i, n_i);
    for a in 0..n_i {
        for b in 0..n_i {
            let mut acc = 0.0;
            for j in 0..j_dim {
                acc += es.eigenvalues[j]
                    * es.eigenfunctions[[j, idx[a]]]
                    * es.eigenfunctions[[j, idx[b]]];
            }
            m_mat[(a, b)] = acc + if a == b { sigma2 } else { 0.0 };
        }
    }
    let rhs = DVector::from_iterator(
        n_i,
        obs.iter()
            .zip(&idx)
            .map(|(&(_, x), &gi)| x - es.mean.values[gi]),
    );
    let alpha = solve_spd_jittered(&m_mat, &rhs, 1e-10, 1e-6)?;
    let mut scores = vec![0.0; j_dim];
    for (j, out) in scores.iter_mut().enumerate() {
        let mut acc = 0.0;
        for a in 0..n_i {
            acc += es.eigenfunctions[[j, idx[a]]] * alpha[a];
        }
        *out = es.eigenvalues[j] * acc;
    }
    Ok(scores)
}

/// Full PACE pipeline: estimate mean and covariance, eigendecompose, score
/// every curve, and reconstruct on the grid. The reconstruction replaces
/// observed entries too (PACE smooths observation noise).
pub fn pace_impute(
    ds: &SparseFunctionalDataset,
    grid: &Grid,
    opts: &PaceOptions,
) -> Result<PaceResult> {
    let mean = estimate_mean(ds, grid, opts.mean_bandwidth)?;
    let cov = estimate_cov(ds, &mean, grid, opts.cov_bandwidth)?;
    let es = eigen_decompose(&cov, grid, mean, opts)?;
    let n = ds.n_curves();
    let m = grid.len();
    let rows: Vec<Result<Vec<f64>>> = ds
        .curves
        .par_iter()
        .map(|curve| {
            let scores = pace_scores(curve, &es)?;
            Ok(es.reconstruct(&scores))
        })
        .collect();
    let mut completed = Array2::zeros((n, m));
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for j in 0..m {
            completed[[i, j]] = row[j];
        }
    }
    Ok(PaceResult {
        completed,
        eigen: es,
    })
}
