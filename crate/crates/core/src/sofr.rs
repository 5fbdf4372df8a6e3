//! Scalar-on-function regression on dense curves: a penalized functional
//! linear model, its logistic variant, and a continuously additive model
//! over a tensor-product spline basis.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func_data::Grid;
use crate::linalg::trapezoid_weights;
use crate::spline::{second_difference_penalty, SplineBasis};

/// Link function of a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkKind {
    Identity,
    Logit,
}

/// Options for the functional linear model fits.
#[derive(Debug, Clone)]
pub struct SofrOptions {
    pub n_basis: usize,
    /// Fixed penalty; `None` selects by GCV over `lambda_grid`.
    pub lambda: Option<f64>,
    pub lambda_grid: Vec<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SofrOptions {
    fn default() -> Self {
        SofrOptions {
            n_basis: 15,
            lambda: None,
            lambda_grid: default_lambda_grid(17),
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Log-spaced grid from 1e-6 to 1e2.
pub fn default_lambda_grid(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 10f64.powf(-6.0 + 8.0 * i as f64 / (len - 1) as f64))
        .collect()
}

/// Fitted functional linear model: Y = α + ∫β(t)X(t)dt (+ logit link).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionalLinearModel {
    pub alpha_hat: f64,
    /// Coefficient function on the grid.
    pub beta_hat: Vec<f64>,
    pub basis: SplineBasis,
    /// Basis coefficients of β (excludes the intercept).
    pub coefficients: Vec<f64>,
    pub penalty_lambda: f64,
    pub link: LinkKind,
    pub grid: Grid,
    /// Set when IRLS hit its iteration cap (possible complete separation).
    pub warning: bool,
    /// Set when GCV selected a boundary point of the search grid.
    pub boundary_lambda: bool,
    /// Approximate sampling variance of (α, basis coefficients); identity
    /// link only.
    pub coefficient_variance: Option<Vec<f64>>,
}

fn check_dense(curves: &Array2<f64>, y: &[f64], grid: &Grid) -> Result<()> {
    if curves.nrows() != y.len() {
        return Err(Error::invalid("response length must match curve count"));
    }
    if curves.ncols() != grid.len() {
        return Err(Error::invalid("curves must be dense on the grid"));
    }
    if curves.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("fit requires finite, complete inputs"));
    }
    Ok(())
}

/// Integral design: Z[i][j] = ∫ B_j(t) X_i(t) dt by trapezoid quadrature.
fn integral_design(curves: &Array2<f64>, grid: &Grid, basis: &SplineBasis) -> DMatrix<f64> {
    let n = curves.nrows();
    let m = grid.len();
    let q = basis.n_basis;
    let w = trapezoid_weights(grid.points());
    // m×q matrix of weighted basis values
    let mut bw = vec![vec![0.0; q]; m];
    for (t_idx, &t) in grid.points().iter().enumerate() {
        let vals = basis.eval(t);
        for j in 0..q {
            bw[t_idx][j] = w[t_idx] * vals[j];
        }
    }
    let mut z = DMatrix::zeros(n, q + 1);
    for i in 0..n {
        z[(i, 0)] = 1.0;
        for t_idx in 0..m {
            let x = curves[[i, t_idx]];
            for j in 0..q {
                z[(i, j + 1)] += x * bw[t_idx][j];
            }
        }
    }
    z
}

fn penalty_block(basis: &SplineBasis) -> DMatrix<f64> {
    let p = basis.second_derivative_penalty();
    let q = basis.n_basis;
    let mut out = DMatrix::zeros(q + 1, q + 1);
    for j in 0..q {
        for l in 0..q {
            out[(j + 1, l + 1)] = p[j][l];
        }
    }
    out
}

struct PenalizedFit {
    coef: DVector<f64>,
    edf: f64,
    inv: DMatrix<f64>,
}

fn solve_penalized(
    dtd: &DMatrix<f64>,
    dty: &DVector<f64>,
    penalty: &DMatrix<f64>,
    lambda: f64,
) -> Result<PenalizedFit> {
    let a = dtd + penalty * lambda;
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numeric("penalized normal equations are rank deficient"))?;
    let coef = chol.solve(dty);
    let inv = chol.inverse();
    let edf = (&inv * dtd).trace();
    Ok(PenalizedFit { coef, edf, inv })
}

/// Penalized least-squares fit of the functional linear model with a
/// second-derivative roughness penalty on β; λ by GCV unless fixed.
pub fn fit_linear_sofr(
    curves: &Array2<f64>,
    y: &[f64],
    grid: &Grid,
    opts: &SofrOptions,
) -> Result<FunctionalLinearModel> {
    check_dense(curves, y, grid)?;
    let n = y.len();
    if n <= opts.n_basis {
        return Err(Error::insufficient(format!(
            "need more rows than basis functions ({})",
            opts.n_basis
        )));
    }
    let basis = SplineBasis::cubic_uniform(opts.n_basis, grid.min(), grid.max())?;
    let d = integral_design(curves, grid, &basis);
    let penalty = penalty_block(&basis);
    let dtd = d.transpose() * &d;
    let yv = DVector::from_column_slice(y);
    let dty = d.transpose() * &yv;

    let candidates: Vec<f64> = match opts.lambda {
        Some(l) => vec![l],
        None => opts.lambda_grid.clone(),
    };
    let mut best: Option<(f64, usize, PenalizedFit, f64)> = None; // (gcv, idx, fit, rss)
    for (idx, &lambda) in candidates.iter().enumerate() {
        let fit = solve_penalized(&dtd, &dty, &penalty, lambda)?;
        let resid = &yv - &d * &fit.coef;
        let rss = resid.norm_squared();
        let denom = (n as f64 - fit.edf).max(1e-8);
        let gcv = n as f64 * rss / (denom * denom);
        if best.as_ref().map_or(true, |(g, _, _, _)| gcv < *g) {
            best = Some((gcv, idx, fit, rss));
        }
    }
    let (_, idx, fit, rss) = best.unwrap();
    let lambda = candidates[idx];
    let boundary = opts.lambda.is_none() && (idx == 0 || idx + 1 == candidates.len());
    if boundary {
        log::warn!("GCV selected a boundary penalty {lambda:.1e}");
    }
    let sigma2 = rss / (n as f64 - fit.edf).max(1.0);
    let var: Vec<f64> = {
        let cov = &fit.inv * &dtd * &fit.inv * sigma2;
        (0..cov.nrows()).map(|i| cov[(i, i)]).collect()
    };
    let coefficients: Vec<f64> = (1..=opts.n_basis).map(|j| fit.coef[j]).collect();
    let beta_hat = eval_beta(&basis, &coefficients, grid);
    Ok(FunctionalLinearModel {
        alpha_hat: fit.coef[0],
        beta_hat,
        basis,
        coefficients,
        penalty_lambda: lambda,
        link: LinkKind::Identity,
        grid: grid.clone(),
        warning: false,
        boundary_lambda: boundary,
        coefficient_variance: Some(var),
    })
}

fn eval_beta(basis: &SplineBasis, coefficients: &[f64], grid: &Grid) -> Vec<f64> {
    grid.points()
        .iter()
        .map(|&t| {
            basis
                .eval(t)
                .iter()
                .zip(coefficients)
                .map(|(&b, &c)| b * c)
                .sum()
        })
        .collect()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn deviance(y: &[f64], p: &[f64]) -> f64 {
    let mut dev = 0.0;
    for (&yi, &pi) in y.iter().zip(p) {
        let pi = pi.clamp(1e-12, 1.0 - 1e-12);
        dev -= 2.0 * (yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln());
    }
    dev
}

struct IrlsFit {
    coef: DVector<f64>,
    edf: f64,
    dev: f64,
    capped: bool,
}

/// Penalized IRLS for a binary response on an arbitrary design.
fn irls(
    d: &DMatrix<f64>,
    y: &[f64],
    penalty: &DMatrix<f64>,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<IrlsFit> {
    let n = d.nrows();
    let q = d.ncols();
    let mut coef = DVector::zeros(q);
    let mut last_dev = f64::INFINITY;
    let mut capped = true;
    let mut edf = 0.0;
    for _iter in 0..max_iter {
        let eta = d * &coef;
        let p: Vec<f64> = eta.iter().map(|&e| logistic(e)).collect();
        let w: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - pi)).max(1e-10)).collect();
        // weighted normal equations
        let mut dtwd = DMatrix::zeros(q, q);
        let mut dtwz = DVector::zeros(q);
        for i in 0..n {
            let zi = eta[i] + (y[i] - p[i]) / w[i];
            for r in 0..q {
                let dr = d[(i, r)] * w[i];
                dtwz[r] += dr * zi;
                for c in r..q {
                    dtwd[(r, c)] += dr * d[(i, c)];
                }
            }
        }
        for r in 0..q {
            for c in 0..r {
                dtwd[(r, c)] = dtwd[(c, r)];
            }
        }
        let a = &dtwd + penalty * lambda;
        let chol = a
            .clone()
            .cholesky()
            .ok_or_else(|| Error::numeric("IRLS normal equations are rank deficient"))?;
        coef = chol.solve(&dtwz);
        let inv = chol.inverse();
        edf = (&inv * &dtwd).trace();
        let eta2 = d * &coef;
        let p2: Vec<f64> = eta2.iter().map(|&e| logistic(e)).collect();
        let dev = deviance(y, &p2);
        if (last_dev - dev).abs() < tol {
            last_dev = dev;
            capped = false;
            break;
        }
        last_dev = dev;
    }
    Ok(IrlsFit {
        coef,
        edf,
        dev: last_dev,
        capped,
    })
}

/// Penalized logistic functional linear model fitted by IRLS; λ by a
/// deviance-based GCV score over the same grid as the identity link.
pub fn fit_logistic_sofr(
    curves: &Array2<f64>,
    y: &[f64],
    grid: &Grid,
    opts: &SofrOptions,
) -> Result<FunctionalLinearModel> {
    check_dense(curves, y, grid)?;
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("logistic fit requires labels in {0, 1}"));
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::invalid("logistic fit requires both classes present"));
    }
    let n = y.len();
    if n <= opts.n_basis {
        return Err(Error::insufficient(format!(
            "need more rows than basis functions ({})",
            opts.n_basis
        )));
    }
    let basis = SplineBasis::cubic_uniform(opts.n_basis, grid.min(), grid.max())?;
    let d = integral_design(curves, grid, &basis);
    let penalty = penalty_block(&basis);
    let candidates: Vec<f64> = match opts.lambda {
        Some(l) => vec![l],
        None => opts.lambda_grid.clone(),
    };
    let mut best: Option<(f64, usize, IrlsFit)> = None;
    for (idx, &lambda) in candidates.iter().enumerate() {
        let fit = irls(&d, y, &penalty, lambda, opts.max_iter, opts.tol)?;
        let denom = (n as f64 - fit.edf).max(1e-8);
        let gcv = n as f64 * fit.dev / (denom * denom);
        if best.as_ref().map_or(true, |(g, _, _)| gcv < *g) {
            best = Some((gcv, idx, fit));
        }
    }
    let (_, idx, fit) = best.unwrap();
    let lambda = candidates[idx];
    let boundary = opts.lambda.is_none() && (idx == 0 || idx + 1 == candidates.len());
    if fit.capped {
        log::warn!("IRLS hit the iteration cap; possible complete separation");
    }
    let coefficients: Vec<f64> = (1..=opts.n_basis).map(|j| fit.coef[j]).collect();
    let beta_hat = eval_beta(&basis, &coefficients, grid);
    Ok(FunctionalLinearModel {
        alpha_hat: fit.coef[0],
        beta_hat,
        basis,
        coefficients,
        penalty_lambda: lambda,
        link: LinkKind::Logit,
        grid: grid.clone(),
        warning: fit.capped,
        boundary_lambda: boundary,
        coefficient_variance: None,
    })
}

impl FunctionalLinearModel {
    /// Linear predictor α̂ + ∫ β̂ X for each curve.
    pub fn linear_predictor(&self, curves: &Array2<f64>, grid: &Grid) -> Result<Vec<f64>> {
        if grid != &self.grid {
            return Err(Error::invalid("prediction grid differs from the model grid"));
        }
        if curves.ncols() != grid.len() {
            return Err(Error::invalid("curves must be dense on the model grid"));
        }
        let w = trapezoid_weights(grid.points());
        Ok((0..curves.nrows())
            .map(|i| {
                let mut acc = self.alpha_hat;
                for j in 0..grid.len() {
                    acc += w[j] * self.beta_hat[j] * curves[[i, j]];
                }
                acc
            })
            .collect())
    }

    /// Model predictions: the linear predictor under the identity link,
    /// probabilities under the logit link.
    pub fn predict(&self, curves: &Array2<f64>, grid: &Grid) -> Result<Vec<f64>> {
        let eta = self.linear_predictor(curves, grid)?;
        Ok(match self.link {
            LinkKind::Identity => eta,
            LinkKind::Logit => eta.into_iter().map(logistic).collect(),
        })
    }

    /// Class labels at threshold 0.5 (logit link).
    pub fn predict_labels(&self, curves: &Array2<f64>, grid: &Grid) -> Result<Vec<f64>> {
        let p = self.predict(curves, grid)?;
        Ok(p.into_iter().map(|v| if v > 0.5 { 1.0 } else { 0.0 }).collect())
    }
}

/// Options for the continuously additive model.
#[derive(Debug, Clone)]
pub struct CamOptions {
    pub n_basis_x: usize,
    pub n_basis_t: usize,
    pub lambda_grid: Vec<f64>,
    /// Fixed (λ_x, λ_t); `None` selects by GCV over the grid × grid.
    pub lambdas: Option<(f64, f64)>,
    pub link: LinkKind,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for CamOptions {
    fn default() -> Self {
        CamOptions {
            n_basis_x: 7,
            n_basis_t: 7,
            lambda_grid: default_lambda_grid(5),
            lambdas: None,
            link: LinkKind::Identity,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Fitted continuously additive model f(x, t) over a tensor-product basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CamModel {
    /// J_x × J_t coefficient matrix.
    pub coeff: Array2<f64>,
    pub x_basis: SplineBasis,
    pub t_basis: SplineBasis,
    /// Curve-value range used for the x knots (1st-99th percentile).
    pub x_range: (f64, f64),
    pub penalty_lambdas: (f64, f64),
    pub link: LinkKind,
    pub grid: Grid,
    pub warning: bool,
}

fn percentile_range(curves: &Array2<f64>) -> (f64, f64) {
    let mut vals: Vec<f64> = curves.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    let lo = vals[(0.01 * (n - 1) as f64).round() as usize];
    let hi = vals[(0.99 * (n - 1) as f64).round() as usize];
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn x_basis_for(n_basis_x: usize, lo: f64, hi: f64) -> Result<SplineBasis> {
    if n_basis_x == 1 {
        // one constant function; reduces f to a function of t only
        SplineBasis::uniform(0, 1, lo, hi)
    } else {
        SplineBasis::cubic_uniform(n_basis_x, lo, hi)
    }
}

/// Tensor design row i: ∫ B^x_j(X_i(t)) B^t_k(t) dt, vectorized j-major.
fn cam_design(
    curves: &Array2<f64>,
    grid: &Grid,
    xb: &SplineBasis,
    tb: &SplineBasis,
) -> DMatrix<f64> {
    let n = curves.nrows();
    let m = grid.len();
    let (jx, jt) = (xb.n_basis, tb.n_basis);
    let w = trapezoid_weights(grid.points());
    let tvals: Vec<Vec<f64>> = grid.points().iter().map(|&t| tb.eval(t)).collect();
    let mut d = DMatrix::zeros(n, jx * jt);
    for i in 0..n {
        for t_idx in 0..m {
            let bx = xb.eval_extrapolated(curves[[i, t_idx]]);
            let bt = &tvals[t_idx];
            let wt = w[t_idx];
            for j in 0..jx {
                if bx[j] == 0.0 {
                    continue;
                }
                let base = j * jt;
                for k in 0..jt {
                    d[(i, base + k)] += wt * bx[j] * bt[k];
                }
            }
        }
    }
    d
}

fn cam_penalties(jx: usize, jt: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let px = second_difference_penalty(jx);
    let pt = second_difference_penalty(jt);
    let q = jx * jt;
    let mut ppx = DMatrix::zeros(q, q);
    let mut ppt = DMatrix::zeros(q, q);
    for j1 in 0..jx {
        for j2 in 0..jx {
            if px[j1][j2] != 0.0 {
                for k in 0..jt {
                    ppx[(j1 * jt + k, j2 * jt + k)] += px[j1][j2];
                }
            }
        }
    }
    for k1 in 0..jt {
        for k2 in 0..jt {
            if pt[k1][k2] != 0.0 {
                for j in 0..jx {
                    ppt[(j * jt + k1, j * jt + k2)] += pt[k1][k2];
                }
            }
        }
    }
    (ppx, ppt)
}

/// Fit the continuously additive model by penalized least squares (or
/// penalized IRLS for the logit link), with separate second-difference
/// penalties on the coefficient rows and columns and the λ pair chosen by
/// GCV over a 5×5 grid.
pub fn fit_cam(
    curves: &Array2<f64>,
    y: &[f64],
    grid: &Grid,
    opts: &CamOptions,
) -> Result<CamModel> {
    check_dense(curves, y, grid)?;
    let n = y.len();
    let q = opts.n_basis_x * opts.n_basis_t;
    if n <= q {
        return Err(Error::insufficient(format!(
            "need more rows than tensor basis functions ({q})"
        )));
    }
    if opts.link == LinkKind::Logit {
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("logit CAM requires labels in {0, 1}"));
        }
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        if ones == 0 || ones == y.len() {
            return Err(Error::invalid("logit CAM requires both classes present"));
        }
    }
    let (lo, hi) = percentile_range(curves);
    let xb = x_basis_for(opts.n_basis_x, lo, hi)?;
    let tb = SplineBasis::cubic_uniform(opts.n_basis_t, grid.min(), grid.max())?;
    let d = cam_design(curves, grid, &xb, &tb);
    let (ppx, ppt) = cam_penalties(xb.n_basis, tb.n_basis);
    let yv = DVector::from_column_slice(y);
    let pairs: Vec<(f64, f64)> = match opts.lambdas {
        Some(p) => vec![p],
        None => {
            let mut v = Vec::new();
            for &lx in &opts.lambda_grid {
                for &lt in &opts.lambda_grid {
                    v.push((lx, lt));
                }
            }
            v
        }
    };
    let dtd = d.transpose() * &d;
    let dty = d.transpose() * &yv;
    let mut best: Option<(f64, (f64, f64), DVector<f64>, bool)> = None;
    for &(lx, lt) in &pairs {
        let penalty = &ppx * lx + &ppt * lt;
        match opts.link {
            LinkKind::Identity => {
                let a = &dtd + &penalty;
                let chol = match a.clone().cholesky() {
                    Some(c) => c,
                    None => continue,
                };
                let coef = chol.solve(&dty);
                let inv = chol.inverse();
                let edf = (&inv * &dtd).trace();
                let rss = (&yv - &d * &coef).norm_squared();
                let denom = (n as f64 - edf).max(1e-8);
                let gcv = n as f64 * rss / (denom * denom);
                if best.as_ref().map_or(true, |(g, _, _, _)| gcv < *g) {
                    best = Some((gcv, (lx, lt), coef, false));
                }
            }
            LinkKind::Logit => {
                let fit = irls(&d, y, &penalty, 1.0, opts.max_iter, opts.tol)?;
                let denom = (n as f64 - fit.edf).max(1e-8);
                let gcv = n as f64 * fit.dev / (denom * denom);
                if best.as_ref().map_or(true, |(g, _, _, _)| gcv < *g) {
                    best = Some((gcv, (lx, lt), fit.coef, fit.capped));
                }
            }
        }
    }
    let (_, lambdas, coef, capped) =
        best.ok_or_else(|| Error::numeric("CAM normal equations rank deficient at all penalties"))?;
    if capped {
        log::warn!("CAM IRLS hit the iteration cap");
    }
    let mut coeff = Array2::zeros((xb.n_basis, tb.n_basis));
    for j in 0..xb.n_basis {
        for k in 0..tb.n_basis {
            coeff[[j, k]] = coef[j * tb.n_basis + k];
        }
    }
    Ok(CamModel {
        coeff,
        x_basis: xb,
        t_basis: tb,
        x_range: (lo, hi),
        penalty_lambdas: lambdas,
        link: opts.link,
        grid: grid.clone(),
        warning: capped,
    })
}

impl CamModel {
    /// Evaluate f̂(x, t); x extrapolates linearly beyond the knot range.
    pub fn eval_surface(&self, x: f64, t: f64) -> f64 {
        let bx = self.x_basis.eval_extrapolated(x);
        let bt = self.t_basis.eval(t);
        let mut acc = 0.0;
        for j in 0..self.x_basis.n_basis {
            if bx[j] == 0.0 {
                continue;
            }
            for k in 0..self.t_basis.n_basis {
                acc += self.coeff[[j, k]] * bx[j] * bt[k];
            }
        }
        acc
    }

    /// Linear predictor ∫ f̂(X(t), t) dt per curve.
    pub fn linear_predictor(&self, curves: &Array2<f64>, grid: &Grid) -> Result<Vec<f64>> {
        if grid != &self.grid {
            return Err(Error::invalid("prediction grid differs from the model grid"));
        }
        if curves.ncols() != grid.len() {
            return Err(Error::invalid("curves must be dense on the model grid"));
        }
        let w = trapezoid_weights(grid.points());
        Ok((0..curves.nrows())
            .map(|i| {
                let mut acc = 0.0;
                for (j, &t) in grid.points().iter().enumerate() {
                    acc += w[j] * self.eval_surface(curves[[i, j]], t);
                }
                acc
            })
            .collect())
    }

    pub fn predict(&self, curves: &Array2<f64>, grid: &Grid) -> Result<Vec<f64>> {
        let eta = self.linear_predictor(curves, grid)?;
        Ok(match self.link {
            LinkKind::Identity => eta,
            LinkKind::Logit => eta.into_iter().map(logistic).collect(),
        })
    }

    pub fn predict_labels(&self, curves: &Array2<f64>, grid: &Grid) -> Result<Vec<f64>> {
        let p = self.predict(curves, grid)?;
        Ok(p.into_iter().map(|v| if v > 0.5 { 1.0 } else { 0.0 }).collect())
    }
}
