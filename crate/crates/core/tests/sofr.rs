//! Scalar-on-function regression checks: self-consistency against
//! simulated truth, algebraic identities of the penalized fit, and the
//! continuously additive model's degenerate cases.

use approx::assert_abs_diff_eq;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sparsefn_core::func_data::{make_grid, Grid};
use sparsefn_core::sim::{sample_gp, MaternParams};
use sparsefn_core::sofr::{
    fit_cam, fit_linear_sofr, fit_logistic_sofr, CamOptions, LinkKind, SofrOptions,
};

fn trapz_weights(pts: &[f64]) -> Vec<f64> {
    let m = pts.len();
    let mut w = vec![0.0; m];
    for i in 0..m - 1 {
        let h = pts[i + 1] - pts[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64)
        .sqrt()
}

fn linear_response(curves: &Array2<f64>, grid: &Grid, beta: impl Fn(f64) -> f64) -> Vec<f64> {
    let w = trapz_weights(grid.points());
    (0..curves.nrows())
        .map(|i| {
            grid.points()
                .iter()
                .enumerate()
                .map(|(j, &t)| w[j] * beta(t) * curves[[i, j]])
                .sum()
        })
        .collect()
}

#[test]
fn zero_signal_recovers_zero_beta() {
    let grid = make_grid(32).unwrap();
    let curves = sample_gp(300, &grid, &MaternParams::paper_default(), 11).unwrap();
    let y = vec![0.0; 300];
    let fit = fit_linear_sofr(&curves, &y, &grid, &SofrOptions::default()).unwrap();
    assert_abs_diff_eq!(fit.alpha_hat, 0.0, epsilon = 1e-8);
    for b in &fit.beta_hat {
        assert_abs_diff_eq!(*b, 0.0, epsilon = 1e-8);
    }
}

#[test]
fn noiseless_sine_beta_recovered() {
    let grid = make_grid(52).unwrap();
    let curves = sample_gp(500, &grid, &MaternParams::paper_default(), 12).unwrap();
    let beta = |t: f64| (2.0 * std::f64::consts::PI * t).sin();
    let y = linear_response(&curves, &grid, beta);
    let fit = fit_linear_sofr(&curves, &y, &grid, &SofrOptions::default()).unwrap();
    let truth: Vec<f64> = grid.points().iter().map(|&t| beta(t)).collect();
    let err = rmse(&fit.beta_hat, &truth);
    assert!(err < 0.05, "beta RMSE {err}");
}

#[test]
fn residuals_orthogonal_to_penalized_fit() {
    // normal-equations identity: Dᵀ(y - Dc) = λ P c at the fitted λ
    let grid = make_grid(32).unwrap();
    let n = 200;
    let curves = sample_gp(n, &grid, &MaternParams::paper_default(), 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut y = linear_response(&curves, &grid, |t| (2.0 * std::f64::consts::PI * t).sin());
    for v in y.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += 0.3 * z;
    }
    let fit = fit_linear_sofr(&curves, &y, &grid, &SofrOptions::default()).unwrap();

    // rebuild the design and check the stationarity condition
    let w = trapz_weights(grid.points());
    let q = fit.basis.n_basis;
    let mut design = vec![vec![0.0; q + 1]; n];
    for i in 0..n {
        design[i][0] = 1.0;
        for (j, &t) in grid.points().iter().enumerate() {
            let b = fit.basis.eval(t);
            for l in 0..q {
                design[i][l + 1] += w[j] * b[l] * curves[[i, j]];
            }
        }
    }
    let mut coef = vec![fit.alpha_hat];
    coef.extend(&fit.coefficients);
    let resid: Vec<f64> = (0..n)
        .map(|i| {
            let pred: f64 = design[i].iter().zip(&coef).map(|(&d, &c)| d * c).sum();
            y[i] - pred
        })
        .collect();
    let p = fit.basis.second_derivative_penalty();
    for l in 0..=q {
        let grad: f64 = (0..n).map(|i| design[i][l] * resid[i]).sum();
        let pen: f64 = if l == 0 {
            0.0
        } else {
            (0..q)
                .map(|c| fit.penalty_lambda * p[l - 1][c] * fit.coefficients[c])
                .sum()
        };
        assert_abs_diff_eq!(grad, pen, epsilon = 1e-6);
    }
}

#[test]
fn gcv_selects_interior_lambda_on_regular_data() {
    let grid = make_grid(32).unwrap();
    let curves = sample_gp(400, &grid, &MaternParams::paper_default(), 15).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut y = linear_response(&curves, &grid, |t| {
        2.0 * (2.0 * std::f64::consts::PI * t).sin()
    });
    for v in y.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += 0.5 * z;
    }
    let fit = fit_linear_sofr(&curves, &y, &grid, &SofrOptions::default()).unwrap();
    assert!(!fit.boundary_lambda, "boundary λ {}", fit.penalty_lambda);
}

#[test]
fn beta_scales_inversely_with_curve_scale() {
    // unpenalized reduced-basis fit: β̂(cX) = β̂(X)/c
    let grid = make_grid(32).unwrap();
    let curves = sample_gp(500, &grid, &MaternParams::paper_default(), 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut y = linear_response(&curves, &grid, |t| (2.0 * std::f64::consts::PI * t).cos());
    for v in y.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += 0.2 * z;
    }
    let opts = SofrOptions {
        n_basis: 8,
        lambda: Some(0.0),
        ..Default::default()
    };
    let fit1 = fit_linear_sofr(&curves, &y, &grid, &opts).unwrap();
    let c = 4.0;
    let scaled = curves.mapv(|v| c * v);
    let fit2 = fit_linear_sofr(&scaled, &y, &grid, &opts).unwrap();
    for (b1, b2) in fit1.beta_hat.iter().zip(&fit2.beta_hat) {
        assert_abs_diff_eq!(b2 * c, *b1, epsilon = 1e-6);
    }
}

#[test]
fn prediction_reproduces_training_on_exact_fit() {
    // noiseless response with β inside the basis span, fitted unpenalized
    let grid = make_grid(32).unwrap();
    let curves = sample_gp(300, &grid, &MaternParams::paper_default(), 19).unwrap();
    let basis = sparsefn_core::spline::SplineBasis::cubic_uniform(15, 0.0, 1.0).unwrap();
    let coef: Vec<f64> = (0..15).map(|j| ((j as f64) * 0.7).sin()).collect();
    let beta_fn = |t: f64| -> f64 {
        basis
            .eval(t)
            .iter()
            .zip(&coef)
            .map(|(&b, &c)| b * c)
            .sum()
    };
    let y: Vec<f64> = linear_response(&curves, &grid, beta_fn)
        .into_iter()
        .map(|v| v + 0.7)
        .collect();
    let opts = SofrOptions {
        lambda: Some(0.0),
        ..Default::default()
    };
    let fit = fit_linear_sofr(&curves, &y, &grid, &opts).unwrap();
    let pred = fit.predict(&curves, &grid).unwrap();
    for (p, t) in pred.iter().zip(&y) {
        assert_abs_diff_eq!(p, t, epsilon = 1e-6);
    }
}

#[test]
fn zero_beta_model_predicts_intercept() {
    let grid = make_grid(16).unwrap();
    let curves = sample_gp(100, &grid, &MaternParams::paper_default(), 20).unwrap();
    let y = vec![3.0; 100];
    let fit = fit_linear_sofr(&curves, &y, &grid, &SofrOptions::default()).unwrap();
    let fresh = sample_gp(10, &grid, &MaternParams::paper_default(), 21).unwrap();
    let pred = fit.predict(&fresh, &grid).unwrap();
    for p in pred {
        assert_abs_diff_eq!(p, 3.0, epsilon = 1e-6);
    }
}

#[test]
fn grid_mismatch_rejected() {
    let grid = make_grid(16).unwrap();
    let other = make_grid(17).unwrap();
    let curves = sample_gp(100, &grid, &MaternParams::paper_default(), 22).unwrap();
    let y = vec![1.0; 100];
    let fit = fit_linear_sofr(&curves, &y, &grid, &SofrOptions::default()).unwrap();
    let fresh = sample_gp(5, &other, &MaternParams::paper_default(), 23).unwrap();
    assert!(fit.predict(&fresh, &other).is_err());
}

#[test]
fn logistic_null_signal_small_beta() {
    let grid = make_grid(32).unwrap();
    let curves = sample_gp(500, &grid, &MaternParams::paper_default(), 24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let y: Vec<f64> = (0..500)
        .map(|_| if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 })
        .collect();
    let fit = fit_logistic_sofr(&curves, &y, &grid, &SofrOptions::default()).unwrap();
    let zeros = vec![0.0; 32];
    let err = rmse(&fit.beta_hat, &zeros);
    assert!(err < 0.2, "null-signal beta RMSE {err}");
}

#[test]
fn logistic_rejects_single_class() {
    let grid = make_grid(16).unwrap();
    let curves = sample_gp(50, &grid, &MaternParams::paper_default(), 26).unwrap();
    let y = vec![1.0; 50];
    assert!(fit_logistic_sofr(&curves, &y, &grid, &SofrOptions::default()).is_err());
}

#[test]
fn logistic_probability_half_for_null_model() {
    let grid = make_grid(16).unwrap();
    let curves = sample_gp(200, &grid, &MaternParams::paper_default(), 27).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let y: Vec<f64> = (0..200)
        .map(|_| if rng.gen::<f64>() < 0.5 { 1.0 } else { 0.0 })
        .collect();
    let mut fit = fit_logistic_sofr(&curves, &y, &grid, &SofrOptions::default()).unwrap();
    // force the exact null model and check the link midpoint
    fit.alpha_hat = 0.0;
    fit.beta_hat = vec![0.0; 16];
    let p = fit.predict(&curves, &grid).unwrap();
    for v in p {
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
    }
}

#[test]
fn logistic_recovers_signal_direction() {
    let grid = make_grid(32).unwrap();
    let curves = sample_gp(600, &grid, &MaternParams::paper_default(), 29).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let eta = linear_response(&curves, &grid, |t| {
        10.0 * (2.0 * std::f64::consts::PI * t).sin()
    });
    let y: Vec<f64> = eta
        .iter()
        .map(|&e| {
            let p = 1.0 / (1.0 + (-e).exp());
            if rng.gen::<f64>() < p {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let fit = fit_logistic_sofr(&curves, &y, &grid, &SofrOptions::default()).unwrap();
    // the fitted beta correlates positively with the true shape
    let truth: Vec<f64> = grid
        .points()
        .iter()
        .map(|&t| (2.0 * std::f64::consts::PI * t).sin())
        .collect();
    let dot: f64 = fit.beta_hat.iter().zip(&truth).map(|(&a, &b)| a * b).sum();
    assert!(dot > 0.0, "fitted beta misaligned with truth");
    // and the in-sample misclassification is far below chance
    let labels = fit.predict_labels(&curves, &grid).unwrap();
    let err = labels
        .iter()
        .zip(&y)
        .filter(|(a, b)| a != b)
        .count() as f64
        / y.len() as f64;
    assert!(err < 0.35, "in-sample misclassification {err}");
}

#[test]
fn cam_recovers_linear_in_x_signal() {
    // f(x, t) = x * sin(2πt): linear in x, held-out RMSE < 0.1
    let grid = make_grid(32).unwrap();
    let all = sample_gp(600, &grid, &MaternParams::paper_default(), 31).unwrap();
    let w = trapz_weights(grid.points());
    let f = |x: f64, t: f64| x * (2.0 * std::f64::consts::PI * t).sin();
    let y_all: Vec<f64> = (0..600)
        .map(|i| {
            grid.points()
                .iter()
                .enumerate()
                .map(|(j, &t)| w[j] * f(all[[i, j]], t))
                .sum()
        })
        .collect();
    let train = all.slice(ndarray::s![..500, ..]).to_owned();
    let test = all.slice(ndarray::s![500.., ..]).to_owned();
    let fit = fit_cam(&train, &y_all[..500], &grid, &CamOptions::default()).unwrap();
    let pred = fit.predict(&test, &grid).unwrap();
    let err = rmse(&pred, &y_all[500..]);
    assert!(err < 0.1, "held-out CAM RMSE {err}");
}

#[test]
fn cam_flat_signal_predicts_mean() {
    let grid = make_grid(24).unwrap();
    let curves = sample_gp(300, &grid, &MaternParams::paper_default(), 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let y: Vec<f64> = (0..300)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            1.7 + 0.01 * z
        })
        .collect();
    let fit = fit_cam(&curves, &y, &grid, &CamOptions::default()).unwrap();
    let pred = fit.predict(&curves, &grid).unwrap();
    let ybar: f64 = y.iter().sum::<f64>() / y.len() as f64;
    for p in pred {
        assert!((p - ybar).abs() < 0.05, "prediction {p} vs mean {ybar}");
    }
}

#[test]
fn cam_constant_x_basis_ignores_curves() {
    let grid = make_grid(24).unwrap();
    let curves = sample_gp(200, &grid, &MaternParams::paper_default(), 34).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let y: Vec<f64> = (0..200)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            0.5 * z
        })
        .collect();
    let opts = CamOptions {
        n_basis_x: 1,
        ..Default::default()
    };
    let fit = fit_cam(&curves, &y, &grid, &opts).unwrap();
    let p1 = fit.predict(&curves, &grid).unwrap();
    // permute the curves: predictions must be identical row-by-row value
    let permuted = {
        let mut idx: Vec<usize> = (0..200).collect();
        idx.reverse();
        Array2::from_shape_fn((200, 24), |(i, j)| curves[[idx[i], j]])
    };
    let p2 = fit.predict(&permuted, &grid).unwrap();
    for (a, b) in p1.iter().zip(&p2) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-10);
    }
}
