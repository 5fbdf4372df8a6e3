//! Regression trees, random forests, forest kernel weights, and local
//! linear forest prediction.
//!
//! Trees are CART regression trees grown on bootstrap resamples with
//! variance-reduction splits over `mtry` random features. Leaves keep
//! their inbag row multiset, which makes the forest kernel weights exact:
//! the forest prediction equals the weight-averaged training targets.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sim::derive_seed;

/// Forest hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means ⌊√p⌋.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    /// Fraction of n drawn per tree, with replacement.
    pub subsample_fraction: f64,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            mtry: None,
            min_leaf: 5,
            subsample_fraction: 1.0,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone)]
enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        mean: f64,
        /// Inbag training-row indices with multiplicity.
        rows: Vec<u32>,
    },
}

/// One CART regression tree.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_for(&self, x: &[f64]) -> &Node {
        let mut cur = 0usize;
        loop {
            match &self.nodes[cur] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    cur = if x[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                leaf @ Node::Leaf { .. } => return leaf,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.leaf_for(x) {
            Node::Leaf { mean, .. } => *mean,
            Node::Internal { .. } => unreachable!(),
        }
    }
}

/// A fitted random forest. Training rows and targets are retained for
/// weight extraction and local linear prediction.
#[derive(Debug, Clone)]
pub struct Forest {
    pub trees: Vec<Tree>,
    x: Array2<f64>,
    y: Vec<f64>,
}

/// Normalized forest kernel weights over the training rows.
#[derive(Debug, Clone)]
pub struct WeightVector {
    pub weights: Vec<f64>,
}

struct TreeBuilder<'a> {
    x: &'a Array2<f64>,
    y: &'a [f64],
    mtry: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl<'a> TreeBuilder<'a> {
    fn build(&mut self, rows: Vec<u32>, rng: &mut ChaCha8Rng) -> u32 {
        let id = self.nodes.len() as u32;
        // placeholder; replaced once children are known
        self.nodes.push(Node::Leaf {
            mean: 0.0,
            rows: Vec::new(),
        });
        if let Some((feature, threshold)) = self.best_split(&rows, rng) {
            let (mut left, mut right) = (Vec::new(), Vec::new());
            for &r in &rows {
                if self.x[[r as usize, feature]] <= threshold {
                    left.push(r);
                } else {
                    right.push(r);
                }
            }
            let left_id = self.build(left, rng);
            let right_id = self.build(right, rng);
            self.nodes[id as usize] = Node::Internal {
                feature,
                threshold,
                left: left_id,
                right: right_id,
            };
        } else {
            let mean =
                rows.iter().map(|&r| self.y[r as usize]).sum::<f64>() / rows.len() as f64;
            self.nodes[id as usize] = Node::Leaf { mean, rows };
        }
        id
    }

    /// Best (feature, threshold) by variance reduction over `mtry` sampled
    /// features; thresholds at midpoints of consecutive distinct sorted
    /// values. Ties break toward the lower feature index, then the lower
    /// threshold.
    fn best_split(&self, rows: &[u32], rng: &mut ChaCha8Rng) -> Option<(usize, f64)> {
        let n = rows.len();
        if n < 2 * self.min_leaf {
            return None;
        }
        let p = self.x.ncols();
        let mut feats: Vec<usize> = (0..p).collect();
        let take = self.mtry.min(p);
        for j in 0..take {
            let pick = rng.gen_range(j..p);
            feats.swap(j, pick);
        }
        let mut feats: Vec<usize> = feats[..take].to_vec();
        feats.sort_unstable();

        let total_sum: f64 = rows.iter().map(|&r| self.y[r as usize]).sum();
        let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)
        let mut order: Vec<u32> = Vec::with_capacity(n);
        for &f in &feats {
            order.clear();
            order.extend_from_slice(rows);
            order.sort_by(|&a, &b| {
                self.x[[a as usize, f]]
                    .partial_cmp(&self.x[[b as usize, f]])
                    .unwrap()
            });
            let mut left_sum = 0.0;
            let mut left_n = 0usize;
            for i in 0..n - 1 {
                let r = order[i] as usize;
                left_sum += self.y[r];
                left_n += 1;
                let xv = self.x[[r, f]];
                let xnext = self.x[[order[i + 1] as usize, f]];
                if xnext <= xv {
                    continue; // not a boundary between distinct values
                }
                if left_n < self.min_leaf || n - left_n < self.min_leaf {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let right_n = n - left_n;
                let score = left_sum * left_sum / left_n as f64
                    + right_sum * right_sum / right_n as f64;
                if best.map_or(true, |(s, _, _)| score > s) {
                    best = Some((score, f, 0.5 * (xv + xnext)));
                }
            }
        }
        // require an actual improvement over the unsplit node
        let base = total_sum * total_sum / n as f64;
        match best {
            Some((score, f, t)) if score > base + 1e-12 * base.abs() => Some((f, t)),
            _ => None,
        }
    }
}

/// Fit a random forest of CART regression trees on bootstrap resamples.
pub fn fit_forest(x: &Array2<f64>, y: &[f64], params: &ForestParams) -> Result<Forest> {
    let n = x.nrows();
    let p = x.ncols();
    if n < 2 {
        return Err(Error::invalid("forest fitting needs at least 2 rows"));
    }
    if y.len() != n {
        return Err(Error::invalid("target length does not match row count"));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("forest fitting requires finite, complete data"));
    }
    if params.n_trees < 1 {
        return Err(Error::invalid("need at least one tree"));
    }
    if !(params.subsample_fraction > 0.0 && params.subsample_fraction <= 1.0) {
        return Err(Error::invalid("subsample fraction must be in (0, 1]"));
    }
    let mtry = params
        .mtry
        .unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1))
        .clamp(1, p);
    let n_draw = ((params.subsample_fraction * n as f64).round() as usize).max(1);
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(params.seed, b as u64));
            let mut rows: Vec<u32> = (0..n_draw)
                .map(|_| rng.gen_range(0..n) as u32)
                .collect();
            rows.sort_unstable();
            let mut builder = TreeBuilder {
                x,
                y,
                mtry,
                min_leaf: params.min_leaf,
                nodes: Vec::new(),
            };
            builder.build(rows, &mut rng);
            Tree {
                nodes: builder.nodes,
            }
        })
        .collect();
    Ok(Forest {
        trees,
        x: x.clone(),
        y: y.to_vec(),
    })
}

impl Forest {
    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }
}

/// Forest kernel weights: αᵢ(x) = (1/B) Σ_b 1{i ∈ L_b(x)} / |L_b(x)|,
/// counting inbag multiplicity. Rows never inbag anywhere get weight 0.
pub fn forest_weights(f: &Forest, x: &[f64]) -> WeightVector {
    let n = f.n_train();
    let b = f.trees.len() as f64;
    let mut weights = vec![0.0; n];
    for tree in &f.trees {
        if let Node::Leaf { rows, .. } = tree.leaf_for(x) {
            let contrib = 1.0 / (b * rows.len() as f64);
            for &r in rows {
                weights[r as usize] += contrib;
            }
        }
    }
    WeightVector { weights }
}

/// Standard forest aggregation: the mean of the landed leaf, averaged over
/// trees.
pub fn forest_predict(f: &Forest, x: &[f64]) -> f64 {
    let mut acc = 0.0;
    for tree in &f.trees {
        acc += tree.predict(x);
    }
    acc / f.trees.len() as f64
}

/// Local linear forest prediction: weighted ridge-regularized local linear
/// regression centered at the query, with the forest kernel as weights.
///
/// `ridge = None` uses the scale-aware default 0.01 × trace of the
/// weighted second moment of the centered design. A singular system at
/// `ridge = 0` is retried at 1e-6 with a warning.
pub fn llf_predict(f: &Forest, x: &[f64], ridge: Option<f64>) -> Result<f64> {
    let alpha = forest_weights(f, x);
    let p = f.n_features();
    let q = p + 1;
    let active: Vec<usize> = alpha
        .weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0)
        .map(|(i, _)| i)
        .collect();
    if active.is_empty() {
        return Err(Error::numeric("no positive forest weights at query"));
    }
    let mut a = DMatrix::zeros(q, q);
    let mut b = DVector::zeros(q);
    let mut trace = 0.0;
    let mut z = vec![0.0; q];
    for &i in &active {
        let w = alpha.weights[i];
        z[0] = 1.0;
        let mut sq = 0.0;
        for j in 0..p {
            let d = x[j] - f.x[[i, j]];
            z[j + 1] = d;
            sq += d * d;
        }
        trace += w * sq;
        for r in 0..q {
            for c in r..q {
                a[(r, c)] += w * z[r] * z[c];
            }
            b[r] += w * z[r] * f.y[i];
        }
    }
    for r in 0..q {
        for c in 0..r {
            a[(r, c)] = a[(c, r)];
        }
    }
    let lambda = match ridge {
        Some(l) if l >= 0.0 => l,
        Some(_) => return Err(Error::invalid("ridge penalty must be nonnegative")),
        None => 0.01 * trace,
    };
    let solve_with = |lam: f64| -> Option<DVector<f64>> {
        let mut m = a.clone();
        for j in 1..q {
            m[(j, j)] += lam;
        }
        m.cholesky().map(|ch| ch.solve(&b))
    };
    if let Some(sol) = solve_with(lambda) {
        return Ok(sol[0]);
    }
    log::warn!("singular local linear system at ridge {lambda}; retrying with 1e-6");
    solve_with(lambda.max(1e-6))
        .map(|sol| sol[0])
        .ok_or_else(|| Error::numeric("local linear system singular after ridge retry"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn matrix(rows: &[&[f64]]) -> Array2<f64> {
        let n = rows.len();
        let p = rows[0].len();
        Array2::from_shape_fn((n, p), |(i, j)| rows[i][j])
    }

    fn random_xy(n: usize, p: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |_| rng.gen::<f64>());
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let base: f64 = (0..p).map(|j| x[[i, j]]).sum();
                base + 0.1 * rng.gen::<f64>()
            })
            .collect();
        (x, y)
    }

    #[test]
    fn constant_target_predicts_constant() {
        let (x, _) = random_xy(50, 3, 1);
        let y = vec![4.25; 50];
        let f = fit_forest(&x, &y, &ForestParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            assert_abs_diff_eq!(forest_predict(&f, &q), 4.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn step_function_learned_cleanly() {
        let n = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((n, 1), |_| rng.gen::<f64>());
        let y: Vec<f64> = (0..n)
            .map(|i| if x[[i, 0]] > 0.5 { 2.0 } else { -1.0 })
            .collect();
        let f = fit_forest(&x, &y, &ForestParams::default()).unwrap();
        let mse: f64 = (0..n)
            .map(|i| (forest_predict(&f, &[x[[i, 0]]]) - y[i]).powi(2))
            .sum::<f64>()
            / n as f64;
        assert!(mse < 0.01, "training MSE {mse}");
    }

    #[test]
    fn fixed_seed_reproducible() {
        let (x, y) = random_xy(80, 3, 4);
        let params = ForestParams::default().with_seed(99);
        let f1 = fit_forest(&x, &y, &params).unwrap();
        let f2 = fit_forest(&x, &y, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..25 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            assert_eq!(forest_predict(&f1, &q), forest_predict(&f2, &q));
            assert_eq!(
                forest_weights(&f1, &q).weights,
                forest_weights(&f2, &q).weights
            );
        }
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let x = matrix(&[&[1.0]]);
        assert!(fit_forest(&x, &[1.0], &ForestParams::default()).is_err());
        let x2 = matrix(&[&[1.0], &[f64::NAN]]);
        assert!(fit_forest(&x2, &[1.0, 2.0], &ForestParams::default()).is_err());
    }

    #[test]
    fn single_tree_leaf_weights_normalized() {
        // B=1 tree, constant feature -> one leaf over all inbag rows
        let x = matrix(&[&[0.0], &[0.0], &[0.0], &[0.0]]);
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let params = ForestParams {
            n_trees: 1,
            min_leaf: 1,
            ..Default::default()
        };
        let f = fit_forest(&x, &y, &params).unwrap();
        let w = forest_weights(&f, &[0.0]);
        let total: f64 = w.weights.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert!(w.weights.iter().all(|&wi| (0.0..=1.0).contains(&wi)));
        let wy: f64 = w.weights.iter().zip(&y).map(|(&wi, &yi)| wi * yi).sum();
        assert_abs_diff_eq!(forest_predict(&f, &[0.0]), wy, epsilon = 1e-12);
    }

    #[test]
    fn weights_sum_to_one_and_match_prediction() {
        let (x, y) = random_xy(300, 5, 6);
        let f = fit_forest(&x, &y, &ForestParams::default().with_seed(7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let q: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
            let w = forest_weights(&f, &q);
            let total: f64 = w.weights.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
            assert!(w.weights.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let wy: f64 = w.weights.iter().zip(&y).map(|(&wi, &yi)| wi * yi).sum();
            assert_abs_diff_eq!(forest_predict(&f, &q), wy, epsilon = 1e-10);
        }
    }

    #[test]
    fn monotone_signal_orders_predictions() {
        let n = 300;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((n, 1), |_| rng.gen::<f64>());
        let y: Vec<f64> = (0..n).map(|i| x[[i, 0]]).collect();
        let f = fit_forest(&x, &y, &ForestParams::default()).unwrap();
        assert!(forest_predict(&f, &[0.9]) > forest_predict(&f, &[0.1]));
    }

    #[test]
    fn llf_equals_forest_mean_when_design_degenerate() {
        // all training x identical: the centered design vanishes
        let x = Array2::from_elem((30, 2), 0.5);
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let f = fit_forest(&x, &y, &ForestParams::default()).unwrap();
        let q = [0.5, 0.5];
        let mu = llf_predict(&f, &q, Some(0.0)).unwrap();
        assert_abs_diff_eq!(mu, forest_predict(&f, &q), epsilon = 1e-9);
    }

    #[test]
    fn llf_reproduces_affine_targets() {
        let n = 120;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Array2::from_shape_fn((n, 1), |_| rng.gen::<f64>());
        let y: Vec<f64> = (0..n).map(|i| 2.0 + 3.0 * x[[i, 0]]).collect();
        let f = fit_forest(&x, &y, &ForestParams::default().with_seed(11)).unwrap();
        for &q in &[0.2, 0.5, 0.8] {
            let mu = llf_predict(&f, &[q], Some(0.0)).unwrap();
            assert_abs_diff_eq!(mu, 2.0 + 3.0 * q, epsilon = 1e-8);
        }
    }

    #[test]
    fn llf_large_ridge_recovers_forest_prediction() {
        let (x, y) = random_xy(200, 3, 12);
        let f = fit_forest(&x, &y, &ForestParams::default().with_seed(13)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let q: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            let mu = llf_predict(&f, &q, Some(1e9)).unwrap();
            assert_abs_diff_eq!(mu, forest_predict(&f, &q), epsilon = 1e-4);
        }
    }

    #[test]
    fn llf_beats_forest_on_smooth_linear_signal() {
        // held-out MSE averaged over 10 seeds on y = 3x + N(0,1)
        let mut llf_total = 0.0;
        let mut rf_total = 0.0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = 500;
            let x = Array2::from_shape_fn((n, 1), |_| rng.gen::<f64>());
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    let z: f64 = rand_distr::Distribution::sample(
                        &rand_distr::StandardNormal,
                        &mut rng,
                    );
                    3.0 * x[[i, 0]] + z
                })
                .collect();
            let f = fit_forest(&x, &y, &ForestParams::default().with_seed(seed)).unwrap();
            for _ in 0..50 {
                let q: f64 = rng.gen();
                let truth = 3.0 * q;
                let mu_llf = llf_predict(&f, &[q], None).unwrap();
                let mu_rf = forest_predict(&f, &[q]);
                llf_total += (mu_llf - truth).powi(2);
                rf_total += (mu_rf - truth).powi(2);
            }
        }
        assert!(
            llf_total <= rf_total,
            "LLF MSE {llf_total} not below forest MSE {rf_total}"
        );
    }
}
