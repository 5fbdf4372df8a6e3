//! Scratch harness: prints imputation RMSEs for a few method/scenario
//! combinations. Used to sanity-check scenario settings at desk scale.

use ndarray::Array2;
use sparsefn_core::func_data::make_grid;
use sparsefn_core::impute::{run_method, ImputationTask, MethodSpec, ResponseColumn};
use sparsefn_core::sim::{
    add_noise, gen_response, sample_gp, sparsify, MaternParams, NoiseSpec, ResponseSpec,
    SparsitySpec,
};
use std::time::Instant;

fn imp_rmse(completed: &[Array2<f64>], truth: &Array2<f64>, mask: &Array2<bool>) -> f64 {
    let mut total = 0.0;
    for c in completed {
        let mut sse = 0.0;
        let mut count = 0usize;
        for ((idx, &v), &t) in c.indexed_iter().zip(truth.iter()) {
            if !mask[idx] {
                sse += (v - t) * (v - t);
                count += 1;
            }
        }
        total += (sse / count as f64).sqrt();
    }
    total / completed.len() as f64
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let noise_var: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.005);
    let n: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(500);
    let m: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(32);
    let high: bool = args.get(4).map(|s| s == "high").unwrap_or(false);
    let methods: Vec<String> = args
        .get(5)
        .map(|s| s.split(',').map(|x| x.to_string()).collect())
        .unwrap_or_else(|| vec!["mf".into(), "mf_b".into()]);
    let k: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(if high { 8 } else { 17 });
    let m_imp: usize = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(1);
    let w: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(2.0);
    let mtry_mode: String = args.get(9).cloned().unwrap_or_else(|| "sqrt".into());
    let n_trees: usize = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(100);

    let grid = make_grid(m).unwrap();
    let matern = MaternParams::paper_default();
    let sparsity = if high {
        SparsitySpec::high()
    } else {
        SparsitySpec::medium()
    };
    println!("noise_var={noise_var} n={n} m={m} high={high} k={k} M={m_imp} w={w}");
    for rep in 0..2u64 {
        let truth = sample_gp(n, &grid, &matern, 100 + rep).unwrap();
        let noisy = add_noise(&truth, &NoiseSpec::new(noise_var).unwrap(), 200 + rep);
        let sparse = sparsify(&noisy, &grid, &sparsity, 300 + rep).unwrap();
        let resp_spec = ResponseSpec::linear_scalar(w, 0.0, 1.0).unwrap();
        let y = gen_response(&truth, &grid, &resp_spec, 400 + rep).unwrap();
        let task = ImputationTask::new(
            sparse.clone(),
            Some(ResponseColumn::fully_observed(y).unwrap()),
        )
        .unwrap();
        for name in &methods {
            let mut spec = MethodSpec::from_name(name, Some(k))
                .unwrap()
                .with_imputations(m_imp);
            spec.forest.n_trees = n_trees;
            let p = if spec.binned { k } else { m };
            spec.forest.mtry = match mtry_mode.as_str() {
                "third" => Some((p / 3).max(1)),
                "all" => Some(p),
                _ => None,
            };
            if std::env::var("LLF_RIDGE_ZERO").is_ok() {
                spec.llf_ridge = Some(0.0);
            }
            let t0 = Instant::now();
            match run_method(&task, &spec, 500 + rep) {
                Ok(res) => {
                    let rmse = imp_rmse(&res.completed, &truth, &sparse.mask);
                    let max_abs = res.completed.iter().flat_map(|c| c.iter()).fold(0.0f64, |a, &v| a.max(v.abs()));
                    println!(
                        "rep {rep} {name:>8}: imp_rmse {rmse:.4}  max|v| {max_abs:.2}  cycles {}  ({:.1}s)",
                        res.n_cycles_run,
                        t0.elapsed().as_secs_f64()
                    );
                }
                Err(e) => println!("rep {rep} {name:>8}: ERROR {e}"),
            }
        }
    }
}
