//! Chained-equation imputation engines: MICE with predictive mean
//! matching, MissForest, and its local-linear-forest variant (MLLF),
//! together with PACE initialization and the binned pipeline wrappers.
//!
//! All engines share one cycle structure: columns are visited in ascending
//! order of missing count; each column with missing entries is regressed
//! on the other columns (plus the response when present and visible) over
//! the rows where it was observed, and the fitted model fills the rows
//! where it was missing. Originally observed cells are never rewritten.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forest::{fit_forest, forest_predict, llf_predict, ForestParams};
use crate::fpca::{pace_impute, PaceOptions};
use crate::func_data::{bin_matrix, interpolate_row, make_bins, IncompleteMatrix};
use crate::linalg;
use crate::sim::derive_seed;

/// Base imputation families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaseMethod {
    Pace,
    Mice,
    MissForest,
    Mllf,
}

/// Initialization of the chained engines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Mean,
    Pace,
}

/// Full specification of an imputation method.
#[derive(Debug, Clone)]
pub struct MethodSpec {
    pub base: BaseMethod,
    pub init: InitKind,
    pub binned: bool,
    /// Bin count for binned variants.
    pub k: Option<usize>,
    /// Number of completed datasets to produce.
    pub m_imputations: usize,
    pub max_cycles: usize,
    pub include_response: bool,
    pub forest: ForestParams,
    /// Ridge for the LLF column model; `None` is the scale-aware default.
    pub llf_ridge: Option<f64>,
    pub pmm_donors: usize,
    pub pace: PaceOptions,
}

impl MethodSpec {
    fn base_spec(base: BaseMethod, init: InitKind, m: usize) -> Self {
        MethodSpec {
            base,
            init,
            binned: false,
            k: None,
            m_imputations: m,
            max_cycles: 10,
            include_response: true,
            forest: ForestParams::default(),
            llf_ridge: None,
            pmm_donors: 5,
            pace: PaceOptions::default(),
        }
    }

    pub fn pace() -> Self {
        Self::base_spec(BaseMethod::Pace, InitKind::Mean, 1)
    }

    pub fn mice() -> Self {
        Self::base_spec(BaseMethod::Mice, InitKind::Mean, 5)
    }

    pub fn missforest() -> Self {
        Self::base_spec(BaseMethod::MissForest, InitKind::Mean, 1)
    }

    pub fn mllf() -> Self {
        Self::base_spec(BaseMethod::Mllf, InitKind::Mean, 5)
    }

    pub fn binned(mut self, k: usize) -> Self {
        self.binned = true;
        self.k = Some(k);
        self
    }

    pub fn with_pace_init(mut self) -> Self {
        self.init = InitKind::Pace;
        self
    }

    pub fn with_imputations(mut self, m: usize) -> Self {
        self.m_imputations = m.max(1);
        self
    }

    /// Method by its table name: pace, mice, mf, mllf, mfp, mllfp, mf_b,
    /// mllf_b, mfp_b, mllfp_b. Binned variants require `k`.
    pub fn from_name(name: &str, k: Option<usize>) -> Result<Self> {
        let spec = match name {
            "pace" => Self::pace(),
            "mice" => Self::mice(),
            "mf" => Self::missforest(),
            "mllf" => Self::mllf(),
            "mfp" => Self::missforest().with_pace_init(),
            "mllfp" => Self::mllf().with_pace_init(),
            "mf_b" | "mllf_b" | "mfp_b" | "mllfp_b" => {
                let k = k.ok_or_else(|| {
                    Error::invalid(format!("binned method {name} requires a bin count"))
                })?;
                match name {
                    "mf_b" => Self::missforest().binned(k),
                    "mllf_b" => Self::mllf().binned(k),
                    "mfp_b" => Self::missforest().with_pace_init().binned(k),
                    "mllfp_b" => Self::mllf().with_pace_init().binned(k),
                    _ => unreachable!(),
                }
            }
            other => return Err(Error::invalid(format!("unknown method {other:?}"))),
        };
        Ok(spec)
    }
}

/// A fully observed response column with per-row visibility. Rows whose
/// response is not visible never contribute their response value to any
/// model (for held-out evaluation protocols).
#[derive(Debug, Clone)]
pub struct ResponseColumn {
    pub values: Vec<f64>,
    pub visible: Vec<bool>,
}

impl ResponseColumn {
    pub fn fully_observed(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("response must be fully observed and finite"));
        }
        let visible = vec![true; values.len()];
        Ok(ResponseColumn { values, visible })
    }

    pub fn with_visibility(values: Vec<f64>, visible: Vec<bool>) -> Result<Self> {
        if values.len() != visible.len() {
            return Err(Error::invalid("visibility mask length mismatch"));
        }
        for (v, &vis) in values.iter().zip(&visible) {
            if vis && !v.is_finite() {
                return Err(Error::invalid("visible response entries must be finite"));
            }
        }
        Ok(ResponseColumn { values, visible })
    }

    pub fn all_visible(&self) -> bool {
        self.visible.iter().all(|&v| v)
    }
}

/// An imputation problem: an incomplete matrix, an optional response, and
/// the column processing order (ascending missing count, index tie-break).
#[derive(Debug, Clone)]
pub struct ImputationTask {
    pub data: IncompleteMatrix,
    pub response: Option<ResponseColumn>,
    pub column_order: Vec<usize>,
}

impl ImputationTask {
    pub fn new(data: IncompleteMatrix, response: Option<ResponseColumn>) -> Result<Self> {
        let n = data.n_rows();
        let m = data.n_cols();
        for i in 0..n {
            if (0..m).all(|j| !data.mask[[i, j]]) {
                return Err(Error::invalid(format!("row {i} has no observed entries")));
            }
        }
        if let Some(r) = &response {
            if r.values.len() != n {
                return Err(Error::invalid("response length must match row count"));
            }
        }
        let mut order: Vec<usize> = (0..m).collect();
        let missing: Vec<usize> = (0..m).map(|j| n - data.observed_in_col(j)).collect();
        order.sort_by_key(|&j| (missing[j], j));
        Ok(ImputationTask {
            data,
            response,
            column_order: order,
        })
    }
}

/// Output of an imputation run: M completed matrices on the original grid.
#[derive(Debug, Clone)]
pub struct ImputationResult {
    pub completed: Vec<Array2<f64>>,
    /// Cycles executed, maximized over chains.
    pub n_cycles_run: usize,
    /// Per-chain, per-cycle change statistic Δ.
    pub convergence_trace: Vec<Vec<f64>>,
    pub method: MethodSpec,
    pub seed: u64,
}

impl ImputationResult {
    /// Mean of the M completed matrices (pre-fit averaging).
    pub fn average_completions(&self) -> Array2<f64> {
        let mut acc = self.completed[0].clone();
        for mat in &self.completed[1..] {
            acc += mat;
        }
        acc / self.completed.len() as f64
    }
}

/// Fill missing cells: column means of the observed entries (grand mean
/// when a column is fully missing), or PACE reconstructions with observed
/// cells kept as observed.
pub fn initialize(task: &ImputationTask, init: InitKind, pace: &PaceOptions) -> Result<Array2<f64>> {
    let n = task.data.n_rows();
    let m = task.data.n_cols();
    let mut out = Array2::zeros((n, m));
    match init {
        InitKind::Mean => {
            let mut grand_sum = 0.0;
            let mut grand_n = 0usize;
            let mut col_mean = vec![f64::NAN; m];
            for j in 0..m {
                let mut s = 0.0;
                let mut c = 0usize;
                for i in 0..n {
                    if task.data.mask[[i, j]] {
                        s += task.data.values[[i, j]];
                        c += 1;
                    }
                }
                if c > 0 {
                    col_mean[j] = s / c as f64;
                }
                grand_sum += s;
                grand_n += c;
            }
            let grand = grand_sum / grand_n.max(1) as f64;
            for j in 0..m {
                let fill = if col_mean[j].is_finite() {
                    col_mean[j]
                } else {
                    log::warn!("column {j} fully missing; mean init falls back to grand mean");
                    grand
                };
                for i in 0..n {
                    out[[i, j]] = if task.data.mask[[i, j]] {
                        task.data.values[[i, j]]
                    } else {
                        fill
                    };
                }
            }
        }
        InitKind::Pace => {
            let ds = task.data.to_dataset(None)?;
            let fit = pace_impute(&ds, &task.data.grid, pace)?;
            for i in 0..n {
                for j in 0..m {
                    out[[i, j]] = if task.data.mask[[i, j]] {
                        task.data.values[[i, j]]
                    } else {
                        fit.completed[[i, j]]
                    };
                }
            }
        }
    }
    Ok(out)
}

/// Column models available to the chained cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnModel {
    Rf,
    Llf,
    Pmm,
}

struct CycleCtx<'a> {
    task: &'a ImputationTask,
    spec: &'a MethodSpec,
    model: ColumnModel,
}

/// One chained cycle over all columns with missing entries. Returns the
/// updated matrix; originally observed cells are untouched.
pub fn chained_cycle(
    completed: &Array2<f64>,
    task: &ImputationTask,
    model: ColumnModel,
    spec: &MethodSpec,
    cycle_seed: u64,
) -> Result<Array2<f64>> {
    let ctx = CycleCtx { task, spec, model };
    let mut out = completed.clone();
    for &p in &task.column_order {
        update_column(&mut out, &ctx, p, derive_seed(cycle_seed, p as u64))?;
    }
    Ok(out)
}

fn update_column(out: &mut Array2<f64>, ctx: &CycleCtx, p: usize, seed: u64) -> Result<()> {
    let task = ctx.task;
    let n = task.data.n_rows();
    let rows_mis: Vec<usize> = (0..n).filter(|&i| !task.data.mask[[i, p]]).collect();
    if rows_mis.is_empty() {
        return Ok(());
    }
    let rows_obs: Vec<usize> = (0..n).filter(|&i| task.data.mask[[i, p]]).collect();
    if rows_obs.is_empty() {
        log::warn!("column {p} fully missing; keeping initialization values");
        return Ok(());
    }
    let use_resp = ctx.spec.include_response && task.response.is_some();
    let resp = task.response.as_ref();

    // split fitting and prediction rows by response visibility
    let (fit_with, pred_with, pred_without) = if use_resp {
        let r = resp.unwrap();
        let fit_with: Vec<usize> = rows_obs.iter().copied().filter(|&i| r.visible[i]).collect();
        let mut pred_with: Vec<usize> =
            rows_mis.iter().copied().filter(|&i| r.visible[i]).collect();
        let mut pred_without: Vec<usize> =
            rows_mis.iter().copied().filter(|&i| !r.visible[i]).collect();
        if fit_with.len() < 2 {
            // not enough response-visible rows to fit with the response
            pred_without.extend(pred_with.drain(..));
            pred_without.sort_unstable();
        }
        (fit_with, pred_with, pred_without)
    } else {
        (Vec::new(), Vec::new(), rows_mis.clone())
    };

    if !pred_with.is_empty() {
        let preds = fit_predict_column(out, ctx, p, &fit_with, &pred_with, true, seed)?;
        for (&i, &v) in pred_with.iter().zip(&preds) {
            out[[i, p]] = v;
        }
    }
    if !pred_without.is_empty() {
        let preds = fit_predict_column(
            out,
            ctx,
            p,
            &rows_obs,
            &pred_without,
            false,
            derive_seed(seed, u64::MAX),
        )?;
        for (&i, &v) in pred_without.iter().zip(&preds) {
            out[[i, p]] = v;
        }
    }
    Ok(())
}

/// Assemble predictors (all columns except `p`, response appended when
/// requested), fit the column model on `fit_rows`, predict `pred_rows`.
fn fit_predict_column(
    current: &Array2<f64>,
    ctx: &CycleCtx,
    p: usize,
    fit_rows: &[usize],
    pred_rows: &[usize],
    with_response: bool,
    seed: u64,
) -> Result<Vec<f64>> {
    let m = current.ncols();
    let n_feat = m - 1 + usize::from(with_response);
    let resp = ctx.task.response.as_ref();
    let build = |rows: &[usize]| -> Array2<f64> {
        let mut x = Array2::zeros((rows.len(), n_feat));
        for (r, &i) in rows.iter().enumerate() {
            let mut c = 0;
            for j in 0..m {
                if j != p {
                    x[[r, c]] = current[[i, j]];
                    c += 1;
                }
            }
            if with_response {
                x[[r, c]] = resp.unwrap().values[i];
            }
        }
        x
    };
    let x_fit = build(fit_rows);
    let y_fit: Vec<f64> = fit_rows.iter().map(|&i| current[[i, p]]).collect();
    let x_pred = build(pred_rows);
    match ctx.model {
        ColumnModel::Rf => {
            let params = ctx.spec.forest.with_seed(seed);
            let forest = fit_forest(&x_fit, &y_fit, &params)?;
            Ok((0..pred_rows.len())
                .map(|r| {
                    let q: Vec<f64> = (0..n_feat).map(|c| x_pred[[r, c]]).collect();
                    forest_predict(&forest, &q)
                })
                .collect())
        }
        ColumnModel::Llf => {
            let params = ctx.spec.forest.with_seed(seed);
            let forest = fit_forest(&x_fit, &y_fit, &params)?;
            pred_rows
                .iter()
                .enumerate()
                .map(|(r, _)| {
                    let q: Vec<f64> = (0..n_feat).map(|c| x_pred[[r, c]]).collect();
                    llf_predict(&forest, &q, ctx.spec.llf_ridge)
                })
                .collect()
        }
        ColumnModel::Pmm => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            pmm_impute(&x_fit, &y_fit, &x_pred, ctx.spec.pmm_donors, &mut rng)
        }
    }
}

/// Predictive mean matching: a Bayesian linear regression with
/// ridge-stabilized normal equations and a posterior parameter draw;
/// each missing row receives the observed value of one of the `donors`
/// nearest rows by predictive mean.
fn pmm_impute(
    x_fit: &Array2<f64>,
    y_fit: &[f64],
    x_pred: &Array2<f64>,
    donors: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let n = x_fit.nrows();
    let p = x_fit.ncols();
    let q = p + 1;
    let mut xtx = nalgebra::DMatrix::zeros(q, q);
    let mut xty = nalgebra::DVector::zeros(q);
    let mut zrow = vec![0.0; q];
    for i in 0..n {
        zrow[0] = 1.0;
        for j in 0..p {
            zrow[j + 1] = x_fit[[i, j]];
        }
        for r in 0..q {
            for c in r..q {
                xtx[(r, c)] += zrow[r] * zrow[c];
            }
            xty[r] += zrow[r] * y_fit[i];
        }
    }
    for r in 0..q {
        for c in 0..r {
            xtx[(r, c)] = xtx[(c, r)];
        }
    }
    let trace_xtx: f64 = xtx.trace();
    let scale = (trace_xtx / q as f64).max(1e-12);
    let mut kappa = 1e-6 * scale;
    let chol = loop {
        let mut a = xtx.clone();
        for i in 0..q {
            a[(i, i)] += kappa;
        }
        if let Some(ch) = a.cholesky() {
            break ch;
        }
        kappa *= 10.0;
        log::warn!("PMM: collinear design, escalating ridge to {kappa:.1e}");
        if kappa > 1e3 * scale {
            return Err(Error::numeric("PMM normal equations singular"));
        }
    };
    let beta_hat = chol.solve(&xty);
    let a_inv = chol.inverse();
    // residual variance draw
    let mut ssr = 0.0;
    for i in 0..n {
        let mut pred = beta_hat[0];
        for j in 0..p {
            pred += beta_hat[j + 1] * x_fit[[i, j]];
        }
        ssr += (y_fit[i] - pred) * (y_fit[i] - pred);
    }
    let df = (n.saturating_sub(q)).max(1) as f64;
    let chi: f64 = ChiSquared::new(df).unwrap().sample(rng);
    let sigma2_star = ssr / chi.max(1e-12);
    // posterior draw beta* ~ N(beta_hat, sigma2* A^-1)
    let cov = &a_inv * sigma2_star;
    let l = linalg::cholesky_jittered(&cov, 1e-12, 1e-3).unwrap_or_else(|_| {
        nalgebra::DMatrix::zeros(q, q)
    });
    let z = nalgebra::DVector::from_iterator(q, (0..q).map(|_| {
        let v: f64 = StandardNormal.sample(rng);
        v
    }));
    let beta_star = &beta_hat + &l * z;
    // type-1 matching: observed means under beta_hat, missing under beta*
    let yhat_obs: Vec<f64> = (0..n)
        .map(|i| {
            let mut v = beta_hat[0];
            for j in 0..p {
                v += beta_hat[j + 1] * x_fit[[i, j]];
            }
            v
        })
        .collect();
    let mut out = Vec::with_capacity(x_pred.nrows());
    let k = donors.min(n).max(1);
    let mut ranked: Vec<(f64, usize)> = Vec::with_capacity(n);
    for r in 0..x_pred.nrows() {
        let mut target = beta_star[0];
        for j in 0..p {
            target += beta_star[j + 1] * x_pred[[r, j]];
        }
        ranked.clear();
        ranked.extend(
            yhat_obs
                .iter()
                .enumerate()
                .map(|(i, &v)| ((v - target).abs(), i)),
        );
        ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pick = rng.gen_range(0..k);
        out.push(y_fit[ranked[pick].1]);
    }
    Ok(out)
}

/// Change statistic Δ = Σ(new−old)² / Σ new² over originally-missing cells.
fn change_statistic(new: &Array2<f64>, old: &Array2<f64>, mask: &Array2<bool>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for ((idx, &nv), &ov) in new.indexed_iter().zip(old.iter()) {
        if !mask[idx] {
            num += (nv - ov) * (nv - ov);
            den += nv * nv;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

struct ChainOutput {
    completed: Array2<f64>,
    cycles: usize,
    trace: Vec<f64>,
}

/// One chain of the self-stopping forest loop: iterate cycles until the
/// change statistic first increases, returning the pre-increase iterate.
fn run_forest_chain(
    task: &ImputationTask,
    spec: &MethodSpec,
    model: ColumnModel,
    chain_seed: u64,
) -> Result<ChainOutput> {
    let init = initialize(task, spec.init, &spec.pace)?;
    if task.data.n_missing() == 0 {
        return Ok(ChainOutput {
            completed: init,
            cycles: 0,
            trace: Vec::new(),
        });
    }
    let mut current = init;
    let mut prev_delta = f64::INFINITY;
    let mut trace = Vec::new();
    let mut cycles = 0;
    for cycle in 1..=spec.max_cycles {
        let next = chained_cycle(&current, task, model, spec, derive_seed(chain_seed, cycle as u64))?;
        let delta = change_statistic(&next, &current, &task.data.mask);
        trace.push(delta);
        cycles = cycle;
        if delta > prev_delta {
            // the previous iterate is the last one before divergence
            return Ok(ChainOutput {
                completed: current,
                cycles,
                trace,
            });
        }
        current = next;
        prev_delta = delta;
    }
    Ok(ChainOutput {
        completed: current,
        cycles,
        trace,
    })
}

fn chains_to_result(
    chains: Vec<ChainOutput>,
    method: &MethodSpec,
    seed: u64,
) -> ImputationResult {
    let n_cycles_run = chains.iter().map(|c| c.cycles).max().unwrap_or(0);
    ImputationResult {
        completed: chains.iter().map(|c| c.completed.clone()).collect(),
        n_cycles_run,
        convergence_trace: chains.into_iter().map(|c| c.trace).collect(),
        method: method.clone(),
        seed,
    }
}

/// MissForest: mean (or PACE) initialization, random-forest column models,
/// the Δ-increase stopping rule; M matrices from M independent chains.
pub fn run_missforest(task: &ImputationTask, spec: &MethodSpec, seed: u64) -> Result<ImputationResult> {
    if spec.base != BaseMethod::MissForest {
        return Err(Error::invalid("spec.base must be missforest"));
    }
    let chains: Result<Vec<ChainOutput>> = (0..spec.m_imputations)
        .into_par_iter()
        .map(|c| run_forest_chain(task, spec, ColumnModel::Rf, derive_seed(seed, c as u64)))
        .collect();
    Ok(chains_to_result(chains?, spec, seed))
}

/// MLLF: the MissForest loop with local linear forest column models.
pub fn run_mllf(task: &ImputationTask, spec: &MethodSpec, seed: u64) -> Result<ImputationResult> {
    if spec.base != BaseMethod::Mllf {
        return Err(Error::invalid("spec.base must be mllf"));
    }
    let chains: Result<Vec<ChainOutput>> = (0..spec.m_imputations)
        .into_par_iter()
        .map(|c| run_forest_chain(task, spec, ColumnModel::Llf, derive_seed(seed, c as u64)))
        .collect();
    Ok(chains_to_result(chains?, spec, seed))
}

/// MICE: M independent chains of a fixed number of predictive-mean-matching
/// cycles from mean initialization.
pub fn run_mice(task: &ImputationTask, spec: &MethodSpec, seed: u64) -> Result<ImputationResult> {
    if spec.base != BaseMethod::Mice {
        return Err(Error::invalid("spec.base must be mice"));
    }
    let chains: Result<Vec<ChainOutput>> = (0..spec.m_imputations)
        .into_par_iter()
        .map(|c| {
            let chain_seed = derive_seed(seed, c as u64);
            let init = initialize(task, InitKind::Mean, &spec.pace)?;
            if task.data.n_missing() == 0 {
                return Ok(ChainOutput {
                    completed: init,
                    cycles: 0,
                    trace: Vec::new(),
                });
            }
            let mut current = init;
            let mut trace = Vec::new();
            for cycle in 1..=spec.max_cycles {
                let next = chained_cycle(
                    &current,
                    task,
                    ColumnModel::Pmm,
                    spec,
                    derive_seed(chain_seed, cycle as u64),
                )?;
                trace.push(change_statistic(&next, &current, &task.data.mask));
                current = next;
            }
            Ok(ChainOutput {
                completed: current,
                cycles: spec.max_cycles,
                trace,
            })
        })
        .collect();
    Ok(chains_to_result(chains?, spec, seed))
}

/// Row-wise linear interpolation (on bin-center positions) for columns
/// that are empty across all rows after binning.
fn fill_empty_columns(completed: &mut Array2<f64>, task: &ImputationTask) {
    let n = completed.nrows();
    let k = completed.ncols();
    let centers = task.data.grid.points();
    let empty: Vec<usize> = (0..k)
        .filter(|&j| task.data.observed_in_col(j) == 0)
        .collect();
    if empty.is_empty() {
        return;
    }
    let filled: Vec<usize> = (0..k)
        .filter(|&j| task.data.observed_in_col(j) > 0)
        .collect();
    log::warn!(
        "{} fully missing binned column(s); filling by neighbor interpolation",
        empty.len()
    );
    for &j in &empty {
        let left = filled.iter().copied().filter(|&f| f < j).max();
        let right = filled.iter().copied().filter(|&f| f > j).min();
        for i in 0..n {
            completed[[i, j]] = match (left, right) {
                (Some(l), Some(r)) => {
                    let frac = (centers[j] - centers[l]) / (centers[r] - centers[l]);
                    completed[[i, l]] * (1.0 - frac) + completed[[i, r]] * frac
                }
                (Some(l), None) => completed[[i, l]],
                (None, Some(r)) => completed[[i, r]],
                (None, None) => completed[[i, j]],
            };
        }
    }
}

/// Binned pipeline: bin to k columns, run the base loop at bin resolution
/// (PACE initialization is computed at full resolution, then binned), and
/// interpolate each completed row back to the full grid with a natural
/// cubic spline. Completed curves are smooth and need not pass through
/// the original observations.
pub fn run_binned(task: &ImputationTask, spec: &MethodSpec, seed: u64) -> Result<ImputationResult> {
    if !spec.binned {
        return Err(Error::invalid("spec is not a binned method"));
    }
    let k = spec
        .k
        .ok_or_else(|| Error::invalid("binned method requires a bin count"))?;
    let model = match spec.base {
        BaseMethod::MissForest => ColumnModel::Rf,
        BaseMethod::Mllf => ColumnModel::Llf,
        other => {
            return Err(Error::invalid(format!(
                "binning applies to missforest/mllf, not {other:?}"
            )))
        }
    };
    let grid = task.data.grid.clone();
    let bins = make_bins(&grid, k)?;
    let binned = bin_matrix(&task.data, &bins)?;
    let binned_task = ImputationTask::new(binned, task.response.clone())?;

    // PACE initialization at full resolution, then binned
    let pace_binned_init: Option<Array2<f64>> = if spec.init == InitKind::Pace {
        let ds = task.data.to_dataset(None)?;
        let fit = pace_impute(&ds, &grid, &spec.pace)?;
        let dense = IncompleteMatrix {
            mask: Array2::from_elem(fit.completed.dim(), true),
            values: fit.completed,
            grid: grid.clone(),
        };
        Some(bin_matrix(&dense, &bins)?.values)
    } else {
        None
    };

    let chains: Result<Vec<ChainOutput>> = (0..spec.m_imputations)
        .into_par_iter()
        .map(|c| {
            let chain_seed = derive_seed(seed, c as u64);
            let mut init = match &pace_binned_init {
                Some(pace_vals) => {
                    // binned-observed cells keep their binned values
                    let mut out = pace_vals.clone();
                    for i in 0..out.nrows() {
                        for j in 0..out.ncols() {
                            if binned_task.data.mask[[i, j]] {
                                out[[i, j]] = binned_task.data.values[[i, j]];
                            }
                        }
                    }
                    out
                }
                None => initialize(&binned_task, InitKind::Mean, &spec.pace)?,
            };
            fill_empty_columns(&mut init, &binned_task);
            let missing = binned_task.data.n_missing();
            let (completed_k, cycles, trace) = if missing == 0 {
                (init, 0, Vec::new())
            } else {
                let mut current = init;
                let mut prev_delta = f64::INFINITY;
                let mut trace = Vec::new();
                let mut cycles = 0;
                for cycle in 1..=spec.max_cycles {
                    let next = chained_cycle(
                        &current,
                        &binned_task,
                        model,
                        spec,
                        derive_seed(chain_seed, cycle as u64),
                    )?;
                    let delta = change_statistic(&next, &current, &binned_task.data.mask);
                    trace.push(delta);
                    cycles = cycle;
                    if delta > prev_delta {
                        break;
                    }
                    current = next;
                    prev_delta = delta;
                }
                (current, cycles, trace)
            };
            // interpolate each completed row back to the full grid
            let n = completed_k.nrows();
            let m = grid.len();
            let mut full = Array2::zeros((n, m));
            for i in 0..n {
                let row: Vec<f64> = (0..k).map(|j| completed_k[[i, j]]).collect();
                let interp = interpolate_row(&row, &bins, &grid)?;
                for j in 0..m {
                    full[[i, j]] = interp[j];
                }
            }
            Ok(ChainOutput {
                completed: full,
                cycles,
                trace,
            })
        })
        .collect();
    Ok(chains_to_result(chains?, spec, seed))
}

/// Dispatch an imputation method on a task.
pub fn run_method(task: &ImputationTask, spec: &MethodSpec, seed: u64) -> Result<ImputationResult> {
    if spec.binned {
        return run_binned(task, spec, seed);
    }
    match spec.base {
        BaseMethod::Pace => {
            let ds = task.data.to_dataset(None)?;
            let fit = pace_impute(&ds, &task.data.grid, &spec.pace)?;
            Ok(ImputationResult {
                completed: vec![fit.completed],
                n_cycles_run: 0,
                convergence_trace: Vec::new(),
                method: spec.clone(),
                seed,
            })
        }
        BaseMethod::Mice => run_mice(task, spec, seed),
        BaseMethod::MissForest => run_missforest(task, spec, seed),
        BaseMethod::Mllf => run_mllf(task, spec, seed),
    }
}

/// Output of a model fit on one completed dataset, for pooling.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub coefficients: Vec<f64>,
    pub predictions: Vec<f64>,
    /// Per-coefficient sampling variance, when the fitter provides one.
    pub coefficient_variance: Option<Vec<f64>>,
}

/// Rubin-style pooled fit across M completed datasets.
#[derive(Debug, Clone)]
pub struct PooledFit {
    /// Mean coefficients across imputations.
    pub coefficients: Vec<f64>,
    /// Mean predictions across imputations.
    pub predictions: Vec<f64>,
    /// Between-imputation variance of the coefficients.
    pub between_variance: Vec<f64>,
    /// Mean within-imputation variance (zeros when unavailable).
    pub within_variance: Vec<f64>,
    /// Total variance: within + (1 + 1/M) · between.
    pub total_variance: Vec<f64>,
    pub m: usize,
}

/// Fit a model on each completed dataset and pool by averaging, reporting
/// between-imputation coefficient variance alongside.
pub fn pool<F>(result: &ImputationResult, fitter: F) -> Result<PooledFit>
where
    F: Fn(&Array2<f64>) -> Result<FitOutput>,
{
    let m = result.completed.len();
    if m == 0 {
        return Err(Error::invalid("no completed datasets to pool"));
    }
    let fits: Result<Vec<FitOutput>> = result.completed.iter().map(&fitter).collect();
    let fits = fits?;
    let n_coef = fits[0].coefficients.len();
    let n_pred = fits[0].predictions.len();
    for f in &fits {
        if f.coefficients.len() != n_coef || f.predictions.len() != n_pred {
            return Err(Error::invalid("fit outputs have inconsistent shapes"));
        }
    }
    let mut coefficients = vec![0.0; n_coef];
    let mut predictions = vec![0.0; n_pred];
    for f in &fits {
        for (acc, &v) in coefficients.iter_mut().zip(&f.coefficients) {
            *acc += v;
        }
        for (acc, &v) in predictions.iter_mut().zip(&f.predictions) {
            *acc += v;
        }
    }
    coefficients.iter_mut().for_each(|v| *v /= m as f64);
    predictions.iter_mut().for_each(|v| *v /= m as f64);
    let mut between = vec![0.0; n_coef];
    if m > 1 {
        for f in &fits {
            for (b, (&v, &mean)) in between.iter_mut().zip(f.coefficients.iter().zip(&coefficients))
            {
                *b += (v - mean) * (v - mean);
            }
        }
        between.iter_mut().for_each(|v| *v /= (m - 1) as f64);
    }
    let mut within = vec![0.0; n_coef];
    let mut any_within = false;
    for f in &fits {
        if let Some(var) = &f.coefficient_variance {
            any_within = true;
            for (w, &v) in within.iter_mut().zip(var) {
                *w += v / m as f64;
            }
        }
    }
    if !any_within {
        within.iter_mut().for_each(|v| *v = 0.0);
    }
    let total: Vec<f64> = within
        .iter()
        .zip(&between)
        .map(|(&w, &b)| w + (1.0 + 1.0 / m as f64) * b)
        .collect();
    Ok(PooledFit {
        coefficients,
        predictions,
        between_variance: between,
        within_variance: within,
        total_variance: total,
        m,
    })
}
