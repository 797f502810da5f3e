//! ε-support-vector regression with an RBF kernel.
//!
//! Training solves the dual problem with sequential minimal optimization
//! over the `2n` box-constrained variables `(α, α*)`, keeping the equality
//! constraint `Σ(α − α*) = 0` analytic at every pair update. The model stores
//! `β = α − α*` for the support vectors and the bias `b`, so that
//! `f(x) = Σ βᵢ K(x, xᵢ) + b`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::mse;
use crate::rng::SeededRng;

pub const MODEL_FORMAT: &str = "soilwave-svr";
pub const MODEL_VERSION: u32 = 1;

/// Regularization weight `c`, tube half-width `epsilon`, kernel width `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrHyper {
    pub c: f64,
    pub epsilon: f64,
    pub gamma: f64,
}

impl Default for SvrHyper {
    fn default() -> Self {
        SvrHyper { c: 0.1, epsilon: 0.1, gamma: 1.0 }
    }
}

impl SvrHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid("c", format!("must be > 0, got {}", self.c)));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon", format!("must be >= 0, got {}", self.epsilon)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma", format!("must be > 0, got {}", self.gamma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrModel {
    pub support_vectors: Vec<Vec<f64>>,
    pub coeffs: Vec<f64>,
    pub bias: f64,
    pub hyper: SvrHyper,
}

#[derive(Serialize, Deserialize)]
struct SvrModelFile {
    format: String,
    version: u32,
    hyper: SvrHyper,
    bias: f64,
    support_vectors: Vec<Vec<f64>>,
    coeffs: Vec<f64>,
}

impl SvrModel {
    pub fn dim(&self) -> Option<usize> {
        self.support_vectors.first().map(Vec::len)
    }

    pub fn to_json(&self) -> String {
        let file = SvrModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            hyper: self.hyper,
            bias: self.bias,
            support_vectors: self.support_vectors.clone(),
            coeffs: self.coeffs.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SvrModelFile = serde_json::from_str(text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Format(format!("expected format `{MODEL_FORMAT}`, got `{}`", file.format)));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported svr model version v{}", file.version)));
        }
        if file.support_vectors.len() != file.coeffs.len() {
            return Err(Error::Format("support vector and coefficient counts differ".into()));
        }
        file.hyper.validate()?;
        Ok(SvrModel { support_vectors: file.support_vectors, coeffs: file.coeffs, bias: file.bias, hyper: file.hyper })
    }
}

/// `exp(-gamma * |x - y|^2)`.
pub fn rbf_kernel(x: &[f64], y: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::arg(format!("dimension mismatch: {} vs {}", x.len(), y.len())));
    }
    Ok(rbf_unchecked(x, y, gamma))
}

#[inline]
fn rbf_unchecked(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

pub fn svr_predict(model: &SvrModel, x: &[f64]) -> Result<f64> {
    if let Some(d) = model.dim() {
        if d != x.len() {
            return Err(Error::arg(format!("model expects {d} features, got {}", x.len())));
        }
    }
    Ok(predict_unchecked(model, x))
}

fn predict_unchecked(model: &SvrModel, x: &[f64]) -> f64 {
    model
        .support_vectors
        .iter()
        .zip(&model.coeffs)
        .map(|(sv, &b)| b * rbf_unchecked(x, sv, model.hyper.gamma))
        .sum::<f64>()
        + model.bias
}

pub fn svr_predict_many(model: &SvrModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows.iter().map(|r| svr_predict(model, r)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Maximum KKT violation fell below the tolerance.
    Converged,
    /// Iteration budget exhausted first.
    MaxPasses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrTrainOptions {
    /// Stop when the maximal violating pair gap is below this.
    pub tol: f64,
    /// One pass is `n` pair updates.
    pub max_passes: usize,
    /// Seeds the scan order used to break ties in working-pair selection.
    pub seed: u64,
}

impl Default for SvrTrainOptions {
    fn default() -> Self {
        SvrTrainOptions { tol: 1e-3, max_passes: 10_000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvrFit {
    pub model: SvrModel,
    pub termination: Termination,
    pub iterations: usize,
    /// Gap `m(a) − M(a)` of the maximal violating pair at exit.
    pub kkt_gap: f64,
    /// `β` for every training point (zeros included).
    pub duals: Vec<f64>,
}

enum KernelRows<'a> {
    Dense(Vec<f64>),
    Lazy { x: &'a [Vec<f64>], gamma: f64 },
}

impl KernelRows<'_> {
    fn row(&self, i: usize, n: usize, buf: &mut Vec<f64>) {
        match self {
            KernelRows::Dense(k) => {
                buf.clear();
                buf.extend_from_slice(&k[i * n..(i + 1) * n]);
            }
            KernelRows::Lazy { x, gamma } => {
                buf.clear();
                buf.extend(x.iter().map(|xj| rbf_unchecked(&x[i], xj, *gamma)));
            }
        }
    }
}

const DENSE_KERNEL_LIMIT: usize = 20_000_000;
const TAU: f64 = 1e-12;

/// Trains an ε-SVR on `x` (rows) and `y`.
pub fn svr_train(x: &[Vec<f64>], y: &[f64], hyper: &SvrHyper, opts: &SvrTrainOptions) -> Result<SvrFit> {
    let n = x.len();
    if n < 2 {
        return Err(Error::arg(format!("need at least 2 training points, got {n}")));
    }
    if y.len() != n {
        return Err(Error::arg(format!("{n} rows but {} targets", y.len())));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::arg("rows have differing widths"));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("x/y", "training data must be finite"));
    }
    hyper.validate()?;
    if !(opts.tol > 0.0) {
        return Err(Error::arg("tol must be > 0"));
    }

    let c = hyper.c;
    let kernel = if n * n <= DENSE_KERNEL_LIMIT {
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rbf_unchecked(&x[i], &x[j], hyper.gamma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        KernelRows::Dense(k)
    } else {
        KernelRows::Lazy { x, gamma: hyper.gamma }
    };
    let diag: Vec<f64> = x.iter().map(|xi| rbf_unchecked(xi, xi, hyper.gamma)).collect();

    // Variable t < n is α_t (sign +1); t >= n is α*_{t-n} (sign -1).
    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let idx = |t: usize| if t < n { t } else { t - n };
    let mut alpha = vec![0.0; l];
    let mut grad: Vec<f64> =
        (0..l).map(|t| if t < n { hyper.epsilon - y[t] } else { hyper.epsilon + y[t - n] }).collect();

    let mut order: Vec<usize> = (0..l).collect();
    SeededRng::new(opts.seed).shuffle(&mut order);

    let in_up = |a: f64, s: f64| (s > 0.0 && a < c) || (s < 0.0 && a > 0.0);
    let in_low = |a: f64, s: f64| (s > 0.0 && a > 0.0) || (s < 0.0 && a < c);

    let max_iter = opts.max_passes.saturating_mul(n).max(1);
    let mut iterations = 0;
    let mut row_i = Vec::with_capacity(n);
    let mut row_j = Vec::with_capacity(n);
    let termination;
    let mut gap;

    loop {
        // First index: maximal -s·G over I_up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        for &t in &order {
            let s = sign(t);
            if in_up(alpha[t], s) && -s * grad[t] > gmax {
                gmax = -s * grad[t];
                i_sel = t;
            }
        }
        let mut gmin = f64::INFINITY;
        for &t in &order {
            let s = sign(t);
            if in_low(alpha[t], s) && -s * grad[t] < gmin {
                gmin = -s * grad[t];
            }
        }
        gap = gmax - gmin;
        if i_sel == usize::MAX || gap < opts.tol {
            termination = Termination::Converged;
            break;
        }
        if iterations >= max_iter {
            termination = Termination::MaxPasses;
            break;
        }

        // Second index: second-order gain among violators in I_low.
        let i = i_sel;
        let si = sign(i);
        kernel.row(idx(i), n, &mut row_i);
        let mut best = f64::INFINITY;
        let mut j_sel = usize::MAX;
        for &t in &order {
            let s = sign(t);
            if !in_low(alpha[t], s) {
                continue;
            }
            let b = gmax + s * grad[t];
            if b <= 0.0 {
                continue;
            }
            let mut a = diag[idx(i)] + diag[idx(t)] - 2.0 * row_i[idx(t)];
            if a <= 0.0 {
                a = TAU;
            }
            let score = -(b * b) / a;
            if score < best {
                best = score;
                j_sel = t;
            }
        }
        if j_sel == usize::MAX {
            termination = Termination::Converged;
            break;
        }
        let j = j_sel;
        let sj = sign(j);
        kernel.row(idx(j), n, &mut row_j);

        let q_ij = si * sj * row_i[idx(j)];
        let (old_i, old_j) = (alpha[i], alpha[j]);
        if si != sj {
            let mut quad = diag[idx(i)] + diag[idx(j)] + 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = diag[idx(i)] + diag[idx(j)] - 2.0 * q_ij;
            if quad <= 0.0 {
                quad = TAU;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        for t in 0..l {
            let st = sign(t);
            let k = idx(t);
            grad[t] += st * (si * row_i[k] * di + sj * row_j[k] * dj);
        }
        iterations += 1;
    }

    // Bias from free variables, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..l {
        let s = sign(t);
        let yg = s * grad[t];
        if alpha[t] >= c {
            if s < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if s > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { (ub + lb) / 2.0 };
    let bias = -rho;

    let duals: Vec<f64> = (0..n).map(|i| alpha[i] - alpha[i + n]).collect();
    let (support_vectors, coeffs) =
        duals.iter().enumerate().filter(|(_, &b)| b != 0.0).map(|(i, &b)| (x[i].clone(), b)).unzip();
    log::debug!("svr: {termination:?} after {iterations} iterations, gap {gap:.3e}");
    Ok(SvrFit {
        model: SvrModel { support_vectors, coeffs, bias, hyper: *hyper },
        termination,
        iterations,
        kkt_gap: gap,
        duals,
    })
}

fn check_duals(x: &[Vec<f64>], y: &[f64], beta: &[f64], hyper: &SvrHyper) -> Result<()> {
    if x.len() != y.len() || beta.len() != y.len() {
        return Err(Error::arg("x, y and duals must have equal lengths"));
    }
    hyper.validate()?;
    let slack = 1e-9 * hyper.c.max(1.0);
    if let Some(i) = beta.iter().position(|b| !(b.abs() <= hyper.c + slack)) {
        return Err(Error::invalid("duals", format!("|beta[{i}]| = {} exceeds C = {}", beta[i].abs(), hyper.c)));
    }
    let sum: f64 = beta.iter().sum();
    if sum.abs() > 1e-6 {
        return Err(Error::invalid("duals", format!("sum of duals is {sum}, expected 0")));
    }
    Ok(())
}

fn fitted_values(x: &[Vec<f64>], beta: &[f64], bias: f64, gamma: f64) -> Vec<f64> {
    x.iter()
        .map(|xi| {
            x.iter().zip(beta).filter(|(_, &b)| b != 0.0).map(|(xj, &b)| b * rbf_unchecked(xi, xj, gamma)).sum::<f64>()
                + bias
        })
        .collect()
}

/// Primal objective `C·Σ(ξ + ξ*) + ½‖ω‖²` with the slacks reconstructed as the
/// positive parts of the tube violations and `‖ω‖² = βᵀKβ`.
pub fn svr_objective(x: &[Vec<f64>], y: &[f64], beta: &[f64], bias: f64, hyper: &SvrHyper) -> Result<f64> {
    check_duals(x, y, beta, hyper)?;
    let mut w2 = 0.0;
    for (i, xi) in x.iter().enumerate() {
        if beta[i] == 0.0 {
            continue;
        }
        for (j, xj) in x.iter().enumerate() {
            w2 += beta[i] * beta[j] * rbf_unchecked(xi, xj, hyper.gamma);
        }
    }
    let slack: f64 = fitted_values(x, beta, bias, hyper.gamma)
        .iter()
        .zip(y)
        .map(|(f, yi)| (yi - f - hyper.epsilon).max(0.0) + (f - yi - hyper.epsilon).max(0.0))
        .sum();
    Ok(hyper.c * slack + 0.5 * w2)
}

/// Largest per-point KKT violation of `(β, b)`, in target units.
pub fn max_kkt_violation(x: &[Vec<f64>], y: &[f64], beta: &[f64], bias: f64, hyper: &SvrHyper) -> Result<f64> {
    check_duals(x, y, beta, hyper)?;
    let c = hyper.c;
    let eps = hyper.epsilon;
    let at_bound = 1e-12 * c.max(1.0);
    let worst = fitted_values(x, beta, bias, hyper.gamma)
        .iter()
        .zip(y)
        .zip(beta)
        .map(|((f, yi), &b)| {
            let r = yi - f;
            if b.abs() <= at_bound {
                (r.abs() - eps).max(0.0)
            } else if b >= c - at_bound {
                (eps - r).max(0.0)
            } else if b <= -c + at_bound {
                (r + eps).max(0.0)
            } else if b > 0.0 {
                (r - eps).abs()
            } else {
                (r + eps).abs()
            }
        })
        .fold(0.0, f64::max);
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub gamma: f64,
    pub c: f64,
    pub epsilon: f64,
    /// Mean validation MSE (½ convention) across folds.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: SvrHyper,
    pub best_mse: f64,
    /// One row per grid point, γ outermost and ε innermost.
    pub table: Vec<GridRow>,
}

/// Contiguous chronological folds: fold `k` validates on block `k` and trains on the rest.
pub fn fold_ranges(n: usize, folds: usize) -> Vec<std::ops::Range<usize>> {
    (0..folds).map(|k| (k * n / folds)..((k + 1) * n / folds)).collect()
}

/// Exhaustive search scored by mean validation MSE over contiguous folds.
/// Ties go to smaller `c`, then smaller `gamma`, then larger `epsilon`.
pub fn grid_search_svr(
    x: &[Vec<f64>],
    y: &[f64],
    gamma_grid: &[f64],
    c_grid: &[f64],
    eps_grid: &[f64],
    folds: usize,
    opts: &SvrTrainOptions,
) -> Result<GridSearchResult> {
    if gamma_grid.is_empty() || c_grid.is_empty() || eps_grid.is_empty() {
        return Err(Error::arg("every grid axis needs at least one value"));
    }
    if folds < 2 {
        return Err(Error::arg("grid search needs at least 2 folds"));
    }
    if x.len() != y.len() {
        return Err(Error::arg("x and y lengths differ"));
    }
    if x.len() < 2 * folds {
        return Err(Error::arg(format!("{} rows cannot fill {folds} folds", x.len())));
    }
    let points: Vec<SvrHyper> = gamma_grid
        .iter()
        .flat_map(|&gamma| {
            c_grid.iter().flat_map(move |&c| eps_grid.iter().map(move |&epsilon| SvrHyper { c, epsilon, gamma }))
        })
        .collect();
    let ranges = fold_ranges(x.len(), folds);

    let table = points
        .par_iter()
        .map(|hyper| -> Result<GridRow> {
            let mut total = 0.0;
            for r in &ranges {
                let (tx, ty): (Vec<Vec<f64>>, Vec<f64>) = x
                    .iter()
                    .zip(y)
                    .enumerate()
                    .filter(|(i, _)| !r.contains(i))
                    .map(|(_, (xi, &yi))| (xi.clone(), yi))
                    .unzip();
                let fit = svr_train(&tx, &ty, hyper, opts)?;
                let pred: Vec<f64> = x[r.clone()].iter().map(|xi| predict_unchecked(&fit.model, xi)).collect();
                total += mse(&pred, &y[r.clone()])?;
            }
            Ok(GridRow { gamma: hyper.gamma, c: hyper.c, epsilon: hyper.epsilon, mse: total / folds as f64 })
        })
        .collect::<Result<Vec<_>>>()?;

    let best_row = table
        .iter()
        .min_by(|a, b| {
            a.mse
                .total_cmp(&b.mse)
                .then(a.c.total_cmp(&b.c))
                .then(a.gamma.total_cmp(&b.gamma))
                .then(b.epsilon.total_cmp(&a.epsilon))
        })
        .expect("grid is nonempty");
    Ok(GridSearchResult {
        best: SvrHyper { c: best_row.c, epsilon: best_row.epsilon, gamma: best_row.gamma },
        best_mse: best_row.mse,
        table,
    })
}

pub fn grid_to_csv(rows: &[GridRow]) -> String {
    let mut out = String::from("gamma,c,epsilon,mse\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.gamma, r.c, r.epsilon, r.mse));
    }
    out
}
