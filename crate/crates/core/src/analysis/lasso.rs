//! L1-penalized regression by cyclic coordinate descent.
//!
//! Objective, for standardized predictors `Z` and centered target `y` over
//! `m` rows: `(1 / 2m) |y - Z b|^2 + lambda |b|_1`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::regression::Factor;
use super::stats::pearson_correlation;
use crate::error::{Error, Result};
use crate::record::{RunRecord, Target};
use crate::seed;

pub const MIN_LASSO_RECORDS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoConfig {
    /// Length of the automatic log-spaced penalty grid.
    pub n_lambdas: usize,
    /// Smallest automatic penalty as a fraction of the smallest penalty that
    /// zeroes every coefficient.
    pub lambda_min_ratio: f64,
    pub folds: usize,
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Seed for the cross-validation fold assignment.
    pub seed: u64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            n_lambdas: 50,
            lambda_min_ratio: 1e-3,
            folds: 5,
            tolerance: 1e-8,
            max_sweeps: 200_000,
            seed: 0,
        }
    }
}

pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        0.0
    }
}

/// Minimizes the objective above from `start`, sweeping coordinates in order
/// until no coefficient moves by `tolerance` or more. Columns with zero norm
/// keep a zero coefficient.
pub fn coordinate_descent(
    z: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambda: f64,
    start: &[f64],
    tolerance: f64,
    max_sweeps: usize,
) -> Result<Vec<f64>> {
    let (m, p) = z.dim();
    Error::check_len("lasso target", m, y.len())?;
    Error::check_len("lasso start", p, start.len())?;
    let mf = m as f64;
    // Covariance form: rho_j = z_j.y / m - sum_{k != j} G_jk b_k with G = Z'Z / m.
    let gram = z.t().dot(&z) / mf;
    let zy = z.t().dot(&y) / mf;
    let mut beta = start.to_vec();
    let mut max_change = f64::INFINITY;
    for _ in 0..max_sweeps {
        max_change = 0.0f64;
        for j in 0..p {
            let norm = gram[[j, j]];
            if norm == 0.0 {
                beta[j] = 0.0;
                continue;
            }
            let mut rho = zy[j];
            for k in (0..p).filter(|&k| k != j) {
                rho -= gram[[j, k]] * beta[k];
            }
            let next = soft_threshold(rho, lambda) / norm;
            max_change = max_change.max((next - beta[j]).abs());
            beta[j] = next;
        }
        if max_change < tolerance {
            return Ok(beta);
        }
    }
    Err(Error::NonConvergence {
        iterations: max_sweeps,
        max_change,
    })
}

/// Column means and population standard deviations; zero-variance columns
/// get a scale of 0 and standardize to all zeros.
fn standardizer(x: ArrayView2<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let mean = x.mean_axis(Axis(0)).unwrap();
    let std = x.var_axis(Axis(0), 0.0).mapv(f64::sqrt);
    (mean, std)
}

fn standardize(x: ArrayView2<'_, f64>, mean: &Array1<f64>, std: &Array1<f64>) -> Array2<f64> {
    let mut z = &x - mean;
    for (mut col, &s) in z.axis_iter_mut(Axis(1)).zip(std) {
        if s > 0.0 {
            col /= s;
        } else {
            col.fill(0.0);
        }
    }
    z
}

/// A fitted model on the original predictor scale.
#[derive(Clone, Debug, PartialEq)]
pub struct LassoFit {
    pub standardized: Vec<f64>,
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
    pub y_mean: f64,
}

impl LassoFit {
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let z = standardize(x, &self.mean, &self.std);
        z.dot(&Array1::from(self.standardized.clone())) + self.y_mean
    }

    /// Coefficients on the raw predictor scale, plus the intercept.
    pub fn raw(&self) -> (f64, Vec<f64>) {
        let coef: Vec<f64> = self
            .standardized
            .iter()
            .zip(&self.std)
            .map(|(b, &s)| if s > 0.0 { b / s } else { 0.0 })
            .collect();
        let intercept = self.y_mean - coef.iter().zip(&self.mean).map(|(c, m)| c * m).sum::<f64>();
        (intercept, coef)
    }
}

/// Fits a warm-started path over `lambdas` (any order) and returns one fit
/// per penalty, in the given order.
pub fn fit_path(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambdas: &[f64],
    cfg: &LassoConfig,
) -> Result<Vec<LassoFit>> {
    let (mean, std) = standardizer(x);
    let z = standardize(x, &mean, &std);
    let y_mean = y.mean().unwrap_or(0.0);
    let yc = &y - y_mean;
    let mut order: Vec<usize> = (0..lambdas.len()).collect();
    order.sort_by(|&a, &b| lambdas[b].partial_cmp(&lambdas[a]).unwrap());
    let mut fits = vec![None; lambdas.len()];
    let mut beta = vec![0.0; x.ncols()];
    for i in order {
        beta = coordinate_descent(z.view(), yc.view(), lambdas[i], &beta, cfg.tolerance, cfg.max_sweeps)?;
        fits[i] = Some(LassoFit {
            standardized: beta.clone(),
            mean: mean.clone(),
            std: std.clone(),
            y_mean,
        });
    }
    Ok(fits.into_iter().map(Option::unwrap).collect())
}

/// Smallest penalty at which every standardized coefficient is zero.
pub fn lambda_max(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let (mean, std) = standardizer(x);
    let z = standardize(x, &mean, &std);
    let yc = &y - y.mean().unwrap_or(0.0);
    let m = x.nrows() as f64;
    z.t().dot(&yc).iter().fold(0.0f64, |acc, v| acc.max(v.abs() / m))
}

/// Descending log-spaced grid from `lambda_max` down to
/// `lambda_max * min_ratio`.
pub fn log_grid(lambda_max: f64, min_ratio: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lambda_max];
    }
    let (hi, lo) = (lambda_max.ln(), (lambda_max * min_ratio).ln());
    let mut grid: Vec<f64> = (0..n).map(|k| (hi + (lo - hi) * k as f64 / (n - 1) as f64).exp()).collect();
    // exp(ln(x)) can land an ulp below x, which would leave a spurious
    // coefficient of order 1e-18 at the top of the path.
    grid[0] = lambda_max;
    grid
}

/// Mean squared held-out error per penalty under k-fold cross-validation.
/// Each fold standardizes on its own training rows.
pub fn cross_validate(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    lambdas: &[f64],
    cfg: &LassoConfig,
) -> Result<Vec<f64>> {
    let m = x.nrows();
    let k = cfg.folds.clamp(2, m);
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut seed::rng(cfg.seed));
    let mut fold_of = vec![0; m];
    for (pos, &row) in perm.iter().enumerate() {
        fold_of[row] = pos % k;
    }
    let mut sse = vec![0.0; lambdas.len()];
    for fold in 0..k {
        let train: Vec<usize> = (0..m).filter(|&i| fold_of[i] != fold).collect();
        let held: Vec<usize> = (0..m).filter(|&i| fold_of[i] == fold).collect();
        let xt = x.select(Axis(0), &train);
        let yt = y.select(Axis(0), &train);
        let xh = x.select(Axis(0), &held);
        let yh = y.select(Axis(0), &held);
        for (s, fit) in sse.iter_mut().zip(fit_path(xt.view(), yt.view(), lambdas, cfg)?) {
            let pred = fit.predict(xh.view());
            *s += pred.iter().zip(&yh).map(|(p, t)| (p - t) * (p - t)).sum::<f64>();
        }
    }
    Ok(sse.into_iter().map(|s| s / m as f64).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LassoResult {
    pub target: Target,
    pub factors: Vec<Factor>,
    /// Coefficients on standardized predictors. Exactly zero when dropped.
    pub coefficients: Vec<f64>,
    pub raw_coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    pub cv_mse: Vec<f64>,
    pub selected: Vec<Factor>,
    /// Pearson r between fitted and actual target; `None` when the fit is
    /// constant (every coefficient zeroed).
    pub reconstruction_r: Option<f64>,
    pub fitted: Vec<f64>,
    pub actual: Vec<f64>,
}

/// Cross-validated LASSO of `target` on (N, A, A+N). Uses an automatic grid
/// when `lambda_grid` is `None`; the penalty with the lowest CV error wins,
/// ties going to the larger penalty.
pub fn lasso_regression(
    records: &[RunRecord],
    target: Target,
    lambda_grid: Option<&[f64]>,
    cfg: &LassoConfig,
) -> Result<LassoResult> {
    if records.len() < MIN_LASSO_RECORDS {
        return Err(Error::InsufficientData {
            what: "records for LASSO",
            needed: MIN_LASSO_RECORDS,
            got: records.len(),
        });
    }
    let factors = Factor::ALL.to_vec();
    let x = Array2::from_shape_fn((records.len(), factors.len()), |(i, j)| factors[j].value(&records[i]));
    let y = Array1::from_iter(records.iter().map(|r| target.value(r)));
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite {} value", target.name())));
    }
    lasso_on_design(x.view(), y.view(), factors, target, lambda_grid, cfg)
}

pub(crate) fn lasso_on_design(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    factors: Vec<Factor>,
    target: Target,
    lambda_grid: Option<&[f64]>,
    cfg: &LassoConfig,
) -> Result<LassoResult> {
    let grid: Vec<f64> = match lambda_grid {
        Some([]) => return Err(Error::InvalidConfig("LASSO penalty grid is empty".into())),
        Some(g) => g.to_vec(),
        None => {
            let top = lambda_max(x, y);
            if top == 0.0 {
                vec![0.0]
            } else {
                log_grid(top, cfg.lambda_min_ratio, cfg.n_lambdas.max(1))
            }
        }
    };
    if grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidConfig("LASSO penalties must be non-negative".into()));
    }
    let cv_mse = cross_validate(x, y, &grid, cfg)?;
    let best = (0..grid.len())
        .min_by(|&a, &b| {
            cv_mse[a]
                .partial_cmp(&cv_mse[b])
                .unwrap()
                .then(grid[b].partial_cmp(&grid[a]).unwrap())
        })
        .unwrap();
    let lambda = grid[best];
    // Refit along the grid down to the chosen penalty for warm starts.
    let path: Vec<f64> = grid.iter().copied().filter(|&l| l >= lambda).collect();
    let fit = fit_path(x, y, &path, cfg)?
        .into_iter()
        .zip(&path)
        .find(|(_, &l)| l == lambda)
        .unwrap()
        .0;
    let fitted = fit.predict(x);
    let (intercept, raw) = fit.raw();
    let reconstruction_r = pearson_correlation(fitted.as_slice().unwrap(), y.as_slice().unwrap()).ok();
    let selected = factors
        .iter()
        .zip(&fit.standardized)
        .filter(|(_, &b)| b != 0.0)
        .map(|(f, _)| *f)
        .collect();
    Ok(LassoResult {
        target,
        factors,
        coefficients: fit.standardized,
        raw_coefficients: raw,
        intercept,
        lambda,
        lambda_grid: grid,
        cv_mse,
        selected,
        reconstruction_r,
        fitted: fitted.to_vec(),
        actual: y.to_vec(),
    })
}
