//! Ordinary least squares of a per-run target on neuron count, astrocyte
//! count and their sum.
//!
//! The full design `(1, N, A, N + A)` is rank deficient by construction, so it
//! is solved with the SVD pseudo-inverse (minimum-norm coefficients, unique
//! fitted values). Significance is only reported for the full-rank two-factor
//! sub-designs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::stats::mean;
use crate::error::{Error, Result};
use crate::record::{RunRecord, Target};

pub const MIN_OLS_RECORDS: usize = 5;

/// Explanatory factors derived from a run's unit counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Neurons,
    Astrocytes,
    Total,
}

impl Factor {
    pub const ALL: [Factor; 3] = [Factor::Neurons, Factor::Astrocytes, Factor::Total];

    pub fn name(self) -> &'static str {
        match self {
            Factor::Neurons => "N",
            Factor::Astrocytes => "A",
            Factor::Total => "A+N",
        }
    }

    pub fn value(self, r: &RunRecord) -> f64 {
        match self {
            Factor::Neurons => r.n_neurons as f64,
            Factor::Astrocytes => r.n_astrocytes as f64,
            Factor::Total => r.total_units() as f64,
        }
    }
}

/// Fit of the target on a full-rank subset of the factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubDesignFit {
    pub factors: Vec<Factor>,
    /// Intercept first, then one per factor.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub t_stats: Vec<f64>,
    pub r_squared: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub target: Target,
    /// Intercept, N, A, A+N (minimum-norm solution).
    pub coefficients: [f64; 4],
    pub r_squared: f64,
    /// Variance inflation factor per factor; `None` when infinite (exact
    /// collinearity) or undefined (constant factor).
    pub vif: [Option<f64>; 3],
    pub rank: usize,
    pub fitted: Vec<f64>,
    pub sub_designs: Vec<SubDesignFit>,
}

/// Minimum-norm least squares via SVD, treating singular values below
/// `1e-10 * max` as zero. Returns coefficients and numerical rank.
pub fn min_norm_lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, usize) {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let beta = svd.solve(y, tol).expect("u and v were computed");
    (beta, rank)
}

fn r_squared(y: &DVector<f64>, fitted: &DVector<f64>) -> f64 {
    let m = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - m) * (v - m)).sum();
    if ss_tot == 0.0 {
        return 0.0;
    }
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
}

fn design(columns: &[Vec<f64>]) -> DMatrix<f64> {
    let m = columns[0].len();
    DMatrix::from_fn(m, columns.len() + 1, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] })
}

fn variance_inflation(columns: &[Vec<f64>], j: usize) -> Option<f64> {
    let col = &columns[j];
    let mu = mean(col);
    if col.iter().all(|&v| v == mu) {
        return None;
    }
    let others: Vec<Vec<f64>> = columns
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != j)
        .map(|(_, c)| c.clone())
        .collect();
    let x = design(&others);
    let y = DVector::from_vec(col.clone());
    let (beta, _) = min_norm_lstsq(&x, &y);
    let r2 = r_squared(&y, &(&x * beta));
    if 1.0 - r2 < 1e-10 {
        None
    } else {
        Some(1.0 / (1.0 - r2))
    }
}

fn sub_design_fit(factors: &[Factor], columns: &[Vec<f64>], y: &DVector<f64>) -> Option<SubDesignFit> {
    let x = design(columns);
    let (m, p) = x.shape();
    if m <= p {
        return None;
    }
    let xtx = x.transpose() * &x;
    let (_, rank) = min_norm_lstsq(&x, y);
    if rank < p {
        return None;
    }
    let inv = xtx.try_inverse()?;
    let beta = &inv * x.transpose() * y;
    let fitted = &x * &beta;
    let ss_res: f64 = y.iter().zip(fitted.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    let sigma2 = ss_res / (m - p) as f64;
    let std_errors: Vec<f64> = (0..p).map(|k| (sigma2 * inv[(k, k)]).sqrt()).collect();
    let t_stats = beta.iter().zip(&std_errors).map(|(b, s)| b / s).collect();
    Some(SubDesignFit {
        factors: factors.to_vec(),
        coefficients: beta.iter().copied().collect(),
        std_errors,
        t_stats,
        r_squared: r_squared(y, &fitted),
    })
}

/// Fits `target ~ 1 + N + A + (A+N)` over the given records.
pub fn ols_regression(records: &[RunRecord], target: Target) -> Result<RegressionResult> {
    if records.len() < MIN_OLS_RECORDS {
        return Err(Error::InsufficientData {
            what: "records for regression",
            needed: MIN_OLS_RECORDS,
            got: records.len(),
        });
    }
    let columns: Vec<Vec<f64>> = Factor::ALL
        .iter()
        .map(|f| records.iter().map(|r| f.value(r)).collect())
        .collect();
    let y: Vec<f64> = records.iter().map(|r| target.value(r)).collect();
    ols_on_columns(&columns, &y, target)
}

pub(crate) fn ols_on_columns(columns: &[Vec<f64>], y: &[f64], target: Target) -> Result<RegressionResult> {
    if columns.iter().all(|c| c.iter().all(|&v| v == c[0])) {
        return Err(Error::Degenerate("every predictor is constant".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite {} value", target.name())));
    }
    let x = design(columns);
    let yv = DVector::from_column_slice(y);
    let (beta, rank) = min_norm_lstsq(&x, &yv);
    let fitted = &x * &beta;
    let pairs = [
        [Factor::Neurons, Factor::Astrocytes],
        [Factor::Neurons, Factor::Total],
        [Factor::Astrocytes, Factor::Total],
    ];
    let sub_designs = pairs
        .iter()
        .filter_map(|pair| {
            let cols: Vec<Vec<f64>> = pair.iter().map(|&f| columns[f as usize].clone()).collect();
            sub_design_fit(pair, &cols, &yv)
        })
        .collect();
    Ok(RegressionResult {
        target,
        coefficients: [beta[0], beta[1], beta[2], beta[3]],
        r_squared: r_squared(&yv, &fitted),
        vif: [0, 1, 2].map(|j| variance_inflation(columns, j)),
        rank,
        fitted: fitted.iter().copied().collect(),
        sub_designs,
    })
}
