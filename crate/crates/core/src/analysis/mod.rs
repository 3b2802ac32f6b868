//! Statistics over sweep records: curve summaries, regression on the unit
//! counts, LASSO factor selection and the ratio density.

pub mod curves;
pub mod kde;
pub mod lasso;
pub mod regression;
pub mod stats;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use curves::{learning_rate, plateau_loss, plateau_loss_with, Plateau, PlateauConfig};
pub use kde::{binned_kde, kde_slope_vs_ratio, BinnedKde, KdeGrid, KdeResult};
pub use lasso::{lasso_regression, LassoConfig, LassoResult};
pub use regression::{ols_regression, Factor, RegressionResult};
pub use stats::pearson_correlation;

use crate::error::{Error, Result};
use crate::readout::csv_err;
use crate::record::{RunRecord, Target};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub lasso: LassoConfig,
    /// Explicit LASSO penalties; an automatic grid is used when absent.
    pub lambda_grid: Option<Vec<f64>>,
    /// Points per axis of the density grid.
    pub kde_points: usize,
    /// Padding of the density grid beyond the data, in bandwidths.
    pub kde_padding: f64,
    pub kde_bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            lasso: LassoConfig::default(),
            lambda_grid: None,
            kde_points: 101,
            kde_padding: 3.0,
            kde_bins: 10,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kde_points < 2 || self.kde_bins == 0 {
            return Err(Error::InvalidConfig("density grid needs >= 2 points and >= 1 bin".into()));
        }
        if !(self.kde_padding >= 0.0) {
            return Err(Error::InvalidConfig("kde_padding must be non-negative".into()));
        }
        if self.lasso.folds < 2 {
            return Err(Error::InvalidConfig("LASSO needs at least 2 folds".into()));
        }
        if matches!(&self.lambda_grid, Some(g) if g.is_empty()) {
            return Err(Error::InvalidConfig("LASSO penalty grid is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisReport {
    pub total_records: usize,
    pub usable_records: usize,
    pub records: Vec<RunRecord>,
    pub ols: Vec<RegressionResult>,
    /// Present when there are enough records.
    pub lasso: Vec<LassoResult>,
    pub kde: Vec<KdeResult>,
    pub binned: Vec<BinnedKde>,
    pub all_slopes_negative: bool,
}

impl AnalysisReport {
    pub fn lasso_for(&self, target: Target) -> Option<&LassoResult> {
        self.lasso.iter().find(|l| l.target == target)
    }

    pub fn kde_for(&self, target: Target) -> Option<&KdeResult> {
        self.kde.iter().find(|k| k.target == target)
    }
}

const SLOPE_TARGETS: [Target; 2] = [Target::TrainSlope, Target::ValSlope];

/// Runs every statistic on the non-diverged records with finite slopes.
/// LASSO and the densities are skipped below their minimum record counts.
pub fn analyze(records: &[RunRecord], cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    cfg.validate()?;
    let usable: Vec<RunRecord> = records.iter().filter(|r| r.is_usable()).cloned().collect();
    if usable.len() < regression::MIN_OLS_RECORDS {
        return Err(Error::InsufficientData {
            what: "usable records",
            needed: regression::MIN_OLS_RECORDS,
            got: usable.len(),
        });
    }
    let ols = Target::ALL
        .iter()
        .filter(|t| usable.iter().all(|r| t.value(r).is_finite()))
        .map(|&t| ols_regression(&usable, t))
        .collect::<Result<Vec<_>>>()?;
    let mut lasso = Vec::new();
    let mut kde = Vec::new();
    let mut binned = Vec::new();
    if usable.len() >= lasso::MIN_LASSO_RECORDS {
        for t in Target::ALL {
            if usable.iter().all(|r| t.value(r).is_finite()) {
                lasso.push(lasso_regression(&usable, t, cfg.lambda_grid.as_deref(), &cfg.lasso)?);
            }
        }
    }
    if usable.len() >= kde::MIN_KDE_RECORDS {
        for t in SLOPE_TARGETS {
            let points = kde::ratio_points(&usable, t);
            let grid = KdeGrid::around(&points, cfg.kde_padding, cfg.kde_points);
            kde.push(kde_slope_vs_ratio(&usable, t, Some(&grid))?);
            binned.push(binned_kde(&usable, t, cfg.kde_bins, cfg.kde_points)?);
        }
    }
    Ok(AnalysisReport {
        total_records: records.len(),
        usable_records: usable.len(),
        all_slopes_negative: usable.iter().all(|r| r.train_slope < 0.0),
        records: usable,
        ols,
        lasso,
        kde,
        binned,
    })
}

#[derive(Serialize)]
struct LassoSummary {
    target: Target,
    lambda: f64,
    selected: Vec<&'static str>,
    reconstruction_r: Option<f64>,
}

#[derive(Serialize)]
struct KdeSummary {
    target: Target,
    mode_ratio: f64,
    mode_slope: f64,
    slope_cut: f64,
    bandwidths: (f64, f64),
    bandwidth_floored: (bool, bool),
}

#[derive(Serialize)]
struct Summary {
    version: &'static str,
    total_records: usize,
    usable_records: usize,
    all_train_slopes_negative: bool,
    ols_r_squared: Vec<(Target, f64)>,
    lasso: Vec<LassoSummary>,
    kde: Vec<KdeSummary>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the coefficient tables, density grids, plotted points and a JSON
/// summary into `dir`.
pub fn write_report(report: &AnalysisReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rows(
        &dir.join("ols.csv"),
        &["target", "intercept", "N", "A", "A+N", "r_squared", "rank", "vif_N", "vif_A", "vif_A+N"],
        report.ols.iter().map(|o| {
            let mut row = vec![o.target.name().to_string()];
            row.extend(o.coefficients.iter().map(f64::to_string));
            row.push(o.r_squared.to_string());
            row.push(o.rank.to_string());
            row.extend(o.vif.iter().map(|v| opt(*v)));
            row
        }),
    )?;
    write_rows(
        &dir.join("ols_subdesigns.csv"),
        &["target", "factors", "term", "coefficient", "std_error", "t_stat", "r_squared"],
        report.ols.iter().flat_map(|o| {
            o.sub_designs.iter().flat_map(move |s| {
                let names: Vec<&str> = s.factors.iter().map(|f| f.name()).collect();
                let label = names.join(" ");
                std::iter::once("intercept").chain(names.clone()).enumerate().map(move |(k, term)| {
                    vec![
                        o.target.name().to_string(),
                        label.clone(),
                        term.to_string(),
                        s.coefficients[k].to_string(),
                        s.std_errors[k].to_string(),
                        s.t_stats[k].to_string(),
                        s.r_squared.to_string(),
                    ]
                })
            })
        }),
    )?;
    write_rows(
        &dir.join("lasso.csv"),
        &["target", "factor", "standardized", "raw", "selected", "lambda", "intercept", "reconstruction_r"],
        report.lasso.iter().flat_map(|l| {
            l.factors.iter().enumerate().map(move |(j, f)| {
                vec![
                    l.target.name().to_string(),
                    f.name().to_string(),
                    l.coefficients[j].to_string(),
                    l.raw_coefficients[j].to_string(),
                    (l.coefficients[j] != 0.0).to_string(),
                    l.lambda.to_string(),
                    l.intercept.to_string(),
                    opt(l.reconstruction_r),
                ]
            })
        }),
    )?;
    write_rows(
        &dir.join("lasso_cv.csv"),
        &["target", "lambda", "cv_mse"],
        report.lasso.iter().flat_map(|l| {
            l.lambda_grid
                .iter()
                .zip(&l.cv_mse)
                .map(move |(a, m)| vec![l.target.name().to_string(), a.to_string(), m.to_string()])
        }),
    )?;
    write_rows(
        &dir.join("lasso_fit.csv"),
        &["target", "actual", "fitted"],
        report.lasso.iter().flat_map(|l| {
            l.actual
                .iter()
                .zip(&l.fitted)
                .map(move |(a, f)| vec![l.target.name().to_string(), a.to_string(), f.to_string()])
        }),
    )?;
    for k in &report.kde {
        write_rows(
            &dir.join(format!("kde_{}.csv", k.target.name())),
            &["ratio", "slope", "density"],
            k.density
                .indexed_iter()
                .map(|((i, j), d)| vec![k.grid.ratios[i].to_string(), k.grid.slopes[j].to_string(), d.to_string()]),
        )?;
    }
    write_rows(
        &dir.join("kde_binned.csv"),
        &["target", "bin_lo", "bin_hi", "count", "mean", "slope", "density"],
        report.binned.iter().flat_map(|b| {
            (0..b.counts.len()).flat_map(move |i| {
                b.slopes.iter().enumerate().map(move |(j, s)| {
                    vec![
                        b.target.name().to_string(),
                        b.bin_edges[i].to_string(),
                        b.bin_edges[i + 1].to_string(),
                        b.counts[i].to_string(),
                        b.mean_value[i].to_string(),
                        s.to_string(),
                        b.density[[i, j]].to_string(),
                    ]
                })
            })
        }),
    )?;
    write_rows(
        &dir.join("points.csv"),
        &["n_neurons", "n_astrocytes", "total", "ratio", "train_slope", "val_slope", "train_plateau", "val_plateau"],
        report.records.iter().map(|r| {
            vec![
                r.n_neurons.to_string(),
                r.n_astrocytes.to_string(),
                r.total_units().to_string(),
                r.ratio.to_string(),
                r.train_slope.to_string(),
                r.val_slope.to_string(),
                r.train_plateau.to_string(),
                r.val_plateau.to_string(),
            ]
        }),
    )?;
    let summary = Summary {
        version: env!("CARGO_PKG_VERSION"),
        total_records: report.total_records,
        usable_records: report.usable_records,
        all_train_slopes_negative: report.all_slopes_negative,
        ols_r_squared: report.ols.iter().map(|o| (o.target, o.r_squared)).collect(),
        lasso: report
            .lasso
            .iter()
            .map(|l| LassoSummary {
                target: l.target,
                lambda: l.lambda,
                selected: l.selected.iter().map(|f| f.name()).collect(),
                reconstruction_r: l.reconstruction_r,
            })
            .collect(),
        kde: report
            .kde
            .iter()
            .map(|k| KdeSummary {
                target: k.target,
                mode_ratio: k.mode_ratio,
                mode_slope: k.mode_slope,
                slope_cut: k.slope_cut,
                bandwidths: k.bandwidths,
                bandwidth_floored: k.bandwidth_floored,
            })
            .collect(),
    };
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::format(&path, e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(count: usize) -> Vec<RunRecord> {
        (0..count)
            .map(|k| {
                let n = [10usize, 50][k % 2];
                let idx = (k / 2 % 10) as u32 + 1;
                let a = ((0.75 + 0.25 * idx as f64) * n as f64).round() as usize;
                let wobble = ((k * 7919) % 17) as f64 / 17.0 - 0.5;
                let slope = -0.001 * (a + n) as f64 - 0.01 + 0.002 * wobble;
                RunRecord {
                    n_neurons: n,
                    n_astrocytes: a,
                    ratio: a as f64 / n as f64,
                    proportion_index: idx,
                    replicate: k / 20,
                    seed: k as u64,
                    train_slope: slope,
                    val_slope: slope * 0.9,
                    train_plateau: 0.1 + wobble * 0.01,
                    val_plateau: 0.2,
                    train_plateau_start: 30,
                    val_plateau_start: 30,
                    plateau_fallback: false,
                    diverged: k == 3,
                    batch_loss_path: String::new(),
                    epoch_loss_path: String::new(),
                }
            })
            .collect()
    }

    #[test]
    fn report_covers_every_output() {
        let recs = synthetic(40);
        let report = analyze(&recs, &AnalysisConfig::default()).unwrap();
        assert_eq!(report.usable_records, 39);
        assert_eq!(report.ols.len(), 4);
        assert_eq!(report.lasso.len(), 4);
        assert_eq!(report.kde.len(), 2);
        assert!(report.all_slopes_negative);
        let r = report.lasso_for(Target::TrainSlope).unwrap().reconstruction_r.unwrap();
        assert!(r > 0.9);
        let dir = tempfile::tempdir().unwrap();
        write_report(&report, dir.path()).unwrap();
        for f in [
            "ols.csv",
            "ols_subdesigns.csv",
            "lasso.csv",
            "lasso_cv.csv",
            "lasso_fit.csv",
            "kde_train_slope.csv",
            "kde_val_slope.csv",
            "kde_binned.csv",
            "points.csv",
            "summary.json",
        ] {
            assert!(dir.path().join(f).is_file(), "{f}");
        }
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert!(summary["kde"][0]["mode_ratio"].is_f64());
    }

    #[test]
    fn few_records_skip_lasso_and_density() {
        let report = analyze(&synthetic(8), &AnalysisConfig::default()).unwrap();
        assert!(report.lasso.is_empty());
        assert!(report.kde.is_empty());
        assert_eq!(report.ols.len(), 4);
    }

    #[test]
    fn too_few_usable_records_is_an_error() {
        assert!(matches!(
            analyze(&synthetic(4), &AnalysisConfig::default()),
            Err(Error::InsufficientData { .. })
        ));
    }
}
