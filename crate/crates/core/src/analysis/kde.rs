//! Gaussian kernel density of a slope target against the astrocyte ratio.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::stats::mean;
use crate::error::{Error, Result};
use crate::record::{RunRecord, Target};

pub const MIN_KDE_RECORDS: usize = 10;
pub const BANDWIDTH_FLOOR: f64 = 1e-6;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn gaussian(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

/// Scott's rule `sigma * m^(-1/6)` with the sample standard deviation.
/// Returns the bandwidth and whether the floor was applied.
pub fn scott_bandwidth(values: &[f64]) -> (f64, bool) {
    let m = values.len();
    if m < 2 {
        return (BANDWIDTH_FLOOR, true);
    }
    let mu = mean(values);
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (m - 1) as f64;
    let h = var.sqrt() * (m as f64).powf(-1.0 / 6.0);
    if h < BANDWIDTH_FLOOR || !h.is_finite() {
        (BANDWIDTH_FLOOR, true)
    } else {
        (h, false)
    }
}

/// Evaluation points along the ratio and slope axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeGrid {
    pub ratios: Vec<f64>,
    pub slopes: Vec<f64>,
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect(),
    }
}

impl KdeGrid {
    pub fn new(ratios: Vec<f64>, slopes: Vec<f64>) -> Self {
        KdeGrid { ratios, slopes }
    }

    /// Regular `n x n` grid spanning the data padded by `pad` bandwidths.
    pub fn around(points: &[(f64, f64)], pad: f64, n: usize) -> Self {
        let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        let (hx, _) = scott_bandwidth(&xs);
        let (hy, _) = scott_bandwidth(&ys);
        let span = |v: &[f64], h: f64| {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo - pad * h, hi + pad * h)
        };
        let (x0, x1) = span(&xs, hx);
        let (y0, y1) = span(&ys, hy);
        KdeGrid {
            ratios: linspace(x0, x1, n),
            slopes: linspace(y0, y1, n),
        }
    }
}

/// Product-kernel density at every grid point, indexed `[ratio, slope]`.
pub fn kde_2d(points: &[(f64, f64)], bandwidths: (f64, f64), grid: &KdeGrid) -> Array2<f64> {
    let (hx, hy) = bandwidths;
    let norm = 1.0 / (points.len() as f64 * hx * hy);
    Array2::from_shape_fn((grid.ratios.len(), grid.slopes.len()), |(i, j)| {
        let (x, y) = (grid.ratios[i], grid.slopes[j]);
        points
            .iter()
            .map(|&(px, py)| gaussian((x - px) / hx) * gaussian((y - py) / hy))
            .sum::<f64>()
            * norm
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdeResult {
    pub target: Target,
    pub grid: KdeGrid,
    /// `density[[i, j]]` is at `(grid.ratios[i], grid.slopes[j])`.
    pub density: Array2<f64>,
    pub bandwidths: (f64, f64),
    /// Whether the floor replaced a degenerate bandwidth, per axis.
    pub bandwidth_floored: (bool, bool),
    /// Midpoint of the observed slope range; the mode search keeps slopes at
    /// or below it.
    pub slope_cut: f64,
    pub mode_ratio: f64,
    pub mode_slope: f64,
    pub mode_density: f64,
}

/// Grid cell of highest density among slopes `<= cut`, as (ratio, slope, density).
/// Ties resolve to the first cell in row-major order.
pub fn mode_below(density: &Array2<f64>, grid: &KdeGrid, cut: f64) -> Option<(f64, f64, f64)> {
    let mut best: Option<(f64, f64, f64)> = None;
    for (i, &x) in grid.ratios.iter().enumerate() {
        for (j, &y) in grid.slopes.iter().enumerate() {
            let d = density[[i, j]];
            if y <= cut && best.is_none_or(|b| d > b.2) {
                best = Some((x, y, d));
            }
        }
    }
    best
}

/// Points `(ratio, target)` for the usable records.
pub fn ratio_points(records: &[RunRecord], target: Target) -> Vec<(f64, f64)> {
    records.iter().map(|r| (r.ratio, target.value(r))).collect()
}

pub fn kde_slope_vs_ratio(records: &[RunRecord], target: Target, grid: Option<&KdeGrid>) -> Result<KdeResult> {
    let points = ratio_points(records, target);
    if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::Degenerate(format!("non-finite ratio or {}", target.name())));
    }
    if points.len() < MIN_KDE_RECORDS {
        return Err(Error::InsufficientData {
            what: "records for the density estimate",
            needed: MIN_KDE_RECORDS,
            got: points.len(),
        });
    }
    kde_on_points(&points, target, grid)
}

pub fn kde_on_points(points: &[(f64, f64)], target: Target, grid: Option<&KdeGrid>) -> Result<KdeResult> {
    if points.is_empty() {
        return Err(Error::InsufficientData {
            what: "points for the density estimate",
            needed: 1,
            got: 0,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (hx, fx) = scott_bandwidth(&xs);
    let (hy, fy) = scott_bandwidth(&ys);
    let grid = match grid {
        Some(g) => g.clone(),
        None => KdeGrid::around(points, 3.0, 101),
    };
    if grid.ratios.is_empty() || grid.slopes.is_empty() {
        return Err(Error::InvalidConfig("density grid has an empty axis".into()));
    }
    let density = kde_2d(points, (hx, hy), &grid);
    let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let slope_cut = 0.5 * (lo + hi);
    let (mode_ratio, mode_slope, mode_density) = mode_below(&density, &grid, slope_cut)
        .ok_or_else(|| Error::InvalidConfig("density grid has no slope at or below the data midpoint".into()))?;
    Ok(KdeResult {
        target,
        grid,
        density,
        bandwidths: (hx, hy),
        bandwidth_floored: (fx, fy),
        slope_cut,
        mode_ratio,
        mode_slope,
        mode_density,
    })
}

/// One-dimensional alternative: the target's density within each ratio bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedKde {
    pub target: Target,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// NaN for an empty bin.
    pub mean_value: Vec<f64>,
    pub slopes: Vec<f64>,
    /// `density[[bin, j]]` at `slopes[j]`; zero rows for empty bins.
    pub density: Array2<f64>,
    /// Center of the bin with the most negative mean target.
    pub min_mean_ratio: f64,
}

pub fn binned_kde(records: &[RunRecord], target: Target, n_bins: usize, n_slopes: usize) -> Result<BinnedKde> {
    let points = ratio_points(records, target);
    if points.len() < MIN_KDE_RECORDS {
        return Err(Error::InsufficientData {
            what: "records for the binned density",
            needed: MIN_KDE_RECORDS,
            got: points.len(),
        });
    }
    if n_bins == 0 {
        return Err(Error::InvalidConfig("binned density needs at least one bin".into()));
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let bin_edges = linspace(lo, hi, n_bins + 1);
    let bin_of = |x: f64| {
        if hi == lo {
            0
        } else {
            (((x - lo) / (hi - lo) * n_bins as f64) as usize).min(n_bins - 1)
        }
    };
    let mut members: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for &(x, y) in &points {
        members[bin_of(x)].push(y);
    }
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (hy, _) = scott_bandwidth(&ys);
    let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let slopes = linspace(ymin - 3.0 * hy, ymax + 3.0 * hy, n_slopes.max(2));
    let mut density = Array2::zeros((n_bins, slopes.len()));
    let mut mean_value = Vec::with_capacity(n_bins);
    for (b, vals) in members.iter().enumerate() {
        if vals.is_empty() {
            mean_value.push(f64::NAN);
            continue;
        }
        mean_value.push(mean(vals));
        let (h, _) = scott_bandwidth(vals);
        let h = if h > BANDWIDTH_FLOOR { h } else { hy };
        for (j, &s) in slopes.iter().enumerate() {
            density[[b, j]] = vals.iter().map(|v| gaussian((s - v) / h)).sum::<f64>() / (vals.len() as f64 * h);
        }
    }
    let best = (0..n_bins)
        .filter(|&b| !mean_value[b].is_nan())
        .min_by(|&a, &b| mean_value[a].partial_cmp(&mean_value[b]).unwrap())
        .unwrap();
    Ok(BinnedKde {
        target,
        min_mean_ratio: 0.5 * (bin_edges[best] + bin_edges[best + 1]),
        counts: members.iter().map(Vec::len).collect(),
        bin_edges,
        mean_value,
        slopes,
        density,
    })
}
