//! Hand-written SVG figures from an analysis directory.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::error::{CliError, CliResult};

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub const SCATTER_FILE: &str = "slope_vs_total.svg";
pub const LASSO_FILE: &str = "lasso_reconstruction.svg";
pub const KDE_FILE: &str = "kde_slope_vs_ratio.svg";

/// Ratio marked on the density plot.
pub const REFERENCE_RATIO: f64 = 2.0;

#[derive(Deserialize)]
struct Point {
    total: f64,
    ratio: f64,
    train_slope: f64,
}

#[derive(Deserialize)]
struct FitRow {
    target: String,
    actual: f64,
    fitted: f64,
}

#[derive(Deserialize)]
struct KdeRow {
    ratio: f64,
    slope: f64,
    density: f64,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    if !path.is_file() {
        return Err(CliError::MissingInput {
            path: path.to_path_buf(),
            what: "analysis output",
        });
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Linear map from a data range onto the plotting area.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if hi > lo {
            (lo, hi)
        } else {
            let pad = lo.abs().max(1.0) * 0.05;
            (lo - pad, hi + pad)
        };
        Axis { lo, hi, px_lo, px_hi }
    }

    fn padded(values: impl Iterator<Item = f64>, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let pad = (hi - lo) * 0.05;
        Axis::new(lo - pad, hi + pad, px_lo, px_hi)
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4).map(|k| self.lo + (self.hi - self.lo) * k as f64 / 4.0).collect()
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn frame(title: &str, xlabel: &str, ylabel: &str, x: &Axis, y: &Axis) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#, W / 2.0);
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for t in x.ticks() {
        let px = x.map(t);
        let _ = writeln!(s, r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, y0 + 19.0, fmt_tick(t));
    }
    for t in y.ticks() {
        let py = y.map(t);
        let _ = writeln!(s, r#"<line x1="{}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 8.0, py + 4.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, (x0 + x1) / 2.0, H - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{ylabel}</text>"#,
        (y0 + y1) / 2.0
    );
    s
}

pub fn scatter_svg(points: &[(f64, f64, f64)]) -> String {
    let x = Axis::padded(points.iter().map(|p| p.0), LEFT, W - RIGHT);
    let y = Axis::padded(points.iter().map(|p| p.1), H - BOTTOM, TOP);
    let mut s = frame(
        "Learning rate vs total units (marker size: A/N)",
        "total units A+N",
        "training learning rate (slope)",
        &x,
        &y,
    );
    for &(total, slope, ratio) in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="steelblue" fill-opacity="0.6" stroke="navy"/>"#,
            x.map(total),
            y.map(slope),
            2.0 + 2.0 * ratio
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn reconstruction_svg(rows: &[(f64, f64)], r: Option<f64>) -> String {
    let all = rows.iter().flat_map(|p| [p.0, p.1]);
    let x = Axis::padded(all.clone(), LEFT, W - RIGHT);
    let y = Axis::padded(all, H - BOTTOM, TOP);
    let title = match r {
        Some(r) => format!("LASSO reconstruction of training slope (r = {r:.3})"),
        None => "LASSO reconstruction of training slope".to_string(),
    };
    let mut s = frame(&title, "actual slope", "LASSO fitted slope", &x, &y);
    let lo = x.lo.max(y.lo);
    let hi = x.hi.min(y.hi);
    let _ = writeln!(
        s,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
        x.map(lo),
        y.map(lo),
        x.map(hi),
        y.map(hi)
    );
    for &(actual, fitted) in rows {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="darkorange" fill-opacity="0.7"/>"#,
            x.map(actual),
            y.map(fitted)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn heat_color(t: f64) -> String {
    // Piecewise-linear ramp: dark purple, teal, yellow.
    let stops = [(68.0, 1.0, 84.0), (33.0, 145.0, 140.0), (253.0, 231.0, 37.0)];
    let t = t.clamp(0.0, 1.0) * 2.0;
    let k = (t.floor() as usize).min(1);
    let f = t - k as f64;
    let (a, b) = (stops[k], stops[k + 1]);
    let c = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", c(a.0, b.0), c(a.1, b.1), c(a.2, b.2))
}

/// Heat map over a regular grid given as `(ratio, slope, density)` rows,
/// with a dashed vertical line at the reference ratio.
pub fn kde_svg(rows: &[(f64, f64, f64)], mode_ratio: Option<f64>) -> String {
    let mut ratios: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mut slopes: Vec<f64> = rows.iter().map(|r| r.1).collect();
    for v in [&mut ratios, &mut slopes] {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
    }
    let step = |v: &[f64]| if v.len() > 1 { v[1] - v[0] } else { 1.0 };
    let (dx, dy) = (step(&ratios), step(&slopes));
    let x_lo = (ratios[0] - dx / 2.0).min(REFERENCE_RATIO - dx);
    let x_hi = (ratios[ratios.len() - 1] + dx / 2.0).max(REFERENCE_RATIO + dx);
    let x = Axis::new(x_lo, x_hi, LEFT, W - RIGHT);
    let y = Axis::new(slopes[0] - dy / 2.0, slopes[slopes.len() - 1] + dy / 2.0, H - BOTTOM, TOP);
    let mut s = frame(
        "Density of training slope vs astrocyte-to-neuron ratio",
        "A/N ratio",
        "training learning rate (slope)",
        &x,
        &y,
    );
    let max = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let _ = writeln!(s, r#"<g id="density" shape-rendering="crispEdges">"#);
    for &(r, sl, d) in rows {
        let (px0, px1) = (x.map(r - dx / 2.0), x.map(r + dx / 2.0));
        let (py0, py1) = (y.map(sl + dy / 2.0), y.map(sl - dy / 2.0));
        let _ = writeln!(
            s,
            r#"<rect x="{px0:.2}" y="{py0:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            px1 - px0 + 0.3,
            py1 - py0 + 0.3,
            heat_color(if max > 0.0 { d / max } else { 0.0 })
        );
    }
    s.push_str("</g>\n");
    let px = x.map(REFERENCE_RATIO);
    let _ = writeln!(
        s,
        r#"<line id="reference-ratio" data-ratio="{REFERENCE_RATIO}" x1="{px:.2}" y1="{TOP}" x2="{px:.2}" y2="{}" stroke="red" stroke-width="2" stroke-dasharray="6 4"/>"#,
        H - BOTTOM
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{}" fill="red">A/N = 2:1</text>"#,
        px + 4.0,
        TOP + 14.0
    );
    if let Some(m) = mode_ratio {
        let _ = writeln!(
            s,
            r#"<line id="mode-ratio" x1="{0:.2}" y1="{TOP}" x2="{0:.2}" y2="{1}" stroke="white" stroke-dasharray="2 3"/>"#,
            x.map(m),
            H - BOTTOM
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Deserialize)]
struct SummaryKde {
    target: String,
    mode_ratio: f64,
}

#[derive(Deserialize)]
struct SummaryLasso {
    target: String,
    reconstruction_r: Option<f64>,
}

#[derive(Deserialize)]
struct Summary {
    lasso: Vec<SummaryLasso>,
    kde: Vec<SummaryKde>,
}

/// Builds all three figures, returning `(file name, svg)` pairs. Fails
/// before anything is written if an input is missing or empty.
pub fn render_all(dir: &Path) -> CliResult<Vec<(&'static str, String)>> {
    let points: Vec<Point> = read_csv(&dir.join("points.csv"))?;
    if points.is_empty() {
        return Err(CliError::Config("analysis has no records to plot".into()));
    }
    let fits: Vec<(f64, f64)> = read_csv::<FitRow>(&dir.join("lasso_fit.csv"))?
        .into_iter()
        .filter(|r| r.target == "train_slope")
        .map(|r| (r.actual, r.fitted))
        .collect();
    let kde: Vec<(f64, f64, f64)> = read_csv::<KdeRow>(&dir.join("kde_train_slope.csv"))?
        .into_iter()
        .map(|r| (r.ratio, r.slope, r.density))
        .collect();
    if fits.is_empty() || kde.is_empty() {
        return Err(CliError::Config(
            "analysis has no LASSO fit or density grid (too few records)".into(),
        ));
    }
    let summary_path = dir.join("summary.json");
    let text = std::fs::read_to_string(&summary_path).map_err(|e| CliError::io(&summary_path, e))?;
    let summary: Summary =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", summary_path.display())))?;
    let r = summary
        .lasso
        .iter()
        .find(|l| l.target == "train_slope")
        .and_then(|l| l.reconstruction_r);
    let mode = summary.kde.iter().find(|k| k.target == "train_slope").map(|k| k.mode_ratio);
    let scatter: Vec<(f64, f64, f64)> = points.iter().map(|p| (p.total, p.train_slope, p.ratio)).collect();
    Ok(vec![
        (SCATTER_FILE, scatter_svg(&scatter)),
        (LASSO_FILE, reconstruction_svg(&fits, r)),
        (KDE_FILE, kde_svg(&kde, mode)),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_maps_endpoints() {
        let a = Axis::new(1.0, 3.0, 100.0, 300.0);
        assert_eq!(a.map(1.0), 100.0);
        assert_eq!(a.map(3.0), 300.0);
        assert_eq!(a.map(2.0), 200.0);
        let flat = Axis::new(5.0, 5.0, 0.0, 1.0);
        assert!(flat.hi > flat.lo);
    }

    #[test]
    fn heat_ramp_endpoints() {
        assert_eq!(heat_color(0.0), "#440154");
        assert_eq!(heat_color(1.0), "#fde725");
    }

    #[test]
    fn reference_line_sits_at_two() {
        let rows: Vec<(f64, f64, f64)> = (0..5)
            .flat_map(|i| (0..3).map(move |j| (1.0 + 0.5 * i as f64, -0.1 * j as f64, (i + j) as f64)))
            .collect();
        let svg = kde_svg(&rows, Some(1.5));
        let x = Axis::new(0.75, 3.25, LEFT, W - RIGHT).map(2.0);
        assert!(svg.contains(&format!(r#"id="reference-ratio" data-ratio="2" x1="{x:.2}""#)));
    }
}
