//! Loss-curve summaries: early learning speed and the stabilized loss level.

use serde::{Deserialize, Serialize};

use super::stats::{mean, ols_slope};
use crate::error::{Error, Result};

/// Number of leading epochs used for the learning-rate slope.
pub const SLOPE_EPOCHS: usize = 10;
/// Minimum curve length accepted by [`plateau_loss`].
pub const MIN_PLATEAU_EPOCHS: usize = 20;

/// Least-squares slope of loss against epoch index over the first ten
/// epochs. Negative values mean the loss is falling.
pub fn learning_rate(epoch_losses: &[f64]) -> Result<f64> {
    if epoch_losses.len() < SLOPE_EPOCHS {
        return Err(Error::InsufficientData {
            what: "epochs for the learning-rate slope",
            needed: SLOPE_EPOCHS,
            got: epoch_losses.len(),
        });
    }
    let xs: Vec<f64> = (0..SLOPE_EPOCHS).map(|e| e as f64).collect();
    Ok(ols_slope(&xs, &epoch_losses[..SLOPE_EPOCHS]))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    /// Trailing window over which first differences are averaged.
    pub smoothing_window: usize,
    /// Relative slope below which the curve counts as stabilized.
    pub threshold: f64,
    /// Tail fraction averaged when the criterion never fires.
    pub fallback_fraction: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            smoothing_window: 5,
            threshold: 0.01,
            fallback_fraction: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    pub mean: f64,
    /// Zero-based epoch at which the averaged segment starts.
    pub start_epoch: usize,
    /// True when the slope criterion never fired and the tail was used.
    pub fallback: bool,
}

/// Mean loss from the first epoch whose smoothed slope magnitude drops below
/// `threshold` times the first smoothed slope, to the end of the curve.
///
/// The smoothed slope at epoch `e` is the mean of the first differences
/// `L[k] - L[k-1]` for `k` in `e-w+1..=e`, so the first eligible epoch is `w`.
pub fn plateau_loss_with(epoch_losses: &[f64], cfg: &PlateauConfig) -> Result<Plateau> {
    let n = epoch_losses.len();
    let w = cfg.smoothing_window.max(1);
    if n < MIN_PLATEAU_EPOCHS.max(w + 1) {
        return Err(Error::InsufficientData {
            what: "epochs for the plateau loss",
            needed: MIN_PLATEAU_EPOCHS.max(w + 1),
            got: n,
        });
    }
    let diffs: Vec<f64> = epoch_losses.windows(2).map(|p| p[1] - p[0]).collect();
    // smoothed[e] covers diffs ending at epoch e; diffs[k - 1] is the step into epoch k.
    let smoothed = |e: usize| mean(&diffs[e - w..e]);
    let initial = smoothed(w).abs();
    let start = (w..n).find(|&e| {
        let s = smoothed(e).abs();
        s < cfg.threshold * initial || (s == 0.0 && initial == 0.0)
    });
    let (start_epoch, fallback) = match start {
        Some(e) => (e, false),
        None => {
            let tail = ((n as f64) * cfg.fallback_fraction).ceil().max(1.0) as usize;
            (n - tail.min(n), true)
        }
    };
    Ok(Plateau {
        mean: mean(&epoch_losses[start_epoch..]),
        start_epoch,
        fallback,
    })
}

pub fn plateau_loss(epoch_losses: &[f64]) -> Result<Plateau> {
    plateau_loss_with(epoch_losses, &PlateauConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_linear_slope() {
        let losses: Vec<f64> = (0..15).map(|e| 5.0 - 0.1 * e as f64).collect();
        assert!((learning_rate(&losses).unwrap() + 0.1).abs() < 1e-12);
    }

    #[test]
    fn flat_curve_has_zero_slope() {
        assert_eq!(learning_rate(&[2.5; 12]).unwrap(), 0.0);
    }

    #[test]
    fn too_short_curves_are_rejected() {
        assert!(learning_rate(&[1.0; 9]).is_err());
        assert!(plateau_loss(&[1.0; 19]).is_err());
    }

    // Closed-form simple regression: slope = (n*Sxy - Sx*Sy) / (n*Sxx - Sx^2).
    #[test]
    fn slope_matches_normal_equations() {
        let noisy: Vec<f64> = (0..10)
            .map(|e| 3.0 - 0.2 * e as f64 + 0.05 * ((e * 7919) % 13) as f64 / 13.0)
            .chain([100.0, -100.0])
            .collect();
        let n = 10.0;
        let (mut sx, mut sy, mut sxy, mut sxx) = (0.0, 0.0, 0.0, 0.0);
        for (e, y) in noisy[..10].iter().enumerate() {
            let x = e as f64;
            sx += x;
            sy += y;
            sxy += x * y;
            sxx += x * x;
        }
        let oracle = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((learning_rate(&noisy).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn constant_curve_is_already_stable() {
        let p = plateau_loss(&[0.4; 30]).unwrap();
        assert_eq!(p.start_epoch, 5);
        assert!((p.mean - 0.4).abs() < 1e-15);
        assert!(!p.fallback);
    }

    #[test]
    fn exponential_decay_plateau() {
        let n = 60;
        let losses: Vec<f64> = (0..n).map(|e| 1.0 + 10.0 * 0.5f64.powi(e)).collect();
        // Smoothed slope at epoch e is proportional to 0.5^e, so its ratio to
        // the one at epoch 5 is 0.5^(e-5); the first e with 0.5^(e-5) < 0.01.
        let start = (5..n).find(|&e| 0.5f64.powi(e - 5) < 0.01).unwrap() as usize;
        assert_eq!(start, 12);
        let geometric = (0.5f64.powi(start as i32) - 0.5f64.powi(n)) / 0.5;
        let oracle_mean = 1.0 + 10.0 * geometric / (n as usize - start) as f64;
        let p = plateau_loss(&losses).unwrap();
        assert_eq!(p.start_epoch, start);
        assert!(!p.fallback);
        assert!((p.mean - oracle_mean).abs() < 1e-12);
        assert!((p.mean - 1.0).abs() < 1e-2);
    }

    #[test]
    fn linear_decrease_never_stabilizes() {
        let losses: Vec<f64> = (0..50).map(|e| 10.0 - 0.1 * e as f64).collect();
        let p = plateau_loss(&losses).unwrap();
        assert!(p.fallback);
        assert_eq!(p.start_epoch, 45);
        let tail_mean = losses[45..].iter().sum::<f64>() / 5.0;
        assert!((p.mean - tail_mean).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn slope_shift_and_scale(
            losses in proptest::collection::vec(0.0..10.0f64, 10..30),
            shift in -5.0..5.0f64,
            scale in 0.1..10.0f64,
        ) {
            let base = learning_rate(&losses).unwrap();
            let shifted: Vec<f64> = losses.iter().map(|l| l + shift).collect();
            let scaled: Vec<f64> = losses.iter().map(|l| l * scale).collect();
            prop_assert!((learning_rate(&shifted).unwrap() - base).abs() < 1e-9);
            prop_assert!((learning_rate(&scaled).unwrap() - scale * base).abs() < 1e-9 * (1.0 + scale));
        }

        #[test]
        fn plateau_of_non_increasing_curve_is_bracketed(
            drops in proptest::collection::vec(0.0..1.0f64, 20..80),
        ) {
            let mut level = 100.0;
            let losses: Vec<f64> = drops.iter().map(|d| { level -= d; level }).collect();
            let p = plateau_loss(&losses).unwrap();
            let seg = &losses[p.start_epoch..];
            let lo = seg.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = seg.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(p.mean >= lo - 1e-9 && p.mean <= hi + 1e-9);
        }
    }
}
