//! Randomized Lorenz trajectories and the windowed prediction dataset built
//! from them.
//!
//! Trajectories are integrated with forward Euler. Each trajectory is cut into
//! non-overlapping 100-step windows; the first 50 samples of a window are the
//! network input and the remaining 50 are the prediction target.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::store::{self, ArrayData};

/// Samples per window.
pub const WINDOW_LEN: usize = 100;
/// Samples in each half (input or target) of a window.
pub const HALF_LEN: usize = WINDOW_LEN / 2;
/// Flattened length of one half: 50 steps of (x, y, z).
pub const HALF_FLAT: usize = HALF_LEN * 3;

pub const BASE_SIGMA: f64 = 10.0;
pub const BASE_RHO: f64 = 28.0;
pub const BASE_DELTA: f64 = 2.667;
pub const SIGMA_RHO_SPREAD: f64 = 5.0;
pub const DELTA_SPREAD: f64 = 0.5;

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_TRANSIENT: usize = 1000;
const INITIAL_STATE_BOUND: f64 = 10.0;

pub type State = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub delta: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub initial: State,
    pub transient_steps: usize,
}

impl LorenzParams {
    /// The textbook parameter set (10, 28, 8/3) from a fixed off-origin start.
    pub fn classic(n_steps: usize) -> Self {
        LorenzParams {
            sigma: 10.0,
            rho: 28.0,
            delta: 8.0 / 3.0,
            dt: DEFAULT_DT,
            n_steps,
            initial: [1.0, 1.0, 1.0],
            transient_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if ![self.sigma, self.rho, self.delta].iter().all(|v| v.is_finite())
            || !self.initial.iter().all(|v| v.is_finite())
        {
            return Err(Error::InvalidConfig("Lorenz parameters must be finite".into()));
        }
        if self.n_steps == 0 {
            return Err(Error::InvalidConfig("n_steps must be positive".into()));
        }
        Ok(())
    }
}

fn params_from_offsets(offsets: [f64; 3], initial: State) -> LorenzParams {
    LorenzParams {
        sigma: BASE_SIGMA + offsets[0],
        rho: BASE_RHO + offsets[1],
        delta: BASE_DELTA + offsets[2],
        dt: DEFAULT_DT,
        n_steps: 50 * WINDOW_LEN,
        initial,
        transient_steps: DEFAULT_TRANSIENT,
    }
}

/// Draws sigma and rho offsets from U(-5, 5) and a delta offset from
/// U(-0.5, 0.5) around (10, 28, 2.667), with an initial state drawn from
/// U(-10, 10)^3. Deterministic in `seed`.
pub fn randomize_params(seed: u64) -> LorenzParams {
    let mut rng = seed::rng(seed);
    let offsets = [
        rng.random_range(-SIGMA_RHO_SPREAD..=SIGMA_RHO_SPREAD),
        rng.random_range(-SIGMA_RHO_SPREAD..=SIGMA_RHO_SPREAD),
        rng.random_range(-DELTA_SPREAD..=DELTA_SPREAD),
    ];
    let initial = [
        rng.random_range(-INITIAL_STATE_BOUND..=INITIAL_STATE_BOUND),
        rng.random_range(-INITIAL_STATE_BOUND..=INITIAL_STATE_BOUND),
        rng.random_range(-INITIAL_STATE_BOUND..=INITIAL_STATE_BOUND),
    ];
    params_from_offsets(offsets, initial)
}

#[inline]
fn derivative(s: &State, p: &LorenzParams) -> State {
    let [x, y, z] = *s;
    [p.sigma * (y - x), x * (p.rho - z) - y, x * y - p.delta * z]
}

/// One forward-Euler step of the Lorenz system.
pub fn euler_step(state: &State, params: &LorenzParams) -> Result<State> {
    let d = derivative(state, params);
    let next = [
        state[0] + params.dt * d[0],
        state[1] + params.dt * d[1],
        state[2] + params.dt * d[2],
    ];
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::IntegrationFailure { step: 0 })
    }
}

/// Integrates from `params.initial`, discards `transient_steps` states and
/// returns the next `n_steps`. The initial state itself is never emitted.
pub fn generate_trajectory(params: &LorenzParams) -> Result<Vec<State>> {
    params.validate()?;
    let mut state = params.initial;
    let mut out = Vec::with_capacity(params.n_steps);
    for step in 0..params.transient_steps + params.n_steps {
        state = euler_step(&state, params).map_err(|_| Error::IntegrationFailure { step })?;
        if step >= params.transient_steps {
            out.push(state);
        }
    }
    Ok(out)
}

/// One 50-step input / 50-step target pair.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowPair {
    pub input: Vec<State>,
    pub target: Vec<State>,
}

/// Splits a trajectory into `floor(len / 100)` consecutive windows, dropping
/// any trailing remainder.
pub fn windows_from_trajectory(trajectory: &[State]) -> Result<Vec<WindowPair>> {
    if trajectory.len() < WINDOW_LEN {
        return Err(Error::InsufficientData {
            what: "trajectory samples for one window",
            needed: WINDOW_LEN,
            got: trajectory.len(),
        });
    }
    Ok(trajectory
        .chunks_exact(WINDOW_LEN)
        .map(|w| WindowPair {
            input: w[..HALF_LEN].to_vec(),
            target: w[HALF_LEN..].to_vec(),
        })
        .collect())
}

/// Per-dimension z-score statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Normalization {
    /// Mean and population standard deviation over every input sample of the
    /// given windows.
    pub fn fit(windows: &[WindowPair]) -> Result<Self> {
        let count = windows.len() * HALF_LEN;
        if count == 0 {
            return Err(Error::InsufficientData {
                what: "training windows for normalization",
                needed: 1,
                got: 0,
            });
        }
        let mut mean = [0.0; 3];
        for s in windows.iter().flat_map(|w| w.input.iter()) {
            for d in 0..3 {
                mean[d] += s[d];
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = [0.0; 3];
        for s in windows.iter().flat_map(|w| w.input.iter()) {
            for d in 0..3 {
                var[d] += (s[d] - mean[d]).powi(2);
            }
        }
        let std = var.map(|v| (v / count as f64).sqrt());
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Degenerate(format!(
                "training inputs have zero variance in some dimension (std = {std:?})"
            )));
        }
        Ok(Normalization { mean, std })
    }

    pub fn apply(&self, s: &State) -> State {
        [0, 1, 2].map(|d| (s[d] - self.mean[d]) / self.std[d])
    }

    pub fn invert(&self, s: &State) -> State {
        [0, 1, 2].map(|d| s[d] * self.std[d] + self.mean[d])
    }

    /// Normalizes a 50-step half and flattens it row-major to 150 values.
    pub fn flatten(&self, half: &[State]) -> Vec<f64> {
        half.iter().flat_map(|s| self.apply(s)).collect()
    }

    /// Inverse of [`Normalization::flatten`].
    pub fn unflatten(&self, flat: &[f64]) -> Vec<State> {
        flat.chunks_exact(3)
            .map(|c| self.invert(&[c[0], c[1], c[2]]))
            .collect()
    }
}

/// Where a dataset came from; persisted alongside the windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryInfo {
    pub seed: u64,
    pub params: LorenzParams,
    pub windows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub train: Vec<WindowPair>,
    pub val: Vec<WindowPair>,
    pub test: Vec<WindowPair>,
    pub normalization: Normalization,
    pub split_fractions: [f64; 3],
    pub shuffle_seed: u64,
    pub trajectories: Vec<TrajectoryInfo>,
}

/// Split sizes by the largest-remainder rule so they always sum to `n`.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let exact = fractions.map(|f| f * n as f64);
    let mut sizes = exact.map(|e| e.floor() as usize);
    let mut remaining = n - sizes.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        sizes[i] += 1;
        remaining -= 1;
    }
    Ok(sizes)
}

impl Dataset {
    /// Shuffles windows with `shuffle_seed`, splits them by `fractions`, and
    /// fits normalization on the training inputs.
    pub fn from_windows(
        mut windows: Vec<WindowPair>,
        fractions: [f64; 3],
        shuffle_seed: u64,
        trajectories: Vec<TrajectoryInfo>,
    ) -> Result<Self> {
        let [n_train, n_val, _] = split_sizes(windows.len(), fractions)?;
        windows.shuffle(&mut seed::rng(shuffle_seed));
        let test = windows.split_off(n_train + n_val);
        let val = windows.split_off(n_train);
        let train = windows;
        let normalization = Normalization::fit(&train)?;
        Ok(Dataset {
            train,
            val,
            test,
            normalization,
            split_fractions: fractions,
            shuffle_seed,
            trajectories,
        })
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Windows a single trajectory and splits it.
pub fn make_windows(trajectory: &[State], fractions: [f64; 3], shuffle_seed: u64) -> Result<Dataset> {
    let windows = windows_from_trajectory(trajectory)?;
    Dataset::from_windows(windows, fractions, shuffle_seed, Vec::new())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub trajectories: usize,
    pub windows_per_trajectory: usize,
    pub dt: f64,
    pub transient_steps: usize,
    pub split_fractions: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            trajectories: 20,
            windows_per_trajectory: 500,
            dt: DEFAULT_DT,
            transient_steps: DEFAULT_TRANSIENT,
            split_fractions: [0.8, 0.1, 0.1],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trajectories == 0 || self.windows_per_trajectory == 0 {
            return Err(Error::InvalidConfig(
                "dataset needs at least one trajectory and one window per trajectory".into(),
            ));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        split_sizes(0, self.split_fractions).map(|_| ())
    }
}

/// Generates `cfg.trajectories` independently randomized trajectories and
/// pools their windows into one dataset.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut windows = Vec::with_capacity(cfg.trajectories * cfg.windows_per_trajectory);
    let mut infos = Vec::with_capacity(cfg.trajectories);
    for k in 0..cfg.trajectories {
        let traj_seed = seed::derive(seed, "lorenz", &[k as u64]);
        let params = LorenzParams {
            dt: cfg.dt,
            transient_steps: cfg.transient_steps,
            n_steps: cfg.windows_per_trajectory * WINDOW_LEN,
            ..randomize_params(traj_seed)
        };
        let trajectory = generate_trajectory(&params)?;
        windows.extend(windows_from_trajectory(&trajectory)?);
        infos.push(TrajectoryInfo {
            seed: traj_seed,
            params,
            windows: cfg.windows_per_trajectory,
        });
    }
    Dataset::from_windows(windows, cfg.split_fractions, seed::derive(seed, "split", &[]), infos)
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    layout: String,
    split_sizes: [usize; 3],
    split_fractions: [f64; 3],
    shuffle_seed: u64,
    normalization: Normalization,
    trajectories: Vec<TrajectoryInfo>,
}

const DATASET_LAYOUT: &str = "each split array has shape [windows, 2, 50, 3]: \
    window index, half (0 = input, 1 = target), timestep, dimension (x, y, z); \
    values are raw (unnormalized) Lorenz states";

fn flatten_split(windows: &[WindowPair]) -> Vec<f64> {
    windows
        .iter()
        .flat_map(|w| w.input.iter().chain(w.target.iter()))
        .flat_map(|s| s.iter().copied())
        .collect()
}

fn unflatten_split(data: &ArrayData, path: &Path) -> Result<Vec<WindowPair>> {
    let shape = &data.shape;
    if shape.len() != 4 || shape[1] != 2 || shape[2] != HALF_LEN || shape[3] != 3 {
        return Err(Error::format(path, format!("unexpected split shape {shape:?}")));
    }
    Ok(data
        .values
        .chunks_exact(WINDOW_LEN * 3)
        .map(|w| {
            let states: Vec<State> = w.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            WindowPair {
                input: states[..HALF_LEN].to_vec(),
                target: states[HALF_LEN..].to_vec(),
            }
        })
        .collect())
}

impl Dataset {
    /// Writes `<dir>/<stem>.json` and `<dir>/<stem>.bin`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let meta = DatasetMeta {
            layout: DATASET_LAYOUT.into(),
            split_sizes: self.split_sizes(),
            split_fractions: self.split_fractions,
            shuffle_seed: self.shuffle_seed,
            normalization: self.normalization,
            trajectories: self.trajectories.clone(),
        };
        let splits = [("train", &self.train), ("val", &self.val), ("test", &self.test)];
        let flats: Vec<Vec<f64>> = splits.iter().map(|(_, w)| flatten_split(w)).collect();
        let arrays: Vec<store::ArrayRef<'_>> = splits
            .iter()
            .zip(&flats)
            .map(|((name, w), flat)| store::ArrayRef {
                name,
                shape: vec![w.len(), 2, HALF_LEN, 3],
                values: flat,
            })
            .collect();
        store::write_bundle(dir, stem, "lorenz-dataset", &meta, &arrays)
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let bundle = store::read_bundle(manifest, "lorenz-dataset")?;
        let meta: DatasetMeta = serde_json::from_value(bundle.metadata.clone())
            .map_err(|e| Error::format(manifest, e))?;
        let train = unflatten_split(bundle.array("train", manifest)?, manifest)?;
        let val = unflatten_split(bundle.array("val", manifest)?, manifest)?;
        let test = unflatten_split(bundle.array("test", manifest)?, manifest)?;
        if [train.len(), val.len(), test.len()] != meta.split_sizes {
            return Err(Error::format(manifest, "split sizes disagree with payload"));
        }
        Ok(Dataset {
            train,
            val,
            test,
            normalization: meta.normalization,
            split_fractions: meta.split_fractions,
            shuffle_seed: meta.shuffle_seed,
            trajectories: meta.trajectories,
        })
    }
}
