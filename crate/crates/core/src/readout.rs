//! Trainable readout: a three-layer perceptron from reservoir rates to the
//! 150-value (50 steps x 3 dims) forecast, fitted with Adam on mean squared
//! error.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lorenz::{Dataset, State, WindowPair, HALF_FLAT};
use crate::reservoir::{self, ReservoirSpec, ReservoirWeights};
use crate::seed;
use crate::store;

pub const OUTPUT_DIM: usize = HALF_FLAT;

/// Weights are stored `(in, out)` so a batch of row vectors maps as `X . W`.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub weights: [Array2<f64>; 3],
    pub biases: [Array1<f64>; 3],
}

impl MlpParams {
    pub fn zeros(sizes: [usize; 4]) -> Self {
        MlpParams {
            weights: [0, 1, 2].map(|l| Array2::zeros((sizes[l], sizes[l + 1]))),
            biases: [0, 1, 2].map(|l| Array1::zeros(sizes[l + 1])),
        }
    }

    /// He-normal weights, zero biases.
    pub fn init(sizes: [usize; 4], seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut p = Self::zeros(sizes);
        for (l, w) in p.weights.iter_mut().enumerate() {
            let normal = Normal::new(0.0, (2.0 / sizes[l] as f64).sqrt()).unwrap();
            w.mapv_inplace(|_| normal.sample(&mut rng));
        }
        p
    }

    pub fn sizes(&self) -> [usize; 4] {
        [
            self.weights[0].nrows(),
            self.weights[0].ncols(),
            self.weights[1].ncols(),
            self.weights[2].ncols(),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn tensors(&self) -> [&[f64]; 6] {
        let [w0, w1, w2] = &self.weights;
        let [b0, b1, b2] = &self.biases;
        [
            w0.as_slice().unwrap(),
            w1.as_slice().unwrap(),
            w2.as_slice().unwrap(),
            b0.as_slice().unwrap(),
            b1.as_slice().unwrap(),
            b2.as_slice().unwrap(),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        let [w0, w1, w2] = &mut self.weights;
        let [b0, b1, b2] = &mut self.biases;
        [
            w0.as_slice_mut().unwrap(),
            w1.as_slice_mut().unwrap(),
            w2.as_slice_mut().unwrap(),
            b0.as_slice_mut().unwrap(),
            b1.as_slice_mut().unwrap(),
            b2.as_slice_mut().unwrap(),
        ]
    }

    /// All parameters flattened in tensor order (W1, W2, W3, b1, b2, b3).
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        Error::check_len("flat parameter vector", self.param_count(), flat.len())?;
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

struct Activations {
    z1: Array2<f64>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    h2: Array2<f64>,
    out: Array2<f64>,
}

fn forward_cached(p: &MlpParams, x: &ArrayView2<'_, f64>) -> Activations {
    let z1 = x.dot(&p.weights[0]) + &p.biases[0];
    let h1 = z1.mapv(relu);
    let z2 = h1.dot(&p.weights[1]) + &p.biases[1];
    let h2 = z2.mapv(relu);
    let out = h2.dot(&p.weights[2]) + &p.biases[2];
    Activations { z1, h1, z2, h2, out }
}

/// Forward pass for a batch of feature rows.
pub fn forward_batch(p: &MlpParams, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Error::check_len("readout input", p.weights[0].nrows(), x.ncols())?;
    Ok(forward_cached(p, &x).out)
}

/// Forward pass for one feature vector: two rectified hidden layers and a
/// linear output layer.
pub fn forward(p: &MlpParams, features: &[f64]) -> Result<Array1<f64>> {
    let x = ArrayView2::from_shape((1, features.len()), features).unwrap();
    Ok(forward_batch(p, x)?.row(0).to_owned())
}

/// Mean of squared differences over every element.
pub fn mse_loss(prediction: ArrayView1<'_, f64>, target: ArrayView1<'_, f64>) -> Result<f64> {
    Error::check_len("mse target", prediction.len(), target.len())?;
    if prediction.is_empty() {
        return Err(Error::InsufficientData {
            what: "elements for mse",
            needed: 1,
            got: 0,
        });
    }
    Ok(prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / prediction.len() as f64)
}

fn batch_mse(pred: &Array2<f64>, target: &ArrayView2<'_, f64>) -> f64 {
    let n = pred.len() as f64;
    pred.iter().zip(target.iter()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
}

fn standard_layout(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Loss (mean over every element of the batch) and its exact gradient.
pub fn backward_batch(
    p: &MlpParams,
    x: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
) -> Result<(f64, MlpParams)> {
    Error::check_len("readout input", p.weights[0].nrows(), x.ncols())?;
    Error::check_len("readout target width", p.weights[2].ncols(), target.ncols())?;
    Error::check_len("readout batch rows", x.nrows(), target.nrows())?;
    let a = forward_cached(p, &x);
    let loss = batch_mse(&a.out, &target);
    let scale = 2.0 / a.out.len() as f64;
    let d_out = (&a.out - &target) * scale;

    let g_w3 = a.h2.t().dot(&d_out);
    let g_b3 = d_out.sum_axis(Axis(0));
    let mut d_z2 = d_out.dot(&p.weights[2].t());
    ndarray::Zip::from(&mut d_z2).and(&a.z2).for_each(|d, &z| {
        if z <= 0.0 {
            *d = 0.0
        }
    });
    let g_w2 = a.h1.t().dot(&d_z2);
    let g_b2 = d_z2.sum_axis(Axis(0));
    let mut d_z1 = d_z2.dot(&p.weights[1].t());
    ndarray::Zip::from(&mut d_z1).and(&a.z1).for_each(|d, &z| {
        if z <= 0.0 {
            *d = 0.0
        }
    });
    let g_w1 = x.t().dot(&d_z1);
    let g_b1 = d_z1.sum_axis(Axis(0));
    Ok((
        loss,
        MlpParams {
            weights: [g_w1, g_w2, g_w3].map(standard_layout),
            biases: [g_b1, g_b2, g_b3],
        },
    ))
}

/// Gradient of `mse_loss(forward(features), target)` for one sample.
pub fn backward(p: &MlpParams, features: &[f64], target: &[f64]) -> Result<MlpParams> {
    let x = ArrayView2::from_shape((1, features.len()), features).unwrap();
    let t = ArrayView2::from_shape((1, target.len()), target).unwrap();
    Ok(backward_batch(p, x, t)?.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(config: AdamConfig, sizes: [usize; 4]) -> Self {
        OptimizerState {
            config,
            m: MlpParams::zeros(sizes),
            v: MlpParams::zeros(sizes),
            step: 0,
        }
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, opt: &mut OptimizerState) -> Result<()> {
    if params.sizes() != grads.sizes() || params.sizes() != opt.m.sizes() {
        return Err(Error::ShapeMismatch {
            context: "adam parameter layout",
            expected: params.param_count(),
            actual: grads.param_count(),
        });
    }
    opt.step += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = opt.config;
    let t = opt.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let g = grads.tensors();
    let m = opt.m.tensors_mut();
    let v = opt.v.tensors_mut();
    for (((p, g), m), v) in params.tensors_mut().into_iter().zip(g).zip(m).zip(v) {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: [usize; 2],
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: [256, 256],
            epochs: 500,
            batch_size: 32,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "epochs, batch_size and hidden sizes must all be positive".into(),
            ));
        }
        if !(self.adam.learning_rate >= 0.0) || !(self.adam.epsilon > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be >= 0 and epsilon > 0".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::InvalidConfig("Adam moment decays must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchLoss {
    pub epoch: usize,
    pub batch_index: usize,
    pub train_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub batches: Vec<BatchLoss>,
    /// Mean of each epoch's batch losses.
    pub epoch_train: Vec<f64>,
    /// MSE over the whole validation split after each epoch; NaN when the
    /// split is empty.
    pub epoch_val: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EpochRow {
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
}

impl LossHistory {
    pub fn epochs(&self) -> usize {
        self.epoch_train.len()
    }

    /// Writes `epoch,batch_index,train_loss` rows.
    pub fn write_batch_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for b in &self.batches {
            w.serialize(b).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Writes `epoch,train_loss,val_loss` rows.
    pub fn write_epoch_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for (epoch, (&train_loss, &val_loss)) in self.epoch_train.iter().zip(&self.epoch_val).enumerate() {
            w.serialize(EpochRow {
                epoch,
                train_loss,
                val_loss,
            })
            .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(batch_path: &Path, epoch_path: &Path) -> Result<Self> {
        let mut h = LossHistory::default();
        let mut r = csv::Reader::from_path(batch_path).map_err(|e| csv_err(batch_path, e))?;
        for row in r.deserialize() {
            h.batches.push(row.map_err(|e| csv_err(batch_path, e))?);
        }
        let mut r = csv::Reader::from_path(epoch_path).map_err(|e| csv_err(epoch_path, e))?;
        for row in r.deserialize::<EpochRow>() {
            let row = row.map_err(|e| csv_err(epoch_path, e))?;
            h.epoch_train.push(row.train_loss);
            h.epoch_val.push(row.val_loss);
        }
        Ok(h)
    }
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Reservoir rates and normalized targets for one split, one row per window.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub features: Array2<f64>,
    pub targets: Array2<f64>,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs the frozen reservoir over every window of a split, in parallel.
pub fn compute_features(
    weights: &ReservoirWeights,
    spec: &ReservoirSpec,
    dataset: &Dataset,
    windows: &[WindowPair],
) -> Result<FeatureMatrix> {
    let norm = dataset.normalization;
    let dim = weights.sizes.neurons();
    let rows = windows
        .par_iter()
        .map(|w| {
            let act = reservoir::run(weights, spec, &norm.flatten(&w.input))?;
            Ok((act.features, norm.flatten(&w.target)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut features = Array2::zeros((rows.len(), dim));
    let mut targets = Array2::zeros((rows.len(), OUTPUT_DIM));
    for (i, (f, t)) in rows.into_iter().enumerate() {
        features.row_mut(i).assign(&Array1::from(f));
        targets.row_mut(i).assign(&Array1::from(t));
    }
    Ok(FeatureMatrix { features, targets })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub history: LossHistory,
}

/// Trains a fresh readout on precomputed features. Batches are drawn from a
/// seeded reshuffle of the training rows each epoch; the last batch may be
/// partial.
pub fn train_on_features(
    train: &FeatureMatrix,
    val: &FeatureMatrix,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InsufficientData {
            what: "training windows",
            needed: 1,
            got: 0,
        });
    }
    let sizes = [train.features.ncols(), cfg.hidden[0], cfg.hidden[1], OUTPUT_DIM];
    let mut params = MlpParams::init(sizes, seed::derive(seed, "readout-init", &[]));
    let mut opt = OptimizerState::new(cfg.adam, sizes);
    let mut shuffle_rng = seed::rng(seed::derive(seed, "readout-shuffle", &[]));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = LossHistory::default();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        let mut count = 0;
        for (batch_index, idx) in order.chunks(cfg.batch_size).enumerate() {
            let xb = train.features.select(Axis(0), idx);
            let tb = train.targets.select(Axis(0), idx);
            let (loss, grads) = backward_batch(&params, xb.view(), tb.view())?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "training loss became non-finite at epoch {epoch}, batch {batch_index}"
                )));
            }
            adam_step(&mut params, &grads, &mut opt)?;
            history.batches.push(BatchLoss {
                epoch,
                batch_index,
                train_loss: loss,
            });
            sum += loss;
            count += 1;
        }
        history.epoch_train.push(sum / count as f64);
        let val_loss = if val.is_empty() {
            f64::NAN
        } else {
            let pred = forward_batch(&params, val.features.view())?;
            batch_mse(&pred, &val.targets.view())
        };
        if val_loss.is_infinite() || (!val.is_empty() && val_loss.is_nan()) {
            return Err(Error::Divergence(format!("validation loss became non-finite at epoch {epoch}")));
        }
        history.epoch_val.push(val_loss);
    }
    Ok(TrainOutcome { params, history })
}

/// Computes reservoir features for the train and validation splits, then
/// trains the readout. The reservoir weights are only borrowed immutably.
pub fn train(
    weights: &ReservoirWeights,
    spec: &ReservoirSpec,
    dataset: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::InsufficientData {
            what: "training windows",
            needed: 1,
            got: 0,
        });
    }
    let train_set = compute_features(weights, spec, dataset, &dataset.train)?;
    let val_set = compute_features(weights, spec, dataset, &dataset.val)?;
    train_on_features(&train_set, &val_set, cfg, seed)
}

/// Forecast for one window in original (unnormalized) Lorenz coordinates.
pub fn predict(
    params: &MlpParams,
    weights: &ReservoirWeights,
    spec: &ReservoirSpec,
    dataset: &Dataset,
    input: &[State],
) -> Result<Vec<State>> {
    let norm = dataset.normalization;
    let act = reservoir::run(weights, spec, &norm.flatten(input))?;
    let out = forward(params, &act.features)?;
    Ok(norm.unflatten(out.as_slice().unwrap()))
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    layer_sizes: [usize; 4],
    activation: String,
}

impl MlpParams {
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let meta = CheckpointMeta {
            layer_sizes: self.sizes(),
            activation: "relu, relu, linear; weights stored [in, out]".into(),
        };
        let names = ["w1", "w2", "w3", "b1", "b2", "b3"];
        let shapes: Vec<Vec<usize>> = self
            .weights
            .iter()
            .map(|w| vec![w.nrows(), w.ncols()])
            .chain(self.biases.iter().map(|b| vec![b.len()]))
            .collect();
        let tensors = self.tensors();
        let arrays: Vec<_> = names
            .iter()
            .zip(shapes)
            .zip(tensors)
            .map(|((name, shape), values)| store::ArrayRef { name, shape, values })
            .collect();
        store::write_bundle(dir, stem, "readout-checkpoint", &meta, &arrays)
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let bundle = store::read_bundle(manifest, "readout-checkpoint")?;
        let meta: CheckpointMeta =
            serde_json::from_value(bundle.metadata.clone()).map_err(|e| Error::format(manifest, e))?;
        let mut p = MlpParams::zeros(meta.layer_sizes);
        let mut flat = Vec::with_capacity(p.param_count());
        for name in ["w1", "w2", "w3", "b1", "b2", "b3"] {
            flat.extend_from_slice(&bundle.array(name, manifest)?.values);
        }
        p.set_flat(&flat).map_err(|e| Error::format(manifest, e))?;
        Ok(p)
    }
}

/// Writes the de-normalized forecast for the first `count` test windows as
/// CSV rows `window,step,x,y,z,target_x,target_y,target_z`.
pub fn write_forecast_csv(
    path: &Path,
    params: &MlpParams,
    weights: &ReservoirWeights,
    spec: &ReservoirSpec,
    dataset: &Dataset,
    count: usize,
) -> Result<()> {
    let mut out = String::from("window,step,x,y,z,target_x,target_y,target_z\n");
    for (k, w) in dataset.test.iter().take(count).enumerate() {
        let pred = predict(params, weights, spec, dataset, &w.input)?;
        for (step, (p, t)) in pred.iter().zip(&w.target).enumerate() {
            out.push_str(&format!(
                "{k},{step},{},{},{},{},{},{}\n",
                p[0], p[1], p[2], t[0], t[1], t[2]
            ));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
