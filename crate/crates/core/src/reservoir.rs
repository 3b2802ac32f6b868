//! The four-subnetwork tripartite reservoir.
//!
//! Two neuron subnetworks (N1, N2) and two astrocyte subnetworks (A1, A2),
//! each recurrently all-to-all connected. N1 and N2 project onto each other;
//! N1 drives A1, which projects onto N2; N2 drives A2, which projects onto N1.
//! The flattened input window enters N1 only. Every connection carries a
//! one-step delay, so a presentation step reads the previous step's outputs.
//!
//! Weight blocks are stored `(pre, post)`: row `j` holds the outgoing weights
//! of presynaptic unit `j`, which lets binary spikes be accumulated by adding
//! whole rows.

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lorenz::HALF_FLAT;
use crate::seed;
use crate::store;
use crate::units::{AstrocyteConfig, NeuronConfig, UnitState};

/// Flattened input window length fed to the reservoir.
pub const INPUT_DIM: usize = HALF_FLAT;

/// How the neuron and astrocyte counts map onto the two subnetworks of each
/// kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// Counts are totals, split `ceil(n/2)` / `floor(n/2)`.
    #[default]
    Total,
    /// Counts are per subnetwork; totals are doubled.
    PerSubnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReservoirConfig {
    pub presentations: usize,
    pub weight_scale: f64,
    pub self_connections: bool,
    pub count_mode: CountMode,
    pub neuron: NeuronConfig,
    pub astrocyte: AstrocyteConfig,
}

impl Default for ReservoirConfig {
    fn default() -> Self {
        ReservoirConfig {
            presentations: 30,
            weight_scale: 1.0,
            self_connections: true,
            count_mode: CountMode::Total,
            neuron: NeuronConfig::default(),
            astrocyte: AstrocyteConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirSpec {
    pub n_neurons: usize,
    pub n_astrocytes: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub config: ReservoirConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubnetSizes {
    pub n1: usize,
    pub n2: usize,
    pub a1: usize,
    pub a2: usize,
}

impl SubnetSizes {
    pub fn neurons(&self) -> usize {
        self.n1 + self.n2
    }

    pub fn astrocytes(&self) -> usize {
        self.a1 + self.a2
    }
}

impl ReservoirSpec {
    pub fn new(n_neurons: usize, n_astrocytes: usize, seed: u64, config: ReservoirConfig) -> Self {
        ReservoirSpec {
            n_neurons,
            n_astrocytes,
            seed,
            config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let min = match self.config.count_mode {
            CountMode::Total => 2,
            CountMode::PerSubnet => 1,
        };
        if self.n_neurons < min || self.n_astrocytes < min {
            return Err(Error::InvalidConfig(format!(
                "reservoir needs at least {min} neurons and {min} astrocytes ({:?} counts), got N={} A={}",
                self.config.count_mode, self.n_neurons, self.n_astrocytes
            )));
        }
        if self.config.presentations == 0 {
            return Err(Error::InvalidConfig("presentations must be at least 1".into()));
        }
        if !(self.config.weight_scale > 0.0 && self.config.weight_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight_scale must be positive, got {}",
                self.config.weight_scale
            )));
        }
        self.config.neuron.validate()?;
        self.config.astrocyte.validate()
    }

    pub fn sizes(&self) -> SubnetSizes {
        let halve = |n: usize| match self.config.count_mode {
            CountMode::Total => (n.div_ceil(2), n / 2),
            CountMode::PerSubnet => (n, n),
        };
        let (n1, n2) = halve(self.n_neurons);
        let (a1, a2) = halve(self.n_astrocytes);
        SubnetSizes { n1, n2, a1, a2 }
    }

    /// Hex SHA-256 of the canonical JSON form of the spec.
    pub fn hash(&self) -> String {
        store::sha256_hex(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }
}

/// The eleven weight blocks of the reservoir, named `<pre><post>`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Block {
    Input,
    N1N1,
    N2N2,
    N1N2,
    N2N1,
    N1A1,
    N2A2,
    A1N2,
    A2N1,
    A1A1,
    A2A2,
}

impl Block {
    pub const ALL: [Block; 11] = [
        Block::Input,
        Block::N1N1,
        Block::N2N2,
        Block::N1N2,
        Block::N2N1,
        Block::N1A1,
        Block::N2A2,
        Block::A1N2,
        Block::A2N1,
        Block::A1A1,
        Block::A2A2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Input => "w_in",
            Block::N1N1 => "w_n1n1",
            Block::N2N2 => "w_n2n2",
            Block::N1N2 => "w_n1n2",
            Block::N2N1 => "w_n2n1",
            Block::N1A1 => "w_n1a1",
            Block::N2A2 => "w_n2a2",
            Block::A1N2 => "w_a1n2",
            Block::A2N1 => "w_a2n1",
            Block::A1A1 => "w_a1a1",
            Block::A2A2 => "w_a2a2",
        }
    }

    /// `(pre, post)` shape for the given subnetwork sizes.
    pub fn shape(self, s: &SubnetSizes) -> (usize, usize) {
        match self {
            Block::Input => (INPUT_DIM, s.n1),
            Block::N1N1 => (s.n1, s.n1),
            Block::N2N2 => (s.n2, s.n2),
            Block::N1N2 => (s.n1, s.n2),
            Block::N2N1 => (s.n2, s.n1),
            Block::N1A1 => (s.n1, s.a1),
            Block::N2A2 => (s.n2, s.a2),
            Block::A1N2 => (s.a1, s.n2),
            Block::A2N1 => (s.a2, s.n1),
            Block::A1A1 => (s.a1, s.a1),
            Block::A2A2 => (s.a2, s.a2),
        }
    }

    fn is_recurrent(self) -> bool {
        matches!(self, Block::N1N1 | Block::N2N2 | Block::A1A1 | Block::A2A2)
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Frozen reservoir weights. Nothing in training takes these mutably.
#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirWeights {
    pub sizes: SubnetSizes,
    blocks: Vec<Array2<f64>>,
}

impl ReservoirWeights {
    pub fn block(&self, b: Block) -> &Array2<f64> {
        &self.blocks[b as usize]
    }

    pub fn blocks(&self) -> impl Iterator<Item = (Block, &Array2<f64>)> {
        Block::ALL.iter().map(move |&b| (b, self.block(b)))
    }

    pub fn weight_count(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    /// Zeroes one block, for ablations (neuron-only or astrocyte-only
    /// variants).
    pub fn zero_block(&mut self, b: Block) {
        self.blocks[b as usize].fill(0.0);
    }
}

/// Draws every block i.i.d. from N(0, weight_scale / sqrt(fan_in)), where
/// fan_in is the block's presynaptic size. Each block has its own stream.
pub fn build(spec: &ReservoirSpec) -> Result<ReservoirWeights> {
    spec.validate()?;
    let sizes = spec.sizes();
    let blocks = Block::ALL
        .iter()
        .enumerate()
        .map(|(k, &b)| {
            let (pre, post) = b.shape(&sizes);
            let std = spec.config.weight_scale / (pre as f64).sqrt();
            let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            let mut rng = seed::rng(seed::derive(spec.seed, "reservoir-block", &[k as u64]));
            let mut w = Array2::from_shape_simple_fn((pre, post), || normal.sample(&mut rng));
            if b.is_recurrent() && !spec.config.self_connections {
                w.diag_mut().fill(0.0);
            }
            Ok(w)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ReservoirWeights { sizes, blocks })
}

/// Readout features: per-neuron spike counts over the presentation steps,
/// divided by the number of steps. N1 first, then N2.
#[derive(Clone, Debug, PartialEq)]
pub struct ReservoirActivity {
    pub features: Vec<f64>,
    /// Fraction of steps each astrocyte was above threshold (A1 then A2).
    pub astrocyte_rates: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subnet {
    N1,
    N2,
    A1,
    A2,
}

pub const UPDATE_ORDER: [Subnet; 4] = [Subnet::N1, Subnet::N2, Subnet::A1, Subnet::A2];

fn add_active_rows(acc: &mut [f64], w: &Array2<f64>, active: &[bool]) {
    let cols = w.ncols();
    let data = w.as_slice().expect("weight blocks are contiguous");
    for (j, _) in active.iter().enumerate().filter(|(_, &s)| s) {
        for (a, &x) in acc.iter_mut().zip(&data[j * cols..(j + 1) * cols]) {
            *a += x;
        }
    }
}

/// Drives the reservoir with one normalized, flattened input window for
/// `presentations` steps from a zero state.
pub fn run(weights: &ReservoirWeights, spec: &ReservoirSpec, input: &[f64]) -> Result<ReservoirActivity> {
    run_ordered(weights, spec, input, UPDATE_ORDER)
}

/// As [`run`], advancing the subnetworks in the given order within each step.
/// All currents are read from the previous step's outputs, so the order has no
/// effect on the result.
pub fn run_ordered(
    weights: &ReservoirWeights,
    spec: &ReservoirSpec,
    input: &[f64],
    order: [Subnet; 4],
) -> Result<ReservoirActivity> {
    Error::check_len("reservoir input window", INPUT_DIM, input.len())?;
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite value in reservoir input".into()));
    }
    let s = weights.sizes;
    let cfg = &spec.config;
    let drive: Array1<f64> = Array1::from(input.to_vec()).dot(weights.block(Block::Input));

    let mut n1 = UnitState::neurons(s.n1);
    let mut n2 = UnitState::neurons(s.n2);
    let mut a1 = UnitState::astrocytes(s.a1);
    let mut a2 = UnitState::astrocytes(s.a2);
    let mut counts = vec![0u32; s.n1 + s.n2];
    let mut astro_counts = vec![0u32; s.a1 + s.a2];
    let mut current = Vec::with_capacity(s.n1.max(s.n2).max(s.a1).max(s.a2));

    for _ in 0..cfg.presentations {
        let prev = [n1.spikes.clone(), n2.spikes.clone(), a1.spikes.clone(), a2.spikes.clone()];
        let [pn1, pn2, pa1, pa2] = &prev;
        for unit in order {
            current.clear();
            match unit {
                Subnet::N1 => {
                    current.extend_from_slice(drive.as_slice().unwrap());
                    add_active_rows(&mut current, weights.block(Block::N1N1), pn1);
                    add_active_rows(&mut current, weights.block(Block::N2N1), pn2);
                    add_active_rows(&mut current, weights.block(Block::A2N1), pa2);
                    cfg.neuron.advance(&mut n1, &current)?;
                }
                Subnet::N2 => {
                    current.resize(s.n2, 0.0);
                    add_active_rows(&mut current, weights.block(Block::N2N2), pn2);
                    add_active_rows(&mut current, weights.block(Block::N1N2), pn1);
                    add_active_rows(&mut current, weights.block(Block::A1N2), pa1);
                    cfg.neuron.advance(&mut n2, &current)?;
                }
                Subnet::A1 => {
                    current.resize(s.a1, 0.0);
                    add_active_rows(&mut current, weights.block(Block::A1A1), pa1);
                    add_active_rows(&mut current, weights.block(Block::N1A1), pn1);
                    cfg.astrocyte.advance(&mut a1, &current)?;
                }
                Subnet::A2 => {
                    current.resize(s.a2, 0.0);
                    add_active_rows(&mut current, weights.block(Block::A2A2), pa2);
                    add_active_rows(&mut current, weights.block(Block::N2A2), pn2);
                    cfg.astrocyte.advance(&mut a2, &current)?;
                }
            }
        }
        let finite = [&n1, &n2, &a1, &a2]
            .iter()
            .all(|st| st.u.iter().chain(&st.i_syn).all(|v| v.is_finite()));
        if !finite {
            return Err(Error::Divergence(format!(
                "reservoir state became non-finite (weight_scale {})",
                cfg.weight_scale
            )));
        }
        for (c, &sp) in counts.iter_mut().zip(n1.spikes.iter().chain(&n2.spikes)) {
            *c += u32::from(sp);
        }
        for (c, &sp) in astro_counts.iter_mut().zip(a1.spikes.iter().chain(&a2.spikes)) {
            *c += u32::from(sp);
        }
    }
    let n = cfg.presentations as f64;
    Ok(ReservoirActivity {
        features: counts.iter().map(|&c| f64::from(c) / n).collect(),
        astrocyte_rates: astro_counts.iter().map(|&c| f64::from(c) / n).collect(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsMeta {
    spec: ReservoirSpec,
    spec_hash: String,
    sizes: SubnetSizes,
    orientation: String,
}

impl ReservoirWeights {
    /// File stem keyed by seed and spec hash.
    pub fn stem(spec: &ReservoirSpec) -> String {
        format!("reservoir-{}-{}", spec.seed, &spec.hash()[..16])
    }

    /// Writes the weights under `dir`, returning the manifest path.
    pub fn save(&self, spec: &ReservoirSpec, dir: &Path) -> Result<PathBuf> {
        let stem = Self::stem(spec);
        let meta = WeightsMeta {
            spec: *spec,
            spec_hash: spec.hash(),
            sizes: self.sizes,
            orientation: "each block is [pre, post]; current into post = spikes(pre) . block".into(),
        };
        let arrays: Vec<_> = self
            .blocks()
            .map(|(b, w)| store::ArrayRef {
                name: b.name(),
                shape: vec![w.nrows(), w.ncols()],
                values: w.as_slice().unwrap(),
            })
            .collect();
        store::write_bundle(dir, &stem, "reservoir-weights", &meta, &arrays)?;
        Ok(store::manifest_path(dir, &stem))
    }

    /// Loads weights and the spec they were built from.
    pub fn load(manifest: &Path) -> Result<(ReservoirSpec, Self)> {
        let bundle = store::read_bundle(manifest, "reservoir-weights")?;
        let meta: WeightsMeta =
            serde_json::from_value(bundle.metadata.clone()).map_err(|e| Error::format(manifest, e))?;
        if meta.spec.hash() != meta.spec_hash {
            return Err(Error::format(manifest, "spec hash mismatch"));
        }
        let sizes = meta.spec.sizes();
        let blocks = Block::ALL
            .iter()
            .map(|&b| {
                let a = bundle.array(b.name(), manifest)?;
                let shape = b.shape(&sizes);
                if a.shape != [shape.0, shape.1] {
                    return Err(Error::format(manifest, format!("block {b} has shape {:?}", a.shape)));
                }
                Ok(Array2::from_shape_vec(shape, a.values.clone()).unwrap())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((meta.spec, ReservoirWeights { sizes, blocks }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn spec(n: usize, a: usize) -> ReservoirSpec {
        ReservoirSpec::new(n, a, 42, ReservoirConfig::default())
    }

    fn random_input(seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        (0..INPUT_DIM).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn subnet_sizes_split_ceil_floor() {
        assert_eq!(
            spec(10, 20).sizes(),
            SubnetSizes {
                n1: 5,
                n2: 5,
                a1: 10,
                a2: 10
            }
        );
        let s = spec(3, 7).sizes();
        assert_eq!((s.n1, s.n2, s.a1, s.a2), (2, 1, 4, 3));
        let per = ReservoirSpec::new(
            4,
            6,
            0,
            ReservoirConfig {
                count_mode: CountMode::PerSubnet,
                ..Default::default()
            },
        );
        assert_eq!(per.sizes().neurons(), 8);
        assert_eq!(per.sizes().astrocytes(), 12);
    }

    #[test]
    fn too_small_reservoirs_are_rejected() {
        assert!(build(&spec(1, 10)).is_err());
        assert!(build(&spec(10, 1)).is_err());
        let mut s = spec(10, 10);
        s.config.presentations = 0;
        assert!(build(&s).is_err());
    }

    #[test]
    fn block_shapes() {
        let w = build(&spec(10, 20)).unwrap();
        assert_eq!(w.block(Block::N1A1).dim(), (5, 10));
        assert_eq!(w.block(Block::A1N2).dim(), (10, 5));
        assert_eq!(w.block(Block::Input).dim(), (150, 5));
        assert_eq!(w.blocks().count(), 11);
    }

    #[test]
    fn build_is_deterministic_and_seed_sensitive() {
        assert_eq!(build(&spec(10, 20)).unwrap(), build(&spec(10, 20)).unwrap());
        let mut other = spec(10, 20);
        other.seed = 43;
        assert_ne!(build(&spec(10, 20)).unwrap(), build(&other).unwrap());
    }

    #[test]
    fn weight_scale_follows_fan_in() {
        let mut s = spec(400, 800);
        s.config.weight_scale = 2.0;
        let w = build(&s).unwrap();
        let a = w.block(Block::A1A1);
        let var = a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64;
        let expected = 4.0 / 400.0;
        assert!((var - expected).abs() < 0.05 * expected, "var {var}");
    }

    #[test]
    fn self_connection_toggle() {
        let mut s = spec(6, 6);
        s.config.self_connections = false;
        let w = build(&s).unwrap();
        for b in [Block::N1N1, Block::N2N2, Block::A1A1, Block::A2A2] {
            assert!(w.block(b).diag().iter().all(|&v| v == 0.0));
        }
        assert!(w.block(Block::N1N2).iter().all(|&v| v != 0.0));
    }

    #[test]
    fn zero_input_gives_zero_features() {
        let s = spec(10, 20);
        let w = build(&s).unwrap();
        let act = run(&w, &s, &[0.0; INPUT_DIM]).unwrap();
        assert_eq!(act.features, vec![0.0; 10]);
        assert!(act.astrocyte_rates.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn features_are_rates_of_length_n() {
        for (n, a) in [(10, 20), (7, 3), (50, 100)] {
            let s = spec(n, a);
            let w = build(&s).unwrap();
            let act = run(&w, &s, &random_input(n as u64)).unwrap();
            assert_eq!(act.features.len(), n);
            assert!(act.features.iter().all(|&f| (0.0..=1.0).contains(&f)));
            assert!(act.features.iter().any(|&f| f > 0.0));
        }
    }

    #[test]
    fn run_is_bit_identical_on_replay() {
        let s = spec(20, 40);
        let w = build(&s).unwrap();
        let x = random_input(1);
        assert_eq!(run(&w, &s, &x).unwrap(), run(&w, &s, &x).unwrap());
    }

    #[test]
    fn update_order_does_not_matter() {
        let s = spec(12, 24);
        let w = build(&s).unwrap();
        let x = random_input(2);
        let base = run(&w, &s, &x).unwrap();
        for order in [
            [Subnet::A2, Subnet::A1, Subnet::N2, Subnet::N1],
            [Subnet::A1, Subnet::N1, Subnet::A2, Subnet::N2],
            [Subnet::N2, Subnet::A2, Subnet::N1, Subnet::A1],
        ] {
            assert_eq!(run_ordered(&w, &s, &x, order).unwrap(), base);
        }
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let s = spec(4, 4);
        let w = build(&s).unwrap();
        assert!(matches!(run(&w, &s, &[1.0; 10]), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn huge_weights_diverge() {
        let mut s = spec(10, 10);
        s.config.weight_scale = 1e308;
        let w = build(&s).unwrap();
        assert!(matches!(run(&w, &s, &random_input(3)), Err(Error::Divergence(_))));
    }

    #[test]
    fn astrocytes_decay_silently_without_neural_drive() {
        let s = spec(10, 20);
        let mut w = build(&s).unwrap();
        for b in [Block::Input, Block::N1N1, Block::N2N2, Block::N1N2, Block::N2N1] {
            w.zero_block(b);
        }
        let act = run(&w, &s, &random_input(4)).unwrap();
        assert!(act.features.iter().all(|&f| f == 0.0));
        assert!(act.astrocyte_rates.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn neuron_only_variant_ignores_astrocytes() {
        let s = spec(10, 20);
        let mut w = build(&s).unwrap();
        w.zero_block(Block::A1N2);
        w.zero_block(Block::A2N1);
        let x = random_input(5);
        let reference = run(&w, &s, &x).unwrap().features;
        // With no astrocyte output reaching neurons, astrocyte weights are irrelevant.
        let mut s2 = s;
        s2.config.astrocyte.u_thr = 1e-9;
        assert_eq!(run(&w, &s2, &x).unwrap().features, reference);
    }

    #[test]
    fn weights_round_trip() {
        let s = spec(6, 9);
        let w = build(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = w.save(&s, dir.path()).unwrap();
        assert!(path.file_name().unwrap().to_str().unwrap().starts_with("reservoir-42-"));
        let (s2, w2) = ReservoirWeights::load(&path).unwrap();
        assert_eq!(s2, s);
        assert_eq!(w2, w);
    }
}
