//! Spiking unit dynamics.
//!
//! Neurons are first-order leaky integrate-and-fire units with
//! reset-by-subtraction. Astrocytes are second-order LIF units (a decaying
//! synaptic current feeds a decaying membrane) with no reset: they output 1 on
//! every step their membrane sits above threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronConfig {
    pub beta: f64,
    pub u_thr: f64,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig { beta: 0.9, u_thr: 1.0 }
    }
}

impl NeuronConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidConfig(format!("neuron beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.u_thr > 0.0 && self.u_thr.is_finite()) {
            return Err(Error::InvalidConfig(format!("neuron threshold must be positive, got {}", self.u_thr)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AstrocyteConfig {
    pub beta: f64,
    pub alpha: f64,
    pub u_thr: f64,
}

impl Default for AstrocyteConfig {
    fn default() -> Self {
        AstrocyteConfig {
            beta: 0.99,
            alpha: 0.95,
            u_thr: 1.0,
        }
    }
}

impl AstrocyteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidConfig(format!("astrocyte beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("astrocyte alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.u_thr > 0.0 && self.u_thr.is_finite()) {
            return Err(Error::InvalidConfig(format!("astrocyte threshold must be positive, got {}", self.u_thr)));
        }
        Ok(())
    }
}

/// State of one subnetwork. `i_syn` is empty for neuron subnetworks.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitState {
    pub u: Vec<f64>,
    pub i_syn: Vec<f64>,
    pub spikes: Vec<bool>,
}

impl UnitState {
    pub fn neurons(n: usize) -> Self {
        UnitState {
            u: vec![0.0; n],
            i_syn: Vec::new(),
            spikes: vec![false; n],
        }
    }

    pub fn astrocytes(n: usize) -> Self {
        UnitState {
            u: vec![0.0; n],
            i_syn: vec![0.0; n],
            spikes: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn spike_count(&self) -> usize {
        self.spikes.iter().filter(|&&s| s).count()
    }

    pub fn reset(&mut self) {
        self.u.iter_mut().for_each(|v| *v = 0.0);
        self.i_syn.iter_mut().for_each(|v| *v = 0.0);
        self.spikes.iter_mut().for_each(|v| *v = false);
    }
}

impl NeuronConfig {
    /// Advances in place: `u <- beta*u + I`, spike where `u > u_thr`, then
    /// subtract `u_thr` from the spiking units in the same step.
    pub fn advance(&self, state: &mut UnitState, input: &[f64]) -> Result<()> {
        Error::check_len("neuron input", state.len(), input.len())?;
        for ((u, s), &i) in state.u.iter_mut().zip(state.spikes.iter_mut()).zip(input) {
            let pre = self.beta * *u + i;
            *s = pre > self.u_thr;
            *u = if *s { pre - self.u_thr } else { pre };
        }
        Ok(())
    }
}

impl AstrocyteConfig {
    /// Advances in place: `i_syn <- alpha*i_syn + I_in`, `u <- beta*u + i_syn`,
    /// output 1 where `u > u_thr`. The membrane is never reset.
    pub fn advance(&self, state: &mut UnitState, input: &[f64]) -> Result<()> {
        Error::check_len("astrocyte input", state.len(), input.len())?;
        Error::check_len("astrocyte synaptic current", state.len(), state.i_syn.len())?;
        for (((u, syn), s), &i) in state
            .u
            .iter_mut()
            .zip(state.i_syn.iter_mut())
            .zip(state.spikes.iter_mut())
            .zip(input)
        {
            *syn = self.alpha * *syn + i;
            *u = self.beta * *u + *syn;
            *s = *u > self.u_thr;
        }
        Ok(())
    }
}

pub fn neuron_step(state: &UnitState, input: &[f64], cfg: &NeuronConfig) -> Result<UnitState> {
    let mut next = state.clone();
    cfg.advance(&mut next, input)?;
    Ok(next)
}

pub fn astrocyte_step(state: &UnitState, input: &[f64], cfg: &AstrocyteConfig) -> Result<UnitState> {
    let mut next = state.clone();
    cfg.advance(&mut next, input)?;
    Ok(next)
}

/// Index of the peak membrane response of a single neuron to a unit impulse,
/// with the threshold pushed out of reach so no reset interferes.
pub fn neuron_impulse_peak(cfg: &NeuronConfig, horizon: usize) -> usize {
    let cfg = NeuronConfig { u_thr: f64::INFINITY, ..*cfg };
    let mut st = UnitState::neurons(1);
    let mut trace = Vec::with_capacity(horizon);
    for t in 0..horizon {
        cfg.advance(&mut st, &[if t == 0 { 1.0 } else { 0.0 }]).unwrap();
        trace.push(st.u[0]);
    }
    argmax(&trace)
}

/// Same as [`neuron_impulse_peak`] for an astrocyte.
pub fn astrocyte_impulse_peak(cfg: &AstrocyteConfig, horizon: usize) -> usize {
    let cfg = AstrocyteConfig { u_thr: f64::INFINITY, ..*cfg };
    let mut st = UnitState::astrocytes(1);
    let mut trace = Vec::with_capacity(horizon);
    for t in 0..horizon {
        cfg.advance(&mut st, &[if t == 0 { 1.0 } else { 0.0 }]).unwrap();
        trace.push(st.u[0]);
    }
    argmax(&trace)
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn scalar_neuron(u: f64) -> UnitState {
        UnitState {
            u: vec![u],
            i_syn: vec![],
            spikes: vec![false],
        }
    }

    #[test]
    fn neuron_subthreshold_step() {
        let cfg = NeuronConfig { beta: 0.8, u_thr: 1.0 };
        let next = neuron_step(&scalar_neuron(0.5), &[0.3], &cfg).unwrap();
        assert_abs_diff_eq!(next.u[0], 0.7, epsilon = 1e-15);
        assert!(!next.spikes[0]);
    }

    #[test]
    fn neuron_spike_subtracts_threshold() {
        let cfg = NeuronConfig { beta: 1.0, u_thr: 1.0 };
        let next = neuron_step(&scalar_neuron(0.0), &[1.5], &cfg).unwrap();
        assert!(next.spikes[0]);
        assert_eq!(next.u[0], 0.5);
    }

    #[test]
    fn threshold_is_strict() {
        let cfg = NeuronConfig { beta: 1.0, u_thr: 1.0 };
        let next = neuron_step(&scalar_neuron(0.0), &[1.0], &cfg).unwrap();
        assert!(!next.spikes[0]);
        assert_eq!(next.u[0], 1.0);
    }

    #[test]
    fn neuron_zero_input_decays_geometrically() {
        let cfg = NeuronConfig { beta: 0.9, u_thr: 1.0 };
        let mut st = scalar_neuron(0.75);
        for t in 1..=100 {
            cfg.advance(&mut st, &[0.0]).unwrap();
            assert!((st.u[0] - 0.9f64.powi(t) * 0.75).abs() < 1e-14);
            assert!(!st.spikes[0]);
        }
    }

    #[test]
    fn astrocyte_zero_input_decays_geometrically() {
        let cfg = AstrocyteConfig::default();
        let mut st = UnitState {
            u: vec![0.5],
            i_syn: vec![0.0],
            spikes: vec![false],
        };
        for t in 1..=50 {
            cfg.advance(&mut st, &[0.0]).unwrap();
            assert!((st.u[0] - 0.99f64.powi(t) * 0.5).abs() < 1e-14);
            assert!(!st.spikes[0]);
        }
        let mut st = UnitState {
            u: vec![0.0],
            i_syn: vec![0.02],
            spikes: vec![false],
        };
        for t in 1..=50 {
            cfg.advance(&mut st, &[0.0]).unwrap();
            assert!((st.i_syn[0] - 0.95f64.powi(t) * 0.02).abs() < 1e-15);
        }
    }

    // Closed forms: u[t] = (beta^{t+1} - alpha^{t+1}) / (beta - alpha), and
    // (t+1) beta^t when alpha == beta.
    #[test]
    fn astrocyte_impulse_response_closed_form() {
        let cfg = AstrocyteConfig {
            beta: 0.9,
            alpha: 0.6,
            u_thr: f64::INFINITY,
        };
        let mut st = UnitState::astrocytes(1);
        for t in 0..200i32 {
            cfg.advance(&mut st, &[if t == 0 { 1.0 } else { 0.0 }]).unwrap();
            let expect = (0.9f64.powi(t + 1) - 0.6f64.powi(t + 1)) / (0.9 - 0.6);
            assert!((st.u[0] - expect).abs() < 1e-12, "t={t}");
        }
        let cfg = AstrocyteConfig {
            beta: 0.8,
            alpha: 0.8,
            u_thr: f64::INFINITY,
        };
        let mut st = UnitState::astrocytes(1);
        for t in 0..200i32 {
            cfg.advance(&mut st, &[if t == 0 { 1.0 } else { 0.0 }]).unwrap();
            let expect = f64::from(t + 1) * 0.8f64.powi(t);
            assert!((st.u[0] - expect).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn astrocyte_output_holds_until_natural_decay() {
        let cfg = AstrocyteConfig {
            beta: 0.9,
            alpha: 0.5,
            u_thr: 1.0,
        };
        let mut st = UnitState {
            u: vec![3.0],
            i_syn: vec![0.0],
            spikes: vec![false],
        };
        // 3 * 0.9^t > 1  <=>  t < ln(3) / ln(1/0.9) = 10.43
        let mut on = 0;
        for _ in 0..40 {
            cfg.advance(&mut st, &[0.0]).unwrap();
            if st.spikes[0] {
                on += 1;
                assert!(st.u[0] > 1.0);
            } else {
                break;
            }
        }
        assert_eq!(on, 10);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            neuron_step(&UnitState::neurons(3), &[1.0, 2.0], &NeuronConfig::default()),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(astrocyte_step(&UnitState::astrocytes(2), &[1.0], &AstrocyteConfig::default()).is_err());
    }

    #[test]
    fn astrocyte_peak_is_later_than_neuron_peak() {
        let n = neuron_impulse_peak(&NeuronConfig::default(), 500);
        let a = astrocyte_impulse_peak(&AstrocyteConfig::default(), 500);
        assert_eq!(n, 0);
        assert!(a > n + 10, "astrocyte peak {a}");
    }

    #[test]
    fn config_validation() {
        assert!(NeuronConfig { beta: 0.0, u_thr: 1.0 }.validate().is_err());
        assert!(NeuronConfig { beta: 1.0, u_thr: 1.0 }.validate().is_ok());
        assert!(AstrocyteConfig { alpha: 1.0, ..Default::default() }.validate().is_err());
        assert!(AstrocyteConfig { u_thr: -1.0, ..Default::default() }.validate().is_err());
    }

    proptest! {
        // From any potential at or below threshold, one step lands at most
        // u_thr + max(I, 0) above zero.
        #[test]
        fn neuron_post_reset_bound(u0 in -2.0..=1.0f64, inputs in proptest::collection::vec(-3.0..3.0f64, 1..20)) {
            let cfg = NeuronConfig::default();
            let n = inputs.len();
            let max_in = inputs.iter().cloned().fold(0.0, f64::max);
            let next = neuron_step(&UnitState { u: vec![u0; n], i_syn: vec![], spikes: vec![false; n] }, &inputs, &cfg).unwrap();
            for &u in &next.u {
                prop_assert!(u <= cfg.u_thr + max_in);
            }
        }

        #[test]
        fn neuron_rate_is_monotone_in_input_scale(base in 0.01..2.0f64, k in 1.0..4.0f64) {
            let cfg = NeuronConfig::default();
            let count = |scale: f64| {
                let mut st = scalar_neuron(0.0);
                (0..100).filter(|_| { cfg.advance(&mut st, &[scale]).unwrap(); st.spikes[0] }).count()
            };
            prop_assert!(count(base * k) >= count(base));
        }

        #[test]
        fn astrocyte_state_is_linear(
            a in proptest::collection::vec(-1.0..1.0f64, 30),
            b in proptest::collection::vec(-1.0..1.0f64, 30),
        ) {
            let cfg = AstrocyteConfig::default();
            let run = |xs: &[f64]| {
                let mut st = UnitState::astrocytes(1);
                xs.iter().map(|&x| { cfg.advance(&mut st, &[x]).unwrap(); (st.u[0], st.i_syn[0]) }).collect::<Vec<_>>()
            };
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            for ((ra, rb), rs) in run(&a).iter().zip(run(&b)).zip(run(&sum)) {
                prop_assert!((ra.0 + rb.0 - rs.0).abs() < 1e-12);
                prop_assert!((ra.1 + rb.1 - rs.1).abs() < 1e-12);
            }
        }

        #[test]
        fn steps_replay_bit_identically(inputs in proptest::collection::vec(-2.0..2.0f64, 8)) {
            let n = NeuronConfig::default();
            let a = AstrocyteConfig::default();
            let s1 = neuron_step(&UnitState::neurons(8), &inputs, &n).unwrap();
            let s2 = neuron_step(&UnitState::neurons(8), &inputs, &n).unwrap();
            prop_assert_eq!(s1, s2);
            let s1 = astrocyte_step(&UnitState::astrocytes(8), &inputs, &a).unwrap();
            let s2 = astrocyte_step(&UnitState::astrocytes(8), &inputs, &a).unwrap();
            prop_assert_eq!(s1, s2);
        }
    }
}
