//! A liquid state machine whose reservoir mixes neuron-like and
//! astrocyte-like spiking units, trained to forecast Lorenz trajectories,
//! together with the sweep and statistics used to study how the
//! astrocyte-to-neuron ratio shapes learning speed.

pub mod error;
pub mod analysis;
pub mod lorenz;
pub mod readout;
pub mod record;
pub mod reservoir;
pub mod seed;
pub mod store;
pub mod sweep;
pub mod units;

pub use error::{Error, Result};
