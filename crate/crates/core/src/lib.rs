//! Simulation and analysis of probabilistic entanglement between a photon
//! and a collective atomic spin excitation.

pub mod analysis;
pub mod angular_momentum;
pub mod cli;
pub mod error;
pub mod predictor;
pub mod quantum_state;
pub mod simulator;

pub use error::{Error, Result};
