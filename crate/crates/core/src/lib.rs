//! Origin-destination demand calibration from segment speed data.
//!
//! The crate ships a network model with a fixed route-choice assignment
//! matrix, an urban fundamental diagram, a stochastic synthetic simulator,
//! a physics-informed metamodel of the simulation loss, two calibration
//! algorithms (metamodel-based simulation optimization and SPSA), and the
//! evaluation and experiment plumbing around them.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod fd;
pub mod generator;
pub mod metamodel;
pub mod network;
pub mod rng;
pub mod simulator;
pub mod solvers;
pub mod tables;

pub use error::{Error, Result};

/// The shipped demo network (20 OD pairs, 100 segments), generated from the
/// default generator settings.
pub const DEMO_NETWORK_JSON: &str = include_str!("../data/demo_network.json");

pub fn demo_network() -> network::Network {
    network::load_network(DEMO_NETWORK_JSON).expect("shipped demo network is valid")
}
