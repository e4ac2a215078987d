//! Simulation and ex-situ training of inverter-based memristor crossbar
//! neural networks with structured predefined sparsity.
//!
//! The crate models a layered classifier whose weights live in memristor
//! crossbar arrays: every weight is a pair of programmable conductances
//! (positive and negative polarity), every neuron is a CMOS inverter whose
//! voltage transfer curve acts as the activation function, and connectivity
//! is fixed before training by fan-balanced binary masks. Training runs in
//! software against the circuit constraints (bounded conductances, positive
//! normalized weights) so that converged parameters can be programmed
//! directly onto hardware.
//!
//! Module map:
//! - [`topology`]: layer shapes, structured sparsity masks, sub-array packing
//! - [`device`]: conductance mapping, write quantization, process variation
//! - [`circuit`]: crossbar node voltages, inverter activations, power/counts
//! - [`training`]: constrained weight mapping, backpropagation, SGD loop
//! - [`datasets`]: benchmark ingestion, voltage normalization, splits
//! - [`experiment`]: config-driven runs, sweeps, Monte Carlo, reports

pub mod circuit;
pub mod datasets;
pub mod device;
pub mod error;
pub mod experiment;
pub mod netfile;
pub mod rng;
pub mod topology;
pub mod training;

pub use error::{Error, Result};
