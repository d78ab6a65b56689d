//! Major-minor mean-field control.
//!
//! Finite N-agent simulation of major-minor systems, the exact mean-field
//! limit for finite state spaces, policy-gradient training of M3FC policies
//! and the experiment harness that compares finite systems with their limit.

pub mod algo;
pub mod envs;
pub mod finite_sim;
pub mod chaos_eval;
pub mod cli;
pub mod error;
pub mod measures;
pub mod mf_limit;
pub mod nn;
pub mod policy;
pub mod rng;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
