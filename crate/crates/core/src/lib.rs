//! Simulation and analysis pipeline for a cryogenic RF search for
//! nonlinear quantum mechanics.
//!
//! A random bit from a mixed classical/quantum sample decides whether a
//! large RF power is sourced into a load or the receiver chain records a
//! power spectrum. Nonlinear state-dependent dynamics would leak a fraction
//! of the sourced power into the measuring branch.
//!
//! - [`bitgen`]: classical and simulated-qubit bit sources, mixing, provenance
//! - [`rfchain`]: chain model and unaveraged spectrum synthesis
//! - [`calibration`]: HEMT gain / noise temperature and conservative error policies
//! - [`specfit`]: signal region, sidebands and the chi-square(2) fit
//! - [`limits`]: truncated-normal limits, fidelity corrections, ε limits
//! - [`runner`]: the per-bit run loop, blinding and run directories

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bitgen;
pub mod calibration;
pub mod error;
pub mod kv;
pub mod limits;
pub mod rfchain;
pub mod rng;
pub mod runner;
pub mod specfit;
pub mod stats;
pub mod units;

pub use error::{Error, Result};
