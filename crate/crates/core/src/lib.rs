//! Supervised spike-time learning in a single-layer spiking network whose
//! synapses are differential multi-device phase-change memory cells.
//!
//! - [`spike`]: time grid, spike trains, synaptic kernel
//! - [`lif`]: leaky integrate-and-fire neurons
//! - [`pcm`]: statistical PCM device model (partial-SET updates, drift)
//! - [`array`]: differential crossbar, drift compensation, snapshots
//! - [`normad`]: NormAD training loop over a weight backend
//! - [`task`]: synthetic input streams, pixel targets, jitter
//! - [`metrics`]: spike-time accuracy, correlations, rate images
//! - [`experiment`]: config, dataset manifest and the study commands
//! - [`plot`]: SVG figures

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array;
pub mod error;
pub mod experiment;
pub mod lif;
pub mod metrics;
pub mod normad;
pub mod pcm;
pub mod plot;
pub mod spike;
pub mod task;

pub use error::{Error, Result};
