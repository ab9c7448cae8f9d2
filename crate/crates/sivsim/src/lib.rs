//! Stochastic simulation and analysis toolkit for resonant spectroscopy of
//! single solid-state quantum emitters.
//!
//! The crate generates synthetic photon time-tag streams and scanned
//! fluorescence spectra from a configurable emitter model (spectral
//! diffusion, charge-state blinking, optical saturation), then recovers the
//! underlying physics with the bundled analysis pipeline: line fits,
//! intensity correlations, lifetime fits, and population statistics over
//! fabricated emitter arrays.
//!
//! Start with the runnable examples (`cargo run --example ...`), one per
//! major capability; the `sivsim` binary exposes the same workflows as
//! subcommands (`simulate`, `analyze`, `fit`, `stabilize`, `report`).

pub mod error;
pub mod fit;
pub mod cli;
pub mod config;
pub mod correlator;
pub mod dataset;
pub mod emitter;
pub mod physics;
pub mod rng;
pub mod stats;
pub mod stream;
pub mod survey;
pub mod sweep;

pub use error::{Error, Result};
