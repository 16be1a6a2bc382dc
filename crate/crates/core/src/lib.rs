//! Hong-Ou-Mandel interference between dissimilar single-photon sources.
//!
//! - [`wavepacket`]: temporal envelopes, Bloch-equation emission profiles,
//!   delayed re-emission mixtures and Zeeman line sets.
//! - [`interference`]: joint detection density and gated coincidence curves.
//! - [`counting`]: closed-form beamsplitter counting statistics.
//! - [`montecarlo`]: CW and pulsed time-tag stream generators.
//! - [`tags`]: correlation histograms, coincidence maps and the
//!   reference/background pipeline.
//! - [`bell`]: Bell-state analyzer algebra and entanglement-rate accounting.

pub mod bell;
pub mod counting;
pub mod error;
pub mod interference;
pub mod io;
pub mod montecarlo;
pub mod tags;
pub mod wavepacket;

pub use error::{Error, Result};
