//! Monte Carlo generation of time-tagged detection streams.
//!
//! Randomness comes from ChaCha8 seeded with `rng_seed`; generation block `k`
//! uses stream `k`, and the detector stage uses stream `u64::MAX`. Blocks are
//! generated in parallel and merged in order, so a seed fixes the output
//! regardless of the thread count.

mod config;
mod cw;
mod detector;
mod pulsed;
pub mod sampling;

pub use config::{
    mhz, BuiltModel, DetectorSpec, EnvelopeSpec, ExperimentConfig, LineSpec, Mode, SourceSpec, SpectralSpec,
    ZeemanSpec,
};
pub use cw::{check_occupancy, simulate_cw_with, MAX_OCCUPANCY};
pub use pulsed::{overlapped_opposite_port_probability, simulate_pulsed_with};

pub use crate::io::{read_chunks, split_stream, Channel, StreamFormat, TagStream, TagWriter, TimeTagRecord};

use serde::Serialize;

use crate::error::{param, Result};

/// Blocks generated per parallel batch. Fixed so memory use does not depend
/// on the machine.
pub(crate) const BLOCK_GROUP: u64 = 32;

/// Totals reported by a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimSummary {
    /// Tags written on A, B and CLK.
    pub counts: [u64; 3],
    pub duration_s: f64,
    pub blocks: u64,
}

/// Runs either mode, streaming ordered chunks into `sink`.
pub fn simulate_with<F>(cfg: &ExperimentConfig, sink: F) -> Result<SimSummary>
where
    F: FnMut(&[TimeTagRecord]) -> Result<()>,
{
    match cfg.mode {
        Mode::Cw => simulate_cw_with(cfg, sink),
        Mode::Pulsed => simulate_pulsed_with(cfg, sink),
    }
}

fn collect(cfg: &ExperimentConfig) -> Result<TagStream> {
    let mut records = Vec::new();
    simulate_with(cfg, |chunk| {
        records.extend_from_slice(chunk);
        Ok(())
    })?;
    TagStream::new(records)
}

/// Whole CW stream in memory.
pub fn simulate_cw(cfg: &ExperimentConfig) -> Result<TagStream> {
    if cfg.mode != Mode::Cw {
        return param("simulate_cw needs mode \"cw\"");
    }
    collect(cfg)
}

/// Whole pulsed stream in memory.
pub fn simulate_pulsed(cfg: &ExperimentConfig) -> Result<TagStream> {
    if cfg.mode != Mode::Pulsed {
        return param("simulate_pulsed needs mode \"pulsed\"");
    }
    collect(cfg)
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<TagStream> {
    collect(cfg)
}
