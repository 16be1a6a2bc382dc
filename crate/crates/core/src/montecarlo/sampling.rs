//! Inverse-CDF samplers over lattice cells.

use rand::Rng;

use crate::error::{Error, Result};
use crate::interference::JointDensity;
use crate::wavepacket::TemporalEnvelope;

fn cumulative(weights: impl Iterator<Item = f64>) -> Result<Vec<f64>> {
    let mut cdf = Vec::new();
    let mut acc = 0.0;
    for w in weights {
        acc += w.max(0.0);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(Error::Normalization("sampling table has no weight".into()));
    }
    for v in &mut cdf {
        *v /= acc;
    }
    Ok(cdf)
}

fn pick(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|c| *c <= u).min(cdf.len() - 1)
}

/// Draws arrival times from a piecewise-constant intensity.
#[derive(Debug, Clone)]
pub struct CellSampler {
    t0: f64,
    dt: f64,
    cdf: Vec<f64>,
}

impl CellSampler {
    pub fn new(env: &TemporalEnvelope) -> Result<Self> {
        Ok(CellSampler { t0: env.t0(), dt: env.dt(), cdf: cumulative(env.samples().iter().map(|a| a * a))? })
    }

    /// Time in ns relative to the envelope's own clock.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let i = pick(&self.cdf, rng.random::<f64>());
        self.t0 + self.dt * (i as f64 + rng.random::<f64>())
    }
}

/// Draws `(t_A, t_B)` from the opposite-port joint density.
#[derive(Debug, Clone)]
pub struct JointSampler {
    origin: f64,
    dt: f64,
    len: usize,
    cdf: Vec<f64>,
    total: f64,
}

impl JointSampler {
    pub fn new(density: &JointDensity) -> Result<Self> {
        let len = density.len();
        let span = len as i64;
        let mut weights = Vec::with_capacity(len * (2 * len - 1));
        for m in -span + 1..span {
            weights.extend(density.row(m));
        }
        let total: f64 = weights.iter().map(|w| w.max(0.0)).sum::<f64>() * density.dt() * density.dt();
        Ok(JointSampler { origin: density.origin(), dt: density.dt(), len, cdf: cumulative(weights.into_iter())?, total })
    }

    /// `∫∫ P dt0 dτ`, the opposite-port probability.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let k = pick(&self.cdf, rng.random::<f64>());
        let m = (k / self.len) as f64 - (self.len as f64 - 1.0);
        let n = (k % self.len) as f64;
        let t_a = self.origin + self.dt * (n + rng.random::<f64>());
        // A triangular kernel reproduces the linear interpolation in τ.
        let t_b = t_a + self.dt * (m + rng.random::<f64>() + rng.random::<f64>() - 1.0);
        (t_a, t_b)
    }
}
