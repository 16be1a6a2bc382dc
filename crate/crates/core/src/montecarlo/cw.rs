//! Continuous-wave sources.
//!
//! Each source is a renewal process of singles (Poisson with a dead time of
//! half the coherence window) plus a Poisson process of doublets whose second
//! photon follows within half the window. The doublet rate `R² g2 τc / 2`
//! gives the requested `g²(0)`, and the dead time empties the rest of the dip.
//!
//! Blocks of time are generated in parallel from independent ChaCha
//! substreams. Dead time, pairing, port choice and detector effects are
//! applied in one sequential pass, so the output does not depend on the
//! worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{Channel, TimeTagRecord};

use super::config::ExperimentConfig;
use super::detector::OutputStage;
use super::{SimSummary, BLOCK_GROUP};

/// Largest allowed mean photon number per coherence window.
pub const MAX_OCCUPANCY: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Single,
    Doublet,
    Background,
}

#[derive(Debug, Clone, Copy)]
struct Photon {
    t: u64,
    source: usize,
    kind: Kind,
    u_route: f64,
    u_detect: f64,
}

impl Photon {
    fn key(&self) -> (u64, usize, Kind, u64) {
        (self.t, self.source, self.kind, self.u_route.to_bits())
    }
}

struct Block {
    photons: Vec<Photon>,
    darks: Vec<(u64, Channel)>,
}

#[derive(Clone, Copy)]
struct SourceRates {
    /// Poisson rate of raw singles before the dead time, 1/ps.
    raw: f64,
    doublet: f64,
    background: f64,
    half_window_ps: u64,
}

struct Plan {
    seed: u64,
    block_ps: u64,
    end_ps: u64,
    n_blocks: u64,
    sources: [SourceRates; 2],
    dark: [f64; 2],
}

/// Checks the small-flux condition `R τc ≤ 0.1` for both sources.
pub fn check_occupancy(cfg: &ExperimentConfig) -> Result<()> {
    let (tc_a, tc_i) = cfg.coherence_ns();
    for (name, rate, tc) in [("atom", cfg.atom.rate, tc_a), ("ion", cfg.ion.rate, tc_i)] {
        let occupancy = rate * tc * 1e-9;
        if occupancy > MAX_OCCUPANCY {
            return Err(Error::ModelValidity(format!(
                "{name} mean occupancy per coherence window is {occupancy:.3}, above {MAX_OCCUPANCY}"
            )));
        }
    }
    Ok(())
}

fn plan(cfg: &ExperimentConfig) -> Result<Plan> {
    check_occupancy(cfg)?;
    let (tc_a, tc_i) = cfg.coherence_ns();
    let per_ps = 1e-12;
    let rates = |rate: f64, g2: f64, tc_ns: f64, bg: f64| {
        let tc_s = tc_ns * 1e-9;
        let doublet = rate * rate * g2 * tc_s / 2.0;
        let singles = (rate - 2.0 * doublet).max(0.0);
        let dead = tc_s / 2.0;
        SourceRates {
            raw: singles / (1.0 - singles * dead) * per_ps,
            doublet: doublet * per_ps,
            background: bg * per_ps,
            half_window_ps: (tc_ns * 500.0).round() as u64,
        }
    };
    let block_ps = (cfg.block_len_s() * 1e12).round() as u64;
    let end_ps = (cfg.duration_s * 1e12).round() as u64;
    Ok(Plan {
        seed: cfg.rng_seed,
        block_ps,
        end_ps,
        n_blocks: end_ps.div_ceil(block_ps),
        sources: [
            rates(cfg.atom.rate, cfg.atom.g2_zero, tc_a, cfg.atom.background_rate),
            rates(cfg.ion.rate, cfg.ion.g2_zero, tc_i, cfg.ion.background_rate),
        ],
        dark: [cfg.detectors.dark_rate[0] * per_ps, cfg.detectors.dark_rate[1] * per_ps],
    })
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

fn generate(plan: &Plan, index: u64) -> Block {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(index);
    let start = index * plan.block_ps;
    let len = plan.block_ps.min(plan.end_ps - start);
    let mut photons = Vec::new();
    let uniform_t = |rng: &mut ChaCha8Rng| start + (rng.random::<f64>() * len as f64) as u64;
    for (source, r) in plan.sources.iter().enumerate() {
        let push = |rng: &mut ChaCha8Rng, t: u64, kind: Kind, photons: &mut Vec<Photon>| {
            photons.push(Photon { t, source, kind, u_route: rng.random(), u_detect: rng.random() });
        };
        for _ in 0..poisson(&mut rng, r.raw * len as f64) {
            let t = uniform_t(&mut rng);
            push(&mut rng, t, Kind::Single, &mut photons);
        }
        for _ in 0..poisson(&mut rng, r.doublet * len as f64) {
            let t = uniform_t(&mut rng);
            let partner = t + (rng.random::<f64>() * r.half_window_ps as f64) as u64;
            push(&mut rng, t, Kind::Doublet, &mut photons);
            if partner < plan.end_ps {
                push(&mut rng, partner, Kind::Doublet, &mut photons);
            }
        }
        for _ in 0..poisson(&mut rng, r.background * len as f64) {
            let t = uniform_t(&mut rng);
            push(&mut rng, t, Kind::Background, &mut photons);
        }
    }
    let mut darks = Vec::new();
    for (ch, rate) in [(Channel::A, plan.dark[0]), (Channel::B, plan.dark[1])] {
        for _ in 0..poisson(&mut rng, rate * len as f64) {
            darks.push((uniform_t(&mut rng), ch));
        }
    }
    photons.sort_unstable_by_key(|p| p.key());
    Block { photons, darks }
}

struct Sequencer {
    window_ps: u64,
    overlap: f64,
    efficiency: [f64; 2],
    dead_ps: [u64; 2],
    last_single: [Option<u64>; 2],
    pending: [Option<Photon>; 2],
}

impl Sequencer {
    fn detect<F: FnMut(&[TimeTagRecord]) -> Result<()>>(&self, out: &mut OutputStage<F>, p: &Photon, ch: Channel) {
        let eff = if ch == Channel::A { self.efficiency[0] } else { self.efficiency[1] };
        if p.u_detect < eff {
            out.push(p.t, ch);
        }
    }

    fn single<F: FnMut(&[TimeTagRecord]) -> Result<()>>(&self, out: &mut OutputStage<F>, p: &Photon) {
        let ch = if p.u_route < 0.5 { Channel::A } else { Channel::B };
        self.detect(out, p, ch);
    }

    fn pair<F: FnMut(&[TimeTagRecord]) -> Result<()>>(&self, out: &mut OutputStage<F>, q: &Photon, p: &Photon) {
        let opposite = (1.0 - self.overlap) / 2.0;
        let u = q.u_route;
        let (cq, cp) = if u < opposite / 2.0 {
            (Channel::A, Channel::B)
        } else if u < opposite {
            (Channel::B, Channel::A)
        } else if (u - opposite) / (1.0 - opposite) < 0.5 {
            (Channel::A, Channel::A)
        } else {
            (Channel::B, Channel::B)
        };
        self.detect(out, q, cq);
        self.detect(out, p, cp);
    }

    fn handle<F: FnMut(&[TimeTagRecord]) -> Result<()>>(&mut self, out: &mut OutputStage<F>, p: Photon) {
        for s in 0..2 {
            if let Some(q) = self.pending[s] {
                if p.t - q.t >= self.window_ps {
                    self.single(out, &q);
                    self.pending[s] = None;
                }
            }
        }
        match p.kind {
            Kind::Background => {
                self.single(out, &p);
                return;
            }
            Kind::Single => {
                if let Some(last) = self.last_single[p.source] {
                    if p.t - last < self.dead_ps[p.source] {
                        return;
                    }
                }
                self.last_single[p.source] = Some(p.t);
            }
            Kind::Doublet => {}
        }
        let other = 1 - p.source;
        if let Some(q) = self.pending[other].take() {
            self.pair(out, &q, &p);
        } else {
            if let Some(old) = self.pending[p.source].take() {
                self.single(out, &old);
            }
            self.pending[p.source] = Some(p);
        }
    }

    fn oldest_pending(&self) -> Option<u64> {
        self.pending.iter().flatten().map(|p| p.t).min()
    }

    fn drain<F: FnMut(&[TimeTagRecord]) -> Result<()>>(&mut self, out: &mut OutputStage<F>) {
        let mut rest: Vec<Photon> = self.pending.iter_mut().filter_map(|p| p.take()).collect();
        rest.sort_unstable_by_key(|p| p.key());
        for p in rest {
            self.single(out, &p);
        }
    }
}

/// Streams the CW tag sequence into `sink` in timestamp order.
pub fn simulate_cw_with<F>(cfg: &ExperimentConfig, sink: F) -> Result<SimSummary>
where
    F: FnMut(&[TimeTagRecord]) -> Result<()>,
{
    cfg.validate()?;
    let plan = plan(cfg)?;
    let (tc_a, tc_i) = cfg.coherence_ns();
    let mut seq = Sequencer {
        window_ps: (cfg.interference_window_ns * 1e3).round() as u64,
        overlap: cfg.overlap,
        efficiency: cfg.detectors.efficiency,
        dead_ps: [(tc_a * 500.0).round() as u64, (tc_i * 500.0).round() as u64],
        last_single: [None, None],
        pending: [None, None],
    };
    let mut out = OutputStage::new(&cfg.detectors, cfg.rng_seed, sink);
    let mut carry: Vec<Photon> = Vec::new();
    let mut first = 0;
    while first < plan.n_blocks {
        let last = (first + BLOCK_GROUP).min(plan.n_blocks);
        let blocks: Vec<Block> = (first..last).into_par_iter().map(|i| generate(&plan, i)).collect();
        for (offset, block) in blocks.into_iter().enumerate() {
            let index = first + offset as u64;
            let block_end = ((index + 1) * plan.block_ps).min(plan.end_ps);
            for (t, ch) in block.darks {
                out.push(t, ch);
            }
            let mut photons = std::mem::take(&mut carry);
            photons.extend(block.photons);
            photons.sort_unstable_by_key(|p| p.key());
            let split = photons.partition_point(|p| p.t < block_end);
            carry = photons.split_off(split);
            for p in photons {
                seq.handle(&mut out, p);
            }
            let watermark = seq.oldest_pending().map_or(block_end, |t| t.min(block_end));
            out.flush(watermark)?;
        }
        first = last;
    }
    for p in carry {
        seq.handle(&mut out, p);
    }
    seq.drain(&mut out);
    let counts = out.finish()?;
    Ok(SimSummary { counts, duration_s: cfg.duration_s, blocks: plan.n_blocks })
}
