//! Pulsed sources on a fixed emission sequence.
//!
//! Every period starts with a clock tag. The atom emits in one slot and the
//! ion in each of its slots. When an ion slot coincides with the atom slot
//! and exactly one photon from each source is present, the pair leaves by
//! opposite ports with probability `∫∫ P dt0 dτ` and its detection times are
//! drawn from the joint density; otherwise both photons share one port and
//! keep independent arrival times. All other photons are routed 50:50.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{param, Error, Result};
use crate::io::{Channel, TimeTagRecord};

use super::config::{BuiltModel, ExperimentConfig};
use super::detector::OutputStage;
use super::sampling::{CellSampler, JointSampler};
use super::{SimSummary, BLOCK_GROUP};

const SAME_SLOT_US: f64 = 1e-9;

/// Photon-number distribution for one emission slot.
#[derive(Debug, Clone, Copy)]
struct Emitter {
    p_two: f64,
    p_one_or_two: f64,
}

impl Emitter {
    fn new(name: &str, p: f64, g2: f64) -> Result<Self> {
        let p_two = 0.5 * g2 * p * p;
        if p - 2.0 * p_two < 0.0 {
            return Err(Error::ModelValidity(format!(
                "{name}: g2(0) · p = {} exceeds 1; two-photon probability larger than one-photon",
                g2 * p
            )));
        }
        Ok(Emitter { p_two, p_one_or_two: p - p_two })
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> u8 {
        let u: f64 = rng.random();
        if u < self.p_two {
            2
        } else if u < self.p_one_or_two {
            1
        } else {
            0
        }
    }
}

struct Plan {
    seed: u64,
    period_ps: u64,
    n_periods: u64,
    periods_per_block: u64,
    atom_slot_ns: f64,
    ion_slots_ns: Vec<f64>,
    overlapped: Option<usize>,
    offset_ns: f64,
    atom: Emitter,
    ion: Emitter,
    atom_times: CellSampler,
    ion_times: CellSampler,
    joint: Option<JointSampler>,
    efficiency: [f64; 2],
    background: [f64; 2],
    dark: [f64; 2],
}

fn circular_gap(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

fn plan(cfg: &ExperimentConfig, model: &BuiltModel) -> Result<Plan> {
    let period_us = cfg.pulse_period_us;
    let offset = cfg.arrival_offset_ns;
    let span = model.photon_span_ns(offset);
    let mut overlapped = None;
    for (j, slot) in cfg.ion_slot_offsets_us.iter().enumerate() {
        let gap = circular_gap(*slot, cfg.atom_slot_us, period_us);
        if gap < SAME_SLOT_US {
            overlapped = Some(j);
        } else if gap * 1e3 < span {
            return Err(Error::OverlapAmbiguity(format!(
                "ion slot at {slot} µs is {:.1} ns from the atom slot, inside the {span:.1} ns photon span",
                gap * 1e3
            )));
        }
        for other in &cfg.ion_slot_offsets_us[j + 1..] {
            let gap = circular_gap(*slot, *other, period_us);
            if gap < SAME_SLOT_US {
                return param(format!("ion slot {slot} µs is listed twice"));
            }
            if gap * 1e3 < span {
                return Err(Error::OverlapAmbiguity(format!(
                    "ion slots at {slot} and {other} µs are closer than the {span:.1} ns photon span"
                )));
            }
        }
    }
    if span >= period_us * 1e3 {
        return Err(Error::OverlapAmbiguity(format!("photon span {span:.1} ns exceeds the pulse period")));
    }
    let joint = match overlapped {
        Some(_) if cfg.atom.rate > 0.0 && cfg.ion.rate > 0.0 => Some(JointSampler::new(&model.joint_density(offset)?)?),
        _ => None,
    };
    let period_ps = (period_us * 1e6).round() as u64;
    let n_periods = (cfg.duration_s * 1e12 / period_ps as f64).floor() as u64;
    if n_periods == 0 {
        return param("duration is shorter than one pulse period");
    }
    let periods_per_block = ((cfg.block_len_s() * 1e12 / period_ps as f64).round() as u64).max(1);
    Ok(Plan {
        seed: cfg.rng_seed,
        period_ps,
        n_periods,
        periods_per_block,
        atom_slot_ns: cfg.atom_slot_us * 1e3,
        ion_slots_ns: cfg.ion_slot_offsets_us.iter().map(|s| s * 1e3).collect(),
        overlapped,
        offset_ns: offset,
        atom: Emitter::new("atom", cfg.atom.rate, cfg.atom.g2_zero)?,
        ion: Emitter::new("ion", cfg.ion.rate, cfg.ion.g2_zero)?,
        atom_times: CellSampler::new(&model.atom)?,
        ion_times: CellSampler::new(&model.ion.intensity_envelope())?,
        joint,
        efficiency: cfg.detectors.efficiency,
        background: [cfg.atom.background_rate * 1e-12, cfg.ion.background_rate * 1e-12],
        dark: [cfg.detectors.dark_rate[0] * 1e-12, cfg.detectors.dark_rate[1] * 1e-12],
    })
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).map(|p| p.sample(rng) as u64).unwrap_or(0)
}

struct BlockWriter<'a> {
    plan: &'a Plan,
    events: Vec<(u64, Channel)>,
}

impl BlockWriter<'_> {
    fn at(&self, base: u64, t_ns: f64) -> u64 {
        let ps = (t_ns * 1e3).round();
        if ps <= 0.0 {
            base
        } else {
            base + ps as u64
        }
    }

    fn detect<R: Rng>(&mut self, rng: &mut R, t: u64, ch: Channel) {
        let eff = if ch == Channel::A { self.plan.efficiency[0] } else { self.plan.efficiency[1] };
        if rng.random::<f64>() < eff {
            self.events.push((t, ch));
        }
    }

    fn route<R: Rng>(&mut self, rng: &mut R, t: u64) {
        let ch = if rng.random::<f64>() < 0.5 { Channel::A } else { Channel::B };
        self.detect(rng, t, ch);
    }
}

fn generate(plan: &Plan, overlap_port: f64, index: u64) -> Vec<(u64, Channel)> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    rng.set_stream(index);
    let first = index * plan.periods_per_block;
    let last = (first + plan.periods_per_block).min(plan.n_periods);
    let mut w = BlockWriter { plan, events: Vec::with_capacity(((last - first) as usize) * 2) };
    for k in first..last {
        let base = k * plan.period_ps;
        w.events.push((base, Channel::Clk));
        let n_atom = plan.atom.draw(&mut rng);
        let mut atom_left = n_atom;
        for (j, slot) in plan.ion_slots_ns.iter().enumerate() {
            let n_ion = plan.ion.draw(&mut rng);
            if n_ion == 0 {
                continue;
            }
            if Some(j) == plan.overlapped && n_atom == 1 && n_ion == 1 {
                atom_left = 0;
                if rng.random::<f64>() < overlap_port {
                    let joint = plan.joint.as_ref().expect("joint sampler exists for the overlapped slot");
                    let (ta, tb) = joint.sample(&mut rng);
                    let ta = w.at(base, plan.atom_slot_ns + ta);
                    let tb = w.at(base, plan.atom_slot_ns + tb);
                    w.detect(&mut rng, ta, Channel::A);
                    w.detect(&mut rng, tb, Channel::B);
                } else {
                    let ch = if rng.random::<f64>() < 0.5 { Channel::A } else { Channel::B };
                    let ta = w.at(base, plan.atom_slot_ns + plan.atom_times.sample(&mut rng));
                    let ti = w.at(base, slot + plan.offset_ns + plan.ion_times.sample(&mut rng));
                    w.detect(&mut rng, ta, ch);
                    w.detect(&mut rng, ti, ch);
                }
                continue;
            }
            for _ in 0..n_ion {
                let t = w.at(base, slot + plan.offset_ns + plan.ion_times.sample(&mut rng));
                w.route(&mut rng, t);
            }
        }
        for _ in 0..atom_left {
            let t = w.at(base, plan.atom_slot_ns + plan.atom_times.sample(&mut rng));
            w.route(&mut rng, t);
        }
    }
    let start = first * plan.period_ps;
    let len = (last - first) * plan.period_ps;
    for rate in plan.background {
        for _ in 0..poisson(&mut rng, rate * len as f64) {
            let t = start + (rng.random::<f64>() * len as f64) as u64;
            w.route(&mut rng, t);
        }
    }
    for (ch, rate) in [(Channel::A, plan.dark[0]), (Channel::B, plan.dark[1])] {
        for _ in 0..poisson(&mut rng, rate * len as f64) {
            let t = start + (rng.random::<f64>() * len as f64) as u64;
            w.events.push((t, ch));
        }
    }
    w.events.sort_unstable();
    w.events
}

/// Streams the pulsed tag sequence into `sink` in timestamp order.
pub fn simulate_pulsed_with<F>(cfg: &ExperimentConfig, sink: F) -> Result<SimSummary>
where
    F: FnMut(&[TimeTagRecord]) -> Result<()>,
{
    let model = cfg.build()?;
    let plan = plan(cfg, &model)?;
    let overlap_port = plan.joint.as_ref().map_or(0.0, |j| j.total());
    let n_blocks = plan.n_periods.div_ceil(plan.periods_per_block);
    let mut out = OutputStage::new(&cfg.detectors, cfg.rng_seed, sink);
    let mut first = 0;
    while first < n_blocks {
        let last = (first + BLOCK_GROUP).min(n_blocks);
        let blocks: Vec<Vec<(u64, Channel)>> =
            (first..last).into_par_iter().map(|i| generate(&plan, overlap_port, i)).collect();
        for (offset, events) in blocks.into_iter().enumerate() {
            let index = first + offset as u64;
            for (t, ch) in events {
                out.push(t, ch);
            }
            let block_end = ((index + 1) * plan.periods_per_block).min(plan.n_periods) * plan.period_ps;
            out.flush(block_end)?;
        }
        first = last;
    }
    let counts = out.finish()?;
    Ok(SimSummary { counts, duration_s: plan.n_periods as f64 * plan.period_ps as f64 * 1e-12, blocks: n_blocks })
}

/// Opposite-port probability of an overlapped pair for this configuration.
pub fn overlapped_opposite_port_probability(cfg: &ExperimentConfig) -> Result<f64> {
    let model = cfg.build()?;
    Ok(model.joint_density(cfg.arrival_offset_ns)?.opposite_port_probability())
}
