//! Final ordering stage: holds detection events until no earlier event can
//! arrive, applies dead time and afterpulsing, and hands ordered chunks to a
//! sink.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::Result;
use crate::io::{Channel, TimeTagRecord};

use super::config::DetectorSpec;

const CHUNK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    t: u64,
    ch: Channel,
    afterpulse: bool,
}

pub(crate) struct OutputStage<F> {
    heap: BinaryHeap<Reverse<Pending>>,
    dead_time_ps: u64,
    afterpulse_p: f64,
    afterpulse_delay: Option<Exp<f64>>,
    last: [Option<u64>; 2],
    rng: ChaCha8Rng,
    out: Vec<TimeTagRecord>,
    sink: F,
    pub counts: [u64; 3],
}

impl<F: FnMut(&[TimeTagRecord]) -> Result<()>> OutputStage<F> {
    pub fn new(det: &DetectorSpec, seed: u64, sink: F) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        OutputStage {
            heap: BinaryHeap::new(),
            dead_time_ps: (det.dead_time_ns * 1e3).round() as u64,
            afterpulse_p: det.afterpulse_probability,
            afterpulse_delay: Exp::new(1.0 / (det.afterpulse_delay_ns * 1e3)).ok(),
            last: [None, None],
            rng,
            out: Vec::with_capacity(CHUNK),
            sink,
            counts: [0; 3],
        }
    }

    pub fn push(&mut self, t: u64, ch: Channel) {
        self.heap.push(Reverse(Pending { t, ch, afterpulse: false }));
    }

    fn emit(&mut self, t: u64, ch: Channel) -> Result<()> {
        self.out.push(TimeTagRecord::new(ch, t));
        self.counts[ch.code() as usize] += 1;
        if self.out.len() >= CHUNK {
            (self.sink)(&self.out)?;
            self.out.clear();
        }
        Ok(())
    }

    /// Releases every held event strictly earlier than `watermark`.
    pub fn flush(&mut self, watermark: u64) -> Result<()> {
        while let Some(Reverse(top)) = self.heap.peek().copied() {
            if top.t >= watermark {
                break;
            }
            self.heap.pop();
            let idx = match top.ch {
                Channel::Clk => {
                    self.emit(top.t, top.ch)?;
                    continue;
                }
                Channel::A => 0,
                Channel::B => 1,
            };
            if let Some(prev) = self.last[idx] {
                if top.t - prev < self.dead_time_ps {
                    continue;
                }
            }
            self.last[idx] = Some(top.t);
            self.emit(top.t, top.ch)?;
            if !top.afterpulse && self.afterpulse_p > 0.0 && self.rng.random::<f64>() < self.afterpulse_p {
                if let Some(exp) = &self.afterpulse_delay {
                    let delay = self.dead_time_ps + exp.sample(&mut self.rng).round() as u64;
                    self.heap.push(Reverse(Pending { t: top.t + delay.max(1), ch: top.ch, afterpulse: true }));
                }
            }
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<[u64; 3]> {
        self.flush(u64::MAX)?;
        if !self.out.is_empty() {
            (self.sink)(&self.out)?;
        }
        Ok(self.counts)
    }
}
