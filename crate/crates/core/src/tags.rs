//! Correlation analysis of time-tag streams: start-stop histograms, g²(τ),
//! the clock-referenced coincidence map, software gating, the shifted
//! non-overlapped reference and background subtraction.
//!
//! Delay bins are centred on integer multiples of the bin width and all
//! pairing runs on integer picoseconds, so results do not depend on how a
//! stream is chunked.

use std::collections::VecDeque;
use std::io::Write;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::interference::GateWindow;
use crate::io::{Channel, TagStream, TimeTagRecord};

fn poisson_err(n: f64) -> f64 {
    n.max(1.0).sqrt()
}

/// Histogram over delay with raw counts, a subtracted baseline and a scale:
/// `value = (raw − baseline) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoincidenceHistogram {
    edges: Vec<f64>,
    raw: Vec<f64>,
    raw_err: Vec<f64>,
    baseline: Vec<f64>,
    baseline_err: Vec<f64>,
    scale: f64,
    scale_err: f64,
}

impl CoincidenceHistogram {
    /// Raw counts with Poisson errors; a zero bin carries the error of one
    /// count.
    pub fn from_counts(edges: Vec<f64>, counts: &[u64]) -> Result<Self> {
        let raw: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
        let err = raw.iter().map(|c| poisson_err(*c)).collect();
        Self::with_errors(edges, raw, err)
    }

    pub fn with_errors(edges: Vec<f64>, raw: Vec<f64>, raw_err: Vec<f64>) -> Result<Self> {
        if edges.len() != raw.len() + 1 || raw.len() != raw_err.len() || raw.is_empty() {
            return param("histogram needs n counts, n errors and n + 1 edges");
        }
        if edges.windows(2).any(|w| !(w[1] > w[0])) {
            return param("bin edges must be strictly increasing");
        }
        if raw.iter().any(|c| !(*c >= 0.0)) || raw_err.iter().any(|e| !(*e >= 0.0)) {
            return param("raw counts and errors must be nonnegative");
        }
        let n = raw.len();
        Ok(CoincidenceHistogram {
            edges,
            raw,
            raw_err,
            baseline: vec![0.0; n],
            baseline_err: vec![0.0; n],
            scale: 1.0,
            scale_err: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn bin_width(&self) -> f64 {
        self.edges[1] - self.edges[0]
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_errors(&self) -> &[f64] {
        &self.raw_err
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    pub fn value(&self, i: usize) -> f64 {
        (self.raw[i] - self.baseline[i]) / self.scale
    }

    pub fn error(&self, i: usize) -> f64 {
        let net = (self.raw_err[i].powi(2) + self.baseline_err[i].powi(2)).sqrt() / self.scale;
        let rel_scale = self.scale_err / self.scale;
        (net.powi(2) + (self.value(i) * rel_scale).powi(2)).sqrt()
    }

    pub fn errors(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.error(i)).collect()
    }

    /// Index of the bin containing τ = 0.
    pub fn center_index(&self) -> Option<usize> {
        self.index_of(0.0)
    }

    pub fn index_of(&self, tau: f64) -> Option<usize> {
        if tau < self.edges[0] || tau >= *self.edges.last().unwrap() {
            return None;
        }
        Some(self.edges.partition_point(|e| *e <= tau) - 1)
    }

    /// Mean value and error over `bins` bins centred on τ = 0.
    pub fn center_value(&self, bins: usize) -> Result<(f64, f64)> {
        let c = self.center_index().ok_or_else(|| Error::Range("histogram does not contain τ = 0".into()))?;
        let bins = bins.max(1);
        let lo = c as i64 - (bins as i64 - 1) / 2;
        let hi = lo + bins as i64;
        if lo < 0 || hi as usize > self.len() {
            return Err(Error::Range(format!("{bins} centre bins exceed the histogram")));
        }
        let range = lo as usize..hi as usize;
        let n = bins as f64;
        let v = range.clone().map(|i| self.value(i)).sum::<f64>() / n;
        let e = range.map(|i| self.error(i).powi(2)).sum::<f64>().sqrt() / n;
        Ok((v, e))
    }

    pub fn with_baseline(mut self, level: Vec<f64>, err: Vec<f64>) -> Result<Self> {
        if level.len() != self.len() || err.len() != self.len() {
            return param("baseline length does not match the histogram");
        }
        self.baseline = level;
        self.baseline_err = err;
        Ok(self)
    }

    pub fn with_scale(mut self, scale: f64, err: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Normalization(format!("scale must be positive, got {scale}")));
        }
        self.scale = scale;
        self.scale_err = err.max(0.0);
        Ok(self)
    }

    /// Merges groups of `factor` adjacent bins; counts add, errors add in
    /// quadrature. Trailing bins that do not fill a group are dropped.
    pub fn rebin(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return param("rebin factor must be positive");
        }
        let groups = self.len() / factor;
        if groups == 0 {
            return param("rebin factor exceeds the number of bins");
        }
        let sum = |v: &[f64], g: usize| v[g * factor..(g + 1) * factor].iter().sum::<f64>();
        let quad = |v: &[f64], g: usize| v[g * factor..(g + 1) * factor].iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(CoincidenceHistogram {
            edges: (0..=groups).map(|g| self.edges[g * factor]).collect(),
            raw: (0..groups).map(|g| sum(&self.raw, g)).collect(),
            raw_err: (0..groups).map(|g| quad(&self.raw_err, g)).collect(),
            baseline: (0..groups).map(|g| sum(&self.baseline, g)).collect(),
            baseline_err: (0..groups).map(|g| quad(&self.baseline_err, g)).collect(),
            scale: self.scale,
            scale_err: self.scale_err,
        })
    }

    /// Bins whose centres lie in `[lo, hi]`.
    pub fn crop(&self, lo: f64, hi: f64) -> Result<Self> {
        let centers = self.centers();
        let idx: Vec<usize> = (0..self.len()).filter(|i| centers[*i] >= lo && centers[*i] <= hi).collect();
        let (Some(&a), Some(&b)) = (idx.first(), idx.last()) else {
            return Err(Error::Range(format!("no bins between {lo} and {hi} ns")));
        };
        Ok(CoincidenceHistogram {
            edges: self.edges[a..=b + 1].to_vec(),
            raw: self.raw[a..=b].to_vec(),
            raw_err: self.raw_err[a..=b].to_vec(),
            baseline: self.baseline[a..=b].to_vec(),
            baseline_err: self.baseline_err[a..=b].to_vec(),
            scale: self.scale,
            scale_err: self.scale_err,
        })
    }

    /// Mean raw count over bins with `|τ| >= inner`, and its Poisson error.
    pub fn outer_mean(&self, inner: f64) -> (f64, f64, usize) {
        let centers = self.centers();
        let (mut sum, mut n) = (0.0, 0usize);
        for (c, r) in centers.iter().zip(&self.raw) {
            if c.abs() >= inner {
                sum += r;
                n += 1;
            }
        }
        if n == 0 {
            return (0.0, 0.0, 0);
        }
        (sum / n as f64, sum.sqrt() / n as f64, n)
    }

    /// `tau_ns,counts,err` with the normalized value in `counts`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"tau_ns,counts,err\n")?;
        for (i, c) in self.centers().iter().enumerate() {
            writeln!(out, "{},{},{}", c, self.value(i), self.error(i))?;
        }
        Ok(())
    }
}

fn centred_bins(tau_max_ps: i64, bin_ps: i64) -> Result<(i64, Vec<f64>)> {
    if bin_ps <= 0 {
        return param("bin width must be at least 1 ps");
    }
    if tau_max_ps < 0 {
        return param("delay range must be nonnegative");
    }
    let k = tau_max_ps / bin_ps;
    let edges = (-k..=k + 1).map(|j| (j as f64 - 0.5) * bin_ps as f64 * 1e-3).collect();
    Ok((k, edges))
}

fn bin_index(tau: i64, k: i64, bin_ps: i64) -> Option<usize> {
    let idx = (tau + bin_ps / 2).div_euclid(bin_ps) + k;
    if idx < 0 || idx > 2 * k {
        None
    } else {
        Some(idx as usize)
    }
}

/// Streaming start-stop correlator between channels A and B counting every
/// pair with `|t_B − t_A| ≤ τ_max`.
#[derive(Debug, Clone)]
pub struct Correlator {
    tau_max_ps: i64,
    bin_ps: i64,
    k: i64,
    counts: Vec<u64>,
    recent_a: VecDeque<i64>,
    recent_b: VecDeque<i64>,
    singles: [u64; 2],
    first: Option<u64>,
    last: u64,
}

impl Correlator {
    pub fn new(tau_max_ns: f64, bin_ns: f64) -> Result<Self> {
        let tau_max_ps = (tau_max_ns * 1e3).round() as i64;
        let bin_ps = (bin_ns * 1e3).round() as i64;
        let (k, _) = centred_bins(tau_max_ps, bin_ps)?;
        Ok(Correlator {
            tau_max_ps,
            bin_ps,
            k,
            counts: vec![0; (2 * k + 1) as usize],
            recent_a: VecDeque::new(),
            recent_b: VecDeque::new(),
            singles: [0, 0],
            first: None,
            last: 0,
        })
    }

    pub fn push(&mut self, records: &[TimeTagRecord]) {
        for r in records {
            let t = r.timestamp_ps as i64;
            let (mine, other, sign) = match r.channel {
                Channel::A => (&mut self.recent_a, &mut self.recent_b, -1),
                Channel::B => (&mut self.recent_b, &mut self.recent_a, 1),
                Channel::Clk => continue,
            };
            self.first.get_or_insert(r.timestamp_ps);
            self.last = r.timestamp_ps;
            while other.front().is_some_and(|s| t - s > self.tau_max_ps) {
                other.pop_front();
            }
            for s in other.iter() {
                let tau = sign * (t - s);
                if let Some(i) = bin_index(tau, self.k, self.bin_ps) {
                    self.counts[i] += 1;
                }
            }
            while mine.front().is_some_and(|s| t - s > self.tau_max_ps) {
                mine.pop_front();
            }
            mine.push_back(t);
            let idx = if r.channel == Channel::A { 0 } else { 1 };
            self.singles[idx] += 1;
        }
    }

    /// Singles on A and B.
    pub fn singles(&self) -> [u64; 2] {
        self.singles
    }

    /// Time between the first and last detection, s.
    pub fn span_s(&self) -> f64 {
        self.first.map_or(0.0, |f| (self.last - f) as f64 * 1e-12)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Histogram scaled by the accidental level `N_A N_B bin / T`.
    pub fn g2_analytic(&self) -> Result<CoincidenceHistogram> {
        let [na, nb] = self.singles();
        let span = self.span_s();
        if na == 0 || nb == 0 || span <= 0.0 {
            return Err(Error::Normalization("stream too short for the accidental level".into()));
        }
        let level = na as f64 * nb as f64 * self.bin_ps as f64 * 1e-12 / span;
        self.histogram().with_scale(level, 0.0)
    }

    pub fn histogram(&self) -> CoincidenceHistogram {
        let (_, edges) = centred_bins(self.tau_max_ps, self.bin_ps).expect("validated at construction");
        CoincidenceHistogram::from_counts(edges, &self.counts).expect("edges match counts")
    }
}

/// Raw A–B delay histogram of a stream.
pub fn correlation_histogram(stream: &TagStream, tau_max_ns: f64, bin_ns: f64) -> Result<CoincidenceHistogram> {
    let mut c = Correlator::new(tau_max_ns, bin_ns)?;
    c.push(stream.records());
    Ok(c.histogram())
}

/// Scales a raw correlation histogram by its mean over the outer 20% of the
/// delay range.
pub fn normalize_plateau(hist: CoincidenceHistogram) -> Result<CoincidenceHistogram> {
    let tau_max = hist.edges().last().copied().unwrap_or(0.0);
    let (mean, err, _) = hist.outer_mean(0.8 * tau_max);
    if !(mean > 0.0) {
        return Err(Error::Normalization("no counts in the outer 20% of the delay range".into()));
    }
    hist.with_scale(mean, err)
}

/// g²(τ) from an HBT stream, normalized by the outer-plateau level.
pub fn g2_histogram(stream: &TagStream, tau_max_ns: f64, bin_ns: f64) -> Result<CoincidenceHistogram> {
    if !stream.has_channel(Channel::A) || !stream.has_channel(Channel::B) {
        return Err(Error::Input("g2 needs detections on both A and B".into()));
    }
    normalize_plateau(correlation_histogram(stream, tau_max_ns, bin_ns)?)
}

/// g²(τ) normalized by the accidental level `N_A N_B bin / T`.
pub fn g2_histogram_analytic(stream: &TagStream, tau_max_ns: f64, bin_ns: f64) -> Result<CoincidenceHistogram> {
    let mut c = Correlator::new(tau_max_ns, bin_ns)?;
    c.push(stream.records());
    c.g2_analytic()
}

/// g²(0) read two ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct G2Summary {
    pub zero_bin: f64,
    pub zero_bin_err: f64,
    pub dip_min: f64,
    pub dip_min_err: f64,
    pub dip_min_tau_ns: f64,
}

/// Value of the τ = 0 bin and of the lowest bin within `search_ns` of zero.
pub fn g2_summary(hist: &CoincidenceHistogram, search_ns: f64) -> Result<G2Summary> {
    let c = hist.center_index().ok_or_else(|| Error::Range("histogram does not contain τ = 0".into()))?;
    let centers = hist.centers();
    let mut best = c;
    for i in 0..hist.len() {
        if centers[i].abs() <= search_ns && hist.value(i) < hist.value(best) {
            best = i;
        }
    }
    Ok(G2Summary {
        zero_bin: hist.value(c),
        zero_bin_err: hist.error(c),
        dip_min: hist.value(best),
        dip_min_err: hist.error(best),
        dip_min_tau_ns: centers[best],
    })
}

/// Two-dimensional histogram over time since the last clock tag (rows) and
/// A–B delay (columns), with the A and B singles profiles per row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoincidenceMap {
    period_ps: i64,
    t_bin_ps: i64,
    tau_bin_ps: i64,
    tau_max_ps: i64,
    k: i64,
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
    singles_a: Vec<u64>,
    singles_b: Vec<u64>,
    clocks: u64,
}

impl CoincidenceMap {
    pub fn new(period_us: f64, t_bin_ns: f64, tau_bin_ns: f64, tau_max_us: f64) -> Result<Self> {
        let period_ps = (period_us * 1e6).round() as i64;
        let t_bin_ps = (t_bin_ns * 1e3).round() as i64;
        let tau_bin_ps = (tau_bin_ns * 1e3).round() as i64;
        let tau_max_ps = (tau_max_us * 1e6).round() as i64;
        if period_ps <= 0 || t_bin_ps <= 0 {
            return param("period and time bin must be positive");
        }
        let (k, _) = centred_bins(tau_max_ps, tau_bin_ps)?;
        let rows = (period_ps + t_bin_ps - 1) / t_bin_ps;
        let cols = 2 * k + 1;
        let cells = rows as usize * cols as usize;
        if cells > 1 << 28 {
            return param(format!("map of {rows} × {cols} bins is too large"));
        }
        Ok(CoincidenceMap {
            period_ps,
            t_bin_ps,
            tau_bin_ps,
            tau_max_ps,
            k,
            rows: rows as usize,
            cols: cols as usize,
            counts: vec![0; cells],
            singles_a: vec![0; rows as usize],
            singles_b: vec![0; rows as usize],
            clocks: 0,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn period_ns(&self) -> f64 {
        self.period_ps as f64 * 1e-3
    }

    pub fn t_bin_ns(&self) -> f64 {
        self.t_bin_ps as f64 * 1e-3
    }

    pub fn tau_bin_ns(&self) -> f64 {
        self.tau_bin_ps as f64 * 1e-3
    }

    pub fn clocks(&self) -> u64 {
        self.clocks
    }

    pub fn count(&self, row: usize, col: usize) -> u64 {
        self.counts[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[u64] {
        &self.counts[row * self.cols..(row + 1) * self.cols]
    }

    pub fn singles_a(&self) -> &[u64] {
        &self.singles_a
    }

    pub fn singles_b(&self) -> &[u64] {
        &self.singles_b
    }

    fn row_at(&self, since_clk_ps: i64) -> usize {
        ((since_clk_ps.rem_euclid(self.period_ps) / self.t_bin_ps) as usize).min(self.rows - 1)
    }

    /// Centre of row `r` in ns after the clock tag.
    pub fn row_center_ns(&self, r: usize) -> f64 {
        (r as f64 + 0.5) * self.t_bin_ns()
    }

    pub fn tau_edges(&self) -> Vec<f64> {
        centred_bins(self.tau_max_ps, self.tau_bin_ps).expect("validated").1
    }

    /// Bin-wise sum with a map of the same layout.
    pub fn merge(&mut self, other: &CoincidenceMap) -> Result<()> {
        let same = (self.period_ps, self.t_bin_ps, self.tau_bin_ps, self.tau_max_ps)
            == (other.period_ps, other.t_bin_ps, other.tau_bin_ps, other.tau_max_ps);
        if !same {
            return param("cannot merge maps with different binning");
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.singles_a.iter_mut().zip(&other.singles_a) {
            *a += b;
        }
        for (a, b) in self.singles_b.iter_mut().zip(&other.singles_b) {
            *a += b;
        }
        self.clocks += other.clocks;
        Ok(())
    }

    /// Rows whose centre lies in any of the windows (ns after the clock).
    pub fn gated_rows(&self, windows: &[GateWindow]) -> Result<Vec<bool>> {
        if windows.is_empty() {
            return param("gate needs at least one window");
        }
        let period = self.period_ns();
        for w in windows {
            if w.start < 0.0 || w.end > period || !(w.start < w.end) {
                return param(format!("gate window [{}, {}] ns lies outside [0, {period}) ns", w.start, w.end));
            }
        }
        Ok((0..self.rows).map(|r| windows.iter().any(|w| w.contains(self.row_center_ns(r)))).collect())
    }
}

/// Streaming builder for a [`CoincidenceMap`].
#[derive(Debug, Clone)]
pub struct CoincidenceMapBuilder {
    map: CoincidenceMap,
    last_clk: Option<i64>,
    recent_a: VecDeque<(i64, usize)>,
    recent_b: VecDeque<i64>,
    dropped_a: u64,
}

impl CoincidenceMapBuilder {
    pub fn new(period_us: f64, t_bin_ns: f64, tau_bin_ns: f64, tau_max_us: f64) -> Result<Self> {
        Ok(CoincidenceMapBuilder {
            map: CoincidenceMap::new(period_us, t_bin_ns, tau_bin_ns, tau_max_us)?,
            last_clk: None,
            recent_a: VecDeque::new(),
            recent_b: VecDeque::new(),
            dropped_a: 0,
        })
    }

    pub fn push(&mut self, records: &[TimeTagRecord]) {
        let m = &mut self.map;
        for r in records {
            let t = r.timestamp_ps as i64;
            match r.channel {
                Channel::Clk => {
                    self.last_clk = Some(t);
                    m.clocks += 1;
                }
                Channel::A => {
                    let Some(row) = self.last_clk.map(|clk| m.row_at(t - clk)) else {
                        self.dropped_a += 1;
                        continue;
                    };
                    m.singles_a[row] += 1;
                    while self.recent_b.front().is_some_and(|s| t - s > m.tau_max_ps) {
                        self.recent_b.pop_front();
                    }
                    let base = row * m.cols;
                    for s in &self.recent_b {
                        if let Some(c) = bin_index(s - t, m.k, m.tau_bin_ps) {
                            m.counts[base + c] += 1;
                        }
                    }
                    while self.recent_a.front().is_some_and(|(s, _)| t - s > m.tau_max_ps) {
                        self.recent_a.pop_front();
                    }
                    self.recent_a.push_back((t, row));
                }
                Channel::B => {
                    if let Some(clk) = self.last_clk {
                        let row = m.row_at(t - clk);
                        m.singles_b[row] += 1;
                    }
                    while self.recent_a.front().is_some_and(|(s, _)| t - s > m.tau_max_ps) {
                        self.recent_a.pop_front();
                    }
                    for (s, row) in &self.recent_a {
                        if let Some(c) = bin_index(t - s, m.k, m.tau_bin_ps) {
                            m.counts[row * m.cols + c] += 1;
                        }
                    }
                    while self.recent_b.front().is_some_and(|s| t - s > m.tau_max_ps) {
                        self.recent_b.pop_front();
                    }
                    self.recent_b.push_back(t);
                }
            }
        }
    }

    /// A detections seen before the first clock tag.
    pub fn dropped(&self) -> u64 {
        self.dropped_a
    }

    pub fn finish(self) -> Result<CoincidenceMap> {
        if self.map.clocks == 0 {
            return Err(Error::Input("stream has no CLK tags".into()));
        }
        Ok(self.map)
    }
}

/// Builds the coincidence map of a whole stream.
pub fn coincidence_map(
    stream: &TagStream,
    period_us: f64,
    t_bin_ns: f64,
    tau_bin_ns: f64,
    tau_max_us: f64,
) -> Result<CoincidenceMap> {
    let mut b = CoincidenceMapBuilder::new(period_us, t_bin_ns, tau_bin_ns, tau_max_us)?;
    b.push(stream.records());
    b.finish()
}

/// Sums the map rows inside the windows into `C(τ)`.
pub fn gate_and_project(map: &CoincidenceMap, windows: &[GateWindow]) -> Result<CoincidenceHistogram> {
    let rows = map.gated_rows(windows)?;
    let mut counts = vec![0u64; map.cols];
    for (r, keep) in rows.iter().enumerate() {
        if *keep {
            for (c, v) in counts.iter_mut().zip(map.row(r)) {
                *c += v;
            }
        }
    }
    CoincidenceHistogram::from_counts(map.tau_edges(), &counts)
}

/// Fraction of the period covered by the gated rows.
pub fn gate_duty(map: &CoincidenceMap, windows: &[GateWindow]) -> Result<f64> {
    let rows = map.gated_rows(windows)?;
    Ok(rows.iter().filter(|k| **k).count() as f64 * map.t_bin_ns() / map.period_ns())
}

/// Averages `C(τ + τ_k)` over `k`, with `τ_k = half_period + k · period`.
/// The result covers the bins for which every shifted copy is inside the
/// input.
pub fn shifted_reference(
    hist: &CoincidenceHistogram,
    period_us: f64,
    half_period_us: f64,
    k_range: RangeInclusive<i64>,
) -> Result<CoincidenceHistogram> {
    let ks: Vec<i64> = k_range.collect();
    if ks.is_empty() {
        return param("shift range is empty");
    }
    let width = hist.bin_width();
    let mut shifts = Vec::with_capacity(ks.len());
    for k in &ks {
        let tau_k = (half_period_us + *k as f64 * period_us) * 1e3;
        let s = tau_k / width;
        if (s - s.round()).abs() > 1e-6 {
            return param(format!("shift {tau_k} ns is not a whole number of {width} ns bins"));
        }
        shifts.push(s.round() as i64);
    }
    let n = hist.len() as i64;
    let lo = shifts.iter().map(|s| -s).max().unwrap().max(0);
    let hi = shifts.iter().map(|s| n - 1 - s).min().unwrap().min(n - 1);
    if lo > hi {
        return Err(Error::Range(format!(
            "shifts up to {} ns exceed the ±{} ns histogram",
            shifts.iter().map(|s| s.abs()).max().unwrap() as f64 * width,
            0.5 * (hist.edges().last().unwrap() - hist.edges()[0])
        )));
    }
    let m = ks.len() as f64;
    let mut raw = Vec::new();
    let mut err = Vec::new();
    let mut base = Vec::new();
    let mut base_err = Vec::new();
    for j in lo..=hi {
        let src = shifts.iter().map(|s| (j + s) as usize);
        raw.push(src.clone().map(|i| hist.raw[i]).sum::<f64>() / m);
        err.push(src.clone().map(|i| hist.raw_err[i].powi(2)).sum::<f64>().sqrt() / m);
        base.push(src.clone().map(|i| hist.baseline[i]).sum::<f64>() / m);
        base_err.push(src.map(|i| hist.baseline_err[i].powi(2)).sum::<f64>().sqrt() / m);
    }
    let edges = hist.edges[lo as usize..=(hi + 1) as usize].to_vec();
    let out = CoincidenceHistogram::with_errors(edges, raw, err)?;
    out.with_baseline(base, base_err)?.with_scale(hist.scale, hist.scale_err)
}

/// Flat accidental level per bin:
/// `singles_A · singles_B · bin · duration · gate_duty`.
pub fn expected_background(singles_a: f64, singles_b: f64, gate_duty: f64, bin_ns: f64, duration_s: f64) -> Result<f64> {
    if [singles_a, singles_b, gate_duty, bin_ns, duration_s].iter().any(|v| !(*v >= 0.0)) {
        return param("background inputs must be nonnegative");
    }
    Ok(singles_a * singles_b * bin_ns * 1e-9 * duration_s * gate_duty)
}

/// Accidental coincidences involving a dark count, per delay bin of the
/// gated projection. Uses the measured singles profiles, so periodic
/// structure in the partner channel is kept: A darks in the gate against the
/// full B profile, plus the remaining gated A singles against flat B darks.
pub fn expected_background_curve(
    map: &CoincidenceMap,
    windows: &[GateWindow],
    dark_a: f64,
    dark_b: f64,
) -> Result<Vec<f64>> {
    if !(dark_a >= 0.0 && dark_b >= 0.0) {
        return param("dark rates must be nonnegative");
    }
    let rows = map.gated_rows(windows)?;
    let periods = map.clocks as f64;
    let t_bin_s = map.t_bin_ns() * 1e-9;
    let tau_bin_s = map.tau_bin_ns() * 1e-9;
    let dark_a_row = dark_a * t_bin_s * periods;
    let b_density: Vec<f64> = map.singles_b.iter().map(|c| *c as f64 / map.t_bin_ns()).collect();
    let edges = map.tau_edges();
    let mut curve = vec![0.0; map.cols];
    for (r, keep) in rows.iter().enumerate() {
        if !*keep {
            continue;
        }
        let t = map.row_center_ns(r);
        let a_real = (map.singles_a[r] as f64 - dark_a_row).max(0.0);
        for (c, slot) in curve.iter_mut().enumerate() {
            let tau = 0.5 * (edges[c] + edges[c + 1]);
            let target = (t + tau).rem_euclid(map.period_ns());
            let row_b = ((target / map.t_bin_ns()) as usize).min(map.rows - 1);
            let b_per_period = b_density[row_b] * map.tau_bin_ns() / periods.max(1.0);
            *slot += dark_a_row * b_per_period + a_real * dark_b * tau_bin_s;
        }
    }
    Ok(curve)
}

/// Background to subtract before normalizing.
#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Flat { level: f64, err: f64 },
    Curve { level: Vec<f64>, err: Vec<f64> },
}

impl Background {
    pub fn none() -> Self {
        Background::Flat { level: 0.0, err: 0.0 }
    }

    /// Background known exactly (no uncertainty).
    pub fn curve(level: Vec<f64>) -> Self {
        let err = vec![0.0; level.len()];
        Background::Curve { level, err }
    }

    fn resolve(&self, edges: &[f64], full_edges: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = edges.len() - 1;
        match self {
            Background::Flat { level, err } => Ok((vec![*level; n], vec![*err; n])),
            Background::Curve { level, err } => {
                if level.len() == n {
                    return Ok((level.clone(), err.clone()));
                }
                // A curve on the uncropped layout is aligned by edge.
                let full = full_edges.ok_or_else(|| Error::Parameter("background curve length mismatch".into()))?;
                let start = full
                    .iter()
                    .position(|e| (e - edges[0]).abs() < 1e-9)
                    .ok_or_else(|| Error::Parameter("background curve does not cover the histogram".into()))?;
                if start + n > level.len() {
                    return param("background curve does not cover the histogram");
                }
                Ok((level[start..start + n].to_vec(), err[start..start + n].to_vec()))
            }
        }
    }
}

/// How the common scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ScaleMode {
    /// Mean of the background-subtracted reference over its outer 20%.
    OuterPlateau,
    /// Mean of the background-subtracted reference over `bins` centre bins.
    ReferenceCenter { bins: usize },
    Fixed(f64),
}

/// Subtracts the background from both curves and divides both by one scale
/// taken from the reference. `full_edges` locates a background curve given
/// on the uncropped delay axis.
pub fn subtract_and_normalize(
    signal: &CoincidenceHistogram,
    background: &Background,
    reference: &CoincidenceHistogram,
    mode: ScaleMode,
    full_edges: Option<&[f64]>,
) -> Result<(CoincidenceHistogram, CoincidenceHistogram)> {
    let (sb, sbe) = background.resolve(signal.edges(), full_edges)?;
    let (rb, rbe) = background.resolve(reference.edges(), full_edges)?;
    let signal = signal.clone().with_baseline(sb, sbe)?.with_scale(1.0, 0.0)?;
    let reference = reference.clone().with_baseline(rb, rbe)?.with_scale(1.0, 0.0)?;
    let (scale, err) = match mode {
        ScaleMode::Fixed(s) => (s, 0.0),
        ScaleMode::ReferenceCenter { bins } => reference.center_value(bins)?,
        ScaleMode::OuterPlateau => {
            let tau_max = reference.edges().last().copied().unwrap_or(0.0);
            let centers = reference.centers();
            let idx: Vec<usize> = (0..reference.len()).filter(|i| centers[*i].abs() >= 0.8 * tau_max).collect();
            if idx.is_empty() {
                return Err(Error::Normalization("reference has no outer plateau".into()));
            }
            let n = idx.len() as f64;
            let v = idx.iter().map(|i| reference.value(*i)).sum::<f64>() / n;
            let e = idx.iter().map(|i| reference.error(*i).powi(2)).sum::<f64>().sqrt() / n;
            (v, e)
        }
    };
    if !(scale > 0.0) {
        return Err(Error::Normalization(format!("reference plateau is {scale}, not positive")));
    }
    Ok((signal.with_scale(scale, err)?, reference.with_scale(scale, err)?))
}

/// `V = (n⊥ − n∥)/n⊥` from the centre bins of two normalized histograms,
/// with first-order error propagation.
pub fn visibility_from_histograms(
    n_par: &CoincidenceHistogram,
    n_perp: &CoincidenceHistogram,
    center_bins: usize,
) -> Result<(f64, f64)> {
    let (q, sq) = n_par.center_value(center_bins)?;
    let (p, sp) = n_perp.center_value(center_bins)?;
    if p == 0.0 {
        return Err(Error::UndefinedVisibility("perpendicular centre level is zero".into()));
    }
    let v = (p - q) / p;
    let sigma = ((q / (p * p) * sp).powi(2) + (sq / p).powi(2)).sqrt();
    Ok((v, sigma))
}

/// Settings for the gated, shift-referenced analysis of a pulsed stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulsedAnalysisSpec {
    pub period_us: f64,
    /// Offset of the non-overlapped reference shifts, µs.
    pub half_period_us: f64,
    pub k_min: i64,
    pub k_max: i64,
    pub t_bin_ns: f64,
    pub tau_bin_ns: f64,
    pub tau_max_us: f64,
    /// Gate windows in ns after the clock tag.
    pub gates: Vec<GateWindow>,
    #[serde(default)]
    pub dark_rate: [f64; 2],
    #[serde(default = "one_bin")]
    pub center_bins: usize,
}

fn one_bin() -> usize {
    1
}

/// Overlapped and non-overlapped coincidences with their expected dark-count
/// background, both unscaled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PulsedAnalysis {
    pub overlapped: CoincidenceHistogram,
    pub reference: CoincidenceHistogram,
    pub gate_duty: f64,
    pub clocks: u64,
    pub overlapped_center: (f64, f64),
    pub reference_center: (f64, f64),
    pub visibility: Option<(f64, f64)>,
}

/// Gates the map, subtracts the dark-count background, builds the shifted
/// reference and compares the centre bins.
pub fn analyze_pulsed_map(map: &CoincidenceMap, spec: &PulsedAnalysisSpec) -> Result<PulsedAnalysis> {
    let raw = gate_and_project(map, &spec.gates)?;
    let bg = expected_background_curve(map, &spec.gates, spec.dark_rate[0], spec.dark_rate[1])?;
    let zeros = vec![0.0; bg.len()];
    let subtracted = raw.with_baseline(bg, zeros)?;
    let reference = shifted_reference(&subtracted, spec.period_us, spec.half_period_us, spec.k_min..=spec.k_max)?;
    let lo = reference.edges()[0];
    let hi = *reference.edges().last().unwrap();
    let overlapped = subtracted.crop(lo, hi)?;
    let overlapped_center = overlapped.center_value(spec.center_bins)?;
    let reference_center = reference.center_value(spec.center_bins)?;
    let visibility = match visibility_from_histograms(&overlapped, &reference, spec.center_bins) {
        Ok(v) => Some(v),
        Err(Error::UndefinedVisibility(msg)) => {
            log::warn!("visibility undefined: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(PulsedAnalysis {
        gate_duty: gate_duty(map, &spec.gates)?,
        clocks: map.clocks(),
        overlapped,
        reference,
        overlapped_center,
        reference_center,
        visibility,
    })
}

/// [`analyze_pulsed_map`] on a whole stream.
pub fn analyze_pulsed(stream: &TagStream, spec: &PulsedAnalysisSpec) -> Result<PulsedAnalysis> {
    let map = coincidence_map(stream, spec.period_us, spec.t_bin_ns, spec.tau_bin_ns, spec.tau_max_us)?;
    analyze_pulsed_map(&map, spec)
}

/// HOM visibility of a CW measurement from its parallel and perpendicular
/// streams, each normalized by its own outer plateau.
pub fn cw_visibility(
    parallel: &TagStream,
    perpendicular: &TagStream,
    tau_max_ns: f64,
    bin_ns: f64,
    center_bins: usize,
) -> Result<(f64, f64)> {
    let par = g2_histogram(parallel, tau_max_ns, bin_ns)?;
    let perp = g2_histogram(perpendicular, tau_max_ns, bin_ns)?;
    visibility_from_histograms(&par, &perp, center_bins)
}
