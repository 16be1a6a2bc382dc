//! Single-photon temporal envelopes and spectral line models.
//!
//! Envelopes are real, nonnegative amplitudes on a uniform grid. Sample `i`
//! holds the amplitude over the cell `[t0 + i*dt, t0 + (i+1)*dt)`, so the
//! intensity is piecewise constant and `sum(a^2) * dt` is the exact integral.
//! Every quadrature, CDF inversion and Monte Carlo draw in the crate uses the
//! same cell picture, which keeps theory and simulation consistent to
//! rounding.
//!
//! Time is in nanoseconds and angular frequency in rad/ns throughout.

use std::f64::consts::TAU;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Bohr magneton divided by Planck's constant, in MHz per gauss.
pub const BOHR_MHZ_PER_GAUSS: f64 = 1.3996;

/// Natural linewidth of the barium-ion P(1/2) level, rad/ns (2π × 20.1 MHz).
pub const BA_P_LINEWIDTH: f64 = TAU * 0.0201;

/// Landé factor of the D(3/2) level.
pub const G_D32: f64 = 4.0 / 5.0;
/// Landé factor of the S(1/2) level.
pub const G_S12: f64 = 2.0;

const MIN_SAMPLES: usize = 8;

/// Real, L²-normalized amplitude envelope on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEnvelope", into = "RawEnvelope")]
pub struct TemporalEnvelope {
    t0: f64,
    dt: f64,
    samples: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnvelope {
    t0: f64,
    dt: f64,
    samples: Vec<f64>,
}

impl TryFrom<RawEnvelope> for TemporalEnvelope {
    type Error = Error;
    fn try_from(raw: RawEnvelope) -> Result<Self> {
        TemporalEnvelope::new(raw.t0, raw.dt, raw.samples)
    }
}

impl From<TemporalEnvelope> for RawEnvelope {
    fn from(env: TemporalEnvelope) -> Self {
        RawEnvelope { t0: env.t0, dt: env.dt, samples: env.samples }
    }
}

impl TemporalEnvelope {
    /// Builds an envelope from raw amplitudes and normalizes it.
    pub fn new(t0: f64, dt: f64, samples: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return param(format!("grid step must be positive, got {dt}"));
        }
        if !t0.is_finite() {
            return param("time origin must be finite");
        }
        if samples.len() < MIN_SAMPLES {
            return param(format!(
                "envelope needs at least {MIN_SAMPLES} samples, got {}",
                samples.len()
            ));
        }
        if let Some(bad) = samples.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return param(format!("envelope samples must be finite and nonnegative, found {bad}"));
        }
        let norm: f64 = samples.iter().map(|a| a * a).sum::<f64>() * dt;
        if norm <= 0.0 {
            return Err(Error::Normalization("envelope has zero energy".into()));
        }
        let scale = norm.sqrt().recip();
        let samples = samples.into_iter().map(|a| a * scale).collect();
        Ok(TemporalEnvelope { t0, dt, samples })
    }

    /// Builds an envelope from a nonnegative intensity profile.
    pub fn from_intensity(t0: f64, dt: f64, intensity: &[f64]) -> Result<Self> {
        if let Some(bad) = intensity.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return param(format!("intensity must be finite and nonnegative, found {bad}"));
        }
        Self::new(t0, dt, intensity.iter().map(|v| v.sqrt()).collect())
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// End of the support (exclusive).
    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * self.samples.len() as f64
    }

    pub fn span(&self) -> f64 {
        self.t_end() - self.t0
    }

    /// Left edge of cell `i`.
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.samples.iter().map(|a| a * a).collect()
    }

    pub fn amplitude_at(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.dt;
        if x < 0.0 {
            return 0.0;
        }
        self.samples.get(x.floor() as usize).copied().unwrap_or(0.0)
    }

    pub fn intensity_at(&self, t: f64) -> f64 {
        let a = self.amplitude_at(t);
        a * a
    }

    /// `sum(a^2) * dt`; 1 up to rounding.
    pub fn norm(&self) -> f64 {
        self.samples.iter().map(|a| a * a).sum::<f64>() * self.dt
    }

    /// Integrated intensity on `(-inf, t]`.
    pub fn cdf(&self, t: f64) -> f64 {
        let x = (t - self.t0) / self.dt;
        if x <= 0.0 {
            return 0.0;
        }
        let whole = x.floor() as usize;
        let mut acc = 0.0;
        for a in self.samples.iter().take(whole) {
            acc += a * a;
        }
        acc *= self.dt;
        if let Some(a) = self.samples.get(whole) {
            acc += a * a * (x - whole as f64) * self.dt;
        }
        acc
    }

    /// Integrated intensity on `[a, b]`.
    pub fn integral_intensity(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        self.cdf(b) - self.cdf(a)
    }

    /// Mean detection time of the intensity profile.
    pub fn mean_time(&self) -> f64 {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, a)| a * a * (self.time(i) + 0.5 * self.dt))
            .sum::<f64>()
            * self.dt
    }

    /// Time after the envelope origin at which the not-yet-emitted fraction of
    /// the intensity falls to 1/e. Equals the decay constant of a pure
    /// exponential that starts at the origin.
    pub fn intensity_decay_time(&self) -> f64 {
        let target = 1.0 - (-1.0f64).exp();
        let mut acc = 0.0;
        for (i, a) in self.samples.iter().enumerate() {
            let cell = a * a * self.dt;
            if acc + cell >= target && cell > 0.0 {
                let frac = (target - acc) / cell;
                return (i as f64 + frac) * self.dt;
            }
            acc += cell;
        }
        self.span()
    }

    /// Same shape moved by `delay` ns.
    pub fn shifted(&self, delay: f64) -> TemporalEnvelope {
        TemporalEnvelope { t0: self.t0 + delay, dt: self.dt, samples: self.samples.clone() }
    }

    /// Rebins onto a new grid by cell-averaging the intensity, so the total
    /// intensity inside the new grid is conserved. The result is renormalized.
    pub fn resampled(&self, t0: f64, dt: f64, n: usize) -> Result<TemporalEnvelope> {
        if !(dt > 0.0) {
            return param("resampling step must be positive");
        }
        let intensity: Vec<f64> = (0..n)
            .map(|j| {
                let a = t0 + dt * j as f64;
                self.integral_intensity(a, a + dt) / dt
            })
            .collect();
        TemporalEnvelope::from_intensity(t0, dt, &intensity)
    }

    /// Resamples onto a lattice of step `dt` whose origin is a multiple of
    /// `dt`, covering the whole support.
    pub fn regridded(&self, dt: f64) -> Result<TemporalEnvelope> {
        let start = (self.t0 / dt).floor() * dt;
        let n = ((self.t_end() - start) / dt - 1e-9).ceil().max(1.0) as usize;
        self.resampled(start, dt, n.max(MIN_SAMPLES))
    }

    /// Writes `t_ns,amplitude` rows with LF line endings.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"t_ns,amplitude\n")?;
        for (i, a) in self.samples.iter().enumerate() {
            writeln!(out, "{},{}", self.time(i), a)?;
        }
        Ok(())
    }

    /// Reads the CSV produced by [`TemporalEnvelope::write_csv`]. The grid
    /// step is taken from the first two rows and must stay uniform.
    pub fn read_csv<R: BufRead>(input: R) -> Result<TemporalEnvelope> {
        let mut times = Vec::new();
        let mut amps = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if idx == 0 {
                if line.trim() != "t_ns,amplitude" {
                    return Err(Error::Parse { line: 1, message: "expected header t_ns,amplitude".into() });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse::<f64>().ok()).ok_or_else(|| Error::Parse {
                    line: lineno,
                    message: format!("malformed row {line:?}"),
                })
            };
            times.push(parse(parts.next())?);
            amps.push(parse(parts.next())?);
            if parts.next().is_some() {
                return Err(Error::Parse { line: lineno, message: "too many columns".into() });
            }
        }
        if times.len() < 2 {
            return param("envelope CSV needs at least two rows");
        }
        let dt = times[1] - times[0];
        for (i, t) in times.iter().enumerate() {
            let expected = times[0] + dt * i as f64;
            if (t - expected).abs() > 1e-6 * dt.abs().max(1.0) {
                return Err(Error::Parse { line: i + 2, message: "non-uniform time grid".into() });
            }
        }
        TemporalEnvelope::new(times[0], dt, amps)
    }
}

/// Exponentially decaying photon. `decay_constant` is the 1/e time of the
/// intensity; the amplitude decays at half that rate. A nonzero `rise`
/// multiplies the amplitude by a linear ramp over the first `rise` ns.
pub fn exponential_envelope(decay_constant: f64, rise: f64, span: f64, dt: f64) -> Result<TemporalEnvelope> {
    if !(decay_constant > 0.0 && decay_constant.is_finite()) {
        return param(format!("decay constant must be positive, got {decay_constant}"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return param(format!("grid step must be positive, got {dt}"));
    }
    if !(rise >= 0.0) {
        return param("rise time must be nonnegative");
    }
    if !(span >= 6.0 * decay_constant) {
        return param(format!(
            "span {span} ns must cover at least six decay constants ({} ns)",
            6.0 * decay_constant
        ));
    }
    let n = (span / dt).round() as usize;
    let samples = (0..n)
        .map(|i| {
            let t = dt * (i as f64 + 0.5);
            let ramp = if rise > 0.0 { (t / rise).min(1.0) } else { 1.0 };
            ramp * (-t / (2.0 * decay_constant)).exp()
        })
        .collect();
    TemporalEnvelope::new(0.0, dt, samples)
}

/// Drive and decay parameters of the three-level emission model.
///
/// Levels: ground S, excited P, metastable D. The pulse drives D↔P; P decays
/// to S (emitting the photon of interest) or back to D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlochParams {
    /// Rabi frequency of the D↔P drive, rad/ns.
    pub rabi: f64,
    /// Drive detuning, rad/ns.
    pub detuning: f64,
    /// Drive duration, ns.
    pub pulse_len: f64,
    /// Fraction of P decays that land in S.
    pub branching_to_ground: f64,
    /// Integration step, ns.
    pub dt: f64,
    /// Total P decay rate, rad/ns.
    #[serde(default = "default_linewidth")]
    pub linewidth: f64,
    /// Free decay integrated after the drive switches off, ns. `None` uses
    /// ten P lifetimes.
    #[serde(default)]
    pub tail: Option<f64>,
}

fn default_linewidth() -> f64 {
    BA_P_LINEWIDTH
}

impl BlochParams {
    pub fn new(rabi: f64, detuning: f64, pulse_len: f64, branching_to_ground: f64, dt: f64) -> Self {
        BlochParams { rabi, detuning, pulse_len, branching_to_ground, dt, linewidth: BA_P_LINEWIDTH, tail: None }
    }

    /// Largest step the integrator accepts: a tenth of the generalized Rabi
    /// period scale.
    pub fn max_step(&self) -> f64 {
        let generalized = (self.rabi * self.rabi + self.detuning * self.detuning).sqrt();
        1.0 / (10.0 * generalized)
    }
}

/// Populations of the three-level model sampled on the integration grid.
#[derive(Debug, Clone)]
pub struct BlochTrajectory {
    pub dt: f64,
    pub ground: Vec<f64>,
    pub excited: Vec<f64>,
    pub metastable: Vec<f64>,
    /// Running integral of `Γ_P→S ρ_PP`.
    pub emitted: Vec<f64>,
    pub decay_to_ground: f64,
    pub decay_to_metastable: f64,
}

type Rho = [[Complex64; 3]; 3];

#[derive(Clone, Copy)]
struct BlochState {
    rho: Rho,
    emitted: f64,
}

const S: usize = 0;
const P: usize = 1;
const D: usize = 2;

fn bloch_rhs(state: &BlochState, rabi: f64, detuning: f64, g_s: f64, g_d: f64) -> BlochState {
    let zero = Complex64::new(0.0, 0.0);
    let mut h = [[zero; 3]; 3];
    h[P][P] = Complex64::new(-detuning, 0.0);
    h[P][D] = Complex64::new(0.5 * rabi, 0.0);
    h[D][P] = Complex64::new(0.5 * rabi, 0.0);
    let rho = &state.rho;
    let gamma = g_s + g_d;
    let mut d = [[zero; 3]; 3];
    let minus_i = Complex64::new(0.0, -1.0);
    for r in 0..3 {
        for c in 0..3 {
            let mut comm = zero;
            for k in 0..3 {
                comm += h[r][k] * rho[k][c] - rho[r][k] * h[k][c];
            }
            let mut anti = zero;
            if r == P {
                anti += rho[P][c];
            }
            if c == P {
                anti += rho[r][P];
            }
            d[r][c] = minus_i * comm - 0.5 * gamma * anti;
        }
    }
    let pp = rho[P][P].re;
    d[S][S] += g_s * pp;
    d[D][D] += g_d * pp;
    BlochState { rho: d, emitted: g_s * pp }
}

fn axpy(base: &BlochState, k: &BlochState, h: f64) -> BlochState {
    let mut out = *base;
    for r in 0..3 {
        for c in 0..3 {
            out.rho[r][c] += k.rho[r][c] * h;
        }
    }
    out.emitted += k.emitted * h;
    out
}

/// Integrates the driven three-level density matrix with fixed-step RK4,
/// starting with all population in D.
pub fn solve_bloch(params: &BlochParams) -> Result<BlochTrajectory> {
    let BlochParams { rabi, detuning, pulse_len, branching_to_ground, dt, linewidth, tail } = *params;
    if !(rabi > 0.0 && rabi.is_finite()) {
        return param(format!("Rabi frequency must be positive, got {rabi}"));
    }
    if !(pulse_len > 0.0 && pulse_len.is_finite()) {
        return param(format!("pulse length must be positive, got {pulse_len}"));
    }
    if !(0.0..=1.0).contains(&branching_to_ground) {
        return param("branching ratio must lie in [0, 1]");
    }
    if !(linewidth > 0.0) || !detuning.is_finite() {
        return param("linewidth must be positive and detuning finite");
    }
    if !(dt > 0.0) {
        return param("integration step must be positive");
    }
    let limit = params.max_step();
    if dt > limit {
        return Err(Error::Resolution { dt, limit });
    }
    let tail = tail.unwrap_or(10.0 / linewidth);
    let g_s = branching_to_ground * linewidth;
    let g_d = (1.0 - branching_to_ground) * linewidth;
    let n_drive = (pulse_len / dt).round() as usize;
    let n_total = n_drive + (tail / dt).round() as usize;

    let zero = Complex64::new(0.0, 0.0);
    let mut state = BlochState { rho: [[zero; 3]; 3], emitted: 0.0 };
    state.rho[D][D] = Complex64::new(1.0, 0.0);

    let mut traj = BlochTrajectory {
        dt,
        ground: Vec::with_capacity(n_total + 1),
        excited: Vec::with_capacity(n_total + 1),
        metastable: Vec::with_capacity(n_total + 1),
        emitted: Vec::with_capacity(n_total + 1),
        decay_to_ground: g_s,
        decay_to_metastable: g_d,
    };
    let record = |s: &BlochState, traj: &mut BlochTrajectory| {
        traj.ground.push(s.rho[S][S].re);
        traj.excited.push(s.rho[P][P].re);
        traj.metastable.push(s.rho[D][D].re);
        traj.emitted.push(s.emitted);
    };
    record(&state, &mut traj);
    for step in 0..n_total {
        let drive = if step < n_drive { rabi } else { 0.0 };
        let k1 = bloch_rhs(&state, drive, detuning, g_s, g_d);
        let k2 = bloch_rhs(&axpy(&state, &k1, 0.5 * dt), drive, detuning, g_s, g_d);
        let k3 = bloch_rhs(&axpy(&state, &k2, 0.5 * dt), drive, detuning, g_s, g_d);
        let k4 = bloch_rhs(&axpy(&state, &k3, dt), drive, detuning, g_s, g_d);
        let mut next = state;
        for r in 0..3 {
            for c in 0..3 {
                next.rho[r][c] +=
                    (k1.rho[r][c] + 2.0 * k2.rho[r][c] + 2.0 * k3.rho[r][c] + k4.rho[r][c]) * (dt / 6.0);
            }
        }
        next.emitted += (k1.emitted + 2.0 * k2.emitted + 2.0 * k3.emitted + k4.emitted) * (dt / 6.0);
        state = next;
        record(&state, &mut traj);
    }
    Ok(traj)
}

/// Emission envelope of the photon released on the P→S decay during a drive
/// pulse: amplitude ∝ sqrt(Γ_P→S ρ_PP(t)), normalized.
pub fn bloch_emission_profile(
    rabi: f64,
    detuning: f64,
    pulse_len: f64,
    branching_to_ground: f64,
    dt: f64,
) -> Result<TemporalEnvelope> {
    bloch_emission_profile_with(&BlochParams::new(rabi, detuning, pulse_len, branching_to_ground, dt))
}

pub fn bloch_emission_profile_with(params: &BlochParams) -> Result<TemporalEnvelope> {
    let traj = solve_bloch(params)?;
    let intensity: Vec<f64> =
        traj.excited.iter().map(|p| (traj.decay_to_ground * p).max(0.0)).collect();
    TemporalEnvelope::from_intensity(0.0, params.dt, &intensity)
}

/// Distribution of re-emission delays on a lattice of step `dt`, starting at
/// zero delay.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayDistribution {
    dt: f64,
    weights: Vec<f64>,
}

impl DelayDistribution {
    pub fn new(dt: f64, weights: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return param("delay lattice step must be positive");
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return param("delay weights must be finite and nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Normalization("empty delay distribution".into()));
        }
        Ok(DelayDistribution { dt, weights: weights.into_iter().map(|w| w / total).collect() })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Probability of a delay of `m * dt`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().enumerate().map(|(m, w)| w * m as f64 * self.dt).sum()
    }

    pub fn max_delay(&self) -> f64 {
        self.dt * (self.weights.len().saturating_sub(1)) as f64
    }
}

/// Ion photon that is either emitted on the first pass or delayed by one
/// excursion back to the metastable level.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMixture {
    direct: TemporalEnvelope,
    p_direct: f64,
    delay: DelayDistribution,
}

impl EmissionMixture {
    /// Mixture with no delayed component.
    pub fn pure(direct: TemporalEnvelope) -> Self {
        let delay = DelayDistribution { dt: direct.dt(), weights: vec![1.0] };
        EmissionMixture { direct, p_direct: 1.0, delay }
    }

    pub fn new(direct: TemporalEnvelope, p_direct: f64, delay: DelayDistribution) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_direct) {
            return param(format!("direct weight must lie in [0, 1], got {p_direct}"));
        }
        if (delay.dt() - direct.dt()).abs() > 1e-12 * direct.dt() {
            return param("delay lattice must share the envelope grid step");
        }
        Ok(EmissionMixture { direct, p_direct, delay })
    }

    pub fn direct(&self) -> &TemporalEnvelope {
        &self.direct
    }

    pub fn p_direct(&self) -> f64 {
        self.p_direct
    }

    pub fn p_delayed(&self) -> f64 {
        1.0 - self.p_direct
    }

    pub fn delay(&self) -> &DelayDistribution {
        &self.delay
    }

    pub fn is_pure(&self) -> bool {
        self.p_direct >= 1.0
    }

    /// Incoherent intensity of the mixture on the direct grid, extended by
    /// the longest delay.
    pub fn intensity_envelope(&self) -> TemporalEnvelope {
        let direct = self.direct.intensities();
        let extra = if self.is_pure() { 0 } else { self.delay.weights.len().saturating_sub(1) };
        let mut out = vec![0.0; direct.len() + extra];
        for (n, v) in direct.iter().enumerate() {
            out[n] += self.p_direct * v;
        }
        if !self.is_pure() {
            let q = self.p_delayed();
            for (m, w) in self.delay.weights.iter().enumerate() {
                if *w == 0.0 {
                    continue;
                }
                for (n, v) in direct.iter().enumerate() {
                    out[n + m] += q * w * v;
                }
            }
        }
        // Constructed from a normalized profile; from_intensity only fails on
        // an all-zero input, which the direct envelope excludes.
        TemporalEnvelope::from_intensity(self.direct.t0(), self.direct.dt(), &out)
            .expect("mixture of a normalized envelope is normalizable")
    }

    pub fn mean_time(&self) -> f64 {
        self.direct.mean_time() + self.p_delayed() * self.delay.mean()
    }

    /// Same mixture with the direct envelope moved by `by` ns.
    pub fn shifted(&self, by: f64) -> EmissionMixture {
        EmissionMixture { direct: self.direct.shifted(by), p_direct: self.p_direct, delay: self.delay.clone() }
    }

    /// Mixture resampled onto a lattice of step `dt` whose origin is a
    /// multiple of `dt`.
    pub fn regridded(&self, dt: f64) -> Result<EmissionMixture> {
        let direct = self.direct.regridded(dt)?;
        if self.is_pure() {
            return Ok(EmissionMixture::pure(direct));
        }
        let ratio = self.delay.dt / dt;
        let len = ((self.delay.weights.len() as f64) * ratio).ceil() as usize + 1;
        let mut w = vec![0.0; len];
        for (k, wk) in self.delay.weights.iter().enumerate() {
            w[(k as f64 * ratio).round() as usize] += wk;
        }
        EmissionMixture::new(direct, self.p_direct, DelayDistribution::new(dt, w)?)
    }

    pub fn t_end(&self) -> f64 {
        self.direct.t_end() + if self.is_pure() { 0.0 } else { self.delay.max_delay() }
    }
}

/// Splits the detected photons into a first-pass component and a component
/// delayed by one more waiting time drawn from the first-pass intensity.
pub fn branching_mixture(direct: TemporalEnvelope, branch_back: f64) -> Result<EmissionMixture> {
    if !(0.0..1.0).contains(&branch_back) {
        return param(format!("branch-back probability must lie in [0, 1), got {branch_back}"));
    }
    if branch_back == 0.0 {
        return Ok(EmissionMixture::pure(direct));
    }
    let weights: Vec<f64> = direct.samples().iter().map(|a| a * a * direct.dt()).collect();
    let delay = DelayDistribution::new(direct.dt(), weights)?;
    EmissionMixture::new(direct, 1.0 - branch_back, delay)
}

/// One spectral component of the ion photon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralLine {
    /// Detuning from the mean, rad/ns.
    pub detuning: f64,
    pub weight: f64,
}

/// Discrete line set plus static offset and Gaussian drift of the relative
/// centre frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpectral", into = "RawSpectral")]
pub struct SpectralModel {
    lines: Vec<SpectralLine>,
    offset: f64,
    drift: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpectral {
    lines: Vec<SpectralLine>,
    #[serde(default)]
    offset: f64,
    #[serde(default)]
    drift: f64,
}

impl TryFrom<RawSpectral> for SpectralModel {
    type Error = Error;
    fn try_from(raw: RawSpectral) -> Result<Self> {
        SpectralModel::new(raw.lines, raw.offset, raw.drift)
    }
}

impl From<SpectralModel> for RawSpectral {
    fn from(m: SpectralModel) -> Self {
        RawSpectral { lines: m.lines, offset: m.offset, drift: m.drift }
    }
}

impl Default for SpectralModel {
    fn default() -> Self {
        SpectralModel::ideal()
    }
}

impl SpectralModel {
    /// Weights must already sum to one within 1e-12.
    pub fn new(lines: Vec<SpectralLine>, offset: f64, drift: f64) -> Result<Self> {
        if lines.is_empty() {
            return param("spectral model needs at least one line");
        }
        if lines.iter().any(|l| !l.weight.is_finite() || l.weight < 0.0 || !l.detuning.is_finite()) {
            return param("line weights must be nonnegative and detunings finite");
        }
        let total: f64 = lines.iter().map(|l| l.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return param(format!("line weights sum to {total}, expected 1"));
        }
        if !(drift >= 0.0 && drift.is_finite()) || !offset.is_finite() {
            return param("drift width must be nonnegative and offset finite");
        }
        Ok(SpectralModel { lines, offset, drift })
    }

    /// Rescales arbitrary nonnegative weights to sum to one.
    pub fn normalized(mut lines: Vec<SpectralLine>, offset: f64, drift: f64) -> Result<Self> {
        let total: f64 = lines.iter().map(|l| l.weight).sum();
        if !(total > 0.0) {
            return param("line weights must have a positive sum");
        }
        for l in &mut lines {
            l.weight /= total;
        }
        let fix: f64 = 1.0 - lines.iter().map(|l| l.weight).sum::<f64>();
        if let Some(first) = lines.first_mut() {
            first.weight += fix;
        }
        Self::new(lines, offset, drift)
    }

    /// Single line, no offset, no drift.
    pub fn ideal() -> Self {
        SpectralModel { lines: vec![SpectralLine { detuning: 0.0, weight: 1.0 }], offset: 0.0, drift: 0.0 }
    }

    pub fn single(offset: f64) -> Self {
        SpectralModel { offset, ..Self::ideal() }
    }

    pub fn lines(&self) -> &[SpectralLine] {
        &self.lines
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn with_drift(mut self, drift: f64) -> Result<Self> {
        if !(drift >= 0.0 && drift.is_finite()) {
            return param("drift width must be nonnegative");
        }
        self.drift = drift;
        Ok(self)
    }

    /// `Σ c_i cos((Δω_i + Δω₀) τ) · exp(-σ² τ² / 2)`, the factor multiplying
    /// the two-photon cross term.
    pub fn cross_factor(&self, tau: f64) -> f64 {
        let beat: f64 = self.lines.iter().map(|l| l.weight * ((l.detuning + self.offset) * tau).cos()).sum();
        beat * (-0.5 * self.drift * self.drift * tau * tau).exp()
    }
}

/// One Zeeman pathway: magnetic quantum numbers of the initial and final
/// levels and its relative weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeemanTransition {
    pub m_upper: f64,
    pub m_lower: f64,
    pub weight: f64,
}

/// Line set produced by a bias field `b_field` (gauss):
/// `Δω_i = μ_B B (g_lower m_lower − g_upper m_upper) / ħ`. Degenerate lines
/// are merged and the result is sorted by detuning.
pub fn zeeman_lines(
    b_field: f64,
    g_upper: f64,
    g_lower: f64,
    transitions: &[ZeemanTransition],
) -> Result<SpectralModel> {
    if transitions.is_empty() {
        return param("Zeeman transition list is empty");
    }
    if transitions.iter().any(|t| !(t.weight >= 0.0) || !t.weight.is_finite()) {
        return param("transition weights must be nonnegative");
    }
    if !b_field.is_finite() {
        return param("bias field must be finite");
    }
    let larmor = TAU * BOHR_MHZ_PER_GAUSS * 1e-3 * b_field;
    let mut raw: Vec<SpectralLine> = transitions
        .iter()
        .map(|t| SpectralLine {
            detuning: larmor * (g_lower * t.m_lower - g_upper * t.m_upper),
            weight: t.weight,
        })
        .collect();
    raw.sort_by(|a, b| a.detuning.total_cmp(&b.detuning));
    let scale = raw.iter().map(|l| l.detuning.abs()).fold(1e-300, f64::max);
    let mut merged: Vec<SpectralLine> = Vec::with_capacity(raw.len());
    for line in raw {
        match merged.last_mut() {
            Some(last) if (line.detuning - last.detuning).abs() <= 1e-12 * scale => last.weight += line.weight,
            _ => merged.push(line),
        }
    }
    // Exact zeros from a vanishing field should not carry a sign.
    for l in &mut merged {
        if l.detuning == 0.0 {
            l.detuning = 0.0;
        }
    }
    SpectralModel::normalized(merged, 0.0, 0.0)
}

/// Pathways for the barium ion pumped with σ light out of an equally
/// populated D(3/2) manifold and decaying to S(1/2). Each D sublevel couples to
/// the one P(1/2) sublevel reachable by a σ transition; the P sublevel then
/// decays to each S sublevel with Clebsch-Gordan weight 1/3 (π) or 2/3 (σ).
/// `m_upper` is the D sublevel, `m_lower` the S sublevel.
pub fn barium_sigma_transitions() -> Vec<ZeemanTransition> {
    let mut out = Vec::with_capacity(8);
    for m_d in [-1.5, -0.5, 0.5, 1.5] {
        let m_p: f64 = if m_d < 0.0 { m_d + 1.0 } else { m_d - 1.0 };
        for m_s in [-0.5, 0.5] {
            let weight = if m_s == m_p { 1.0 / 3.0 } else { 2.0 / 3.0 };
            out.push(ZeemanTransition { m_upper: m_d, m_lower: m_s, weight: 0.25 * weight });
        }
    }
    out
}
