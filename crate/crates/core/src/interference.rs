//! Joint detection density of one photon from each source behind a 50:50
//! beamsplitter, and the coincidence curves obtained by integrating it over a
//! gate on the first detector.
//!
//! `P(t0, τ)` is the density for a click on detector A at `t0` and on
//! detector B at `t0 + τ`:
//!
//! ```text
//! P = ¼ [ Ia(t0) Ii(t0+τ) + Ia(t0+τ) Ii(t0) − 2 c S(τ) A(t0, τ) ]
//! S(τ) = Σ c_k cos((Δω_k + Δω0) τ) exp(−σ² τ² / 2)
//! ```
//!
//! Both envelopes live on one lattice. For `τ` on the lattice the density is
//! constant over each `t0` cell, so the gated integrals are exact sums.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::wavepacket::{EmissionMixture, SpectralModel, TemporalEnvelope};

const MAX_CELLS: usize = 1 << 22;

/// How the delayed part of a mixed ion photon enters the cross term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureCoherence {
    /// Weighted sum of the direct-photon density and the density of the
    /// direct photon shifted by each delay.
    #[default]
    TwoCurveSum,
    /// Treats the mixture as one transform-limited photon with amplitude
    /// `sqrt(I_mix)`.
    TransformLimited,
}

/// Closed time interval on the first-detector axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateWindow {
    pub start: f64,
    pub end: f64,
}

impl GateWindow {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start < end) || !start.is_finite() || !end.is_finite() {
            return param(format!("gate window needs start < end, got [{start}, {end}]"));
        }
        Ok(GateWindow { start, end })
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }

    pub fn shifted(&self, by: f64) -> GateWindow {
        GateWindow { start: self.start + by, end: self.end + by }
    }
}

/// Lattice representation of `P(t0, τ)`.
#[derive(Debug, Clone)]
pub struct JointDensity {
    origin: f64,
    dt: f64,
    atom: Vec<f64>,
    atom_int: Vec<f64>,
    ion_direct: Vec<f64>,
    ion_int: Vec<f64>,
    p_direct: f64,
    delay: Vec<f64>,
    spectrum: SpectralModel,
    coherence: MixtureCoherence,
    overlap: f64,
}

fn on_lattice(env: &TemporalEnvelope, origin: f64, dt: f64, len: usize) -> Result<Vec<f64>> {
    let offset = (env.t0() - origin) / dt;
    let aligned = (env.dt() - dt).abs() <= 1e-12 * dt && (offset - offset.round()).abs() <= 1e-9;
    let mut out = vec![0.0; len];
    if aligned {
        let start = offset.round() as usize;
        for (i, a) in env.samples().iter().enumerate() {
            if let Some(slot) = out.get_mut(start + i) {
                *slot = *a;
            }
        }
    } else {
        let r = env.resampled(origin, dt, len)?;
        out.copy_from_slice(r.samples());
    }
    Ok(out)
}

impl JointDensity {
    /// Single-line, pure-direct density with relative detuning `detuning`.
    pub fn new(atom: &TemporalEnvelope, ion: &TemporalEnvelope, detuning: f64) -> Result<Self> {
        Self::full(atom, &EmissionMixture::pure(ion.clone()), &SpectralModel::single(detuning))
    }

    /// Density including a mixed ion photon and a multi-line, drifting
    /// spectrum. Envelopes on different grids are resampled to the finer step.
    pub fn full(atom: &TemporalEnvelope, ion: &EmissionMixture, spectrum: &SpectralModel) -> Result<Self> {
        let direct = ion.direct();
        let dt = atom.dt().min(direct.dt());
        let origin = atom.t0().min(direct.t0());
        let end = atom.t_end().max(ion.t_end());
        let span = end - origin;
        let len = (span / dt - 1e-9).ceil() as usize;
        if len > MAX_CELLS {
            return Err(Error::Domain(format!(
                "combined support of {span} ns at step {dt} ns needs {len} cells"
            )));
        }
        let atom_s = on_lattice(atom, origin, dt, len)?;
        let ion_s = on_lattice(direct, origin, dt, len)?;
        let delay = if ion.is_pure() {
            vec![1.0]
        } else if (ion.delay().dt() - dt).abs() <= 1e-12 * dt {
            ion.delay().weights().to_vec()
        } else {
            // Re-bin the delay weights onto the common step.
            let ratio = ion.delay().dt() / dt;
            let mut w = vec![0.0; ((ion.delay().weights().len() as f64) * ratio).ceil() as usize + 1];
            for (k, wk) in ion.delay().weights().iter().enumerate() {
                let idx = (k as f64 * ratio).round() as usize;
                w[idx] += wk;
            }
            w
        };
        let p_direct = ion.p_direct();
        let mut ion_int = vec![0.0; len];
        for (n, a) in ion_s.iter().enumerate() {
            let v = a * a;
            if v == 0.0 {
                continue;
            }
            if p_direct >= 1.0 {
                ion_int[n] += v;
                continue;
            }
            ion_int[n] += p_direct * v;
            for (k, w) in delay.iter().enumerate() {
                if let Some(slot) = ion_int.get_mut(n + k) {
                    *slot += (1.0 - p_direct) * w * v;
                }
            }
        }
        let atom_int = atom_s.iter().map(|a| a * a).collect();
        Ok(JointDensity {
            origin,
            dt,
            atom: atom_s,
            atom_int,
            ion_direct: ion_s,
            ion_int,
            p_direct,
            delay,
            spectrum: spectrum.clone(),
            coherence: MixtureCoherence::default(),
            overlap: 1.0,
        })
    }

    pub fn with_coherence(mut self, coherence: MixtureCoherence) -> Self {
        self.coherence = coherence;
        self
    }

    /// Scales the cross term by the residual mode overlap `c` of the two
    /// photons in the degrees of freedom not modeled here.
    pub fn with_overlap(mut self, c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return param(format!("overlap must lie in [0, 1], got {c}"));
        }
        self.overlap = c;
        Ok(self)
    }

    /// The distinguishable-photon density: cross term removed.
    pub fn without_interference(&self) -> Self {
        JointDensity { overlap: 0.0, ..self.clone() }
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.atom.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atom.is_empty()
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    pub fn spectrum(&self) -> &SpectralModel {
        &self.spectrum
    }

    pub fn coherence(&self) -> MixtureCoherence {
        self.coherence
    }

    pub fn support(&self) -> GateWindow {
        GateWindow { start: self.origin, end: self.origin + self.dt * self.len() as f64 }
    }

    /// Atom and mixed-ion intensities on the lattice.
    pub fn intensities(&self) -> (&[f64], &[f64]) {
        (&self.atom_int, &self.ion_int)
    }

    fn cross_row(&self, m: i64) -> Vec<f64> {
        let len = self.len();
        let mut out = vec![0.0; len];
        let at = |v: &[f64], j: i64| -> f64 {
            if j < 0 {
                0.0
            } else {
                v.get(j as usize).copied().unwrap_or(0.0)
            }
        };
        match self.coherence {
            MixtureCoherence::TransformLimited => {
                for (n, slot) in out.iter_mut().enumerate() {
                    let j = n as i64 + m;
                    let aa = self.atom[n] * at(&self.atom, j);
                    if aa != 0.0 {
                        *slot = aa * (self.ion_int[n] * at(&self.ion_int, j)).sqrt();
                    }
                }
            }
            MixtureCoherence::TwoCurveSum => {
                let dd: Vec<f64> =
                    (0..len).map(|n| self.ion_direct[n] * at(&self.ion_direct, n as i64 + m)).collect();
                let q = 1.0 - self.p_direct;
                for (n, slot) in out.iter_mut().enumerate() {
                    let j = n as i64 + m;
                    let aa = self.atom[n] * at(&self.atom, j);
                    if aa == 0.0 {
                        continue;
                    }
                    let mut ion = self.p_direct * dd[n];
                    if q > 0.0 {
                        let mut acc = 0.0;
                        for (k, w) in self.delay.iter().enumerate().take(n + 1) {
                            acc += w * dd[n - k];
                        }
                        ion += q * acc;
                    }
                    *slot = aa * ion;
                }
            }
        }
        out
    }

    /// `P(origin + n dt, m dt)` for every `n`.
    pub fn row(&self, m: i64) -> Vec<f64> {
        let factor = self.overlap * self.spectrum.cross_factor(m as f64 * self.dt);
        let cross = if factor != 0.0 { self.cross_row(m) } else { vec![0.0; self.len()] };
        let at = |v: &[f64], j: i64| -> f64 {
            if j < 0 {
                0.0
            } else {
                v.get(j as usize).copied().unwrap_or(0.0)
            }
        };
        (0..self.len())
            .map(|n| {
                let j = n as i64 + m;
                let diag = self.atom_int[n] * at(&self.ion_int, j) + at(&self.atom_int, j) * self.ion_int[n];
                0.25 * (diag - 2.0 * factor * cross[n])
            })
            .collect()
    }

    /// Density at an arbitrary point; linear in `τ` between lattice rows.
    pub fn value(&self, t0: f64, tau: f64) -> f64 {
        let x = (t0 - self.origin) / self.dt;
        if x < 0.0 || x >= self.len() as f64 {
            return 0.0;
        }
        let n = x.floor() as usize;
        let y = tau / self.dt;
        let m0 = y.floor();
        let frac = y - m0;
        let v0 = self.row(m0 as i64)[n];
        if frac < 1e-12 {
            return v0;
        }
        let v1 = self.row(m0 as i64 + 1)[n];
        (1.0 - frac) * v0 + frac * v1
    }

    /// Probability that the two photons leave by different ports:
    /// `∫∫ P dt0 dτ` over the whole support.
    pub fn opposite_port_probability(&self) -> f64 {
        let max = self.len() as i64;
        let total: f64 = (-max + 1..max)
            .into_par_iter()
            .map(|m| self.row(m).iter().sum::<f64>())
            .collect::<Vec<_>>()
            .iter()
            .sum();
        total * self.dt * self.dt
    }

    /// Fraction of each cell covered by the gate.
    fn gate_weights(&self, gate: &GateWindow) -> Vec<f64> {
        (0..self.len())
            .map(|n| {
                let a = self.origin + self.dt * n as f64;
                let b = a + self.dt;
                ((b.min(gate.end) - a.max(gate.start)) / self.dt).clamp(0.0, 1.0)
            })
            .collect()
    }

    fn gated_lattice(&self, weights: &[f64], m: i64) -> f64 {
        self.row(m).iter().zip(weights).map(|(p, w)| p * w).sum::<f64>() * self.dt
    }
}

/// `P(t0, τ)` for two transform-limited photons with relative detuning
/// `detuning` (rad/ns).
pub fn joint_density(atom: &TemporalEnvelope, ion: &TemporalEnvelope, detuning: f64) -> Result<JointDensity> {
    JointDensity::new(atom, ion, detuning)
}

/// `P(t0, τ)` with the ion photon as a delayed-emission mixture and the
/// spectrum as a drifting line set.
pub fn joint_density_full(
    atom: &TemporalEnvelope,
    ion: &EmissionMixture,
    spectrum: &SpectralModel,
) -> Result<JointDensity> {
    JointDensity::full(atom, ion, spectrum)
}

/// Shortest contiguous window holding `area_fraction` of the profile's
/// intensity; ties go to the earlier start.
pub fn gate_window(profile: &TemporalEnvelope, area_fraction: f64) -> Result<GateWindow> {
    if !(area_fraction > 0.0 && area_fraction < 1.0) {
        return param(format!("area fraction must lie in (0, 1), got {area_fraction}"));
    }
    let dt = profile.dt();
    let n = profile.len();
    let mut cum = Vec::with_capacity(n + 1);
    cum.push(0.0);
    for a in profile.samples() {
        let last = *cum.last().unwrap();
        cum.push(last + a * a * dt);
    }
    let total = cum[n];
    let need = area_fraction * total;
    let edge = |i: usize| profile.t0() + dt * i as f64;
    // Smallest t with F(t) >= y.
    let inverse = |y: f64| -> Option<f64> {
        if y > total * (1.0 + 1e-12) {
            return None;
        }
        if y <= 0.0 {
            return Some(profile.t0());
        }
        let i = cum.partition_point(|c| *c < y);
        let i = i.clamp(1, n);
        let cell = cum[i] - cum[i - 1];
        let frac = if cell > 0.0 { ((y - cum[i - 1]) / cell).clamp(0.0, 1.0) } else { 1.0 };
        Some(edge(i - 1) + frac * dt)
    };
    // Largest t with F(t) <= y.
    let inverse_upper = |y: f64| -> Option<f64> {
        if y < 0.0 {
            return None;
        }
        let i = cum.partition_point(|c| *c <= y);
        if i > n {
            return Some(edge(n));
        }
        let i = i.max(1);
        let cell = cum[i] - cum[i - 1];
        let frac = if cell > 0.0 { ((y - cum[i - 1]) / cell).clamp(0.0, 1.0) } else { 0.0 };
        Some(edge(i - 1) + frac * dt)
    };
    let mut best: Option<GateWindow> = None;
    let tol = 1e-9 * dt;
    let mut consider = |start: f64, end: f64| {
        if end <= start {
            return;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                let (l, lb) = (end - start, b.len());
                l < lb - tol || (l <= lb + tol && start < b.start - tol)
            }
        };
        if better {
            best = Some(GateWindow { start, end });
        }
    };
    for i in 0..=n {
        if let Some(end) = inverse(cum[i] + need) {
            consider(edge(i), end);
        }
        if cum[i] >= need {
            if let Some(start) = inverse_upper(cum[i] - need) {
                consider(start, edge(i));
            }
        }
    }
    best.ok_or_else(|| Error::Normalization("profile has no intensity".into()))
}

/// Normalization state of a [`TheoryCurve`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveNormalization {
    Raw,
    UnitPeakNonInterfering,
}

/// Coincidence density versus detector delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCurve {
    pub tau_ns: Vec<f64>,
    pub value: Vec<f64>,
    pub normalization: CurveNormalization,
    /// Set when the gate missed the density support and the curve is zero.
    pub degenerate: bool,
}

impl TheoryCurve {
    pub fn peak(&self) -> f64 {
        self.value.iter().cloned().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64, normalization: CurveNormalization) -> TheoryCurve {
        TheoryCurve {
            tau_ns: self.tau_ns.clone(),
            value: self.value.iter().map(|v| v * factor).collect(),
            normalization,
            degenerate: self.degenerate,
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(b"tau_ns,value\n")?;
        for (t, v) in self.tau_ns.iter().zip(&self.value) {
            writeln!(out, "{t},{v}")?;
        }
        Ok(())
    }
}

/// `C(τ) = ∫_gate P(t0, τ) dt0`. Off-lattice delays are interpolated
/// linearly between neighbouring lattice rows.
pub fn coincidence_curve(density: &JointDensity, gate: &GateWindow, tau_grid: &[f64]) -> Result<TheoryCurve> {
    if gate.is_empty() {
        return param("gate window is empty");
    }
    if tau_grid.iter().any(|t| !t.is_finite()) {
        return param("delay grid must be finite");
    }
    let support = density.support();
    if gate.end <= support.start || gate.start >= support.end {
        log::warn!(
            "gate [{}, {}] misses the density support [{}, {}]; returning a zero curve",
            gate.start,
            gate.end,
            support.start,
            support.end
        );
        return Ok(TheoryCurve {
            tau_ns: tau_grid.to_vec(),
            value: vec![0.0; tau_grid.len()],
            normalization: CurveNormalization::Raw,
            degenerate: true,
        });
    }
    let weights = density.gate_weights(gate);
    let dt = density.dt();
    let value = tau_grid
        .par_iter()
        .map(|tau| {
            let y = tau / dt;
            let m0 = y.floor();
            let frac = y - m0;
            let c0 = density.gated_lattice(&weights, m0 as i64);
            if frac < 1e-12 {
                c0
            } else if frac > 1.0 - 1e-12 {
                density.gated_lattice(&weights, m0 as i64 + 1)
            } else {
                (1.0 - frac) * c0 + frac * density.gated_lattice(&weights, m0 as i64 + 1)
            }
        })
        .collect();
    Ok(TheoryCurve { tau_ns: tau_grid.to_vec(), value, normalization: CurveNormalization::Raw, degenerate: false })
}

/// The coincidence curve of distinguishable photons with the same envelopes.
pub fn noninterfering_curve(
    atom: &TemporalEnvelope,
    ion: &EmissionMixture,
    gate: &GateWindow,
    tau_grid: &[f64],
) -> Result<TheoryCurve> {
    let density = JointDensity::full(atom, ion, &SpectralModel::ideal())?.without_interference();
    coincidence_curve(&density, gate, tau_grid)
}

/// Rescales an interfering curve and its distinguishable reference so the
/// reference peaks at one.
pub fn normalize_pair(interfering: &TheoryCurve, reference: &TheoryCurve) -> Result<(TheoryCurve, TheoryCurve)> {
    let peak = reference.peak();
    if !(peak > 0.0) {
        return Err(Error::Normalization("reference curve has no positive value".into()));
    }
    let tag = CurveNormalization::UnitPeakNonInterfering;
    Ok((interfering.scaled(1.0 / peak, tag), reference.scaled(1.0 / peak, tag)))
}

/// Full width at half maximum of the interference deficit
/// `reference − interfering`, measured outward from the grid point nearest
/// τ = 0. Returns `None` if the deficit never falls to half on either side.
pub fn dip_fwhm(interfering: &TheoryCurve, reference: &TheoryCurve) -> Option<f64> {
    let tau = &interfering.tau_ns;
    if tau.len() != reference.tau_ns.len() || tau.is_empty() {
        return None;
    }
    let deficit: Vec<f64> = reference.value.iter().zip(&interfering.value).map(|(r, i)| r - i).collect();
    let centre = tau
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)?;
    let half = 0.5 * deficit[centre];
    if !(half > 0.0) {
        return None;
    }
    let crossing = |range: Box<dyn Iterator<Item = usize>>, step: i64| -> Option<f64> {
        for i in range {
            let j = (i as i64 + step) as usize;
            if deficit[j] <= half {
                let (a, b) = (deficit[i], deficit[j]);
                let frac = if a != b { (a - half) / (a - b) } else { 0.0 };
                return Some(tau[i] + frac * (tau[j] - tau[i]));
            }
        }
        None
    };
    let right = crossing(Box::new(centre..tau.len() - 1), 1)?;
    let left = crossing(Box::new((1..=centre).rev()), -1)?;
    Some(right - left)
}

/// Average of `cos((offset + x) τ)` over `x ~ N(0, σ²)` by trapezoidal
/// quadrature on `nodes` points spanning ±10σ. The exact value is
/// `cos(offset τ) exp(−σ² τ² / 2)`.
pub fn drift_average_quadrature(offset: f64, sigma: f64, tau: f64, nodes: usize) -> f64 {
    if sigma == 0.0 {
        return (offset * tau).cos();
    }
    let nodes = nodes.max(3);
    let half = 10.0 * sigma;
    let h = 2.0 * half / (nodes - 1) as f64;
    let norm = 1.0 / (sigma * (2.0 * PI).sqrt());
    let mut acc = 0.0;
    for k in 0..nodes {
        let x = -half + h * k as f64;
        let w = if k == 0 || k == nodes - 1 { 0.5 } else { 1.0 };
        acc += w * norm * (-0.5 * x * x / (sigma * sigma)).exp() * ((offset + x) * tau).cos();
    }
    acc * h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavepacket::{branching_mixture, exponential_envelope, SpectralLine};
    use std::f64::consts::TAU;

    fn rect(t0: f64, dt: f64, n: usize) -> TemporalEnvelope {
        TemporalEnvelope::new(t0, dt, vec![1.0; n]).unwrap()
    }

    #[test]
    fn identical_photons_never_coincide() {
        let env = exponential_envelope(50.0, 0.0, 400.0, 1.0).unwrap();
        let d = joint_density(&env, &env, 0.0).unwrap();
        for m in [-30, -1, 0, 5, 100] {
            assert!(d.row(m).iter().all(|v| v.abs() < 1e-15));
        }
    }

    #[test]
    fn zero_delay_cancels_for_any_envelopes() {
        let a = exponential_envelope(120.0, 0.0, 1000.0, 1.0).unwrap();
        let b = exponential_envelope(50.0, 0.0, 500.0, 1.0).unwrap().shifted(40.0);
        let d = joint_density(&a, &b, 0.3).unwrap();
        assert!(d.row(0).iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn opposite_port_probability_of_distinguishable_photons_is_half() {
        let a = exponential_envelope(30.0, 0.0, 300.0, 1.0).unwrap();
        let b = exponential_envelope(20.0, 0.0, 200.0, 1.0).unwrap();
        let d = joint_density(&a, &b, 0.0).unwrap().without_interference();
        assert!((d.opposite_port_probability() - 0.5).abs() < 1e-12);
        let same = joint_density(&a, &a, 0.0).unwrap();
        assert!(same.opposite_port_probability().abs() < 1e-12);
        let half = joint_density(&a, &a, 0.0).unwrap().with_overlap(0.5).unwrap();
        assert!((half.opposite_port_probability() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn rectangles_give_triangle() {
        let r = rect(0.0, 1.0, 20);
        let d = joint_density(&r, &r, 0.0).unwrap().without_interference();
        let grid: Vec<f64> = (-25..=25).map(|m| m as f64).collect();
        let c = coincidence_curve(&d, &d.support(), &grid).unwrap();
        for (t, v) in c.tau_ns.iter().zip(&c.value) {
            let expected = 0.5 * (20.0 - t.abs()).max(0.0) / 400.0;
            assert!((v - expected).abs() < 1e-14, "tau {t}: {v} vs {expected}");
        }
    }

    #[test]
    fn gate_on_rectangle_and_exponential() {
        let r = rect(10.0, 1.0, 40);
        let g = gate_window(&r, 0.5).unwrap();
        assert!((g.start - 10.0).abs() < 1e-9 && (g.end - 30.0).abs() < 1e-9, "{g:?}");
        let e = exponential_envelope(50.0, 0.0, 500.0, 0.1).unwrap();
        let g = gate_window(&e, 0.8).unwrap();
        assert!(g.start.abs() < 1e-9);
        assert!((g.end - 50.0 * 5f64.ln()).abs() < 0.05, "{g:?}");
        assert!(gate_window(&e, 1.0).is_err());
        assert!(gate_window(&e, 0.0).is_err());
    }

    #[test]
    fn gate_prefers_dense_region() {
        let mut s = vec![0.1; 30];
        for v in s.iter_mut().skip(12).take(6) {
            *v = 1.0;
        }
        let env = TemporalEnvelope::new(0.0, 1.0, s).unwrap();
        let g = gate_window(&env, 0.5).unwrap();
        assert!(g.start >= 11.0 && g.end <= 19.0, "{g:?}");
    }

    #[test]
    fn missing_gate_is_flagged() {
        let r = rect(0.0, 1.0, 20);
        let d = joint_density(&r, &r, 0.0).unwrap();
        let c = coincidence_curve(&d, &GateWindow::new(100.0, 120.0).unwrap(), &[0.0, 1.0]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.value, vec![0.0, 0.0]);
    }

    #[test]
    fn full_reduces_to_single_line() {
        let a = exponential_envelope(60.0, 0.0, 600.0, 1.0).unwrap();
        let b = exponential_envelope(20.0, 0.0, 200.0, 1.0).unwrap();
        let plain = joint_density(&a, &b, 0.0).unwrap();
        let full = joint_density_full(&a, &EmissionMixture::pure(b.clone()), &SpectralModel::ideal()).unwrap();
        for m in [-40, -3, 0, 7, 90] {
            assert_eq!(plain.row(m), full.row(m));
        }
        let mix = branching_mixture(b, 0.0).unwrap();
        let full = joint_density_full(&a, &mix, &SpectralModel::ideal()).unwrap();
        assert_eq!(plain.row(12), full.row(12));
    }

    #[test]
    fn two_curve_sum_matches_explicit_weighted_sum() {
        let a = exponential_envelope(40.0, 0.0, 400.0, 2.0).unwrap();
        let b = exponential_envelope(10.0, 0.0, 60.0, 2.0).unwrap();
        let mix = branching_mixture(b.clone(), 0.25).unwrap();
        let spec = SpectralModel::single(TAU * 0.01);
        let d = joint_density_full(&a, &mix, &spec).unwrap();
        let grid: Vec<f64> = (-50..=50).map(|m| 2.0 * m as f64).collect();
        let gate = GateWindow::new(-100.0, 1000.0).unwrap();
        let mixed = coincidence_curve(&d, &gate, &grid).unwrap();
        let direct = coincidence_curve(&joint_density(&a, &b, TAU * 0.01).unwrap(), &gate, &grid).unwrap();
        let mut expected: Vec<f64> = direct.value.iter().map(|v| 0.75 * v).collect();
        for (k, w) in mix.delay().weights().iter().enumerate() {
            let shifted = b.shifted(2.0 * k as f64);
            let dk = coincidence_curve(&joint_density(&a, &shifted, TAU * 0.01).unwrap(), &gate, &grid).unwrap();
            for (e, v) in expected.iter_mut().zip(&dk.value) {
                *e += 0.25 * w * v;
            }
        }
        for (x, y) in mixed.value.iter().zip(&expected) {
            assert!((x - y).abs() < 1e-13, "{x} vs {y}");
        }
    }

    #[test]
    fn drift_quadrature_matches_closed_form() {
        let s = SpectralModel::ideal().with_offset(TAU * 0.02).with_drift(TAU * 0.01).unwrap();
        for tau in [0.0, 7.0, 16.0, 33.0] {
            let q = drift_average_quadrature(TAU * 0.02, TAU * 0.01, tau, 2001);
            assert!((q - s.cross_factor(tau)).abs() < 1e-12);
        }
        assert!(((-0.5f64 * (TAU * 0.01 * 16.0).powi(2)).exp() - 0.603).abs() < 1e-3);
    }

    #[test]
    fn offset_period_is_fifty_ns() {
        let s = SpectralModel::new(vec![SpectralLine { detuning: 0.0, weight: 1.0 }], TAU * 0.02, 0.0).unwrap();
        assert!((s.cross_factor(50.0) - 1.0).abs() < 1e-12);
        assert!((s.cross_factor(25.0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn dip_width_of_rectangles() {
        let r = rect(0.0, 1.0, 20);
        let d = joint_density(&r, &r, 0.0).unwrap();
        let grid: Vec<f64> = (-30..=30).map(|m| m as f64).collect();
        let int = coincidence_curve(&d, &d.support(), &grid).unwrap();
        let non = coincidence_curve(&d.without_interference(), &d.support(), &grid).unwrap();
        assert!((dip_fwhm(&int, &non).unwrap() - 20.0).abs() < 1e-9);
    }
}
