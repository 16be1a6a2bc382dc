//! JSON experiment description and its conversion into envelopes and
//! spectra ready for simulation.
//!
//! Frequencies in the config are ordinary frequencies in MHz; the library
//! works in rad/ns, so `ω = 2π · f · 1e-3`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::interference::{JointDensity, MixtureCoherence};
use crate::wavepacket::{
    barium_sigma_transitions, bloch_emission_profile_with, branching_mixture, exponential_envelope, zeeman_lines,
    BlochParams, EmissionMixture, SpectralLine, SpectralModel, TemporalEnvelope, ZeemanTransition, G_D32, G_S12,
};

/// Converts MHz to rad/ns.
pub fn mhz(f: f64) -> f64 {
    TAU * f * 1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Cw,
    Pulsed,
}

/// Statistics of one photon source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default)]
    pub label: String,
    /// Photon rate at the beamsplitter (1/s) in CW mode; probability per
    /// emission slot in pulsed mode. Zero disables the source.
    pub rate: f64,
    #[serde(default)]
    pub g2_zero: f64,
    /// Width of the antibunching dip, ns. Defaults to 100 ns for the atom and
    /// 10 ns for the ion.
    #[serde(default)]
    pub coherence_ns: Option<f64>,
    /// Uncorrelated background photons from this source, 1/s.
    #[serde(default)]
    pub background_rate: f64,
}

impl SourceSpec {
    pub fn new(rate: f64, g2_zero: f64) -> Self {
        SourceSpec { label: String::new(), rate, g2_zero, coherence_ns: None, background_rate: 0.0 }
    }
}

/// Detector response shared by the two output channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    #[serde(default = "unit_pair")]
    pub efficiency: [f64; 2],
    /// Dark count rate per channel, 1/s.
    #[serde(default)]
    pub dark_rate: [f64; 2],
    #[serde(default)]
    pub dead_time_ns: f64,
    #[serde(default)]
    pub afterpulse_probability: f64,
    /// Mean delay of an afterpulse after the dead time, ns.
    #[serde(default = "default_afterpulse_delay")]
    pub afterpulse_delay_ns: f64,
}

fn unit_pair() -> [f64; 2] {
    [1.0, 1.0]
}

fn default_afterpulse_delay() -> f64 {
    50.0
}

impl Default for DetectorSpec {
    fn default() -> Self {
        DetectorSpec {
            efficiency: unit_pair(),
            dark_rate: [0.0, 0.0],
            dead_time_ns: 0.0,
            afterpulse_probability: 0.0,
            afterpulse_delay_ns: default_afterpulse_delay(),
        }
    }
}

/// Photon temporal shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvelopeSpec {
    Exponential {
        decay_ns: f64,
        #[serde(default)]
        rise_ns: f64,
        /// Defaults to ten decay constants.
        #[serde(default)]
        span_ns: Option<f64>,
    },
    Bloch {
        rabi_mhz: f64,
        detuning_mhz: f64,
        pulse_ns: f64,
        branching_to_ground: f64,
        #[serde(default = "default_bloch_step")]
        step_ns: f64,
        #[serde(default)]
        linewidth_mhz: Option<f64>,
    },
    Samples {
        t0_ns: f64,
        dt_ns: f64,
        samples: Vec<f64>,
    },
}

fn default_bloch_step() -> f64 {
    0.05
}

impl EnvelopeSpec {
    pub fn exponential(decay_ns: f64) -> Self {
        EnvelopeSpec::Exponential { decay_ns, rise_ns: 0.0, span_ns: None }
    }

    /// Builds the envelope on a lattice of step `grid_ns` aligned to zero.
    pub fn build(&self, grid_ns: f64) -> Result<TemporalEnvelope> {
        match self {
            EnvelopeSpec::Exponential { decay_ns, rise_ns, span_ns } => {
                let span = span_ns.unwrap_or(10.0 * decay_ns);
                exponential_envelope(*decay_ns, *rise_ns, span, grid_ns)
            }
            EnvelopeSpec::Bloch { rabi_mhz, detuning_mhz, pulse_ns, branching_to_ground, step_ns, linewidth_mhz } => {
                let mut p = BlochParams::new(mhz(*rabi_mhz), mhz(*detuning_mhz), *pulse_ns, *branching_to_ground, *step_ns);
                if let Some(l) = linewidth_mhz {
                    p.linewidth = mhz(*l);
                }
                bloch_emission_profile_with(&p)?.regridded(grid_ns)
            }
            EnvelopeSpec::Samples { t0_ns, dt_ns, samples } => {
                TemporalEnvelope::new(*t0_ns, *dt_ns, samples.clone())?.regridded(grid_ns)
            }
        }
    }
}

/// Zeeman-split line set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZeemanSpec {
    pub b_gauss: f64,
    #[serde(default = "default_g_upper")]
    pub g_upper: f64,
    #[serde(default = "default_g_lower")]
    pub g_lower: f64,
    /// Defaults to σ pumping out of an equally populated D(3/2) manifold.
    #[serde(default)]
    pub transitions: Option<Vec<ZeemanTransition>>,
}

fn default_g_upper() -> f64 {
    G_D32
}

fn default_g_lower() -> f64 {
    G_S12
}

/// One explicit line, detuning in MHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub detuning_mhz: f64,
    pub weight: f64,
}

/// Relative spectrum of the two photons.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralSpec {
    #[serde(default)]
    pub lines: Option<Vec<LineSpec>>,
    #[serde(default)]
    pub zeeman: Option<ZeemanSpec>,
    #[serde(default)]
    pub offset_mhz: f64,
    /// Standard deviation of the centre-frequency drift, MHz.
    #[serde(default)]
    pub drift_mhz: f64,
}

impl SpectralSpec {
    pub fn build(&self) -> Result<SpectralModel> {
        let base = match (&self.lines, &self.zeeman) {
            (Some(_), Some(_)) => return param("give either explicit lines or a Zeeman field, not both"),
            (Some(lines), None) => SpectralModel::normalized(
                lines.iter().map(|l| SpectralLine { detuning: mhz(l.detuning_mhz), weight: l.weight }).collect(),
                0.0,
                0.0,
            )?,
            (None, Some(z)) => {
                let transitions = z.transitions.clone().unwrap_or_else(barium_sigma_transitions);
                zeeman_lines(z.b_gauss, z.g_upper, z.g_lower, &transitions)?
            }
            (None, None) => SpectralModel::ideal(),
        };
        base.with_offset(mhz(self.offset_mhz)).with_drift(mhz(self.drift_mhz))
    }
}

fn default_atom_envelope() -> EnvelopeSpec {
    EnvelopeSpec::exponential(120.0)
}

fn default_ion_envelope() -> EnvelopeSpec {
    EnvelopeSpec::exponential(50.0)
}

fn default_grid() -> f64 {
    1.0
}

fn default_window() -> f64 {
    10.0
}

fn default_period() -> f64 {
    5.0
}

fn default_atom_slot() -> f64 {
    4.25
}

fn default_ion_slots() -> Vec<f64> {
    vec![1.75, 4.25]
}

fn default_offset() -> f64 {
    40.0
}

/// Full description of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub duration_s: f64,
    pub atom: SourceSpec,
    pub ion: SourceSpec,
    /// Mode overlap `c` of the two photons.
    #[serde(default = "one")]
    pub overlap: f64,
    #[serde(default)]
    pub spectral: SpectralSpec,
    #[serde(default = "default_atom_envelope")]
    pub atom_envelope: EnvelopeSpec,
    #[serde(default = "default_ion_envelope")]
    pub ion_envelope: EnvelopeSpec,
    /// Probability that the ion returns to the metastable level before
    /// emitting, delaying the detected photon.
    #[serde(default)]
    pub ion_branch_back: f64,
    #[serde(default)]
    pub mixture_coherence: MixtureCoherence,
    /// Lattice step used for envelopes and joint-time sampling, ns.
    #[serde(default = "default_grid")]
    pub grid_ns: f64,
    /// CW mode: atom and ion photons closer than this interfere, ns.
    #[serde(default = "default_window")]
    pub interference_window_ns: f64,
    #[serde(default = "default_period")]
    pub pulse_period_us: f64,
    #[serde(default = "default_atom_slot")]
    pub atom_slot_us: f64,
    #[serde(default = "default_ion_slots")]
    pub ion_slot_offsets_us: Vec<f64>,
    /// Delay of the ion photon relative to the atom photon in the same slot.
    #[serde(default = "default_offset")]
    pub arrival_offset_ns: f64,
    #[serde(default)]
    pub detectors: DetectorSpec,
    #[serde(default)]
    pub rng_seed: u64,
    /// Length of one independently seeded generation block, s. Defaults to
    /// 1 s in CW mode and 0.1 s in pulsed mode.
    #[serde(default)]
    pub block_s: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl ExperimentConfig {
    /// CW configuration with the given rates and g2 values.
    pub fn cw(duration_s: f64, atom: SourceSpec, ion: SourceSpec, overlap: f64, seed: u64) -> Self {
        ExperimentConfig {
            mode: Mode::Cw,
            duration_s,
            atom,
            ion,
            overlap,
            spectral: SpectralSpec::default(),
            atom_envelope: default_atom_envelope(),
            ion_envelope: default_ion_envelope(),
            ion_branch_back: 0.0,
            mixture_coherence: MixtureCoherence::default(),
            grid_ns: default_grid(),
            interference_window_ns: default_window(),
            pulse_period_us: default_period(),
            atom_slot_us: default_atom_slot(),
            ion_slot_offsets_us: default_ion_slots(),
            arrival_offset_ns: default_offset(),
            detectors: DetectorSpec::default(),
            rng_seed: seed,
            block_s: None,
        }
    }

    /// Pulsed configuration with the default 5 µs sequence.
    pub fn pulsed(duration_s: f64, atom: SourceSpec, ion: SourceSpec, overlap: f64, seed: u64) -> Self {
        ExperimentConfig { mode: Mode::Pulsed, ..Self::cw(duration_s, atom, ion, overlap, seed) }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn block_len_s(&self) -> f64 {
        self.block_s.unwrap_or(match self.mode {
            Mode::Cw => 1.0,
            Mode::Pulsed => 0.1,
        })
    }

    pub fn coherence_ns(&self) -> (f64, f64) {
        (self.atom.coherence_ns.unwrap_or(100.0), self.ion.coherence_ns.unwrap_or(10.0))
    }

    /// Checks every field without building envelopes.
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return param(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return param(format!("overlap must lie in [0, 1], got {}", self.overlap));
        }
        for (name, s) in [("atom", &self.atom), ("ion", &self.ion)] {
            if !(s.rate >= 0.0 && s.rate.is_finite()) {
                return param(format!("{name}.rate must be nonnegative, got {}", s.rate));
            }
            if self.mode == Mode::Pulsed && s.rate > 1.0 {
                return param(format!("{name}.rate is a per-slot probability in pulsed mode, got {}", s.rate));
            }
            if !(s.g2_zero >= 0.0 && s.g2_zero.is_finite()) {
                return param(format!("{name}.g2_zero must be nonnegative, got {}", s.g2_zero));
            }
            if !(s.background_rate >= 0.0 && s.background_rate.is_finite()) {
                return param(format!("{name}.background_rate must be nonnegative"));
            }
            if let Some(t) = s.coherence_ns {
                if !(t > 0.0 && t.is_finite()) {
                    return param(format!("{name}.coherence_ns must be positive"));
                }
            }
        }
        let d = &self.detectors;
        if d.efficiency.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return param("detector efficiencies must lie in [0, 1]");
        }
        if d.dark_rate.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return param("dark rates must be nonnegative");
        }
        if !(d.dead_time_ns >= 0.0) || !(0.0..=1.0).contains(&d.afterpulse_probability) || !(d.afterpulse_delay_ns > 0.0) {
            return param("dead time must be nonnegative, afterpulse probability in [0, 1] and delay positive");
        }
        if !(0.0..1.0).contains(&self.ion_branch_back) {
            return param("ion_branch_back must lie in [0, 1)");
        }
        if !(self.grid_ns > 0.0) {
            return param("grid_ns must be positive");
        }
        if !(self.interference_window_ns >= 0.0) {
            return param("interference_window_ns must be nonnegative");
        }
        if let Some(b) = self.block_s {
            if !(b > 0.0) {
                return param("block_s must be positive");
            }
        }
        if self.mode == Mode::Pulsed {
            if !(self.pulse_period_us > 0.0 && self.pulse_period_us.is_finite()) {
                return param("pulse_period_us must be positive in pulsed mode");
            }
            let inside = |t: f64| (0.0..self.pulse_period_us).contains(&t);
            if !inside(self.atom_slot_us) || !self.ion_slot_offsets_us.iter().all(|t| inside(*t)) {
                return param("emission slots must lie within [0, pulse_period_us)");
            }
            if self.ion_slot_offsets_us.is_empty() {
                return param("ion_slot_offsets_us must list at least one slot");
            }
        }
        Ok(())
    }

    /// Resolves envelopes and spectrum.
    pub fn build(&self) -> Result<BuiltModel> {
        self.validate()?;
        let atom = self.atom_envelope.build(self.grid_ns)?;
        let ion_direct = self.ion_envelope.build(self.grid_ns)?;
        let ion = branching_mixture(ion_direct, self.ion_branch_back)?.regridded(self.grid_ns)?;
        let spectrum = self.spectral.build()?;
        Ok(BuiltModel { atom, ion, spectrum, coherence: self.mixture_coherence, overlap: self.overlap })
    }
}

/// Envelopes and spectrum resolved from an [`ExperimentConfig`].
#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub atom: TemporalEnvelope,
    pub ion: EmissionMixture,
    pub spectrum: SpectralModel,
    pub coherence: MixtureCoherence,
    pub overlap: f64,
}

impl BuiltModel {
    /// Joint density of an overlapped pair with the ion photon delayed by
    /// `offset_ns`.
    pub fn joint_density(&self, offset_ns: f64) -> Result<JointDensity> {
        let ion = self.ion.shifted(offset_ns).regridded(self.atom.dt())?;
        JointDensity::full(&self.atom, &ion, &self.spectrum)?
            .with_coherence(self.coherence)
            .with_overlap(self.overlap)
    }

    /// Time from the first to the last possible arrival of either photon.
    pub fn photon_span_ns(&self, offset_ns: f64) -> f64 {
        let start = self.atom.t0().min(self.ion.direct().t0() + offset_ns);
        let end = self.atom.t_end().max(self.ion.t_end() + offset_ns);
        end - start
    }
}

impl std::str::FromStr for ExperimentConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::from_json(s)
    }
}
