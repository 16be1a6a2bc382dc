//! Closed-form two-photon counting statistics at a 50:50 beamsplitter.
//!
//! With at most two photons in the input, the zero-delay coincidence rate is
//! `Δτ R_a R_i [ (1−c)/2 + (r g2_a + g2_i / r) / 4 ]`, `r = R_a / R_i`.
//! Everything here follows from that expression. The multiphoton factor is
//! used in its inverse form, `f_mp = [1 + (r g2_a + g2_i / r)/2]⁻¹`, so that
//! the expected visibility is `V = c · f_mp`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Count statistics of one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceStats {
    /// Singles rate (1/s) for a continuous source, or per-attempt detection
    /// probability for a pulsed one.
    pub rate: f64,
    pub g2_zero: f64,
    #[serde(default)]
    pub label: String,
}

impl SourceStats {
    pub fn new(label: impl Into<String>, rate: f64, g2_zero: f64) -> Result<Self> {
        let s = SourceStats { rate, g2_zero, label: label.into() };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return param(format!("source {:?}: rate must be positive, got {}", self.label, self.rate));
        }
        if !(self.g2_zero >= 0.0 && self.g2_zero.is_finite()) {
            return param(format!("source {:?}: g2(0) must be nonnegative, got {}", self.label, self.g2_zero));
        }
        Ok(())
    }
}

/// Mode overlap `c` of the two photons, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct OverlapParam(f64);

impl OverlapParam {
    pub fn new(c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return param(format!("mode overlap must lie in [0, 1], got {c}"));
        }
        Ok(OverlapParam(c))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for OverlapParam {
    type Error = Error;
    fn try_from(c: f64) -> Result<Self> {
        OverlapParam::new(c)
    }
}

impl From<OverlapParam> for f64 {
    fn from(c: OverlapParam) -> f64 {
        c.0
    }
}

/// Probability that one photon in each input leaves by different ports.
pub fn coincidence_prob_11(c: OverlapParam) -> f64 {
    (1.0 - c.0) / 2.0
}

/// Probability that two photons in one input leave by different ports.
pub fn coincidence_prob_20() -> f64 {
    0.5
}

fn ratio(atom: &SourceStats, ion: &SourceStats) -> Result<f64> {
    if ion.rate == 0.0 {
        return Err(Error::Domain("ion rate is zero; rate ratio undefined".into()));
    }
    atom.validate()?;
    ion.validate()?;
    Ok(atom.rate / ion.rate)
}

fn multiphoton_excess(r: f64, g2_atom: f64, g2_ion: f64) -> f64 {
    r * g2_atom + g2_ion / r
}

/// `f_mp = [1 + (r g2_a + g2_i / r) / 2]⁻¹`.
pub fn multiphoton_factor(atom: &SourceStats, ion: &SourceStats) -> Result<f64> {
    let r = ratio(atom, ion)?;
    Ok(1.0 / (1.0 + 0.5 * multiphoton_excess(r, atom.g2_zero, ion.g2_zero)))
}

/// First-order uncertainty of `f_mp` from independent 1σ errors on the two
/// g²(0) values.
pub fn multiphoton_factor_sigma(atom: &SourceStats, ion: &SourceStats, sigma_g2_atom: f64, sigma_g2_ion: f64) -> Result<f64> {
    let r = ratio(atom, ion)?;
    let f = multiphoton_factor(atom, ion)?;
    // df/dg = -f² · (∂x/∂g) / 2
    let da = 0.5 * f * f * r;
    let di = 0.5 * f * f / r;
    Ok(((da * sigma_g2_atom).powi(2) + (di * sigma_g2_ion).powi(2)).sqrt())
}

/// Zero-delay coincidences normalized to the classical `c = 0`,
/// `g2 = 1` level: `[2(1−c) + r g2_a + g2_i/r] / [2 + r + 1/r]`.
pub fn normalized_coincidence(c: OverlapParam, atom: &SourceStats, ion: &SourceStats) -> Result<f64> {
    let r = ratio(atom, ion)?;
    Ok((2.0 * (1.0 - c.0) + multiphoton_excess(r, atom.g2_zero, ion.g2_zero)) / (2.0 + r + 1.0 / r))
}

/// `V = c · f_mp`, assuming equal rate ratios in both configurations.
pub fn expected_visibility(c: OverlapParam, atom: &SourceStats, ion: &SourceStats) -> Result<f64> {
    Ok(c.0 * multiphoton_factor(atom, ion)?)
}

/// Expected visibility when the parallel and perpendicular runs have
/// different rate ratios. The perpendicular run is taken as fully
/// distinguishable.
pub fn expected_visibility_unequal(
    c: OverlapParam,
    atom_par: &SourceStats,
    ion_par: &SourceStats,
    atom_perp: &SourceStats,
    ion_perp: &SourceStats,
) -> Result<f64> {
    let n_par = normalized_coincidence(c, atom_par, ion_par)?;
    let n_perp = normalized_coincidence(OverlapParam(0.0), atom_perp, ion_perp)?;
    measured_visibility(n_perp, n_par)
}

/// `V = (n⊥ − n∥) / n⊥`.
pub fn measured_visibility(n_perp: f64, n_par: f64) -> Result<f64> {
    if !(n_perp > 0.0) {
        return Err(Error::UndefinedVisibility(format!("perpendicular level must be positive, got {n_perp}")));
    }
    Ok((n_perp - n_par) / n_perp)
}

/// Visibility and its first-order Poisson error from raw zero-delay counts
/// that share one normalization. A zero count contributes the error of a
/// single count.
pub fn measured_visibility_counts(counts_perp: f64, counts_par: f64) -> Result<(f64, f64)> {
    let v = measured_visibility(counts_perp, counts_par)?;
    let ratio = counts_par / counts_perp;
    let rel_par = 1.0 / counts_par.max(1.0);
    let rel_perp = 1.0 / counts_perp.max(1.0);
    let sigma = if counts_par > 0.0 {
        ratio * (rel_par + rel_perp).sqrt()
    } else {
        1.0 / counts_perp
    };
    Ok((v, sigma))
}
