//! Bell-state analysis of the atom–ion photon pair and the heralded
//! matter-qubit state.
//!
//! Photons carry polarization entangled with their emitter (H ↔ ↓, V ↔ ↑).
//! The beamsplitter is applied numerically to two-photon states over explicit
//! single-photon modes (port × polarization × distinguishability), and the
//! heralded matter state is obtained by projecting onto the click pattern and
//! tracing out the photons.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::counting::OverlapParam;
use crate::error::{param, Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Photon polarization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pol {
    H,
    V,
}

impl fmt::Display for Pol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pol::H => "H",
            Pol::V => "V",
        })
    }
}

/// Photonic Bell states of the two input ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BellState {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

/// Click patterns that herald entanglement: ψ₊ (H and V in one output
/// port) and ψ₋ (H and V in opposite ports).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Herald {
    PsiPlus,
    PsiMinus,
}

impl Herald {
    fn sign(self) -> f64 {
        match self {
            Herald::PsiPlus => 1.0,
            Herald::PsiMinus => -1.0,
        }
    }

    /// Target matter state `(|↓↑⟩ ± |↑↓⟩)/√2`.
    pub fn target(self) -> Vector4<Complex64> {
        let s = self.sign() * FRAC_1_SQRT_2;
        Vector4::new(ZERO, Complex64::from(FRAC_1_SQRT_2), Complex64::from(s), ZERO)
    }
}

/// Photons in the two output ports, e.g. `|HV,0⟩` or `|H,V⟩`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortOccupation {
    pub x: Vec<Pol>,
    pub y: Vec<Pol>,
}

impl fmt::Display for PortOccupation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |p: &[Pol]| {
            if p.is_empty() {
                "0".to_string()
            } else {
                p.iter().map(|q| q.to_string()).collect()
            }
        };
        write!(f, "|{},{}⟩", side(&self.x), side(&self.y))
    }
}

// Single-photon mode: port (0 = a/x, 1 = b/y), polarization, and whether the
// photon is in the reference mode (0) or an orthogonal one (1).
const MODES: usize = 8;

fn mode(port: usize, pol: Pol, kind: usize) -> usize {
    port * 4 + (pol as usize) * 2 + kind
}

fn mode_port(m: usize) -> usize {
    m / 4
}

fn mode_pol(m: usize) -> Pol {
    if (m / 2) % 2 == 0 {
        Pol::H
    } else {
        Pol::V
    }
}

type Linear = [Complex64; MODES];

/// Coefficients `C[i][j]` (i ≤ j) of `Σ C a_i† a_j† |0⟩`.
#[derive(Clone)]
struct TwoPhoton([[Complex64; MODES]; MODES]);

impl TwoPhoton {
    fn product(u: &Linear, v: &Linear) -> Self {
        let mut c = [[ZERO; MODES]; MODES];
        for i in 0..MODES {
            for j in 0..MODES {
                let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
                c[lo][hi] += u[i] * v[j];
            }
        }
        TwoPhoton(c)
    }

    /// Amplitude on the normalized Fock state with photons in `i ≤ j`.
    fn fock(&self, i: usize, j: usize) -> Complex64 {
        if i == j {
            self.0[i][i] * std::f64::consts::SQRT_2
        } else {
            self.0[i][j]
        }
    }
}

fn creation(port: usize, pol: Pol, overlap: f64) -> Linear {
    let mut l = [ZERO; MODES];
    l[mode(port, pol, 0)] = Complex64::from(overlap.sqrt());
    l[mode(port, pol, 1)] = Complex64::from((1.0 - overlap).sqrt());
    l
}

/// 50:50 beamsplitter: `a† → (x† + i y†)/√2`, `b† → (i x† + y†)/√2`.
fn beamsplitter(input: &Linear) -> Linear {
    let mut out = [ZERO; MODES];
    for (m, amp) in input.iter().enumerate() {
        if *amp == ZERO {
            continue;
        }
        let (pol, kind) = (mode_pol(m), m % 2);
        let (to_x, to_y) = if mode_port(m) == 0 { (Complex64::from(1.0), I) } else { (I, Complex64::from(1.0)) };
        out[mode(0, pol, kind)] += amp * to_x * FRAC_1_SQRT_2;
        out[mode(1, pol, kind)] += amp * to_y * FRAC_1_SQRT_2;
    }
    out
}

fn input_pair(pol_a: Pol, pol_b: Pol, overlap: f64) -> TwoPhoton {
    let a = beamsplitter(&creation(0, pol_a, overlap));
    let b = beamsplitter(&creation(1, pol_b, 1.0));
    TwoPhoton::product(&a, &b)
}

/// Output of the beamsplitter for a photonic Bell state at its inputs, as
/// `(amplitude, occupation)` on normalized Fock states.
pub fn beamsplitter_bell_action(state: BellState) -> Vec<(Complex64, PortOccupation)> {
    let (first, second, sign) = match state {
        BellState::PhiPlus => ((Pol::H, Pol::H), (Pol::V, Pol::V), 1.0),
        BellState::PhiMinus => ((Pol::H, Pol::H), (Pol::V, Pol::V), -1.0),
        BellState::PsiPlus => ((Pol::H, Pol::V), (Pol::V, Pol::H), 1.0),
        BellState::PsiMinus => ((Pol::H, Pol::V), (Pol::V, Pol::H), -1.0),
    };
    let p = input_pair(first.0, first.1, 1.0);
    let q = input_pair(second.0, second.1, 1.0);
    let mut out = Vec::new();
    for i in 0..MODES {
        for j in i..MODES {
            let amp = (p.fock(i, j) + q.fock(i, j) * sign) * FRAC_1_SQRT_2;
            if amp.norm() < 1e-14 {
                continue;
            }
            let mut occ = PortOccupation { x: Vec::new(), y: Vec::new() };
            for m in [i, j] {
                if mode_port(m) == 0 {
                    occ.x.push(mode_pol(m));
                } else {
                    occ.y.push(mode_pol(m));
                }
            }
            occ.x.sort();
            occ.y.sort();
            out.push((amp, occ));
        }
    }
    out.sort_by(|a, b| a.1.cmp(&b.1));
    out
}

/// Emitter amplitudes: atom `α|↓⟩|H⟩ + β|↑⟩|V⟩`, ion `γ|↓⟩|H⟩ + δ|↑⟩|V⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeSet {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub gamma: Complex64,
    pub delta: Complex64,
}

impl AmplitudeSet {
    pub fn new(alpha: Complex64, beta: Complex64, gamma: Complex64, delta: Complex64) -> Result<Self> {
        let a = AmplitudeSet { alpha, beta, gamma, delta };
        a.validate()?;
        Ok(a)
    }

    /// All four amplitudes `1/√2`.
    pub fn balanced() -> Self {
        let h = Complex64::from(FRAC_1_SQRT_2);
        AmplitudeSet { alpha: h, beta: h, gamma: h, delta: h }
    }

    pub fn validate(&self) -> Result<()> {
        let atom = self.alpha.norm_sqr() + self.beta.norm_sqr();
        let ion = self.gamma.norm_sqr() + self.delta.norm_sqr();
        if (atom - 1.0).abs() > 1e-12 || (ion - 1.0).abs() > 1e-12 {
            return param(format!("amplitudes must be normalized per emitter, got {atom} and {ion}"));
        }
        Ok(())
    }

    // Matter basis order: ↓↓, ↓↑, ↑↓, ↑↑ with the atom first.
    fn matter_amplitude(&self, s: usize) -> Complex64 {
        let atom = if s < 2 { self.alpha } else { self.beta };
        let ion = if s % 2 == 0 { self.gamma } else { self.delta };
        atom * ion
    }
}

/// Two-qubit matter state over `{↓↓, ↓↑, ↑↓, ↑↑}` (atom first).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatterDensityMatrix(Matrix4<Complex64>);

impl MatterDensityMatrix {
    /// Checks Hermiticity, unit trace and positivity.
    pub fn new(m: Matrix4<Complex64>) -> Result<Self> {
        let rho = MatterDensityMatrix(m);
        rho.validate()?;
        Ok(rho)
    }

    pub fn matrix(&self) -> &Matrix4<Complex64> {
        &self.0
    }

    pub fn hermiticity_error(&self) -> f64 {
        (self.0 - self.0.adjoint()).norm()
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        let herm = (self.0 + self.0.adjoint()) * Complex64::from(0.5);
        let e = SymmetricEigen::new(herm).eigenvalues;
        let mut v = [e[0], e[1], e[2], e[3]];
        v.sort_by(f64::total_cmp);
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.hermiticity_error() >= 1e-12 {
            return Err(Error::Domain(format!("density matrix is not Hermitian ({:e})", self.hermiticity_error())));
        }
        let tr = self.trace();
        if (tr.re - 1.0).abs() > 1e-12 || tr.im.abs() > 1e-12 {
            return Err(Error::Domain(format!("density matrix trace is {tr}")));
        }
        let min = self.eigenvalues()[0];
        if min < -1e-10 {
            return Err(Error::Domain(format!("density matrix has eigenvalue {min}")));
        }
        Ok(())
    }
}

/// Unnormalized state after projecting onto the herald pattern, and its
/// probability.
fn projected(amps: &AmplitudeSet, c: f64, herald: Herald) -> (Matrix4<Complex64>, f64) {
    let pols = [Pol::H, Pol::V];
    let outputs: Vec<TwoPhoton> =
        (0..4).map(|s| input_pair(pols[s / 2], pols[s % 2], c)).collect();
    let mut rho = Matrix4::zeros();
    for i in 0..MODES {
        for j in i + 1..MODES {
            if mode_pol(i) == mode_pol(j) {
                continue;
            }
            let same_port = mode_port(i) == mode_port(j);
            if same_port != (herald == Herald::PsiPlus) {
                continue;
            }
            let v = Vector4::from_fn(|s, _| amps.matter_amplitude(s) * outputs[s].fock(i, j));
            rho += v * v.adjoint();
        }
    }
    let p = rho.trace().re;
    (rho, p)
}

/// Probability that a pair produces the herald pattern.
pub fn herald_probability(amps: &AmplitudeSet, c: OverlapParam, herald: Herald) -> Result<f64> {
    amps.validate()?;
    Ok(projected(amps, c.value(), herald).1)
}

/// Matter state heralded by the click pattern, normalized.
pub fn heralded_state(amps: &AmplitudeSet, c: OverlapParam, herald: Herald) -> Result<MatterDensityMatrix> {
    amps.validate()?;
    let (rho, p) = projected(amps, c.value(), herald);
    if p < 1e-300 {
        return Err(Error::DegenerateHerald("αδ and βγ both vanish; the herald never fires".into()));
    }
    let rho = rho / Complex64::from(p);
    // Symmetrize away rounding before validating.
    MatterDensityMatrix::new((rho + rho.adjoint()) * Complex64::from(0.5))
}

/// Closed form of the heralded state:
/// `N [c · coherent block + (1 − c) · diagonal block]` with off-diagonal
/// `± α β* γ* δ` and `N = 1/(|αδ|² + |βγ|²)`.
pub fn heralded_state_closed_form(amps: &AmplitudeSet, c: OverlapParam, herald: Herald) -> Result<MatterDensityMatrix> {
    amps.validate()?;
    let AmplitudeSet { alpha, beta, gamma, delta } = *amps;
    let ad = alpha.norm_sqr() * delta.norm_sqr();
    let bg = beta.norm_sqr() * gamma.norm_sqr();
    if ad + bg < 1e-300 {
        return Err(Error::DegenerateHerald("αδ and βγ both vanish; the herald never fires".into()));
    }
    let n = 1.0 / (ad + bg);
    let off = alpha * beta.conj() * gamma.conj() * delta * (herald.sign() * c.value() * n);
    let mut m = Matrix4::zeros();
    m[(1, 1)] = Complex64::from(ad * n);
    m[(2, 2)] = Complex64::from(bg * n);
    m[(1, 2)] = off;
    m[(2, 1)] = off.conj();
    MatterDensityMatrix::new(m)
}

/// `⟨target|ρ|target⟩`.
pub fn fidelity(rho: &MatterDensityMatrix, target: Herald) -> f64 {
    let t = target.target();
    (t.adjoint() * rho.matrix() * t)[(0, 0)].re
}

/// `F = (1 + V)/2`. Only valid when both sources have `g²(0) = 0`, where the
/// visibility equals the mode overlap.
pub fn fidelity_from_visibility(visibility: f64, g2_atom: f64, g2_ion: f64) -> Result<f64> {
    if g2_atom != 0.0 || g2_ion != 0.0 {
        return Err(Error::Domain(format!(
            "visibility stands in for the overlap only when both g2(0) are 0, got {g2_atom} and {g2_ion}"
        )));
    }
    if !(0.0..=1.0).contains(&visibility) {
        return Err(Error::Domain(format!("visibility {visibility} is outside [0, 1]")));
    }
    Ok((1.0 + visibility) / 2.0)
}

/// Named multiplicative gain on the entanglement rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImprovementFactor {
    pub label: String,
    pub factor: f64,
}

fn one() -> f64 {
    1.0
}

/// Background-subtracted heralding events over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateScenario {
    pub coincidences: f64,
    pub run_time_s: f64,
    #[serde(default)]
    pub improvement_factors: Vec<ImprovementFactor>,
    /// Share of coincidences that herald; ½ when only ψ± patterns count and
    /// nothing recovers the loss.
    #[serde(default = "one")]
    pub heralding_fraction: f64,
}

impl RateScenario {
    pub fn new(coincidences: f64, run_time_s: f64) -> Self {
        RateScenario { coincidences, run_time_s, improvement_factors: Vec::new(), heralding_fraction: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.run_time_s > 0.0 && self.run_time_s.is_finite()) {
            return param(format!("run time must be positive, got {} s", self.run_time_s));
        }
        if !(self.coincidences >= 0.0) {
            return param("coincidences must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.heralding_fraction) {
            return param("heralding fraction must lie in [0, 1]");
        }
        if let Some(f) = self.improvement_factors.iter().find(|f| !(f.factor >= 0.0 && f.factor.is_finite())) {
            return param(format!("improvement factor '{}' must be nonnegative", f.label));
        }
        Ok(())
    }

    pub fn total_improvement(&self) -> f64 {
        self.improvement_factors.iter().map(|f| f.factor).product()
    }
}

/// Current and projected entanglement rates, 1/s.
pub fn entanglement_rate(s: &RateScenario) -> Result<(f64, f64)> {
    s.validate()?;
    let current = s.coincidences / s.run_time_s * s.heralding_fraction;
    Ok((current, current * s.total_improvement()))
}

/// One row of a rate/fidelity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRow {
    pub label: String,
    pub coincidences: f64,
    pub visibility: f64,
    #[serde(default)]
    pub visibility_err: f64,
}

/// Input for a rate/fidelity table: shared run parameters and one row per
/// coincidence window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntanglementTable {
    pub run_time_s: f64,
    #[serde(default)]
    pub g2_atom: f64,
    #[serde(default)]
    pub g2_ion: f64,
    #[serde(default = "one")]
    pub heralding_fraction: f64,
    #[serde(default)]
    pub improvement_factors: Vec<ImprovementFactor>,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableLine {
    pub label: String,
    pub fidelity: f64,
    pub fidelity_err: f64,
    pub current_rate: f64,
    pub projected_rate: f64,
}

impl EntanglementTable {
    pub fn evaluate(&self) -> Result<Vec<TableLine>> {
        if self.rows.is_empty() {
            return param("table has no rows");
        }
        self.rows
            .iter()
            .map(|row| {
                let scenario = RateScenario {
                    coincidences: row.coincidences,
                    run_time_s: self.run_time_s,
                    improvement_factors: self.improvement_factors.clone(),
                    heralding_fraction: self.heralding_fraction,
                };
                let (current, projected) = entanglement_rate(&scenario)?;
                Ok(TableLine {
                    label: row.label.clone(),
                    fidelity: fidelity_from_visibility(row.visibility, self.g2_atom, self.g2_ion)?,
                    fidelity_err: row.visibility_err.abs() / 2.0,
                    current_rate: current,
                    projected_rate: projected,
                })
            })
            .collect()
    }
}
