//! `theory`: gated coincidence curves and counting band levels.

use std::io::Write;

use homwb::counting::{expected_visibility, multiphoton_factor, normalized_coincidence, OverlapParam, SourceStats};
use homwb::interference::{
    coincidence_curve, dip_fwhm, gate_window, noninterfering_curve, normalize_pair, GateWindow, MixtureCoherence,
    TheoryCurve,
};
use homwb::montecarlo::{EnvelopeSpec, ExperimentConfig, SourceSpec, SpectralSpec};
use serde::{Deserialize, Serialize};

use crate::{io_error, write_json, CliError, CliResult, Run};

const MAX_TAU_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TheoryConfig {
    #[serde(default = "default_atom")]
    atom_envelope: EnvelopeSpec,
    #[serde(default = "default_ion")]
    ion_envelope: EnvelopeSpec,
    #[serde(default)]
    ion_branch_back: f64,
    #[serde(default)]
    mixture_coherence: MixtureCoherence,
    #[serde(default)]
    spectral: SpectralSpec,
    #[serde(default = "default_grid")]
    grid_ns: f64,
    /// Arrival delay of the ion photon after the atom photon, ns.
    #[serde(default)]
    ion_delay_ns: f64,
    #[serde(default = "default_overlap")]
    overlap: f64,
    #[serde(default)]
    gate: Option<GateSpec>,
    tau: TauGrid,
    #[serde(default)]
    bands: Option<Bands>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum GateReference {
    Atom,
    #[default]
    Ion,
}

/// Either an explicit window or the shortest window holding a share of one
/// photon's intensity.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GateSpec {
    #[serde(default)]
    start_ns: Option<f64>,
    #[serde(default)]
    end_ns: Option<f64>,
    #[serde(default)]
    area_fraction: Option<f64>,
    #[serde(default)]
    reference: GateReference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TauGrid {
    min_ns: f64,
    max_ns: f64,
    step_ns: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Bands {
    atom: SourceStats,
    ion: SourceStats,
}

fn default_atom() -> EnvelopeSpec {
    EnvelopeSpec::exponential(120.0)
}

fn default_ion() -> EnvelopeSpec {
    EnvelopeSpec::exponential(50.0)
}

fn default_grid() -> f64 {
    1.0
}

fn default_overlap() -> f64 {
    1.0
}

#[derive(Debug, Serialize)]
struct BandReport {
    multiphoton_factor: f64,
    n_parallel: f64,
    n_perpendicular: f64,
    visibility: f64,
}

#[derive(Debug, Serialize)]
struct TheoryReport {
    gate: GateWindow,
    points: usize,
    degenerate: bool,
    reference_peak: f64,
    interfering_at_zero: f64,
    dip_fwhm_ns: Option<f64>,
    bands: Option<BandReport>,
}

impl TauGrid {
    fn points(&self) -> CliResult<Vec<f64>> {
        let TauGrid { min_ns, max_ns, step_ns } = *self;
        if !(min_ns.is_finite() && max_ns.is_finite() && min_ns <= max_ns) {
            return Err(CliError::Input("tau grid needs finite min_ns <= max_ns".into()));
        }
        if !(step_ns > 0.0) {
            return Err(CliError::Input("tau.step_ns must be positive".into()));
        }
        let n = ((max_ns - min_ns) / step_ns + 1e-9).floor() as usize + 1;
        if n > MAX_TAU_POINTS {
            return Err(CliError::Input(format!("tau grid has {n} points, above {MAX_TAU_POINTS}")));
        }
        Ok((0..n).map(|i| min_ns + i as f64 * step_ns).collect())
    }
}

pub fn run(run: &mut Run) -> CliResult<()> {
    let cfg: TheoryConfig = run.read_config()?;
    run.manifest.config = serde_json::to_value(&cfg).ok();
    let tau = cfg.tau.points()?;

    let mut model_cfg = ExperimentConfig::cw(1.0, SourceSpec::new(0.0, 0.0), SourceSpec::new(0.0, 0.0), cfg.overlap, 0);
    model_cfg.atom_envelope = cfg.atom_envelope.clone();
    model_cfg.ion_envelope = cfg.ion_envelope.clone();
    model_cfg.ion_branch_back = cfg.ion_branch_back;
    model_cfg.mixture_coherence = cfg.mixture_coherence;
    model_cfg.spectral = cfg.spectral.clone();
    model_cfg.grid_ns = cfg.grid_ns;
    let model = model_cfg.build()?;
    let density = model.joint_density(cfg.ion_delay_ns)?;
    let ion = model.ion.shifted(cfg.ion_delay_ns).regridded(model.atom.dt())?;

    let gate = match &cfg.gate {
        None => density.support(),
        Some(g) => match (g.start_ns, g.end_ns, g.area_fraction) {
            (Some(s), Some(e), None) => GateWindow::new(s, e)?,
            (None, None, Some(f)) => match g.reference {
                GateReference::Atom => gate_window(&model.atom, f)?,
                GateReference::Ion => gate_window(&ion.intensity_envelope(), f)?,
            },
            _ => return Err(CliError::Input("gate needs either start_ns and end_ns or area_fraction".into())),
        },
    };

    let bands = match &cfg.bands {
        None => None,
        Some(b) => {
            let c = OverlapParam::new(cfg.overlap)?;
            Some(BandReport {
                multiphoton_factor: multiphoton_factor(&b.atom, &b.ion)?,
                n_parallel: normalized_coincidence(c, &b.atom, &b.ion)?,
                n_perpendicular: normalized_coincidence(OverlapParam::new(0.0)?, &b.atom, &b.ion)?,
                visibility: expected_visibility(c, &b.atom, &b.ion)?,
            })
        }
    };

    let interfering = coincidence_curve(&density, &gate, &tau)?;
    let reference = noninterfering_curve(&model.atom, &ion, &gate, &tau)?;
    let reference_peak = reference.peak();
    let (interfering, reference) = if interfering.degenerate {
        (interfering, reference)
    } else {
        normalize_pair(&interfering, &reference)?
    };
    let zero = tau.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).map(|(i, _)| i).unwrap_or(0);
    let report = TheoryReport {
        gate,
        points: tau.len(),
        degenerate: interfering.degenerate,
        reference_peak,
        interfering_at_zero: interfering.value[zero],
        dip_fwhm_ns: dip_fwhm(&interfering, &reference),
        bands,
    };

    run.prepare_out()?;
    write_curve(run, "interfering.csv", &interfering)?;
    write_curve(run, "noninterfering.csv", &reference)?;
    write_json(run, "report.json", &report)
}

fn write_curve(run: &mut Run, name: &str, curve: &TheoryCurve) -> CliResult<()> {
    let mut out = run.create(name)?;
    curve.write_csv(&mut out)?;
    out.flush().map_err(|e| io_error(&run.out.join(name), e))
}
