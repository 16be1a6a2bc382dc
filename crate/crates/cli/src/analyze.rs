//! `analyze`: streams to histograms, visibility and background report.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use homwb::io::{read_chunks, StreamFormat};
use homwb::tags::{
    analyze_pulsed_map, expected_background_curve, g2_summary, visibility_from_histograms, CoincidenceHistogram,
    CoincidenceMapBuilder, Correlator, G2Summary, PulsedAnalysisSpec,
};
use serde::{Deserialize, Serialize};

use crate::{io_error, write_json, CliError, CliResult, Run};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalyzeConfig {
    #[serde(default)]
    format: Option<StreamFormat>,
    #[serde(default)]
    cw: Option<CwSection>,
    #[serde(default)]
    g2: Vec<G2Section>,
    #[serde(default)]
    pulsed: Option<PulsedSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CwSection {
    parallel: PathBuf,
    perpendicular: PathBuf,
    tau_max_ns: f64,
    bin_ns: f64,
    #[serde(default = "one")]
    center_bins: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct G2Section {
    label: String,
    input: PathBuf,
    tau_max_ns: f64,
    bin_ns: f64,
    #[serde(default = "default_search")]
    search_ns: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PulsedSection {
    input: PathBuf,
    analysis: PulsedAnalysisSpec,
}

fn one() -> usize {
    1
}

fn default_search() -> f64 {
    20.0
}

#[derive(Debug, Serialize)]
struct ValueErr {
    value: f64,
    err: f64,
}

impl From<(f64, f64)> for ValueErr {
    fn from((value, err): (f64, f64)) -> Self {
        ValueErr { value, err }
    }
}

#[derive(Debug, Serialize)]
struct CwReport {
    bin_ns: f64,
    center_bins: usize,
    parallel_center: ValueErr,
    perpendicular_center: ValueErr,
    visibility: Option<ValueErr>,
    singles_parallel: [u64; 2],
    singles_perpendicular: [u64; 2],
}

#[derive(Debug, Serialize)]
struct G2Report {
    bin_ns: f64,
    singles: [u64; 2],
    summary: G2Summary,
}

#[derive(Debug, Serialize)]
struct PulsedReport {
    tau_bin_ns: f64,
    clocks: u64,
    gate_duty: f64,
    dropped_tags: u64,
    overlapped_center: ValueErr,
    reference_center: ValueErr,
    background_center: f64,
    background_mean: f64,
    visibility: Option<ValueErr>,
}

#[derive(Debug, Default, Serialize)]
struct Report {
    cw: Option<CwReport>,
    g2: BTreeMap<String, G2Report>,
    pulsed: Option<PulsedReport>,
}

pub fn run(run: &mut Run, bin_override: Option<f64>) -> CliResult<()> {
    let mut cfg: AnalyzeConfig = run.read_config()?;
    if let Some(b) = bin_override {
        if let Some(cw) = cfg.cw.as_mut() {
            cw.bin_ns = b;
        }
        for g in cfg.g2.iter_mut() {
            g.bin_ns = b;
        }
        if let Some(p) = cfg.pulsed.as_mut() {
            p.analysis.tau_bin_ns = b;
        }
    }
    run.manifest.config = Some(config_echo(&cfg));
    if cfg.cw.is_none() && cfg.g2.is_empty() && cfg.pulsed.is_none() {
        return Err(CliError::Input("analysis config has no cw, g2 or pulsed section".into()));
    }
    let format = run.format.or(cfg.format);

    let mut report = Report::default();
    let mut csvs: Vec<(String, CoincidenceHistogram)> = Vec::new();
    let mut background: Option<(Vec<f64>, Vec<f64>)> = None;

    if let Some(cw) = &cfg.cw {
        let par = correlate(&run.resolve(&cw.parallel), format, cw.tau_max_ns, cw.bin_ns)?;
        let perp = correlate(&run.resolve(&cw.perpendicular), format, cw.tau_max_ns, cw.bin_ns)?;
        let h_par = par.g2_analytic()?;
        let h_perp = perp.g2_analytic()?;
        let visibility = match visibility_from_histograms(&h_par, &h_perp, cw.center_bins) {
            Ok(v) => Some(v.into()),
            Err(homwb::Error::UndefinedVisibility(msg)) => {
                log::warn!("visibility undefined: {msg}");
                None
            }
            Err(e) => return Err(e.into()),
        };
        report.cw = Some(CwReport {
            bin_ns: cw.bin_ns,
            center_bins: cw.center_bins,
            parallel_center: h_par.center_value(cw.center_bins)?.into(),
            perpendicular_center: h_perp.center_value(cw.center_bins)?.into(),
            visibility,
            singles_parallel: par.singles(),
            singles_perpendicular: perp.singles(),
        });
        csvs.push(("hom_parallel.csv".into(), h_par));
        csvs.push(("hom_perpendicular.csv".into(), h_perp));
    }

    for g in &cfg.g2 {
        if g.label.is_empty() || !g.label.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(CliError::Input(format!("g2 label {:?} must be a nonempty [A-Za-z0-9_-] name", g.label)));
        }
        let c = correlate(&run.resolve(&g.input), format, g.tau_max_ns, g.bin_ns)?;
        let hist = c.g2_analytic()?;
        let summary = g2_summary(&hist, g.search_ns)?;
        report.g2.insert(g.label.clone(), G2Report { bin_ns: g.bin_ns, singles: c.singles(), summary });
        csvs.push((format!("g2_{}.csv", g.label), hist));
    }

    if let Some(p) = &cfg.pulsed {
        let spec = &p.analysis;
        let mut builder = CoincidenceMapBuilder::new(spec.period_us, spec.t_bin_ns, spec.tau_bin_ns, spec.tau_max_us)?;
        let path = run.resolve(&p.input);
        stream(&path, format, |chunk| builder.push(chunk))?;
        let dropped = builder.dropped();
        let map = builder.finish()?;
        if map.clocks() == 0 {
            return Err(CliError::Input(format!("{}: pulsed analysis needs CLK tags, found none", path.display())));
        }
        let analysis = analyze_pulsed_map(&map, spec)?;
        let bg = expected_background_curve(&map, &spec.gates, spec.dark_rate[0], spec.dark_rate[1])?;
        let edges = map.tau_edges();
        let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let mid = bg.len() / 2;
        report.pulsed = Some(PulsedReport {
            tau_bin_ns: spec.tau_bin_ns,
            clocks: analysis.clocks,
            gate_duty: analysis.gate_duty,
            dropped_tags: dropped,
            overlapped_center: analysis.overlapped_center.into(),
            reference_center: analysis.reference_center.into(),
            background_center: bg.get(mid).copied().unwrap_or(0.0),
            background_mean: if bg.is_empty() { 0.0 } else { bg.iter().sum::<f64>() / bg.len() as f64 },
            visibility: analysis.visibility.map(Into::into),
        });
        csvs.push(("overlapped.csv".into(), analysis.overlapped));
        csvs.push(("reference.csv".into(), analysis.reference));
        background = Some((centers, bg));
    }

    run.prepare_out()?;
    for (name, hist) in &csvs {
        let mut out = run.create(name)?;
        hist.write_csv(&mut out)?;
        out.flush().map_err(|e| io_error(&run.out.join(name), e))?;
    }
    if let Some((centers, bg)) = background {
        let name = "background.csv";
        let mut out = run.create(name)?;
        let mut text = String::from("tau_ns,counts\n");
        for (t, v) in centers.iter().zip(&bg) {
            text.push_str(&format!("{t},{v}\n"));
        }
        out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| io_error(&run.out.join(name), e))?;
    }
    write_json(run, "report.json", &report)
}

fn config_echo(cfg: &AnalyzeConfig) -> serde_json::Value {
    let cw = cfg.cw.as_ref().map(|c| {
        serde_json::json!({
            "parallel": c.parallel, "perpendicular": c.perpendicular,
            "tau_max_ns": c.tau_max_ns, "bin_ns": c.bin_ns, "center_bins": c.center_bins,
        })
    });
    let g2: Vec<_> = cfg
        .g2
        .iter()
        .map(|g| {
            serde_json::json!({
                "label": g.label, "input": g.input, "tau_max_ns": g.tau_max_ns,
                "bin_ns": g.bin_ns, "search_ns": g.search_ns,
            })
        })
        .collect();
    let pulsed = cfg.pulsed.as_ref().map(|p| serde_json::json!({ "input": p.input, "analysis": p.analysis }));
    serde_json::json!({ "format": cfg.format, "cw": cw, "g2": g2, "pulsed": pulsed })
}

fn guess_format(path: &Path, declared: Option<StreamFormat>) -> StreamFormat {
    declared.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => StreamFormat::Binary,
        _ => StreamFormat::Csv,
    })
}

fn stream<F: FnMut(&[homwb::io::TimeTagRecord])>(path: &Path, format: Option<StreamFormat>, mut sink: F) -> CliResult<u64> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let format = guess_format(path, format);
    read_chunks(BufReader::new(file), format, |chunk| {
        sink(chunk);
        Ok(())
    })
    .map_err(|e| match e {
        homwb::Error::Io(io) => io_error(path, io),
        other => CliError::Input(format!("{}: {other}", path.display())),
    })
}

fn correlate(path: &Path, format: Option<StreamFormat>, tau_max_ns: f64, bin_ns: f64) -> CliResult<Correlator> {
    let mut c = Correlator::new(tau_max_ns, bin_ns)?;
    stream(path, format, |chunk| c.push(chunk))?;
    Ok(c)
}
