//! `simulate`: experiment config to time-tag stream.

use std::io::Write;

use homwb::io::{StreamFormat, TagWriter};
use homwb::montecarlo::{check_occupancy, simulate_with, ExperimentConfig, Mode};

use crate::{io_error, CliError, CliResult, Run};

pub fn run(run: &mut Run) -> CliResult<()> {
    let mut cfg: ExperimentConfig = run.read_config()?;
    if let Some(seed) = run.seed {
        cfg.rng_seed = seed;
    }
    run.manifest.seed = Some(cfg.rng_seed);
    run.manifest.config = serde_json::to_value(&cfg).ok();
    cfg.build()?;
    if cfg.mode == Mode::Cw {
        check_occupancy(&cfg)?;
    }

    let format = run.format.unwrap_or_default();
    let name = match format {
        StreamFormat::Csv => "tags.csv",
        StreamFormat::Binary => "tags.bin",
    };
    run.prepare_out()?;
    let path = run.out.join(name);
    let mut writer = TagWriter::new(run.create(name)?, format)?;
    log::info!("simulating {} s into {}", cfg.duration_s, path.display());
    let summary = simulate_with(&cfg, |chunk| writer.write(chunk))?;
    let (mut out, written) = writer.finish()?;
    out.flush().map_err(|e| io_error(&path, e))?;
    if written != summary.counts.iter().sum::<u64>() {
        return Err(CliError::Io(format!("{}: wrote {written} tags, expected more", path.display())));
    }
    for (label, n) in ["A", "B", "CLK"].iter().zip(summary.counts) {
        run.manifest.counts.insert(label.to_string(), n);
    }
    Ok(())
}
