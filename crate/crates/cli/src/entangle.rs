//! `entangle`: fidelity and rate table from measured visibilities.

use std::io::Write;

use homwb::bell::{EntanglementTable, TableLine};
use serde::Serialize;

use crate::{io_error, write_json, CliResult, Run};

#[derive(Debug, Serialize)]
struct EntangleReport {
    total_improvement: f64,
    rows: Vec<TableLine>,
}

pub fn run(run: &mut Run) -> CliResult<()> {
    let table: EntanglementTable = run.read_config()?;
    run.manifest.config = serde_json::to_value(&table).ok();
    let rows = table.evaluate()?;
    let total_improvement = table.improvement_factors.iter().map(|f| f.factor).product();

    run.prepare_out()?;
    let name = "table.csv";
    let mut text = String::from("label,fidelity,fidelity_err,current_rate_per_s,projected_rate_per_s\n");
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.label, r.fidelity, r.fidelity_err, r.current_rate, r.projected_rate
        ));
    }
    let mut out = run.create(name)?;
    out.write_all(text.as_bytes()).and_then(|_| out.flush()).map_err(|e| io_error(&run.out.join(name), e))?;
    run.manifest.counts.insert("rows".to_string(), rows.len() as u64);
    write_json(run, "report.json", &EntangleReport { total_improvement, rows })
}
