//! Experiment runner: data loading, staged pipeline with resumable
//! artifacts, context sweeps and reports.
//!
//! Artifact layout under `out_dir`:
//!
//! ```text
//! experiment.toml  vocab.txt  report.json  report.txt  sweep.json
//! seed-N/baseline.ckpt.json  seed-N/bilm.ckpt.json
//! seed-N/scores-S-SPLIT.tsv  seed-N/selection-S-mM-SPLIT.tsv
//! seed-N/transformed-S-mM-SPLIT.txt  seed-N/conditional-S-mM.ckpt.json
//! seed-N/losses-*.tsv  seed-N/metrics-S.json
//! ```

mod config;
mod pipeline;

use std::fs;
use std::path::Path;

pub use config::{ExperimentConfig, ModelSpec, TrainSpec};
pub use pipeline::{context_sweep, prepare_out_dir, run_pipeline, run_pipeline_on, sweep_medians, Data, Run, Split, SweepPoint};

use crate::error::{Error, Result};
use crate::metrics::{render_table, reports_from_json, reports_to_json, MetricsReport};

/// Writes `report.json` and `report.txt` into `dir`.
pub fn write_report(dir: &Path, reports: &[MetricsReport]) -> Result<()> {
    let json = dir.join("report.json");
    fs::write(&json, reports_to_json(reports)?).map_err(|e| Error::io(&json, e))?;
    let txt = dir.join("report.txt");
    fs::write(&txt, render_table(reports)).map_err(|e| Error::io(&txt, e))
}

/// Collects every `seed-*/metrics-*.json` row under `dir`, ordered by seed
/// and then by strategy.
pub fn collect_reports(dir: &Path) -> Result<Vec<MetricsReport>> {
    let mut reports = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let seed_dir = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_seed = seed_dir.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed-"));
        if !is_seed || !seed_dir.is_dir() {
            continue;
        }
        for f in fs::read_dir(&seed_dir).map_err(|e| Error::io(&seed_dir, e))? {
            let p = f.map_err(|e| Error::io(&seed_dir, e))?.path();
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with("metrics-") && name.ends_with(".json") {
                let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                reports.push(serde_json::from_str(&text)?);
            }
        }
    }
    reports.sort_by_key(|r: &MetricsReport| (r.seed, r.strategy));
    Ok(reports)
}

/// Reads a `report.json` file.
pub fn read_report(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    reports_from_json(&text)
}
