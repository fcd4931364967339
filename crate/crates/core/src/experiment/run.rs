//! Single runs written to an output directory.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{nearest_rank, write_all, write_manifest, Manifest, RunMetrics};
use crate::sim::Simulation;

pub const RUN_FILES: [&str; 5] =
    ["fct.csv", "buffer.csv", "queue_timeline.csv", "throughput.csv", "counters.csv"];

/// Headline numbers of one run.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub events: u64,
    pub final_ns: u64,
    pub trace_digest: String,
    pub flows: usize,
    pub flows_finished: usize,
    pub peak_buffer_bytes: u64,
    pub p50_slowdown: Option<f64>,
    pub p95_slowdown: Option<f64>,
    pub p99_slowdown: Option<f64>,
    pub bts_triggered: u64,
    pub bts_suppressed_fraction: f64,
    pub drops: u64,
    pub pfc_frames: u64,
}

impl RunReport {
    fn new(cfg: &ExperimentConfig, sim: &Simulation, m: &RunMetrics) -> Self {
        let s = sim.summary().expect("run finished");
        let mut sd: Vec<f64> = m.fct.iter().map(|r| r.slowdown).collect();
        sd.sort_by(f64::total_cmp);
        RunReport {
            name: cfg.name.clone(),
            seed: cfg.seed,
            events: s.events,
            final_ns: s.final_clock.as_nanos(),
            trace_digest: format!("{:016x}", s.trace_digest),
            flows: sim.flows().len(),
            flows_finished: m.fct.len(),
            peak_buffer_bytes: m.peak_buffer(),
            p50_slowdown: nearest_rank(&sd, 50.0),
            p95_slowdown: nearest_rank(&sd, 95.0),
            p99_slowdown: nearest_rank(&sd, 99.0),
            bts_triggered: m.total(|c| c.bts_triggered),
            bts_suppressed_fraction: m.suppressed_fraction(),
            drops: m.total(|c| c.drops),
            pfc_frames: m.total(|c| c.pfc_frames),
        }
    }
}

/// Run `cfg` and write the metric CSVs, the resolved config and a
/// manifest into `out`.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    let mut sim = Simulation::new(cfg.clone())?;
    let summary = sim.run()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let report = RunReport::new(cfg, &sim, sim.metrics());
    write_all(out, sim.metrics())?;
    let cfg_path = out.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let mut files: Vec<String> = RUN_FILES.iter().map(|s| s.to_string()).collect();
    files.push("config.toml".into());
    write_manifest(
        out,
        &Manifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_hash: cfg.hash_hex(),
            seed: cfg.seed,
            duration_ns: summary.final_clock.as_nanos(),
            events: summary.events,
            trace_digest: report.trace_digest.clone(),
            files,
        },
    )?;
    log::info!(
        "{}: peak buffer {} B, {} of {} flows finished",
        cfg.name,
        report.peak_buffer_bytes,
        report.flows_finished,
        report.flows
    );
    Ok(report)
}
