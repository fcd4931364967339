//! Named scenarios runnable from the command line.
//!
//! A preset only builds configs. Running one goes through the same path
//! as an explicit config file.

use std::path::Path;

use serde::Serialize;

use super::oracle::{self, OracleMode, OracleResult, OracleSetup};
use super::run::{run_to_dir, RunReport};
use super::scenarios::{self, IncastVariant};
use crate::config::{ExperimentConfig, FcScheme};
use crate::error::{Error, Result};
use crate::metrics::write_rows;

pub const PRESETS: [&str; 5] = ["dumbbell-incast", "appendix-oracle", "small-clos", "incast-law", "fairness"];

/// Packets queued at first signal for the oracle table.
pub const ORACLE_KS: [u32; 4] = [4, 8, 16, 26];

#[derive(Debug, Clone)]
pub enum Preset {
    /// Independent runs, one output directory each.
    Runs(Vec<ExperimentConfig>),
    /// Simulator against the closed-form bounds.
    Oracle(Vec<OracleSetup>),
}

pub fn preset(name: &str) -> Option<Preset> {
    let p = match name {
        "dumbbell-incast" => Preset::Runs(
            [
                IncastVariant::OnRampEwma,
                IncastVariant::EgressBts,
                IncastVariant::IngressBts,
                IncastVariant::IngressBtsCache,
            ]
            .into_iter()
            .map(scenarios::dumbbell_incast_config)
            .collect(),
        ),
        "appendix-oracle" => Preset::Oracle(
            [OracleMode::Bts, OracleMode::EndToEnd]
                .into_iter()
                .flat_map(|m| ORACLE_KS.into_iter().map(move |k| OracleSetup::new(m, k)))
                .collect(),
        ),
        "small-clos" => {
            let mut c = scenarios::qtg_config(125_000, 1);
            c.name = "small-clos".into();
            Preset::Runs(vec![c])
        }
        "incast-law" => Preset::Runs(vec![scenarios::incast_queue_law_config(40, 10_000.0)]),
        "fairness" => Preset::Runs(vec![scenarios::fairness_config(FcScheme::IngressBtsCache, 60_000, 1)]),
        _ => return None,
    };
    Some(p)
}

#[derive(Debug, Clone)]
pub enum PresetOutput {
    Runs(Vec<RunReport>),
    Oracle(Vec<OracleResult>),
}

#[derive(Serialize)]
struct TimelineRow<'a> {
    variant: &'a str,
    time_ns: u64,
    switch: u32,
    port: u16,
    depth_bytes: u64,
}

/// Run preset `name` into `out`. Several runs go to one subdirectory each,
/// and their queue timelines are also merged into `out/queue_timeline.csv`.
pub fn run_preset(name: &str, out: &Path, seed: Option<u64>) -> Result<PresetOutput> {
    let p = preset(name).ok_or_else(|| {
        Error::InvalidConfig(format!("unknown preset '{name}'; known: {}", PRESETS.join(", ")))
    })?;
    match p {
        Preset::Oracle(setups) => {
            let rows = setups.iter().map(oracle::run).collect::<Result<Vec<_>>>()?;
            write_rows(out, "oracle.csv", &rows)?;
            Ok(PresetOutput::Oracle(rows))
        }
        Preset::Runs(mut cfgs) => {
            for c in &mut cfgs {
                if let Some(s) = seed {
                    c.seed = s;
                }
            }
            if cfgs.len() == 1 {
                return Ok(PresetOutput::Runs(vec![run_to_dir(&cfgs[0], out)?]));
            }
            let mut reports = Vec::new();
            let mut merged = Vec::new();
            for c in &cfgs {
                let dir = out.join(&c.name);
                reports.push(run_to_dir(c, &dir)?);
                let path = dir.join("queue_timeline.csv");
                let mut rd = csv::Reader::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
                for rec in rd.records() {
                    let rec = rec.map_err(|e| Error::io(&path, e.into()))?;
                    let num = |i: usize| rec.get(i).and_then(|s| s.parse::<u64>().ok()).unwrap_or(0);
                    merged.push((c.name.clone(), num(0), num(1) as u32, num(2) as u16, num(3)));
                }
            }
            let rows: Vec<TimelineRow> = merged
                .iter()
                .map(|(v, t, s, p, d)| TimelineRow {
                    variant: v,
                    time_ns: *t,
                    switch: *s,
                    port: *p,
                    depth_bytes: *d,
                })
                .collect();
            write_rows(out, "queue_timeline.csv", &rows)?;
            Ok(PresetOutput::Runs(reports))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds_valid_configs() {
        for name in PRESETS {
            match preset(name).unwrap() {
                Preset::Runs(cs) => cs.iter().for_each(|c| c.validate().unwrap()),
                Preset::Oracle(s) => assert_eq!(s.len(), 2 * ORACLE_KS.len()),
            }
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn dumbbell_incast_has_four_distinct_variants() {
        let Preset::Runs(cs) = preset("dumbbell-incast").unwrap() else { panic!() };
        let mut names: Vec<_> = cs.iter().map(|c| c.name.clone()).collect();
        names.dedup();
        assert_eq!(names.len(), 4);
        assert!(cs.iter().all(|c| c.duration_us == 4_000.0));
    }

    #[test]
    fn unknown_preset_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_preset("no-such-preset", dir.path(), None).is_err());
    }
}
