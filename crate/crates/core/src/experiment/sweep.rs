//! One-axis parameter sweeps.

use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use super::run::{run_to_dir, RunReport};
use crate::config::ExperimentConfig;
use crate::engine::derive_seed;
use crate::error::{Error, Result};
use crate::metrics::write_rows;
use crate::net::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    IncastDegree,
    /// Microseconds.
    SyncWindow,
    /// Bytes; the trigger threshold follows at twice the target.
    QTg,
    /// Base NIC-to-NIC round trip in microseconds.
    Rtt,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "incast_degree" => Ok(Axis::IncastDegree),
            "sync_window" => Ok(Axis::SyncWindow),
            "q_tg" => Ok(Axis::QTg),
            "rtt" => Ok(Axis::Rtt),
            other => Err(Error::InvalidConfig(format!(
                "unknown sweep axis '{other}'; expected incast_degree, sync_window, q_tg or rtt"
            ))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::IncastDegree => "incast_degree",
            Axis::SyncWindow => "sync_window",
            Axis::QTg => "q_tg",
            Axis::Rtt => "rtt",
        }
    }
}

/// `cfg` with `axis` set to `value`.
pub fn apply(cfg: &ExperimentConfig, axis: Axis, value: f64) -> Result<ExperimentConfig> {
    let mut c = cfg.clone();
    let bad = |m: &str| Err(Error::InvalidConfig(format!("{} = {value}: {m}", axis.name())));
    if !(value.is_finite() && value >= 0.0) {
        return bad("must be a non-negative number");
    }
    match axis {
        Axis::IncastDegree | Axis::SyncWindow => {
            let Some(ic) = c.incast.as_mut() else {
                return bad("config has no [incast] section");
            };
            if axis == Axis::IncastDegree {
                if value.fract() != 0.0 || value < 1.0 {
                    return bad("must be a positive integer");
                }
                ic.degree = value as u32;
            } else {
                ic.sync_window_us = value;
            }
        }
        Axis::QTg => {
            if value.fract() != 0.0 || value < 1.0 {
                return bad("must be a positive whole number of bytes");
            }
            c.sfc.q_tg_bytes = value as u64;
            c.sfc.q_th_bytes = 2 * value as u64;
        }
        Axis::Rtt => {
            // Scale every link delay so the reference round trip hits the
            // target; serialization and switch latency stay.
            let topo = Topology::build(&c.topology)?;
            let far = topo.remote_host(0).unwrap_or(1.min(topo.n_hosts - 1));
            let base = topo.base_rtt(0, far, c.host.mtu).as_nanos() as f64;
            let link_delay = |a, b| -> u64 {
                topo.path(a, b).iter().map(|&(n, p)| topo.link_of(n, p).propagation_delay.as_nanos()).sum()
            };
            let prop = (link_delay(0, far) + link_delay(far, 0)) as f64;
            let target = value * 1e3 - (base - prop);
            if target <= 0.0 || prop == 0.0 {
                return bad("shorter than the fixed serialization and switch latency");
            }
            let k = target / prop;
            c.topology.host_link_delay_ns = (c.topology.host_link_delay_ns as f64 * k).round() as u64;
            c.topology.core_link_delay_ns = (c.topology.core_link_delay_ns as f64 * k).round() as u64;
        }
    }
    c.name = format!("{}-{}-{value}", cfg.name, axis.name());
    c.validate()?;
    Ok(c)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub axis: Axis,
    pub value: f64,
    pub seed: u64,
    pub status: String,
    pub report: Option<RunReport>,
}

/// Run one point per value, in parallel, each with its own seed derived
/// from the config's. Every point lands in `out/point-<i>`; `summary.csv`
/// lists all of them, including failures, before any error is returned.
pub fn sweep(cfg: &ExperimentConfig, axis: Axis, values: &[f64], out: &Path) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one value".into()));
    }
    let points: Vec<ExperimentConfig> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = apply(cfg, axis, v)?;
            c.seed = derive_seed(cfg.seed, i as u64);
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let results: Vec<Result<RunReport>> = points
        .par_iter()
        .enumerate()
        .map(|(i, c)| run_to_dir(c, &out.join(format!("point-{i}"))))
        .collect();
    let mut rows = Vec::new();
    let mut first_err = None;
    for (i, (r, c)) in results.into_iter().zip(&points).enumerate() {
        let (status, report) = match r {
            Ok(rep) => ("ok".to_string(), Some(rep)),
            Err(e) => {
                let msg = e.to_string();
                if first_err.is_none() {
                    first_err = Some(Error::SweepPoint {
                        index: i,
                        value: values[i].to_string(),
                        source: Box::new(e),
                    });
                }
                (format!("error: {msg}"), None)
            }
        };
        rows.push(SweepRow { index: i, axis, value: values[i], seed: c.seed, status, report });
    }
    write_summary(out, &rows)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

fn write_summary(out: &Path, rows: &[SweepRow]) -> Result<()> {
    #[derive(Serialize)]
    struct Flat<'a> {
        index: usize,
        axis: &'a str,
        value: f64,
        seed: u64,
        status: &'a str,
        events: Option<u64>,
        peak_buffer_bytes: Option<u64>,
        flows_finished: Option<usize>,
        p50_slowdown: Option<f64>,
        p95_slowdown: Option<f64>,
        p99_slowdown: Option<f64>,
        bts_triggered: Option<u64>,
        bts_suppressed_fraction: Option<f64>,
        drops: Option<u64>,
        pfc_frames: Option<u64>,
        trace_digest: Option<&'a str>,
    }
    let flat: Vec<Flat> = rows
        .iter()
        .map(|r| {
            let p = r.report.as_ref();
            Flat {
                index: r.index,
                axis: r.axis.name(),
                value: r.value,
                seed: r.seed,
                status: &r.status,
                events: p.map(|p| p.events),
                peak_buffer_bytes: p.map(|p| p.peak_buffer_bytes),
                flows_finished: p.map(|p| p.flows_finished),
                p50_slowdown: p.and_then(|p| p.p50_slowdown),
                p95_slowdown: p.and_then(|p| p.p95_slowdown),
                p99_slowdown: p.and_then(|p| p.p99_slowdown),
                bts_triggered: p.map(|p| p.bts_triggered),
                bts_suppressed_fraction: p.map(|p| p.bts_suppressed_fraction),
                drops: p.map(|p| p.drops),
                pfc_frames: p.map(|p| p.pfc_frames),
                trace_digest: p.map(|p| p.trace_digest.as_str()),
            }
        })
        .collect();
    write_rows(out, "summary.csv", &flat)
}
