//! Measurement records, aggregation and CSV output.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::engine::SimTime;
use crate::error::{Error, Result};
use crate::net::serialization_delay;
use crate::switchfab::SwitchCounters;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FctRecord {
    pub flow_id: u32,
    pub src: u32,
    pub dst: u32,
    pub class: &'static str,
    pub size: u64,
    pub start_ns: u64,
    pub fct_ns: u64,
    pub ideal_ns: u64,
    pub slowdown: f64,
    pub bytes_retx: u64,
    pub pause_ns: u64,
    pub bts_received: u64,
}

/// Line-rate transfer time on an idle path: one-way propagation, the
/// message at line rate, and one extra packet serialization per
/// store-and-forward switch.
pub fn ideal_fct(
    size: u64,
    propagation_one_way: SimTime,
    line_bps: u64,
    switch_hops: usize,
    mtu: u32,
) -> SimTime {
    if size == 0 {
        return propagation_one_way;
    }
    let body = SimTime((size as u128 * 8_000_000_000).div_ceil(line_bps as u128) as u64);
    let first = size.min(mtu as u64) as u32;
    let hops = SimTime(serialization_delay(first, line_bps).as_nanos() * switch_hops as u64);
    propagation_one_way + body + hops
}

/// Nearest-rank percentile of a sorted slice.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// `n` log-spaced bin edges covering `[lo, hi]`.
pub fn log_bin_edges(lo: u64, hi: u64, n: usize) -> Vec<f64> {
    let lo = (lo.max(1)) as f64;
    let hi = (hi.max(lo as u64 + 1)) as f64;
    let (a, b) = (lo.ln(), hi.ln());
    (0..=n).map(|i| (a + (b - a) * i as f64 / n as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// One entry per requested percentile; `None` for an empty bin.
    pub values: Vec<Option<f64>>,
}

/// Percentiles of `(size, value)` grouped by `edges`. The last bin is
/// closed on the right.
pub fn percentile_by_edges(records: &[(u64, f64)], edges: &[f64], ps: &[f64]) -> Vec<BinRow> {
    let nb = edges.len().saturating_sub(1);
    let mut bins: Vec<Vec<f64>> = vec![Vec::new(); nb];
    for &(size, v) in records {
        let s = size as f64;
        let i = edges[1..].partition_point(|&e| e <= s);
        if i < nb && s >= edges[0] {
            bins[i].push(v);
        } else if nb > 0 && s == edges[nb] {
            bins[nb - 1].push(v);
        }
    }
    bins.into_iter()
        .enumerate()
        .map(|(i, mut b)| {
            b.sort_by(f64::total_cmp);
            BinRow {
                lo: edges[i],
                hi: edges[i + 1],
                count: b.len(),
                values: ps.iter().map(|&p| nearest_rank(&b, p)).collect(),
            }
        })
        .collect()
}

/// Slowdown percentiles in `bins` log-spaced size bins.
pub fn percentile_by_bins(records: &[FctRecord], bins: usize, ps: &[f64]) -> Vec<BinRow> {
    let pairs: Vec<(u64, f64)> = records.iter().map(|r| (r.size, r.slowdown)).collect();
    let lo = pairs.iter().map(|p| p.0).min().unwrap_or(1);
    let hi = pairs.iter().map(|p| p.0).max().unwrap_or(2);
    percentile_by_edges(&pairs, &log_bin_edges(lo, hi, bins), ps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BufferSample {
    pub time_ns: u64,
    pub switch: u32,
    pub used_bytes: u64,
    pub max_queue_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueSample {
    pub time_ns: u64,
    pub switch: u32,
    pub port: u16,
    pub depth_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputSample {
    pub time_ns: u64,
    pub host: u32,
    pub rx_gbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterRow {
    pub switch: u32,
    pub layer: &'static str,
    pub peak_buffer_bytes: u64,
    pub max_queue_bytes: u64,
    pub bts_triggered: u64,
    pub bts_suppressed: u64,
    pub bts_from_cache: u64,
    pub bts_from_estimator: u64,
    pub bts_cache_updates: u64,
    pub bts_converted: u64,
    pub drops: u64,
    pub ecn_marks: u64,
    pub pfc_frames: u64,
    pub unroutable: u64,
    pub bloom_max_occupancy: u32,
    pub bloom_false_positive_rate: f64,
    pub cache_max_occupancy: usize,
}

impl CounterRow {
    pub fn from_counters(switch: u32, layer: &'static str, c: &SwitchCounters) -> Self {
        Self {
            switch,
            layer,
            peak_buffer_bytes: 0,
            max_queue_bytes: 0,
            bts_triggered: c.bts_triggered,
            bts_suppressed: c.bts_suppressed,
            bts_from_cache: c.bts_from_cache,
            bts_from_estimator: c.bts_from_estimator,
            bts_cache_updates: c.bts_cache_updates,
            bts_converted: c.bts_converted,
            drops: c.drops,
            ecn_marks: c.ecn_marks,
            pfc_frames: c.pfc_frames,
            unroutable: c.unroutable,
            bloom_max_occupancy: 0,
            bloom_false_positive_rate: 0.0,
            cache_max_occupancy: 0,
        }
    }
}

/// Everything a run produces.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub fct: Vec<FctRecord>,
    pub buffer: Vec<BufferSample>,
    pub timeline: Vec<QueueSample>,
    pub throughput: Vec<ThroughputSample>,
    pub counters: Vec<CounterRow>,
}

impl RunMetrics {
    /// Largest event-exact shared-buffer peak over all switches.
    pub fn peak_buffer(&self) -> u64 {
        self.counters.iter().map(|c| c.peak_buffer_bytes).max().unwrap_or(0)
    }

    /// Largest sampled shared-buffer usage over all switches.
    pub fn sampled_peak_buffer(&self) -> u64 {
        self.buffer.iter().map(|b| b.used_bytes).max().unwrap_or(0)
    }

    pub fn total<F: Fn(&CounterRow) -> u64>(&self, f: F) -> u64 {
        self.counters.iter().map(f).sum()
    }

    /// Fraction of BTS candidates suppressed by the bloom filter.
    pub fn suppressed_fraction(&self) -> f64 {
        let s = self.total(|c| c.bts_suppressed) as f64;
        let t = self.total(|c| c.bts_triggered) as f64;
        if s + t == 0.0 {
            0.0
        } else {
            s / (s + t)
        }
    }
}

fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T], header: &[&str]) -> Result<()> {
    let path = dir.join(name);
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(&path)
        .map_err(|e| Error::io(&path, e.into()))?;
    w.write_record(header).map_err(|e| Error::io(&path, e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(&path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub const FCT_HEADER: &[&str] = &[
    "flow_id", "src", "dst", "class", "size", "start_ns", "fct_ns", "ideal_ns", "slowdown",
    "bytes_retx", "pause_ns", "bts_received",
];
pub const BUFFER_HEADER: &[&str] = &["time_ns", "switch", "used_bytes", "max_queue_bytes"];
pub const TIMELINE_HEADER: &[&str] = &["time_ns", "switch", "port", "depth_bytes"];
pub const THROUGHPUT_HEADER: &[&str] = &["time_ns", "host", "rx_gbps"];
pub const COUNTERS_HEADER: &[&str] = &[
    "switch",
    "layer",
    "peak_buffer_bytes",
    "max_queue_bytes",
    "bts_triggered",
    "bts_suppressed",
    "bts_from_cache",
    "bts_from_estimator",
    "bts_cache_updates",
    "bts_converted",
    "drops",
    "ecn_marks",
    "pfc_frames",
    "unroutable",
    "bloom_max_occupancy",
    "bloom_false_positive_rate",
    "cache_max_occupancy",
];

/// Write the five metric CSVs into `dir`.
pub fn write_all(dir: &Path, m: &RunMetrics) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(dir, "fct.csv", &m.fct, FCT_HEADER)?;
    write_csv(dir, "buffer.csv", &m.buffer, BUFFER_HEADER)?;
    write_csv(dir, "queue_timeline.csv", &m.timeline, TIMELINE_HEADER)?;
    write_csv(dir, "throughput.csv", &m.throughput, THROUGHPUT_HEADER)?;
    write_csv(dir, "counters.csv", &m.counters, COUNTERS_HEADER)?;
    Ok(())
}

/// Write arbitrary serializable rows to `dir/name` with their own header.
pub fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::io(&path, e.into()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub duration_ns: u64,
    pub events: u64,
    pub trace_digest: String,
    pub files: Vec<String>,
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let path = dir.join("manifest.toml");
    let text = toml::to_string(m).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
