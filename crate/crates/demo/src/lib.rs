//! Browser front end for sfcsim. Each export takes plain numbers or
//! strings and returns JSON, so the page needs no bindings beyond the
//! generated glue.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sfcsim::experiment::scenarios::{dumbbell_incast_config, IncastVariant};
use sfcsim::theory::{self, CacheBounds, TheoryInputs};
use sfcsim::Simulation;

/// Longest run the page may request, in microseconds.
pub const MAX_DURATION_US: f64 = 4_000.0;
pub const MAX_DEGREE: u32 = 63;

#[derive(Debug, Serialize)]
pub struct Bounds {
    pub inputs: TheoryInputs,
    pub b_ack_bytes: f64,
    pub b_bts_bytes: f64,
    pub b_incast_bytes: f64,
    pub saving_percent: f64,
    pub cache: CacheBounds,
}

pub fn bounds(r_gbps: f64, t_a_us: f64, t_b_us: f64, t_tor_us: f64, mtu: u32, k: u32, n: u32) -> Result<Bounds, String> {
    let mut i = TheoryInputs {
        r_bps: r_gbps * 1e9,
        t_a_us,
        t_b_us,
        t_tor_us,
        k,
        n,
        ..TheoryInputs::appendix()
    };
    i.t_s_us = mtu as f64 * 8.0 / i.r_bps * 1e6;
    i.validate()?;
    let (ack, bts) = (theory::b_ack(&i), theory::b_bts(&i));
    Ok(Bounds {
        inputs: i,
        b_ack_bytes: ack,
        b_bts_bytes: bts,
        b_incast_bytes: theory::b_incast(&i),
        saving_percent: 100.0 * (ack - bts) / ack,
        cache: theory::cache_bounds(&i),
    })
}

fn variant(scheme: &str) -> Result<IncastVariant, String> {
    IncastVariant::ALL
        .into_iter()
        .find(|v| v.name() == scheme)
        .ok_or_else(|| format!("unknown scheme '{scheme}'"))
}

#[derive(Debug, Serialize)]
pub struct Timeline {
    pub scheme: String,
    pub degree: u32,
    pub peak_bytes: u64,
    pub bts_triggered: u64,
    /// `(time_us, depth_bytes)` of the victim's queue.
    pub points: Vec<(f64, u64)>,
}

/// Incast of `degree` senders across the dumbbell, victim queue sampled
/// every microsecond.
pub fn timeline(scheme: &str, degree: u32, sync_us: f64, duration_us: f64) -> Result<Timeline, String> {
    if !(1..=MAX_DEGREE).contains(&degree) {
        return Err(format!("degree must be within 1..={MAX_DEGREE}"));
    }
    if !(duration_us > 0.0 && duration_us <= MAX_DURATION_US) {
        return Err(format!("duration must be within (0, {MAX_DURATION_US}] us"));
    }
    if !(sync_us >= 0.0) {
        return Err("sync window must be non-negative".into());
    }
    let mut c = dumbbell_incast_config(variant(scheme)?);
    c.duration_us = duration_us;
    if let Some(ic) = c.incast.as_mut() {
        ic.degree = degree;
        ic.sync_window_us = sync_us;
    }
    let mut sim = Simulation::new(c).map_err(|e| e.to_string())?;
    sim.run().map_err(|e| e.to_string())?;
    let (node, port) = sim.tracked_queues()[0];
    let m = sim.metrics();
    Ok(Timeline {
        scheme: scheme.to_string(),
        degree,
        peak_bytes: sim.port_queue_max(node, port),
        bts_triggered: m.total(|c| c.bts_triggered),
        points: m
            .timeline
            .iter()
            .filter(|s| s.switch == node.0 && s.port == port)
            .map(|s| (s.time_ns as f64 / 1e3, s.depth_bytes))
            .collect(),
    })
}

#[derive(Debug, Serialize)]
pub struct SweepPoint {
    pub degree: u32,
    pub peak_bytes: u64,
}

/// Peak victim queue per incast degree over a 1 ms run.
pub fn peak_sweep(scheme: &str, degrees: &[u32]) -> Result<Vec<SweepPoint>, String> {
    degrees
        .iter()
        .map(|&d| {
            let t = timeline(scheme, d, 50.0, 1_000.0)?;
            Ok(SweepPoint { degree: d, peak_bytes: t.peak_bytes })
        })
        .collect()
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn theory_bounds(r_gbps: f64, t_a_us: f64, t_b_us: f64, t_tor_us: f64, mtu: u32, k: u32, n: u32) -> Result<String, JsValue> {
    to_js(bounds(r_gbps, t_a_us, t_b_us, t_tor_us, mtu, k, n))
}

#[wasm_bindgen]
pub fn queue_timeline(scheme: &str, degree: u32, sync_us: f64, duration_us: f64) -> Result<String, JsValue> {
    to_js(timeline(scheme, degree, sync_us, duration_us))
}

#[wasm_bindgen]
pub fn incast_peak_sweep(scheme: &str, degrees: Vec<u32>) -> Result<String, JsValue> {
    to_js(peak_sweep(scheme, &degrees))
}

#[wasm_bindgen]
pub fn schemes() -> String {
    serde_json::to_string(&IncastVariant::ALL.map(|v| v.name())).expect("names serialize")
}
