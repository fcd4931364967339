//! Small-scale scenarios and the statistics read off them.
//!
//! Each scenario is a config builder plus a function that runs it and
//! reduces the raw metrics to the handful of numbers worth checking.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{
    BackgroundConfig, ExperimentConfig, FcScheme, IncastConfig, SenderSelect, StaticFlow,
    TrackQueues,
};
use crate::endhost::{CcKind, OnRampConfig, OnRampMode};
use crate::error::Result;
use crate::metrics::{log_bin_edges, percentile_by_edges, QueueSample, RunMetrics};
use crate::net::{Preset, TopologyParams};
use crate::sim::Simulation;
use crate::switchfab::Ratio;

const MB: f64 = 1e6;

/// Depth samples of the first tracked queue, in time order.
pub fn first_queue(timeline: &[QueueSample]) -> Vec<(u64, u64)> {
    let Some(first) = timeline.first() else {
        return Vec::new();
    };
    timeline
        .iter()
        .filter(|s| s.switch == first.switch && s.port == first.port)
        .map(|s| (s.time_ns, s.depth_bytes))
        .collect()
}

fn window(series: &[(u64, u64)], from: u64, to: u64) -> impl Iterator<Item = u64> + '_ {
    series.iter().filter(move |s| s.0 >= from && s.0 < to).map(|s| s.1)
}

fn mean(v: impl Iterator<Item = u64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x as f64, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

// ---------------------------------------------------------------------
// N:1 synchronized incast on one switch.

/// One switch, `n` senders to one receiver, every host link `d` long so
/// that the BTS loop is about 6us.
pub fn incast_queue_law_config(n: u32, duration_us: f64) -> ExperimentConfig {
    let mut topology = TopologyParams::star(n + 1);
    topology.host_link_delay_ns = 2_337;
    topology.switch_latency_ns = 500;
    let mut c = ExperimentConfig {
        name: format!("incast-law-{n}"),
        duration_us,
        fc: FcScheme::IngressBts,
        topology,
        ..Default::default()
    };
    c.host.cc.kind = CcKind::WindowOnly;
    c.sfc.q_tg_bytes = 75_000;
    c.sfc.q_th_bytes = 150_000;
    c.metrics.sample_period_us = 1.0;
    c.metrics.throughput = false;
    c.flows = (0..n)
        .map(|i| StaticFlow { src: i, dst: n, size: u64::MAX / 4, ..Default::default() })
        .collect();
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct QueueLaw {
    pub n: u32,
    /// Sender to switch plus BTS back to sender.
    pub feedback_ns: u64,
    pub predicted_bytes: f64,
    pub mean_bytes: f64,
    pub ratio: f64,
}

/// Mean depth after the first millisecond against `feedback x N x R`.
pub fn incast_queue_law(n: u32, duration_us: f64) -> Result<QueueLaw> {
    let c = incast_queue_law_config(n, duration_us);
    let feedback_ns = {
        let t = &c.topology;
        let data = crate::net::serialization_delay(c.host.mtu, t.host_link_bps()).as_nanos();
        let ctrl = crate::net::serialization_delay(crate::net::CONTROL_PACKET_BYTES, t.host_link_bps())
            .as_nanos();
        data + ctrl + 2 * t.host_link_delay_ns + t.switch_latency_ns + c.sfc.pipeline_delay_ns
    };
    let r = c.topology.host_link_bps() as f64 / 8.0;
    let mut sim = Simulation::new(c)?;
    sim.run()?;
    let q = first_queue(&sim.metrics().timeline);
    let mean_bytes = mean(window(&q, 1_000_000, u64::MAX));
    let predicted_bytes = n as f64 * feedback_ns as f64 * 1e-9 * r;
    Ok(QueueLaw {
        n,
        feedback_ns,
        predicted_bytes,
        mean_bytes,
        ratio: mean_bytes / predicted_bytes,
    })
}

// ---------------------------------------------------------------------
// 63:1 incast on the dumbbell.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IncastVariant {
    OnRampStrawMan,
    OnRampEwma,
    EgressBts,
    IngressBts,
    IngressBtsCache,
}

impl IncastVariant {
    pub const ALL: [IncastVariant; 5] = [
        IncastVariant::OnRampStrawMan,
        IncastVariant::OnRampEwma,
        IncastVariant::EgressBts,
        IncastVariant::IngressBts,
        IncastVariant::IngressBtsCache,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IncastVariant::OnRampStrawMan => "onramp_strawman",
            IncastVariant::OnRampEwma => "onramp_ewma",
            IncastVariant::EgressBts => "egress_bts",
            IncastVariant::IngressBts => "ingress_bts",
            IncastVariant::IngressBtsCache => "ingress_bts_cache",
        }
    }
}

/// Smoothing gain for the OnRamp variant that is meant to settle.
pub const ONRAMP_SMOOTH_GAIN: Ratio = Ratio { num: 1, den: 32 };

/// 63 senders on one side of the dumbbell to one receiver on the other,
/// starting within 50us, backlogged for the whole run.
pub fn dumbbell_incast_config(v: IncastVariant) -> ExperimentConfig {
    let n = 63;
    let mut c = ExperimentConfig {
        name: format!("dumbbell-{}", v.name()),
        duration_us: 4_000.0,
        topology: TopologyParams::dumbbell(n),
        ..Default::default()
    };
    c.host.cc.kind = CcKind::WindowOnly;
    c.metrics.sample_period_us = 1.0;
    c.metrics.throughput = false;
    c.incast = Some(IncastConfig {
        degree: n,
        message_bytes: 2_000_000,
        sync_window_us: 50.0,
        victim: Some(n),
        max_events: Some(1),
        ..Default::default()
    });
    c.fc = match v {
        IncastVariant::OnRampStrawMan | IncastVariant::OnRampEwma => FcScheme::OnRamp,
        IncastVariant::EgressBts => FcScheme::EgressBts,
        IncastVariant::IngressBts => FcScheme::IngressBts,
        IncastVariant::IngressBtsCache => FcScheme::IngressBtsCache,
    };
    c.host.onramp = match v {
        IncastVariant::OnRampStrawMan => Some(OnRampConfig::default()),
        IncastVariant::OnRampEwma => Some(OnRampConfig {
            mode: OnRampMode::Ewma,
            gain: ONRAMP_SMOOTH_GAIN,
            target_ns: None,
        }),
        _ => None,
    };
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct IncastStats {
    pub variant: IncastVariant,
    /// Event-exact peak of the victim queue.
    pub peak_bytes: u64,
    pub first_peak_ns: u64,
    /// Largest over smallest sampled depth after the first peak.
    pub swing_after_first_peak: f64,
    /// Largest over smallest sampled depth after 1ms.
    pub swing_after_1ms: f64,
    /// Mean sampled depth over the last 2ms.
    pub settled_mean_bytes: f64,
    pub series: Vec<(u64, u64)>,
}

fn swing(v: impl Iterator<Item = u64>) -> f64 {
    let (lo, hi) = v.fold((u64::MAX, 0), |(lo, hi), x| (lo.min(x), hi.max(x)));
    hi as f64 / lo.max(1) as f64
}

pub fn dumbbell_incast(v: IncastVariant) -> Result<IncastStats> {
    let mut sim = Simulation::new(dumbbell_incast_config(v))?;
    sim.run()?;
    let (node, port) = sim.tracked_queues()[0];
    let peak_bytes = sim.port_queue_max(node, port);
    let series = first_queue(&sim.metrics().timeline);
    let end = 4_000_000;
    // First local maximum that is also the largest value within 200us.
    let first_peak_ns = series
        .iter()
        .find(|&&(t, d)| d > 0 && window(&series, t.saturating_sub(200_000), t + 200_000).all(|x| x <= d))
        .map_or(0, |s| s.0);
    Ok(IncastStats {
        variant: v,
        peak_bytes,
        first_peak_ns,
        swing_after_first_peak: swing(window(&series, first_peak_ns, end)),
        swing_after_1ms: swing(window(&series, 1_000_000, end)),
        settled_mean_bytes: mean(window(&series, 2_000_000, end)),
        series,
    })
}

pub fn dumbbell_incast_all() -> Result<Vec<IncastStats>> {
    IncastVariant::ALL.par_iter().map(|&v| dumbbell_incast(v)).collect()
}

// ---------------------------------------------------------------------
// Bottleneck utilization under BTS.

pub fn underrun_config(n: u32, q_tg_bytes: u64) -> ExperimentConfig {
    let mut c = incast_queue_law_config(n, 1_000.0);
    c.name = format!("underrun-{q_tg_bytes}");
    c.sfc.q_tg_bytes = q_tg_bytes;
    c.sfc.q_th_bytes = 2 * q_tg_bytes;
    c.metrics.throughput = true;
    c.metrics.sample_period_us = 10.0;
    c.metrics.track = TrackQueues::None;
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct Utilization {
    pub q_tg_bytes: u64,
    pub windows: usize,
    /// Worst window after the first buildup.
    pub min_utilization: f64,
    pub mean_utilization: f64,
    /// One MTU at line rate as a fraction of a window.
    pub packet_fraction: f64,
}

pub fn underrun(n: u32, q_tg_bytes: u64) -> Result<Utilization> {
    let c = underrun_config(n, q_tg_bytes);
    let line = c.topology.host_link_gbps;
    let win_ns = (c.metrics.sample_period_us * 1e3) as u64;
    let packet_fraction = c.host.mtu as f64 * 8.0 / line / win_ns as f64;
    let mut sim = Simulation::new(c)?;
    sim.run()?;
    let u: Vec<f64> = sim
        .metrics()
        .throughput
        .iter()
        .filter(|s| s.host == n && s.time_ns > 100_000)
        .map(|s| s.rx_gbps / line)
        .collect();
    Ok(Utilization {
        q_tg_bytes,
        windows: u.len(),
        min_utilization: u.iter().cloned().fold(f64::INFINITY, f64::min),
        mean_utilization: u.iter().sum::<f64>() / u.len().max(1) as f64,
        packet_fraction,
    })
}

// ---------------------------------------------------------------------
// Two racks with background traffic and periodic incast.

/// 2 racks of 32 hosts on one core, Hadoop at 50% plus 8% incast load.
pub fn two_rack_config(fc: FcScheme, degree: u32, seed: u64) -> ExperimentConfig {
    let topology = TopologyParams {
        preset: Preset::Clos2Tier,
        hosts_per_tor: 32,
        n_tors: 2,
        n_cores: 1,
        ..TopologyParams::clos_small()
    };
    let mut c = ExperimentConfig {
        name: format!("two-rack-{}-{degree}", fc.name()),
        seed,
        duration_us: 3_000.0,
        fc,
        topology,
        background: Some(BackgroundConfig::default()),
        ..Default::default()
    };
    c.host.cc.kind = CcKind::WindowOnly;
    c.metrics.track = TrackQueues::None;
    c.metrics.throughput = false;
    c.incast = Some(IncastConfig {
        degree,
        load: Some(0.08),
        sync_window_us: 50.0,
        senders: SenderSelect::Any,
        ..Default::default()
    });
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct SlopePoint {
    pub fc: FcScheme,
    pub degree: u32,
    pub peak_buffer_bytes: u64,
    pub bts_triggered: u64,
    pub bts_suppressed: u64,
    pub suppressed_fraction: f64,
    pub bloom_max_occupancy: u64,
    pub bloom_false_positive_rate: f64,
}

fn slope_point(fc: FcScheme, degree: u32, m: &RunMetrics) -> SlopePoint {
    SlopePoint {
        fc,
        degree,
        peak_buffer_bytes: m.peak_buffer(),
        bts_triggered: m.total(|c| c.bts_triggered),
        bts_suppressed: m.total(|c| c.bts_suppressed),
        suppressed_fraction: m.suppressed_fraction(),
        bloom_max_occupancy: m.counters.iter().map(|c| c.bloom_max_occupancy as u64).max().unwrap_or(0),
        bloom_false_positive_rate: m
            .counters
            .iter()
            .map(|c| c.bloom_false_positive_rate)
            .fold(0.0, f64::max),
    }
}

pub fn buffer_slope(schemes: &[FcScheme], degrees: &[u32], seed: u64) -> Result<Vec<SlopePoint>> {
    let jobs: Vec<(FcScheme, u32)> =
        schemes.iter().flat_map(|&f| degrees.iter().map(move |&d| (f, d))).collect();
    jobs.par_iter()
        .map(|&(fc, d)| {
            let mut sim = Simulation::new(two_rack_config(fc, d, seed))?;
            sim.run()?;
            Ok(slope_point(fc, d, sim.metrics()))
        })
        .collect()
}

/// Least-squares slope of `y` over `x` and the coefficient of determination.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, r2)
}

// ---------------------------------------------------------------------
// Sensitivity of tail FCT to the target depth.

/// Small Clos with Hadoop at 50% plus a 32:1 incast at 8% under INT-driven
/// windows.
pub fn qtg_config(q_tg_bytes: u64, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        name: format!("qtg-{q_tg_bytes}"),
        seed,
        duration_us: 5_000.0,
        fc: FcScheme::IngressBtsCache,
        topology: TopologyParams::clos_small(),
        background: Some(BackgroundConfig::default()),
        ..Default::default()
    };
    c.host.cc.kind = CcKind::IntWindow;
    c.sfc.q_tg_bytes = q_tg_bytes;
    c.sfc.q_th_bytes = 2 * q_tg_bytes;
    c.metrics.track = TrackQueues::None;
    c.metrics.throughput = false;
    c.incast = Some(IncastConfig {
        degree: 32,
        load: Some(0.08),
        sync_window_us: 50.0,
        ..Default::default()
    });
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct QtgTable {
    pub q_tg_bytes: u64,
    /// P95 slowdown of background flows per size bin.
    pub p95: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

pub const QTG_BINS: usize = 6;

pub fn qtg_tables(q_tgs: &[u64], seed: u64) -> Result<Vec<QtgTable>> {
    let edges = log_bin_edges(100, 10_000_000, QTG_BINS);
    q_tgs
        .par_iter()
        .map(|&q| {
            let mut sim = Simulation::new(qtg_config(q, seed))?;
            sim.run()?;
            let recs: Vec<(u64, f64)> = sim
                .metrics()
                .fct
                .iter()
                .filter(|r| r.class == "background")
                .map(|r| (r.size, r.slowdown))
                .collect();
            let rows = percentile_by_edges(&recs, &edges, &[95.0]);
            Ok(QtgTable {
                q_tg_bytes: q,
                p95: rows.iter().map(|r| r.values[0]).collect(),
                counts: rows.iter().map(|r| r.count).collect(),
            })
        })
        .collect()
}

/// Per bin, largest over smallest P95 minus one. Bins missing from any
/// table are skipped.
pub fn qtg_spread(tables: &[QtgTable]) -> Vec<Option<f64>> {
    (0..QTG_BINS)
        .map(|b| {
            let v: Option<Vec<f64>> = tables.iter().map(|t| t.p95.get(b).copied().flatten()).collect();
            let v = v?;
            let hi = v.iter().cloned().fold(f64::MIN, f64::max);
            let lo = v.iter().cloned().fold(f64::MAX, f64::min);
            Some(hi / lo - 1.0)
        })
        .collect()
}

// ---------------------------------------------------------------------
// Groups of senders joining and leaving one link.

pub const FAIR_GROUPS: u32 = 4;
pub const FAIR_PER_GROUP: u32 = 4;
/// Phases: groups join one per phase, then leave one per phase.
pub const FAIR_PHASES: u64 = 2 * FAIR_GROUPS as u64 - 1;

/// Group `g` sends from `g x phase` to `(G + g) x phase`; each sender's
/// start is offset by up to 20us drawn from `seed`.
pub fn fairness_config(fc: FcScheme, phase_us: u64, seed: u64) -> ExperimentConfig {
    use rand::Rng;
    let n = FAIR_GROUPS * FAIR_PER_GROUP;
    let p = phase_us * 1_000;
    let mut c = ExperimentConfig {
        name: format!("fairness-{}", fc.name()),
        seed,
        duration_us: (FAIR_PHASES * phase_us) as f64,
        fc,
        topology: TopologyParams::star(n + 1),
        ..Default::default()
    };
    c.host.cc.kind = CcKind::DcqcnW;
    c.metrics.flow_logs = true;
    c.metrics.throughput = false;
    c.metrics.track = TrackQueues::None;
    let mut rng = crate::engine::derive_rng(seed, 0xfa1);
    c.flows = (0..n)
        .map(|i| {
            let g = (i / FAIR_PER_GROUP) as u64;
            StaticFlow {
                src: i,
                dst: n,
                size: u64::MAX / 4,
                start_ns: g * p + rng.gen_range(0..20_000),
                stop_ns: Some((FAIR_GROUPS as u64 + g) * p),
                ..Default::default()
            }
        })
        .collect();
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct FairnessRun {
    /// Per phase, each group's share of packets sent in the second half.
    pub shares: Vec<Vec<f64>>,
    /// BTS pause values received, grouped by the bloom epoch in which the
    /// triggering packet reached the switch: `max - min` per epoch.
    pub epoch_spreads_us: Vec<u32>,
    pub bts: usize,
}

pub fn fairness_run(fc: FcScheme, phase_us: u64, seed: u64) -> Result<FairnessRun> {
    let c = fairness_config(fc, phase_us, seed);
    let p = phase_us * 1_000;
    let mut sim = Simulation::new(c)?;
    sim.run()?;
    let topo = sim.topology();
    let t = &sim.config().topology;
    // BTS arrival minus the time its trigger reached the switch.
    let back = sim.config().sfc.pipeline_delay_ns
        + t.switch_latency_ns
        + crate::net::serialization_delay(crate::net::CONTROL_PACKET_BYTES, t.host_link_bps()).as_nanos()
        + t.host_link_delay_ns;
    let epoch = topo.base_rtt(0, 1, sim.config().host.mtu).as_nanos() / 2;
    let epoch = sim.config().sfc.bloom_reset_ns.unwrap_or(epoch).max(1);
    let mut shares = Vec::new();
    for ph in 0..FAIR_PHASES {
        let (a, b) = (ph * p + p / 2, (ph + 1) * p);
        let mut per = vec![0f64; FAIR_GROUPS as usize];
        for f in sim.flows() {
            let log = f.log.as_ref().expect("flow logs on");
            let k = log.sends.iter().filter(|t| (a..b).contains(&t.as_nanos())).count();
            per[(f.src / FAIR_PER_GROUP) as usize] += k as f64;
        }
        let tot: f64 = per.iter().sum();
        shares.push(per.iter().map(|x| if tot > 0.0 { x / tot } else { 0.0 }).collect());
    }
    let mut by_epoch: std::collections::BTreeMap<u64, (u32, u32)> = Default::default();
    let mut bts = 0;
    for f in sim.flows() {
        for &(t, pause) in &f.log.as_ref().expect("flow logs on").bts {
            if pause == 0 {
                continue;
            }
            bts += 1;
            let e = by_epoch.entry(t.as_nanos().saturating_sub(back) / epoch).or_insert((u32::MAX, 0));
            e.0 = e.0.min(pause);
            e.1 = e.1.max(pause);
        }
    }
    Ok(FairnessRun {
        shares,
        epoch_spreads_us: by_epoch.values().map(|(lo, hi)| hi - lo).collect(),
        bts,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Fairness {
    /// Seed-averaged shares per phase, without and with SFC.
    pub without: Vec<Vec<f64>>,
    pub with: Vec<Vec<f64>>,
    pub max_share_diff: f64,
    pub epochs: usize,
    pub epochs_within_1us: usize,
    pub worst_epoch_spread_us: u32,
}

pub fn fairness(phase_us: u64, seeds: &[u64]) -> Result<Fairness> {
    let jobs: Vec<(FcScheme, u64)> = [FcScheme::None, FcScheme::IngressBtsCache]
        .iter()
        .flat_map(|&f| seeds.iter().map(move |&s| (f, s)))
        .collect();
    let runs: Vec<(FcScheme, FairnessRun)> = jobs
        .par_iter()
        .map(|&(f, s)| Ok((f, fairness_run(f, phase_us, s)?)))
        .collect::<Result<_>>()?;
    let avg = |fc: FcScheme| {
        let mut acc = vec![vec![0f64; FAIR_GROUPS as usize]; FAIR_PHASES as usize];
        for (_, r) in runs.iter().filter(|r| r.0 == fc) {
            for (a, s) in acc.iter_mut().zip(&r.shares) {
                for (x, y) in a.iter_mut().zip(s) {
                    *x += y / seeds.len() as f64;
                }
            }
        }
        acc
    };
    let without = avg(FcScheme::None);
    let with = avg(FcScheme::IngressBtsCache);
    let max_share_diff = without
        .iter()
        .flatten()
        .zip(with.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let spreads: Vec<u32> = runs
        .iter()
        .filter(|r| r.0 == FcScheme::IngressBtsCache)
        .flat_map(|r| r.1.epoch_spreads_us.iter().copied())
        .collect();
    Ok(Fairness {
        without,
        with,
        max_share_diff,
        epochs: spreads.len(),
        epochs_within_1us: spreads.iter().filter(|&&s| s <= 1).count(),
        worst_epoch_spread_us: spreads.iter().copied().max().unwrap_or(0),
    })
}

/// Bytes as megabytes, for reports.
pub fn mb(b: f64) -> f64 {
    b / MB
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_line() {
        let (s, r2) = linear_fit(&[(1.0, 3.0), (2.0, 5.0), (4.0, 9.0)]);
        assert!((s - 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn builders_validate() {
        incast_queue_law_config(40, 100.0).validate().unwrap();
        for v in IncastVariant::ALL {
            dumbbell_incast_config(v).validate().unwrap();
        }
        underrun_config(8, 75_000).validate().unwrap();
        two_rack_config(FcScheme::OnRamp, 63, 1).validate().unwrap();
        qtg_config(62_500, 1).validate().unwrap();
        let f = fairness_config(FcScheme::None, 1_000, 1);
        f.validate().unwrap();
        assert_eq!(f.flows.len(), 16);
        assert!(f.flows.iter().all(|x| x.stop_ns.unwrap() > x.start_ns));
    }

    #[test]
    fn spread_skips_missing_bins() {
        let t = |q, p: Vec<Option<f64>>| QtgTable { q_tg_bytes: q, counts: vec![1; p.len()], p95: p };
        let mut a = vec![None; QTG_BINS];
        let mut b = vec![None; QTG_BINS];
        a[0] = Some(2.0);
        b[0] = Some(2.2);
        b[1] = Some(1.0);
        let s = qtg_spread(&[t(1, a), t(2, b)]);
        assert!((s[0].unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(s[1], None);
    }
}
