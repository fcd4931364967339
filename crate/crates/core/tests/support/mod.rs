//! Config generators and invariant checks shared by the property suite and
//! the acceptance run.

#![allow(dead_code)]

use std::collections::HashMap;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use sfcsim::config::{IncastConfig, SenderSelect, StaticFlow, TrackQueues};
use sfcsim::endhost::{CcKind, PauseMerge};
use sfcsim::engine::SimTime;
use sfcsim::net::{NodeId, PacketKind, TopologyParams};
use sfcsim::sim::WireEvent;
use sfcsim::switchfab::{CacheKey, PauseCache, RateEstimator, Ratio};
use sfcsim::{ExperimentConfig, FcScheme, Simulation};

pub type Check = Result<(), TestCaseError>;

#[derive(Debug, Clone)]
pub enum Shape {
    Star(u32),
    Dumbbell(u32),
    Clos { per_tor: u32, tors: u32, cores: u32 },
}

impl Shape {
    fn params(&self) -> TopologyParams {
        match *self {
            Shape::Star(n) => TopologyParams::star(n),
            Shape::Dumbbell(n) => TopologyParams::dumbbell(n),
            Shape::Clos { per_tor, tors, cores } => TopologyParams {
                hosts_per_tor: per_tor,
                n_tors: tors,
                n_cores: cores,
                ..TopologyParams::clos_small()
            },
        }
    }

    fn hosts(&self) -> u32 {
        match *self {
            Shape::Star(n) => n,
            Shape::Dumbbell(n) => 2 * n,
            Shape::Clos { per_tor, tors, .. } => per_tor * tors,
        }
    }
}

fn shape() -> impl Strategy<Value = Shape> {
    prop_oneof![
        (3u32..=8).prop_map(Shape::Star),
        (2u32..=4).prop_map(Shape::Dumbbell),
        (2u32..=4, 2u32..=3, 1u32..=2).prop_map(|(per_tor, tors, cores)| Shape::Clos { per_tor, tors, cores }),
    ]
}

fn cc() -> impl Strategy<Value = CcKind> {
    prop_oneof![
        Just(CcKind::None),
        Just(CcKind::WindowOnly),
        Just(CcKind::DcqcnW),
        Just(CcKind::IntWindow),
    ]
}

prop_compose! {
    /// A short run on a small random topology with an incast and a few
    /// extra flows, every trace switched on.
    pub fn small_config()(
        shape in shape(),
        fc in prop::sample::select(FcScheme::ALL.to_vec()),
        cc in cc(),
        capacity in prop::option::weighted(0.7, 100_000u64..1_500_000),
        alpha in (1u64..=8, 1u64..=8),
        q_tg in 4_000u64..60_000,
        overwrite in any::<bool>(),
        degree in 1u32..=7,
        message in 30_000u64..400_000,
        sync in 0.0f64..20.0,
        events in 1u32..=2,
        extra in prop::collection::vec((0u32..64, 0u32..64, 4_000u64..400_000, 0u64..50_000), 0..3),
        duration in 60.0f64..200.0,
        seed in any::<u64>(),
    ) -> ExperimentConfig {
        let n = shape.hosts();
        let mut c = ExperimentConfig {
            name: "prop".into(),
            seed: seed >> 1,
            duration_us: duration,
            fc,
            topology: shape.params(),
            ..Default::default()
        };
        c.buffer.capacity_bytes = match (capacity, fc) {
            (None, FcScheme::Pfc) => Some(1_000_000),
            (cap, _) => cap,
        };
        c.buffer.alpha = Ratio { num: alpha.0, den: alpha.1 };
        c.sfc.q_tg_bytes = q_tg;
        c.sfc.q_th_bytes = 2 * q_tg;
        c.host.cc.kind = cc;
        c.host.pause_merge = if overwrite { PauseMerge::Overwrite } else { PauseMerge::Max };
        c.incast = Some(IncastConfig {
            degree: degree.min(n - 1),
            message_bytes: message,
            sync_window_us: sync,
            victim: Some(n - 1),
            senders: SenderSelect::Any,
            max_events: Some(events),
            ..Default::default()
        });
        c.flows = extra
            .into_iter()
            .filter(|&(s, d, _, _)| s % n != d % n)
            .map(|(s, d, size, start_ns)| StaticFlow { src: s % n, dst: d % n, size, start_ns, ..Default::default() })
            .collect();
        c.metrics.sample_period_us = 5.0;
        c.metrics.throughput = false;
        c.metrics.track = TrackQueues::AllHostPorts;
        c.metrics.flow_logs = true;
        c.metrics.buffer_trace = true;
        c.metrics.wire_trace = true;
        c
    }
}

/// Configs whose switches admit by dynamic threshold.
pub fn lossy_finite_config() -> impl Strategy<Value = ExperimentConfig> {
    small_config().prop_filter("lossy and finite", |c| {
        c.buffer.capacity_bytes.is_some() && !matches!(c.fc, FcScheme::Pfc | FcScheme::SfcP)
    })
}

pub fn run(cfg: &ExperimentConfig) -> Simulation {
    cfg.validate().expect("generated config is valid");
    let mut sim = Simulation::new(cfg.clone()).expect("build");
    sim.run().expect("run");
    sim
}

pub fn same_seed_same_trace(cfg: &ExperimentConfig) -> Check {
    let (a, b) = (run(cfg), run(cfg));
    prop_assert_eq!(a.summary(), b.summary());
    let fct = |s: &Simulation| s.flows().iter().map(|f| (f.finish, f.bytes_sent, f.bts_received)).collect::<Vec<_>>();
    prop_assert_eq!(fct(&a), fct(&b));
    prop_assert_eq!(a.wire_trace(), b.wire_trace());
    Ok(())
}

/// A flow's pause intervals never overlap and it sends nothing inside one.
pub fn pauses_are_disjoint_and_silent(cfg: &ExperimentConfig) -> Check {
    let sim = run(cfg);
    for f in sim.flows() {
        let log = f.log.as_ref().expect("flow logs on");
        for w in log.pauses.windows(2) {
            prop_assert!(w[0].1 <= w[1].0, "flow {} pauses overlap: {:?}", f.id, w);
        }
        for &(s, e) in &log.pauses {
            prop_assert!(s <= e);
            let inside = log.sends.iter().find(|&&t| t > s && t < e);
            prop_assert!(inside.is_none(), "flow {} sent at {:?} inside pause {:?}", f.id, inside, (s, e));
        }
    }
    Ok(())
}

/// Replaying buffer changes lands on the final occupancy, and every data
/// packet a switch receives is either admitted or dropped.
pub fn buffer_replay_conserves_bytes(cfg: &ExperimentConfig) -> Check {
    let sim = run(cfg);
    let trace = sim.buffer_trace().expect("buffer trace on");
    let wire = sim.wire_trace().expect("wire trace on");
    for sw in sim.switches() {
        let mut q = vec![0i64; sw.n_queues()];
        let (mut admitted, mut departed) = (0u64, 0u64);
        for d in trace.iter().filter(|d| d.switch == sw.node.0) {
            q[d.queue] += d.delta;
            prop_assert!(q[d.queue] >= 0, "queue {} of switch {} went negative", d.queue, d.switch);
            if d.delta > 0 {
                admitted += 1
            } else {
                departed += 1
            }
        }
        for (i, &b) in q.iter().enumerate() {
            prop_assert_eq!(b as u64, sw.buffer.queue(i));
        }
        prop_assert_eq!(q.iter().sum::<i64>() as u64, sw.buffer.used());
        let data = |tx: bool| {
            wire.iter()
                .filter(|w| w.node == sw.node && w.tx == tx && w.kind == PacketKind::Data)
                .count() as u64
        };
        prop_assert_eq!(sw.counters.unroutable, 0);
        prop_assert_eq!(data(false), admitted + sw.counters.drops);
        prop_assert_eq!(data(true), departed);
    }
    Ok(())
}

/// After every admission, `q <= alpha * (B - used)`, hence
/// `q <= alpha / (1 + alpha) * B`.
pub fn dynamic_threshold_caps_each_queue(cfg: &ExperimentConfig) -> Check {
    let sim = run(cfg);
    let cap = cfg.buffer.capacity_bytes.expect("finite buffer");
    let Ratio { num, den } = cfg.buffer.alpha;
    let limit = cap as f64 * num as f64 / (num + den) as f64;
    let mut q: HashMap<(u32, usize), u64> = HashMap::new();
    let mut used: HashMap<u32, u64> = HashMap::new();
    for d in sim.buffer_trace().expect("buffer trace on") {
        let qd = q.entry((d.switch, d.queue)).or_default();
        let u = used.entry(d.switch).or_default();
        *qd = (*qd as i64 + d.delta) as u64;
        *u = (*u as i64 + d.delta) as u64;
        if d.delta > 0 {
            prop_assert!(*u <= cap);
            prop_assert!(
                *qd as u128 * den as u128 <= (cap - *u) as u128 * num as u128,
                "queue {} at {} B with {} B used",
                d.queue,
                qd,
                u
            );
            prop_assert!(*qd as f64 <= limit + 1e-6);
        }
    }
    Ok(())
}

/// Each link direction delivers exactly what was put on it, in order, one
/// serialization plus propagation (plus switch latency) later, and never
/// starts a packet before the previous one has left.
pub fn links_deliver_in_order(cfg: &ExperimentConfig) -> Check {
    let sim = run(cfg);
    let topo = sim.topology();
    let end = sim.summary().unwrap().final_clock;
    let mut tx: HashMap<(NodeId, u16), Vec<&WireEvent>> = HashMap::new();
    let mut rx: HashMap<(NodeId, u16), Vec<&WireEvent>> = HashMap::new();
    for w in sim.wire_trace().expect("wire trace on") {
        let m = if w.tx { &mut tx } else { &mut rx };
        m.entry((w.node, w.port)).or_default().push(w);
    }
    let id = |w: &WireEvent| (w.kind, w.flow, w.seq, w.bytes);
    for (&(node, port), sent) in &tx {
        let link = topo.link_of(node, port);
        let extra = if topo.is_host(node) { SimTime::ZERO } else { topo.switch_latency };
        let lands = |w: &WireEvent| w.time + link.serialization(w.bytes) + link.propagation_delay + extra;
        for pair in sent.windows(2) {
            prop_assert!(
                pair[1].time >= pair[0].time + link.serialization(pair[0].bytes),
                "overlapping transmissions on {:?}:{}",
                node,
                port
            );
        }
        let peer = topo.port(node, port);
        let got = rx.get(&(peer.peer, peer.peer_port)).map_or(&[][..], |v| v.as_slice());
        prop_assert!(got.len() <= sent.len());
        for (s, r) in sent.iter().zip(got) {
            prop_assert_eq!(id(s), id(r));
            prop_assert_eq!(r.time, lands(s));
        }
        for s in &sent[got.len()..] {
            prop_assert!(lands(s) >= end, "packet lost on the wire from {:?}:{}", node, port);
        }
    }
    for key in rx.keys() {
        let p = topo.port(key.0, key.1);
        prop_assert!(tx.contains_key(&(p.peer, p.peer_port)), "arrival with no transmission");
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum CacheOp {
    Update { key: u8, pause: u64 },
    Advance(u64),
}

pub fn cache_ops() -> impl Strategy<Value = (Vec<CacheOp>, usize)> {
    let ops = prop::collection::vec(
        prop_oneof![
            3 => (0u8..12, 0u64..20_000).prop_map(|(key, pause)| CacheOp::Update { key, pause }),
            1 => (0u64..5_000).prop_map(CacheOp::Advance),
        ],
        1..200,
    );
    (ops, 1usize..16)
}

/// Live entries hold the largest pause end written since they were
/// installed, and an update only fails against another live key.
pub fn cache_keeps_the_max(ops: &[CacheOp], slots: usize) -> Check {
    let mut cache = PauseCache::new(slots);
    let mut model: HashMap<u8, SimTime> = HashMap::new();
    let key = |k: u8| CacheKey { ip: k as u32, dscp: 0 };
    let mut now = SimTime::ZERO;
    for op in ops {
        match *op {
            CacheOp::Advance(dt) => now += SimTime(dt),
            CacheOp::Update { key: k, pause } => {
                let end = now + SimTime(pause);
                let installed = cache.lookup(&key(k)).is_some();
                let before = cache.collisions;
                if cache.update(key(k), end, now) {
                    let m = model.entry(k).or_insert(end);
                    *m = if installed { (*m).max(end) } else { end };
                } else {
                    prop_assert!(!installed);
                    prop_assert_eq!(cache.collisions, before + 1);
                    let live_other = model
                        .iter()
                        .any(|(&o, &e)| o != k && e > now && cache.lookup(&key(o)).is_some());
                    prop_assert!(live_other);
                }
            }
        }
        for (&k, &e) in &model {
            if let Some(got) = cache.lookup(&key(k)) {
                prop_assert_eq!(got, e);
                prop_assert_eq!(cache.remaining(&key(k), now), e.saturating_sub(now));
            }
        }
        let live = model.iter().filter(|(&k, &e)| e > now && cache.lookup(&key(k)).is_some()).count();
        prop_assert!(live <= slots);
    }
    Ok(())
}

pub fn estimator_inputs() -> impl Strategy<Value = (Vec<(u64, u32)>, u64, u64)> {
    (
        prop::collection::vec((0u64..3_000, 64u32..9_000), 1..300),
        1u64..20,
        prop::sample::select(vec![25u64, 100, 400]),
    )
}

/// The decayed byte counter minus one window of drain never exceeds the
/// depth of an ideal queue fed by the same arrivals.
pub fn estimator_never_overestimates(arrivals: &[(u64, u32)], tau_us: u64, gbps: u64) -> Check {
    let r = gbps * 1_000_000_000;
    let mut est = RateEstimator::new(SimTime::from_micros(tau_us), [7]);
    let (mut now, mut queue, mut last) = (SimTime::ZERO, 0.0f64, SimTime::ZERO);
    let drain = |q: f64, dt: SimTime| (q - dt.as_nanos() as f64 * r as f64 / 8e9).max(0.0);
    for &(gap, bytes) in arrivals {
        now += SimTime(gap);
        let fluid = drain(queue, now - last);
        prop_assert!(est.queue_estimate(7, now, r) as f64 <= fluid + 1.0);
        est.observe(7, bytes, now);
        queue = fluid + bytes as f64;
        last = now;
        prop_assert!(est.queue_estimate(7, now, r) as f64 <= queue + 1.0);
    }
    Ok(())
}
