//! Two-flow comparison between the simulator and the closed-form bounds.
//!
//! A steady line-rate flow and a line-rate joiner share the middle link of
//! a dumbbell. Closed-form inputs are read off the simulated topology:
//! `T_A` and `T_B` are the one-way delays of the packet type that travels
//! each leg (data forward, 64 B control backward), averaged over the two
//! directions, so serialization of the data packet on a leg is part of that
//! leg's delay.

use serde::Serialize;

use crate::config::{ExperimentConfig, FcScheme, StaticFlow, TrackQueues};
use crate::endhost::{CcKind, OnRampConfig, OnRampMode};
use crate::error::Result;
use crate::net::{serialization_delay, NodeId, Topology, TopologyParams, CONTROL_PACKET_BYTES};
use crate::sim::Simulation;
use crate::theory::{b_ack, b_bts, TheoryInputs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    /// Ingress BTS straight from the congested switch.
    Bts,
    /// Congestion learned at the receiver and echoed in ACKs.
    EndToEnd,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSetup {
    pub mode: OracleMode,
    /// Packets queued when congestion is first signaled.
    pub k: u32,
    pub host_delay_ns: u64,
    pub core_delay_ns: u64,
    pub switch_latency_ns: u64,
    /// Joiner start offset. At 0 the two flows' packets reach the switch
    /// half a packet time apart; at half a packet time they arrive together.
    pub phase_ns: u64,
}

impl OracleSetup {
    pub fn new(mode: OracleMode, k: u32) -> Self {
        Self {
            mode,
            k,
            host_delay_ns: 1_000,
            core_delay_ns: 1_500,
            switch_latency_ns: 500,
            phase_ns: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleResult {
    pub mode: OracleMode,
    pub k: u32,
    pub t_a_us: f64,
    pub t_b_us: f64,
    pub bound_bytes: f64,
    pub peak_bytes: u64,
    /// `(peak - bound) / MTU`.
    pub excess_mtu: f64,
}

const STEADY: u32 = 0;
const JOINER: u32 = 1;
const RECEIVER: u32 = 2;
const MTU: u32 = 4000;
const JOIN_AT_NS: u64 = 20_000;

/// Config for the scenario. The bottleneck is the left ToR's uplink.
pub fn config(s: &OracleSetup) -> ExperimentConfig {
    let mut topology = TopologyParams::dumbbell(2);
    topology.core_link_gbps = Some(100.0);
    topology.host_link_delay_ns = s.host_delay_ns;
    topology.core_link_delay_ns = s.core_delay_ns;
    topology.switch_latency_ns = s.switch_latency_ns;
    let q = s.k as u64 * MTU as u64;
    let mut c = ExperimentConfig {
        name: format!("oracle-{:?}-k{}", s.mode, s.k).to_lowercase(),
        duration_us: 100.0,
        topology,
        ..ExperimentConfig::default()
    };
    c.host.mtu = MTU;
    c.host.cc.kind = CcKind::None;
    // Ideal reaction: a signalled sender stays quiet past the peak.
    c.host.min_pause_ns = 50_000;
    c.buffer.ecn_threshold_bytes = Some(0);
    c.sfc.pipeline_delay_ns = 0;
    c.metrics.track = TrackQueues::None;
    match s.mode {
        OracleMode::Bts => {
            c.fc = FcScheme::IngressBts;
            // Raised once k packets are queued.
            c.sfc.q_th_bytes = q - 1;
            c.sfc.q_tg_bytes = q / 2;
        }
        OracleMode::EndToEnd => {
            c.fc = FcScheme::OnRamp;
            // Signalled by the first packet that waited behind k packets.
            c.sfc.q_tg_bytes = q - 1;
            c.sfc.q_th_bytes = 2 * q;
            c.host.onramp = Some(OnRampConfig {
                mode: OnRampMode::StrawMan,
                ..OnRampConfig::default()
            });
        }
    }
    c.flows = vec![
        StaticFlow { src: STEADY, dst: RECEIVER, size: 4_000_000, ..Default::default() },
        StaticFlow {
            src: JOINER,
            dst: RECEIVER,
            size: 4_000_000,
            start_ns: JOIN_AT_NS + s.phase_ns,
            ..Default::default()
        },
    ];
    c
}

/// Delay of `bytes` over hops `path[from..to]`, forward or reversed.
fn leg(topo: &Topology, path: &[(NodeId, u16)], from: usize, to: usize, bytes: u32, reverse: bool) -> f64 {
    let mut ns = 0u64;
    for i in from..to {
        let (n, p) = path[i];
        let link = topo.link_of(n, p);
        let sender = if reverse { topo.port(n, p).peer } else { n };
        let lat = if topo.is_host(sender) { 0 } else { topo.switch_latency.as_nanos() };
        ns += serialization_delay(bytes, link.speed_bits_per_s).as_nanos()
            + link.propagation_delay.as_nanos()
            + lat;
    }
    ns as f64
}

/// Closed-form inputs for `setup` read from its topology.
pub fn theory_inputs(topo: &Topology, k: u32, bottleneck: NodeId) -> TheoryInputs {
    let path = topo.path(STEADY, RECEIVER);
    let b = path.iter().position(|&(n, _)| n == bottleneck).expect("bottleneck on path");
    let end = path.len();
    let ctrl = CONTROL_PACKET_BYTES;
    let t_a = (leg(topo, &path, 0, b, MTU, false) + leg(topo, &path, 0, b, ctrl, true)) / 2.0;
    let t_b = (leg(topo, &path, b, end, MTU, false) + leg(topo, &path, b, end, ctrl, true)) / 2.0;
    let r = topo.link_of(path[b].0, path[b].1).speed_bits_per_s;
    TheoryInputs {
        r_bps: r as f64,
        t_a_us: t_a / 1e3,
        t_b_us: t_b / 1e3,
        t_tor_us: t_a / 1e3,
        t_s_us: serialization_delay(MTU, r).as_nanos() as f64 / 1e3,
        k,
        n: 2,
        m: 1.0,
    }
}

pub fn run(setup: &OracleSetup) -> Result<OracleResult> {
    let mut sim = Simulation::new(config(setup))?;
    sim.run()?;
    let topo = sim.topology();
    let tor = topo.host_tor(STEADY);
    let port = topo.route(tor, &sim.flows()[0].tuple).expect("route");
    let inputs = theory_inputs(topo, setup.k, tor);
    let bound = match setup.mode {
        OracleMode::Bts => b_bts(&inputs),
        OracleMode::EndToEnd => b_ack(&inputs),
    };
    let peak = sim.port_queue_max(tor, port);
    Ok(OracleResult {
        mode: setup.mode,
        k: setup.k,
        t_a_us: inputs.t_a_us,
        t_b_us: inputs.t_b_us,
        bound_bytes: bound,
        peak_bytes: peak,
        excess_mtu: (peak as f64 - bound) / MTU as f64,
    })
}
