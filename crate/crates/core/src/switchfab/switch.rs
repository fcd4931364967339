//! Output-queued shared-buffer switch.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::buffer::{Ratio, SharedBuffer};
use super::sfc::{bts_pause_us, drain_pause_us, IngressDecision, MirrorMeta, SfcState};
use crate::engine::SimTime;
use crate::net::{Layer, NodeId, Packet, PacketKind, Topology};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PfcConfig {
    pub enabled: bool,
    /// Fixed per-ingress trigger. `None` uses the dynamic threshold
    /// `alpha * free`, which needs a finite buffer.
    pub threshold_bytes: Option<u64>,
    /// Resume once ingress usage falls below this fraction of the trigger.
    pub resume_fraction: f64,
    /// Pause duration carried by XOFF frames (65535 quanta at 100G).
    pub pause_duration_ns: u64,
}

impl Default for PfcConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            threshold_bytes: None,
            resume_fraction: 0.8,
            pause_duration_ns: 335_540,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct SwitchCounters {
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
}

#[derive(Debug, Clone)]
pub struct EgressPort {
    pub speed_bps: u64,
    control: VecDeque<Packet>,
    data: Vec<VecDeque<Packet>>,
    depth: Vec<u64>,
    /// Depth last observed at egress, per priority.
    snapshot: Vec<u64>,
    pub busy: bool,
    /// Downstream PFC pause, per priority.
    paused_until: Vec<SimTime>,
    tx_decayed: f64,
    tx_last: SimTime,
}

impl EgressPort {
    fn new(speed_bps: u64, n_prio: usize) -> Self {
        Self {
            speed_bps,
            control: VecDeque::new(),
            data: (0..n_prio).map(|_| VecDeque::new()).collect(),
            depth: vec![0; n_prio],
            snapshot: vec![0; n_prio],
            busy: false,
            paused_until: vec![SimTime::ZERO; n_prio],
            tx_decayed: 0.0,
            tx_last: SimTime::ZERO,
        }
    }

    pub fn depth(&self, prio: usize) -> u64 {
        self.depth[prio]
    }

    pub fn total_depth(&self) -> u64 {
        self.depth.iter().sum()
    }

    pub fn has_control(&self) -> bool {
        !self.control.is_empty()
    }

    /// Earliest time a paused, non-empty priority becomes eligible again.
    pub fn next_unpause(&self, now: SimTime) -> Option<SimTime> {
        self.data
            .iter()
            .zip(&self.paused_until)
            .filter(|(q, &until)| !q.is_empty() && until > now)
            .map(|(_, &until)| until)
            .min()
    }

    pub fn is_paused(&self, prio: usize, now: SimTime) -> bool {
        self.paused_until[prio] > now
    }

    pub fn pause(&mut self, prio: usize, until: SimTime) {
        self.paused_until[prio] = until;
    }
}

/// Result of offering a packet to the buffer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnqueueOutcome {
    pub admitted: bool,
    /// Congestion flag change to propagate to ingress.
    pub flag_change: Option<(usize, bool)>,
    /// PFC pause to send out of `(ingress_port, priority)`.
    pub pfc_pause: Option<(u16, u8)>,
}

#[derive(Debug, Clone)]
pub struct Dequeued {
    pub pkt: Packet,
    pub flag_change: Option<(usize, bool)>,
    pub pfc_resume: Option<(u16, u8)>,
    pub egress_mirror: Option<MirrorMeta>,
}

#[derive(Debug, Clone)]
struct PfcState {
    cfg: PfcConfig,
    ingress_bytes: Vec<u64>,
    /// When an XOFF was last sent, per (ingress port, priority).
    xoff_sent: Vec<Option<SimTime>>,
}

#[derive(Debug, Clone)]
pub struct SwitchParams {
    pub capacity: Option<u64>,
    pub alpha: Ratio,
    pub ecn_threshold: Option<u64>,
    pub data_priorities: usize,
    pub pfc: PfcConfig,
    /// Reference window for INT utilization, typically the base RTT.
    pub int_window: SimTime,
}

pub struct Switch {
    pub node: NodeId,
    pub layer: Layer,
    pub ports: Vec<EgressPort>,
    n_prio: usize,
    pub buffer: SharedBuffer,
    pub sfc: Option<SfcState>,
    pfc: Option<PfcState>,
    ecn_threshold: Option<u64>,
    int_window: SimTime,
    pub counters: SwitchCounters,
    queue_max: Vec<u64>,
    /// SFC-P: latest PFC pause end sent to each host-facing port.
    converted_pause_end: Vec<SimTime>,
}

impl Switch {
    pub fn new(node: NodeId, topo: &Topology, params: &SwitchParams, sfc: Option<SfcState>) -> Self {
        let n_prio = params.data_priorities.max(1);
        let ports: Vec<EgressPort> = topo.ports[node.0 as usize]
            .iter()
            .map(|p| EgressPort::new(topo.links[p.link].speed_bits_per_s, n_prio))
            .collect();
        let n_queues = ports.len() * n_prio;
        let pfc = params.pfc.enabled.then(|| PfcState {
            cfg: params.pfc.clone(),
            ingress_bytes: vec![0; n_queues],
            xoff_sent: vec![None; n_queues],
        });
        Self {
            node,
            layer: topo.layer(node).expect("switch node"),
            buffer: SharedBuffer::new(params.capacity, params.alpha, n_queues),
            sfc,
            pfc,
            ecn_threshold: params.ecn_threshold,
            int_window: params.int_window,
            counters: SwitchCounters::default(),
            queue_max: vec![0; n_queues],
            converted_pause_end: vec![SimTime::ZERO; ports.len()],
            ports,
            n_prio,
        }
    }

    pub fn queue_index(&self, port: u16, prio: u8) -> usize {
        port as usize * self.n_prio + (prio as usize).min(self.n_prio - 1)
    }

    pub fn n_queues(&self) -> usize {
        self.ports.len() * self.n_prio
    }

    fn queue_port(&self, q: usize) -> (u16, usize) {
        ((q / self.n_prio) as u16, q % self.n_prio)
    }

    pub fn queue_depth(&self, q: usize) -> u64 {
        let (p, prio) = self.queue_port(q);
        self.ports[p as usize].depth[prio]
    }

    /// Egress-visible depth of `q` as of the last dequeue.
    pub fn egress_snapshot(&self, q: usize) -> u64 {
        let (p, prio) = self.queue_port(q);
        self.ports[p as usize].snapshot[prio]
    }

    pub fn queue_max(&self, q: usize) -> u64 {
        self.queue_max[q]
    }

    pub fn max_queue_depth(&self) -> u64 {
        self.queue_max.iter().copied().max().unwrap_or(0)
    }

    /// SFC ingress stage for a data packet headed to `port`.
    pub fn ingress_data(
        &mut self,
        now: SimTime,
        pkt: &Packet,
        port: u16,
        topo: &Topology,
    ) -> IngressDecision {
        let q = self.queue_index(port, pkt.priority);
        let uplink = !topo.is_host(topo.port(self.node, port).peer);
        let Some(sfc) = self.sfc.as_mut() else {
            return IngressDecision::Forward;
        };
        let f = sfc.features;
        if !(f.ingress_trigger || f.cache || f.estimator) {
            return IngressDecision::Forward;
        }
        let congested = f.ingress_trigger && sfc.flags.is_congested(q);
        let mut hint = SimTime::ZERO;
        let mut from_cache = false;
        if f.cache {
            let key = SfcState::cache_key(pkt.tuple.dst_ip, pkt.dscp);
            hint = sfc.cache.remaining(&key, now);
            from_cache = hint > SimTime::ZERO;
        }
        let mut from_estimator = false;
        if let (true, true, Some(est)) = (f.estimator, uplink, sfc.estimator.as_mut()) {
            let dst = pkt.tuple.dst_ip;
            if est.is_provisioned(dst) {
                est.observe(dst, pkt.size_bytes, now);
                let dst_speed = topo.host_link(dst).speed_bits_per_s;
                let local = est.local_estimate(dst, now, dst_speed);
                if local > hint {
                    hint = local;
                    from_estimator = true;
                    from_cache = false;
                }
            }
        }
        if !(congested || hint > SimTime::ZERO) {
            return IngressDecision::Forward;
        }
        if sfc.bloom.test_and_insert(&pkt.tuple) {
            self.counters.bts_suppressed += 1;
            return IngressDecision::Forward;
        }
        if from_estimator {
            self.counters.bts_from_estimator += 1;
        }
        IngressDecision::ForwardAndMirror(MirrorMeta {
            queue: q,
            port,
            pause_hint: hint,
            from_cache,
            data: pkt.clone(),
        })
    }

    /// SFC ingress stage for a BTS in transit.
    pub fn ingress_bts(&mut self, now: SimTime, pkt: &Packet, topo: &Topology) -> IngressDecision {
        let Some(sfc) = self.sfc.as_mut() else {
            return IngressDecision::Forward;
        };
        let Some(bts) = pkt.bts else {
            return IngressDecision::Forward;
        };
        if sfc.features.cache && bts.cacheable {
            let key = SfcState::cache_key(pkt.tuple.src_ip, bts.dscp);
            let end = now + SimTime::from_micros(bts.pause_time_us as u64);
            sfc.cache.update(key, end, now);
            self.counters.bts_cache_updates += 1;
        }
        if sfc.features.convert_to_pfc && topo.host_tor(pkt.tuple.dst_ip) == self.node {
            return IngressDecision::ConsumeBts;
        }
        IngressDecision::Forward
    }

    /// SFC-P: PFC pause duration for the host port addressed by `bts`, or
    /// `None` when the pause is zero. Overlapping conversions extend to the
    /// latest end time.
    pub fn convert_bts(&mut self, now: SimTime, bts: &Packet, topo: &Topology) -> Option<(u16, SimTime)> {
        let fields = bts.bts?;
        if fields.pause_time_us == 0 {
            return None;
        }
        let port = topo.host_port_on(self.node, bts.tuple.dst_ip)?;
        let end = now + SimTime::from_micros(fields.pause_time_us as u64);
        let slot = &mut self.converted_pause_end[port as usize];
        *slot = (*slot).max(end);
        self.counters.bts_converted += 1;
        Some((port, *slot - now))
    }

    /// Build the BTS for a mirror copy using the latest egress view.
    pub fn build_bts(&mut self, meta: &MirrorMeta, topo: &Topology) -> Packet {
        let sfc = self.sfc.as_ref().expect("BTS built on an SFC switch");
        let qd = self.egress_snapshot(meta.queue);
        let speed = self.ports[meta.port as usize].speed_bps;
        let pause = bts_pause_us(meta.pause_hint, qd, sfc.cfg.q_tg_bytes, speed);
        // A pause replayed from the cache carries nothing new. Caching it
        // again would stretch the entry by the rounding on every hit.
        let fresh = !meta.from_cache || drain_pause_us(qd, sfc.cfg.q_tg_bytes, speed) >= pause;
        let cacheable = fresh && topo.is_server_facing(self.node, meta.port);
        self.counters.bts_triggered += 1;
        if meta.from_cache {
            self.counters.bts_from_cache += 1;
        }
        Packet::bts(&meta.data, pause, cacheable)
    }

    /// Offer a packet to egress `port`.
    pub fn enqueue(&mut self, now: SimTime, mut pkt: Packet, port: u16) -> EnqueueOutcome {
        if pkt.is_control() {
            self.ports[port as usize].control.push_back(pkt);
            return EnqueueOutcome {
                admitted: true,
                ..Default::default()
            };
        }
        let prio = (pkt.priority as usize).min(self.n_prio - 1);
        let q = self.queue_index(port, pkt.priority);
        let size = pkt.size_bytes as u64;
        let admitted = if self.pfc.is_some() {
            self.buffer.fits(size)
        } else {
            self.buffer.admits(q, size)
        };
        if !admitted {
            self.counters.drops += 1;
            return EnqueueOutcome::default();
        }
        let mut out = EnqueueOutcome {
            admitted: true,
            ..Default::default()
        };
        self.buffer.add(q, size);
        let ep = &mut self.ports[port as usize];
        ep.depth[prio] += size;
        let depth = ep.depth[prio];
        self.queue_max[q] = self.queue_max[q].max(depth);
        if self.ecn_threshold.is_some_and(|t| depth > t) {
            pkt.ecn_marked = true;
            self.counters.ecn_marks += 1;
        }
        if let Some(sfc) = self.sfc.as_mut() {
            if let Some(v) = sfc.flags.observe(q, depth, sfc.cfg.q_th_bytes) {
                out.flag_change = Some((q, v));
            }
        }
        let in_port = pkt.ingress_port;
        let iq = self.queue_index(in_port, pkt.priority);
        if let Some(pfc) = self.pfc.as_mut() {
            pfc.ingress_bytes[iq] += size;
            let thr = pfc
                .cfg
                .threshold_bytes
                .or_else(|| self.buffer.threshold())
                .unwrap_or(u64::MAX);
            let refresh = SimTime(pfc.cfg.pause_duration_ns / 2);
            let due = match pfc.xoff_sent[iq] {
                None => true,
                Some(t) => now.saturating_sub(t) >= refresh,
            };
            if pfc.ingress_bytes[iq] > thr && due {
                pfc.xoff_sent[iq] = Some(now);
                self.counters.pfc_frames += 1;
                out.pfc_pause = Some((in_port, prio as u8));
            }
        }
        pkt.enqueue_time = now;
        self.ports[port as usize].data[prio].push_back(pkt);
        out
    }

    /// Pick the next packet for `port`: control first, then unpaused data
    /// priorities in order.
    pub fn dequeue(&mut self, now: SimTime, port: u16) -> Option<Dequeued> {
        let ep = &mut self.ports[port as usize];
        if let Some(pkt) = ep.control.pop_front() {
            return Some(Dequeued {
                pkt,
                flag_change: None,
                pfc_resume: None,
                egress_mirror: None,
            });
        }
        let prio = (0..self.n_prio).find(|&p| !ep.data[p].is_empty() && ep.paused_until[p] <= now)?;
        let mut pkt = ep.data[prio].pop_front().expect("non-empty");
        let size = pkt.size_bytes as u64;
        let before = ep.depth[prio];
        ep.depth[prio] -= size;
        let depth = ep.depth[prio];
        ep.snapshot[prio] = depth;

        // INT-style utilization: normalized queue plus decayed tx rate.
        let win = self.int_window.as_nanos().max(1) as f64;
        let dt = now.saturating_sub(ep.tx_last).as_nanos() as f64;
        ep.tx_decayed = ep.tx_decayed * (-dt / win).exp() + size as f64;
        ep.tx_last = now;
        let window_bytes = ep.speed_bps as f64 * win / 8e9;
        let util = (depth as f64 / window_bytes + ep.tx_decayed / window_bytes) as f32;
        pkt.int_util = pkt.int_util.max(util);

        let q = port as usize * self.n_prio + prio;
        self.buffer.remove(q, size);
        let mut flag_change = None;
        let mut egress_mirror = None;
        if let Some(sfc) = self.sfc.as_mut() {
            if let Some(v) = sfc.flags.observe(q, depth, sfc.cfg.q_th_bytes) {
                flag_change = Some((q, v));
            }
            if sfc.features.egress_trigger && before > sfc.cfg.q_th_bytes {
                if sfc.bloom.test_and_insert(&pkt.tuple) {
                    self.counters.bts_suppressed += 1;
                } else {
                    egress_mirror = Some(MirrorMeta {
                        queue: q,
                        port,
                        pause_hint: SimTime::ZERO,
                        from_cache: false,
                        data: pkt.clone(),
                    });
                }
            }
        }
        let mut pfc_resume = None;
        if let Some(pfc) = self.pfc.as_mut() {
            let iq = pkt.ingress_port as usize * self.n_prio + prio;
            pfc.ingress_bytes[iq] -= size;
            if pfc.xoff_sent[iq].is_some() {
                let thr = pfc
                    .cfg
                    .threshold_bytes
                    .or_else(|| self.buffer.threshold())
                    .unwrap_or(u64::MAX);
                let resume = (thr as f64 * pfc.cfg.resume_fraction) as u64;
                if pfc.ingress_bytes[iq] <= resume {
                    pfc.xoff_sent[iq] = None;
                    self.counters.pfc_frames += 1;
                    pfc_resume = Some((pkt.ingress_port, prio as u8));
                }
            }
        }
        Some(Dequeued {
            pkt,
            flag_change,
            pfc_resume,
            egress_mirror,
        })
    }

    pub fn pfc_pause_duration(&self) -> SimTime {
        SimTime(
            self.pfc
                .as_ref()
                .map_or(PfcConfig::default().pause_duration_ns, |p| p.cfg.pause_duration_ns),
        )
    }

    /// Apply a PFC frame received on `in_port` to the egress side of that
    /// port.
    pub fn on_pfc(&mut self, now: SimTime, in_port: u16, pkt: &Packet) {
        if pkt.kind != PacketKind::Pfc {
            return;
        }
        let Some(f) = pkt.pfc else { return };
        let prio = (f.priority as usize).min(self.n_prio - 1);
        self.ports[in_port as usize].pause(prio, now + f.pause);
    }

    pub fn apply_flag(&mut self, q: usize, v: bool) {
        if let Some(sfc) = self.sfc.as_mut() {
            sfc.flags.apply(q, v);
        }
    }

    pub fn bloom_reset(&mut self) {
        if let Some(sfc) = self.sfc.as_mut() {
            sfc.bloom.reset();
        }
    }
}
