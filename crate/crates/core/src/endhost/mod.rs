//! Hosts: flow state machines, NIC scheduling and flow-control reactors.

pub mod cc;
pub mod flow;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::net::{FlowId, Packet};
use crate::switchfab::Ratio;

pub use cc::{CcConfig, CcKind, CcState};
pub use flow::{AckOutcome, Flow, FlowClass, FlowLog, FlowState, Gate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossRecovery {
    #[default]
    Selective,
    GoBackN,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PauseMerge {
    /// A new BTS replaces the pause end.
    #[default]
    Overwrite,
    /// A new BTS can only extend the pause.
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OnRampMode {
    #[default]
    StrawMan,
    Ewma,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OnRampConfig {
    pub mode: OnRampMode,
    /// EWMA gain on one-way-delay samples.
    pub gain: Ratio,
    /// One-way delay target. `None` uses the base one-way delay plus the
    /// SFC target depth drained at line rate.
    pub target_ns: Option<u64>,
}

impl Default for OnRampConfig {
    fn default() -> Self {
        Self {
            mode: OnRampMode::StrawMan,
            gain: Ratio::new(1, 8),
            target_ns: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct HostConfig {
    pub mtu: u32,
    pub cc: CcConfig,
    pub loss_recovery: LossRecovery,
    /// Out-of-order packets tolerated before a hole is retransmitted.
    pub reorder_threshold: u32,
    /// Retransmission timeout as a multiple of the base RTT.
    pub rto_multiplier: u32,
    pub react_to_bts: bool,
    pub pause_merge: PauseMerge,
    /// Lower bound on the pause applied for a non-zero BTS or OnRamp hold.
    pub min_pause_ns: u64,
    pub onramp: Option<OnRampConfig>,
}

impl Default for HostConfig {
    fn default() -> Self {
        Self {
            mtu: 4000,
            cc: CcConfig::default(),
            loss_recovery: LossRecovery::Selective,
            reorder_threshold: 3,
            rto_multiplier: 10,
            react_to_bts: true,
            pause_merge: PauseMerge::Overwrite,
            min_pause_ns: 0,
            onramp: None,
        }
    }
}

/// Outcome of asking the NIC for work.
#[derive(Debug, Clone, PartialEq)]
pub enum Pick {
    Send(Packet),
    /// Nothing sendable before this time.
    Wait(SimTime),
    Idle,
}

/// Host NIC: one egress port with a strict-priority control queue and a
/// round-robin scheduler over active flows.
#[derive(Debug, Clone, Default)]
pub struct Nic {
    pub busy: bool,
    control: VecDeque<Packet>,
    pfc_paused_until: Vec<SimTime>,
    flows: Vec<FlowId>,
    cursor: usize,
    /// Earliest pending wakeup, to avoid duplicate timer events.
    pub wakeup: Option<SimTime>,
    pub pfc_frames_received: u64,
}

impl Nic {
    pub fn new(priorities: usize) -> Self {
        Self {
            pfc_paused_until: vec![SimTime::ZERO; priorities.max(1)],
            ..Self::default()
        }
    }

    pub fn push_control(&mut self, pkt: Packet) {
        self.control.push_back(pkt);
    }

    pub fn add_flow(&mut self, id: FlowId) {
        self.flows.push(id);
    }

    pub fn active_flows(&self) -> &[FlowId] {
        &self.flows
    }

    fn prio_slot(&self, prio: u8) -> usize {
        (prio as usize).min(self.pfc_paused_until.len() - 1)
    }

    pub fn pfc_until(&self, prio: u8) -> SimTime {
        self.pfc_paused_until[self.prio_slot(prio)]
    }

    /// Apply a PFC frame: pause `prio` for `duration`; zero resumes.
    pub fn on_pfc(&mut self, now: SimTime, prio: u8, duration: SimTime) {
        let i = self.prio_slot(prio);
        self.pfc_paused_until[i] = now + duration;
        self.pfc_frames_received += 1;
    }

    /// Choose the next packet: control first, then the next ready flow in
    /// round-robin order.
    pub fn pick(&mut self, now: SimTime, flows: &mut [Flow], mtu: u32) -> Pick {
        if let Some(p) = self.control.pop_front() {
            return Pick::Send(p);
        }
        self.flows.retain(|&id| !flows[id as usize].is_done());
        let n = self.flows.len();
        let mut earliest: Option<SimTime> = None;
        for k in 0..n {
            let i = (self.cursor + k) % n;
            let f = &mut flows[self.flows[i] as usize];
            let pfc = self.pfc_paused_until[(f.priority as usize).min(self.pfc_paused_until.len() - 1)];
            match f.gate(now, pfc) {
                Gate::Ready => {
                    self.cursor = (i + 1) % n;
                    return Pick::Send(f.emit(now, mtu));
                }
                Gate::Until(t) => earliest = Some(earliest.map_or(t, |e| e.min(t))),
                Gate::Blocked => {}
            }
        }
        match earliest {
            Some(t) => Pick::Wait(t),
            None => Pick::Idle,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::FiveTuple;

    const R: u64 = 100_000_000_000;

    fn flows(n: u32, prio: u8) -> Vec<Flow> {
        let cfg = HostConfig::default();
        (0..n)
            .map(|i| {
                let cc = CcState::new(&cfg.cc, R, SimTime::from_micros(10), SimTime::ZERO);
                let mut f = Flow::new(
                    i,
                    FiveTuple::new(0, 1, 100 + i as u16, 4791),
                    8000,
                    SimTime::ZERO,
                    FlowClass::Static,
                    prio,
                    cc,
                    SimTime::from_micros(10),
                    false,
                );
                f.activate(SimTime::ZERO);
                f
            })
            .collect()
    }

    #[test]
    fn round_robin_between_flows() {
        let mut fs = flows(2, 0);
        let mut nic = Nic::new(1);
        nic.add_flow(0);
        nic.add_flow(1);
        let order: Vec<u32> = (0..4)
            .map(|_| match nic.pick(SimTime::ZERO, &mut fs, 4000) {
                Pick::Send(p) => p.flow_id,
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(order, vec![0, 1, 0, 1]);
        assert_eq!(nic.pick(SimTime::ZERO, &mut fs, 4000), Pick::Idle);
    }

    #[test]
    fn control_has_strict_priority() {
        let mut fs = flows(1, 0);
        let mut nic = Nic::new(1);
        nic.add_flow(0);
        let ack = Packet::pfc(0, SimTime::ZERO);
        nic.push_control(ack.clone());
        assert_eq!(nic.pick(SimTime::ZERO, &mut fs, 4000), Pick::Send(ack));
    }

    #[test]
    fn pfc_pauses_every_flow_of_the_priority() {
        let mut fs = flows(2, 0);
        let mut nic = Nic::new(2);
        nic.add_flow(0);
        nic.add_flow(1);
        nic.on_pfc(SimTime::ZERO, 0, SimTime(700));
        assert_eq!(nic.pick(SimTime::ZERO, &mut fs, 4000), Pick::Wait(SimTime(700)));
        // Early resume.
        nic.on_pfc(SimTime(100), 0, SimTime::ZERO);
        assert!(matches!(nic.pick(SimTime(100), &mut fs, 4000), Pick::Send(_)));
    }

    #[test]
    fn other_priority_keeps_flowing() {
        let mut fs = flows(2, 0);
        fs[1].priority = 1;
        let mut nic = Nic::new(2);
        nic.add_flow(0);
        nic.add_flow(1);
        nic.on_pfc(SimTime::ZERO, 0, SimTime(700));
        match nic.pick(SimTime::ZERO, &mut fs, 4000) {
            Pick::Send(p) => assert_eq!(p.flow_id, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn paused_flow_waits_for_pause_end() {
        let mut fs = flows(1, 0);
        let cfg = HostConfig::default();
        fs[0].on_bts(SimTime::ZERO, 10, &cfg);
        let mut nic = Nic::new(1);
        nic.add_flow(0);
        assert_eq!(nic.pick(SimTime::ZERO, &mut fs, 4000), Pick::Wait(SimTime::from_micros(10)));
        assert!(matches!(nic.pick(SimTime::from_micros(10), &mut fs, 4000), Pick::Send(_)));
    }
}
