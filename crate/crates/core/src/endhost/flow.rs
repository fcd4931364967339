use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::cc::CcState;
use super::{HostConfig, LossRecovery, OnRampMode, PauseMerge};
use crate::engine::SimTime;
use crate::net::{AckFields, FiveTuple, FlowId, Ip, Packet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowClass {
    Background,
    Incast,
    Static,
}

impl FlowClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowClass::Background => "background",
            FlowClass::Incast => "incast",
            FlowClass::Static => "static",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowState {
    Idle,
    Active,
    Paused,
    Done,
}

/// Whether a flow may transmit right now.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Ready,
    /// Blocked by a timer (pause, hold or pacing) that ends at this time.
    Until(SimTime),
    /// Nothing to send until an acknowledgement arrives.
    Blocked,
}

#[derive(Debug, Clone, Default)]
pub struct FlowLog {
    pub sends: Vec<SimTime>,
    /// Enforced pause intervals `[start, end)`.
    pub pauses: Vec<(SimTime, SimTime)>,
    /// `(arrival, pause_us)` of every BTS.
    pub bts: Vec<(SimTime, u32)>,
}

#[derive(Debug, Clone)]
pub struct Flow {
    pub id: FlowId,
    pub src: Ip,
    pub dst: Ip,
    pub tuple: FiveTuple,
    pub priority: u8,
    pub size: u64,
    pub start: SimTime,
    pub class: FlowClass,
    pub base_rtt: SimTime,
    pub state: FlowState,

    snd_nxt: u64,
    max_sent: u64,
    snd_una: u64,
    sacked: BTreeMap<u64, u64>,
    retx: VecDeque<(u64, u64)>,
    retx_hw: u64,
    last_rewind: Option<(u64, SimTime)>,
    pub pause_end: SimTime,
    hold_until: SimTime,
    next_send: SimTime,
    pub cc: CcState,
    /// One-way delay target used when the OnRamp config has none.
    pub owd_target: SimTime,
    owd_smoothed: Option<f64>,
    last_progress: SimTime,
    srtt: Option<f64>,

    rcv_nxt: u64,
    rcv_ooo: BTreeMap<u64, u64>,

    pub first_send: Option<SimTime>,
    pub finish: Option<SimTime>,
    pub bytes_sent: u64,
    pub bytes_retx: u64,
    pub pause_total: SimTime,
    pub bts_received: u64,
    pub log: Option<FlowLog>,
}

/// Result of processing an acknowledgement at the sender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AckOutcome {
    pub progressed: bool,
    pub completed: bool,
}

impl Flow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: FlowId,
        tuple: FiveTuple,
        size: u64,
        start: SimTime,
        class: FlowClass,
        priority: u8,
        cc: CcState,
        base_rtt: SimTime,
        record: bool,
    ) -> Self {
        Self {
            id,
            src: tuple.src_ip,
            dst: tuple.dst_ip,
            tuple,
            priority,
            size,
            start,
            class,
            base_rtt,
            state: FlowState::Idle,
            snd_nxt: 0,
            max_sent: 0,
            snd_una: 0,
            sacked: BTreeMap::new(),
            retx: VecDeque::new(),
            retx_hw: 0,
            last_rewind: None,
            pause_end: SimTime::ZERO,
            hold_until: SimTime::ZERO,
            next_send: SimTime::ZERO,
            cc,
            owd_target: SimTime::ZERO,
            owd_smoothed: None,
            last_progress: start,
            srtt: None,
            rcv_nxt: 0,
            rcv_ooo: BTreeMap::new(),
            first_send: None,
            finish: None,
            bytes_sent: 0,
            bytes_retx: 0,
            pause_total: SimTime::ZERO,
            bts_received: 0,
            log: record.then(FlowLog::default),
        }
    }

    pub fn activate(&mut self, now: SimTime) {
        self.state = FlowState::Active;
        self.last_progress = now;
        self.next_send = now;
        if self.size == 0 {
            self.state = FlowState::Done;
            self.finish = Some(now);
        }
    }

    pub fn is_done(&self) -> bool {
        self.state == FlowState::Done
    }

    pub fn bytes_acked(&self) -> u64 {
        self.snd_una
    }

    pub fn bytes_received(&self) -> u64 {
        self.rcv_nxt
    }

    pub fn in_flight(&self) -> u64 {
        self.snd_nxt.saturating_sub(self.snd_una)
    }

    pub fn fct(&self) -> Option<SimTime> {
        self.finish.map(|f| f - self.start)
    }

    pub fn is_paused(&self, now: SimTime) -> bool {
        self.pause_end > now
    }

    fn has_new_data(&self) -> bool {
        self.snd_nxt < self.size
    }

    /// Can the flow transmit at `now`, given the NIC's pause for its priority?
    pub fn gate(&mut self, now: SimTime, pfc_until: SimTime) -> Gate {
        match self.state {
            FlowState::Done | FlowState::Idle => return Gate::Blocked,
            FlowState::Paused if self.pause_end <= now => self.state = FlowState::Active,
            _ => {}
        }
        let has_retx = !self.retx.is_empty();
        let window_ok = self.has_new_data() && self.in_flight() < self.cc.cwnd;
        if !has_retx && !window_ok {
            return Gate::Blocked;
        }
        let until = self
            .pause_end
            .max(self.hold_until)
            .max(self.next_send)
            .max(pfc_until);
        if until > now {
            Gate::Until(until)
        } else {
            Gate::Ready
        }
    }

    /// Build the next data packet. Caller must have seen `Gate::Ready`.
    pub fn emit(&mut self, now: SimTime, mtu: u32) -> Packet {
        let (seq, len) = if let Some(&(s, e)) = self.retx.front() {
            let len = (e - s).min(mtu as u64);
            if s + len >= e {
                self.retx.pop_front();
            } else {
                self.retx.front_mut().expect("non-empty").0 = s + len;
            }
            (s, len)
        } else {
            let s = self.snd_nxt;
            let len = (self.size - s).min(mtu as u64);
            self.snd_nxt = s + len;
            (s, len)
        };
        if seq < self.max_sent {
            self.bytes_retx += len;
        }
        self.max_sent = self.max_sent.max(seq + len);
        self.bytes_sent += len;
        self.first_send.get_or_insert(now);
        let mut pkt = Packet::data(self.id, self.tuple, seq, len as u32, self.priority);
        pkt.send_time = now;
        if self.cc.is_paced() {
            self.next_send = now.max(self.next_send) + self.cc.pacing_gap(len as u32);
        }
        if let Some(log) = self.log.as_mut() {
            log.sends.push(now);
        }
        pkt
    }

    /// Apply a BTS pause of `pause_us` microseconds.
    pub fn on_bts(&mut self, now: SimTime, pause_us: u32, cfg: &HostConfig) {
        self.bts_received += 1;
        if let Some(log) = self.log.as_mut() {
            log.bts.push((now, pause_us));
        }
        if pause_us == 0 || self.is_done() || !cfg.react_to_bts {
            return;
        }
        let pause = SimTime::from_micros(pause_us as u64).max(SimTime(cfg.min_pause_ns));
        let proposed = now + pause;
        let new_end = match cfg.pause_merge {
            PauseMerge::Overwrite => proposed,
            PauseMerge::Max => proposed.max(self.pause_end),
        };
        self.set_pause(now, new_end);
    }

    fn set_pause(&mut self, now: SimTime, new_end: SimTime) {
        let active = self.pause_end > now;
        if active {
            self.pause_total = self.pause_total - (self.pause_end - now);
        }
        self.pause_total += new_end.saturating_sub(now);
        if let Some(log) = self.log.as_mut() {
            if active {
                if let Some(last) = log.pauses.last_mut() {
                    last.1 = now;
                }
            }
            if new_end > now {
                log.pauses.push((now, new_end));
            }
        }
        self.pause_end = new_end;
        if new_end > now {
            self.state = FlowState::Paused;
        }
    }

    fn onramp_sample(&mut self, now: SimTime, owd: SimTime, cfg: &HostConfig) {
        let Some(o) = cfg.onramp.as_ref() else { return };
        let sample = owd.as_nanos() as f64;
        let owd_used = match o.mode {
            OnRampMode::StrawMan => sample,
            OnRampMode::Ewma => {
                let s = match self.owd_smoothed {
                    None => sample,
                    Some(prev) => prev + o.gain.as_f64() * (sample - prev),
                };
                self.owd_smoothed = Some(s);
                s
            }
        };
        let target = o.target_ns.unwrap_or(self.owd_target.as_nanos()) as f64;
        let excess = (owd_used - target).max(0.0);
        if excess > 0.0 {
            let hold = SimTime(excess.ceil() as u64).max(SimTime(cfg.min_pause_ns));
            self.hold_until = now + hold;
        }
    }

    /// Sender side: process an ACK.
    pub fn on_ack(&mut self, now: SimTime, ack: &AckFields, cfg: &HostConfig) -> AckOutcome {
        let mut out = AckOutcome::default();
        if self.is_done() {
            return out;
        }
        self.cc.on_ack(now, ack, self.snd_nxt, &cfg.cc);
        self.onramp_sample(now, ack.owd, cfg);
        let rtt = now.saturating_sub(ack.data_sent).as_nanos() as f64;
        self.srtt = Some(match self.srtt {
            None => rtt,
            Some(s) => 0.875 * s + 0.125 * rtt,
        });
        if ack.cum_ack > self.snd_una {
            self.snd_una = ack.cum_ack.min(self.size);
            self.snd_nxt = self.snd_nxt.max(self.snd_una);
            self.last_progress = now;
            out.progressed = true;
            let una = self.snd_una;
            self.sacked.retain(|_, e| *e > una);
            while let Some(&(s, e)) = self.retx.front() {
                if e <= una {
                    self.retx.pop_front();
                } else {
                    if s < una {
                        self.retx.front_mut().expect("non-empty").0 = una;
                    }
                    break;
                }
            }
        }
        match cfg.loss_recovery {
            LossRecovery::Selective => {
                if let Some((s, e)) = ack.sack {
                    if e > self.snd_una {
                        insert_range(&mut self.sacked, s.max(self.snd_una), e);
                        self.last_progress = now;
                    }
                }
                self.detect_holes(cfg);
            }
            LossRecovery::GoBackN => {
                if ack.nack {
                    let c = ack.cum_ack;
                    let rewound_recently = self
                        .last_rewind
                        .is_some_and(|(seq, t)| seq == c && now.saturating_sub(t) < self.base_rtt);
                    if !rewound_recently && c < self.snd_nxt {
                        self.snd_nxt = c;
                        self.last_rewind = Some((c, now));
                    }
                }
            }
        }
        if self.snd_una >= self.size {
            self.state = FlowState::Done;
            self.finish = Some(now);
            out.completed = true;
        }
        out
    }

    fn detect_holes(&mut self, cfg: &HostConfig) {
        let Some((&_, &top)) = self.sacked.iter().next_back() else {
            return;
        };
        let sacked_bytes: u64 = self.sacked.iter().map(|(s, e)| e - s).sum();
        if sacked_bytes < cfg.reorder_threshold as u64 * cfg.mtu as u64 {
            return;
        }
        let mut cursor = self.snd_una.max(self.retx_hw);
        for (&s, &e) in self.sacked.range(..top) {
            if e <= cursor {
                continue;
            }
            if s > cursor {
                self.retx.push_back((cursor, s));
            }
            cursor = cursor.max(e);
        }
        self.retx_hw = self.retx_hw.max(top);
    }

    /// End the flow with the bytes sent so far. Returns true if that
    /// completes it immediately.
    pub fn stop(&mut self, now: SimTime) -> bool {
        if self.is_done() {
            return false;
        }
        self.size = self.size.min(self.snd_nxt.max(self.snd_una));
        let size = self.size;
        self.retx.retain(|&(s, _)| s < size);
        for r in self.retx.iter_mut() {
            r.1 = r.1.min(size);
        }
        if self.snd_una >= self.size {
            self.state = FlowState::Done;
            self.finish = Some(now);
            return true;
        }
        false
    }

    /// Retransmission timeout. `rto` is the configured floor; it is widened
    /// to four smoothed RTTs so long queues do not cause spurious timeouts.
    pub fn rto(&self, rto: SimTime) -> SimTime {
        let s = self.srtt.unwrap_or(0.0) * 4.0;
        rto.max(SimTime(s as u64))
    }

    pub fn last_progress(&self) -> SimTime {
        self.last_progress
    }

    /// Fire the retransmission timer. Returns true if data was rewound.
    pub fn on_timeout(&mut self, now: SimTime, cfg: &HostConfig) -> bool {
        if self.is_done() || self.in_flight() == 0 {
            return false;
        }
        self.last_progress = now;
        match cfg.loss_recovery {
            LossRecovery::GoBackN => {
                self.snd_nxt = self.snd_una;
            }
            LossRecovery::Selective => {
                self.retx.clear();
                let mut cursor = self.snd_una;
                for (&s, &e) in &self.sacked {
                    if s > cursor {
                        self.retx.push_back((cursor, s));
                    }
                    cursor = cursor.max(e);
                }
                if cursor < self.snd_nxt {
                    self.retx.push_back((cursor, self.snd_nxt));
                }
                self.retx_hw = self.snd_nxt;
            }
        }
        true
    }

    /// Receiver side: absorb a data packet and build its acknowledgement.
    pub fn on_data(&mut self, now: SimTime, pkt: &Packet, recovery: LossRecovery) -> Packet {
        let s = pkt.seq_bytes;
        let e = s + pkt.size_bytes as u64;
        let mut sack = None;
        let mut nack = false;
        if s <= self.rcv_nxt {
            self.rcv_nxt = self.rcv_nxt.max(e);
            while let Some((&os, &oe)) = self.rcv_ooo.iter().next() {
                if os > self.rcv_nxt {
                    break;
                }
                self.rcv_ooo.remove(&os);
                self.rcv_nxt = self.rcv_nxt.max(oe);
            }
        } else {
            match recovery {
                LossRecovery::Selective => {
                    insert_range(&mut self.rcv_ooo, s, e);
                    sack = Some((s, e));
                }
                LossRecovery::GoBackN => nack = true,
            }
        }
        let mut ack = Packet::ack(
            pkt,
            AckFields {
                cum_ack: self.rcv_nxt,
                sack,
                nack,
                ecn_echo: pkt.ecn_marked,
                owd: now.saturating_sub(pkt.send_time),
                data_sent: pkt.send_time,
                int_util: pkt.int_util,
            },
        );
        ack.send_time = now;
        ack
    }
}

/// Insert `[s, e)` into a map of disjoint ranges, merging overlaps.
fn insert_range(map: &mut BTreeMap<u64, u64>, mut s: u64, mut e: u64) {
    if s >= e {
        return;
    }
    if let Some((&ps, &pe)) = map.range(..=s).next_back() {
        if pe >= s {
            s = ps;
            e = e.max(pe);
            map.remove(&ps);
        }
    }
    let overl: Vec<u64> = map.range(s..=e).map(|(&k, _)| k).collect();
    for k in overl {
        let v = map.remove(&k).expect("present");
        e = e.max(v);
    }
    map.insert(s, e);
}

#[cfg(test)]
mod tests {
    use super::super::cc::CcConfig;
    use super::super::OnRampConfig;
    use super::*;
    use crate::switchfab::Ratio;

    const R: u64 = 100_000_000_000;

    fn cfg() -> HostConfig {
        HostConfig::default()
    }

    fn flow(size: u64, c: &HostConfig) -> Flow {
        let cc = CcState::new(&c.cc, R, SimTime::from_micros(10), SimTime::ZERO);
        let mut f = Flow::new(
            0,
            FiveTuple::new(0, 1, 100, 4791),
            size,
            SimTime::ZERO,
            FlowClass::Static,
            0,
            cc,
            SimTime::from_micros(10),
            true,
        );
        f.activate(SimTime::ZERO);
        f
    }

    fn ack_for(f: &mut Flow, pkt: &Packet) -> AckFields {
        f.on_data(SimTime(1), pkt, LossRecovery::Selective).ack.unwrap()
    }

    #[test]
    fn remainder_packet() {
        let c = cfg();
        let mut f = flow(4001, &c);
        assert_eq!(f.emit(SimTime::ZERO, 4000).size_bytes, 4000);
        assert_eq!(f.emit(SimTime::ZERO, 4000).size_bytes, 1);
        assert_eq!(f.gate(SimTime::ZERO, SimTime::ZERO), Gate::Blocked);
    }

    #[test]
    fn window_stalls_after_one_bdp() {
        let mut c = cfg();
        c.cc = CcConfig {
            kind: super::super::cc::CcKind::WindowOnly,
            ..CcConfig::default()
        };
        let mut f = flow(1_000_000, &c);
        let mut sent = 0;
        while f.gate(SimTime::ZERO, SimTime::ZERO) == Gate::Ready {
            sent += f.emit(SimTime::ZERO, 4000).size_bytes as u64;
        }
        assert_eq!(sent, 128_000);
        assert_eq!(f.gate(SimTime::ZERO, SimTime::ZERO), Gate::Blocked);
    }

    #[test]
    fn bts_overwrites_pause_end() {
        let c = cfg();
        let mut f = flow(1_000_000, &c);
        f.on_bts(SimTime::from_micros(50), 10, &c);
        assert_eq!(
            f.gate(SimTime::from_micros(51), SimTime::ZERO),
            Gate::Until(SimTime::from_micros(60))
        );
        f.on_bts(SimTime::from_micros(55), 10, &c);
        assert_eq!(f.pause_end, SimTime::from_micros(65));
        f.on_bts(SimTime::from_micros(56), 0, &c);
        assert_eq!(f.pause_end, SimTime::from_micros(65));
        assert_eq!(f.pause_total, SimTime::from_micros(15));
        // Overwrite may also shorten; the enforced log reflects it.
        f.on_bts(SimTime::from_micros(57), 2, &c);
        assert_eq!(f.pause_end, SimTime::from_micros(59));
        let log = f.log.as_ref().unwrap();
        assert_eq!(
            log.pauses,
            vec![
                (SimTime::from_micros(50), SimTime::from_micros(55)),
                (SimTime::from_micros(55), SimTime::from_micros(57)),
                (SimTime::from_micros(57), SimTime::from_micros(59)),
            ]
        );
        assert_eq!(f.pause_total, SimTime::from_micros(9));
        assert_eq!(f.gate(SimTime::from_micros(59), SimTime::ZERO), Gate::Ready);
    }

    #[test]
    fn max_merge_mode_only_extends() {
        let mut c = cfg();
        c.pause_merge = PauseMerge::Max;
        let mut f = flow(1_000_000, &c);
        f.on_bts(SimTime::from_micros(50), 10, &c);
        f.on_bts(SimTime::from_micros(52), 2, &c);
        assert_eq!(f.pause_end, SimTime::from_micros(60));
    }

    #[test]
    fn pfc_pause_blocks() {
        let c = cfg();
        let mut f = flow(10_000, &c);
        assert_eq!(f.gate(SimTime::ZERO, SimTime(500)), Gate::Until(SimTime(500)));
    }

    #[test]
    fn receiver_acks_cumulative_and_selective() {
        let c = cfg();
        let mut f = flow(12_000, &c);
        let p0 = f.emit(SimTime::ZERO, 4000);
        let p1 = f.emit(SimTime::ZERO, 4000);
        let mut p2 = f.emit(SimTime::ZERO, 4000);
        p2.ecn_marked = true;
        let a0 = ack_for(&mut f, &p0);
        assert_eq!(a0.cum_ack, 4000);
        assert_eq!(a0.sack, None);
        let a2 = ack_for(&mut f, &p2);
        assert_eq!(a2.cum_ack, 4000);
        assert_eq!(a2.sack, Some((8000, 12000)));
        assert!(a2.ecn_echo);
        let a1 = ack_for(&mut f, &p1);
        assert_eq!(a1.cum_ack, 12000);
    }

    #[test]
    fn selective_retransmits_hole_after_reorder_threshold() {
        let c = cfg();
        let mut f = flow(40_000, &c);
        let pkts: Vec<Packet> = (0..10).map(|_| f.emit(SimTime::ZERO, 4000)).collect();
        // Packet 1 (4k-8k) lost.
        let mut acks = Vec::new();
        for (i, p) in pkts.iter().enumerate() {
            if i != 1 {
                acks.push(ack_for(&mut f, p));
            }
        }
        for (i, a) in acks.iter().enumerate() {
            f.on_ack(SimTime(10 + i as u64), a, &c);
        }
        assert_eq!(f.bytes_acked(), 4000);
        assert_eq!(f.gate(SimTime(100), SimTime::ZERO), Gate::Ready);
        let r = f.emit(SimTime(100), 4000);
        assert_eq!((r.seq_bytes, r.size_bytes), (4000, 4000));
        assert_eq!(f.bytes_retx, 4000);
        let a = ack_for(&mut f, &r);
        assert_eq!(a.cum_ack, 40_000);
        assert!(f.on_ack(SimTime(200), &a, &c).completed);
        assert_eq!(f.bytes_sent, 44_000);
    }

    #[test]
    fn go_back_n_rewinds_on_nack() {
        let mut c = cfg();
        c.loss_recovery = LossRecovery::GoBackN;
        let mut f = flow(16_000, &c);
        let pkts: Vec<Packet> = (0..4).map(|_| f.emit(SimTime::ZERO, 4000)).collect();
        let a0 = f.on_data(SimTime(1), &pkts[0], LossRecovery::GoBackN).ack.unwrap();
        let a2 = f.on_data(SimTime(1), &pkts[2], LossRecovery::GoBackN).ack.unwrap();
        assert!(a2.nack);
        f.on_ack(SimTime(5), &a0, &c);
        f.on_ack(SimTime(6), &a2, &c);
        let r = f.emit(SimTime(7), 4000);
        assert_eq!(r.seq_bytes, 4000);
        assert_eq!(f.bytes_retx, 4000);
    }

    #[test]
    fn timeout_requeues_unacked() {
        let c = cfg();
        let mut f = flow(8_000, &c);
        f.emit(SimTime::ZERO, 4000);
        f.emit(SimTime::ZERO, 4000);
        assert!(f.on_timeout(SimTime(1_000_000), &c));
        let r = f.emit(SimTime(1_000_000), 4000);
        assert_eq!(r.seq_bytes, 0);
    }

    #[test]
    fn onramp_straw_man_holds_for_excess() {
        let mut c = cfg();
        c.onramp = Some(OnRampConfig {
            mode: OnRampMode::StrawMan,
            gain: Ratio::new(1, 8),
            target_ns: Some(5_000),
        });
        let mut f = flow(1_000_000, &c);
        let mut a = AckFields {
            cum_ack: 0,
            sack: None,
            nack: false,
            ecn_echo: false,
            owd: SimTime(5_000),
            data_sent: SimTime::ZERO,
            int_util: 0.0,
        };
        f.on_ack(SimTime(100), &a, &c);
        assert_eq!(f.gate(SimTime(100), SimTime::ZERO), Gate::Ready);
        a.owd = SimTime(35_000);
        f.on_ack(SimTime(200), &a, &c);
        assert_eq!(f.gate(SimTime(200), SimTime::ZERO), Gate::Until(SimTime(30_200)));
    }

    #[test]
    fn insert_range_merges() {
        let mut m = BTreeMap::new();
        insert_range(&mut m, 10, 20);
        insert_range(&mut m, 30, 40);
        insert_range(&mut m, 15, 32);
        assert_eq!(m.into_iter().collect::<Vec<_>>(), vec![(10, 40)]);
    }
}
