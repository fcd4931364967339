use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::engine::SimTime;

/// Host address. Hosts are numbered from zero and the address equals the
/// host's node id.
pub type Ip = u32;
pub type FlowId = u32;

/// Fixed wire size of ACK, BTS and PFC frames.
pub const CONTROL_PACKET_BYTES: u32 = 64;
/// Destination UDP port stamped on BTS encapsulation headers.
pub const BTS_UDP_PORT: u16 = 0x5FC0;
pub const ROCE_UDP_PORT: u16 = 4791;
pub const PROTO_UDP: u8 = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FiveTuple {
    pub src_ip: Ip,
    pub dst_ip: Ip,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl FiveTuple {
    pub fn new(src_ip: Ip, dst_ip: Ip, src_port: u16, dst_port: u16) -> Self {
        Self {
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            proto: PROTO_UDP,
        }
    }

    pub fn reversed(&self) -> Self {
        Self {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            proto: self.proto,
        }
    }

    /// 64-bit hash of the tuple mixed with `salt`. Deterministic across runs.
    pub fn hash_with(&self, salt: u64) -> u64 {
        let mut h = DefaultHasher::new();
        salt.hash(&mut h);
        self.hash(&mut h);
        h.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Data,
    Ack,
    Bts,
    Pfc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BtsFields {
    /// Pause duration in whole microseconds.
    pub pause_time_us: u32,
    /// Congestion point is a server-facing ToR port.
    pub cacheable: bool,
    /// Tuple of the data packet that triggered this BTS.
    pub inner: FiveTuple,
    pub dscp: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PfcFields {
    pub priority: u8,
    /// Pause duration; zero means resume.
    pub pause: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AckFields {
    /// Next expected byte.
    pub cum_ack: u64,
    /// Most recently received out-of-order range `[start, end)`.
    pub sack: Option<(u64, u64)>,
    pub nack: bool,
    pub ecn_echo: bool,
    /// One-way delay of the acknowledged data packet.
    pub owd: SimTime,
    /// Send time of the acknowledged data packet.
    pub data_sent: SimTime,
    pub int_util: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub kind: PacketKind,
    pub flow_id: FlowId,
    pub tuple: FiveTuple,
    /// Byte offset of the first payload byte (data) within the flow.
    pub seq_bytes: u64,
    pub size_bytes: u32,
    pub priority: u8,
    pub dscp: u8,
    pub ecn_marked: bool,
    /// Max utilization stamped by switches (INT-style telemetry).
    pub int_util: f32,
    pub send_time: SimTime,
    pub enqueue_time: SimTime,
    /// Port the packet entered the current switch on.
    pub ingress_port: u16,
    pub bts: Option<BtsFields>,
    pub pfc: Option<PfcFields>,
    pub ack: Option<AckFields>,
}

impl Packet {
    pub fn data(flow_id: FlowId, tuple: FiveTuple, seq: u64, size: u32, priority: u8) -> Self {
        Self {
            kind: PacketKind::Data,
            flow_id,
            tuple,
            seq_bytes: seq,
            size_bytes: size,
            priority,
            dscp: priority,
            ecn_marked: false,
            int_util: 0.0,
            send_time: SimTime::ZERO,
            enqueue_time: SimTime::ZERO,
            ingress_port: 0,
            bts: None,
            pfc: None,
            ack: None,
        }
    }

    pub fn ack(data: &Packet, fields: AckFields) -> Self {
        Self {
            kind: PacketKind::Ack,
            flow_id: data.flow_id,
            tuple: data.tuple.reversed(),
            seq_bytes: data.seq_bytes,
            size_bytes: CONTROL_PACKET_BYTES,
            priority: data.priority,
            dscp: data.dscp,
            ecn_marked: false,
            int_util: 0.0,
            send_time: SimTime::ZERO,
            enqueue_time: SimTime::ZERO,
            ingress_port: 0,
            bts: None,
            pfc: None,
            ack: Some(fields),
        }
    }

    /// Trimmed, address-swapped copy of `data` carrying a pause time.
    pub fn bts(data: &Packet, pause_time_us: u32, cacheable: bool) -> Self {
        let tuple = FiveTuple {
            src_ip: data.tuple.dst_ip,
            dst_ip: data.tuple.src_ip,
            src_port: data.tuple.src_port,
            dst_port: BTS_UDP_PORT,
            proto: PROTO_UDP,
        };
        Self {
            kind: PacketKind::Bts,
            flow_id: data.flow_id,
            tuple,
            seq_bytes: data.seq_bytes,
            size_bytes: CONTROL_PACKET_BYTES,
            priority: data.priority,
            dscp: data.dscp,
            ecn_marked: false,
            int_util: 0.0,
            send_time: SimTime::ZERO,
            enqueue_time: SimTime::ZERO,
            ingress_port: 0,
            bts: Some(BtsFields {
                pause_time_us,
                cacheable,
                inner: data.tuple,
                dscp: data.dscp,
            }),
            pfc: None,
            ack: None,
        }
    }

    /// Link-local PFC frame. `src_ip`/`dst_ip` are unused for forwarding.
    pub fn pfc(priority: u8, pause: SimTime) -> Self {
        Self {
            kind: PacketKind::Pfc,
            flow_id: 0,
            tuple: FiveTuple::new(0, 0, 0, 0),
            seq_bytes: 0,
            size_bytes: CONTROL_PACKET_BYTES,
            priority,
            dscp: priority,
            ecn_marked: false,
            int_util: 0.0,
            send_time: SimTime::ZERO,
            enqueue_time: SimTime::ZERO,
            ingress_port: 0,
            bts: None,
            pfc: Some(PfcFields { priority, pause }),
            ack: None,
        }
    }

    pub fn is_data(&self) -> bool {
        self.kind == PacketKind::Data
    }

    pub fn is_control(&self) -> bool {
        self.kind != PacketKind::Data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bts_swaps_addresses_and_is_trimmed() {
        let t = FiveTuple::new(3, 9, 1000, ROCE_UDP_PORT);
        let d = Packet::data(1, t, 8000, 4000, 0);
        let b = Packet::bts(&d, 10, true);
        assert_eq!(b.tuple.src_ip, 9);
        assert_eq!(b.tuple.dst_ip, 3);
        assert_eq!(b.size_bytes, CONTROL_PACKET_BYTES);
        assert_eq!(b.bts.unwrap().inner, t);
        assert_eq!(Packet::pfc(0, SimTime::ZERO).size_bytes, CONTROL_PACKET_BYTES);
    }

    #[test]
    fn tuple_hash_is_stable() {
        let t = FiveTuple::new(1, 2, 3, 4);
        assert_eq!(t.hash_with(5), t.hash_with(5));
        assert_ne!(t.hash_with(5), t.hash_with(6));
        assert_eq!(t.reversed().reversed(), t);
    }
}
