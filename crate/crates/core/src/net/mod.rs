//! Topology, links, routing and the packet format.

mod packet;
mod topology;

pub use packet::*;
pub use topology::*;

use crate::engine::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

/// `ceil(bytes * 8 / speed)` in nanoseconds.
pub fn serialization_delay(bytes: u32, speed_bits_per_s: u64) -> SimTime {
    debug_assert!(speed_bits_per_s > 0);
    let bits = bytes as u128 * 8 * 1_000_000_000;
    SimTime(bits.div_ceil(speed_bits_per_s as u128) as u64)
}

/// Arrival time at the far end of `link` for a packet whose transmission
/// starts at `now`. `extra` carries the sending switch's pipeline latency.
pub fn arrival_time(now: SimTime, bytes: u32, link: &Link, extra: SimTime) -> SimTime {
    now + link.serialization(bytes) + link.propagation_delay + extra
}
