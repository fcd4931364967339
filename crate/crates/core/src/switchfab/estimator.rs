use std::collections::HashMap;

use crate::engine::SimTime;
use crate::net::Ip;

/// Low-pass byte counter per provisioned destination.
///
/// The counter decays as `X <- X * exp(-dt / tau) + bytes`, so a steady rate
/// `r` settles at `X = r * tau`: the bytes of one `tau` window.
#[derive(Debug, Clone)]
pub struct RateEstimator {
    tau: SimTime,
    entries: HashMap<Ip, Entry>,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    bytes: f64,
    last_update: SimTime,
}

impl RateEstimator {
    pub fn new(tau: SimTime, destinations: impl IntoIterator<Item = Ip>) -> Self {
        let entries = destinations
            .into_iter()
            .map(|d| {
                (
                    d,
                    Entry {
                        bytes: 0.0,
                        last_update: SimTime::ZERO,
                    },
                )
            })
            .collect();
        Self { tau, entries }
    }

    pub fn tau(&self) -> SimTime {
        self.tau
    }

    pub fn is_provisioned(&self, dst: Ip) -> bool {
        self.entries.contains_key(&dst)
    }

    fn decay(&self, e: &Entry, now: SimTime) -> f64 {
        let dt = now.saturating_sub(e.last_update).as_nanos() as f64;
        e.bytes * (-dt / self.tau.as_nanos() as f64).exp()
    }

    /// Account `bytes` towards `dst`. Unprovisioned destinations are ignored.
    pub fn observe(&mut self, dst: Ip, bytes: u32, now: SimTime) {
        let tau = self.tau.as_nanos() as f64;
        if let Some(e) = self.entries.get_mut(&dst) {
            let dt = now.saturating_sub(e.last_update).as_nanos() as f64;
            e.bytes = e.bytes * (-dt / tau).exp() + bytes as f64;
            e.last_update = now;
        }
    }

    /// Decayed byte counter at `now`.
    pub fn bytes(&self, dst: Ip, now: SimTime) -> f64 {
        self.entries.get(&dst).map_or(0.0, |e| self.decay(e, now))
    }

    /// Remote queue estimate `max(0, X - tau * R)` in bytes.
    pub fn queue_estimate(&self, dst: Ip, now: SimTime, port_speed_bps: u64) -> u64 {
        let drained = self.tau.as_nanos() as f64 * port_speed_bps as f64 / 8e9;
        (self.bytes(dst, now) - drained).max(0.0) as u64
    }

    /// Time to drain the estimated remote queue at `port_speed_bps`.
    pub fn local_estimate(&self, dst: Ip, now: SimTime, port_speed_bps: u64) -> SimTime {
        let q = self.queue_estimate(dst, now, port_speed_bps);
        SimTime((q as u128 * 8_000_000_000 / port_speed_bps as u128) as u64)
    }
}
