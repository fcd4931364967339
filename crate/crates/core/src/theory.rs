//! Closed-form worst-case buffer bounds for a single bottleneck.
//!
//! Times are microseconds, rates bits per second, buffers bytes. Control
//! packets are assumed to have zero serialization delay.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryInputs {
    /// Bottleneck rate.
    pub r_bps: f64,
    /// Sender to bottleneck switch propagation.
    pub t_a_us: f64,
    /// Bottleneck switch to receiver propagation.
    pub t_b_us: f64,
    /// Sender to its ToR propagation.
    pub t_tor_us: f64,
    /// MTU serialization at `r_bps`.
    pub t_s_us: f64,
    /// Packets sent before the first congestion notification.
    pub k: u32,
    /// Incast degree.
    pub n: u32,
    /// Incast inter-arrival as a multiple of the RTT.
    pub m: f64,
}

impl TheoryInputs {
    /// 100G, 4us/1us delays, 4000B MTU, k = 26.
    pub fn appendix() -> Self {
        Self {
            r_bps: 100e9,
            t_a_us: 4.0,
            t_b_us: 1.0,
            t_tor_us: 1.0,
            t_s_us: 0.32,
            k: 26,
            n: 40,
            m: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let times = [self.t_a_us, self.t_b_us, self.t_tor_us, self.t_s_us, self.m];
        if self.r_bps <= 0.0 {
            return Err("rate must be positive".into());
        }
        if times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err("delays and m must be finite and non-negative".into());
        }
        if self.t_tor_us > self.t_a_us {
            return Err("sender-ToR delay cannot exceed sender-bottleneck delay".into());
        }
        Ok(())
    }

    pub fn rtt_us(&self) -> f64 {
        2.0 * self.t_a_us + 2.0 * self.t_b_us + 2.0 * self.t_s_us
    }

    /// Feedback loop delay `T_F`.
    pub fn t_f_us(&self) -> f64 {
        2.0 * self.t_a_us + self.t_s_us
    }

    pub fn bytes(&self, us: f64) -> f64 {
        self.r_bps * us * 1e-6 / 8.0
    }
}

/// Buffer needed when congestion is signaled end-to-end through ACKs.
pub fn b_ack(i: &TheoryInputs) -> f64 {
    let k = i.k as f64;
    i.bytes(2.0 * i.t_a_us + 2.0 * k * i.t_s_us + 2.0 * i.t_b_us)
}

/// Buffer needed with back-to-sender signaling.
pub fn b_bts(i: &TheoryInputs) -> f64 {
    i.bytes(2.0 * i.t_a_us + i.k as f64 * i.t_s_us)
}

/// Perfectly synchronized incast of `n` line-rate senders.
pub fn b_incast(i: &TheoryInputs) -> f64 {
    i.n as f64 * i.bytes(i.t_f_us())
}

/// Staggered arrivals stay within `b_bts` iff `m * RTT > T_F + T_P`.
pub fn async_incast_ok(i: &TheoryInputs, t_p_us: f64) -> bool {
    i.m * i.rtt_us() > i.t_f_us() + t_p_us
}

/// Same condition stated on the inter-arrival time: it must exceed
/// `b_bts / R`.
pub fn async_interarrival_ok(i: &TheoryInputs, interarrival_us: f64) -> bool {
    interarrival_us > b_bts(i) / i.bytes(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CacheBounds {
    /// Window after the first BTS during which later senders hit the cache.
    pub t_cache_us: f64,
    /// Feedback delay on a miss.
    pub t_cache_miss_us: f64,
    pub b_cache_hit: f64,
    /// `T_A / T_ToR`.
    pub reduction: f64,
}

pub fn cache_bounds(i: &TheoryInputs) -> CacheBounds {
    CacheBounds {
        t_cache_us: i.t_f_us() - i.t_tor_us,
        t_cache_miss_us: i.t_f_us(),
        b_cache_hit: i.bytes(2.0 * i.t_tor_us + i.t_s_us),
        reduction: if i.t_tor_us > 0.0 {
            i.t_a_us / i.t_tor_us
        } else {
            f64::INFINITY
        },
    }
}

/// Packets in flight before the first notification: target depth in MTUs.
pub fn k_from_target(q_tg_bytes: f64, mtu: u32) -> u32 {
    (q_tg_bytes / mtu as f64).round() as u32
}

/// Human-readable table of every bound.
pub fn render_table(i: &TheoryInputs) -> String {
    let ack = b_ack(i);
    let bts = b_bts(i);
    let per_us = i.bytes(1.0);
    let c = cache_bounds(i);
    let mut s = String::new();
    let mut row = |name: &str, v: String| {
        let _ = writeln!(s, "{name:<28} {v}");
    };
    row("R (Gbps)", format!("{:.1}", i.r_bps / 1e9));
    row("T_A / T_B / T_ToR (us)", format!("{} / {} / {}", i.t_a_us, i.t_b_us, i.t_tor_us));
    row("T_S (us)", format!("{:.3}", i.t_s_us));
    row("k / N / m", format!("{} / {} / {}", i.k, i.n, i.m));
    row("RTT (us)", format!("{:.2}", i.rtt_us()));
    row("T_F (us)", format!("{:.2}", i.t_f_us()));
    row("B_ack (KB)", format!("{:.1}", ack / 1e3));
    row("B_bts (KB)", format!("{:.1}", bts / 1e3));
    row("B_bts / R (us)", format!("{:.2}", bts / per_us));
    row(
        "B_ack - B_bts",
        format!(
            "{:.1} KB, {:.2} us, {:.1}%",
            (ack - bts) / 1e3,
            (ack - bts) / per_us,
            100.0 * (ack - bts) / ack
        ),
    );
    row("B_incast (MB)", format!("{:.3}", b_incast(i) / 1e6));
    row(
        "async incast (m*RTT > B_bts/R)",
        format!("{}", async_interarrival_ok(i, i.m * i.rtt_us())),
    );
    row("T_cache (us)", format!("{:.2}", c.t_cache_us));
    row("B_cache_hit (KB)", format!("{:.1}", c.b_cache_hit / 1e3));
    row("T_A / T_ToR", format!("{:.2}", c.reduction));
    s
}
