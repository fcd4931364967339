//! Source flow control dataplane pieces shared by the switch model.

use serde::{Deserialize, Serialize};

use super::bloom::AuditedBloom;
use super::cache::{CacheKey, PauseCache};
use super::estimator::RateEstimator;
use crate::engine::SimTime;
use crate::net::{Ip, Layer, Packet};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SfcConfig {
    /// Trigger threshold `Q_Th`.
    pub q_th_bytes: u64,
    /// Target depth `Q_Tg`.
    pub q_tg_bytes: u64,
    /// `None` resets every half base RTT.
    pub bloom_reset_ns: Option<u64>,
    pub bloom_bits_per_hash: usize,
    pub cache_entries: usize,
    /// `None` uses the base RTT.
    pub estimator_tau_ns: Option<u64>,
    /// Hosts for which estimator entries are provisioned. Empty means
    /// every incast victim configured in the workload.
    pub estimator_destinations: Vec<Ip>,
    pub enabled_layers: Vec<Layer>,
    /// Queue-manager to ingress flag propagation, and mirror to egress
    /// builder latency.
    pub pipeline_delay_ns: u64,
}

impl Default for SfcConfig {
    fn default() -> Self {
        Self {
            q_th_bytes: 250_000,
            q_tg_bytes: 125_000,
            bloom_reset_ns: None,
            bloom_bits_per_hash: 4096,
            cache_entries: 32_768,
            estimator_tau_ns: None,
            estimator_destinations: Vec::new(),
            enabled_layers: vec![Layer::Tor],
            pipeline_delay_ns: 500,
        }
    }
}

impl SfcConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.q_tg_bytes == 0 || self.q_th_bytes == 0 {
            return Err("sfc thresholds must be positive".into());
        }
        if self.q_tg_bytes >= self.q_th_bytes {
            return Err(format!(
                "sfc target depth ({}) must be below the trigger threshold ({})",
                self.q_tg_bytes, self.q_th_bytes
            ));
        }
        Ok(())
    }

    pub fn pipeline_delay(&self) -> SimTime {
        SimTime(self.pipeline_delay_ns)
    }
}

/// Which SFC features a switch runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SfcFeatures {
    /// Trigger BTS at ingress from the congestion flag.
    pub ingress_trigger: bool,
    /// Trigger BTS when a data packet leaves a congested queue.
    pub egress_trigger: bool,
    pub cache: bool,
    pub estimator: bool,
    /// Convert BTS for attached hosts into PFC frames.
    pub convert_to_pfc: bool,
}

impl SfcFeatures {
    pub fn any(&self) -> bool {
        self.ingress_trigger
            || self.egress_trigger
            || self.cache
            || self.estimator
            || self.convert_to_pfc
    }
}

/// Ingress-visible binary congestion signal per egress data queue.
///
/// `target` follows the queue manager immediately; `visible` is what
/// ingress reads and lags by the pipeline delay.
#[derive(Debug, Clone)]
pub struct CongestionFlagTable {
    target: Vec<bool>,
    visible: Vec<bool>,
}

impl CongestionFlagTable {
    pub fn new(n_queues: usize) -> Self {
        Self {
            target: vec![false; n_queues],
            visible: vec![false; n_queues],
        }
    }

    /// Record the queue manager's view. Returns `Some(v)` when a propagation
    /// to ingress must be scheduled.
    pub fn observe(&mut self, q: usize, depth: u64, q_th: u64) -> Option<bool> {
        let over = depth > q_th;
        if self.target[q] != over {
            self.target[q] = over;
            Some(over)
        } else {
            None
        }
    }

    pub fn apply(&mut self, q: usize, v: bool) {
        self.visible[q] = v;
    }

    pub fn is_congested(&self, q: usize) -> bool {
        self.visible[q]
    }
}

/// Metadata attached to the trimmed mirror copy.
#[derive(Debug, Clone, PartialEq)]
pub struct MirrorMeta {
    pub queue: usize,
    pub port: u16,
    /// Pause hint from the cache or estimator.
    pub pause_hint: SimTime,
    pub from_cache: bool,
    pub data: Packet,
}

#[derive(Debug, Clone, PartialEq)]
pub enum IngressDecision {
    Forward,
    ForwardAndMirror(MirrorMeta),
    /// BTS handled here and not forwarded (SFC-P conversion).
    ConsumeBts,
}

/// `ceil((qd - q_tg) / R)` in whole microseconds, zero when below target.
pub fn drain_pause_us(qd: u64, q_tg: u64, port_speed_bps: u64) -> u32 {
    let excess = qd.saturating_sub(q_tg) as u128;
    // bytes * 8 / bps in us = bytes * 8e6 / bps
    (excess * 8_000_000).div_ceil(port_speed_bps as u128) as u32
}

/// Pause carried by a BTS built at egress.
pub fn bts_pause_us(hint: SimTime, qd: u64, q_tg: u64, port_speed_bps: u64) -> u32 {
    (hint.ceil_micros() as u32).max(drain_pause_us(qd, q_tg, port_speed_bps))
}

/// Per-switch SFC tables.
#[derive(Debug, Clone)]
pub struct SfcState {
    pub cfg: SfcConfig,
    pub features: SfcFeatures,
    pub flags: CongestionFlagTable,
    pub bloom: AuditedBloom,
    pub cache: PauseCache,
    pub estimator: Option<RateEstimator>,
}

impl SfcState {
    pub fn new(
        cfg: SfcConfig,
        features: SfcFeatures,
        n_queues: usize,
        estimator: Option<RateEstimator>,
    ) -> Self {
        Self {
            flags: CongestionFlagTable::new(n_queues),
            bloom: AuditedBloom::new(cfg.bloom_bits_per_hash),
            cache: PauseCache::new(if features.cache { cfg.cache_entries } else { 1 }),
            estimator,
            cfg,
            features,
        }
    }

    pub fn cache_key(ip: Ip, dscp: u8) -> CacheKey {
        CacheKey { ip, dscp }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const R: u64 = 100_000_000_000;

    #[test]
    fn one_bdp_excess_is_ten_microseconds() {
        assert_eq!(drain_pause_us(250_000, 125_000, R), 10);
    }

    #[test]
    fn below_target_is_zero() {
        assert_eq!(drain_pause_us(100_000, 125_000, R), 0);
        assert_eq!(bts_pause_us(SimTime::ZERO, 125_000, 125_000, R), 0);
    }

    #[test]
    fn hint_dominates_when_larger() {
        assert_eq!(bts_pause_us(SimTime::from_micros(15), 250_000, 125_000, R), 15);
        assert_eq!(bts_pause_us(SimTime::from_micros(5), 250_000, 125_000, R), 10);
    }

    #[test]
    fn pause_rounds_up_to_whole_microseconds() {
        // 1 byte over target at 100G is 0.08ns.
        assert_eq!(drain_pause_us(125_001, 125_000, R), 1);
        assert_eq!(bts_pause_us(SimTime(1), 0, 0, R), 1);
    }

    #[test]
    fn flag_table_reports_crossings_only() {
        let mut f = CongestionFlagTable::new(1);
        assert_eq!(f.observe(0, 10, 100), None);
        assert_eq!(f.observe(0, 101, 100), Some(true));
        assert_eq!(f.observe(0, 150, 100), None);
        assert!(!f.is_congested(0));
        f.apply(0, true);
        assert!(f.is_congested(0));
        assert_eq!(f.observe(0, 100, 100), Some(false));
    }

    #[test]
    fn config_validation() {
        assert!(SfcConfig::default().validate().is_ok());
        let bad = SfcConfig {
            q_tg_bytes: 300_000,
            ..SfcConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
