//! Pluggable congestion control. Timers are evaluated lazily when the flow
//! is touched, so idle flows cost nothing.

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::net::AckFields;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CcKind {
    /// Unlimited window at line rate.
    #[default]
    None,
    /// Line-rate start capped by a static window.
    WindowOnly,
    /// ECN-driven rate control plus a static window.
    DcqcnW,
    /// Window steered towards a target utilization from INT telemetry.
    IntWindow,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CcConfig {
    pub kind: CcKind,
    /// Static window. `None` uses one BDP of the flow's path.
    pub window_bytes: Option<u64>,
    pub dcqcn: DcqcnParams,
    pub int: IntParams,
}

impl Default for CcConfig {
    fn default() -> Self {
        Self {
            kind: CcKind::None,
            window_bytes: None,
            dcqcn: DcqcnParams::default(),
            int: IntParams::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DcqcnParams {
    pub g: f64,
    /// Minimum spacing between two rate cuts.
    pub cnp_interval_ns: u64,
    pub alpha_timer_ns: u64,
    pub increase_timer_ns: u64,
    pub fast_recovery_stages: u32,
    pub rate_ai_fraction: f64,
    pub rate_hai_fraction: f64,
    pub min_rate_fraction: f64,
}

impl Default for DcqcnParams {
    fn default() -> Self {
        Self {
            g: 1.0 / 16.0,
            cnp_interval_ns: 50_000,
            alpha_timer_ns: 55_000,
            increase_timer_ns: 55_000,
            fast_recovery_stages: 5,
            rate_ai_fraction: 0.005,
            rate_hai_fraction: 0.05,
            min_rate_fraction: 0.001,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IntParams {
    pub eta: f64,
    /// Additive increase as a fraction of the initial window.
    pub ai_fraction: f64,
    pub min_window_bytes: u64,
}

impl Default for IntParams {
    fn default() -> Self {
        Self {
            eta: 0.95,
            ai_fraction: 0.01,
            min_window_bytes: 1_000,
        }
    }
}

#[derive(Debug, Clone)]
struct Dcqcn {
    rt: f64,
    alpha: f64,
    last_cut: Option<SimTime>,
    cnp_in_period: bool,
    alpha_clock: SimTime,
    increase_clock: SimTime,
    stage: u32,
}

#[derive(Debug, Clone)]
struct IntState {
    wc: f64,
    next_update_seq: u64,
}

/// Per-flow congestion-control state.
#[derive(Debug, Clone)]
pub struct CcState {
    kind: CcKind,
    line_bps: f64,
    base_rtt: SimTime,
    /// Window in bytes; `u64::MAX` when unlimited.
    pub cwnd: u64,
    /// Current pacing rate in bits/s.
    pub rate_bps: f64,
    dcqcn: Option<Dcqcn>,
    int: Option<IntState>,
    init_window: u64,
}

impl CcState {
    pub fn new(cfg: &CcConfig, line_bps: u64, base_rtt: SimTime, now: SimTime) -> Self {
        let bdp = (line_bps as u128 * base_rtt.as_nanos() as u128 / 8_000_000_000) as u64;
        let window = cfg.window_bytes.unwrap_or(bdp).max(1);
        let cwnd = match cfg.kind {
            CcKind::None => u64::MAX,
            _ => window,
        };
        let line = line_bps as f64;
        Self {
            kind: cfg.kind,
            line_bps: line,
            base_rtt,
            cwnd,
            rate_bps: line,
            dcqcn: (cfg.kind == CcKind::DcqcnW).then_some(Dcqcn {
                rt: line,
                alpha: 1.0,
                last_cut: None,
                cnp_in_period: false,
                alpha_clock: now,
                increase_clock: now,
                stage: 0,
            }),
            int: (cfg.kind == CcKind::IntWindow).then_some(IntState {
                wc: window as f64,
                next_update_seq: 0,
            }),
            init_window: window,
        }
    }

    pub fn kind(&self) -> CcKind {
        self.kind
    }

    /// True when the flow must be paced below line rate.
    pub fn is_paced(&self) -> bool {
        self.rate_bps < self.line_bps
    }

    /// Apply any timers that elapsed up to `now`.
    pub fn advance(&mut self, now: SimTime, p: &CcConfig) {
        let line = self.line_bps;
        let Some(d) = self.dcqcn.as_mut() else { return };
        let p = &p.dcqcn;
        let ta = SimTime(p.alpha_timer_ns);
        let mut n = 0;
        while d.alpha_clock + ta <= now {
            d.alpha_clock += ta;
            if !d.cnp_in_period {
                d.alpha *= 1.0 - p.g;
            }
            d.cnp_in_period = false;
            n += 1;
            if n > 4096 {
                d.alpha_clock = now;
                d.alpha = 0.0;
            }
        }
        let ti = SimTime(p.increase_timer_ns);
        let mut n = 0;
        while d.increase_clock + ti <= now {
            d.increase_clock += ti;
            d.stage += 1;
            if d.stage > p.fast_recovery_stages {
                let ai = if d.stage > 2 * p.fast_recovery_stages {
                    p.rate_hai_fraction
                } else {
                    p.rate_ai_fraction
                };
                d.rt = (d.rt + ai * line).min(line);
            }
            self.rate_bps = ((self.rate_bps + d.rt) / 2.0).min(line);
            n += 1;
            if n > 4096 || self.rate_bps >= line * 0.999_999 {
                d.increase_clock = now;
                d.rt = line;
                self.rate_bps = line;
                break;
            }
        }
    }

    /// React to an acknowledgement. `snd_nxt` is the sender's next new byte.
    pub fn on_ack(&mut self, now: SimTime, ack: &AckFields, snd_nxt: u64, p: &CcConfig) {
        self.advance(now, p);
        match self.kind {
            CcKind::None | CcKind::WindowOnly => {}
            CcKind::DcqcnW => {
                if !ack.ecn_echo {
                    return;
                }
                let d = self.dcqcn.as_mut().expect("dcqcn state");
                d.cnp_in_period = true;
                let ready = d
                    .last_cut
                    .is_none_or(|t| now.saturating_sub(t) >= SimTime(p.dcqcn.cnp_interval_ns));
                if ready {
                    d.last_cut = Some(now);
                    d.rt = self.rate_bps;
                    self.rate_bps = (self.rate_bps * (1.0 - d.alpha / 2.0))
                        .max(self.line_bps * p.dcqcn.min_rate_fraction);
                    d.alpha = (1.0 - p.dcqcn.g) * d.alpha + p.dcqcn.g;
                    d.stage = 0;
                    d.increase_clock = now;
                }
            }
            CcKind::IntWindow => {
                let u = ack.int_util as f64;
                if u <= 0.0 {
                    return;
                }
                let s = self.int.as_mut().expect("int state");
                let eta = p.int.eta;
                let ai = p.int.ai_fraction * self.init_window as f64;
                let w = (s.wc / (u / eta).max(1e-3) + ai)
                    .clamp(p.int.min_window_bytes as f64, self.init_window as f64);
                if ack.cum_ack >= s.next_update_seq {
                    s.wc = w;
                    s.next_update_seq = snd_nxt;
                }
                self.cwnd = w as u64;
                let rtt = self.base_rtt.as_nanos().max(1) as f64;
                self.rate_bps = (w * 8e9 / rtt).min(self.line_bps);
            }
        }
    }

    /// Serialization gap for `bytes` at the current pacing rate.
    pub fn pacing_gap(&self, bytes: u32) -> SimTime {
        SimTime((bytes as f64 * 8e9 / self.rate_bps).ceil() as u64)
    }
}
