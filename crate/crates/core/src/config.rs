//! Experiment configuration, read from TOML.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::endhost::{HostConfig, OnRampConfig};
use crate::error::{Error, Result};
use crate::net::{Ip, Layer, Topology, TopologyParams};
use crate::switchfab::{PfcConfig, Ratio, SfcConfig, SfcFeatures};
use crate::workload::CdfMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FcScheme {
    #[default]
    None,
    IngressBts,
    EgressBts,
    IngressBtsCache,
    IngressBtsCacheEstimator,
    OnRamp,
    Pfc,
    SfcP,
}

impl FcScheme {
    pub const ALL: [FcScheme; 8] = [
        FcScheme::None,
        FcScheme::IngressBts,
        FcScheme::EgressBts,
        FcScheme::IngressBtsCache,
        FcScheme::IngressBtsCacheEstimator,
        FcScheme::OnRamp,
        FcScheme::Pfc,
        FcScheme::SfcP,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FcScheme::None => "none",
            FcScheme::IngressBts => "ingress_bts",
            FcScheme::EgressBts => "egress_bts",
            FcScheme::IngressBtsCache => "ingress_bts_cache",
            FcScheme::IngressBtsCacheEstimator => "ingress_bts_cache_estimator",
            FcScheme::OnRamp => "on_ramp",
            FcScheme::Pfc => "pfc",
            FcScheme::SfcP => "sfc_p",
        }
    }

    /// Switch-side SFC features this scheme turns on.
    pub fn features(self) -> SfcFeatures {
        let mut f = SfcFeatures::default();
        match self {
            FcScheme::IngressBts => f.ingress_trigger = true,
            FcScheme::EgressBts => f.egress_trigger = true,
            FcScheme::IngressBtsCache => {
                f.ingress_trigger = true;
                f.cache = true;
            }
            FcScheme::IngressBtsCacheEstimator => {
                f.ingress_trigger = true;
                f.cache = true;
                f.estimator = true;
            }
            FcScheme::SfcP => {
                f.ingress_trigger = true;
                f.cache = true;
                f.convert_to_pfc = true;
            }
            FcScheme::None | FcScheme::OnRamp | FcScheme::Pfc => {}
        }
        f
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BufferConfig {
    /// Shared buffer per switch. Absent means unlimited.
    pub capacity_bytes: Option<u64>,
    pub alpha: Ratio,
    /// ECN marking depth. `None` uses one BDP; `0` disables marking.
    pub ecn_threshold_bytes: Option<u64>,
    pub data_priorities: usize,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            capacity_bytes: None,
            alpha: Ratio::ONE,
            ecn_threshold_bytes: None,
            data_priorities: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundConfig {
    /// Bundled distribution name or path to a CDF file.
    pub cdf: String,
    pub mode: CdfMode,
    /// Fraction of each host's edge link.
    pub load: f64,
}

impl Default for BackgroundConfig {
    fn default() -> Self {
        Self {
            cdf: "hadoop".into(),
            mode: CdfMode::Interpolate,
            load: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SenderSelect {
    /// Hosts under a different ToR than the victim.
    #[default]
    Remote,
    Any,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct IncastConfig {
    pub degree: u32,
    pub message_bytes: u64,
    /// Fraction of aggregate host edge capacity. Absent means one event.
    pub load: Option<f64>,
    pub sync_window_us: f64,
    pub start_us: f64,
    /// Fixed victim; absent picks a random host per event.
    pub victim: Option<Ip>,
    pub senders: SenderSelect,
    /// Maximum number of events.
    pub max_events: Option<u32>,
}

impl Default for IncastConfig {
    fn default() -> Self {
        Self {
            degree: 16,
            message_bytes: 250_000,
            load: None,
            sync_window_us: 0.0,
            start_us: 0.0,
            victim: None,
            senders: SenderSelect::Remote,
            max_events: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct StaticFlow {
    pub src: Ip,
    pub dst: Ip,
    pub size: u64,
    #[serde(default)]
    pub start_ns: u64,
    #[serde(default)]
    pub priority: u8,
    /// Stop offering new data at this time; the flow ends once what it
    /// already sent is acknowledged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_ns: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrackQueues {
    /// Ports towards every host that receives incast or static flows.
    #[default]
    Victims,
    AllHostPorts,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub sample_period_us: f64,
    pub track: TrackQueues,
    pub throughput: bool,
    /// Record per-flow send, pause and BTS logs.
    pub flow_logs: bool,
    /// Record every shared-buffer change for replay checks.
    pub buffer_trace: bool,
    /// Record every packet put on or taken off a link.
    pub wire_trace: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            sample_period_us: 10.0,
            track: TrackQueues::Victims,
            throughput: true,
            flow_logs: false,
            buffer_trace: false,
            wire_trace: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub duration_us: f64,
    /// Extra time after the last flow start; the run ends when every flow
    /// finishes or this runs out.
    pub drain_us: f64,
    pub fc: FcScheme,
    pub topology: TopologyParams,
    pub buffer: BufferConfig,
    pub sfc: SfcConfig,
    pub pfc: PfcConfig,
    pub host: HostConfig,
    pub background: Option<BackgroundConfig>,
    pub incast: Option<IncastConfig>,
    pub flows: Vec<StaticFlow>,
    pub metrics: MetricsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 1,
            duration_us: 1_000.0,
            drain_us: 0.0,
            fc: FcScheme::None,
            topology: TopologyParams::default(),
            buffer: BufferConfig::default(),
            sfc: SfcConfig::default(),
            pfc: PfcConfig::default(),
            host: HostConfig::default(),
            background: None,
            incast: None,
            flows: Vec::new(),
            metrics: MetricsConfig::default(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.span().map_or(1, |s| line_of(text, s.start)),
            msg: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Stable hash of the serialized config.
    pub fn hash_hex(&self) -> String {
        let mut h = DefaultHasher::new();
        self.to_toml().hash(&mut h);
        format!("{:016x}", h.finish())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.duration_us > 0.0) {
            return bad("duration_us must be positive".into());
        }
        if self.drain_us < 0.0 {
            return bad("drain_us must be non-negative".into());
        }
        if !(self.metrics.sample_period_us > 0.0) {
            return bad("metrics.sample_period_us must be positive".into());
        }
        self.sfc.validate().map_err(Error::InvalidConfig)?;
        let topo = Topology::build(&self.topology).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if self.host.mtu == 0 {
            return bad("host.mtu must be positive".into());
        }
        if self.buffer.data_priorities == 0 || self.buffer.data_priorities > 8 {
            return bad("buffer.data_priorities must be within 1..=8".into());
        }
        if self.buffer.capacity_bytes == Some(0) {
            return bad("buffer.capacity_bytes must be positive".into());
        }
        if let Some(bg) = &self.background {
            if !(bg.load > 0.0 && bg.load <= 1.0) {
                return bad(format!("background.load {} outside (0, 1]", bg.load));
            }
        }
        if let Some(ic) = &self.incast {
            if ic.degree == 0 {
                return bad("incast.degree must be at least 1".into());
            }
            if ic.sync_window_us < 0.0 || ic.start_us < 0.0 {
                return bad("incast times must be non-negative".into());
            }
            if let Some(l) = ic.load {
                if !(l > 0.0 && l <= 1.0) {
                    return bad(format!("incast.load {l} outside (0, 1]"));
                }
            }
            if ic.victim.is_some_and(|v| v >= topo.n_hosts) {
                return bad("incast.victim is not a host".into());
            }
        }
        for (i, f) in self.flows.iter().enumerate() {
            if f.src >= topo.n_hosts || f.dst >= topo.n_hosts || f.src == f.dst {
                return bad(format!("flows[{i}]: src/dst must be distinct hosts"));
            }
            if f.priority as usize >= self.buffer.data_priorities {
                return bad(format!("flows[{i}]: priority beyond buffer.data_priorities"));
            }
        }
        let pfc_needed = matches!(self.fc, FcScheme::Pfc);
        if pfc_needed && self.pfc.threshold_bytes.is_none() && self.buffer.capacity_bytes.is_none() {
            return bad("pfc with a dynamic threshold needs a finite buffer.capacity_bytes".into());
        }
        if self.fc == FcScheme::SfcP && !self.sfc.enabled_layers.contains(&Layer::Tor) {
            return bad("sfc_p converts at ToR switches; sfc.enabled_layers must include tor".into());
        }
        Ok(())
    }

    /// OnRamp settings in force, if the scheme uses them.
    pub fn onramp(&self) -> Option<OnRampConfig> {
        match self.fc {
            FcScheme::OnRamp => Some(self.host.onramp.clone().unwrap_or_default()),
            _ => None,
        }
    }
}
