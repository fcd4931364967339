//! Switch dataplane: shared buffer, SFC tables and the queueing model.

pub mod bloom;
pub mod buffer;
pub mod cache;
pub mod estimator;
pub mod sfc;
pub mod switch;

pub use bloom::{AuditedBloom, BloomFilter};
pub use buffer::{Ratio, SharedBuffer};
pub use cache::{CacheKey, PauseCache};
pub use estimator::RateEstimator;
pub use sfc::{
    bts_pause_us, drain_pause_us, CongestionFlagTable, IngressDecision, MirrorMeta, SfcConfig,
    SfcFeatures, SfcState,
};
pub use switch::{
    Dequeued, EgressPort, EnqueueOutcome, PfcConfig, Switch, SwitchCounters, SwitchParams,
};
