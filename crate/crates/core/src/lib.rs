//! Packet-level simulator for datacenter flow control: back-to-sender
//! signaling, source flow control, delay-based on-ramps and PFC.

pub mod config;
pub mod endhost;
pub mod engine;
pub mod experiment;
pub mod error;
pub mod metrics;
pub mod net;
pub mod sim;
pub mod switchfab;
pub mod theory;
pub mod workload;

pub use config::{ExperimentConfig, FcScheme};
pub use error::{Error, Result};
pub use sim::Simulation;
