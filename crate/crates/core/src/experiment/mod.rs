//! Scenario presets, single runs and parameter sweeps.

pub mod oracle;
pub mod presets;
pub mod run;
pub mod scenarios;
pub mod sweep;

pub use presets::{preset, run_preset, Preset, PresetOutput, PRESETS};
pub use run::{run_to_dir, RunReport};
pub use sweep::{apply, sweep, Axis, SweepRow};
