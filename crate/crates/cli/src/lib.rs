//! Command layer over the simulation library: config ingestion,
//! deterministic experiment runs with persisted counts, CSV/JSON reports,
//! and bit-faithful replay of stored records.

pub mod config;
pub mod record;
pub mod runner;

pub use config::{ExperimentSpec, LoadedDevice, MitigationMode, NoiseFlags, VariantArg};
pub use runner::{cmd_ghz_mqc, cmd_mitigation_study, cmd_parity, cmd_replay, ReplayReport, RunSummary};
