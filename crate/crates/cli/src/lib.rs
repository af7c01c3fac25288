//! Scenario files, execution and run manifests behind the `cryptoload` binary.

pub mod run;
pub mod scenario;

pub use run::{apply_overrides, execute, read_validation, ExecOptions, ManifestEntry, RunManifest};
pub use scenario::{parse_scenario, parse_scenario_str, ScenarioConfig, ScenarioKind, SCENARIO_SCHEMA};
