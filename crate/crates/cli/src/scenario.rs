//! Versioned TOML scenario files.
//!
//! ```toml
//! schema = "cryptoload.scenario/1"
//! kind = "single"          # single | sweep | facility | validate
//!
//! [converter]
//! p_av = 3200.0
//! ```
//!
//! Sections fall back to defaults, except `[facility]`, which facility runs
//! require. Sections that do not apply to `kind` are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use cryptoload::converter::ConverterParams;
use cryptoload::engine::SimConfig;
use cryptoload::lvrt::SweepGrid;
use cryptoload::network::{
    calibrate_fault_impedance, FacilityScenario, FaultLocation, FaultSpec, NetworkModel, PremisesSpec, TransformerSpec,
    DEFAULT_FAULT_TIME, DEFAULT_MINERS_PER_PHASE, POST_FAULT_S,
};
use cryptoload::signals::SagSpec;
use cryptoload::validation::ValidationOptions;
use cryptoload::{Error, Result};
use serde::{Deserialize, Serialize};

pub const SCENARIO_SCHEMA: &str = "cryptoload.scenario/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Single,
    Sweep,
    Facility,
    Validate,
}

impl ScenarioKind {
    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::Single => "single",
            ScenarioKind::Sweep => "sweep",
            ScenarioKind::Facility => "facility",
            ScenarioKind::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema: String,
    pub kind: ScenarioKind,
    /// Relative paths resolve against the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub converter: ConverterParams,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sag: Option<SagSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facility: Option<FacilityConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationOptions>,
}

/// Ideal line source of a single run. RMS defaults to the converter's nominal input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_rms: Option<f64>,
    #[serde(default)]
    pub phase_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacilityConfig {
    pub location: FaultLocation,
    /// Replaces the standard grid for `location`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkModel>,
    #[serde(default = "default_primary_bus")]
    pub primary_bus: String,
    #[serde(default = "TransformerSpec::facility_default")]
    pub transformer: TransformerSpec,
    #[serde(default)]
    pub premises: PremisesSpec,
    #[serde(default = "default_miners")]
    pub miners_per_phase: u32,
    #[serde(default)]
    pub fault: FaultConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<TableConfig>,
}

fn default_primary_bus() -> String {
    "bus6".into()
}

fn default_miners() -> u32 {
    DEFAULT_MINERS_PER_PHASE
}

/// Fault magnitude is given either as a target retained fraction at the
/// faulted bus (calibrated to an impedance) or directly in ohms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bus: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retained_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impedance_ohms: Option<f64>,
    #[serde(default = "default_fault_time")]
    pub apply_time: f64,
    #[serde(default = "default_fault_duration")]
    pub duration_s: f64,
}

fn default_fault_time() -> f64 {
    DEFAULT_FAULT_TIME
}

fn default_fault_duration() -> f64 {
    0.045
}

impl Default for FaultConfig {
    fn default() -> Self {
        Self {
            bus: None,
            retained_fraction: None,
            impedance_ohms: None,
            apply_time: DEFAULT_FAULT_TIME,
            duration_s: default_fault_duration(),
        }
    }
}

/// Trip-outcome table over magnitudes and durations, optionally compared
/// against the published table for the fault location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    #[serde(default = "default_table_fractions")]
    pub retained_fractions: Vec<f64>,
    #[serde(default = "default_table_durations")]
    pub durations_s: Vec<f64>,
    #[serde(default = "yes")]
    pub compare_reference: bool,
}

fn default_table_fractions() -> Vec<f64> {
    SweepGrid::default().retained_fractions
}

fn default_table_durations() -> Vec<f64> {
    SweepGrid::default().durations_s
}

fn yes() -> bool {
    true
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            retained_fractions: default_table_fractions(),
            durations_s: default_table_durations(),
            compare_reference: true,
        }
    }
}

/// A validation failure tied to a dotted field path.
struct FieldError {
    field: String,
    message: String,
}

/// Qualifies a core field name with the config section it came from.
fn field_err(section: &str, e: Error) -> FieldError {
    let Error::InvalidParameter { field, reason } = e else {
        return FieldError {
            field: section.to_string(),
            message: e.to_string(),
        };
    };
    let last = section.rsplit('.').next().unwrap_or(section);
    let field = if field.starts_with("sim.") {
        field
    } else if let Some(rest) = field.strip_prefix("grid.") {
        format!("{section}.{rest}")
    } else if let Some(rest) = field.strip_prefix(&format!("{last}.")) {
        format!("{section}.{rest}")
    } else {
        format!("{section}.{field}")
    };
    FieldError { field, message: reason }
}

impl ScenarioConfig {
    /// A config of `kind` with every optional section left out.
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            schema: SCENARIO_SCHEMA.into(),
            kind,
            output_dir: None,
            converter: ConverterParams::default(),
            sim: SimConfig::default(),
            source: None,
            sag: None,
            sweep: None,
            facility: None,
            validation: None,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Validation(format!("serializing scenario: {e}")))
    }

    /// Checks every invariant; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        self.check()
            .map_err(|FieldError { field, message }| Error::InvalidParameter { field, reason: message })
    }

    fn check(&self) -> std::result::Result<(), FieldError> {
        let bad = |field: &str, message: &str| FieldError {
            field: field.into(),
            message: message.into(),
        };
        if self.schema != SCENARIO_SCHEMA {
            return Err(bad(
                "schema",
                &format!("expected `{SCENARIO_SCHEMA}`, found `{}`", self.schema),
            ));
        }
        let present = [
            ("source", self.source.is_some(), [ScenarioKind::Single].as_slice()),
            ("sag", self.sag.is_some(), &[ScenarioKind::Single]),
            ("sweep", self.sweep.is_some(), &[ScenarioKind::Sweep]),
            ("facility", self.facility.is_some(), &[ScenarioKind::Facility]),
            ("validation", self.validation.is_some(), &[ScenarioKind::Validate]),
        ];
        for (name, set, kinds) in present {
            if set && !kinds.contains(&self.kind) {
                return Err(bad(
                    name,
                    &format!("section does not apply to kind `{}`", self.kind.label()),
                ));
            }
        }
        self.converter.validate().map_err(|e| field_err("converter", e))?;
        self.sim.validate().map_err(|e| field_err("sim", e))?;
        if let Some(src) = &self.source {
            if let Some(v) = src.v_rms {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(bad("source.v_rms", "must be > 0"));
                }
            }
            if !src.phase_deg.is_finite() {
                return Err(bad("source.phase_deg", "must be finite"));
            }
        }
        if let Some(sag) = &self.sag {
            sag.validate().map_err(|e| field_err("sag", e))?;
        }
        if let Some(grid) = &self.sweep {
            grid.validate().map_err(|e| field_err("sweep", e))?;
        }
        if let Some(opts) = &self.validation {
            if !(opts.dt > 0.0 && opts.dt.is_finite()) {
                return Err(bad("validation.dt", "must be > 0"));
            }
        }
        match (&self.kind, &self.facility) {
            (ScenarioKind::Facility, None) => return Err(bad("facility", "section is required for kind `facility`")),
            (_, Some(fac)) => fac.check(self)?,
            _ => {}
        }
        Ok(())
    }

    /// Base facility scenario; the fault carries the configured impedance,
    /// or zero when only a retained fraction is given.
    pub fn facility_base(&self) -> Result<FacilityScenario> {
        let fac = self
            .facility
            .as_ref()
            .ok_or_else(|| Error::Validation("no [facility] section".into()))?;
        let fault = FaultSpec {
            bus: fac.fault.bus.clone().unwrap_or_else(|| fac.location.bus().into()),
            impedance_ohms: fac.fault.impedance_ohms.unwrap_or(0.0),
            apply_time: fac.fault.apply_time,
            duration_s: fac.fault.duration_s,
        };
        let mut sim = self.sim;
        sim.t_end = sim.t_end.max(fault.clear_time() + POST_FAULT_S);
        Ok(FacilityScenario {
            network: fac.network.clone().unwrap_or_else(|| fac.location.network()),
            transformer: fac.transformer,
            primary_bus: fac.primary_bus.clone(),
            premises: fac.premises.clone(),
            miners_per_phase: fac.miners_per_phase,
            miner: self.converter,
            fault,
            sim,
        })
    }

    /// The single facility run, with the fault impedance calibrated when a
    /// retained fraction is configured. `None` when only a table is requested.
    pub fn facility_scenario(&self) -> Result<Option<FacilityScenario>> {
        let base = self.facility_base()?;
        let fault = &self.facility.as_ref().expect("checked by facility_base").fault;
        match (fault.retained_fraction, fault.impedance_ohms) {
            (Some(r), _) => {
                let ohms = calibrate_fault_impedance(&base, r, &base.fault.bus)?;
                Ok(Some(base.with_fault(ohms, base.fault.duration_s)))
            }
            (None, Some(_)) => Ok(Some(base)),
            (None, None) => Ok(None),
        }
    }

    /// Total rated facility power in watts.
    pub fn facility_rating_w(&self) -> Option<f64> {
        self.facility
            .as_ref()
            .map(|f| 3.0 * f64::from(f.miners_per_phase) * self.converter.p_av)
    }
}

impl FacilityConfig {
    fn check(&self, cfg: &ScenarioConfig) -> std::result::Result<(), FieldError> {
        let bad = |field: &str, message: &str| FieldError {
            field: field.into(),
            message: message.into(),
        };
        if self.miners_per_phase < 1 {
            return Err(bad("facility.miners_per_phase", "must be >= 1"));
        }
        self.transformer
            .validate()
            .map_err(|e| field_err("facility.transformer", e))?;
        let f = &self.fault;
        match (f.retained_fraction, f.impedance_ohms) {
            (Some(_), Some(_)) => {
                return Err(bad(
                    "facility.fault",
                    "set only one of retained_fraction and impedance_ohms",
                ))
            }
            (None, None) if self.table.is_none() => {
                return Err(bad(
                    "facility.fault",
                    "set retained_fraction or impedance_ohms, or add a [facility.table] section",
                ))
            }
            _ => {}
        }
        if let Some(r) = f.retained_fraction {
            if !(0.0..1.0).contains(&r) {
                return Err(bad(
                    "facility.fault.retained_fraction",
                    &format!("{r} is outside [0, 1)"),
                ));
            }
        }
        if let Some(t) = &self.table {
            if t.retained_fractions.is_empty() || t.durations_s.is_empty() {
                return Err(bad("facility.table", "needs at least one magnitude and one duration"));
            }
            if t.retained_fractions.iter().any(|r| !(0.0..1.0).contains(r)) {
                return Err(bad("facility.table.retained_fractions", "must lie in [0, 1)"));
            }
            if t.durations_s.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                return Err(bad("facility.table.durations_s", "must be > 0"));
            }
        }
        let base = cfg.facility_base().map_err(|e| field_err("facility", e))?;
        base.validate().map_err(|e| field_err("facility", e))
    }
}

/// Line (1-based) of `field` in `text`, or of its enclosing table header.
fn locate(text: &str, field: &str) -> Option<usize> {
    let (table, key) = match field.rsplit_once('.') {
        Some((t, k)) => (t, k),
        None => ("", field),
    };
    let mut current = String::new();
    let mut header_line = None;
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == field {
                return Some(n + 1);
            }
            if current == table {
                header_line.get_or_insert(n + 1);
            }
            continue;
        }
        if current == table {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(n + 1);
                }
            }
        }
    }
    header_line
}

fn config_error(path: &Path, message: String) -> Error {
    Error::Config {
        path: path.to_path_buf(),
        message,
    }
}

/// Parses and validates scenario text; `path` is used for error context only.
pub fn parse_scenario_str(text: &str, path: &Path) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
        let msg = e.message().trim().to_string();
        match line {
            Some(l) => config_error(path, format!("line {l}: {msg}")),
            None => config_error(path, msg),
        }
    })?;
    cfg.check().map_err(|FieldError { field, message }| {
        let at = locate(text, &field).map(|l| format!("line {l}: ")).unwrap_or_default();
        config_error(path, format!("{at}`{field}`: {message}"))
    })?;
    Ok(cfg)
}

pub fn parse_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).map_err(|e| config_error(path, e.to_string()))?;
    parse_scenario_str(&text, path)
}
