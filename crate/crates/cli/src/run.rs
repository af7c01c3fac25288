//! Scenario execution and the run manifest.
//!
//! Every output is written to a temporary name and renamed into place.
//! `manifest.json` goes last and lists each file with its SHA-256, so a
//! directory without a manifest holds an incomplete run.

use std::fs;
use std::path::{Path, PathBuf};

use cryptoload::engine::run_single;
use cryptoload::lvrt::{
    compare_reference, facility_table, sweep_capability, with_jobs, OutcomeTable, BUS3_FAULT_REFERENCE, POST_SAG_S,
    PREMISES_FAULT_REFERENCE, SAG_ARM_TIME_S,
};
use cryptoload::network::{run_facility_scenario, FaultLocation};
use cryptoload::signals::{LineSource, SineSpec};
use cryptoload::validation::{run_invariant_suite, ValidationOptions, ValidationReport};
use cryptoload::Result;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::scenario::{ScenarioConfig, ScenarioKind};

pub const MANIFEST_SCHEMA: &str = "cryptoload.run-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VALIDATION_FILE: &str = "validation.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub toolkit_version: String,
    pub kind: ScenarioKind,
    /// SHA-256 of the effective scenario, output directory excluded.
    pub config_digest: String,
    /// False only when a validation check failed.
    pub passed: bool,
    pub files: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecOptions {
    /// Worker threads for sweep and table cells; `None` uses every core.
    pub jobs: Option<usize>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Outputs {
    dir: PathBuf,
    files: Vec<ManifestEntry>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let stale = dir.join(MANIFEST_FILE);
        if stale.exists() {
            fs::remove_file(stale)?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.push(ManifestEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    fn put_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.put(name, &bytes)
    }

    fn put_csv(&mut self, name: &str, write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut bytes = Vec::new();
        write(&mut bytes)?;
        self.put(name, &bytes)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Digest of the scenario as it ran; independent of where outputs go.
pub fn config_digest(config: &ScenarioConfig) -> Result<String> {
    let mut c = config.clone();
    c.output_dir = None;
    Ok(sha256_hex(c.to_toml()?.as_bytes()))
}

/// Applies command-line overrides and revalidates.
pub fn apply_overrides(mut config: ScenarioConfig, out: Option<PathBuf>, dt: Option<f64>) -> Result<ScenarioConfig> {
    if let Some(out) = out {
        config.output_dir = Some(out);
    }
    if let Some(dt) = dt {
        config.sim.dt = dt;
        if config.kind == ScenarioKind::Validate {
            config.validation.get_or_insert_with(ValidationOptions::default).dt = dt;
        }
    }
    config.validate()?;
    Ok(config)
}

pub fn output_dir(config: &ScenarioConfig) -> PathBuf {
    config.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

/// Runs `config` and writes its outputs, then the manifest.
pub fn execute(config: &ScenarioConfig, opts: &ExecOptions) -> Result<RunManifest> {
    config.validate()?;
    let mut out = Outputs::create(&output_dir(config))?;
    let mut effective = config.clone();
    effective.output_dir = None;
    out.put("scenario.toml", effective.to_toml()?.as_bytes())?;

    let body = |out: &mut Outputs| -> Result<bool> {
        match config.kind {
            ScenarioKind::Single => single(config, out).map(|_| true),
            ScenarioKind::Sweep => sweep(config, out).map(|_| true),
            ScenarioKind::Facility => facility(config, out).map(|_| true),
            ScenarioKind::Validate => validate(config, out),
        }
    };
    let passed = match opts.jobs {
        Some(jobs) => with_jobs(jobs, || body(&mut out))?,
        None => body(&mut out)?,
    };

    let manifest = RunManifest {
        schema: MANIFEST_SCHEMA.into(),
        toolkit_version: env!("CARGO_PKG_VERSION").into(),
        kind: config.kind,
        config_digest: config_digest(config)?,
        passed,
        files: out.files,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&out.dir.join(MANIFEST_FILE), &bytes)?;
    Ok(manifest)
}

fn single(config: &ScenarioConfig, out: &mut Outputs) -> Result<()> {
    let p = &config.converter;
    let src = config.source.unwrap_or_default();
    let sine = SineSpec::new(src.v_rms.unwrap_or(p.v_in_rms_nom), p.line_frequency, src.phase_deg)?;
    let mut sim = config.sim;
    let source = match config.sag {
        Some(sag) => {
            let source = LineSource::with_sag(sine, sag, SAG_ARM_TIME_S);
            let end = source.sag.expect("sag scheduled").end_s();
            sim.t_end = sim.t_end.max(end + POST_SAG_S);
            source
        }
        None => LineSource::ideal(sine),
    };
    let run = run_single(source, *p, &sim)?;
    out.put_csv("trace.csv", |b| run.trace.write_csv(b))?;
    out.put_json("summary.json", &run.summary())
}

fn sweep(config: &ScenarioConfig, out: &mut Outputs) -> Result<()> {
    let grid = config.sweep.clone().unwrap_or_default();
    let map = sweep_capability(&config.converter, &grid, &config.sim)?;
    out.put_csv("capability.csv", |b| map.write_csv(b))?;
    out.put_csv("worst_case.csv", |b| map.worst_case_table()?.write_csv(b))?;
    out.put_json("capability_summary.json", &map.summary())
}

fn facility(config: &ScenarioConfig, out: &mut Outputs) -> Result<()> {
    let fac = config.facility.as_ref().expect("validated");
    if let Some(scenario) = config.facility_scenario()? {
        let res = run_facility_scenario(&scenario)?;
        out.put_csv("trace.csv", |b| res.run.trace.write_csv(b))?;
        out.put_json("facility_summary.json", &res.summary(&scenario))?;
    }
    if let Some(t) = &fac.table {
        let base = config.facility_base()?;
        let table = facility_table(&base, &t.retained_fractions, &t.durations_s)?;
        out.put_csv("facility_table.csv", |b| table.table.write_csv(b))?;
        out.put_json("facility_cells.json", &table)?;
        if t.compare_reference {
            let reference = OutcomeTable::parse_str(match fac.location {
                FaultLocation::Premises => PREMISES_FAULT_REFERENCE,
                FaultLocation::Bus3 => BUS3_FAULT_REFERENCE,
            })?;
            out.put_json("comparison.json", &compare_reference(&table.table, &reference)?)?;
        }
    }
    Ok(())
}

fn validate(config: &ScenarioConfig, out: &mut Outputs) -> Result<bool> {
    let opts = config.validation.unwrap_or(ValidationOptions {
        dt: config.sim.dt,
        ..ValidationOptions::default()
    });
    let report = run_invariant_suite(&opts);
    out.put_json(VALIDATION_FILE, &report)?;
    Ok(report.passed())
}

/// Reads the validation report a `validate` run left in `dir`.
pub fn read_validation(dir: &Path) -> Result<ValidationReport> {
    let text = fs::read(dir.join(VALIDATION_FILE))?;
    Ok(serde_json::from_slice(&text)?)
}
