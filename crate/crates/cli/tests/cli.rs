use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use cryptoload::network::{fault1_network, FaultLocation};
use cryptoload::trace::Trace;
use cryptoload_cli::scenario::{FacilityConfig, FaultConfig, TableConfig};
use cryptoload_cli::{
    execute, parse_scenario, parse_scenario_str, ExecOptions, RunManifest, ScenarioConfig, ScenarioKind,
};
use sha2::{Digest, Sha256};

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cryptoload"))
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read_manifest(dir: &Path) -> RunManifest {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

const SHORT_SINGLE: &str = "schema = \"cryptoload.scenario/1\"\nkind = \"single\"\n[sim]\nt_end = 0.1\n";

#[test]
fn shipped_scenarios_round_trip() {
    for entry in fs::read_dir(scenarios_dir()).unwrap() {
        let path = entry.unwrap().path();
        let cfg = parse_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let text = cfg.to_toml().unwrap();
        let back = parse_scenario_str(&text, &path).unwrap();
        assert_eq!(back, cfg, "{}", path.display());
    }
}

#[test]
fn custom_network_round_trips() {
    let mut cfg = ScenarioConfig::new(ScenarioKind::Facility);
    cfg.facility = Some(FacilityConfig {
        location: FaultLocation::Premises,
        network: Some(fault1_network()),
        primary_bus: "bus6".into(),
        transformer: cryptoload::network::TransformerSpec::facility_default(),
        premises: Default::default(),
        miners_per_phase: 10,
        fault: FaultConfig {
            impedance_ohms: Some(0.01),
            ..Default::default()
        },
        table: Some(TableConfig::default()),
    });
    cfg.converter.p_av = 2500.0;
    cfg.sim.dt = 2e-6;
    let text = cfg.to_toml().unwrap();
    assert_eq!(parse_scenario_str(&text, Path::new("mem.toml")).unwrap(), cfg);
}

#[test]
fn facility_ratings_parse_to_valid_scenario() {
    let cfg = parse_scenario(&scenarios_dir().join("facility_premises.toml")).unwrap();
    let rating = cfg.facility_rating_w().unwrap();
    assert!((rating - 1.0e6).abs() < 0.01e6, "{rating}");
    let base = cfg.facility_base().unwrap();
    base.validate().unwrap();
    assert_eq!(base.transformer.v_primary_ll, 25_000.0);
    assert_eq!(base.transformer.v_secondary_ll, 415.0);
    assert_eq!(base.transformer.z_percent, 6.0);
    assert_eq!(base.miners_per_phase, 104);
}

#[test]
fn single_run_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SHORT_SINGLE);
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(text.starts_with("time_s,"));
    let trace = Trace::read_csv(text.as_bytes()).unwrap();
    assert!(trace.len() > 1000);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema"], "cryptoload.run-summary/1");
    let names: Vec<_> = read_manifest(&out).files.into_iter().map(|f| f.path).collect();
    assert_eq!(names, ["scenario.toml", "trace.csv", "summary.json"]);
}

#[test]
fn manifest_lists_every_file_with_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = parse_scenario_str(SHORT_SINGLE, Path::new("s.toml")).unwrap();
    cfg.output_dir = Some(dir.path().to_path_buf());
    let manifest = execute(&cfg, &ExecOptions::default()).unwrap();
    assert_eq!(read_manifest(dir.path()), manifest);
    let mut on_disk: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let mut listed: Vec<String> = manifest.files.iter().map(|f| f.path.clone()).collect();
    listed.sort();
    assert_eq!(on_disk, listed);
    for f in &manifest.files {
        let bytes = fs::read(dir.path().join(&f.path)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), f.sha256);
        assert_eq!(bytes.len() as u64, f.bytes);
    }
}

#[test]
fn repeated_runs_give_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        "schema = \"cryptoload.scenario/1\"\nkind = \"single\"\n[sim]\nt_end = 0.5\n[sag]\nretained_fraction = 0.25\nstart_pow_deg = 45.0\nduration_s = 0.015\n",
    );
    let mut manifests = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("out{k}"));
        assert!(bin()
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap()
            .success());
        manifests.push(fs::read(out.join("manifest.json")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
}

#[test]
fn default_sweep_emits_48_rows() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["sweep", "--config"])
        .arg(scenarios_dir().join("sweep.toml"))
        .arg("--out")
        .arg(dir.path())
        .args(["--jobs", "2"])
        .status()
        .unwrap();
    assert!(status.success());
    let mut rdr = csv::Reader::from_path(dir.path().join("capability.csv")).unwrap();
    assert_eq!(rdr.records().count(), 48);
    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("capability_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["points"], 48);
    assert_eq!(summary["failed"], 0);
}

#[test]
fn validate_reports_each_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "v.toml",
        "schema = \"cryptoload.scenario/1\"\nkind = \"validate\"\n[validation]\ninclude_sweeps = false\n",
    );
    let output = bin()
        .args(["validate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(output.status.success(), "{stdout}");
    for name in ["power_factor", "energy_balance", "network_phasor", "determinism"] {
        assert!(stdout.contains(&format!("PASS {name}")), "{stdout}");
    }
    assert!(read_manifest(&dir.path().join("o")).passed);
}

#[test]
fn bad_config_exits_nonzero_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        "schema = \"cryptoload.scenario/1\"\nkind = \"single\"\n[sag]\nretained_fraction = 1.2\nduration_s = 0.1\n",
    );
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("bad.toml") && stderr.contains("line 4") && stderr.contains("sag.retained_fraction"),
        "{stderr}"
    );
    assert!(!dir.path().join("o").exists());
}

#[test]
fn mismatched_subcommand_and_missing_config_fail() {
    let sweep = scenarios_dir().join("sweep.toml");
    assert!(!bin()
        .args(["run", "--config"])
        .arg(&sweep)
        .output()
        .unwrap()
        .status
        .success());
    assert!(!bin().arg("facility").output().unwrap().status.success());
    assert!(!bin()
        .args(["run", "--config", "/nonexistent.toml"])
        .output()
        .unwrap()
        .status
        .success());
}

#[test]
fn dt_override_reaches_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.toml", SHORT_SINGLE);
    let out = dir.path().join("o");
    assert!(bin()
        .args(["run", "--dt", "2e-6", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap()
        .success());
    let effective = parse_scenario(&out.join("scenario.toml")).unwrap();
    assert_eq!(effective.sim.dt, 2e-6);
}
