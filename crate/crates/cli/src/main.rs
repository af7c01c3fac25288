use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cryptoload_cli::{
    apply_overrides, execute, parse_scenario, read_validation, ExecOptions, ScenarioConfig, ScenarioKind,
};

#[derive(Parser)]
#[command(
    name = "cryptoload",
    version,
    about = "PFC-boost mining load simulations and ride-through studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single converter on an ideal source, optionally with one sag.
    Run(Common),
    /// Ride-through capability sweep over magnitude, duration and angle.
    Sweep(Common),
    /// Facility fault scenario and trip-outcome tables.
    Facility(Common),
    /// Cross-module invariant suite; exits nonzero if any check fails.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML). Optional for `validate`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the scenario's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for parallel cells.
    #[arg(long)]
    jobs: Option<usize>,
    /// Integration step in seconds; overrides the scenario.
    #[arg(long)]
    dt: Option<f64>,
}

fn load(kind: ScenarioKind, args: &Common) -> Result<ScenarioConfig, String> {
    let config = match (&args.config, kind) {
        (Some(path), _) => parse_scenario(path).map_err(|e| e.to_string())?,
        (None, ScenarioKind::Validate) => ScenarioConfig::new(ScenarioKind::Validate),
        (None, _) => return Err(format!("--config is required for `{}`", kind.label())),
    };
    if config.kind != kind {
        return Err(format!(
            "scenario kind `{}` does not match this subcommand (expected `{}`)",
            config.kind.label(),
            kind.label()
        ));
    }
    apply_overrides(config, args.out.clone(), args.dt).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Run(a) => (ScenarioKind::Single, a),
        Command::Sweep(a) => (ScenarioKind::Sweep, a),
        Command::Facility(a) => (ScenarioKind::Facility, a),
        Command::Validate(a) => (ScenarioKind::Validate, a),
    };
    let config = match load(kind, args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = cryptoload_cli::run::output_dir(&config);
    let manifest = match execute(&config, &ExecOptions { jobs: args.jobs }) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if kind == ScenarioKind::Validate {
        match read_validation(&dir) {
            Ok(report) => {
                for c in &report.checks {
                    println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
            }
            Err(e) => eprintln!("warning: could not read validation report: {e}"),
        }
    }
    for f in &manifest.files {
        println!("wrote {}", dir.join(&f.path).display());
    }
    println!("wrote {}", dir.join(cryptoload_cli::run::MANIFEST_FILE).display());
    if manifest.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
