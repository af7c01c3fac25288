//! Cross-module invariant suite: steady-state quality, energy accounting,
//! sag behavior, network steady state, sweep structure, facility pattern
//! and determinism. Each check reports pass/fail with a short detail line.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::converter::{ideal_cpl_current, rectified_input, Converter, ConverterParams, SizingInputs};
use crate::engine::{run_single, RunResult, SimConfig};
use crate::error::Result;
use crate::lvrt::{extract_boundary, run_sag_experiment, sweep_capability, SweepGrid};
use crate::network::{
    assemble_companion, calibrate_fault_impedance, phasor_solve, run_facility_scenario, transformer_secondary, Branch,
    FacilityScenario, FaultLocation, NetworkModel, TransformerSpec, TripOutcome,
};
use crate::signals::{fundamental_phasor, LineSource, SagSpec, SineSpec};

pub const VALIDATION_REPORT_SCHEMA: &str = "cryptoload.validation-report/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema: String,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationOptions {
    /// Runs the 48-cell sweep and the facility fault cells.
    pub include_sweeps: bool,
    pub dt: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            include_sweeps: true,
            dt: SimConfig::default().dt,
        }
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

fn failed(name: &str, e: crate::error::Error) -> Check {
    check(name, false, format!("error: {e}"))
}

fn nominal_run(params: &ConverterParams, dt: f64) -> Result<RunResult> {
    let source = LineSource::ideal(SineSpec::new(params.v_in_rms_nom, params.line_frequency, 0.0)?);
    run_single(
        source,
        *params,
        &SimConfig {
            dt,
            ..SimConfig::default()
        },
    )
}

fn steady_checks(params: &ConverterParams, dt: f64) -> Vec<Check> {
    let run = match nominal_run(params, dt) {
        Ok(r) => r,
        Err(e) => return vec![failed("power_factor", e)],
    };
    let Some(m) = run.metrics() else {
        return vec![check("power_factor", false, "converter never settled".into())];
    };
    let mut out = vec![check(
        "power_factor",
        (0.99..=1.0).contains(&m.pf) && m.leading,
        format!("pf {:.4}, {}", m.pf, if m.leading { "leading" } else { "lagging" }),
    )];

    let trace = &run.trace;
    let rate = trace.sample_rate();
    let per = (rate / params.line_frequency).round() as usize;
    let v = trace.channel("v_in").unwrap_or_default();
    let i = trace.channel("i_in").unwrap_or_default();
    let start = trace.index_at(m.window_start_s);
    let mut worst: f64 = 0.0;
    let mut k = start;
    while k + per <= v.len() {
        let rms = |x: &[f64]| (x.iter().map(|a| a * a).sum::<f64>() / x.len() as f64).sqrt();
        let s = rms(&v[k..k + per]) * rms(&i[k..k + per]);
        worst = worst.max((s - params.p_av).abs() / params.p_av);
        k += per;
    }
    out.push(check(
        "cpl_identity",
        worst < 0.02,
        format!("worst cycle |S - P|/P = {:.4}", worst),
    ));

    let target = SizingInputs::default().dc_ripple_pp;
    let mean_err = (m.v_dc_mean - params.v_dc_ref).abs() / params.v_dc_ref;
    let ripple_err = (m.v_dc_ripple - target).abs() / target;
    out.push(check(
        "dc_regulation",
        mean_err < 0.01 && ripple_err <= 0.25,
        format!(
            "mean {:.2} V, ripple {:.2} V pp (target {target} V)",
            m.v_dc_mean, m.v_dc_ripple
        ),
    ));

    let end = (start + per * ((v.len() - start) / per)).min(v.len());
    let vv = &v[start..end];
    let vrms = (vv.iter().map(|a| a * a).sum::<f64>() / vv.len() as f64).sqrt();
    let ideal: Vec<f64> = vv.iter().map(|&x| ideal_cpl_current(x, vrms, params)).collect();
    let got = fundamental_phasor(&i[start..end], rate, params.line_frequency);
    let want = fundamental_phasor(&ideal, rate, params.line_frequency);
    let amp = (got.norm() - want.norm()).abs() / want.norm();
    let phase = ((got / want).arg().to_degrees()).abs();
    out.push(check(
        "cpl_oracle",
        amp < 0.05 && phase < 5.0,
        format!("amplitude error {:.4}, phase error {:.3} deg", amp, phase),
    ));
    out
}

/// Lossless converter on an ideal source: per-cycle energy into the boost
/// stage against load energy plus stored-energy change.
pub fn energy_balance_error(dt: f64, cycles: usize) -> Result<f64> {
    let mut p = ConverterParams::default();
    p.series_resistance = 0.0;
    p.diode_drop = 0.0;
    let sine = SineSpec::new(p.v_in_rms_nom, p.line_frequency, 0.0)?;
    let mut conv = Converter::new(p, dt)?;
    let per = p.cycle_samples(dt);
    let settle = (0.3 / dt) as usize;
    let stored = |c: &Converter| {
        let s = c.state();
        0.5 * p.inductance * s.i_l * s.i_l + 0.5 * p.capacitance * s.v_dc * s.v_dc
    };
    let mut worst: f64 = 0.0;
    let mut n = 0usize;
    for _ in 0..settle {
        let (a, b) = (n as f64 * dt, (n + 1) as f64 * dt);
        conv.step(
            crate::signals::sample_source(&sine, a),
            crate::signals::sample_source(&sine, b),
            dt,
            false,
        )?;
        n += 1;
    }
    for _ in 0..cycles {
        let e0 = stored(&conv);
        let (mut e_in, mut e_load) = (0.0, 0.0);
        for _ in 0..per {
            let (a, b) = (n as f64 * dt, (n + 1) as f64 * dt);
            let (va, vb) = (
                crate::signals::sample_source(&sine, a),
                crate::signals::sample_source(&sine, b),
            );
            let f = conv.step(va, vb, dt, false)?;
            let v_rect = 0.5 * (rectified_input(va, 0.0) + rectified_input(vb, 0.0));
            e_in += v_rect * f.i_l_mean * dt;
            e_load += f.load_power * dt;
            n += 1;
        }
        let err = (e_in - e_load - (stored(&conv) - e0)).abs() / e_in;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn zero_voltage_check(params: &ConverterParams, dt: f64) -> Check {
    let name = "zero_voltage_current";
    let run = || -> Result<f64> {
        let sine = SineSpec::new(params.v_in_rms_nom, params.line_frequency, 0.0)?;
        let sag = SagSpec::new(0.0, 0.0, 0.05)?;
        let source = LineSource::with_sag(sine, sag, crate::lvrt::SAG_ARM_TIME_S);
        let onset = source.sag.expect("sag set").onset_s;
        let cfg = SimConfig {
            dt,
            t_end: onset + 0.06,
            ..SimConfig::default()
        };
        let res = run_single(source, *params, &cfg)?;
        let trace = &res.trace;
        let i = trace.channel("i_in")?;
        let per = (trace.sample_rate() / params.line_frequency).round() as usize;
        let k = trace.index_at(onset + 1.0 / params.line_frequency).min(i.len());
        let w = &i[k.saturating_sub(per)..k];
        Ok((w.iter().map(|a| a * a).sum::<f64>() / w.len() as f64).sqrt())
    };
    match run() {
        Ok(rms) => {
            let rated = params.rated_input_current();
            check(
                name,
                rms < 0.01 * rated,
                format!("trailing RMS {:.4} A one cycle after onset ({:.2} A rated)", rms, rated),
            )
        }
        Err(e) => failed(name, e),
    }
}

/// Three buses: source behind RL, two lines, RL loads and a damped capacitor.
pub fn sample_rl_network() -> NetworkModel {
    NetworkModel {
        line_frequency: 60.0,
        buses: vec!["a".into(), "b".into(), "c".into()],
        branches: vec![
            Branch::Source {
                name: "g".into(),
                bus: "a".into(),
                v_rms: 240.0,
                phase_deg: 10.0,
                r: 0.05,
                l: 2e-4,
            },
            Branch::Line {
                name: "ab".into(),
                from: "a".into(),
                to: "b".into(),
                r: 0.1,
                l: 5e-4,
            },
            Branch::Load {
                name: "ld".into(),
                bus: "b".into(),
                r: 4.0,
                l: 8e-3,
            },
            Branch::Capacitor {
                name: "cb".into(),
                bus: "b".into(),
                c: 100e-6,
                r: 0.5,
            },
            Branch::Line {
                name: "bc".into(),
                from: "b".into(),
                to: "c".into(),
                r: 0.2,
                l: 1e-3,
            },
            Branch::Load {
                name: "lc".into(),
                bus: "c".into(),
                r: 9.0,
                l: 4e-3,
            },
        ],
        attachments: vec![],
    }
}

/// Worst relative difference between the transient solution's fundamental
/// and the phasor solution at every bus, after `cycles` cycles.
pub fn network_steady_state_error(model: &NetworkModel, dt: f64, cycles: usize) -> Result<f64> {
    let mut sys = assemble_companion(model, dt)?;
    let f0 = model.line_frequency;
    let per = (1.0 / (f0 * dt)).round() as usize;
    let buses = model.buses.clone();
    let mut rec = vec![Vec::with_capacity(per); buses.len()];
    for n in 0..per * cycles {
        sys.step(n as f64 * dt, &[])?;
        if n >= per * (cycles - 1) {
            for (b, r) in buses.iter().zip(rec.iter_mut()) {
                r.push(sys.node_voltage(b, 0)?);
            }
        }
    }
    let sol = phasor_solve(model, &[], &[])?;
    let mut worst: f64 = 0.0;
    for (b, r) in buses.iter().zip(&rec) {
        let t0 = (per * (cycles - 1)) as f64 * dt;
        let back = Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f0 * t0);
        let got = fundamental_phasor(r, 1.0 / dt, f0) * back / 2f64.sqrt();
        let want = sol.voltage(b)?;
        worst = worst.max((got - want).norm() / want.norm());
    }
    Ok(worst)
}

fn network_checks(dt: f64) -> Vec<Check> {
    let mut out = Vec::new();
    match network_steady_state_error(&sample_rl_network(), dt, 30) {
        Ok(e) => out.push(check("network_phasor", e < 0.005, format!("worst bus error {:.2e}", e))),
        Err(e) => out.push(failed("network_phasor", e)),
    }
    let sec = transformer_secondary(&TransformerSpec::facility_default(), 60.0);
    let expected = 415.0 / 3f64.sqrt();
    out.push(check(
        "transformer_secondary",
        (sec.v_ln_no_load - expected).abs() < 1e-9 * expected,
        format!("{:.2} V line-to-neutral", sec.v_ln_no_load),
    ));
    out
}

fn sweep_checks(params: &ConverterParams, dt: f64) -> Vec<Check> {
    let sim = SimConfig {
        dt,
        ..SimConfig::default()
    };
    let map = match sweep_capability(params, &SweepGrid::default(), &sim) {
        Ok(m) => m,
        Err(e) => return vec![failed("sweep_monotone", e)],
    };
    let failed_cells = map.failed_points().len();
    let violations = map.monotonicity_violations().len();
    let pow = map.pow_sensitive_cells();
    let boundary = extract_boundary(&map);
    let b50 = boundary
        .iter()
        .find(|b| b.retained_fraction == 0.5)
        .map(|b| b.min_trip_duration_s);
    vec![
        check(
            "sweep_monotone",
            failed_cells == 0 && violations == 0,
            format!("{violations} violations, {failed_cells} failed cells"),
        ),
        check(
            "pow_sensitivity",
            !pow.is_empty(),
            format!("{} angle-sensitive cells", pow.len()),
        ),
        check(
            "boundary_at_half_voltage",
            matches!(b50, Some(d) if d > 0.015 && d <= 0.045),
            b50.map_or("50% never trips".into(), |d| {
                format!("50% trips from {} ms", d * 1000.0)
            }),
        ),
    ]
}

type Expected = (f64, f64, fn(TripOutcome) -> bool);

fn facility_check() -> Check {
    let name = "facility_pattern";
    let run = || -> Result<(bool, String)> {
        let base = FacilityScenario::standard(FaultLocation::Premises, 0.0, 0.045);
        let cases: [Expected; 7] = [
            (0.5, 0.045, |o| {
                o == TripOutcome::OneThird || o == TripOutcome::TwoThirds
            }),
            (0.75, 0.009, |o| o == TripOutcome::NoneTrip),
            (0.75, 0.015, |o| o == TripOutcome::NoneTrip),
            (0.75, 0.045, |o| o == TripOutcome::NoneTrip),
            (0.75, 0.100, |o| o == TripOutcome::NoneTrip),
            (0.0, 0.015, |o| o == TripOutcome::AllTrip),
            (0.5, 0.015, |o| o == TripOutcome::NoneTrip),
        ];
        let mut ok = true;
        let mut detail = Vec::new();
        for (r, d, good) in cases {
            let z = calibrate_fault_impedance(&base, r, "premises")?;
            let res = run_facility_scenario(&base.with_fault(z, d))?;
            ok &= good(res.outcome);
            detail.push(format!("{}%/{}ms {}", r * 100.0, d * 1000.0, res.outcome));
        }
        Ok((ok, detail.join(", ")))
    };
    match run() {
        Ok((ok, d)) => check(name, ok, d),
        Err(e) => failed(name, e),
    }
}

fn determinism_check(params: &ConverterParams, dt: f64) -> Check {
    let name = "determinism";
    let once = || -> Result<Vec<u8>> {
        let sag = SagSpec::new(0.5, 45.0, 0.015)?;
        let point = run_sag_experiment(
            params,
            sag,
            &SimConfig {
                dt,
                ..SimConfig::default()
            },
        )?;
        Ok(serde_json::to_vec(&point)?)
    };
    match (once(), once()) {
        (Ok(a), Ok(b)) => check(name, a == b, "repeated sag run serialized identically".into()),
        (Err(e), _) | (_, Err(e)) => failed(name, e),
    }
}

/// Runs the whole suite with default parameters.
pub fn run_invariant_suite(opts: &ValidationOptions) -> ValidationReport {
    let params = ConverterParams::default();
    let mut checks = steady_checks(&params, opts.dt);
    checks.push(match energy_balance_error(opts.dt, 5) {
        Ok(e) => check("energy_balance", e < 1e-3, format!("worst cycle error {:.2e}", e)),
        Err(e) => failed("energy_balance", e),
    });
    checks.push(zero_voltage_check(&params, opts.dt));
    checks.extend(network_checks(opts.dt));
    if opts.include_sweeps {
        checks.extend(sweep_checks(&params, opts.dt));
        checks.push(facility_check());
    }
    checks.push(determinism_check(&params, opts.dt));
    ValidationReport {
        schema: VALIDATION_REPORT_SCHEMA.into(),
        checks,
    }
}
