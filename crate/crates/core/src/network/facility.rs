//! Mining facility behind a Δ-Yg transformer: one aggregated converter
//! block per phase at the premises bus, and three-phase faults at the
//! premises or on the grid side.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::phasor::solve_circuit;
use super::{Branch, Circuit, CompanionSystem, FaultSpec, NetworkModel, TransformerSpec, PHASES};
use crate::converter::{ConverterParams, TripStatus};
use crate::engine::{run_simulation, ConverterSlot, Excitation, RunResult, SimConfig};
use crate::error::{Error, Result};
use crate::signals::{HarmonicComponent, HarmonicSpec};

pub const PHASE_LABELS: [&str; PHASES] = ["a", "b", "c"];

/// Premises bus and its shunt filter capacitance, given per miner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PremisesSpec {
    pub bus: String,
    pub capacitance_per_miner: f64,
    pub damping_ohms_per_miner: f64,
}

impl Default for PremisesSpec {
    fn default() -> Self {
        Self {
            bus: "premises".into(),
            capacitance_per_miner: 1.0e-6,
            damping_ohms_per_miner: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacilityScenario {
    /// Grid-side network, in its own (primary) units.
    pub network: NetworkModel,
    pub transformer: TransformerSpec,
    /// Grid bus feeding the transformer primary.
    pub primary_bus: String,
    #[serde(default)]
    pub premises: PremisesSpec,
    pub miners_per_phase: u32,
    #[serde(default)]
    pub miner: ConverterParams,
    pub fault: FaultSpec,
    pub sim: SimConfig,
}

/// Where the standard scenarios apply their fault.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultLocation {
    /// Inside the premises, on the transformer secondary.
    Premises,
    /// On the grid at bus 3, near the PV park.
    Bus3,
}

/// Miners per phase for a ~1 MW facility of 3.2 kW units.
pub const DEFAULT_MINERS_PER_PHASE: u32 = 104;
/// Fault application time: the facility has settled well before this.
pub const DEFAULT_FAULT_TIME: f64 = 0.4;
/// Simulated time kept after the fault clears.
pub const POST_FAULT_S: f64 = 0.15;

fn ln(v_ll: f64) -> f64 {
    v_ll / 3f64.sqrt()
}

/// Series RL of a Thevenin source with short-circuit level `s_sc_mva`.
fn thevenin(v_ll: f64, s_sc_mva: f64, x_over_r: f64, f0: f64) -> (f64, f64) {
    let z = v_ll * v_ll / (s_sc_mva * 1e6);
    let r = z / (1.0 + x_over_r * x_over_r).sqrt();
    (r, r * x_over_r / (2.0 * PI * f0))
}

/// Series RL absorbing `p_mw` at `v_ll` with power factor `pf` (lagging).
fn load_rl(v_ll: f64, p_mw: f64, pf: f64, f0: f64) -> (f64, f64) {
    let s = p_mw * 1e6 / pf;
    let z = v_ll * v_ll / s;
    let r = z * pf;
    let x = z * (1.0 - pf * pf).sqrt();
    (r, x / (2.0 * PI * f0))
}

/// Reduced grid as seen from bus 6: a 25 kV Thevenin source.
pub fn fault1_network() -> NetworkModel {
    let f0 = 60.0;
    let (r, l) = thevenin(25_000.0, 100.0, 10.0, f0);
    NetworkModel {
        line_frequency: f0,
        buses: vec!["bus6".into()],
        branches: vec![Branch::Source {
            name: "grid".into(),
            bus: "bus6".into(),
            v_rms: ln(25_000.0),
            phase_deg: 0.0,
            r,
            l,
        }],
        attachments: vec![],
    }
}

/// Source bus, bus 3 and bus 6 meshed by three RL lines, with a 30 MW
/// constant-impedance load at buses 3 and 6 and a harmonic source standing
/// in for the PV park at bus 3.
pub fn fault2_network() -> NetworkModel {
    let f0 = 60.0;
    let v = 25_000.0;
    let (rs, ls) = thevenin(v, 500.0, 10.0, f0);
    let (rl, ll) = load_rl(v, 30.0, 0.95, f0);
    let x_line = |x: f64| x / (2.0 * PI * f0);
    let (rpv, lpv) = thevenin(v, 75.0 / 0.15, 10.0, f0);
    NetworkModel {
        line_frequency: f0,
        buses: vec!["bus1".into(), "bus3".into(), "bus6".into()],
        branches: vec![
            Branch::Source {
                name: "grid".into(),
                bus: "bus1".into(),
                v_rms: ln(v),
                phase_deg: 0.0,
                r: rs,
                l: ls,
            },
            Branch::Line {
                name: "line13".into(),
                from: "bus1".into(),
                to: "bus3".into(),
                r: 0.1,
                l: x_line(0.8),
            },
            Branch::Line {
                name: "line36".into(),
                from: "bus3".into(),
                to: "bus6".into(),
                r: 0.1,
                l: x_line(0.8),
            },
            Branch::Line {
                name: "line16".into(),
                from: "bus1".into(),
                to: "bus6".into(),
                r: 0.2,
                l: x_line(1.6),
            },
            Branch::Load {
                name: "load3".into(),
                bus: "bus3".into(),
                r: rl,
                l: ll,
            },
            Branch::Load {
                name: "load6".into(),
                bus: "bus6".into(),
                r: rl,
                l: ll,
            },
            Branch::HarmonicSource {
                name: "pv".into(),
                bus: "bus3".into(),
                v_rms: ln(v),
                phase_deg: 0.0,
                r: rpv,
                l: lpv,
                harmonics: pv_harmonics(),
            },
        ],
        attachments: vec![],
    }
}

/// Non-triplen placeholder spectrum for the PV park stand-in.
fn pv_harmonics() -> HarmonicSpec {
    HarmonicSpec {
        components: vec![
            HarmonicComponent {
                order: 5,
                amplitude_fraction: 0.08,
                phase_deg: 0.0,
            },
            HarmonicComponent {
                order: 7,
                amplitude_fraction: 0.06,
                phase_deg: 45.0,
            },
            HarmonicComponent {
                order: 11,
                amplitude_fraction: 0.03,
                phase_deg: 0.0,
            },
            HarmonicComponent {
                order: 13,
                amplitude_fraction: 0.02,
                phase_deg: 90.0,
            },
        ],
        decay_constant: 8.0,
    }
}

impl FaultLocation {
    pub fn network(self) -> NetworkModel {
        match self {
            FaultLocation::Premises => fault1_network(),
            FaultLocation::Bus3 => fault2_network(),
        }
    }

    pub fn bus(self) -> &'static str {
        match self {
            FaultLocation::Premises => "premises",
            FaultLocation::Bus3 => "bus3",
        }
    }
}

impl FacilityScenario {
    /// Standard facility on the network for `location`, with a fault of
    /// `impedance_ohms` lasting `duration_s` applied at the default time.
    pub fn standard(location: FaultLocation, impedance_ohms: f64, duration_s: f64) -> Self {
        let fault = FaultSpec {
            bus: location.bus().into(),
            impedance_ohms,
            apply_time: DEFAULT_FAULT_TIME,
            duration_s,
        };
        Self {
            network: location.network(),
            transformer: TransformerSpec::facility_default(),
            primary_bus: "bus6".into(),
            premises: PremisesSpec::default(),
            miners_per_phase: DEFAULT_MINERS_PER_PHASE,
            miner: ConverterParams::default(),
            sim: SimConfig {
                t_end: fault.clear_time() + POST_FAULT_S,
                ..SimConfig::default()
            },
            fault,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.miners_per_phase < 1 {
            return Err(Error::invalid("miners_per_phase", "must be >= 1"));
        }
        let p = &self.premises;
        if !(p.capacitance_per_miner > 0.0 && p.damping_ohms_per_miner >= 0.0) {
            return Err(Error::invalid("premises", "capacitance must be > 0, damping >= 0"));
        }
        self.miner.validate()?;
        self.fault.validate()?;
        self.sim.validate()?;
        self.full_network()?.validate()
    }

    /// The same scenario with a different fault resistance and duration;
    /// the run is extended to cover the new clearing time.
    pub fn with_fault(&self, impedance_ohms: f64, duration_s: f64) -> Self {
        let mut s = self.clone();
        s.fault.impedance_ohms = impedance_ohms;
        s.fault.duration_s = duration_s;
        s.sim.t_end = s.sim.t_end.max(s.fault.clear_time() + POST_FAULT_S);
        s
    }

    /// Aggregated per-phase converter block.
    pub fn block_params(&self) -> ConverterParams {
        self.miner.aggregate(self.miners_per_phase)
    }

    /// Grid network plus transformer, premises bus and filter capacitance.
    pub fn full_network(&self) -> Result<NetworkModel> {
        let mut net = self.network.clone();
        if !net.buses.contains(&self.primary_bus) {
            return Err(Error::UnknownBus(self.primary_bus.clone()));
        }
        if net.buses.contains(&self.premises.bus) {
            return Err(Error::invalid(
                "premises.bus",
                format!("`{}` already exists in the grid network", self.premises.bus),
            ));
        }
        let n = f64::from(self.miners_per_phase.max(1));
        net.buses.push(self.premises.bus.clone());
        net.branches.push(Branch::Transformer {
            name: "xfmr".into(),
            from: self.primary_bus.clone(),
            to: self.premises.bus.clone(),
            spec: self.transformer,
        });
        net.branches.push(Branch::Capacitor {
            name: "premises_filter".into(),
            bus: self.premises.bus.clone(),
            c: self.premises.capacitance_per_miner * n,
            r: self.premises.damping_ohms_per_miner / n,
        });
        net.attachments = vec![self.premises.bus.clone()];
        Ok(net)
    }
}

/// Fraction of phases tripped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TripOutcome {
    #[serde(rename = "none")]
    NoneTrip,
    #[serde(rename = "1/3")]
    OneThird,
    #[serde(rename = "2/3")]
    TwoThirds,
    #[serde(rename = "all")]
    AllTrip,
}

impl TripOutcome {
    pub fn from_count(tripped: usize) -> Self {
        match tripped {
            0 => TripOutcome::NoneTrip,
            1 => TripOutcome::OneThird,
            2 => TripOutcome::TwoThirds,
            _ => TripOutcome::AllTrip,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TripOutcome::NoneTrip => "none",
            TripOutcome::OneThird => "1/3",
            TripOutcome::TwoThirds => "2/3",
            TripOutcome::AllTrip => "all",
        }
    }

    /// Parses the outcome alphabet, also accepting the table words
    /// `NO` (none tripped) and `YES` (all tripped).
    pub fn parse(s: &str) -> Option<Self> {
        let t = s.trim().to_ascii_lowercase().replace(' ', "");
        match t.as_str() {
            "none" | "no" | "none-trip" => Some(TripOutcome::NoneTrip),
            "1/3" | "1/3trip" => Some(TripOutcome::OneThird),
            "2/3" | "2/3trip" => Some(TripOutcome::TwoThirds),
            "all" | "yes" | "all-trip" => Some(TripOutcome::AllTrip),
            _ => None,
        }
    }
}

impl fmt::Display for TripOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutcome {
    pub phase: String,
    pub trip: TripStatus,
}

#[derive(Debug, Clone)]
pub struct FacilityResult {
    pub phases: Vec<PhaseOutcome>,
    pub outcome: TripOutcome,
    pub fault_bus: String,
    pub run: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilitySummary {
    pub schema: String,
    pub outcome: TripOutcome,
    pub phases: Vec<PhaseOutcome>,
    pub fault: FaultSpec,
    pub steady_state_time_s: Option<f64>,
    pub miners_per_phase: u32,
}

pub const FACILITY_SUMMARY_SCHEMA: &str = "cryptoload.facility-summary/1";

impl FacilityResult {
    pub fn summary(&self, scenario: &FacilityScenario) -> FacilitySummary {
        FacilitySummary {
            schema: FACILITY_SUMMARY_SCHEMA.into(),
            outcome: self.outcome,
            phases: self.phases.clone(),
            fault: scenario.fault.clone(),
            steady_state_time_s: self.run.steady_state_time,
            miners_per_phase: scenario.miners_per_phase,
        }
    }

    pub fn tripped_phases(&self) -> usize {
        self.phases.iter().filter(|p| p.trip.is_tripped()).count()
    }
}

pub fn run_facility_scenario(scenario: &FacilityScenario) -> Result<FacilityResult> {
    scenario.validate()?;
    let net = scenario.full_network()?;
    let mut system = CompanionSystem::new(&net, std::slice::from_ref(&scenario.fault), scenario.sim.dt)?;
    let block = scenario.block_params();
    let slots: Vec<ConverterSlot> = PHASE_LABELS
        .iter()
        .enumerate()
        .map(|(p, label)| ConverterSlot::new(*label, block, p))
        .collect();
    let run = run_simulation(Excitation::Network(&mut system), &slots, &scenario.sim)?;
    match run.steady_state_time {
        Some(t) if t <= scenario.fault.apply_time => {}
        _ => {
            return Err(Error::Validation(format!(
                "facility did not settle before the fault at {} s",
                scenario.fault.apply_time
            )))
        }
    }
    let phases: Vec<PhaseOutcome> = run
        .converters
        .iter()
        .map(|c| PhaseOutcome {
            phase: c.label.clone(),
            trip: c.trip,
        })
        .collect();
    let outcome = TripOutcome::from_count(phases.iter().filter(|p| p.trip.is_tripped()).count());
    Ok(FacilityResult {
        phases,
        outcome,
        fault_bus: scenario.fault.bus.clone(),
        run,
    })
}

/// Per-phase peak of the trailing one-cycle inductor RMS from the fault
/// onward, per miner, with overcurrent protection disabled.
pub fn phase_peak_rms(scenario: &FacilityScenario) -> Result<Vec<f64>> {
    let mut s = scenario.clone();
    s.miner.protection.i_trip_rms = 1e12;
    let res = run_facility_scenario(&s)?;
    let trace = &res.run.trace;
    let from = trace.index_at(s.fault.apply_time);
    let n = f64::from(s.miners_per_phase);
    PHASE_LABELS
        .iter()
        .map(|l| {
            let ch = trace.channel(&format!("{l}.i_l_rms"))?;
            Ok(ch[from.min(ch.len())..].iter().fold(0.0f64, |m, &x| m.max(x)) / n)
        })
        .collect()
}

/// Range of per-miner trip thresholds (A) for which `scenario` trips some
/// but not all phases: thresholds in `[lo, hi)` trip at least the phase with
/// the highest peak and spare at least the one with the lowest.
pub fn partial_trip_window(scenario: &FacilityScenario) -> Result<(f64, f64)> {
    let peaks = phase_peak_rms(scenario)?;
    let lo = peaks.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = peaks.iter().copied().fold(0.0, f64::max);
    Ok((lo, hi))
}

/// Fundamental retained fraction at `at_bus` for a fault of `ohms` there,
/// with every converter block replaced by its rated constant impedance.
pub fn retained_fraction(scenario: &FacilityScenario, at_bus: &str, ohms: f64) -> Result<f64> {
    let net = scenario.full_network()?;
    let block = scenario.block_params();
    let y_conv = Complex64::new(block.p_av / block.v_in_rms_nom.powi(2), 0.0);
    let fault = FaultSpec {
        bus: at_bus.to_string(),
        impedance_ohms: ohms,
        apply_time: 0.0,
        duration_s: 1.0,
    };
    let circuit = Circuit::build(&net, std::slice::from_ref(&fault))?;
    let shunts: Vec<(usize, Complex64)> = circuit.attachments.iter().map(|&k| (k, y_conv)).collect();
    let k = circuit.node_index(at_bus)?;
    let pre = solve_circuit(&circuit, &[false], &shunts)?.voltages[k].norm();
    let post = solve_circuit(&circuit, &[true], &shunts)?.voltages[k].norm();
    if pre == 0.0 {
        return Err(Error::invalid("at_bus", format!("`{at_bus}` is dead before the fault")));
    }
    Ok(post / pre)
}

/// Fault resistance at `at_bus` (in that bus's own ohms) that leaves
/// `target` of the pre-fault fundamental voltage there, by bisection on
/// the phasor solution.
pub fn calibrate_fault_impedance(scenario: &FacilityScenario, target: f64, at_bus: &str) -> Result<f64> {
    if !(0.0..1.0).contains(&target) {
        return Err(Error::invalid("target_retained_fraction", "must lie in [0, 1)"));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    let floor = retained_fraction(scenario, at_bus, 0.0)?;
    if target < floor {
        return Err(Error::UnreachableSag { target, floor });
    }
    let mut hi = 1e-6;
    while retained_fraction(scenario, at_bus, hi)? < target {
        hi *= 4.0;
        if hi > 1e12 {
            return Err(Error::invalid(
                "target_retained_fraction",
                format!("{target} needs an unbounded fault impedance"),
            ));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = if lo == 0.0 { hi / 4.0 } else { (lo * hi).sqrt() };
        let mid = if mid <= lo { 0.5 * (lo + hi) } else { mid };
        if retained_fraction(scenario, at_bus, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-9 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn outcome_labels_round_trip() {
        for o in [
            TripOutcome::NoneTrip,
            TripOutcome::OneThird,
            TripOutcome::TwoThirds,
            TripOutcome::AllTrip,
        ] {
            assert_eq!(TripOutcome::parse(o.label()), Some(o));
        }
        assert_eq!(TripOutcome::parse("YES"), Some(TripOutcome::AllTrip));
        assert_eq!(TripOutcome::parse("NO"), Some(TripOutcome::NoneTrip));
        assert_eq!(TripOutcome::parse("1 / 3 TRIP"), Some(TripOutcome::OneThird));
        assert_eq!(TripOutcome::from_count(2), TripOutcome::TwoThirds);
    }

    #[test]
    fn bolted_target_is_zero_ohms() {
        let s = FacilityScenario::standard(FaultLocation::Premises, 0.0, 0.015);
        assert_eq!(calibrate_fault_impedance(&s, 0.0, "premises").unwrap(), 0.0);
    }

    #[test]
    fn calibrated_impedance_reproduces_target() {
        let s = FacilityScenario::standard(FaultLocation::Premises, 0.0, 0.015);
        for target in [0.25, 0.5, 0.75] {
            let z = calibrate_fault_impedance(&s, target, "premises").unwrap();
            let got = retained_fraction(&s, "premises", z).unwrap();
            assert_relative_eq!(got, target, max_relative = 1e-6);
        }
    }

    #[test]
    fn retained_monotone_in_impedance() {
        let s = FacilityScenario::standard(FaultLocation::Bus3, 0.0, 0.015);
        let mut last = 0.0;
        for k in 0..40 {
            let z = 1e-3 * 1.5f64.powi(k);
            let r = retained_fraction(&s, "bus3", z).unwrap();
            assert!(r >= last - 1e-12);
            last = r;
        }
    }

    #[test]
    fn target_one_is_rejected() {
        let s = FacilityScenario::standard(FaultLocation::Premises, 0.0, 0.015);
        assert!(calibrate_fault_impedance(&s, 1.0, "premises").is_err());
    }

    #[test]
    fn floor_is_reported() {
        let s = FacilityScenario::standard(FaultLocation::Bus3, 0.0, 0.015);
        let floor = retained_fraction(&s, "premises", 0.0).unwrap();
        assert!(floor < 1e-3);
        match calibrate_fault_impedance(&s, floor / 2.0, "premises") {
            Err(Error::UnreachableSag { floor: f, .. }) => assert_relative_eq!(f, floor),
            other => panic!("{other:?}"),
        }
    }
}
