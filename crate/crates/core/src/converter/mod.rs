//! Switching-level single-phase PFC boost converter: diode bridge, boost
//! stage, cascaded PI control with PWM, constant-power DC load and
//! protection.

mod control;
mod dynamics;
mod protection;
mod sizing;

use serde::{Deserialize, Serialize};

pub use control::{control_step, ControlOutput};
pub use dynamics::{electrical_step, StepFlows};
pub use protection::check_protection;
pub use sizing::{design_pi_gains, size_components, ComponentSizes, LoopBandwidths, PiGains, SizingInputs};

use crate::error::{Error, Result};
use crate::signals::RunningRms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    On,
    Off,
}

impl Gate {
    pub fn is_on(self) -> bool {
        self == Gate::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtectionParams {
    pub i_trip_rms: f64,
    pub v_dc_over: f64,
    pub v_dc_under: f64,
    pub uv_ov_delay_s: f64,
    pub latching: bool,
    /// DC-bus over/undervoltage tripping; overcurrent is always active.
    pub dc_voltage_enabled: bool,
}

impl Default for ProtectionParams {
    fn default() -> Self {
        ProtectionParams::for_rating(DEFAULT_P_AV, DEFAULT_V_IN, DEFAULT_V_DC)
    }
}

impl ProtectionParams {
    pub fn for_rating(p_av: f64, v_in_rms_nom: f64, v_dc_ref: f64) -> Self {
        Self {
            i_trip_rms: DEFAULT_TRIP_RATIO * p_av / v_in_rms_nom,
            v_dc_over: 1.2 * v_dc_ref,
            v_dc_under: 0.7 * v_dc_ref,
            uv_ov_delay_s: 0.01,
            latching: true,
            dc_voltage_enabled: false,
        }
    }
}

pub const DEFAULT_P_AV: f64 = 3200.0;
pub const DEFAULT_V_IN: f64 = 240.0;
pub const DEFAULT_V_DC: f64 = 400.0;
/// Default RMS trip threshold as a multiple of rated input current.
pub const DEFAULT_TRIP_RATIO: f64 = 2.685;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConverterParams {
    pub p_av: f64,
    pub v_in_rms_nom: f64,
    pub v_dc_ref: f64,
    pub line_frequency: f64,
    pub inductance: f64,
    pub capacitance: f64,
    pub series_resistance: f64,
    pub diode_drop: f64,
    pub f_switch: f64,
    pub duty_max: f64,
    /// Division guard in V² for the current-reference multiplier.
    pub epsilon: f64,
    /// Upper limit of the voltage-loop power command, as a multiple of `p_av`.
    pub power_limit_ratio: f64,
    /// Adds `1 − v_rect/v_dc` to the current-loop output.
    pub duty_feedforward: bool,
    /// The DC load browns out below this fraction of `v_dc_ref`.
    pub load_cutoff_ratio: f64,
    pub pi_voltage: PiGains,
    pub pi_current: PiGains,
    pub protection: ProtectionParams,
}

impl Default for ConverterParams {
    fn default() -> Self {
        Self::rated(DEFAULT_P_AV)
    }
}

impl ConverterParams {
    /// Parameters for a unit of rated power `p_av` at 240 V / 400 V / 60 Hz,
    /// with L, C and loop gains from the sizing and gain-design routines.
    pub fn rated(p_av: f64) -> Self {
        Self::designed(p_av, DEFAULT_V_IN, DEFAULT_V_DC, 60.0, 20_000.0)
    }

    pub fn designed(p_av: f64, v_in_rms_nom: f64, v_dc_ref: f64, line_frequency: f64, f_switch: f64) -> Self {
        let sizes = size_components(&SizingInputs {
            p_av,
            v_dc_ref,
            line_frequency,
            f_switch,
            v_in_rms_nom,
            ..SizingInputs::default()
        })
        .expect("default sizing inputs are valid");
        let (pi_voltage, pi_current) = design_pi_gains(
            sizes.inductance,
            sizes.capacitance,
            v_dc_ref,
            &LoopBandwidths::default(),
            line_frequency,
            f_switch,
        )
        .expect("default bandwidths satisfy loop separation");
        Self {
            p_av,
            v_in_rms_nom,
            v_dc_ref,
            line_frequency,
            inductance: sizes.inductance,
            capacitance: sizes.capacitance,
            series_resistance: 0.02,
            diode_drop: 0.7,
            f_switch,
            duty_max: 0.95,
            epsilon: 1.0,
            power_limit_ratio: 1.6,
            duty_feedforward: true,
            load_cutoff_ratio: 0.75,
            pi_voltage,
            pi_current,
            protection: ProtectionParams::for_rating(p_av, v_in_rms_nom, v_dc_ref),
        }
    }

    /// Rated input RMS current `p_av / v_in_rms_nom`.
    pub fn rated_input_current(&self) -> f64 {
        self.p_av / self.v_in_rms_nom
    }

    /// `n` identical units in lockstep folded into one block.
    ///
    /// Currents scale by `n` at unchanged voltages, so power, capacitance and
    /// the trip current scale up, inductance and resistance scale down, the
    /// voltage-loop gains (A/V) scale up and the current-loop gains
    /// (duty/A) scale down.
    pub fn aggregate(&self, n: u32) -> Self {
        let k = f64::from(n.max(1));
        let mut out = *self;
        out.p_av *= k;
        out.inductance /= k;
        out.capacitance *= k;
        out.series_resistance /= k;
        out.pi_voltage.kp *= k;
        out.pi_voltage.ki *= k;
        out.pi_current.kp /= k;
        out.pi_current.ki /= k;
        out.protection.i_trip_rms *= k;
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("p_av", self.p_av),
            ("v_in_rms_nom", self.v_in_rms_nom),
            ("v_dc_ref", self.v_dc_ref),
            ("line_frequency", self.line_frequency),
            ("inductance", self.inductance),
            ("capacitance", self.capacitance),
            ("epsilon", self.epsilon),
            ("power_limit_ratio", self.power_limit_ratio),
            ("protection.i_trip_rms", self.protection.i_trip_rms),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("{v} must be positive")));
            }
        }
        if !(self.series_resistance >= 0.0) {
            return Err(Error::invalid("series_resistance", "must be >= 0"));
        }
        if !(self.diode_drop >= 0.0) {
            return Err(Error::invalid("diode_drop", "must be >= 0"));
        }
        if !(self.duty_max > 0.0 && self.duty_max < 1.0) {
            return Err(Error::invalid("duty_max", "must lie in (0, 1)"));
        }
        if !(self.f_switch >= 100.0 * self.line_frequency) {
            return Err(Error::invalid("f_switch", "must be at least 100 x the line frequency"));
        }
        if !(0.0..1.0).contains(&self.load_cutoff_ratio) {
            return Err(Error::invalid("load_cutoff_ratio", "must lie in [0, 1)"));
        }
        let p = &self.protection;
        if !(p.v_dc_under < self.v_dc_ref && self.v_dc_ref < p.v_dc_over) {
            return Err(Error::invalid(
                "protection",
                "requires v_dc_under < v_dc_ref < v_dc_over",
            ));
        }
        if !(p.uv_ov_delay_s >= 0.0) {
            return Err(Error::invalid("protection.uv_ov_delay_s", "must be >= 0"));
        }
        for (name, g) in [("pi_voltage", self.pi_voltage), ("pi_current", self.pi_current)] {
            if !(g.kp >= 0.0 && g.ki >= 0.0 && g.kp.is_finite() && g.ki.is_finite()) {
                return Err(Error::invalid(name, "gains must be finite and >= 0"));
            }
        }
        Ok(())
    }

    /// Upper limit of the voltage-loop output (DC-side current command, A).
    pub fn dc_current_limit(&self) -> f64 {
        self.power_limit_ratio * self.p_av / self.v_dc_ref
    }

    pub fn load_cutoff(&self) -> f64 {
        self.load_cutoff_ratio * self.v_dc_ref
    }

    /// Samples per fundamental cycle at step `dt`.
    pub fn cycle_samples(&self, dt: f64) -> usize {
        ((1.0 / (self.line_frequency * dt)).round() as usize).max(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripState {
    Armed,
    Tripped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripCause {
    None,
    Overcurrent,
    DcOvervoltage,
    DcUndervoltage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripStatus {
    pub state: TripState,
    pub cause: TripCause,
    pub trip_time: Option<f64>,
}

impl TripStatus {
    pub const ARMED: TripStatus = TripStatus {
        state: TripState::Armed,
        cause: TripCause::None,
        trip_time: None,
    };

    pub fn tripped(cause: TripCause, time: f64) -> Self {
        Self {
            state: TripState::Tripped,
            cause,
            trip_time: Some(time),
        }
    }

    pub fn is_tripped(&self) -> bool {
        self.state == TripState::Tripped
    }
}

impl Default for TripStatus {
    fn default() -> Self {
        Self::ARMED
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConverterState {
    pub i_l: f64,
    pub v_dc: f64,
    pub integ_v: f64,
    pub integ_i: f64,
    pub carrier_phase: f64,
    /// Trailing one-cycle window of inductor current.
    pub rms_buffer: RunningRms,
    pub trip: TripStatus,
    pub t: f64,
    /// Start of the current out-of-band DC-bus excursion, if any.
    pub dc_excursion_since: Option<f64>,
}

impl ConverterState {
    /// Energized state: bus pre-charged to the rectified nominal peak,
    /// controllers at zero.
    pub fn energized(params: &ConverterParams, dt: f64) -> Self {
        let peak = rectified_input(std::f64::consts::SQRT_2 * params.v_in_rms_nom, params.diode_drop);
        Self::with_bus(params, dt, peak)
    }

    pub fn with_bus(params: &ConverterParams, dt: f64, v_dc: f64) -> Self {
        Self {
            i_l: 0.0,
            v_dc,
            integ_v: 0.0,
            integ_i: 0.0,
            carrier_phase: 0.0,
            rms_buffer: RunningRms::new(params.cycle_samples(dt)),
            trip: TripStatus::ARMED,
            t: 0.0,
            dc_excursion_since: None,
        }
    }
}

/// Diode-bridge output for instantaneous line voltage `v`.
pub fn rectified_input(v: f64, diode_drop: f64) -> f64 {
    (v.abs() - 2.0 * diode_drop).max(0.0)
}

/// Constant-power DC load current with a brown-out cutoff.
pub fn dc_load_current(v_dc: f64, params: &ConverterParams) -> f64 {
    if v_dc <= 0.0 || v_dc < params.load_cutoff() {
        0.0
    } else {
        params.p_av / v_dc
    }
}

/// Current of an ideal constant-power load at instantaneous voltage `v`
/// and RMS voltage `v_rms`.
pub fn ideal_cpl_current(v: f64, v_rms: f64, params: &ConverterParams) -> f64 {
    params.p_av * v / (v_rms * v_rms + params.epsilon)
}

/// Per-step record of one converter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConverterSample {
    pub v_in: f64,
    pub i_in: f64,
    pub i_l: f64,
    pub v_dc: f64,
    pub i_ref: f64,
    pub duty: f64,
    pub gate: f64,
    pub i_load: f64,
    pub v_rms_est: f64,
    pub i_l_rms: f64,
}

/// A converter instance advancing in fixed steps.
#[derive(Debug, Clone)]
pub struct Converter {
    params: ConverterParams,
    state: ConverterState,
    v_sense: RunningRms,
    last: ControlOutput,
}

impl Converter {
    /// Line sensing starts settled at the nominal RMS value.
    pub fn new(params: ConverterParams, dt: f64) -> Result<Self> {
        params.validate()?;
        let steps_per_carrier = 1.0 / (params.f_switch * dt);
        if steps_per_carrier < 20.0 - 1e-9 {
            return Err(Error::invalid(
                "dt",
                format!("{steps_per_carrier:.1} steps per carrier period; need >= 20"),
            ));
        }
        let n = params.cycle_samples(dt);
        let mut v_sense = RunningRms::new(n);
        for _ in 0..n {
            v_sense.push(params.v_in_rms_nom);
        }
        Ok(Self {
            state: ConverterState::energized(&params, dt),
            params,
            v_sense,
            last: ControlOutput::default(),
        })
    }

    pub fn params(&self) -> &ConverterParams {
        &self.params
    }

    pub fn state(&self) -> &ConverterState {
        &self.state
    }

    pub fn trip(&self) -> TripStatus {
        self.state.trip
    }

    /// Line-side current drawn at line voltage `v`.
    pub fn line_current(&self, v: f64) -> f64 {
        if v >= 0.0 {
            self.state.i_l
        } else {
            -self.state.i_l
        }
    }

    /// Snapshot of the state at the start of a step with line voltage `v`.
    pub fn sample(&self, v: f64) -> ConverterSample {
        ConverterSample {
            v_in: v,
            i_in: self.line_current(v),
            i_l: self.state.i_l,
            v_dc: self.state.v_dc,
            i_ref: self.last.i_ref,
            duty: self.last.duty,
            gate: if self.last.gate.is_on() { 1.0 } else { 0.0 },
            i_load: if self.state.trip.is_tripped() {
                0.0
            } else {
                dc_load_current(self.state.v_dc, &self.params)
            },
            v_rms_est: self.v_sense.rms(),
            i_l_rms: self.state.rms_buffer.rms(),
        }
    }

    /// Advances one step from `v_start` (line voltage now) to `v_end`
    /// (line voltage at the end of the step).
    ///
    /// Order: line sensing, control, boost-stage integration, protection.
    pub fn step(&mut self, v_start: f64, v_end: f64, dt: f64, protection_armed: bool) -> Result<StepFlows> {
        let p = &self.params;
        self.v_sense.push(v_start);
        if self.state.trip.is_tripped() {
            // input relay open, load off
            self.state.i_l = 0.0;
            self.last = ControlOutput::default();
            self.state.rms_buffer.push(0.0);
            self.state.t += dt;
            return Ok(StepFlows::default());
        }
        let v_rect = rectified_input(v_start, p.diode_drop);
        let v_rect_mid = 0.5 * (v_rect + rectified_input(v_end, p.diode_drop));
        let out = control_step(&mut self.state, p, v_rect, self.v_sense.rms(), dt);
        let flows = electrical_step(&mut self.state, out.gate, v_rect_mid, p, dt)?;
        self.last = out;
        self.state.rms_buffer.push(self.state.i_l);
        self.state.t += dt;
        if protection_armed {
            self.state.trip = check_protection(&mut self.state, p);
            if self.state.trip.is_tripped() {
                self.state.i_l = 0.0;
            }
        }
        Ok(flows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rectifier_examples() {
        assert_eq!(rectified_input(-100.0, 0.0), 100.0);
        assert_eq!(rectified_input(0.0, 0.7), 0.0);
        assert_abs_diff_eq!(rectified_input(100.0, 0.7), 98.6, epsilon = 1e-12);
    }

    #[test]
    fn dc_load_examples() {
        let p = ConverterParams::rated(3200.0);
        assert_abs_diff_eq!(dc_load_current(400.0, &p), 8.0, epsilon = 1e-12);
        assert_eq!(dc_load_current(0.0, &p), 0.0);
        assert_abs_diff_eq!(dc_load_current(380.0, &p), 8.421, epsilon = 1e-3);
        // below the brown-out cutoff
        assert_eq!(dc_load_current(0.74 * 400.0, &p), 0.0);
    }

    #[test]
    fn ideal_cpl_examples() {
        let mut p = ConverterParams::rated(3000.0);
        assert_eq!(ideal_cpl_current(0.0, 240.0, &p), 0.0);
        p.epsilon = 1e-9;
        assert_abs_diff_eq!(ideal_cpl_current(339.41, 240.0, &p), 17.68, epsilon = 0.01);
        let full = ideal_cpl_current(100.0, 240.0, &p);
        let half = ideal_cpl_current(100.0, 120.0, &p);
        assert_abs_diff_eq!(half / full, 4.0, epsilon = 1e-9);
    }

    #[test]
    fn aggregate_scales_block() {
        let p = ConverterParams::rated(3200.0);
        let a = p.aggregate(10);
        assert_abs_diff_eq!(a.p_av, 32_000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(a.inductance * 10.0, p.inductance, epsilon = 1e-15);
        assert_abs_diff_eq!(a.capacitance, 10.0 * p.capacitance, epsilon = 1e-12);
        assert_abs_diff_eq!(a.protection.i_trip_rms, 10.0 * p.protection.i_trip_rms, epsilon = 1e-9);
        assert_eq!(a.v_dc_ref, p.v_dc_ref);
    }

    #[test]
    fn validation_catches_bad_params() {
        let mut p = ConverterParams::default();
        p.duty_max = 1.0;
        assert!(p.validate().is_err());
        let mut p = ConverterParams::default();
        p.f_switch = 1000.0;
        assert!(p.validate().is_err());
        let mut p = ConverterParams::default();
        p.protection.v_dc_over = 390.0;
        assert!(p.validate().is_err());
        assert!(ConverterParams::default().validate().is_ok());
    }

    #[test]
    fn step_size_must_resolve_carrier() {
        let p = ConverterParams::default();
        assert!(Converter::new(p, 1e-6).is_ok());
        assert!(Converter::new(p, 5e-6).is_err());
    }

    #[test]
    fn trip_status_invariant() {
        assert_eq!(TripStatus::ARMED.cause, TripCause::None);
        let t = TripStatus::tripped(TripCause::Overcurrent, 0.1);
        assert!(t.is_tripped());
        assert_eq!(t.trip_time, Some(0.1));
    }
}
