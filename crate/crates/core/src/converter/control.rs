use super::{ConverterParams, ConverterState, Gate};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub gate: Gate,
    pub duty: f64,
    pub i_ref: f64,
    /// Voltage-loop power command (W).
    pub power_cmd: f64,
}

impl Default for ControlOutput {
    fn default() -> Self {
        Self {
            gate: Gate::Off,
            duty: 0.0,
            i_ref: 0.0,
            power_cmd: 0.0,
        }
    }
}

struct Limits {
    out: (f64, f64),
    integ: (f64, f64),
}

/// PI with conditional integration: the integrator holds whenever the
/// output is saturated and the error would drive it further out.
fn clamped_pi(kp: f64, ki: f64, integ: &mut f64, bias: f64, error: f64, limits: Limits, dt: f64) -> f64 {
    let (lo, hi) = limits.out;
    let raw = bias + kp * error + *integ;
    let saturated_hi = raw > hi && error > 0.0;
    let saturated_lo = raw < lo && error < 0.0;
    if !(saturated_hi || saturated_lo) {
        *integ += ki * error * dt;
    }
    *integ = integ.clamp(limits.integ.0, limits.integ.1);
    (bias + kp * error + *integ).clamp(lo, hi)
}

/// Triangular carrier in [0, 1]: 1 at phase 0, 0 at phase 1/2.
pub(crate) fn carrier(phase: f64) -> f64 {
    (2.0 * phase - 1.0).abs()
}

/// One control update of the cascaded loops.
///
/// Outer loop: a PI on the DC-bus error yields a DC-side current command,
/// limited to `[0, power_limit_ratio · p_av / v_dc_ref]` and scaled by
/// `v_dc_ref` into a power command `k`. The current reference follows the
/// rectified input, `i_ref = k · v_rect / max(v_rms_est², ε)`, so the
/// commanded input power is `k` regardless of line voltage.
///
/// Inner loop: duty is the optional `1 − v_rect/v_dc` feedforward plus a PI
/// on `i_ref − i_l`, limited to `[0, duty_max]`. The gate is on while duty
/// exceeds the triangular carrier.
pub fn control_step(
    state: &mut ConverterState,
    params: &ConverterParams,
    v_rect: f64,
    v_rms_est: f64,
    dt: f64,
) -> ControlOutput {
    let i_dc_max = params.dc_current_limit();
    let ev = params.v_dc_ref - state.v_dc;
    let i_dc_cmd = clamped_pi(
        params.pi_voltage.kp,
        params.pi_voltage.ki,
        &mut state.integ_v,
        0.0,
        ev,
        Limits {
            out: (0.0, i_dc_max),
            integ: (0.0, i_dc_max),
        },
        dt,
    );
    let power_cmd = i_dc_cmd * params.v_dc_ref;
    let i_ref = power_cmd * v_rect / (v_rms_est * v_rms_est).max(params.epsilon);

    let ff = if params.duty_feedforward && state.v_dc > 0.0 {
        (1.0 - v_rect / state.v_dc).clamp(0.0, params.duty_max)
    } else {
        0.0
    };
    let ei = i_ref - state.i_l;
    let duty = clamped_pi(
        params.pi_current.kp,
        params.pi_current.ki,
        &mut state.integ_i,
        ff,
        ei,
        Limits {
            out: (0.0, params.duty_max),
            integ: (-params.duty_max, params.duty_max),
        },
        dt,
    );

    let gate = if duty > carrier(state.carrier_phase) {
        Gate::On
    } else {
        Gate::Off
    };
    state.carrier_phase += dt * params.f_switch;
    state.carrier_phase -= state.carrier_phase.floor();

    ControlOutput {
        gate,
        duty,
        i_ref,
        power_cmd,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::converter::ConverterParams;

    fn setup() -> (ConverterParams, ConverterState) {
        let p = ConverterParams::default();
        let mut s = ConverterState::with_bus(&p, 1e-6, p.v_dc_ref);
        s.i_l = 0.0;
        (p, s)
    }

    #[test]
    fn zero_input_gives_zero_reference() {
        let (mut p, mut s) = setup();
        p.duty_feedforward = false;
        let out = control_step(&mut s, &p, 0.0, 240.0, 1e-6);
        assert_eq!(out.i_ref, 0.0);
        // zero error, zero integrators -> duty at the PI bias (zero)
        assert_eq!(out.duty, 0.0);
        assert_eq!(out.gate, Gate::Off);
    }

    #[test]
    fn halved_rms_estimate_quadruples_reference() {
        let (p, mut s) = setup();
        s.v_dc = p.v_dc_ref - 10.0;
        s.integ_v = 8.0;
        let mut s2 = s.clone();
        let full = control_step(&mut s, &p, 150.0, 240.0, 1e-6);
        let half = control_step(&mut s2, &p, 150.0, 120.0, 1e-6);
        assert!((half.i_ref / full.i_ref - 4.0).abs() < 1e-9);
    }

    #[test]
    fn duty_saturates_at_limit() {
        let (p, mut s) = setup();
        s.v_dc = 300.0;
        s.integ_v = p.dc_current_limit();
        let out = control_step(&mut s, &p, 300.0, 240.0, 1e-6);
        let expected = p.dc_current_limit() * p.v_dc_ref * 300.0 / (240.0 * 240.0);
        assert!((out.i_ref - expected).abs() < 1e-9 * expected);
        assert_eq!(out.duty, p.duty_max);
    }

    #[test]
    fn integrators_do_not_wind_up() {
        let (p, mut s) = setup();
        s.v_dc = 200.0;
        for _ in 0..200_000 {
            control_step(&mut s, &p, 100.0, 240.0, 1e-6);
        }
        assert!(s.integ_v <= p.dc_current_limit() + 1e-12);
        assert!(s.integ_i <= p.duty_max + 1e-12);
    }

    #[test]
    fn carrier_shape() {
        assert_eq!(carrier(0.0), 1.0);
        assert_eq!(carrier(0.5), 0.0);
        assert!((carrier(0.25) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn gate_duty_matches_average() {
        let (mut p, mut s) = setup();
        p.pi_current.kp = 0.0;
        p.pi_current.ki = 0.0;
        p.pi_voltage.kp = 0.0;
        p.pi_voltage.ki = 0.0;
        s.v_dc = 400.0;
        // feedforward only: duty = 1 - 100/400
        let mut on = 0;
        let n = 50 * 20;
        for _ in 0..n {
            if control_step(&mut s, &p, 100.0, 240.0, 1e-6).gate.is_on() {
                on += 1;
            }
        }
        let frac = on as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.03, "{frac}");
    }
}
