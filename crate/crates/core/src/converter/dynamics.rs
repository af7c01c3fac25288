//! Piecewise-linear boost-stage dynamics.
//!
//! Integration is trapezoidal in both states. The constant-power load is
//! evaluated at the step-midpoint bus voltage `u = (v_n + v_{n+1})/2`, so it
//! removes exactly `P·dt` per step and the lossless energy balance closes
//! to rounding. With `s = 1` when the boost diode conducts (gate off) and
//! `s = 0` when the switch conducts:
//!
//! ```text
//! L (i1 − i0)/dt = v̄_rect − R (i0 + i1)/2 − s·u
//! C (v1 − v0)/dt = s (i0 + i1)/2 − P/u
//! ```
//!
//! Substituting `v1 = 2u − v0` gives a quadratic in `u`; the root nearest
//! `v0` is taken. If the diode-conducting update would reverse the inductor
//! current, the step is redone with the current reaching zero at the
//! linearly interpolated crossing and held there (discontinuous conduction).

use super::{dc_load_current, ConverterParams, ConverterState, Gate};
use crate::error::{Error, Result};

/// Step-averaged flows, for energy accounting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepFlows {
    /// Mean inductor current over the step (= rectifier output current).
    pub i_l_mean: f64,
    /// Load power drawn over the step (W).
    pub load_power: f64,
    /// Midpoint bus voltage.
    pub v_dc_mid: f64,
}

/// Solves `a u² − b u + c = 0` for the larger root, falling back to the
/// vertex when the discriminant is negative.
fn bus_midpoint(a: f64, b: f64, c: f64) -> f64 {
    let disc = b * b - 4.0 * a * c;
    (b + disc.max(0.0).sqrt()) / (2.0 * a)
}

pub fn electrical_step(
    state: &mut ConverterState,
    gate: Gate,
    v_rect: f64,
    params: &ConverterParams,
    dt: f64,
) -> Result<StepFlows> {
    if !v_rect.is_finite() {
        return Err(Error::NonFinite {
            channel: "v_rect".to_string(),
            time: state.t,
        });
    }
    let l = params.inductance;
    let c = params.capacitance;
    let i0 = state.i_l;
    let v0 = state.v_dc;
    let load_on = dc_load_current(v0, params) > 0.0;
    let p_load = if load_on { params.p_av } else { 0.0 };
    let alpha = params.series_resistance * dt / (2.0 * l);
    let beta = dt / l;
    let cap = 2.0 * c / dt;

    let diode_path = gate == Gate::Off;
    let blocked = diode_path && i0 <= 0.0 && v_rect <= v0;

    let (i1, i_mean, u) = if !diode_path {
        let i1 = ((i0 * (1.0 - alpha) + beta * v_rect) / (1.0 + alpha)).max(0.0);
        let u = bus_midpoint(cap, cap * v0, p_load);
        (i1, 0.5 * (i0 + i1), u)
    } else if blocked {
        let u = bus_midpoint(cap, cap * v0, p_load);
        (0.0, 0.0, u)
    } else {
        let a = (2.0 * i0 + beta * v_rect) / (2.0 * (1.0 + alpha));
        let b = beta / (2.0 * (1.0 + alpha));
        let u = bus_midpoint(cap + b, cap * v0 + a, p_load);
        let i_mean = a - b * u;
        let i1 = 2.0 * i_mean - i0;
        if i1 >= 0.0 {
            (i1, i_mean, u)
        } else {
            // current reaches zero inside the step
            let frac = if i0 > 0.0 { i0 / (i0 - i1) } else { 0.0 };
            let i_mean = 0.5 * i0 * frac;
            let u = bus_midpoint(cap, cap * v0 + i_mean, p_load);
            (0.0, i_mean, u)
        }
    };

    let v1 = 2.0 * u - v0;
    if !(i1.is_finite() && v1.is_finite()) {
        let channel = if i1.is_finite() { "v_dc" } else { "i_l" };
        return Err(Error::NonFinite {
            channel: channel.to_string(),
            time: state.t + dt,
        });
    }
    state.i_l = i1;
    state.v_dc = v1.max(0.0);
    Ok(StepFlows {
        i_l_mean: i_mean,
        load_power: p_load,
        v_dc_mid: u,
    })
}
