//! Passive-component sizing and PI gain design for the PFC boost stage.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentSizes {
    pub inductance: f64,
    pub capacitance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizingInputs {
    pub p_av: f64,
    pub v_dc_ref: f64,
    pub line_frequency: f64,
    pub dc_ripple_pp: f64,
    pub inductor_ripple_fraction: f64,
    pub f_switch: f64,
    pub v_in_rms_nom: f64,
}

impl Default for SizingInputs {
    fn default() -> Self {
        Self {
            p_av: 3200.0,
            v_dc_ref: 400.0,
            line_frequency: 60.0,
            dc_ripple_pp: 20.0,
            inductor_ripple_fraction: 0.2,
            f_switch: 20_000.0,
            v_in_rms_nom: 240.0,
        }
    }
}

/// Sizes the boost inductor and DC-bus capacitor.
///
/// Capacitor: the bus absorbs the double-line-frequency power pulsation
/// `P cos(2ω0 t)`, whose bus-voltage swing is `ΔVpp = P / (ω0 C Vdc)`, so
/// `C = P / (2π f0 · Vdc · ΔVpp)`.
///
/// Inductor: the switching ripple at instantaneous input `v` is
/// `ΔI = v (1 − v/Vdc) / (L fs)`, largest at `v = min(Vpk, Vdc/2)`. The
/// inductor is chosen so that this worst case equals
/// `ripple_fraction × Ipk` with `Ipk = √2 P / Vrms`.
pub fn size_components(inputs: &SizingInputs) -> Result<ComponentSizes> {
    let SizingInputs {
        p_av,
        v_dc_ref,
        line_frequency,
        dc_ripple_pp,
        inductor_ripple_fraction,
        f_switch,
        v_in_rms_nom,
    } = *inputs;
    for (name, v) in [
        ("p_av", p_av),
        ("v_dc_ref", v_dc_ref),
        ("line_frequency", line_frequency),
        ("dc_ripple_pp", dc_ripple_pp),
        ("inductor_ripple_fraction", inductor_ripple_fraction),
        ("f_switch", f_switch),
        ("v_in_rms_nom", v_in_rms_nom),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, "must be positive"));
        }
    }
    if inductor_ripple_fraction >= 1.0 {
        return Err(Error::invalid("inductor_ripple_fraction", "must be < 1"));
    }
    let capacitance = p_av / (2.0 * PI * line_frequency * v_dc_ref * dc_ripple_pp);
    let v_peak = SQRT_2 * v_in_rms_nom;
    let i_peak = SQRT_2 * p_av / v_in_rms_nom;
    let v_worst = v_peak.min(0.5 * v_dc_ref);
    let inductance = v_worst * (1.0 - v_worst / v_dc_ref) / (f_switch * inductor_ripple_fraction * i_peak);
    Ok(ComponentSizes {
        inductance,
        capacitance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopBandwidths {
    pub voltage_hz: f64,
    pub current_hz: f64,
}

impl Default for LoopBandwidths {
    fn default() -> Self {
        Self {
            voltage_hz: 10.0,
            current_hz: 2_000.0,
        }
    }
}

/// Ratio of crossover to PI zero frequency, voltage loop.
const VOLTAGE_ZERO_RATIO: f64 = 4.0;
/// Ratio of crossover to PI zero frequency, current loop.
const CURRENT_ZERO_RATIO: f64 = 10.0;

/// Crossover-based PI design for the two cascaded loops.
///
/// Voltage loop: the PI output is a DC-side current command (A). Around the
/// operating point the constant-power load and the constant-power input
/// cancel in the small-signal bus equation, leaving the `1/(sC)` plant, so
/// `kp = ωv C`.
///
/// Current loop: the PI output is duty. The plant from duty to inductor
/// current is `Vdc/(sL)`, so `kp = ωi L / Vdc`.
///
/// Both integral gains put the PI zero below crossover:
/// `ki = kp ω / ratio`.
pub fn design_pi_gains(
    inductance: f64,
    capacitance: f64,
    v_dc_ref: f64,
    bandwidths: &LoopBandwidths,
    line_frequency: f64,
    f_switch: f64,
) -> Result<(PiGains, PiGains)> {
    let LoopBandwidths { voltage_hz, current_hz } = *bandwidths;
    if !(inductance > 0.0 && capacitance > 0.0 && v_dc_ref > 0.0) {
        return Err(Error::invalid("design_pi_gains", "L, C and Vdc must be positive"));
    }
    if !(voltage_hz > 0.0 && voltage_hz < line_frequency / 4.0) {
        return Err(Error::LoopOrdering(format!(
            "voltage bandwidth {voltage_hz} Hz must lie in (0, f0/4 = {} Hz)",
            line_frequency / 4.0
        )));
    }
    if current_hz <= line_frequency / 4.0 {
        return Err(Error::LoopOrdering(format!(
            "current bandwidth {current_hz} Hz must exceed f0/4 = {} Hz",
            line_frequency / 4.0
        )));
    }
    if current_hz > f_switch / 10.0 {
        return Err(Error::LoopOrdering(format!(
            "current bandwidth {current_hz} Hz must not exceed fs/10 = {} Hz",
            f_switch / 10.0
        )));
    }
    let wv = 2.0 * PI * voltage_hz;
    let wi = 2.0 * PI * current_hz;
    let kp_v = wv * capacitance;
    let kp_i = wi * inductance / v_dc_ref;
    Ok((
        PiGains {
            kp: kp_v,
            ki: kp_v * wv / VOLTAGE_ZERO_RATIO,
        },
        PiGains {
            kp: kp_i,
            ki: kp_i * wi / CURRENT_ZERO_RATIO,
        },
    ))
}
