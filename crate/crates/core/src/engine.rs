//! Fixed-step lockstep simulation loop.
//!
//! Per step `n` (time `t_n = n·dt`):
//! 1. record decimated samples of the state at `t_n`;
//! 2. line voltages at `t_n`: the ideal source is evaluated directly, or the
//!    network is solved with converter injections taken from the states at
//!    `t_n` (one-step-lagged coupling);
//! 3. each converter, in registration order, senses its terminal voltage,
//!    runs control, integrates to `t_{n+1}` and updates protection.
//!
//! Converters only interact through the network solve, so registration
//! order never changes an individual converter's trajectory.

use serde::{Deserialize, Serialize};

use crate::converter::{Converter, ConverterParams, ConverterSample, TripStatus};
use crate::error::{Error, Result};
use crate::signals::{power_metrics, LineSource, PowerMetrics};
use crate::trace::{Event, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub record_stride: usize,
    pub settle_tolerance: f64,
    pub arming_time_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-6,
            t_end: 0.5,
            record_stride: 10,
            settle_tolerance: 1e-3,
            arming_time_s: 3.0 / 60.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("sim.dt", "must be > 0"));
        }
        if !(self.t_end > self.dt) {
            return Err(Error::invalid("sim.t_end", "must exceed dt"));
        }
        if self.record_stride < 1 {
            return Err(Error::invalid("sim.record_stride", "must be >= 1"));
        }
        if !(self.settle_tolerance > 0.0) {
            return Err(Error::invalid("sim.settle_tolerance", "must be > 0"));
        }
        if !(self.arming_time_s >= 0.0) {
            return Err(Error::invalid("sim.arming_time_s", "must be >= 0"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// A linear network that converters draw current from.
pub trait NetworkSolver {
    /// Solves node voltages at `t` given each terminal's drawn current
    /// (positive out of the network) and advances internal history.
    fn solve(&mut self, t: f64, dt: f64, drawn: &[f64]) -> Result<()>;
    /// Voltage at converter terminal `k` from the latest solve.
    fn terminal_voltage(&self, k: usize) -> f64;
    /// Names of probe channels recorded each sample.
    fn probe_names(&self) -> Vec<String>;
    /// Probe values from the latest solve, in `probe_names` order.
    fn probes(&self, out: &mut Vec<f64>);
    /// Scheduled events (time, label) known up front.
    fn scheduled_events(&self) -> Vec<Event>;
    fn line_frequency(&self) -> f64;
}

pub enum Excitation<'a> {
    Ideal(LineSource),
    Network(&'a mut dyn NetworkSolver),
}

/// A converter registered with a run. `terminal` indexes network terminals
/// and is ignored on an ideal source.
#[derive(Debug, Clone, PartialEq)]
pub struct ConverterSlot {
    pub label: String,
    pub params: ConverterParams,
    pub terminal: usize,
}

impl ConverterSlot {
    pub fn new(label: impl Into<String>, params: ConverterParams, terminal: usize) -> Self {
        Self {
            label: label.into(),
            params,
            terminal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub pf: f64,
    pub leading: bool,
    pub fundamental_phase_deg: f64,
    pub p_avg: f64,
    pub s_avg: f64,
    pub v_dc_mean: f64,
    pub v_dc_ripple: f64,
    pub window_start_s: f64,
    pub window_end_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConverterSummary {
    pub label: String,
    pub trip: TripStatus,
    pub steady_state_time: Option<f64>,
    pub metrics: Option<SummaryMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub trace: Trace,
    pub converters: Vec<ConverterSummary>,
    pub steady_state_time: Option<f64>,
}

/// Stable JSON view of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub sample_rate_hz: f64,
    pub samples: usize,
    pub steady_state_time_s: Option<f64>,
    pub converters: Vec<ConverterSummary>,
    pub events: Vec<Event>,
}

pub const RUN_SUMMARY_SCHEMA: &str = "cryptoload.run-summary/1";

impl RunResult {
    pub fn trip_statuses(&self) -> Vec<TripStatus> {
        self.converters.iter().map(|c| c.trip).collect()
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            schema: RUN_SUMMARY_SCHEMA.to_string(),
            sample_rate_hz: self.trace.sample_rate(),
            samples: self.trace.len(),
            steady_state_time_s: self.steady_state_time,
            converters: self.converters.clone(),
            events: self.trace.events().to_vec(),
        }
    }

    pub fn metrics(&self) -> Option<&SummaryMetrics> {
        self.converters.first().and_then(|c| c.metrics.as_ref())
    }
}

const SAMPLE_FIELDS: [&str; 10] = [
    "v_in",
    "i_in",
    "i_l",
    "v_dc",
    "i_ref",
    "duty",
    "gate",
    "i_load",
    "v_rms_est",
    "i_l_rms",
];

fn sample_values(s: &ConverterSample) -> [f64; 10] {
    [
        s.v_in,
        s.i_in,
        s.i_l,
        s.v_dc,
        s.i_ref,
        s.duty,
        s.gate,
        s.i_load,
        s.v_rms_est,
        s.i_l_rms,
    ]
}

/// Channel name of `field` for a converter labelled `label`.
pub fn channel_name(label: &str, field: &str) -> String {
    if label.is_empty() {
        field.to_string()
    } else {
        format!("{label}.{field}")
    }
}

pub fn run_simulation(
    mut excitation: Excitation<'_>,
    converters: &[ConverterSlot],
    config: &SimConfig,
) -> Result<RunResult> {
    config.validate()?;
    let dt = config.dt;
    let mut units = converters
        .iter()
        .map(|slot| Converter::new(slot.params, dt))
        .collect::<Result<Vec<_>>>()?;

    let mut names = Vec::new();
    let mut events = Vec::new();
    let mut probe_buf = Vec::new();
    match &excitation {
        Excitation::Ideal(src) => {
            names.push("v_src".to_string());
            if let Some(sched) = &src.sag {
                events.push(Event {
                    time: sched.onset_s,
                    label: "sag_onset".into(),
                });
                events.push(Event {
                    time: sched.end_s(),
                    label: "sag_clear".into(),
                });
            }
        }
        Excitation::Network(net) => {
            names.extend(net.probe_names());
            events.extend(net.scheduled_events());
        }
    }
    for slot in converters {
        names.extend(SAMPLE_FIELDS.iter().map(|f| channel_name(&slot.label, f)));
    }
    let sample_rate = 1.0 / (dt * config.record_stride as f64);
    let mut trace = Trace::with_names(sample_rate, names.clone());
    for e in events.iter().filter(|e| e.time <= config.t_end) {
        trace.push_event(e.time, e.label.clone());
    }

    let steps = config.steps();
    let mut row = Vec::with_capacity(names.len());
    let mut voltages = vec![0.0; units.len()];
    let mut drawn = vec![0.0; units.len()];
    let mut was_tripped: Vec<bool> = units.iter().map(|u| u.trip().is_tripped()).collect();

    for n in 0..steps {
        let t = n as f64 * dt;
        let t_next = (n + 1) as f64 * dt;
        let mut v_end = vec![0.0; units.len()];
        match &mut excitation {
            Excitation::Ideal(src) => {
                let v = src.sample(t);
                let v1 = src.sample(t_next);
                voltages.iter_mut().for_each(|x| *x = v);
                v_end.iter_mut().for_each(|x| *x = v1);
                if n % config.record_stride == 0 {
                    row.clear();
                    row.push(v);
                }
            }
            Excitation::Network(net) => {
                for ((d, unit), slot) in drawn.iter_mut().zip(&units).zip(converters) {
                    let v_prev = net_terminal_or_zero(&**net, slot.terminal, n);
                    *d = unit.line_current(v_prev);
                }
                // accumulate per-terminal draw
                let terminals = converters.iter().map(|c| c.terminal).max().map_or(0, |m| m + 1);
                let mut per_terminal = vec![0.0; terminals];
                for (slot, d) in converters.iter().zip(&drawn) {
                    per_terminal[slot.terminal] += d;
                }
                net.solve(t, dt, &per_terminal)?;
                for (k, slot) in converters.iter().enumerate() {
                    voltages[k] = net.terminal_voltage(slot.terminal);
                    v_end[k] = voltages[k];
                }
                if n % config.record_stride == 0 {
                    row.clear();
                    probe_buf.clear();
                    net.probes(&mut probe_buf);
                    row.extend_from_slice(&probe_buf);
                }
            }
        }
        if n % config.record_stride == 0 {
            if let Some(k) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    channel: names[k].clone(),
                    time: t,
                });
            }
            for (unit, &v) in units.iter().zip(&voltages) {
                row.extend_from_slice(&sample_values(&unit.sample(v)));
            }
            trace.push_row(&row);
        }
        let armed = t_next >= config.arming_time_s;
        for (k, unit) in units.iter_mut().enumerate() {
            unit.step(voltages[k], v_end[k], dt, armed).map_err(|e| match e {
                Error::NonFinite { channel, time } => Error::NonFinite {
                    channel: channel_name(&converters[k].label, &channel),
                    time,
                },
                other => other,
            })?;
            let tripped = unit.trip().is_tripped();
            if tripped && !was_tripped[k] {
                let st = unit.trip();
                let label = if converters[k].label.is_empty() {
                    format!("trip:{:?}", st.cause).to_lowercase()
                } else {
                    format!("trip:{}:{:?}", converters[k].label, st.cause).to_lowercase()
                };
                trace.push_event(st.trip_time.unwrap_or(t_next), label);
            }
            was_tripped[k] = tripped;
        }
    }

    let first_event = trace.events().iter().map(|e| e.time).fold(f64::INFINITY, f64::min);
    let mut summaries = Vec::with_capacity(units.len());
    let mut overall_settle: Option<f64> = None;
    for (slot, unit) in converters.iter().zip(&units) {
        let f0 = slot.params.line_frequency;
        let v_dc_name = channel_name(&slot.label, "v_dc");
        let settle = detect_steady_state_on(&trace, &v_dc_name, f0, config.settle_tolerance, first_event)?;
        overall_settle = match (overall_settle, settle) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (None, s) => s,
            (a, None) => a,
        };
        let metrics = match settle {
            Some(t0) => summary_metrics(&trace, &slot.label, f0, t0, first_event.min(config.t_end))?,
            None => None,
        };
        summaries.push(ConverterSummary {
            label: slot.label.clone(),
            trip: unit.trip(),
            steady_state_time: settle,
            metrics,
        });
    }
    if summaries.iter().any(|s| s.steady_state_time.is_none()) {
        overall_settle = None;
    }

    Ok(RunResult {
        trace,
        converters: summaries,
        steady_state_time: overall_settle,
    })
}

fn net_terminal_or_zero(net: &dyn NetworkSolver, terminal: usize, step: usize) -> f64 {
    if step == 0 {
        0.0
    } else {
        net.terminal_voltage(terminal)
    }
}

/// Convenience wrapper: one converter on an ideal source, unlabelled channels.
pub fn run_single(source: LineSource, params: ConverterParams, config: &SimConfig) -> Result<RunResult> {
    run_simulation(Excitation::Ideal(source), &[ConverterSlot::new("", params, 0)], config)
}

fn summary_metrics(trace: &Trace, label: &str, f0: f64, start: f64, end: f64) -> Result<Option<SummaryMetrics>> {
    let rate = trace.sample_rate();
    let per = rate / f0;
    let i0 = trace.index_at(start);
    let i1 = trace.index_at(end).min(trace.len());
    if i1 <= i0 || ((i1 - i0) as f64) < per {
        return Ok(None);
    }
    let v = &trace.channel(&channel_name(label, "v_in"))?[i0..i1];
    let i = &trace.channel(&channel_name(label, "i_in"))?[i0..i1];
    let vdc = &trace.channel(&channel_name(label, "v_dc"))?[i0..i1];
    let m: PowerMetrics = match power_metrics(v, i, rate, f0) {
        Ok(m) => m,
        Err(Error::ZeroApparentPower) => return Ok(None),
        Err(e) => return Err(e),
    };
    let n = crate::signals::whole_cycles(vdc.len(), rate, f0);
    let vdc = &vdc[..n];
    let mean = vdc.iter().sum::<f64>() / n as f64;
    let ripple = cycle_ripple(vdc, per);
    Ok(Some(SummaryMetrics {
        pf: m.pf,
        leading: m.leading,
        fundamental_phase_deg: m.fundamental_phase_deg,
        p_avg: m.p,
        s_avg: m.s,
        v_dc_mean: mean,
        v_dc_ripple: ripple,
        window_start_s: trace.time(i0),
        window_end_s: trace.time(i0 + n),
    }))
}

/// Mean over whole cycles of the per-cycle peak-to-peak excursion.
pub fn cycle_ripple(x: &[f64], samples_per_cycle: f64) -> f64 {
    let cycles = (x.len() as f64 / samples_per_cycle).floor() as usize;
    if cycles == 0 {
        return 0.0;
    }
    let total: f64 = (0..cycles)
        .map(|c| {
            let a = (c as f64 * samples_per_cycle).round() as usize;
            let b = (((c + 1) as f64) * samples_per_cycle).round() as usize;
            let w = &x[a..b.min(x.len())];
            let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
            hi - lo
        })
        .sum();
    total / cycles as f64
}

/// Number of consecutive cycles that must agree for the bus to count as settled.
pub const SETTLE_CYCLES: usize = 5;

/// Earliest cycle start after which the cycle-averaged `v_dc` stays within
/// `settle_tolerance` (relative spread) for five consecutive cycles.
///
/// Uses the `v_dc` channel, or the first channel named `*.v_dc`.
pub fn detect_steady_state(trace: &Trace, config: &SimConfig, line_frequency: f64) -> Result<Option<f64>> {
    let name = if trace.names().iter().any(|n| n == "v_dc") {
        "v_dc".to_string()
    } else {
        trace
            .names()
            .iter()
            .find(|n| n.ends_with(".v_dc"))
            .cloned()
            .ok_or_else(|| Error::MissingChannel("v_dc".into()))?
    };
    detect_steady_state_on(trace, &name, line_frequency, config.settle_tolerance, f64::INFINITY)
}

/// Settling detection on a named channel, considering only whole cycles
/// that end before `before`.
pub fn detect_steady_state_on(
    trace: &Trace,
    channel: &str,
    line_frequency: f64,
    tolerance: f64,
    before: f64,
) -> Result<Option<f64>> {
    let x = trace.channel(channel)?;
    let per = trace.sample_rate() / line_frequency;
    let limit = trace.index_at(before).min(x.len());
    let cycles = (limit as f64 / per + 1e-9).floor() as usize;
    let means: Vec<f64> = (0..cycles)
        .map(|c| {
            let a = (c as f64 * per).round() as usize;
            let b = (((c + 1) as f64) * per).round() as usize;
            let w = &x[a..b.min(x.len())];
            w.iter().sum::<f64>() / w.len().max(1) as f64
        })
        .collect();
    if means.len() < SETTLE_CYCLES {
        return Ok(None);
    }
    for start in 0..=means.len() - SETTLE_CYCLES {
        let w = &means[start..start + SETTLE_CYCLES];
        let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
        let mid = 0.5 * (hi + lo);
        let spread = if mid.abs() > 0.0 {
            (hi - lo) / mid.abs()
        } else {
            hi - lo
        };
        if spread < tolerance {
            return Ok(Some(trace.time((start as f64 * per).round() as usize)));
        }
    }
    Ok(None)
}
