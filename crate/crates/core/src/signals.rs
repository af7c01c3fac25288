//! Source waveforms (ideal sine, point-on-wave aligned sags, decaying
//! harmonic injection) and waveform measurements.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SineSpec {
    pub rms_volts: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

impl SineSpec {
    pub fn new(rms_volts: f64, frequency: f64, phase_deg: f64) -> Result<Self> {
        let spec = Self {
            rms_volts,
            frequency,
            phase_deg: normalize_deg(phase_deg),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rms_volts >= 0.0 && self.rms_volts.is_finite()) {
            return Err(Error::invalid("rms_volts", "must be finite and >= 0"));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::invalid("frequency", "must be > 0"));
        }
        if !self.phase_deg.is_finite() {
            return Err(Error::invalid("phase_deg", "must be finite"));
        }
        Ok(())
    }

    pub fn peak(&self) -> f64 {
        SQRT_2 * self.rms_volts
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }

    pub fn omega(&self) -> f64 {
        2.0 * PI * self.frequency
    }

    /// Same waveform shifted by `deg` degrees.
    pub fn shifted(&self, deg: f64) -> Self {
        Self {
            phase_deg: normalize_deg(self.phase_deg + deg),
            ..*self
        }
    }

    /// Phase angle of the waveform at time `t`, in degrees within [0, 360).
    pub fn angle_at(&self, t: f64) -> f64 {
        normalize_deg(360.0 * self.frequency * t + self.phase_deg)
    }
}

pub fn normalize_deg(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

pub fn sample_source(spec: &SineSpec, t: f64) -> f64 {
    spec.peak() * (spec.omega() * t + spec.phase_deg.to_radians()).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SagSpec {
    pub retained_fraction: f64,
    #[serde(default)]
    pub start_pow_deg: f64,
    pub duration_s: f64,
}

impl SagSpec {
    pub fn new(retained_fraction: f64, start_pow_deg: f64, duration_s: f64) -> Result<Self> {
        let sag = Self {
            retained_fraction,
            start_pow_deg: normalize_deg(start_pow_deg),
            duration_s,
        };
        sag.validate()?;
        Ok(sag)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.retained_fraction) {
            return Err(Error::invalid(
                "retained_fraction",
                format!("{} is outside [0, 1]", self.retained_fraction),
            ));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid("duration_s", "must be > 0"));
        }
        if !self.start_pow_deg.is_finite() {
            return Err(Error::invalid("start_pow_deg", "must be finite"));
        }
        Ok(())
    }
}

/// A sag pinned to an absolute onset time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SagSchedule {
    pub sag: SagSpec,
    pub onset_s: f64,
}

impl SagSchedule {
    /// Onset is the first instant at or after `armed_at` where the phase of
    /// `spec` equals the sag's start angle.
    pub fn aligned(spec: &SineSpec, sag: SagSpec, armed_at: f64) -> Self {
        Self {
            sag,
            onset_s: next_angle_time(spec, sag.start_pow_deg, armed_at),
        }
    }

    pub fn end_s(&self) -> f64 {
        self.onset_s + self.sag.duration_s
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.onset_s && t < self.end_s()
    }
}

/// First `t >= after` at which `spec` sits at phase angle `angle_deg`.
pub fn next_angle_time(spec: &SineSpec, angle_deg: f64, after: f64) -> f64 {
    let cycles_per_deg = 1.0 / (360.0 * spec.frequency);
    let offset = normalize_deg(angle_deg - spec.phase_deg);
    let base = offset * cycles_per_deg;
    let period = spec.period();
    let n = ((after - base) / period - 1e-9).ceil().max(0.0);
    base + n * period
}

pub fn apply_sag(spec: &SineSpec, schedule: &SagSchedule, t: f64) -> f64 {
    let v = sample_source(spec, t);
    if schedule.contains(t) {
        v * schedule.sag.retained_fraction
    } else {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicComponent {
    pub order: u32,
    pub amplitude_fraction: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

/// Additive harmonic content expressed relative to the fundamental peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicSpec {
    pub components: Vec<HarmonicComponent>,
    pub decay_constant: f64,
}

impl Default for HarmonicSpec {
    // Placeholder spectrum; not fitted to any measurement.
    fn default() -> Self {
        Self {
            components: vec![
                HarmonicComponent {
                    order: 3,
                    amplitude_fraction: 0.12,
                    phase_deg: 0.0,
                },
                HarmonicComponent {
                    order: 5,
                    amplitude_fraction: 0.10,
                    phase_deg: 30.0,
                },
                HarmonicComponent {
                    order: 7,
                    amplitude_fraction: 0.07,
                    phase_deg: 60.0,
                },
                HarmonicComponent {
                    order: 11,
                    amplitude_fraction: 0.04,
                    phase_deg: 0.0,
                },
            ],
            decay_constant: 8.0,
        }
    }
}

impl HarmonicSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = Vec::new();
        for c in &self.components {
            if c.order < 2 {
                return Err(Error::invalid("harmonics.order", "must be >= 2"));
            }
            if !(c.amplitude_fraction >= 0.0) {
                return Err(Error::invalid("harmonics.amplitude_fraction", "must be >= 0"));
            }
            if seen.contains(&c.order) {
                return Err(Error::invalid(
                    "harmonics.order",
                    format!("order {} listed twice", c.order),
                ));
            }
            seen.push(c.order);
        }
        if !(self.decay_constant >= 0.0) {
            return Err(Error::invalid("harmonics.decay_constant", "must be >= 0"));
        }
        Ok(())
    }
}

/// Harmonic injection active from `start_s`, decaying exponentially after `clear_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicInjection {
    pub spec: HarmonicSpec,
    pub fundamental: SineSpec,
    pub start_s: f64,
    pub clear_s: f64,
}

impl HarmonicInjection {
    pub fn envelope(&self, t: f64) -> f64 {
        if t < self.start_s {
            0.0
        } else if t < self.clear_s {
            1.0
        } else {
            (-self.spec.decay_constant * (t - self.clear_s)).exp()
        }
    }

    pub fn sample(&self, t: f64) -> f64 {
        let env = self.envelope(t);
        if env == 0.0 {
            return 0.0;
        }
        let peak = self.fundamental.peak();
        let w = self.fundamental.omega();
        let base = self.fundamental.phase_deg.to_radians();
        let sum: f64 = self
            .spec
            .components
            .iter()
            .map(|c| {
                let n = f64::from(c.order);
                c.amplitude_fraction * (n * (w * t + base) + c.phase_deg.to_radians()).sin()
            })
            .sum();
        env * peak * sum
    }
}

/// An ideal line source: sine, optional scheduled sag, optional harmonics.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSource {
    pub sine: SineSpec,
    pub sag: Option<SagSchedule>,
    pub harmonics: Option<HarmonicInjection>,
}

impl LineSource {
    pub fn ideal(sine: SineSpec) -> Self {
        Self {
            sine,
            sag: None,
            harmonics: None,
        }
    }

    pub fn with_sag(sine: SineSpec, sag: SagSpec, armed_at: f64) -> Self {
        Self {
            sine,
            sag: Some(SagSchedule::aligned(&sine, sag, armed_at)),
            harmonics: None,
        }
    }

    pub fn sample(&self, t: f64) -> f64 {
        let v = match &self.sag {
            Some(sched) => apply_sag(&self.sine, sched, t),
            None => sample_source(&self.sine, t),
        };
        match &self.harmonics {
            Some(h) => v + h.sample(t),
            None => v,
        }
    }
}

/// Rectangular averaging window for RMS measurements.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementWindow {
    pub length_s: f64,
    pub stride_s: f64,
}

impl MeasurementWindow {
    /// One fundamental cycle, re-evaluated every sample at `sample_rate`.
    pub fn one_cycle(frequency: f64, sample_rate: f64) -> Self {
        Self {
            length_s: 1.0 / frequency,
            stride_s: 1.0 / sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_s > 0.0) {
            return Err(Error::invalid("window.length_s", "must be > 0"));
        }
        if !(self.stride_s > 0.0) {
            return Err(Error::invalid("window.stride_s", "must be > 0"));
        }
        Ok(())
    }

    pub fn samples(&self, sample_rate: f64) -> usize {
        (self.length_s * sample_rate).round() as usize
    }
}

/// Trailing-window RMS of a uniformly sampled channel.
///
/// Output has the input's length. Samples before the first full window are
/// held at the first full-window value. With a stride longer than one sample,
/// the output is refreshed on stride boundaries and held in between.
pub fn sliding_rms(channel: &[f64], sample_rate: f64, window: MeasurementWindow) -> Result<Vec<f64>> {
    window.validate()?;
    let n = window.samples(sample_rate);
    if n < 2 {
        return Err(Error::invalid("window.length_s", "window must span at least 2 samples"));
    }
    if n > channel.len() {
        return Err(Error::WindowTooLong {
            window: n,
            len: channel.len(),
        });
    }
    let stride = ((window.stride_s * sample_rate).round() as usize).max(1);
    let mut prefix = Vec::with_capacity(channel.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &x in channel {
        acc += x * x;
        prefix.push(acc);
    }
    let rms_ending_at = |k: usize| (((prefix[k + 1] - prefix[k + 1 - n]) / n as f64).max(0.0)).sqrt();
    let first = rms_ending_at(n - 1);
    let mut out = vec![first; channel.len()];
    let mut held = first;
    for (k, slot) in out.iter_mut().enumerate().skip(n - 1) {
        if (k + 1 - n).is_multiple_of(stride) {
            held = rms_ending_at(k);
        }
        *slot = held;
    }
    Ok(out)
}

/// Streaming trailing-window RMS over a fixed number of samples.
///
/// Before the window fills, the RMS is taken over the samples seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningRms {
    squares: Vec<f64>,
    head: usize,
    filled: usize,
    sum: f64,
}

impl RunningRms {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "window length must be positive");
        Self {
            squares: vec![0.0; len],
            head: 0,
            filled: 0,
            sum: 0.0,
        }
    }

    pub fn push(&mut self, x: f64) {
        let sq = x * x;
        self.sum += sq - self.squares[self.head];
        self.squares[self.head] = sq;
        self.head += 1;
        if self.head == self.squares.len() {
            self.head = 0;
            // refresh the running sum once per window to bound drift
            self.sum = self.squares.iter().sum();
        }
        if self.filled < self.squares.len() {
            self.filled += 1;
        }
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.squares.len()
    }

    pub fn capacity(&self) -> usize {
        self.squares.len()
    }

    pub fn mean_square(&self) -> f64 {
        if self.filled == 0 {
            0.0
        } else {
            (self.sum / self.filled as f64).max(0.0)
        }
    }

    pub fn rms(&self) -> f64 {
        self.mean_square().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerMetrics {
    pub p: f64,
    pub s: f64,
    pub pf: f64,
    pub leading: bool,
    /// Phase of the fundamental current relative to the fundamental voltage (degrees).
    pub fundamental_phase_deg: f64,
}

/// Single-frequency correlation of `x` at `f0`; returns the peak-amplitude phasor
/// (sine reference: a pure `A sin(wt + p)` yields `A e^{jp}`).
pub fn fundamental_phasor(x: &[f64], sample_rate: f64, f0: f64) -> Complex64 {
    let w = 2.0 * PI * f0 / sample_rate;
    let acc = x.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (k, &v)| {
        let a = w * k as f64;
        acc + Complex64::new(v * a.sin(), v * a.cos())
    });
    acc * (2.0 / x.len() as f64)
}

/// Largest whole-cycle prefix length of a channel with `len` samples.
pub fn whole_cycles(len: usize, sample_rate: f64, f0: f64) -> usize {
    let per = sample_rate / f0;
    let cycles = (len as f64 / per + 1e-9).floor();
    ((cycles * per).round() as usize).min(len)
}

pub fn power_metrics(v: &[f64], i: &[f64], sample_rate: f64, f0: f64) -> Result<PowerMetrics> {
    if v.len() != i.len() {
        return Err(Error::invalid("power_metrics", "channels must be aligned"));
    }
    let n = whole_cycles(v.len(), sample_rate, f0);
    if n == 0 || (n as f64) < 0.999 * sample_rate / f0 {
        return Err(Error::invalid("power_metrics", "need at least one fundamental period"));
    }
    let (v, i) = (&v[..n], &i[..n]);
    let nf = n as f64;
    let p = v.iter().zip(i).map(|(a, b)| a * b).sum::<f64>() / nf;
    let vrms = (v.iter().map(|a| a * a).sum::<f64>() / nf).sqrt();
    let irms = (i.iter().map(|a| a * a).sum::<f64>() / nf).sqrt();
    let s = vrms * irms;
    if s <= f64::MIN_POSITIVE {
        return Err(Error::ZeroApparentPower);
    }
    let vf = fundamental_phasor(v, sample_rate, f0);
    let if_ = fundamental_phasor(i, sample_rate, f0);
    let phase = normalize_deg((if_.arg() - vf.arg()).to_degrees() + 180.0) - 180.0;
    Ok(PowerMetrics {
        p,
        s,
        pf: p / s,
        leading: phase > 0.0,
        fundamental_phase_deg: phase,
    })
}
