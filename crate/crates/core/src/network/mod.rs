//! Per-phase linear network: ideal sources, lumped RL branches,
//! constant-impedance loads, damped shunt capacitors, a Δ-Yg transformer
//! and switchable three-phase-to-ground faults.
//!
//! Everything is solved referred to the transformer secondary. Elements on
//! the primary side are scaled by `1/n²` (capacitances by `n²`), primary
//! EMFs by `1/n` and shifted by the Δ-Yg angle, with `n` the line-to-line
//! ratio. Without a transformer every quantity is taken as given. Bus
//! voltage probes are reported in secondary-referred volts.

mod companion;
mod facility;
mod phasor;

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::{HarmonicSpec, SineSpec};

pub use companion::{assemble_companion, CompanionSystem};
pub use facility::{
    calibrate_fault_impedance, fault1_network, fault2_network, partial_trip_window, phase_peak_rms, retained_fraction,
    run_facility_scenario, FacilityResult, FacilityScenario, FacilitySummary, FaultLocation, PhaseOutcome,
    PremisesSpec, TripOutcome, DEFAULT_FAULT_TIME, DEFAULT_MINERS_PER_PHASE, FACILITY_SUMMARY_SCHEMA, PHASE_LABELS,
    POST_FAULT_S,
};
pub use phasor::{phasor_solve, PhasorSolution};

/// Resistance used in place of a bolted (0 Ω) fault, in secondary-referred ohms.
pub const BOLTED_OHMS: f64 = 1e-6;

/// Lag of the Yg secondary relative to the Δ primary.
pub const DELTA_WYE_SHIFT_DEG: f64 = -30.0;

pub const PHASES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerSpec {
    pub rating_mva: f64,
    pub v_primary_ll: f64,
    pub v_secondary_ll: f64,
    pub z_percent: f64,
    /// Leakage X/R ratio.
    #[serde(default = "default_x_over_r")]
    pub x_over_r: f64,
}

fn default_x_over_r() -> f64 {
    8.0
}

impl TransformerSpec {
    /// 25 kV / 415 V, 6 %.
    pub fn facility_default() -> Self {
        Self {
            rating_mva: 5.0,
            v_primary_ll: 25_000.0,
            v_secondary_ll: 415.0,
            z_percent: 6.0,
            x_over_r: default_x_over_r(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("transformer.rating_mva", self.rating_mva),
            ("transformer.v_primary_ll", self.v_primary_ll),
            ("transformer.v_secondary_ll", self.v_secondary_ll),
            ("transformer.z_percent", self.z_percent),
            ("transformer.x_over_r", self.x_over_r),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive"));
            }
        }
        Ok(())
    }

    pub fn ratio(&self) -> f64 {
        self.v_primary_ll / self.v_secondary_ll
    }
}

/// Per-phase equivalent of the transformer seen from the secondary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondaryModel {
    pub ratio: f64,
    pub phase_shift_deg: f64,
    pub v_ln_no_load: f64,
    pub resistance: f64,
    pub inductance: f64,
}

impl SecondaryModel {
    pub fn impedance_ohms(&self, frequency: f64) -> f64 {
        self.resistance.hypot(2.0 * PI * frequency * self.inductance)
    }
}

pub fn transformer_secondary(spec: &TransformerSpec, frequency: f64) -> SecondaryModel {
    let z_base = spec.v_secondary_ll.powi(2) / (spec.rating_mva * 1e6);
    let z = spec.z_percent / 100.0 * z_base;
    let r = z / (1.0 + spec.x_over_r.powi(2)).sqrt();
    let x = r * spec.x_over_r;
    SecondaryModel {
        ratio: spec.ratio(),
        phase_shift_deg: DELTA_WYE_SHIFT_DEG,
        v_ln_no_load: spec.v_secondary_ll / 3f64.sqrt(),
        resistance: r,
        inductance: x / (2.0 * PI * frequency),
    }
}

/// Network branches. `"gnd"` names the ground node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Branch {
    /// Balanced three-phase EMF (phase a at `phase_deg`) behind a series RL.
    /// Zero impedance makes `bus` an ideal voltage node.
    Source {
        name: String,
        bus: String,
        v_rms: f64,
        #[serde(default)]
        phase_deg: f64,
        #[serde(default)]
        r: f64,
        #[serde(default)]
        l: f64,
    },
    Line {
        name: String,
        from: String,
        to: String,
        r: f64,
        l: f64,
    },
    /// Constant-impedance load, series RL to ground.
    Load {
        name: String,
        bus: String,
        r: f64,
        #[serde(default)]
        l: f64,
    },
    /// Shunt capacitor with series damping resistance.
    Capacitor {
        name: String,
        bus: String,
        c: f64,
        #[serde(default)]
        r: f64,
    },
    Transformer {
        name: String,
        from: String,
        to: String,
        spec: TransformerSpec,
    },
    /// Fundamental EMF behind a series RL, plus harmonics that appear with
    /// the first fault and decay after it clears. Harmonic amplitudes are
    /// fractions of `v_rms`.
    HarmonicSource {
        name: String,
        bus: String,
        v_rms: f64,
        #[serde(default)]
        phase_deg: f64,
        r: f64,
        l: f64,
        #[serde(default)]
        harmonics: HarmonicSpec,
    },
}

impl Branch {
    pub fn name(&self) -> &str {
        match self {
            Branch::Source { name, .. }
            | Branch::Line { name, .. }
            | Branch::Load { name, .. }
            | Branch::Capacitor { name, .. }
            | Branch::Transformer { name, .. }
            | Branch::HarmonicSource { name, .. } => name,
        }
    }

    fn buses(&self) -> Vec<&str> {
        match self {
            Branch::Source { bus, .. }
            | Branch::Load { bus, .. }
            | Branch::Capacitor { bus, .. }
            | Branch::HarmonicSource { bus, .. } => vec![bus],
            Branch::Line { from, to, .. } | Branch::Transformer { from, to, .. } => vec![from, to],
        }
    }
}

/// A three-phase-to-ground fault.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub bus: String,
    /// Per-phase fault resistance in the bus's own ohms; 0 = bolted.
    pub impedance_ohms: f64,
    pub apply_time: f64,
    pub duration_s: f64,
}

impl FaultSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.impedance_ohms >= 0.0 && self.impedance_ohms.is_finite()) {
            return Err(Error::invalid("fault.impedance_ohms", "must be >= 0"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::invalid("fault.duration_s", "must be > 0"));
        }
        if !(self.apply_time >= 0.0 && self.apply_time.is_finite()) {
            return Err(Error::invalid("fault.apply_time", "must be >= 0"));
        }
        Ok(())
    }

    pub fn clear_time(&self) -> f64 {
        self.apply_time + self.duration_s
    }

    pub fn is_closed(&self, t: f64) -> bool {
        t >= self.apply_time && t < self.clear_time()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    #[serde(default = "default_frequency")]
    pub line_frequency: f64,
    pub buses: Vec<String>,
    pub branches: Vec<Branch>,
    /// Buses where converter blocks draw current, one terminal per phase.
    #[serde(default)]
    pub attachments: Vec<String>,
}

fn default_frequency() -> f64 {
    60.0
}

pub const GROUND: &str = "gnd";

impl NetworkModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.line_frequency > 0.0 && self.line_frequency.is_finite()) {
            return Err(Error::invalid("network.line_frequency", "must be > 0"));
        }
        let mut seen = Vec::new();
        for b in &self.buses {
            if b == GROUND || b.is_empty() {
                return Err(Error::invalid("network.buses", format!("`{b}` is reserved")));
            }
            if seen.contains(&b) {
                return Err(Error::invalid("network.buses", format!("`{b}` listed twice")));
            }
            seen.push(b);
        }
        let known = |b: &str| b == GROUND || self.buses.iter().any(|x| x == b);
        let mut names = Vec::new();
        let mut transformers = 0;
        let mut sources = 0;
        for br in &self.branches {
            if names.contains(&br.name()) {
                return Err(Error::invalid(
                    "network.branches",
                    format!("branch name `{}` used twice", br.name()),
                ));
            }
            names.push(br.name());
            for bus in br.buses() {
                if !known(bus) {
                    return Err(Error::UnknownBus(bus.to_string()));
                }
            }
            let field = |f: &str| format!("network.branches.{}.{f}", br.name());
            let positive = |f: &str, v: f64| {
                if v > 0.0 && v.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(field(f), "must be positive"))
                }
            };
            let non_negative = |f: &str, v: f64| {
                if v >= 0.0 && v.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(field(f), "must be >= 0"))
                }
            };
            match br {
                Branch::Source {
                    bus,
                    v_rms,
                    r,
                    l,
                    phase_deg,
                    ..
                } => {
                    sources += 1;
                    non_negative("v_rms", *v_rms)?;
                    non_negative("r", *r)?;
                    non_negative("l", *l)?;
                    if !phase_deg.is_finite() {
                        return Err(Error::invalid(field("phase_deg"), "must be finite"));
                    }
                    if bus == GROUND {
                        return Err(Error::invalid(field("bus"), "cannot be ground"));
                    }
                }
                Branch::Line { r, l, from, to, .. } => {
                    non_negative("r", *r)?;
                    non_negative("l", *l)?;
                    if *r + *l <= 0.0 {
                        return Err(Error::invalid(field("r"), "line impedance must be positive"));
                    }
                    if from == to {
                        return Err(Error::invalid(field("to"), "line ends must differ"));
                    }
                }
                Branch::Load { r, l, bus, .. } => {
                    non_negative("r", *r)?;
                    non_negative("l", *l)?;
                    if *r + *l <= 0.0 {
                        return Err(Error::invalid(field("r"), "load impedance must be positive"));
                    }
                    if bus == GROUND {
                        return Err(Error::invalid(field("bus"), "cannot be ground"));
                    }
                }
                Branch::Capacitor { c, r, bus, .. } => {
                    positive("c", *c)?;
                    non_negative("r", *r)?;
                    if bus == GROUND {
                        return Err(Error::invalid(field("bus"), "cannot be ground"));
                    }
                }
                Branch::Transformer { spec, from, to, .. } => {
                    transformers += 1;
                    spec.validate()?;
                    if from == GROUND || to == GROUND || from == to {
                        return Err(Error::invalid(field("to"), "windings need two distinct buses"));
                    }
                }
                Branch::HarmonicSource {
                    v_rms,
                    r,
                    l,
                    harmonics,
                    bus,
                    ..
                } => {
                    non_negative("v_rms", *v_rms)?;
                    non_negative("r", *r)?;
                    non_negative("l", *l)?;
                    if *r + *l <= 0.0 {
                        return Err(Error::invalid(field("r"), "source impedance must be positive"));
                    }
                    if bus == GROUND {
                        return Err(Error::invalid(field("bus"), "cannot be ground"));
                    }
                    harmonics.validate()?;
                }
            }
        }
        if sources == 0 {
            return Err(Error::invalid("network.branches", "at least one source is required"));
        }
        if transformers > 1 {
            return Err(Error::invalid(
                "network.branches",
                "at most one transformer is supported",
            ));
        }
        for a in &self.attachments {
            if a == GROUND || !known(a) {
                return Err(Error::UnknownBus(a.clone()));
            }
        }
        Ok(())
    }
}

/// A linear element of the expanded circuit. `None` terminals are ground.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Element {
    pub name: String,
    pub a: Option<usize>,
    pub b: Option<usize>,
    pub kind: ElementKind,
    /// Index into the fault list for switched elements.
    pub fault: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum ElementKind {
    Rl { r: f64, l: f64 },
    Rc { r: f64, c: f64 },
}

/// Fixed-voltage node driver, phase a.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Drive {
    Sine(SineSpec),
    Harmonic { reference: SineSpec, spec: HarmonicSpec },
}

/// The network expanded to nodes and elements, referred to the secondary.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Circuit {
    pub frequency: f64,
    pub nodes: Vec<String>,
    /// Driver for fixed nodes.
    pub fixed: Vec<Option<Drive>>,
    pub elements: Vec<Element>,
    pub faults: Vec<FaultSpec>,
    pub attachments: Vec<usize>,
    /// Number of user buses; they occupy the first node slots.
    pub bus_count: usize,
}

impl Circuit {
    pub fn build(model: &NetworkModel, faults: &[FaultSpec]) -> Result<Self> {
        model.validate()?;
        for f in faults {
            f.validate()?;
        }
        let f0 = model.line_frequency;
        let mut nodes: Vec<String> = model.buses.clone();
        let index: HashMap<String, usize> = nodes.iter().enumerate().map(|(k, b)| (b.clone(), k)).collect();
        let node = |b: &str| -> Option<usize> { index.get(b).copied() };

        // scaling of each bus: primary buses are those not reachable from
        // the transformer secondary without crossing the transformer
        let mut scale = vec![1.0; nodes.len()];
        let mut shift = 0.0;
        if let Some(Branch::Transformer { from, to, spec, .. }) =
            model.branches.iter().find(|b| matches!(b, Branch::Transformer { .. }))
        {
            let secondary = reachable(model, to);
            if secondary.contains(from) {
                return Err(Error::invalid(
                    "network.branches",
                    "transformer primary and secondary are connected by another path",
                ));
            }
            let n = spec.ratio();
            for (k, b) in model.buses.iter().enumerate() {
                if !secondary.contains(b) {
                    scale[k] = n;
                }
            }
            shift = DELTA_WYE_SHIFT_DEG;
        }
        let z_scale = |bus: Option<usize>| bus.map_or(1.0, |k| scale[k] * scale[k]);
        let v_scale = |bus: Option<usize>| bus.map_or(1.0, |k| scale[k]);
        let angle = |bus: Option<usize>| bus.map_or(0.0, |k| if scale[k] != 1.0 { shift } else { 0.0 });

        let mut fixed: Vec<Option<Drive>> = vec![None; nodes.len()];
        let mut elements = Vec::new();
        let add_emf = |nodes: &mut Vec<String>, fixed: &mut Vec<Option<Drive>>, name: &str, drive: Drive| {
            nodes.push(format!("{name}.emf"));
            fixed.push(Some(drive));
            nodes.len() - 1
        };

        for br in &model.branches {
            match br {
                Branch::Source {
                    name,
                    bus,
                    v_rms,
                    phase_deg,
                    r,
                    l,
                } => {
                    let k = node(bus);
                    let sine = SineSpec::new(v_rms / v_scale(k), f0, phase_deg + angle(k))?;
                    let zs = z_scale(k);
                    if *r + *l == 0.0 {
                        let k = k.expect("validated: sources are not grounded");
                        if fixed[k].is_some() {
                            return Err(Error::invalid(
                                format!("network.branches.{name}"),
                                format!("bus `{bus}` already held by an ideal source"),
                            ));
                        }
                        fixed[k] = Some(Drive::Sine(sine));
                    } else {
                        let e = add_emf(&mut nodes, &mut fixed, name, Drive::Sine(sine));
                        elements.push(Element {
                            name: name.clone(),
                            a: Some(e),
                            b: k,
                            kind: ElementKind::Rl { r: r / zs, l: l / zs },
                            fault: None,
                        });
                    }
                }
                Branch::HarmonicSource {
                    name,
                    bus,
                    v_rms,
                    phase_deg,
                    r,
                    l,
                    harmonics,
                } => {
                    let k = node(bus);
                    let reference = SineSpec::new(v_rms / v_scale(k), f0, phase_deg + angle(k))?;
                    let zs = z_scale(k);
                    let e = add_emf(
                        &mut nodes,
                        &mut fixed,
                        name,
                        Drive::Harmonic {
                            reference,
                            spec: harmonics.clone(),
                        },
                    );
                    elements.push(Element {
                        name: name.clone(),
                        a: Some(e),
                        b: k,
                        kind: ElementKind::Rl { r: r / zs, l: l / zs },
                        fault: None,
                    });
                }
                Branch::Line { name, from, to, r, l } => {
                    let (a, b) = (node(from), node(to));
                    let zs = z_scale(a.or(b));
                    elements.push(Element {
                        name: name.clone(),
                        a,
                        b,
                        kind: ElementKind::Rl { r: r / zs, l: l / zs },
                        fault: None,
                    });
                }
                Branch::Load { name, bus, r, l } => {
                    let k = node(bus);
                    let zs = z_scale(k);
                    elements.push(Element {
                        name: name.clone(),
                        a: k,
                        b: None,
                        kind: ElementKind::Rl { r: r / zs, l: l / zs },
                        fault: None,
                    });
                }
                Branch::Capacitor { name, bus, c, r } => {
                    let k = node(bus);
                    let zs = z_scale(k);
                    elements.push(Element {
                        name: name.clone(),
                        a: k,
                        b: None,
                        kind: ElementKind::Rc { r: r / zs, c: c * zs },
                        fault: None,
                    });
                }
                Branch::Transformer { name, from, to, spec } => {
                    let leak = transformer_secondary(spec, f0);
                    elements.push(Element {
                        name: name.clone(),
                        a: node(from),
                        b: node(to),
                        kind: ElementKind::Rl {
                            r: leak.resistance,
                            l: leak.inductance,
                        },
                        fault: None,
                    });
                }
            }
        }

        for (k, f) in faults.iter().enumerate() {
            let bus = node(&f.bus).ok_or_else(|| Error::UnknownBus(f.bus.clone()))?;
            let r = (f.impedance_ohms / z_scale(Some(bus))).max(BOLTED_OHMS);
            elements.push(Element {
                name: format!("fault{k}"),
                a: Some(bus),
                b: None,
                kind: ElementKind::Rl { r, l: 0.0 },
                fault: Some(k),
            });
        }

        let attachments = model
            .attachments
            .iter()
            .map(|a| node(a).ok_or_else(|| Error::UnknownBus(a.clone())))
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            frequency: f0,
            nodes,
            fixed,
            elements,
            faults: faults.to_vec(),
            attachments,
            bus_count: model.buses.len(),
        })
    }

    pub fn node_index(&self, bus: &str) -> Result<usize> {
        self.nodes[..self.bus_count]
            .iter()
            .position(|b| b == bus)
            .ok_or_else(|| Error::UnknownBus(bus.to_string()))
    }

    /// Fault switch states at time `t`.
    pub fn closed_at(&self, t: f64) -> Vec<bool> {
        self.faults.iter().map(|f| f.is_closed(t)).collect()
    }

    pub fn fault_element(&self, f: usize) -> usize {
        self.elements
            .iter()
            .position(|e| e.fault == Some(f))
            .expect("every fault has a switch element")
    }

    pub fn is_active(&self, e: &Element, closed: &[bool]) -> bool {
        e.fault.is_none_or(|k| closed[k])
    }

    /// Finds nodes with no conductive path to ground or a fixed node.
    pub fn floating_nodes(&self, closed: &[bool]) -> Vec<String> {
        let n = self.nodes.len();
        let mut parent: Vec<usize> = (0..=n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let ground = n;
        for (k, f) in self.fixed.iter().enumerate() {
            if f.is_some() {
                let (a, b) = (find(&mut parent, k), find(&mut parent, ground));
                parent[a] = b;
            }
        }
        for e in self.elements.iter().filter(|e| self.is_active(e, closed)) {
            let a = e.a.unwrap_or(ground);
            let b = e.b.unwrap_or(ground);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
        let g = find(&mut parent, ground);
        (0..n)
            .filter(|&k| find(&mut parent, k) != g)
            .map(|k| self.nodes[k].clone())
            .collect()
    }

    /// Drive of fixed node `k` for phase `phase` at time `t`, with the
    /// harmonic envelope keyed to the fault windows.
    pub fn drive_value(&self, k: usize, phase: usize, t: f64) -> f64 {
        match &self.fixed[k] {
            None => 0.0,
            Some(Drive::Sine(s)) => crate::signals::sample_source(&phase_shifted(s, phase), t),
            Some(Drive::Harmonic { reference, spec }) => {
                let fundamental = phase_shifted(reference, phase);
                let base = crate::signals::sample_source(&fundamental, t);
                match self.faults.first() {
                    None => base,
                    Some(f) => {
                        base + crate::signals::HarmonicInjection {
                            spec: spec.clone(),
                            fundamental,
                            start_s: f.apply_time,
                            clear_s: f.clear_time(),
                        }
                        .sample(t)
                    }
                }
            }
        }
    }
}

pub(crate) fn phase_shifted(s: &SineSpec, phase: usize) -> SineSpec {
    s.shifted(-120.0 * phase as f64)
}

fn reachable(model: &NetworkModel, start: &str) -> Vec<String> {
    let mut seen = vec![start.to_string()];
    let mut stack = vec![start.to_string()];
    while let Some(b) = stack.pop() {
        for br in &model.branches {
            if let Branch::Line { from, to, .. } = br {
                let other = if *from == b {
                    to
                } else if *to == b {
                    from
                } else {
                    continue;
                };
                if other != GROUND && !seen.contains(other) {
                    seen.push(other.clone());
                    stack.push(other.clone());
                }
            }
        }
    }
    seen
}
