//! Trapezoidal companion models and the per-step nodal solve.
//!
//! A series RL branch with voltage `v` across it and current `i` becomes
//! `i[n+1] = G v[n+1] + h[n]` with `G = 1/(R + 2L/dt)` and
//! `h[n] = G (v[n] + (2L/dt − R) i[n])`. A series RC branch uses
//! `G = 1/(R + dt/2C)` and `h[n] = −G (vc[n] + dt/(2C) i[n])`, with `vc`
//! the capacitor voltage. Pure resistors carry no history. Fixed-voltage
//! nodes are eliminated. Each phase keeps its own factorization, refactored
//! only when one of its fault switches changes: faults close on all phases
//! at once and each phase clears at its first fault-current zero after the
//! scheduled clearing time.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector, Dyn, LU};
use num_complex::Complex64;

use super::phasor::solve_circuit;
use super::{Circuit, ElementKind, FaultSpec, NetworkModel, PHASES};
use crate::engine::NetworkSolver;
use crate::error::{Error, Result};
use crate::trace::Event;

#[derive(Debug, Clone)]
struct PhaseState {
    v: Vec<f64>,
    i: Vec<f64>,
    vc: Vec<f64>,
    h: Vec<f64>,
    i_prev: Vec<f64>,
    closed: Vec<bool>,
    lu: Option<LU<f64, Dyn, Dyn>>,
}

#[derive(Debug, Clone)]
pub struct CompanionSystem {
    circuit: Circuit,
    dt: f64,
    slot: Vec<Option<usize>>,
    unknown: Vec<usize>,
    g: Vec<f64>,
    phases: Vec<PhaseState>,
    rhs: DVector<f64>,
}

/// Assembles the companion system of a network without faults.
pub fn assemble_companion(model: &NetworkModel, dt: f64) -> Result<CompanionSystem> {
    CompanionSystem::new(model, &[], dt)
}

impl CompanionSystem {
    /// Assembles the system and initializes every branch at the no-load,
    /// pre-fault sinusoidal steady state one step before `t = 0`.
    pub fn new(model: &NetworkModel, faults: &[FaultSpec], dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        let circuit = Circuit::build(model, faults)?;
        let n = circuit.nodes.len();
        let mut slot = vec![None; n];
        let mut unknown = Vec::new();
        for (k, s) in slot.iter_mut().enumerate() {
            if circuit.fixed[k].is_none() {
                *s = Some(unknown.len());
                unknown.push(k);
            }
        }
        let g = circuit
            .elements
            .iter()
            .map(|e| match e.kind {
                ElementKind::Rl { r, l } => 1.0 / (r + 2.0 * l / dt),
                ElementKind::Rc { r, c } => 1.0 / (r + dt / (2.0 * c)),
            })
            .collect();
        let m = unknown.len();
        let mut sys = Self {
            circuit,
            dt,
            slot,
            unknown,
            g,
            phases: Vec::new(),
            rhs: DVector::zeros(m),
        };
        sys.initialize()?;
        Ok(sys)
    }

    fn factor(&self, closed: &[bool]) -> Result<Option<LU<f64, Dyn, Dyn>>> {
        let floating = self.circuit.floating_nodes(closed);
        if !floating.is_empty() {
            return Err(Error::SingularNetwork { nodes: floating });
        }
        let m = self.unknown.len();
        if m == 0 {
            return Ok(None);
        }
        let mut y = DMatrix::<f64>::zeros(m, m);
        for (e, &g) in self.circuit.elements.iter().zip(&self.g) {
            if !self.circuit.is_active(e, closed) {
                continue;
            }
            let sa = e.a.and_then(|k| self.slot[k]);
            let sb = e.b.and_then(|k| self.slot[k]);
            if let Some(i) = sa {
                y[(i, i)] += g;
            }
            if let Some(j) = sb {
                y[(j, j)] += g;
            }
            if let (Some(i), Some(j)) = (sa, sb) {
                y[(i, j)] -= g;
                y[(j, i)] -= g;
            }
        }
        let lu = y.lu();
        if !lu.is_invertible() {
            return Err(Error::SingularNetwork {
                nodes: self.unknown.iter().map(|&k| self.circuit.nodes[k].clone()).collect(),
            });
        }
        Ok(Some(lu))
    }

    fn initialize(&mut self) -> Result<()> {
        let closed = vec![false; self.circuit.faults.len()];
        let lu = self.factor(&closed)?;
        let sol = solve_circuit(&self.circuit, &closed, &[])?;
        let omega = 2.0 * PI * self.circuit.frequency;
        let t0 = -self.dt;
        let inst = |z: Complex64, phase: usize| {
            let rot = Complex64::from_polar(1.0, -2.0 * PI / 3.0 * phase as f64);
            SQRT_2 * (z * rot * Complex64::from_polar(1.0, omega * t0)).im
        };
        let ne = self.circuit.elements.len();
        self.phases = (0..PHASES)
            .map(|p| {
                let v: Vec<f64> = sol.voltages.iter().map(|&z| inst(z, p)).collect();
                let mut st = PhaseState {
                    v,
                    i: vec![0.0; ne],
                    i_prev: vec![0.0; ne],
                    vc: vec![0.0; ne],
                    h: vec![0.0; ne],
                    closed: closed.clone(),
                    lu: lu.clone(),
                };
                for (k, e) in self.circuit.elements.iter().enumerate() {
                    st.i[k] = inst(sol.currents[k], p);
                    if let ElementKind::Rc { r, .. } = e.kind {
                        let va = e.a.map_or(Complex64::new(0.0, 0.0), |n| sol.voltages[n]);
                        let vb = e.b.map_or(Complex64::new(0.0, 0.0), |n| sol.voltages[n]);
                        st.vc[k] = inst(va - vb - sol.currents[k] * r, p);
                    }
                }
                st
            })
            .collect();
        for p in 0..PHASES {
            self.update_history(p);
        }
        Ok(())
    }

    fn update_history(&mut self, p: usize) {
        let dt = self.dt;
        let st = &mut self.phases[p];
        for (k, e) in self.circuit.elements.iter().enumerate() {
            let g = self.g[k];
            st.h[k] = if !self.circuit.is_active(e, &st.closed) {
                0.0
            } else {
                match e.kind {
                    ElementKind::Rl { r, l } if l > 0.0 => {
                        let va = e.a.map_or(0.0, |n| st.v[n]);
                        let vb = e.b.map_or(0.0, |n| st.v[n]);
                        g * ((va - vb) + (2.0 * l / dt - r) * st.i[k])
                    }
                    ElementKind::Rl { .. } => 0.0,
                    ElementKind::Rc { c, .. } => -g * (st.vc[k] + dt / (2.0 * c) * st.i[k]),
                }
            };
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn terminal_count(&self) -> usize {
        self.circuit.attachments.len() * PHASES
    }

    /// Solves all phases at time `t`. `drawn[k]` is the current drawn out of
    /// terminal `k = phase · attachments + attachment`.
    pub fn step(&mut self, t: f64, drawn: &[f64]) -> Result<()> {
        let scheduled = self.circuit.closed_at(t);
        let n_att = self.circuit.attachments.len();
        for p in 0..PHASES {
            let closed = self.switch_states(p, &scheduled);
            if closed != self.phases[p].closed {
                self.phases[p].lu = self.factor(&closed)?;
                self.phases[p].closed = closed;
            }
            for k in 0..self.circuit.nodes.len() {
                if self.circuit.fixed[k].is_some() {
                    self.phases[p].v[k] = self.circuit.drive_value(k, p, t);
                }
            }
            self.rhs.fill(0.0);
            {
                let st = &self.phases[p];
                for (k, e) in self.circuit.elements.iter().enumerate() {
                    if !self.circuit.is_active(e, &st.closed) {
                        continue;
                    }
                    let g = self.g[k];
                    let h = st.h[k];
                    let sa = e.a.and_then(|n| self.slot[n]);
                    let sb = e.b.and_then(|n| self.slot[n]);
                    if let Some(i) = sa {
                        self.rhs[i] -= h;
                        if let (None, Some(nb)) = (sb, e.b) {
                            self.rhs[i] += g * st.v[nb];
                        }
                    }
                    if let Some(j) = sb {
                        self.rhs[j] += h;
                        if let (None, Some(na)) = (sa, e.a) {
                            self.rhs[j] += g * st.v[na];
                        }
                    }
                }
                for (a, &node) in self.circuit.attachments.iter().enumerate() {
                    if let Some(i) = self.slot[node] {
                        self.rhs[i] -= drawn.get(p * n_att + a).copied().unwrap_or(0.0);
                    }
                }
            }
            if let Some(lu) = &self.phases[p].lu {
                if !lu.solve_mut(&mut self.rhs) {
                    return Err(Error::SingularNetwork {
                        nodes: self.unknown.iter().map(|&k| self.circuit.nodes[k].clone()).collect(),
                    });
                }
                let st = &mut self.phases[p];
                for (i, &k) in self.unknown.iter().enumerate() {
                    st.v[k] = self.rhs[i];
                }
            }
            let st = &mut self.phases[p];
            if let Some(k) = st.v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    channel: self.circuit.nodes[k].clone(),
                    time: t,
                });
            }
            for (k, e) in self.circuit.elements.iter().enumerate() {
                if !self.circuit.is_active(e, &st.closed) {
                    st.i[k] = 0.0;
                    continue;
                }
                let va = e.a.map_or(0.0, |n| st.v[n]);
                let vb = e.b.map_or(0.0, |n| st.v[n]);
                let i = self.g[k] * (va - vb) + st.h[k];
                st.i_prev[k] = st.i[k];
                st.i[k] = i;
                if let ElementKind::Rc { r, .. } = e.kind {
                    st.vc[k] = va - vb - r * i;
                }
            }
            self.update_history(p);
        }
        Ok(())
    }

    /// Scheduled switch states for phase `p`, except that a closed fault
    /// stays closed until its current on that phase passes through zero.
    fn switch_states(&self, p: usize, scheduled: &[bool]) -> Vec<bool> {
        let st = &self.phases[p];
        scheduled
            .iter()
            .enumerate()
            .map(|(f, &want)| {
                if want || !st.closed[f] {
                    return want;
                }
                let k = self.circuit.fault_element(f);
                let (now, before) = (st.i[k], st.i_prev[k]);
                !(now == 0.0 || now.signum() != before.signum())
            })
            .collect()
    }

    pub fn node_voltage(&self, bus: &str, phase: usize) -> Result<f64> {
        let k = self.circuit.node_index(bus)?;
        Ok(self.phases[phase].v[k])
    }

    /// Instantaneous current through the named element, from its first
    /// terminal to its second (or to ground).
    pub fn element_current(&self, name: &str, phase: usize) -> Option<f64> {
        self.circuit
            .elements
            .iter()
            .position(|e| e.name == name)
            .map(|k| self.phases[phase].i[k])
    }

    pub fn bus_names(&self) -> &[String] {
        &self.circuit.nodes[..self.circuit.bus_count]
    }
}

const PHASE_SUFFIX: [&str; PHASES] = ["a", "b", "c"];

impl NetworkSolver for CompanionSystem {
    fn solve(&mut self, t: f64, dt: f64, drawn: &[f64]) -> Result<()> {
        if (dt - self.dt).abs() > 1e-12 * self.dt {
            return Err(Error::invalid(
                "dt",
                format!("network assembled for dt = {} s, stepped with {dt} s", self.dt),
            ));
        }
        self.step(t, drawn)
    }

    fn terminal_voltage(&self, k: usize) -> f64 {
        let n_att = self.circuit.attachments.len();
        let node = self.circuit.attachments[k % n_att];
        self.phases[k / n_att].v[node]
    }

    fn probe_names(&self) -> Vec<String> {
        self.bus_names()
            .iter()
            .flat_map(|b| PHASE_SUFFIX.iter().map(move |p| format!("{b}.v{p}")))
            .collect()
    }

    fn probes(&self, out: &mut Vec<f64>) {
        for k in 0..self.circuit.bus_count {
            for p in 0..PHASES {
                out.push(self.phases[p].v[k]);
            }
        }
    }

    fn scheduled_events(&self) -> Vec<Event> {
        self.circuit
            .faults
            .iter()
            .flat_map(|f| {
                [
                    Event {
                        time: f.apply_time,
                        label: format!("fault_apply:{}", f.bus),
                    },
                    Event {
                        time: f.clear_time(),
                        label: format!("fault_clear:{}", f.bus),
                    },
                ]
            })
            .collect()
    }

    fn line_frequency(&self) -> f64 {
        self.circuit.frequency
    }
}
