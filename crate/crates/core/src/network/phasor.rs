//! Fundamental-frequency phasor solution of the expanded circuit, used to
//! initialize the transient solver and to calibrate fault impedances.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{Circuit, Drive, ElementKind, FaultSpec, NetworkModel};
use crate::error::{Error, Result};

/// Phase-a phasors (RMS, sine reference) at every node and element.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasorSolution {
    pub nodes: Vec<String>,
    pub voltages: Vec<Complex64>,
    pub currents: Vec<Complex64>,
}

impl PhasorSolution {
    pub fn voltage(&self, bus: &str) -> Result<Complex64> {
        self.nodes
            .iter()
            .position(|n| n == bus)
            .map(|k| self.voltages[k])
            .ok_or_else(|| Error::UnknownBus(bus.to_string()))
    }
}

pub(crate) fn element_admittance(kind: ElementKind, omega: f64) -> Complex64 {
    match kind {
        ElementKind::Rl { r, l } => Complex64::new(r, omega * l).inv(),
        ElementKind::Rc { r, c } => Complex64::new(r, -1.0 / (omega * c)).inv(),
    }
}

/// Solves the circuit with the given fault switch states and extra shunt
/// admittances per node.
pub(crate) fn solve_circuit(
    circuit: &Circuit,
    closed: &[bool],
    shunts: &[(usize, Complex64)],
) -> Result<PhasorSolution> {
    let floating = circuit.floating_nodes(closed);
    if !floating.is_empty() {
        return Err(Error::SingularNetwork { nodes: floating });
    }
    let omega = 2.0 * std::f64::consts::PI * circuit.frequency;
    let n = circuit.nodes.len();
    let mut v = vec![Complex64::new(0.0, 0.0); n];
    let mut slot = vec![None; n];
    let mut unknown = Vec::new();
    for k in 0..n {
        match &circuit.fixed[k] {
            Some(Drive::Sine(s)) | Some(Drive::Harmonic { reference: s, .. }) => {
                v[k] = Complex64::from_polar(s.rms_volts, s.phase_deg.to_radians());
            }
            None => {
                slot[k] = Some(unknown.len());
                unknown.push(k);
            }
        }
    }
    let m = unknown.len();
    let mut y = DMatrix::<Complex64>::zeros(m, m);
    let mut rhs = DVector::<Complex64>::zeros(m);
    let admittances: Vec<Complex64> = circuit
        .elements
        .iter()
        .map(|e| element_admittance(e.kind, omega))
        .collect();
    for (e, &ye) in circuit.elements.iter().zip(&admittances) {
        if !circuit.is_active(e, closed) {
            continue;
        }
        let sa = e.a.and_then(|k| slot[k]);
        let sb = e.b.and_then(|k| slot[k]);
        if let Some(i) = sa {
            y[(i, i)] += ye;
            match (sb, e.b) {
                (Some(j), _) => y[(i, j)] -= ye,
                (None, Some(kb)) => rhs[i] += ye * v[kb],
                (None, None) => {}
            }
        }
        if let Some(j) = sb {
            y[(j, j)] += ye;
            match (sa, e.a) {
                (Some(i), _) => y[(j, i)] -= ye,
                (None, Some(ka)) => rhs[j] += ye * v[ka],
                (None, None) => {}
            }
        }
    }
    for &(k, ys) in shunts {
        if let Some(i) = slot[k] {
            y[(i, i)] += ys;
        }
    }
    if m > 0 {
        let x = y.lu().solve(&rhs).ok_or_else(|| Error::SingularNetwork {
            nodes: unknown.iter().map(|&k| circuit.nodes[k].clone()).collect(),
        })?;
        for (i, &k) in unknown.iter().enumerate() {
            v[k] = x[i];
        }
    }
    let currents = circuit
        .elements
        .iter()
        .zip(&admittances)
        .map(|(e, &ye)| {
            if circuit.is_active(e, closed) {
                let va = e.a.map_or(Complex64::new(0.0, 0.0), |k| v[k]);
                let vb = e.b.map_or(Complex64::new(0.0, 0.0), |k| v[k]);
                ye * (va - vb)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    Ok(PhasorSolution {
        nodes: circuit.nodes.clone(),
        voltages: v,
        currents,
    })
}

/// Phase-a steady state of `model` with every listed fault applied and
/// extra shunt admittances at the named buses.
pub fn phasor_solve(
    model: &NetworkModel,
    faults: &[FaultSpec],
    shunts: &[(String, Complex64)],
) -> Result<PhasorSolution> {
    let circuit = Circuit::build(model, faults)?;
    let shunts = shunts
        .iter()
        .map(|(bus, y)| Ok((circuit.node_index(bus)?, *y)))
        .collect::<Result<Vec<_>>>()?;
    let closed = vec![true; faults.len()];
    solve_circuit(&circuit, &closed, &shunts)
}
