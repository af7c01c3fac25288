//! Facility outcome tables (magnitude rows × duration columns) and their
//! comparison against reference tables.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{calibrate_fault_impedance, run_facility_scenario, FacilityScenario, PhaseOutcome, TripOutcome};

/// Published outcomes for a three-phase fault inside the premises.
pub const PREMISES_FAULT_REFERENCE: &str = "\
sag,09ms,1 cycle (15ms),3 cycles (45ms),100ms
75%,NO,NO,NO,NO
50%,NO,NO,1/3 TRIP,YES
25%,YES,YES,YES,YES
0%,YES,YES,YES,YES
";

/// Published outcomes for a three-phase fault at bus 3.
pub const BUS3_FAULT_REFERENCE: &str = "\
sag,09ms,1 cycle (15ms),3 cycles (45ms),100ms
75%,1/3 TRIP,1/3 TRIP,1/3 TRIP,1/3 TRIP
50%,1/3 TRIP,2/3 TRIP,2/3 TRIP,YES
25%,1/3 TRIP,YES,YES,YES
0%,2/3 TRIP,YES,YES,YES
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeTable {
    pub retained_fractions: Vec<f64>,
    pub durations_s: Vec<f64>,
    /// `cells[row][column]`, rows following `retained_fractions`.
    pub cells: Vec<Vec<TripOutcome>>,
}

fn row_label(r: f64) -> String {
    format!("{}%", (r * 100.0).round())
}

fn column_label(d: f64) -> String {
    format!("{}ms", (d * 1000.0).round())
}

/// `"75%"` → 0.75.
fn parse_row_label(s: &str) -> Option<f64> {
    let t = s.trim().trim_end_matches('%').trim();
    t.parse::<f64>().ok().map(|v| v / 100.0)
}

/// `"09ms"`, `"1 cycle (15ms)"`, `"0.045s"` → seconds.
fn parse_column_label(s: &str) -> Option<f64> {
    let s = s.trim();
    let inner = match (s.find('('), s.rfind(')')) {
        (Some(a), Some(b)) if b > a => &s[a + 1..b],
        _ => s,
    };
    let inner = inner.trim().to_ascii_lowercase();
    if let Some(v) = inner.strip_suffix("ms") {
        v.trim().parse::<f64>().ok().map(|v| v / 1000.0)
    } else if let Some(v) = inner.strip_suffix('s') {
        v.trim().parse::<f64>().ok()
    } else {
        None
    }
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

impl OutcomeTable {
    pub fn from_fn(
        retained_fractions: &[f64],
        durations_s: &[f64],
        mut f: impl FnMut(f64, f64) -> Result<TripOutcome>,
    ) -> Result<Self> {
        let cells = retained_fractions
            .iter()
            .map(|&r| durations_s.iter().map(|&d| f(r, d)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            retained_fractions: retained_fractions.to_vec(),
            durations_s: durations_s.to_vec(),
            cells,
        })
    }

    pub fn get(&self, retained_fraction: f64, duration_s: f64) -> Option<TripOutcome> {
        let i = self
            .retained_fractions
            .iter()
            .position(|&r| same(r, retained_fraction))?;
        let j = self.durations_s.iter().position(|&d| same(d, duration_s))?;
        Some(self.cells[i][j])
    }

    /// Reads a table whose header row holds duration labels after one
    /// leading cell, and whose rows start with a percentage label. Cells use
    /// the outcome alphabet (`none`, `1/3`, `2/3`, `all`, or `NO`/`YES`).
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr.headers()?.clone();
        let durations_s = headers
            .iter()
            .skip(1)
            .map(|h| {
                parse_column_label(h).ok_or_else(|| Error::LabelMismatch(format!("unreadable column label `{h}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        if durations_s.is_empty() {
            return Err(Error::LabelMismatch("table has no duration columns".into()));
        }
        let mut retained_fractions = Vec::new();
        let mut cells = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let label = rec.get(0).unwrap_or_default();
            let r = parse_row_label(label)
                .ok_or_else(|| Error::LabelMismatch(format!("unreadable row label `{label}`")))?;
            if rec.len() != durations_s.len() + 1 {
                return Err(Error::LabelMismatch(format!(
                    "row `{label}` has {} cells",
                    rec.len() - 1
                )));
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|c| {
                    TripOutcome::parse(c)
                        .ok_or_else(|| Error::LabelMismatch(format!("unknown outcome `{c}` in row `{label}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            retained_fractions.push(r);
            cells.push(row);
        }
        Ok(Self {
            retained_fractions,
            durations_s,
            cells,
        })
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::read_csv(text.as_bytes())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["retained".to_string()];
        header.extend(self.durations_s.iter().map(|&d| column_label(d)));
        w.write_record(&header)?;
        for (r, row) in self.retained_fractions.iter().zip(&self.cells) {
            let mut rec = vec![row_label(*r)];
            rec.extend(row.iter().map(|o| o.label().to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMismatch {
    pub retained_fraction: f64,
    pub duration_s: f64,
    pub result: TripOutcome,
    pub reference: TripOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub matches: Vec<(f64, f64)>,
    pub mismatches: Vec<CellMismatch>,
    pub match_fraction: f64,
}

fn same_labels(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.iter().any(|y| same(*x, *y)))
}

/// Cell-by-cell comparison. Both tables must carry the same row and column
/// labels, in any order.
pub fn compare_reference(results: &OutcomeTable, reference: &OutcomeTable) -> Result<MatchReport> {
    if !same_labels(&results.retained_fractions, &reference.retained_fractions) {
        return Err(Error::LabelMismatch(format!(
            "rows {:?} vs {:?}",
            results.retained_fractions, reference.retained_fractions
        )));
    }
    if !same_labels(&results.durations_s, &reference.durations_s) {
        return Err(Error::LabelMismatch(format!(
            "columns {:?} vs {:?}",
            results.durations_s, reference.durations_s
        )));
    }
    let mut matches = Vec::new();
    let mut mismatches = Vec::new();
    for (i, &r) in results.retained_fractions.iter().enumerate() {
        for (j, &d) in results.durations_s.iter().enumerate() {
            let got = results.cells[i][j];
            let want = reference.get(r, d).expect("labels checked above");
            if got == want {
                matches.push((r, d));
            } else {
                mismatches.push(CellMismatch {
                    retained_fraction: r,
                    duration_s: d,
                    result: got,
                    reference: want,
                });
            }
        }
    }
    let total = matches.len() + mismatches.len();
    Ok(MatchReport {
        match_fraction: matches.len() as f64 / total as f64,
        matches,
        mismatches,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityCell {
    pub retained_fraction: f64,
    pub duration_s: f64,
    /// Fault resistance in the faulted bus's own ohms.
    pub fault_ohms: f64,
    pub outcome: TripOutcome,
    pub phases: Vec<PhaseOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacilityTable {
    pub fault_bus: String,
    pub table: OutcomeTable,
    pub cells: Vec<FacilityCell>,
}

/// Runs `base` once per (magnitude, duration) cell, with the fault
/// impedance calibrated per magnitude at the faulted bus.
pub fn facility_table(
    base: &FacilityScenario,
    retained_fractions: &[f64],
    durations_s: &[f64],
) -> Result<FacilityTable> {
    let bus = base.fault.bus.clone();
    let ohms = retained_fractions
        .iter()
        .map(|&r| calibrate_fault_impedance(base, r, &bus))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(f64, f64, f64)> = retained_fractions
        .iter()
        .zip(&ohms)
        .flat_map(|(&r, &z)| durations_s.iter().map(move |&d| (r, d, z)))
        .collect();
    let cells = jobs
        .into_par_iter()
        .map(|(r, d, z)| {
            let scenario = base.with_fault(z, d);
            let res = run_facility_scenario(&scenario)?;
            Ok(FacilityCell {
                retained_fraction: r,
                duration_s: d,
                fault_ohms: z,
                outcome: res.outcome,
                phases: res.phases,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let table = OutcomeTable::from_fn(retained_fractions, durations_s, |r, d| {
        Ok(cells
            .iter()
            .find(|c| c.retained_fraction == r && c.duration_s == d)
            .expect("every cell ran")
            .outcome)
    })?;
    Ok(FacilityTable {
        fault_bus: bus,
        table,
        cells,
    })
}
