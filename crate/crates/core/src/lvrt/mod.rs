//! Voltage-sag sweeps: single-converter capability maps over magnitude,
//! duration and point-on-wave, ride-through boundaries, and outcome tables
//! for the facility scenarios.

mod table;

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::converter::ConverterParams;
use crate::engine::{run_single, SimConfig};
use crate::error::{Error, Result};
use crate::signals::{LineSource, SagSpec, SineSpec};

pub use table::{
    compare_reference, facility_table, CellMismatch, FacilityCell, FacilityTable, MatchReport, OutcomeTable,
    BUS3_FAULT_REFERENCE, PREMISES_FAULT_REFERENCE,
};

/// The sag is aligned to the first matching point on the wave after this time.
pub const SAG_ARM_TIME_S: f64 = 0.4;
/// Simulated time kept after the sag clears.
pub const POST_SAG_S: f64 = 0.15;
/// Cycles after clearing over which the recovery current peak is taken.
pub const RECOVERY_CYCLES: f64 = 2.0;

pub const CAPABILITY_SUMMARY_SCHEMA: &str = "cryptoload.capability-summary/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepGrid {
    pub retained_fractions: Vec<f64>,
    pub durations_s: Vec<f64>,
    pub pow_angles_deg: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            retained_fractions: vec![0.0, 0.25, 0.5, 0.75],
            durations_s: vec![0.009, 0.015, 0.045, 0.100],
            pow_angles_deg: vec![0.0, 45.0, 90.0],
        }
    }
}

fn sorted(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, xs) in [
            ("grid.retained_fractions", &self.retained_fractions),
            ("grid.durations_s", &self.durations_s),
            ("grid.pow_angles_deg", &self.pow_angles_deg),
        ] {
            if xs.is_empty() {
                return Err(Error::invalid(name, "must not be empty"));
            }
            if xs.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        if !sorted(&self.retained_fractions) {
            return Err(Error::invalid("grid.retained_fractions", "must be strictly ascending"));
        }
        if !sorted(&self.durations_s) {
            return Err(Error::invalid("grid.durations_s", "must be strictly ascending"));
        }
        if self.retained_fractions.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::invalid("grid.retained_fractions", "must lie in [0, 1]"));
        }
        if self.durations_s[0] <= 0.0 {
            return Err(Error::invalid("grid.durations_s", "must be > 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.retained_fractions.len() * self.durations_s.len() * self.pow_angles_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in row-major order: magnitude, then duration, then angle.
    pub fn cells(&self) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.len());
        for &r in &self.retained_fractions {
            for &d in &self.durations_s {
                for &a in &self.pow_angles_deg {
                    out.push((r, d, a));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SagOutcome {
    RideThrough,
    Trip,
    /// The run aborted; see the point's diagnostic.
    Failed,
}

impl SagOutcome {
    pub fn label(self) -> &'static str {
        match self {
            SagOutcome::RideThrough => "ride_through",
            SagOutcome::Trip => "trip",
            SagOutcome::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityPoint {
    pub retained_fraction: f64,
    pub duration_s: f64,
    pub pow_deg: f64,
    pub outcome: SagOutcome,
    /// Trip instant, measured from sag onset.
    pub trip_time: Option<f64>,
    /// Largest |i_in| within two cycles after the sag clears.
    pub peak_recovery_current: f64,
    pub sag_onset_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub retained_fraction: f64,
    pub duration_s: f64,
    pub outcome: SagOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityMap {
    pub grid: SweepGrid,
    pub points: Vec<CapabilityPoint>,
    pub worst_case: Vec<WorstCase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub retained_fraction: f64,
    pub min_trip_duration_s: f64,
}

/// Runs one sag against a converter on an ideal source at its rated input.
///
/// The sag starts at the first instant after [`SAG_ARM_TIME_S`] where the
/// source sits at the requested angle. `sim.t_end` is extended if needed to
/// cover [`POST_SAG_S`] after clearing.
pub fn run_sag_experiment(params: &ConverterParams, sag: SagSpec, sim: &SimConfig) -> Result<CapabilityPoint> {
    sag.validate()?;
    let sine = SineSpec::new(params.v_in_rms_nom, params.line_frequency, 0.0)?;
    let source = LineSource::with_sag(sine, sag, SAG_ARM_TIME_S);
    let schedule = source.sag.expect("source built with a sag");
    let config = SimConfig {
        t_end: sim.t_end.max(schedule.end_s() + POST_SAG_S),
        ..*sim
    };
    let run = run_single(source, *params, &config)?;
    match run.steady_state_time {
        Some(t) if t <= schedule.onset_s => {}
        _ => {
            return Err(Error::Validation(format!(
                "converter did not settle before the sag at {:.4} s",
                schedule.onset_s
            )))
        }
    }
    let trip = run.converters[0].trip;
    let trace = &run.trace;
    let i_in = trace.channel("i_in")?;
    let from = trace.index_at(schedule.end_s());
    let to = trace
        .index_at(schedule.end_s() + RECOVERY_CYCLES / params.line_frequency)
        .min(i_in.len());
    let peak = i_in[from.min(to)..to].iter().fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(CapabilityPoint {
        retained_fraction: sag.retained_fraction,
        duration_s: sag.duration_s,
        pow_deg: sag.start_pow_deg,
        outcome: if trip.is_tripped() {
            SagOutcome::Trip
        } else {
            SagOutcome::RideThrough
        },
        trip_time: trip.trip_time.map(|t| t - schedule.onset_s),
        peak_recovery_current: peak,
        sag_onset_s: Some(schedule.onset_s),
        diagnostic: None,
    })
}

fn run_cell(params: &ConverterParams, sim: &SimConfig, (r, d, a): (f64, f64, f64)) -> CapabilityPoint {
    let result = SagSpec::new(r, a, d).and_then(|sag| run_sag_experiment(params, sag, sim));
    result.unwrap_or_else(|e| CapabilityPoint {
        retained_fraction: r,
        duration_s: d,
        pow_deg: a,
        outcome: SagOutcome::Failed,
        trip_time: None,
        peak_recovery_current: 0.0,
        sag_onset_s: None,
        diagnostic: Some(e.to_string()),
    })
}

/// Runs every grid cell concurrently on the global thread pool. Cells are
/// independent, so the map does not depend on scheduling.
pub fn sweep_capability(params: &ConverterParams, grid: &SweepGrid, sim: &SimConfig) -> Result<CapabilityMap> {
    grid.validate()?;
    params.validate()?;
    sim.validate()?;
    let points: Vec<CapabilityPoint> = grid
        .cells()
        .into_par_iter()
        .map(|cell| run_cell(params, sim, cell))
        .collect();
    Ok(CapabilityMap::from_points(grid.clone(), points))
}

/// [`sweep_capability`] on a dedicated pool of `jobs` threads.
pub fn sweep_capability_jobs(
    params: &ConverterParams,
    grid: &SweepGrid,
    sim: &SimConfig,
    jobs: usize,
) -> Result<CapabilityMap> {
    with_jobs(jobs, || sweep_capability(params, grid, sim))
}

/// Runs `f` on a dedicated pool of `jobs` threads.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if jobs == 0 {
        return Err(Error::invalid("jobs", "must be >= 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    pool.install(f)
}

impl CapabilityMap {
    /// Assembles a map, deriving the worst case over angles for every
    /// (magnitude, duration) pair. A trip anywhere dominates; otherwise a
    /// failed run dominates a ride-through.
    pub fn from_points(grid: SweepGrid, points: Vec<CapabilityPoint>) -> Self {
        let mut worst_case = Vec::new();
        for &r in &grid.retained_fractions {
            for &d in &grid.durations_s {
                let cell = points.iter().filter(|p| p.retained_fraction == r && p.duration_s == d);
                let mut outcome = SagOutcome::RideThrough;
                for p in cell {
                    match p.outcome {
                        SagOutcome::Trip => outcome = SagOutcome::Trip,
                        SagOutcome::Failed if outcome != SagOutcome::Trip => outcome = SagOutcome::Failed,
                        _ => {}
                    }
                }
                worst_case.push(WorstCase {
                    retained_fraction: r,
                    duration_s: d,
                    outcome,
                });
            }
        }
        Self {
            grid,
            points,
            worst_case,
        }
    }

    pub fn worst(&self, retained_fraction: f64, duration_s: f64) -> Option<SagOutcome> {
        self.worst_case
            .iter()
            .find(|w| w.retained_fraction == retained_fraction && w.duration_s == duration_s)
            .map(|w| w.outcome)
    }

    pub fn points_at(&self, retained_fraction: f64, duration_s: f64) -> Vec<&CapabilityPoint> {
        self.points
            .iter()
            .filter(|p| p.retained_fraction == retained_fraction && p.duration_s == duration_s)
            .collect()
    }

    /// (magnitude, duration) cells whose outcome differs across angles.
    pub fn pow_sensitive_cells(&self) -> Vec<(f64, f64)> {
        self.worst_case
            .iter()
            .filter(|w| {
                let pts = self.points_at(w.retained_fraction, w.duration_s);
                pts.iter().any(|p| p.outcome != pts[0].outcome)
            })
            .map(|w| (w.retained_fraction, w.duration_s))
            .collect()
    }

    /// Pairs (ride-through cell, trip cell) where the ride-through cell is
    /// at least as deep and at least as long as the trip cell.
    pub fn monotonicity_violations(&self) -> Vec<(WorstCase, WorstCase)> {
        let mut out = Vec::new();
        for ride in self.worst_case.iter().filter(|w| w.outcome == SagOutcome::RideThrough) {
            for trip in self.worst_case.iter().filter(|w| w.outcome == SagOutcome::Trip) {
                if ride.retained_fraction <= trip.retained_fraction && ride.duration_s >= trip.duration_s {
                    out.push((ride.clone(), trip.clone()));
                }
            }
        }
        out
    }

    pub fn failed_points(&self) -> Vec<&CapabilityPoint> {
        self.points.iter().filter(|p| p.outcome == SagOutcome::Failed).collect()
    }

    /// One row per point, in grid order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "retained_fraction",
            "duration_s",
            "pow_deg",
            "outcome",
            "trip_time_s",
            "peak_recovery_current_a",
            "sag_onset_s",
            "diagnostic",
        ])?;
        for p in &self.points {
            w.write_record([
                p.retained_fraction.to_string(),
                p.duration_s.to_string(),
                p.pow_deg.to_string(),
                p.outcome.label().to_string(),
                p.trip_time.map(|t| t.to_string()).unwrap_or_default(),
                p.peak_recovery_current.to_string(),
                p.sag_onset_s.map(|t| t.to_string()).unwrap_or_default(),
                p.diagnostic.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> CapabilitySummary {
        CapabilitySummary {
            schema: CAPABILITY_SUMMARY_SCHEMA.into(),
            grid: self.grid.clone(),
            points: self.points.len(),
            failed: self.failed_points().len(),
            boundary: extract_boundary(self),
            worst_case: self.worst_case.clone(),
            pow_sensitive_cells: self.pow_sensitive_cells(),
        }
    }

    /// Worst-case outcomes as a table with the facility alphabet, a trip
    /// counting as all phases. Failed cells are reported as errors.
    pub fn worst_case_table(&self) -> Result<OutcomeTable> {
        OutcomeTable::from_fn(
            &self.grid.retained_fractions,
            &self.grid.durations_s,
            |r, d| match self.worst(r, d) {
                Some(SagOutcome::RideThrough) => Ok(crate::network::TripOutcome::NoneTrip),
                Some(SagOutcome::Trip) => Ok(crate::network::TripOutcome::AllTrip),
                _ => Err(Error::Validation(format!("cell {r}/{d} has no outcome"))),
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilitySummary {
    pub schema: String,
    pub grid: SweepGrid,
    pub points: usize,
    pub failed: usize,
    pub boundary: Vec<BoundaryPoint>,
    pub worst_case: Vec<WorstCase>,
    pub pow_sensitive_cells: Vec<(f64, f64)>,
}

/// For each magnitude, the shortest duration whose worst case trips.
/// Magnitudes that never trip are left out.
pub fn extract_boundary(map: &CapabilityMap) -> Vec<BoundaryPoint> {
    map.grid
        .retained_fractions
        .iter()
        .filter_map(|&r| {
            map.grid
                .durations_s
                .iter()
                .find(|&&d| map.worst(r, d) == Some(SagOutcome::Trip))
                .map(|&d| BoundaryPoint {
                    retained_fraction: r,
                    min_trip_duration_s: d,
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(r: f64, d: f64, a: f64, outcome: SagOutcome) -> CapabilityPoint {
        CapabilityPoint {
            retained_fraction: r,
            duration_s: d,
            pow_deg: a,
            outcome,
            trip_time: (outcome == SagOutcome::Trip).then_some(0.01),
            peak_recovery_current: 0.0,
            sag_onset_s: Some(0.4),
            diagnostic: None,
        }
    }

    fn map_from(grid: SweepGrid, f: impl Fn(f64, f64, f64) -> SagOutcome) -> CapabilityMap {
        let pts = grid
            .cells()
            .into_iter()
            .map(|(r, d, a)| point(r, d, a, f(r, d, a)))
            .collect();
        CapabilityMap::from_points(grid, pts)
    }

    #[test]
    fn default_grid_has_48_cells() {
        let g = SweepGrid::default();
        g.validate().unwrap();
        assert_eq!(g.len(), 48);
        assert_eq!(g.cells()[1], (0.0, 0.009, 45.0));
    }

    #[test]
    fn unsorted_or_empty_grid_rejected() {
        let mut g = SweepGrid::default();
        g.durations_s = vec![0.045, 0.015];
        assert!(g.validate().is_err());
        let mut g = SweepGrid::default();
        g.pow_angles_deg.clear();
        assert!(g.validate().is_err());
        let mut g = SweepGrid::default();
        g.retained_fractions = vec![0.5, 1.2];
        assert!(g.validate().is_err());
    }

    #[test]
    fn all_ride_gives_empty_boundary() {
        let m = map_from(SweepGrid::default(), |_, _, _| SagOutcome::RideThrough);
        assert!(extract_boundary(&m).is_empty());
    }

    #[test]
    fn all_trip_gives_shortest_duration() {
        let m = map_from(SweepGrid::default(), |_, _, _| SagOutcome::Trip);
        let b = extract_boundary(&m);
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|p| p.min_trip_duration_s == 0.009));
    }

    #[test]
    fn worst_case_is_any_angle() {
        let m = map_from(SweepGrid::default(), |r, d, a| {
            if r == 0.5 && d == 0.045 && a == 90.0 {
                SagOutcome::Trip
            } else {
                SagOutcome::RideThrough
            }
        });
        assert_eq!(m.worst(0.5, 0.045), Some(SagOutcome::Trip));
        assert_eq!(m.worst(0.5, 0.1), Some(SagOutcome::RideThrough));
        assert_eq!(m.pow_sensitive_cells(), vec![(0.5, 0.045)]);
        // 50 %/100 ms rides while the shorter 45 ms trips
        assert!(!m.monotonicity_violations().is_empty());
    }

    #[test]
    fn failed_cell_does_not_mask_trip() {
        let grid = SweepGrid {
            retained_fractions: vec![0.5],
            durations_s: vec![0.01],
            pow_angles_deg: vec![0.0, 90.0],
        };
        let m = map_from(grid.clone(), |_, _, a| {
            if a == 0.0 {
                SagOutcome::Failed
            } else {
                SagOutcome::Trip
            }
        });
        assert_eq!(m.worst(0.5, 0.01), Some(SagOutcome::Trip));
        let m = map_from(grid, |_, _, a| {
            if a == 0.0 {
                SagOutcome::Failed
            } else {
                SagOutcome::RideThrough
            }
        });
        assert_eq!(m.worst(0.5, 0.01), Some(SagOutcome::Failed));
    }

    #[test]
    fn staircase_is_monotone() {
        let m = map_from(SweepGrid::default(), |r, d, _| {
            if d * (1.0 - r) > 0.01 {
                SagOutcome::Trip
            } else {
                SagOutcome::RideThrough
            }
        });
        assert!(m.monotonicity_violations().is_empty());
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let m = map_from(SweepGrid::default(), |_, _, _| SagOutcome::RideThrough);
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 49);
        assert!(text.starts_with("retained_fraction,duration_s,pow_deg,outcome"));
    }

    #[test]
    fn jobs_must_be_positive() {
        assert!(with_jobs(0, || Ok(())).is_err());
        assert_eq!(with_jobs(2, || Ok(rayon::current_num_threads())).unwrap(), 2);
    }
}
