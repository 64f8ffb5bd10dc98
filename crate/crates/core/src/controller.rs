//! The closed drilling loop, trial classification and seeded batches.
//!
//! Each control period runs, in order: sense the completion of every path
//! point, lower the points, refit the path spline, move the drill along it
//! while cutting, then check the stop rule.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, TrialConfig, TraversalMode};
use crate::exec::{self, Execution};
use crate::perception::{BinGeometry, BoundingBox, PerceptionError, ProgressBar, SensorNoise};
use crate::specimen::{self, make_specimen, Rupture, ShellSpecimen, SpecimenError};
use crate::spline::SplinePath;
use crate::trajectory::{setpoint_at, PathState, TrajectoryError};
use crate::Vec3;

/// Success count and trial count reported for the physical experiment.
pub const REFERENCE_SUCCESSES: usize = 16;
pub const REFERENCE_TRIALS: usize = 20;

#[derive(Debug, Error)]
pub enum TrialError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Specimen(#[from] SpecimenError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("trial already finished")]
    Finished,
}

/// True iff at least `ceil(fraction · n)` values reach `threshold`.
pub fn stop_condition(values: &[f64], fraction: f64, threshold: f64) -> bool {
    let needed = (fraction * values.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    values.iter().filter(|&&c| c >= threshold).count() >= needed
}

/// Produces one completion estimate per path point each period.
pub trait CompletionSensor: Send {
    fn observe(
        &mut self,
        specimen: &ShellSpecimen,
        drill: Option<(f64, f64)>,
    ) -> Result<Vec<f64>, TrialError>;
}

/// Rendered map, calibrated noise and progress bar.
#[derive(Debug, Clone)]
pub struct MapSensor {
    geometry: BinGeometry,
    noise: SensorNoise,
    occlusion_radius: f64,
    bar: ProgressBar,
}

impl MapSensor {
    pub fn new(config: &TrialConfig, points: &[(f64, f64)]) -> Result<Self, TrialError> {
        let bbox = BoundingBox::square(0.0, 0.0, config.camera_half_width())?;
        Ok(Self {
            geometry: BinGeometry::new(bbox, points, config.noise.window_px),
            noise: SensorNoise::new(config.noise.clone(), config.seed),
            occlusion_radius: config.noise.occlusion_radius,
            bar: ProgressBar::new(points.len()),
        })
    }

    pub fn bar(&self) -> &ProgressBar {
        &self.bar
    }
}

impl CompletionSensor for MapSensor {
    fn observe(
        &mut self,
        specimen: &ShellSpecimen,
        drill: Option<(f64, f64)>,
    ) -> Result<Vec<f64>, TrialError> {
        let frame = self.noise.next_frame();
        let readings = self
            .geometry
            .observe(specimen, drill, self.occlusion_radius, &frame)?;
        self.bar.absorb(&readings)?;
        Ok(self.bar.values().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Success,
    MembraneRupture,
    PatchNotDetachable,
    Timeout,
}

impl Classification {
    pub fn exit_code(self) -> i32 {
        match self {
            Classification::Success => 0,
            Classification::MembraneRupture => 1,
            Classification::PatchNotDetachable => 2,
            Classification::Timeout => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Classification::Success => "success",
            Classification::MembraneRupture => "membrane_rupture",
            Classification::PatchNotDetachable => "patch_not_detachable",
            Classification::Timeout => "timeout",
        }
    }
}

/// One row of the trial trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub point: usize,
    pub p_z: f64,
    pub c_true: f64,
    pub c_est: f64,
    pub v: f64,
}

pub const TRACE_HEADER: &str = "t,point,p_z,c_true,c_est,v";

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{:e},{},{},{:e}",
            r.t, r.point, r.p_z, r.c_true, r.c_est, r.v
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub classification: Classification,
    /// Simulated time when the trial ended (s).
    pub drilling_time: f64,
    pub ticks: u64,
    pub seed: u64,
    pub stop_fired: bool,
    pub detachable: bool,
    pub rupture: Option<Rupture>,
    /// Ground-truth completion at each path point at the end.
    pub final_true: Vec<f64>,
    /// Sensed completion at each path point at the end.
    pub final_estimate: Vec<f64>,
    pub trace: Vec<TraceRecord>,
}

/// What happened during one control period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TickStatus {
    Running,
    Stopped,
    Ruptured,
    TimedOut,
}

/// Full loop state of one trial.
pub struct Trial {
    config: TrialConfig,
    specimen: ShellSpecimen,
    path: PathState,
    spline: SplinePath,
    sensor: Box<dyn CompletionSensor>,
    phase: f64,
    tip: Vec3,
    last_estimate: Vec<f64>,
    max_ticks: u64,
    record_trace: bool,
    trace: Vec<TraceRecord>,
    status: TickStatus,
}

impl Trial {
    pub fn new(config: TrialConfig) -> Result<Self, TrialError> {
        config.validate()?;
        let points: Vec<(f64, f64)> = (0..config.points)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / config.points as f64;
                (config.radius * a.cos(), config.radius * a.sin())
            })
            .collect();
        let sensor = MapSensor::new(&config, &points)?;
        Self::with_sensor(config, Box::new(sensor))
    }

    /// Same loop with a custom completion source.
    pub fn with_sensor(
        config: TrialConfig,
        sensor: Box<dyn CompletionSensor>,
    ) -> Result<Self, TrialError> {
        config.validate()?;
        let specimen = make_specimen(&config.specimen, config.seed)?;

        // all points start level with the highest surface point on the circle
        let probe = PathState::new(Vec3::zeros(), config.radius, config.points, config.v0, config.frequency)?;
        let top = probe
            .points()
            .iter()
            .map(|p| specimen.outer_z_at(p.x(), p.y()))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let start = Vec3::new(0.0, 0.0, top + config.initial_gap);
        let path = PathState::new(start, config.radius, config.points, config.v0, config.frequency)?;
        let spline = path.rebuild_path()?;
        let tip = setpoint_at(&spline, 0.0);
        let max_ticks = (config.max_time * config.frequency).ceil() as u64;
        Ok(Self {
            last_estimate: vec![0.0; config.points],
            config,
            specimen,
            path,
            spline,
            sensor,
            phase: 0.0,
            tip,
            max_ticks,
            record_trace: true,
            trace: Vec::new(),
            status: TickStatus::Running,
        })
    }

    pub fn record_trace(mut self, on: bool) -> Self {
        self.record_trace = on;
        self
    }

    /// Cut rows of the grid in parallel (helps the whole-lap sweeps of
    /// quasi-static mode).
    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.specimen.set_execution(execution);
        self
    }

    pub fn config(&self) -> &TrialConfig {
        &self.config
    }

    pub fn specimen(&self) -> &ShellSpecimen {
        &self.specimen
    }

    pub fn path(&self) -> &PathState {
        &self.path
    }

    pub fn spline(&self) -> &SplinePath {
        &self.spline
    }

    pub fn tip(&self) -> Vec3 {
        self.tip
    }

    pub fn status(&self) -> TickStatus {
        self.status
    }

    pub fn elapsed(&self) -> f64 {
        self.path.elapsed()
    }

    pub fn last_estimate(&self) -> &[f64] {
        &self.last_estimate
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    fn point_xy(&self) -> Vec<(f64, f64)> {
        self.path.points().iter().map(|p| (p.x(), p.y())).collect()
    }

    /// Tip positions for this period's move. Legs are at most one burr radius
    /// long, which keeps chords within about 1% of a radius of the curve.
    fn stroke(&self) -> (Vec<Vec3>, f64) {
        let (from, advance) = match self.config.traversal.mode {
            TraversalMode::QuasiStatic => (0.0, 1.0),
            TraversalMode::Swept => (
                self.phase,
                self.path.period() / self.config.traversal.lap_period,
            ),
        };
        let arc = std::f64::consts::TAU * self.config.radius * advance;
        let steps = ((arc / self.config.burr_radius).ceil() as usize).max(1);
        let tips = (0..=steps)
            .map(|k| setpoint_at(&self.spline, from + advance * k as f64 / steps as f64))
            .collect();
        (tips, (from + advance).rem_euclid(1.0))
    }

    /// One control period.
    pub fn tick(&mut self) -> Result<TickStatus, TrialError> {
        if self.status != TickStatus::Running {
            return Err(TrialError::Finished);
        }
        let t = self.path.elapsed();

        // sense
        let drill = match self.config.traversal.mode {
            TraversalMode::Swept => Some((self.tip.x, self.tip.y)),
            TraversalMode::QuasiStatic => None,
        };
        let estimate = self.sensor.observe(&self.specimen, drill)?;
        let truth = if self.record_trace {
            self.point_xy()
                .iter()
                .map(|&(x, y)| self.specimen.completion_at(x, y))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            Vec::new()
        };

        // lower the points and refit
        let samples = self.path.integrate_depths(&estimate)?;
        self.spline = self.path.rebuild_path()?;
        if self.record_trace {
            self.trace.extend(samples.iter().zip(&truth).map(|(s, &c_true)| TraceRecord {
                t,
                point: s.index,
                p_z: s.z,
                c_true,
                c_est: s.completion,
                v: s.velocity,
            }));
        }

        // move and cut
        let (tips, next_phase) = self.stroke();
        self.specimen.sweep(&tips, self.config.burr_radius);
        self.phase = next_phase;
        self.tip = *tips.last().expect("stroke has at least two tips");
        self.last_estimate = estimate;

        self.status = if self.specimen.membrane_ruptured() {
            TickStatus::Ruptured
        } else if stop_condition(
            &self.last_estimate,
            self.config.stop.point_fraction,
            self.config.stop.completion_threshold,
        ) {
            TickStatus::Stopped
        } else if self.path.ticks() >= self.max_ticks {
            TickStatus::TimedOut
        } else {
            TickStatus::Running
        };
        Ok(self.status)
    }

    /// Ticks until the trial stops, ruptures or times out.
    pub fn run_until_done(&mut self) -> Result<TickStatus, TrialError> {
        while self.status == TickStatus::Running {
            self.tick()?;
        }
        Ok(self.status)
    }

    pub fn run(mut self) -> Result<TrialOutcome, TrialError> {
        self.run_until_done()?;
        self.finish()
    }

    /// Classifies the trial in its current state.
    pub fn finish(self) -> Result<TrialOutcome, TrialError> {
        let xy = self.point_xy();
        let final_true = xy
            .iter()
            .map(|&(x, y)| self.specimen.completion_at(x, y))
            .collect::<Result<Vec<_>, _>>()?;
        let detachable = specimen::detachable_from_completions(&final_true, &self.config.detach);
        let stop_fired = self.status == TickStatus::Stopped;
        let classification = match self.status {
            TickStatus::Ruptured => Classification::MembraneRupture,
            TickStatus::Stopped if detachable => Classification::Success,
            TickStatus::Stopped => Classification::PatchNotDetachable,
            TickStatus::TimedOut | TickStatus::Running => Classification::Timeout,
        };
        Ok(TrialOutcome {
            classification,
            drilling_time: self.path.elapsed(),
            ticks: self.path.ticks(),
            seed: self.config.seed,
            stop_fired,
            detachable,
            rupture: self.specimen.rupture(),
            final_true,
            final_estimate: self.last_estimate,
            trace: self.trace,
        })
    }

}

pub fn run_trial(config: TrialConfig) -> Result<TrialOutcome, TrialError> {
    Trial::new(config)?.with_execution(Execution::Parallel).run()
}

/// Per-trial line of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub classification: Classification,
    pub drilling_time: f64,
    pub ticks: u64,
    pub mean_true_completion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureBreakdown {
    pub membrane_rupture: usize,
    pub patch_not_detachable: usize,
    pub timeout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeStats {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRate {
    pub successes: usize,
    pub trials: usize,
    pub rate: f64,
    pub line: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub trials: usize,
    pub seed_base: u64,
    pub successes: usize,
    pub success_rate: f64,
    pub success_line: String,
    pub reference: ReferenceRate,
    pub failures: FailureBreakdown,
    /// Drilling time of successful trials (s); absent when none succeeded.
    pub success_time: Option<TimeStats>,
    pub outcomes: Vec<TrialSummary>,
}

pub fn success_line(successes: usize, trials: usize) -> String {
    let pct = if trials == 0 {
        0.0
    } else {
        100.0 * successes as f64 / trials as f64
    };
    format!("success: {successes}/{trials} ({pct:.0}%)")
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

impl BatchSummary {
    pub fn from_outcomes(seed_base: u64, outcomes: Vec<TrialSummary>) -> Self {
        let trials = outcomes.len();
        let count = |c: Classification| outcomes.iter().filter(|o| o.classification == c).count();
        let successes = count(Classification::Success);
        let mut times: Vec<f64> = outcomes
            .iter()
            .filter(|o| o.classification == Classification::Success)
            .map(|o| o.drilling_time)
            .collect();
        times.sort_by(f64::total_cmp);
        let success_time = (!times.is_empty()).then(|| TimeStats {
            mean: times.iter().sum::<f64>() / times.len() as f64,
            p50: nearest_rank(&times, 0.5),
            p90: nearest_rank(&times, 0.9),
            max: *times.last().expect("non-empty"),
        });
        Self {
            trials,
            seed_base,
            successes,
            success_rate: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            success_line: success_line(successes, trials),
            reference: ReferenceRate {
                successes: REFERENCE_SUCCESSES,
                trials: REFERENCE_TRIALS,
                rate: REFERENCE_SUCCESSES as f64 / REFERENCE_TRIALS as f64,
                line: format!(
                    "reference: {REFERENCE_SUCCESSES}/{REFERENCE_TRIALS} ({:.0}%)",
                    100.0 * REFERENCE_SUCCESSES as f64 / REFERENCE_TRIALS as f64
                ),
            },
            failures: FailureBreakdown {
                membrane_rupture: count(Classification::MembraneRupture),
                patch_not_detachable: count(Classification::PatchNotDetachable),
                timeout: count(Classification::Timeout),
            },
            success_time,
            outcomes,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary always serializes")
    }
}

/// Config of trial `index` in a batch: the template with seed `seed_base + index`.
pub fn batch_config(template: &TrialConfig, seed_base: u64, index: usize) -> TrialConfig {
    TrialConfig {
        seed: seed_base.wrapping_add(index as u64),
        ..template.clone()
    }
}

/// Runs `count` independent trials and aggregates them. Results are ordered
/// by trial index whatever the execution strategy.
pub fn run_batch(
    template: &TrialConfig,
    count: usize,
    seed_base: u64,
    execution: Execution,
) -> Result<BatchSummary, TrialError> {
    template.validate()?;
    let indices: Vec<usize> = (0..count.max(1)).collect();
    let results = exec::map(execution, indices, |i| -> Result<TrialSummary, TrialError> {
        let config = batch_config(template, seed_base, i);
        let outcome = Trial::new(config)?.record_trace(false).run()?;
        Ok(TrialSummary {
            trial: i,
            seed: outcome.seed,
            classification: outcome.classification,
            drilling_time: outcome.drilling_time,
            ticks: outcome.ticks,
            mean_true_completion: outcome.final_true.iter().sum::<f64>()
                / outcome.final_true.len() as f64,
        })
    });
    let outcomes = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(BatchSummary::from_outcomes(seed_base, outcomes))
}
