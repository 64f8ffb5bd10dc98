//! Circular drilling path whose points sink at a completion-modulated rate.
//!
//! Each of the `n` points keeps its x/y for the whole trial. Its depth is
//! lowered every control period by `(1 - c_i) · v0 · T`, so a point stops
//! moving once the shell under it reads as fully drilled. The closed
//! constrained spline through the current points supplies setpoints between
//! them.

use std::f64::consts::TAU;

use thiserror::Error;

use crate::spline::{self, SplineError, SplinePath};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("circle discretization needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("circle radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("expected {expected} completion values, got {got}")]
    CompletionCount { expected: usize, got: usize },
    #[error("invalid rate parameter: {0}")]
    InvalidRate(&'static str),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// One of the `n` discrete path points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    index: usize,
    x: f64,
    y: f64,
    start_z: f64,
    /// Accumulated downward travel. Kept apart from `start_z` so the depth
    /// sum does not lose precision against a large absolute height.
    descent: f64,
    completion: f64,
}

impl TrajectoryPoint {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.start_z - self.descent
    }

    pub fn descent(&self) -> f64 {
        self.descent
    }

    /// Completion last used to move this point.
    pub fn completion(&self) -> f64 {
        self.completion
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z())
    }
}

/// `n` points evenly spaced counter-clockwise from +x, all at `center.z`.
pub fn discretize_circle(
    center: Vec3,
    radius: f64,
    n: usize,
) -> Result<Vec<TrajectoryPoint>, TrajectoryError> {
    if n < 3 {
        return Err(TrajectoryError::TooFewPoints(n));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(TrajectoryError::InvalidRadius(radius));
    }
    Ok((0..n)
        .map(|k| {
            let angle = TAU * k as f64 / n as f64;
            TrajectoryPoint {
                index: k,
                x: center.x + radius * angle.cos(),
                y: center.y + radius * angle.sin(),
                start_z: center.z,
                descent: 0.0,
                completion: 0.0,
            }
        })
        .collect())
}

/// Clamps a sensed completion into `[0, 1]`, warning when it had to.
pub fn clamp_completion(c: f64) -> f64 {
    if c.is_nan() {
        log::warn!("completion is NaN, treating as 0");
        return 0.0;
    }
    if !(0.0..=1.0).contains(&c) {
        log::warn!("completion {c} outside [0, 1], clamping");
    }
    c.clamp(0.0, 1.0)
}

/// Downward speed of a point at completion `c`: `(1 - c) · v0`.
pub fn lowering_velocity(c: f64, v0: f64) -> f64 {
    (1.0 - clamp_completion(c)) * v0
}

/// Path points plus the rate parameters that move them.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    points: Vec<TrajectoryPoint>,
    v0: f64,
    period: f64,
    elapsed: f64,
    ticks: u64,
}

/// Per-point record of one depth update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthSample {
    /// Time at which the completion was applied (start of the period).
    pub t: f64,
    pub index: usize,
    pub z: f64,
    pub completion: f64,
    pub velocity: f64,
}

impl PathState {
    pub fn new(
        center: Vec3,
        radius: f64,
        n: usize,
        v0: f64,
        frequency: f64,
    ) -> Result<Self, TrajectoryError> {
        if !(v0 >= 0.0 && v0.is_finite()) {
            return Err(TrajectoryError::InvalidRate("v0 must be finite and >= 0"));
        }
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(TrajectoryError::InvalidRate("frequency must be positive"));
        }
        Ok(Self {
            points: discretize_circle(center, radius, n)?,
            v0,
            period: 1.0 / frequency,
            elapsed: 0.0,
            ticks: 0,
        })
    }

    pub fn points(&self) -> &[TrajectoryPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn knots(&self) -> Vec<Vec3> {
        self.points.iter().map(TrajectoryPoint::position).collect()
    }

    /// One explicit integration step: `z_i ← z_i − (1 − c_i)·v0·T` for all i.
    pub fn integrate_depths(
        &mut self,
        completions: &[f64],
    ) -> Result<Vec<DepthSample>, TrajectoryError> {
        if completions.len() != self.points.len() {
            return Err(TrajectoryError::CompletionCount {
                expected: self.points.len(),
                got: completions.len(),
            });
        }
        let t = self.elapsed;
        let samples = self
            .points
            .iter_mut()
            .zip(completions)
            .map(|(p, &c)| {
                let c = clamp_completion(c);
                let velocity = lowering_velocity(c, self.v0);
                p.descent += velocity * self.period;
                p.completion = c;
                DepthSample {
                    t,
                    index: p.index,
                    z: p.z(),
                    completion: c,
                    velocity,
                }
            })
            .collect();
        self.ticks += 1;
        // elapsed from the tick count so it does not drift
        self.elapsed = self.ticks as f64 * self.period;
        Ok(samples)
    }

    /// Closed constrained spline through the current points.
    pub fn rebuild_path(&self) -> Result<SplinePath, TrajectoryError> {
        Ok(spline::fit_constrained_auto(&self.knots(), true)?)
    }
}

/// Maps a lap fraction onto `(segment, u)` of a closed path.
pub fn phase_to_segment(path: &SplinePath, phase: f64) -> (usize, f64) {
    let n = path.len();
    let phase = phase.rem_euclid(1.0);
    let mut scaled = phase * n as f64;
    // land exactly on a knot when the phase is a multiple of 1/n
    let nearest = scaled.round();
    if (scaled - nearest).abs() < 1e-9 {
        scaled = if nearest >= n as f64 { 0.0 } else { nearest };
    }
    let segment = (scaled.floor() as usize).min(n - 1);
    let u = (scaled - segment as f64).clamp(0.0, 1.0);
    (segment, u)
}

/// Drill setpoint at lap fraction `phase` (wrapped into `[0, 1)`).
pub fn setpoint_at(path: &SplinePath, phase: f64) -> Vec3 {
    let (segment, u) = phase_to_segment(path, phase);
    path.segments()[segment].point(u)
}
