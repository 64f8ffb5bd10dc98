//! Trial configuration and its TOML form.
//!
//! Every field has a default, so a config file only needs the values it
//! changes. Unknown keys are rejected so that typos do not silently fall back
//! to defaults.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::SensorNoiseModel;
use crate::specimen::{DetachRule, SpecimenConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraversalMode {
    /// The drill travels around the circle, one lap per `lap_period`.
    Swept,
    /// The whole circle is cut every control period.
    QuasiStatic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Traversal {
    pub mode: TraversalMode,
    /// Seconds per lap in swept mode.
    pub lap_period: f64,
}

impl Default for Traversal {
    fn default() -> Self {
        Self {
            mode: TraversalMode::Swept,
            lap_period: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    pub point_fraction: f64,
    pub completion_threshold: f64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            point_fraction: 0.8,
            completion_threshold: 0.85,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub seed: u64,
    /// Initial downward speed (m/s).
    pub v0: f64,
    /// Radius of the drilling circle (m).
    pub radius: f64,
    /// Control and camera rate (Hz).
    pub frequency: f64,
    /// Number of discrete path points.
    pub points: usize,
    /// Start height of all points above the highest outer-surface point on
    /// the circle (m).
    pub initial_gap: f64,
    pub burr_radius: f64,
    /// Simulated time limit (s).
    pub max_time: f64,
    pub traversal: Traversal,
    pub stop: StopRule,
    pub detach: DetachRule,
    pub specimen: SpecimenConfig,
    pub noise: SensorNoiseModel,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            v0: 6e-6,
            radius: 8e-3,
            frequency: 30.0,
            points: 30,
            initial_gap: 0.0,
            burr_radius: 0.7e-3,
            max_time: 3600.0,
            traversal: Traversal::default(),
            stop: StopRule::default(),
            detach: DetachRule::default(),
            specimen: SpecimenConfig::default(),
            noise: SensorNoiseModel::default(),
        }
    }
}

impl TrialConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("trial config always serializes")
    }

    /// Half side of the square camera box: circle plus two burr radii.
    pub fn camera_half_width(&self) -> f64 {
        self.radius + 2.0 * self.burr_radius
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(field_err(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("v0", self.v0)?;
        positive("radius", self.radius)?;
        positive("frequency", self.frequency)?;
        positive("burr_radius", self.burr_radius)?;
        positive("max_time", self.max_time)?;
        if self.points < 3 {
            return Err(field_err("points", format!("need at least 3 points, got {}", self.points)));
        }
        if !(self.initial_gap >= 0.0 && self.initial_gap.is_finite()) {
            return Err(field_err("initial_gap", "must be finite and >= 0"));
        }
        if self.traversal.mode == TraversalMode::Swept {
            positive("traversal.lap_period", self.traversal.lap_period)?;
        }
        for (name, v) in [
            ("stop.point_fraction", self.stop.point_fraction),
            ("stop.completion_threshold", self.stop.completion_threshold),
            ("detach.completion", self.detach.completion),
            ("detach.coverage", self.detach.coverage),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(field_err(name, format!("must be in (0, 1], got {v}")));
            }
        }
        if self.detach.max_bridge == 0 {
            return Err(field_err("detach.max_bridge", "must be at least 1"));
        }
        self.specimen
            .validate()
            .map_err(|e| field_err("specimen", e.to_string()))?;
        self.noise
            .validate()
            .map_err(|e| field_err("noise", e.to_string()))?;
        if self.camera_half_width() > self.specimen.region_size / 2.0 {
            return Err(field_err(
                "specimen.region_size",
                format!(
                    "region of {} m does not cover the circle plus cutter ({} m across)",
                    self.specimen.region_size,
                    2.0 * self.camera_half_width()
                ),
            ));
        }
        Ok(())
    }
}
