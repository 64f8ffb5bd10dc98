//! Stand-in for the completion-recognition network.
//!
//! The network's contract is reproduced rather than the network itself: a
//! 128×128 two-channel map over the drilling region (completion grayscale and
//! drill occlusion mask), perturbed by calibrated, spatially coherent
//! multiplicative error, then folded into a per-point progress bar that only
//! ever moves up.

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{rng_for, Stream, WaveField};
use crate::specimen::{ShellSpecimen, SpecimenError};

pub const MAP_SIZE: usize = 128;
const NOISE_WAVES: usize = 8;
/// Truth values below this are left out of MAPE.
pub const MAPE_MIN_TRUTH: f64 = 0.05;
/// Completion range of the synthetic calibration image.
const CALIBRATION_RANGE: (f64, f64) = (0.1, 0.9);
const CALIBRATION_STRIDE: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerceptionError {
    #[error("degenerate bounding box ({x1}, {y1}) - ({x2}, {y2})")]
    InvalidBbox { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("bounding box leaves the specimen: {0}")]
    OutsideSpecimen(#[from] SpecimenError),
    #[error("no cells with truth >= {MAPE_MIN_TRUTH}; MAPE undefined")]
    UndefinedMetric,
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("target MAPE {target}% is unreachable (ceiling about {ceiling:.1}% under clamping)")]
    Unreachable { target: f64, ceiling: f64 },
    #[error("invalid noise model: {0}")]
    InvalidNoise(String),
}

/// Axis-aligned region of the world the map covers (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, PerceptionError> {
        let ok = [x1, y1, x2, y2].iter().all(|v| v.is_finite()) && x2 > x1 && y2 > y1;
        if ok {
            Ok(Self { x1, y1, x2, y2 })
        } else {
            Err(PerceptionError::InvalidBbox { x1, y1, x2, y2 })
        }
    }

    /// Square box centered on `(cx, cy)`.
    pub fn square(cx: f64, cy: f64, half: f64) -> Result<Self, PerceptionError> {
        Self::new(cx - half, cy - half, cx + half, cy + half)
    }

    fn pixel_w(&self) -> f64 {
        (self.x2 - self.x1) / MAP_SIZE as f64
    }

    fn pixel_h(&self) -> f64 {
        (self.y2 - self.y1) / MAP_SIZE as f64
    }

    /// World position of a pixel center. Row 0 is at `y1`.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.x1 + (col as f64 + 0.5) * self.pixel_w(),
            self.y1 + (row as f64 + 0.5) * self.pixel_h(),
        )
    }

    /// Continuous pixel coordinates `(col, row)` of a world point; pixel
    /// centers sit at integers.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.x1) / self.pixel_w() - 0.5,
            (y - self.y1) / self.pixel_h() - 0.5,
        )
    }
}

/// Two `MAP_SIZE × MAP_SIZE` channels, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionMap {
    pub completion: Vec<f64>,
    pub mask: Vec<f64>,
    pub bbox: BoundingBox,
}

impl CompletionMap {
    pub fn is_masked(&self, index: usize) -> bool {
        self.mask[index] >= 0.5
    }

    /// 8-bit binary PGM of one channel, top row = largest y.
    pub fn write_pgm<W: Write>(channel: &[f64], mut out: W) -> io::Result<()> {
        write!(out, "P5\n{MAP_SIZE} {MAP_SIZE}\n255\n")?;
        for row in (0..MAP_SIZE).rev() {
            let bytes: Vec<u8> = channel[row * MAP_SIZE..(row + 1) * MAP_SIZE]
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            out.write_all(&bytes)?;
        }
        Ok(())
    }
}

fn occluded(x: f64, y: f64, drill: Option<(f64, f64)>, radius: f64) -> bool {
    drill.is_some_and(|(dx, dy)| (x - dx).hypot(y - dy) <= radius)
}

/// Ground-truth completion rendered over `bbox`, with the drill's footprint
/// masked out and its completion suppressed.
pub fn render_map(
    specimen: &ShellSpecimen,
    drill: Option<(f64, f64)>,
    bbox: BoundingBox,
    occlusion_radius: f64,
) -> Result<CompletionMap, PerceptionError> {
    let cells = MAP_SIZE * MAP_SIZE;
    let mut completion = Vec::with_capacity(cells);
    let mut mask = Vec::with_capacity(cells);
    for row in 0..MAP_SIZE {
        for col in 0..MAP_SIZE {
            let (x, y) = bbox.pixel_center(col, row);
            let c = specimen.completion_at(x, y)?;
            if occluded(x, y, drill, occlusion_radius) {
                mask.push(1.0);
                completion.push(0.0);
            } else {
                mask.push(0.0);
                completion.push(c);
            }
        }
    }
    Ok(CompletionMap {
        completion,
        mask,
        bbox,
    })
}

/// A region where the sensor is systematically off, e.g. a patch whose
/// completion it keeps under-reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasRegion {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub bias: f64,
}

/// Parameters of the multiplicative error `1 + e` applied to each pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorNoiseModel {
    /// Standard deviation of the zero-mean part of `e`.
    pub sigma: f64,
    /// Constant offset added to `e` everywhere.
    pub bias: f64,
    /// Wavelength of the spatially coherent error (m).
    pub correlation_length: f64,
    /// Share of the error variance that stays fixed for a whole trial; the
    /// rest is redrawn every frame.
    pub persistence: f64,
    /// Radius around the drill tip hidden from the camera (m).
    pub occlusion_radius: f64,
    /// Radius of the per-point averaging window, in pixels.
    pub window_px: f64,
    pub regions: Vec<BiasRegion>,
}

impl Default for SensorNoiseModel {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            bias: 0.0,
            correlation_length: 4e-3,
            persistence: 0.9,
            occlusion_radius: 1.5e-3,
            window_px: 2.0,
            regions: Vec::new(),
        }
    }
}

impl SensorNoiseModel {
    pub fn oracle() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        let bad = |m: &str| Err(PerceptionError::InvalidNoise(m.to_string()));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and >= 0");
        }
        if !self.bias.is_finite() {
            return bad("bias must be finite");
        }
        if !(self.correlation_length > 0.0 && self.correlation_length.is_finite()) {
            return bad("correlation_length must be positive");
        }
        if !(0.0..=1.0).contains(&self.persistence) {
            return bad("persistence must be in [0, 1]");
        }
        if !(self.occlusion_radius >= 0.0 && self.occlusion_radius.is_finite()) {
            return bad("occlusion_radius must be >= 0");
        }
        if !(self.window_px >= 0.0 && self.window_px.is_finite()) {
            return bad("window_px must be >= 0");
        }
        if self.regions.iter().any(|r| !(r.radius > 0.0 && r.bias.is_finite())) {
            return bad("bias regions need a positive radius and finite bias");
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.sigma == 0.0 && self.bias == 0.0 && self.regions.is_empty()
    }
}

/// Stateful noise source for one trial: the persistent error field is drawn
/// once, the per-frame field on every [`SensorNoise::next_frame`].
#[derive(Debug, Clone)]
pub struct SensorNoise {
    model: SensorNoiseModel,
    rng: ChaCha8Rng,
    persistent: WaveField,
}

/// Error field of one frame.
#[derive(Debug, Clone)]
pub struct NoiseFrame {
    sigma: f64,
    bias: f64,
    persistent_weight: f64,
    frame_weight: f64,
    persistent: WaveField,
    frame: WaveField,
    regions: Vec<BiasRegion>,
    identity: bool,
}

impl SensorNoise {
    pub fn new(model: SensorNoiseModel, seed: u64) -> Self {
        let mut rng = rng_for(seed, Stream::Noise);
        let persistent = WaveField::unit_variance(&mut rng, model.correlation_length, NOISE_WAVES);
        Self {
            model,
            rng,
            persistent,
        }
    }

    pub fn model(&self) -> &SensorNoiseModel {
        &self.model
    }

    pub fn next_frame(&mut self) -> NoiseFrame {
        let frame = if self.model.sigma > 0.0 && self.model.persistence < 1.0 {
            WaveField::unit_variance(&mut self.rng, self.model.correlation_length, NOISE_WAVES)
        } else {
            WaveField::zero()
        };
        NoiseFrame {
            sigma: self.model.sigma,
            bias: self.model.bias,
            persistent_weight: self.model.persistence.sqrt(),
            frame_weight: (1.0 - self.model.persistence).sqrt(),
            persistent: self.persistent.clone(),
            frame,
            regions: self.model.regions.clone(),
            identity: self.model.is_identity(),
        }
    }
}

impl NoiseFrame {
    /// Relative error `e` at a world position.
    pub fn error_at(&self, x: f64, y: f64) -> f64 {
        if self.identity {
            return 0.0;
        }
        let regional: f64 = self
            .regions
            .iter()
            .filter(|r| (x - r.x).hypot(y - r.y) <= r.radius)
            .map(|r| r.bias)
            .sum();
        let random = if self.sigma > 0.0 {
            self.sigma
                * (self.persistent_weight * self.persistent.value(x, y)
                    + self.frame_weight * self.frame.value(x, y))
        } else {
            0.0
        };
        self.bias + regional + random
    }

    /// Corrupted reading of one unmasked pixel.
    #[inline]
    pub fn apply(&self, truth: f64, x: f64, y: f64) -> f64 {
        if self.identity {
            return truth;
        }
        (truth * (1.0 + self.error_at(x, y))).clamp(0.0, 1.0)
    }
}

/// Applies one fresh noise frame to every unmasked pixel.
pub fn corrupt(map: &CompletionMap, noise: &mut SensorNoise) -> CompletionMap {
    corrupt_with(map, &noise.next_frame())
}

pub fn corrupt_with(map: &CompletionMap, frame: &NoiseFrame) -> CompletionMap {
    let mut out = map.clone();
    for row in 0..MAP_SIZE {
        for col in 0..MAP_SIZE {
            let i = row * MAP_SIZE + col;
            if !map.is_masked(i) {
                let (x, y) = map.bbox.pixel_center(col, row);
                out.completion[i] = frame.apply(map.completion[i], x, y);
            }
        }
    }
    out
}

/// Pixel windows around each path point's image position.
#[derive(Debug, Clone, PartialEq)]
pub struct BinGeometry {
    bbox: BoundingBox,
    windows: Vec<Vec<usize>>,
}

impl BinGeometry {
    /// One bin per point; each window holds the pixels whose centers lie
    /// within `window_px` pixels of the point (at least the nearest pixel).
    pub fn new(bbox: BoundingBox, points: &[(f64, f64)], window_px: f64) -> Self {
        let windows = points
            .iter()
            .map(|&(x, y)| {
                let (pc, pr) = bbox.to_pixel(x, y);
                let reach = window_px.ceil() as i64 + 1;
                let mut pixels = Vec::new();
                for r in (pr.round() as i64 - reach)..=(pr.round() as i64 + reach) {
                    for c in (pc.round() as i64 - reach)..=(pc.round() as i64 + reach) {
                        if !(0..MAP_SIZE as i64).contains(&r) || !(0..MAP_SIZE as i64).contains(&c) {
                            continue;
                        }
                        if (c as f64 - pc).hypot(r as f64 - pr) <= window_px {
                            pixels.push(r as usize * MAP_SIZE + c as usize);
                        }
                    }
                }
                if pixels.is_empty() {
                    let c = (pc.round().max(0.0) as usize).min(MAP_SIZE - 1);
                    let r = (pr.round().max(0.0) as usize).min(MAP_SIZE - 1);
                    pixels.push(r * MAP_SIZE + c);
                }
                pixels
            })
            .collect();
        Self { bbox, windows }
    }

    pub fn bins(&self) -> usize {
        self.windows.len()
    }

    pub fn window(&self, bin: usize) -> &[usize] {
        &self.windows[bin]
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    /// Mean window value per bin, `None` where any window pixel is occluded.
    pub fn readings(&self, map: &CompletionMap) -> Vec<Option<f64>> {
        self.windows
            .iter()
            .map(|w| {
                if w.iter().any(|&i| map.is_masked(i)) {
                    None
                } else {
                    Some(w.iter().map(|&i| map.completion[i]).sum::<f64>() / w.len() as f64)
                }
            })
            .collect()
    }

    /// Same readings as [`render_map`] + [`corrupt_with`] + [`Self::readings`],
    /// evaluating only the pixels inside the windows.
    pub fn observe(
        &self,
        specimen: &ShellSpecimen,
        drill: Option<(f64, f64)>,
        occlusion_radius: f64,
        frame: &NoiseFrame,
    ) -> Result<Vec<Option<f64>>, PerceptionError> {
        self.windows
            .iter()
            .map(|w| {
                let mut sum = 0.0;
                for &i in w {
                    let (x, y) = self.bbox.pixel_center(i % MAP_SIZE, i / MAP_SIZE);
                    if occluded(x, y, drill, occlusion_radius) {
                        return Ok(None);
                    }
                    sum += frame.apply(specimen.completion_at(x, y)?, x, y);
                }
                Ok(Some(sum / w.len() as f64))
            })
            .collect()
    }
}

/// Best-so-far completion per angular bin.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressBar {
    values: Vec<f64>,
}

impl ProgressBar {
    pub fn new(bins: usize) -> Self {
        Self {
            values: vec![0.0; bins],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Folds in one frame's readings; occluded bins (`None`) keep their value.
    pub fn absorb(&mut self, readings: &[Option<f64>]) -> Result<(), PerceptionError> {
        if readings.len() != self.values.len() {
            return Err(PerceptionError::LengthMismatch {
                expected: self.values.len(),
                got: readings.len(),
            });
        }
        for (v, r) in self.values.iter_mut().zip(readings) {
            if let Some(r) = r {
                *v = v.max(r.clamp(0.0, 1.0));
            }
        }
        Ok(())
    }
}

pub fn update_progress(
    bar: &mut ProgressBar,
    map: &CompletionMap,
    geometry: &BinGeometry,
) -> Result<(), PerceptionError> {
    bar.absorb(&geometry.readings(map))
}

/// Per-point completions `c_i`, index-aligned with the path points.
pub fn sample_completions(bar: &ProgressBar) -> Vec<f64> {
    bar.values.clone()
}

/// Mean absolute percentage error over entries with `truth >= 0.05`.
pub fn mape(estimate: &[f64], truth: &[f64]) -> Result<f64, PerceptionError> {
    if estimate.len() != truth.len() {
        return Err(PerceptionError::LengthMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let (sum, count) = estimate
        .iter()
        .zip(truth)
        .filter(|(_, &t)| t >= MAPE_MIN_TRUTH)
        .fold((0.0, 0usize), |(s, n), (&e, &t)| (s + (e - t).abs() / t, n + 1));
    if count == 0 {
        return Err(PerceptionError::UndefinedMetric);
    }
    Ok(100.0 * sum / count as f64)
}

/// MAPE between two maps, skipping masked pixels of either.
pub fn map_mape(estimate: &CompletionMap, truth: &CompletionMap) -> Result<f64, PerceptionError> {
    let (e, t): (Vec<f64>, Vec<f64>) = (0..MAP_SIZE * MAP_SIZE)
        .filter(|&i| !estimate.is_masked(i) && !truth.is_masked(i))
        .map(|i| (estimate.completion[i], truth.completion[i]))
        .unzip();
    mape(&e, &t)
}

/// Synthetic truth image for calibration: completion ramps left to right
/// across the mid range, no occlusion.
pub fn calibration_truth() -> CompletionMap {
    let bbox = BoundingBox::square(0.0, 0.0, 9.4e-3).expect("static bbox");
    let (lo, hi) = CALIBRATION_RANGE;
    let completion = (0..MAP_SIZE * MAP_SIZE)
        .map(|i| lo + (hi - lo) * (i % MAP_SIZE) as f64 / (MAP_SIZE - 1) as f64)
        .collect();
    CompletionMap {
        completion,
        mask: vec![0.0; MAP_SIZE * MAP_SIZE],
        bbox,
    }
}

/// MAPE of `frames` independently corrupted copies of the calibration image,
/// each frame from a fresh trial-level noise source so the persistent part is
/// redrawn too.
pub fn measure_mape(model: &SensorNoiseModel, frames: usize, seed: u64) -> Result<f64, PerceptionError> {
    let truth = calibration_truth();
    let mut seeds = rng_for(seed, Stream::Calibration);
    let mut total = 0.0;
    for _ in 0..frames.max(1) {
        let mut noise = SensorNoise::new(model.clone(), seeds.gen());
        total += map_mape(&corrupt(&truth, &mut noise), &truth)?;
    }
    Ok(total / frames.max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub sigma: f64,
    pub measured_mape: f64,
    pub frames: usize,
}

/// Finds the `sigma` whose MAPE on the calibration image matches `target`
/// (percent). All candidate sigmas reuse the same unit-noise draws, on a
/// pixel subsample, so the search is a deterministic bisection.
pub fn calibrate_sigma(
    target: f64,
    template: &SensorNoiseModel,
    frames: usize,
    seed: u64,
) -> Result<Calibration, PerceptionError> {
    if !(target >= 0.0 && target.is_finite()) {
        return Err(PerceptionError::Unreachable {
            target,
            ceiling: f64::NAN,
        });
    }
    let frames = frames.max(1);
    if target == 0.0 {
        return Ok(Calibration {
            sigma: 0.0,
            measured_mape: 0.0,
            frames,
        });
    }
    let truth = calibration_truth();
    let pixels: Vec<(f64, f64, f64)> = (0..MAP_SIZE)
        .step_by(CALIBRATION_STRIDE)
        .flat_map(|row| (0..MAP_SIZE).step_by(CALIBRATION_STRIDE).map(move |col| (row, col)))
        .map(|(row, col)| {
            let (x, y) = truth.bbox.pixel_center(col, row);
            (x, y, truth.completion[row * MAP_SIZE + col])
        })
        .collect();

    let unit = SensorNoiseModel {
        sigma: 1.0,
        bias: 0.0,
        regions: Vec::new(),
        ..template.clone()
    };
    let mut seeds = rng_for(seed, Stream::Calibration);
    let draws: Vec<f64> = (0..frames)
        .flat_map(|_| {
            let frame = SensorNoise::new(unit.clone(), seeds.gen()).next_frame();
            pixels
                .iter()
                .map(|&(x, y, _)| frame.error_at(x, y))
                .collect::<Vec<_>>()
        })
        .collect();

    let bias = template.bias;
    let eval = |sigma: f64| -> f64 {
        let sum: f64 = draws
            .chunks(pixels.len())
            .flat_map(|chunk| chunk.iter().zip(&pixels))
            .map(|(&u, &(_, _, t))| {
                let est = (t * (1.0 + bias + sigma * u)).clamp(0.0, 1.0);
                (est - t).abs() / t
            })
            .sum();
        100.0 * sum / draws.len() as f64
    };

    const SIGMA_CEILING: f64 = 1e3;
    let mut hi = 0.05;
    while eval(hi) < target {
        hi *= 2.0;
        if hi > SIGMA_CEILING {
            return Err(PerceptionError::Unreachable {
                target,
                ceiling: eval(SIGMA_CEILING),
            });
        }
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if eval(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = 0.5 * (lo + hi);
    Ok(Calibration {
        sigma,
        measured_mape: eval(sigma),
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specimen::{make_specimen, DrillTool, SpecimenConfig};
    use crate::Vec3;
    use approx::assert_relative_eq;

    fn bbox() -> BoundingBox {
        BoundingBox::square(0.0, 0.0, 9.4e-3).unwrap()
    }

    fn ring_points(n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / n as f64;
                (8e-3 * a.cos(), 8e-3 * a.sin())
            })
            .collect()
    }

    fn drilled_ring() -> ShellSpecimen {
        let mut s = make_specimen(&SpecimenConfig::uniform(300e-6), 0).unwrap();
        let path: Vec<Vec3> = (0..=400)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / 400.0;
                Vec3::new(8e-3 * a.cos(), 8e-3 * a.sin(), -300e-6)
            })
            .collect();
        s.sweep(&path, 0.7e-3);
        s
    }

    #[test]
    fn degenerate_bbox_rejected() {
        assert!(BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BoundingBox::new(0.0, 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn undrilled_map_is_zero() {
        let s = make_specimen(&SpecimenConfig::default(), 1).unwrap();
        let map = render_map(&s, Some((8e-3, 0.0)), bbox(), 1.5e-3).unwrap();
        assert_eq!(map.completion.len(), MAP_SIZE * MAP_SIZE);
        assert_eq!(map.mask.len(), MAP_SIZE * MAP_SIZE);
        assert!(map.completion.iter().all(|&c| c == 0.0));
        assert!(map.mask.contains(&1.0));
    }

    #[test]
    fn drilled_ring_renders_ring() {
        let s = drilled_ring();
        let map = render_map(&s, Some((0.0, 0.0)), bbox(), 1.5e-3).unwrap();
        let b = bbox();
        for &(x, y) in &ring_points(30) {
            let (c, r) = b.to_pixel(x, y);
            let i = r.round() as usize * MAP_SIZE + c.round() as usize;
            assert!(map.completion[i] > 0.99);
        }
        // center and corners untouched
        let (c, r) = b.to_pixel(0.0, 0.0);
        assert_eq!(map.completion[r.round() as usize * MAP_SIZE + c.round() as usize], 0.0);
        assert_eq!(map.completion[0], 0.0);
    }

    #[test]
    fn drill_on_ring_hides_truth() {
        let s = drilled_ring();
        let map = render_map(&s, Some((8e-3, 0.0)), bbox(), 1.5e-3).unwrap();
        let (c, r) = bbox().to_pixel(8e-3, 0.0);
        let i = r.round() as usize * MAP_SIZE + c.round() as usize;
        assert_eq!(s.completion_at(8e-3, 0.0).unwrap(), 1.0);
        assert_eq!(map.mask[i], 1.0);
        assert_eq!(map.completion[i], 0.0);
    }

    #[test]
    fn zero_sigma_is_identity() {
        let s = drilled_ring();
        let map = render_map(&s, None, bbox(), 1.5e-3).unwrap();
        let mut noise = SensorNoise::new(SensorNoiseModel::oracle(), 3);
        assert_eq!(corrupt(&map, &mut noise), map);
    }

    #[test]
    fn large_error_clamps_to_one() {
        let model = SensorNoiseModel {
            bias: 0.5,
            ..SensorNoiseModel::oracle()
        };
        let frame = SensorNoise::new(model, 0).next_frame();
        assert_eq!(frame.apply(0.99, 0.0, 0.0), 1.0);
        assert_eq!(frame.apply(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn regional_bias_only_inside_region() {
        let model = SensorNoiseModel {
            regions: vec![BiasRegion { x: 8e-3, y: 0.0, radius: 2e-3, bias: -0.3 }],
            ..SensorNoiseModel::oracle()
        };
        let frame = SensorNoise::new(model, 0).next_frame();
        assert_relative_eq!(frame.apply(1.0, 8e-3, 0.0), 0.7);
        assert_eq!(frame.apply(1.0, -8e-3, 0.0), 1.0);
    }

    #[test]
    fn progress_never_regresses() {
        let mut bar = ProgressBar::new(2);
        bar.absorb(&[Some(0.8), Some(0.1)]).unwrap();
        bar.absorb(&[Some(0.6), Some(0.2)]).unwrap();
        assert_eq!(sample_completions(&bar), vec![0.8, 0.2]);
        assert!(bar.absorb(&[Some(0.1)]).is_err());
    }

    #[test]
    fn all_zero_map_gives_zero_bins() {
        let s = make_specimen(&SpecimenConfig::default(), 0).unwrap();
        let map = render_map(&s, None, bbox(), 1.5e-3).unwrap();
        let geometry = BinGeometry::new(bbox(), &ring_points(30), 2.0);
        let mut bar = ProgressBar::new(30);
        update_progress(&mut bar, &map, &geometry).unwrap();
        assert!(sample_completions(&bar).iter().all(|&c| c == 0.0));
    }

    #[test]
    fn occluded_bin_freezes_then_resumes() {
        let mut s = make_specimen(&SpecimenConfig::uniform(300e-6), 0).unwrap();
        let points = ring_points(30);
        let geometry = BinGeometry::new(bbox(), &points, 2.0);
        let mut bar = ProgressBar::new(30);
        let (px, py) = points[0];
        let drill = DrillTool { tip: Vec3::new(px, py, -150e-6), burr_radius: 0.7e-3, active: true };
        s.apply_drill(&drill);
        for _ in 0..10 {
            let map = render_map(&s, Some((px, py)), bbox(), 1.5e-3).unwrap();
            update_progress(&mut bar, &map, &geometry).unwrap();
            assert_eq!(bar.values()[0], 0.0);
        }
        let map = render_map(&s, Some((-px, -py)), bbox(), 1.5e-3).unwrap();
        update_progress(&mut bar, &map, &geometry).unwrap();
        assert_relative_eq!(bar.values()[0], 0.5, max_relative = 1e-9);
    }

    #[test]
    fn sparse_observation_matches_full_pipeline() {
        let s = drilled_ring();
        let points = ring_points(30);
        let geometry = BinGeometry::new(bbox(), &points, 2.0);
        let model = SensorNoiseModel { sigma: 0.2, ..SensorNoiseModel::default() };
        let mut noise = SensorNoise::new(model, 5);
        for k in 0..5 {
            let frame = noise.next_frame();
            let drill = Some(points[k * 3]);
            let full = render_map(&s, drill, bbox(), 1.5e-3).unwrap();
            let full = geometry.readings(&corrupt_with(&full, &frame));
            let sparse = geometry.observe(&s, drill, 1.5e-3, &frame).unwrap();
            assert_eq!(full, sparse);
        }
    }

    #[test]
    fn oracle_bins_track_truth() {
        let mut s = make_specimen(&SpecimenConfig::default(), 4).unwrap();
        let path: Vec<Vec3> = (0..=400)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / 400.0;
                Vec3::new(8e-3 * a.cos(), 8e-3 * a.sin(), -120e-6)
            })
            .collect();
        s.sweep(&path, 0.7e-3);
        let points = ring_points(30);
        let geometry = BinGeometry::new(bbox(), &points, 2.0);
        let mut bar = ProgressBar::new(30);
        let frame = SensorNoise::new(SensorNoiseModel::oracle(), 0).next_frame();
        bar.absorb(&geometry.observe(&s, None, 0.0, &frame).unwrap()).unwrap();
        for (&(x, y), &c) in points.iter().zip(bar.values()) {
            let truth = s.completion_at(x, y).unwrap();
            assert!((c - truth).abs() < 0.01, "bin {c} vs truth {truth}");
        }
    }

    #[test]
    fn mape_examples() {
        let t = [0.5, 0.8];
        assert_eq!(mape(&t, &t).unwrap(), 0.0);
        let scaled: Vec<f64> = t.iter().map(|v| v * 1.1).collect();
        assert_relative_eq!(mape(&scaled, &t).unwrap(), 10.0, max_relative = 1e-12);
        assert_relative_eq!(mape(&[0.6, 0.7], &t).unwrap(), 16.25, max_relative = 1e-12);
        // near-zero truth is excluded
        assert_relative_eq!(mape(&[0.6, 0.7, 0.5], &[0.5, 0.8, 0.01]).unwrap(), 16.25, max_relative = 1e-12);
        assert_eq!(mape(&[0.1], &[0.0]), Err(PerceptionError::UndefinedMetric));
    }

    #[test]
    fn calibration_edge_cases() {
        let model = SensorNoiseModel::default();
        assert_eq!(calibrate_sigma(0.0, &model, 100, 1).unwrap().sigma, 0.0);
        assert!(matches!(
            calibrate_sigma(200.0, &model, 200, 1),
            Err(PerceptionError::Unreachable { .. })
        ));
    }

    #[test]
    fn pgm_header_and_size() {
        let mut buf = Vec::new();
        CompletionMap::write_pgm(&vec![0.5; MAP_SIZE * MAP_SIZE], &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n128 128\n255\n"));
        assert_eq!(buf.len(), 15 + MAP_SIZE * MAP_SIZE);
    }
}
