//! Virtual eggshell: outer surface, thickness, removal depth and membrane.
//!
//! All fields live on a square grid of cell centers covering the drilling
//! region, centered on the origin. The outer surface is a spherical cap (or a
//! plane) tilted about an axis through the origin; the inner surface sits one
//! local thickness below it. Removal is geometric: a flat-bottomed cylindrical
//! burr takes away everything above the lowest tip height it reaches over a
//! cell, and the membrane ruptures once that cut passes the inner surface by
//! more than the tolerance.

use std::io::{self, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::field::{rng_for, Stream, WaveField};
use crate::Vec3;

/// Bands thinner than this are cut on the calling thread.
const PARALLEL_MIN_ROWS: usize = 64;
/// Slack on the rupture test so a tip exactly on the inner surface does not
/// trip it through rounding.
const RUPTURE_EPS: f64 = 1e-12;
const THICKNESS_WAVES: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecimenError {
    #[error("invalid specimen: {0}")]
    Invalid(String),
    #[error("point ({x}, {y}) lies outside the specimen grid")]
    OutOfRegion { x: f64, y: f64 },
}

/// Local thickening with a raised-cosine profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThicknessBump {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub extra: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecimenConfig {
    /// Nominal shell thickness (m).
    pub base_thickness: f64,
    /// Relative uniform jitter of the nominal thickness drawn per seed.
    pub thickness_jitter: f64,
    /// Relative amplitude of the smooth thickness variation.
    pub variation_amplitude: f64,
    pub variation_wavelength: f64,
    pub min_thickness: f64,
    /// Radius of curvature of the outer cap; absent for a flat shell.
    pub cap_radius: Option<f64>,
    pub tilt_deg: f64,
    /// Direction of the tilt axis in the x-y plane.
    pub tilt_axis_deg: f64,
    /// Extra tilt drawn uniformly from `[0, tilt_jitter_deg]` about a random axis.
    pub tilt_jitter_deg: f64,
    /// Side length of the square grid region (m).
    pub region_size: f64,
    pub grid: usize,
    pub membrane_tolerance: f64,
    pub bumps: Vec<ThicknessBump>,
}

impl Default for SpecimenConfig {
    fn default() -> Self {
        Self {
            base_thickness: 300e-6,
            thickness_jitter: 0.0,
            variation_amplitude: 0.2,
            variation_wavelength: 5e-3,
            min_thickness: 50e-6,
            cap_radius: None,
            tilt_deg: 0.0,
            tilt_axis_deg: 0.0,
            tilt_jitter_deg: 0.0,
            region_size: 20e-3,
            grid: 256,
            membrane_tolerance: 20e-6,
            bumps: Vec::new(),
        }
    }
}

impl SpecimenConfig {
    /// Uniform flat shell of the given thickness, no tilt.
    pub fn uniform(thickness: f64) -> Self {
        Self {
            base_thickness: thickness,
            variation_amplitude: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SpecimenError> {
        let bad = |m: &str| Err(SpecimenError::Invalid(m.to_string()));
        let finite = [
            self.base_thickness,
            self.thickness_jitter,
            self.variation_amplitude,
            self.variation_wavelength,
            self.min_thickness,
            self.tilt_deg,
            self.tilt_axis_deg,
            self.tilt_jitter_deg,
            self.region_size,
            self.membrane_tolerance,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all specimen parameters must be finite");
        }
        if self.base_thickness <= 0.0 {
            return bad("base_thickness must be positive");
        }
        if self.min_thickness <= 0.0 {
            return bad("min_thickness must be positive");
        }
        if !(0.0..1.0).contains(&self.thickness_jitter) {
            return bad("thickness_jitter must be in [0, 1)");
        }
        if self.variation_amplitude < 0.0 {
            return bad("variation_amplitude must be >= 0");
        }
        if self.variation_amplitude > 0.0 && self.variation_wavelength <= 0.0 {
            return bad("variation_wavelength must be positive");
        }
        if self.grid < 64 {
            return bad("grid must be at least 64");
        }
        if self.region_size <= 0.0 {
            return bad("region_size must be positive");
        }
        if self.membrane_tolerance < 0.0 {
            return bad("membrane_tolerance must be >= 0");
        }
        if self.tilt_deg.abs() >= 45.0 || !(0.0..45.0).contains(&self.tilt_jitter_deg) {
            return bad("tilt must stay below 45 degrees");
        }
        if let Some(rc) = self.cap_radius {
            if !(rc.is_finite() && rc > self.region_size / std::f64::consts::SQRT_2) {
                return bad("cap_radius must exceed the half-diagonal of the region");
            }
        }
        for b in &self.bumps {
            if !(b.radius > 0.0 && b.extra.is_finite() && b.x.is_finite() && b.y.is_finite()) {
                return bad("bumps need a positive radius and finite values");
            }
        }
        Ok(())
    }
}

/// Cylindrical cutter with a flat bottom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrillTool {
    pub tip: Vec3,
    pub burr_radius: f64,
    pub active: bool,
}

/// Where and when the membrane first gave way.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rupture {
    pub x: f64,
    pub y: f64,
    /// How far below the inner surface the cutter reached (m).
    pub depth_below_inner: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShellSpecimen {
    res: usize,
    origin: f64,
    cell: f64,
    outer: Vec<f64>,
    thickness: Vec<f64>,
    removal: Vec<f64>,
    tolerance: f64,
    rupture: Option<Rupture>,
    execution: Execution,
}

/// Builds the specimen for `seed`. Identical inputs give bit-identical fields.
pub fn make_specimen(config: &SpecimenConfig, seed: u64) -> Result<ShellSpecimen, SpecimenError> {
    config.validate()?;
    let mut rng = rng_for(seed, Stream::Specimen);

    let base = if config.thickness_jitter > 0.0 {
        config.base_thickness * (1.0 + rng.gen_range(-config.thickness_jitter..=config.thickness_jitter))
    } else {
        config.base_thickness
    };
    let variation = if config.variation_amplitude > 0.0 {
        WaveField::bounded(&mut rng, config.variation_wavelength, THICKNESS_WAVES)
    } else {
        WaveField::zero()
    };
    let (mut slope_x, mut slope_y) = slope_vector(config.tilt_deg, config.tilt_axis_deg);
    if config.tilt_jitter_deg > 0.0 {
        let extra = rng.gen_range(0.0..=config.tilt_jitter_deg);
        let axis = rng.gen_range(0.0..360.0);
        let (gx, gy) = slope_vector(extra, axis);
        slope_x += gx;
        slope_y += gy;
    }

    let res = config.grid;
    let cell = config.region_size / res as f64;
    let origin = -config.region_size / 2.0;
    let mut outer = Vec::with_capacity(res * res);
    let mut thickness = Vec::with_capacity(res * res);
    for row in 0..res {
        let y = origin + (row as f64 + 0.5) * cell;
        for col in 0..res {
            let x = origin + (col as f64 + 0.5) * cell;
            let sag = config
                .cap_radius
                .map_or(0.0, |rc| rc - (rc * rc - x * x - y * y).sqrt());
            outer.push(slope_x * x + slope_y * y - sag);
            let bumps: f64 = config
                .bumps
                .iter()
                .map(|b| {
                    let d = (x - b.x).hypot(y - b.y);
                    if d < b.radius {
                        b.extra * 0.5 * (1.0 + (std::f64::consts::PI * d / b.radius).cos())
                    } else {
                        0.0
                    }
                })
                .sum();
            let h = base * (1.0 + config.variation_amplitude * variation.value(x, y)) + bumps;
            thickness.push(h.max(config.min_thickness));
        }
    }

    Ok(ShellSpecimen {
        res,
        origin,
        cell,
        outer,
        thickness,
        removal: vec![0.0; res * res],
        tolerance: config.membrane_tolerance,
        rupture: None,
        execution: Execution::Sequential,
    })
}

/// Height gradient `(dz/dx, dz/dy)` of a plane tilted by `tilt_deg` about an
/// in-plane axis at `axis_deg` from +x.
fn slope_vector(tilt_deg: f64, axis_deg: f64) -> (f64, f64) {
    let t = tilt_deg.to_radians().tan();
    let a = axis_deg.to_radians();
    // rises along the axis normal (-sin a, cos a)
    (-t * a.sin(), t * a.cos())
}

/// Straight cutter move from one tip position to another with linearly
/// varying height.
#[derive(Debug, Clone, Copy)]
struct Stroke {
    ax: f64,
    ay: f64,
    az: f64,
    dx: f64,
    dy: f64,
    dz: f64,
    len2: f64,
    ymin: f64,
    ymax: f64,
}

impl Stroke {
    fn new(from: Vec3, to: Vec3, radius: f64) -> Self {
        let (dx, dy, dz) = (to.x - from.x, to.y - from.y, to.z - from.z);
        Self {
            ax: from.x,
            ay: from.y,
            az: from.z,
            dx,
            dy,
            dz,
            len2: dx * dx + dy * dy,
            ymin: from.y.min(to.y) - radius,
            ymax: from.y.max(to.y) + radius,
        }
    }

    /// Range of x the cutter passes over along the line at height `y`. The
    /// swept region is convex, so its ends lie on an end disc or on one of
    /// the two side lines.
    fn x_span(&self, y: f64, r: f64) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let mut take = |x: f64| {
            lo = lo.min(x);
            hi = hi.max(x);
        };
        for (px, py) in [(self.ax, self.ay), (self.ax + self.dx, self.ay + self.dy)] {
            let h2 = r * r - (y - py) * (y - py);
            if h2 >= 0.0 {
                let h = h2.sqrt();
                take(px - h);
                take(px + h);
            }
        }
        if self.dy != 0.0 {
            let len = self.len2.sqrt();
            let (nx, ny) = (-self.dy / len, self.dx / len);
            for side in [-r, r] {
                let s = (y - self.ay - side * ny) / self.dy;
                if (0.0..=1.0).contains(&s) {
                    take(self.ax + s * self.dx + side * nx);
                }
            }
        }
        (lo <= hi).then_some((lo, hi))
    }

    /// Lowest tip height while the cutter disc covers `(x, y)`, if it ever does.
    #[inline]
    fn lowest_over(&self, x: f64, y: f64, r2: f64) -> Option<f64> {
        let (px, py) = (x - self.ax, y - self.ay);
        if self.len2 == 0.0 {
            return (px * px + py * py <= r2).then_some(self.az);
        }
        let t = (px * self.dx + py * self.dy) / self.len2;
        let perp2 = (px * px + py * py) - t * t * self.len2;
        let reach2 = r2 - perp2;
        if reach2 < 0.0 {
            return None;
        }
        let half = (reach2 / self.len2).sqrt();
        let lo = (t - half).max(0.0);
        let hi = (t + half).min(1.0);
        if lo > hi {
            return None;
        }
        // height is linear along the stroke, so the minimum is at an end
        Some((self.az + lo * self.dz).min(self.az + hi * self.dz))
    }
}

impl ShellSpecimen {
    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn membrane_tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Grid rows are cut in parallel when this is a parallel strategy.
    pub fn set_execution(&mut self, execution: Execution) {
        self.execution = execution;
    }

    /// `[min, max]` extent of the grid along x and y.
    pub fn extent(&self) -> (f64, f64) {
        (self.origin, self.origin + self.cell * self.res as f64)
    }

    pub fn thickness_field(&self) -> &[f64] {
        &self.thickness
    }

    pub fn removal_field(&self) -> &[f64] {
        &self.removal
    }

    pub fn outer_field(&self) -> &[f64] {
        &self.outer
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin + (col as f64 + 0.5) * self.cell,
            self.origin + (row as f64 + 0.5) * self.cell,
        )
    }

    fn check_inside(&self, x: f64, y: f64) -> Result<(), SpecimenError> {
        let (lo, hi) = self.extent();
        if (lo..=hi).contains(&x) && (lo..=hi).contains(&y) {
            Ok(())
        } else {
            Err(SpecimenError::OutOfRegion { x, y })
        }
    }

    /// Bilinear weights over the four surrounding cell centers, clamped at the
    /// grid border.
    fn bilinear(&self, x: f64, y: f64) -> [(usize, f64); 4] {
        let last = (self.res - 1) as f64;
        let fx = ((x - self.origin) / self.cell - 0.5).clamp(0.0, last);
        let fy = ((y - self.origin) / self.cell - 0.5).clamp(0.0, last);
        let c0 = (fx.floor() as usize).min(self.res - 2);
        let r0 = (fy.floor() as usize).min(self.res - 2);
        let tx = fx - c0 as f64;
        let ty = fy - r0 as f64;
        let i = r0 * self.res + c0;
        [
            (i, (1.0 - tx) * (1.0 - ty)),
            (i + 1, tx * (1.0 - ty)),
            (i + self.res, (1.0 - tx) * ty),
            (i + self.res + 1, tx * ty),
        ]
    }

    fn interpolate(&self, x: f64, y: f64, f: impl Fn(usize) -> f64) -> f64 {
        self.bilinear(x, y).iter().map(|&(i, w)| w * f(i)).sum()
    }

    #[inline]
    fn cell_completion(&self, i: usize) -> f64 {
        (self.removal[i] / self.thickness[i]).min(1.0)
    }

    /// Fraction of local thickness removed, bilinear between cell centers.
    pub fn completion_at(&self, x: f64, y: f64) -> Result<f64, SpecimenError> {
        self.check_inside(x, y)?;
        Ok(self.interpolate(x, y, |i| self.cell_completion(i)).clamp(0.0, 1.0))
    }

    pub fn outer_z_at(&self, x: f64, y: f64) -> Result<f64, SpecimenError> {
        self.check_inside(x, y)?;
        Ok(self.interpolate(x, y, |i| self.outer[i]))
    }

    pub fn thickness_at(&self, x: f64, y: f64) -> Result<f64, SpecimenError> {
        self.check_inside(x, y)?;
        Ok(self.interpolate(x, y, |i| self.thickness[i]))
    }

    pub fn membrane_ruptured(&self) -> bool {
        self.rupture.is_some()
    }

    pub fn rupture(&self) -> Option<Rupture> {
        self.rupture
    }

    /// Cut under a stationary tool.
    pub fn apply_drill(&mut self, tool: &DrillTool) -> bool {
        if !tool.active {
            return false;
        }
        self.sweep(&[tool.tip], tool.burr_radius)
    }

    /// Cut along a polyline of tip positions, treating each leg as a straight
    /// move with linearly varying height. Every cell the cutter passes over is
    /// accounted for exactly, however long the legs are. Returns true if the
    /// membrane ruptured during this call.
    pub fn sweep(&mut self, path: &[Vec3], burr_radius: f64) -> bool {
        if path.is_empty() || burr_radius <= 0.0 {
            return false;
        }
        let strokes: Vec<Stroke> = if path.len() == 1 {
            vec![Stroke::new(path[0], path[0], burr_radius)]
        } else {
            path.windows(2)
                .map(|w| Stroke::new(w[0], w[1], burr_radius))
                .collect()
        };
        let ymin = strokes.iter().map(|s| s.ymin).fold(f64::INFINITY, f64::min);
        let ymax = strokes.iter().map(|s| s.ymax).fold(f64::NEG_INFINITY, f64::max);
        let row_lo = (((ymin - self.origin) / self.cell - 0.5).floor().max(0.0)) as usize;
        let row_hi = (((ymax - self.origin) / self.cell - 0.5).ceil().max(-1.0) + 1.0) as usize;
        let row_hi = row_hi.min(self.res);
        if row_lo >= row_hi {
            return false;
        }

        let r2 = burr_radius * burr_radius;
        let res = self.res;
        let (origin, cell, tolerance) = (self.origin, self.cell, self.tolerance);
        let outer = &self.outer;
        let thickness = &self.thickness;
        let band = &mut self.removal[row_lo * res..row_hi * res];
        let mut ruptures: Vec<Option<Rupture>> = vec![None; row_hi - row_lo];

        let cut_row = |local: usize, row: &mut [f64]| -> Option<Rupture> {
            let r = row_lo + local;
            let y = origin + (r as f64 + 0.5) * cell;
            let mut first = None;
            for s in strokes.iter().filter(|s| y >= s.ymin && y <= s.ymax) {
                let Some((x0, x1)) = s.x_span(y, burr_radius) else {
                    continue;
                };
                // one cell of slack each side guards against rounding
                let c_lo = ((x0 - origin) / cell - 1.5).ceil().max(0.0) as usize;
                let c_hi = (((x1 - origin) / cell + 0.5).floor().max(-1.0) + 1.0) as usize;
                let c_hi = c_hi.min(res);
                if c_lo >= c_hi {
                    continue;
                }
                for (c, removed) in (c_lo..c_hi).zip(&mut row[c_lo..c_hi]) {
                    let x = origin + (c as f64 + 0.5) * cell;
                    let Some(z) = s.lowest_over(x, y, r2) else {
                        continue;
                    };
                    let i = r * res + c;
                    let depth = outer[i] - z;
                    let limit = thickness[i] + tolerance;
                    if depth > limit + RUPTURE_EPS && first.is_none() {
                        first = Some(Rupture {
                            x,
                            y,
                            depth_below_inner: depth - thickness[i],
                        });
                    }
                    let depth = depth.min(limit);
                    if depth > *removed {
                        *removed = depth;
                    }
                }
            }
            first
        };

        if self.execution.is_parallel() && row_hi - row_lo >= PARALLEL_MIN_ROWS {
            // pair each row with its rupture slot so rows stay independent
            let mut rows: Vec<(&mut [f64], &mut Option<Rupture>)> =
                band.chunks_mut(res).zip(ruptures.iter_mut()).collect();
            exec::for_each_chunk_mut(self.execution, &mut rows, 1, |local, chunk| {
                let (row, slot) = &mut chunk[0];
                **slot = cut_row(local, row);
            });
        } else {
            for ((local, row), slot) in band.chunks_mut(res).enumerate().zip(ruptures.iter_mut()) {
                *slot = cut_row(local, row);
            }
        }

        let newly = ruptures.into_iter().flatten().next();
        match (self.rupture, newly) {
            (None, Some(r)) => {
                self.rupture = Some(r);
                true
            }
            (_, Some(_)) => true,
            _ => false,
        }
    }

    /// Writes a field as plain-text rows of comma-separated values, one row
    /// per grid row from the lowest y up.
    pub fn write_matrix<W: Write>(values: &[f64], res: usize, mut out: W) -> io::Result<()> {
        for row in values.chunks(res) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Detachability rule for the cut-out patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetachRule {
    /// Completion a path point needs to count as cut through.
    pub completion: f64,
    /// Fraction of points that must be cut through.
    pub coverage: f64,
    /// Length of a run of consecutive uncut points that holds the patch.
    pub max_bridge: usize,
}

impl Default for DetachRule {
    fn default() -> Self {
        Self {
            completion: 0.7,
            coverage: 0.8,
            max_bridge: 2,
        }
    }
}

/// Whether per-point completions (in path order, closed) free the patch:
/// enough points cut through and no run of `max_bridge` or more uncut
/// neighbors.
pub fn detachable_from_completions(completions: &[f64], rule: &DetachRule) -> bool {
    let n = completions.len();
    if n == 0 {
        return false;
    }
    let cut: Vec<bool> = completions.iter().map(|&c| c >= rule.completion).collect();
    let cut_count = cut.iter().filter(|&&c| c).count();
    if (cut_count as f64) < rule.coverage * n as f64 - 1e-9 {
        return false;
    }
    if cut_count == n {
        return true;
    }
    if cut_count == 0 {
        return false;
    }
    // longest circular run of uncut points, starting after a cut one
    let start = cut.iter().position(|&c| c).unwrap_or(0);
    let mut run = 0;
    let mut longest = 0;
    for k in 1..=n {
        if cut[(start + k) % n] {
            run = 0;
        } else {
            run += 1;
            longest = longest.max(run);
        }
    }
    longest < rule.max_bridge
}

pub fn patch_detachable(
    specimen: &ShellSpecimen,
    points: &[(f64, f64)],
    rule: &DetachRule,
) -> Result<bool, SpecimenError> {
    let completions = points
        .iter()
        .map(|&(x, y)| specimen.completion_at(x, y))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(detachable_from_completions(&completions, rule))
}
