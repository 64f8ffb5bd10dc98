//! Closed and open parametric cubic splines through 3-D knots.
//!
//! Every segment is parameterized by its own `u ∈ [0, 1]`, so knot `i` sits at
//! `u = 0` of segment `i` and at `u = 1` of segment `i - 1`. Two fits are
//! provided:
//!
//! * [`fit_constrained`] takes prescribed first derivatives at every knot
//!   (normally from [`compute_knot_derivatives`]) and never overshoots the
//!   interval spanned by a segment's end knots in any coordinate.
//! * [`fit_natural`] is the classic C2 interpolant (periodic when closed,
//!   natural end conditions when open). It is smoother but rings around
//!   abrupt steps, which is why the drill path uses the constrained fit.

use std::io::{self, Write};

use thiserror::Error;

use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("need at least 3 knots, got {0}")]
    TooFewKnots(usize),
    #[error("knots {0} and {1} coincide; segment is degenerate")]
    DegenerateSegment(usize, usize),
    #[error("expected {expected} knot derivatives, got {got}")]
    DerivativeCount { expected: usize, got: usize },
    #[error("segment index {index} out of range for a path of {len} segments")]
    SegmentIndex { index: usize, len: usize },
    #[error("curve parameter u = {0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("knot coordinates must be finite")]
    NonFinite,
    #[error("spline system is singular")]
    Singular,
}

/// One cubic `a + b·u + c·u² + d·u³`, coefficients in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineSegment {
    pub a: Vec3,
    pub b: Vec3,
    pub c: Vec3,
    pub d: Vec3,
}

impl SplineSegment {
    #[inline]
    pub fn point(&self, u: f64) -> Vec3 {
        self.a + (self.b + (self.c + self.d * u) * u) * u
    }

    #[inline]
    pub fn d1(&self, u: f64) -> Vec3 {
        self.b + (self.c * 2.0 + self.d * (3.0 * u)) * u
    }

    #[inline]
    pub fn d2(&self, u: f64) -> Vec3 {
        self.c * 2.0 + self.d * (6.0 * u)
    }

    pub fn start(&self) -> Vec3 {
        self.a
    }

    pub fn end(&self) -> Vec3 {
        self.a + self.b + self.c + self.d
    }
}

/// Ordered cubic segments. A closed path has one segment per knot, the last
/// one running from the final knot back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct SplinePath {
    segments: Vec<SplineSegment>,
    closed: bool,
}

impl SplinePath {
    pub fn segments(&self) -> &[SplineSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn segment(&self, index: usize, u: f64) -> Result<&SplineSegment, SplineError> {
        // NaN fails both comparisons and is rejected here too
        if !(0.0..=1.0).contains(&u) {
            return Err(SplineError::ParameterOutOfRange(u));
        }
        self.segments.get(index).ok_or(SplineError::SegmentIndex {
            index,
            len: self.segments.len(),
        })
    }

    pub fn evaluate(&self, index: usize, u: f64) -> Result<Vec3, SplineError> {
        Ok(self.segment(index, u)?.point(u))
    }

    pub fn evaluate_d1(&self, index: usize, u: f64) -> Result<Vec3, SplineError> {
        Ok(self.segment(index, u)?.d1(u))
    }

    pub fn evaluate_d2(&self, index: usize, u: f64) -> Result<Vec3, SplineError> {
        Ok(self.segment(index, u)?.d2(u))
    }
}

/// First derivative `dp/du` at every knot.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotDerivatives(pub Vec<Vec3>);

impl KnotDerivatives {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn validate_knots(knots: &[Vec3], closed: bool) -> Result<(), SplineError> {
    let n = knots.len();
    if n < 3 {
        return Err(SplineError::TooFewKnots(n));
    }
    if knots.iter().any(|k| !k.iter().all(|v| v.is_finite())) {
        return Err(SplineError::NonFinite);
    }
    let pairs = if closed { n } else { n - 1 };
    for i in 0..pairs {
        let j = (i + 1) % n;
        if knots[i] == knots[j] {
            return Err(SplineError::DegenerateSegment(i, j));
        }
    }
    Ok(())
}

/// Harmonic mean of two chord slopes, or zero when they disagree in sign or
/// either one is flat.
#[inline]
fn harmonic_slope(left: f64, right: f64) -> f64 {
    if left * right <= 0.0 {
        0.0
    } else {
        2.0 * left * right / (left + right)
    }
}

/// Knot derivatives for the constrained fit, chosen coordinate by coordinate.
///
/// With unit parameter spacing the chord slopes are plain differences
/// `p[i+1] - p[i]`. Interior knots (all knots on a closed path) take the
/// harmonic mean of the adjacent slopes, clamped to zero on a sign change.
/// Open-path end knots take their one-sided chord.
pub fn compute_knot_derivatives(
    knots: &[Vec3],
    closed: bool,
) -> Result<KnotDerivatives, SplineError> {
    validate_knots(knots, closed)?;
    let n = knots.len();
    let chord = |i: usize| knots[(i + 1) % n] - knots[i];

    let derivs = (0..n)
        .map(|i| {
            if !closed && i == 0 {
                return chord(0);
            }
            if !closed && i == n - 1 {
                return chord(n - 2);
            }
            let left = chord((i + n - 1) % n);
            let right = chord(i);
            Vec3::from_fn(|k, _| harmonic_slope(left[k], right[k]))
        })
        .collect();
    Ok(KnotDerivatives(derivs))
}

/// Hermite segment from end points and end derivatives.
pub fn hermite_segment(p0: Vec3, p1: Vec3, d0: Vec3, d1: Vec3) -> SplineSegment {
    SplineSegment {
        a: p0,
        b: d0,
        c: (p1 - p0) * 3.0 - (d1 + d0 * 2.0),
        d: (p0 - p1) * 2.0 + d1 + d0,
    }
}

/// Constrained cubic spline: C1 with the prescribed knot derivatives, second
/// derivative free to jump at knots.
pub fn fit_constrained(
    knots: &[Vec3],
    derivs: &KnotDerivatives,
    closed: bool,
) -> Result<SplinePath, SplineError> {
    let n = knots.len();
    if n < 3 {
        return Err(SplineError::TooFewKnots(n));
    }
    if derivs.len() != n {
        return Err(SplineError::DerivativeCount {
            expected: n,
            got: derivs.len(),
        });
    }
    let count = if closed { n } else { n - 1 };
    let segments = (0..count)
        .map(|i| {
            let j = (i + 1) % n;
            hermite_segment(knots[i], knots[j], derivs.0[i], derivs.0[j])
        })
        .collect();
    Ok(SplinePath { segments, closed })
}

/// [`compute_knot_derivatives`] followed by [`fit_constrained`].
pub fn fit_constrained_auto(knots: &[Vec3], closed: bool) -> Result<SplinePath, SplineError> {
    let derivs = compute_knot_derivatives(knots, closed)?;
    fit_constrained(knots, &derivs, closed)
}

/// Classic C2 cubic spline with uniform unit parameter spacing.
pub fn fit_natural(knots: &[Vec3], closed: bool) -> Result<SplinePath, SplineError> {
    validate_knots(knots, closed)?;
    let n = knots.len();

    // Second derivatives M satisfy M[i-1] + 4 M[i] + M[i+1] = 6 (p[i+1] - 2 p[i] + p[i-1]).
    let mut m = vec![Vec3::zeros(); n];
    for axis in 0..3 {
        let p: Vec<f64> = knots.iter().map(|k| k[axis]).collect();
        let moments = if closed {
            let rhs: Vec<f64> = (0..n)
                .map(|i| 6.0 * (p[(i + 1) % n] - 2.0 * p[i] + p[(i + n - 1) % n]))
                .collect();
            solve_cyclic(1.0, 4.0, 1.0, &rhs)?
        } else {
            let rhs: Vec<f64> = (1..n - 1)
                .map(|i| 6.0 * (p[i + 1] - 2.0 * p[i] + p[i - 1]))
                .collect();
            let sub = vec![1.0; rhs.len()];
            let diag = vec![4.0; rhs.len()];
            let sup = vec![1.0; rhs.len()];
            let inner = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
            let mut full = Vec::with_capacity(n);
            full.push(0.0);
            full.extend(inner);
            full.push(0.0);
            full
        };
        for (mi, v) in m.iter_mut().zip(moments) {
            mi[axis] = v;
        }
    }

    let count = if closed { n } else { n - 1 };
    let segments = (0..count)
        .map(|i| {
            let j = (i + 1) % n;
            let chord = knots[j] - knots[i];
            SplineSegment {
                a: knots[i],
                b: chord - (m[i] * 2.0 + m[j]) / 6.0,
                c: m[i] / 2.0,
                d: (m[j] - m[i]) / 6.0,
            }
        })
        .collect();
    Ok(SplinePath { segments, closed })
}

/// Thomas algorithm. `sub[0]` and `sup[len-1]` are ignored.
pub(crate) fn solve_tridiagonal(
    sub: &[f64],
    diag: &[f64],
    sup: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>, SplineError> {
    let n = rhs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot.abs() < f64::EPSILON {
        return Err(SplineError::Singular);
    }
    c[0] = sup[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - sub[i] * c[i - 1];
        if pivot.abs() < f64::EPSILON {
            return Err(SplineError::Singular);
        }
        c[i] = sup[i] / pivot;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Constant-coefficient cyclic tridiagonal solve via Sherman-Morrison.
fn solve_cyclic(lower: f64, diag: f64, upper: f64, rhs: &[f64]) -> Result<Vec<f64>, SplineError> {
    let n = rhs.len();
    if n < 3 {
        return Err(SplineError::TooFewKnots(n));
    }
    // corner entries: A[0][n-1] = lower, A[n-1][0] = upper
    let gamma = -diag;
    let mut b = vec![diag; n];
    b[0] = diag - gamma;
    b[n - 1] = diag - lower * upper / gamma;
    let sub = vec![lower; n];
    let sup = vec![upper; n];
    let x = solve_tridiagonal(&sub, &b, &sup, rhs)?;
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = upper;
    let z = solve_tridiagonal(&sub, &b, &sup, &u)?;
    let denom = 1.0 + z[0] + lower * z[n - 1] / gamma;
    if denom.abs() < f64::EPSILON {
        return Err(SplineError::Singular);
    }
    let factor = (x[0] + lower * x[n - 1] / gamma) / denom;
    Ok(x.iter().zip(&z).map(|(xi, zi)| xi - factor * zi).collect())
}

/// Largest excursion of one segment outside its knot interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentViolation {
    pub segment: usize,
    /// Positive above the upper knot, negative below the lower one, zero when
    /// the segment stays inside.
    pub amount: f64,
    pub u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeReport {
    pub axis: usize,
    pub segments: Vec<SegmentViolation>,
}

impl EnvelopeReport {
    pub fn max_violation(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.amount.abs())
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&SegmentViolation> {
        self.segments
            .iter()
            .max_by(|a, b| a.amount.abs().total_cmp(&b.amount.abs()))
    }
}

/// Samples every segment at `samples + 1` evenly spaced `u` values and records
/// how far coordinate `axis` leaves `[min(knot_i, knot_i+1), max(...)]`.
pub fn check_envelope(path: &SplinePath, axis: usize, samples: usize) -> EnvelopeReport {
    assert!(axis < 3, "axis must be 0, 1 or 2");
    let samples = samples.max(1);
    let segments = path
        .segments
        .iter()
        .enumerate()
        .map(|(index, seg)| {
            let lo = seg.start()[axis].min(seg.end()[axis]);
            let hi = seg.start()[axis].max(seg.end()[axis]);
            let mut worst = SegmentViolation {
                segment: index,
                amount: 0.0,
                u: 0.0,
            };
            for k in 0..=samples {
                let u = k as f64 / samples as f64;
                let v = seg.point(u)[axis];
                let amount = if v > hi {
                    v - hi
                } else if v < lo {
                    v - lo
                } else {
                    0.0
                };
                if amount.abs() > worst.amount.abs() {
                    worst.amount = amount;
                    worst.u = u;
                }
            }
            worst
        })
        .collect();
    EnvelopeReport { axis, segments }
}

/// Knots on a circle of `radius` at height 0 with the first `step_knots`
/// knots lowered by `step_height`: the abrupt profile on which a natural
/// spline rings and a constrained one does not.
pub fn step_profile(n: usize, radius: f64, step_height: f64, step_knots: usize) -> Vec<Vec3> {
    (0..n)
        .map(|k| {
            let angle = std::f64::consts::TAU * k as f64 / n as f64;
            let z = if k < step_knots { -step_height } else { 0.0 };
            Vec3::new(radius * angle.cos(), radius * angle.sin(), z)
        })
        .collect()
}

/// Dense side-by-side sampling of both fits over the same knots.
#[derive(Debug, Clone)]
pub struct SplineComparison {
    pub constrained: SplinePath,
    pub natural: SplinePath,
    pub samples_per_segment: usize,
    pub constrained_envelope: EnvelopeReport,
    pub natural_envelope: EnvelopeReport,
}

impl SplineComparison {
    pub fn new(knots: &[Vec3], samples_per_segment: usize) -> Result<Self, SplineError> {
        let constrained = fit_constrained_auto(knots, true)?;
        let natural = fit_natural(knots, true)?;
        let constrained_envelope = check_envelope(&constrained, 2, samples_per_segment);
        let natural_envelope = check_envelope(&natural, 2, samples_per_segment);
        Ok(Self {
            constrained,
            natural,
            samples_per_segment,
            constrained_envelope,
            natural_envelope,
        })
    }

    /// CSV with header `segment,u,x,y,z_constrained,z_natural` and
    /// `samples_per_segment` rows per segment at `u = k / samples`.
    /// `x` and `y` come from the constrained curve.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "segment,u,x,y,z_constrained,z_natural")?;
        let m = self.samples_per_segment;
        for (i, (cs, ns)) in self
            .constrained
            .segments
            .iter()
            .zip(&self.natural.segments)
            .enumerate()
        {
            for k in 0..m {
                let u = k as f64 / m as f64;
                let pc = cs.point(u);
                let pn = ns.point(u);
                writeln!(
                    out,
                    "{},{},{:e},{:e},{:e},{:e}",
                    i, u, pc.x, pc.y, pc.z, pn.z
                )?;
            }
        }
        Ok(())
    }
}
