//! Scalar cubic Hermite splines with duration sensitivities.
//!
//! A segment of duration `T` over local time `τ ∈ [0, T]` is
//! `σ(τ) = y0·h00 + ẏ0·h10 + y1·h01 + ẏ1·h11`, which expands to
//! `a0 + a1 τ + a2 τ² + a3 τ³`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("segment duration must be positive, got {0}")]
    NonpositiveDuration(f64),
    #[error("time {t} outside spline range [{start}, {end}]")]
    OutOfHorizon { t: f64, start: f64, end: f64 },
    #[error("segment index {0} out of range")]
    InvalidSegment(usize),
    #[error("knot count {knots} does not match {segments} segments")]
    Shape { knots: usize, segments: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SegmentKind {
    Swing,
    Stance,
    /// Force during swing: identically zero.
    ZeroForce,
    /// Coordinate pinned at zero (e.g. foot height in stance).
    ConstantZero,
}

impl SegmentKind {
    pub fn is_zero(self) -> bool {
        matches!(self, SegmentKind::ZeroForce | SegmentKind::ConstantZero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HermiteSegment {
    pub y0: f64,
    pub y1: f64,
    pub ydot0: f64,
    pub ydot1: f64,
    pub duration: f64,
    pub kind: SegmentKind,
}

/// Weights of `(y0, ẏ0, y1, ẏ1)` in a segment value or derivative.
pub type Weights = [f64; 4];

/// Hermite basis at local time `tau`: value weights, time-derivative weights.
pub fn basis(duration: f64, tau: f64) -> (Weights, Weights) {
    let t = duration;
    let s = tau / t;
    let s2 = s * s;
    let s3 = s2 * s;
    let value = [
        1.0 - 3.0 * s2 + 2.0 * s3,
        t * (s - 2.0 * s2 + s3),
        3.0 * s2 - 2.0 * s3,
        t * (s3 - s2),
    ];
    let deriv = [
        (6.0 * s2 - 6.0 * s) / t,
        1.0 - 4.0 * s + 3.0 * s2,
        (6.0 * s - 6.0 * s2) / t,
        3.0 * s2 - 2.0 * s,
    ];
    (value, deriv)
}

/// Partial derivative of the value weights with respect to the duration at
/// fixed local time.
pub fn basis_d_duration(duration: f64, tau: f64) -> Weights {
    let t = duration;
    let s = tau / t;
    let s2 = s * s;
    let s3 = s2 * s;
    [
        (6.0 * s2 - 6.0 * s3) / t,
        2.0 * s2 - 2.0 * s3,
        (6.0 * s3 - 6.0 * s2) / t,
        s2 - 2.0 * s3,
    ]
}

fn combine(w: &Weights, seg: &HermiteSegment) -> f64 {
    w[0] * seg.y0 + w[1] * seg.ydot0 + w[2] * seg.y1 + w[3] * seg.ydot1
}

impl HermiteSegment {
    pub fn coefficients(&self) -> Result<[f64; 4], SplineError> {
        let t = self.duration;
        if !(t > 0.0) {
            return Err(SplineError::NonpositiveDuration(t));
        }
        if self.kind.is_zero() {
            return Ok([0.0; 4]);
        }
        let dy = self.y0 - self.y1;
        Ok([
            self.y0,
            self.ydot0,
            -(3.0 * dy + t * (2.0 * self.ydot0 + self.ydot1)) / (t * t),
            (2.0 * dy + t * (self.ydot0 + self.ydot1)) / (t * t * t),
        ])
    }

    /// Value and time derivative at local time `tau`.
    pub fn eval_local(&self, tau: f64) -> (f64, f64) {
        if self.kind.is_zero() {
            return (0.0, 0.0);
        }
        let (w, dw) = basis(self.duration, tau);
        (combine(&w, self), combine(&dw, self))
    }

    /// ∂σ/∂T at fixed local time.
    pub fn d_value_d_duration(&self, tau: f64) -> f64 {
        if self.kind.is_zero() {
            return 0.0;
        }
        combine(&basis_d_duration(self.duration, tau), self)
    }
}

/// Knot value and slope shared by the two adjacent segments.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Knot {
    pub value: f64,
    pub slope: f64,
}

/// Consecutive Hermite segments sharing knot storage, so value continuity
/// at every junction holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineTrajectory {
    pub t0: f64,
    pub knots: Vec<Knot>,
    pub durations: Vec<f64>,
    pub kinds: Vec<SegmentKind>,
}

impl SplineTrajectory {
    pub fn new(
        t0: f64,
        knots: Vec<Knot>,
        durations: Vec<f64>,
        kinds: Vec<SegmentKind>,
    ) -> Result<Self, SplineError> {
        if knots.len() != durations.len() + 1 || kinds.len() != durations.len() {
            return Err(SplineError::Shape {
                knots: knots.len(),
                segments: durations.len(),
            });
        }
        if let Some(&d) = durations.iter().find(|d| !(**d > 0.0)) {
            return Err(SplineError::NonpositiveDuration(d));
        }
        Ok(Self {
            t0,
            knots,
            durations,
            kinds,
        })
    }

    pub fn len(&self) -> usize {
        self.durations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.durations.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.durations.iter().sum::<f64>()
    }

    pub fn segment(&self, k: usize) -> HermiteSegment {
        HermiteSegment {
            y0: self.knots[k].value,
            ydot0: self.knots[k].slope,
            y1: self.knots[k + 1].value,
            ydot1: self.knots[k + 1].slope,
            duration: self.durations[k],
            kind: self.kinds[k],
        }
    }

    /// Segment index and local time for global time `t`. Intervals are
    /// half-open except the final point, which belongs to the last segment.
    pub fn locate(&self, t: f64) -> Result<(usize, f64), SplineError> {
        locate(self.t0, &self.durations, t)
    }

    pub fn eval(&self, t: f64) -> Result<(f64, f64), SplineError> {
        let (k, tau) = self.locate(t)?;
        Ok(self.segment(k).eval_local(tau))
    }

    /// Total derivative of the value at fixed global time `t` with respect
    /// to the duration of segment `seg`, including the shift of every later
    /// segment's local clock.
    pub fn d_eval_d_duration(&self, t: f64, seg: usize) -> Result<f64, SplineError> {
        if seg >= self.len() {
            return Err(SplineError::InvalidSegment(seg));
        }
        let (k, tau) = self.locate(t)?;
        let s = self.segment(k);
        Ok(if k < seg {
            0.0
        } else if k == seg {
            s.d_value_d_duration(tau)
        } else {
            -s.eval_local(tau).1
        })
    }
}

/// Shared locator for any sequence of segment durations starting at `t0`.
pub fn locate(t0: f64, durations: &[f64], t: f64) -> Result<(usize, f64), SplineError> {
    let end = t0 + durations.iter().sum::<f64>();
    let err = SplineError::OutOfHorizon { t, start: t0, end };
    if durations.is_empty() || !(t >= t0) {
        return Err(err);
    }
    let mut start = t0;
    for (k, &d) in durations.iter().enumerate() {
        let stop = start + d;
        if t < stop {
            return Ok((k, t - start));
        }
        if k + 1 == durations.len() && t <= stop + 1e-12 * (1.0 + stop.abs()) {
            return Ok((k, (t - start).min(d)));
        }
        start = stop;
    }
    Err(err)
}
