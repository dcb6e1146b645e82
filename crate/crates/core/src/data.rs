//! Forecast curves, observation segments and the preprocessing steps that
//! turn raw production/forecast series into calibration data.
//!
//! Model time is measured in days. A segment sampled every 10 minutes has
//! `dt = 1/144`.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seconds in one model time unit (one day).
pub const SECONDS_PER_TIME_UNIT: f64 = 86_400.0;

/// Default forecast truncation level.
pub const DEFAULT_EPSILON: f64 = 0.02;

/// Clamp a normalized forecast into `[eps, 1 - eps]`.
pub fn truncate_forecast(p: f64, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    Ok(truncate_unchecked(p, epsilon))
}

#[inline]
fn truncate_unchecked(p: f64, epsilon: f64) -> f64 {
    if p < epsilon {
        epsilon
    } else if p < 1.0 - epsilon {
        p
    } else {
        1.0 - epsilon
    }
}

pub(crate) fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            reason: "must lie in (0, 1/2)",
        });
    }
    Ok(())
}

/// Piecewise-linear truncated forecast `p_t` with piecewise-constant slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastCurve {
    times: Vec<f64>,
    values: Vec<f64>,
    epsilon: f64,
}

/// One linear stretch of a curve between two consecutive break points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePiece {
    pub start: f64,
    pub end: f64,
    origin: f64,
    origin_value: f64,
    pub slope: f64,
    epsilon: f64,
}

impl CurvePiece {
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        truncate_unchecked(
            self.origin_value + self.slope * (t - self.origin),
            self.epsilon,
        )
    }
}

impl ForecastCurve {
    /// Build a curve through `(times[k], truncate(values[k]))`.
    pub fn new(times: Vec<f64>, values: Vec<f64>, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if times.len() != values.len() {
            return Err(Error::Data(format!(
                "forecast has {} knot times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::Data(
                "a forecast curve needs at least 2 knots".into(),
            ));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::Data("forecast knots must be finite".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Data(
                "forecast knot times must be strictly increasing".into(),
            ));
        }
        let values = values
            .into_iter()
            .map(|p| truncate_unchecked(p, epsilon))
            .collect();
        Ok(ForecastCurve {
            times,
            values,
            epsilon,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.times
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Index `k` of the knot interval `[t_k, t_{k+1})` holding `t`, clamped to
    /// the first/last interval outside the knot range.
    #[inline]
    fn locate(&self, t: f64) -> usize {
        let k = self.times.partition_point(|&tk| tk <= t);
        k.saturating_sub(1).min(self.times.len() - 2)
    }

    #[inline]
    fn interval_slope(&self, k: usize) -> f64 {
        (self.values[k + 1] - self.values[k]) / (self.times[k + 1] - self.times[k])
    }

    fn piece(&self, k: usize, start: f64, end: f64) -> CurvePiece {
        CurvePiece {
            start,
            end,
            origin: self.times[k],
            origin_value: self.values[k],
            slope: self.interval_slope(k),
            epsilon: self.epsilon,
        }
    }

    /// Curve value; outside the knot range the end intervals are extended
    /// linearly and truncated.
    pub fn value(&self, t: f64) -> f64 {
        let k = self.locate(t);
        truncate_unchecked(
            self.values[k] + self.interval_slope(k) * (t - self.times[k]),
            self.epsilon,
        )
    }

    /// Right derivative `p'(t)` (left derivative at the final knot).
    pub fn slope(&self, t: f64) -> f64 {
        self.interval_slope(self.locate(t))
    }

    /// Every one-sided slope at `t`: two values at interior knots, one elsewhere.
    pub fn slopes_at(&self, t: f64) -> Vec<f64> {
        let k = self.locate(t);
        let mut out = vec![self.interval_slope(k)];
        if k > 0 && self.times[k] == t {
            out.push(self.interval_slope(k - 1));
        }
        out
    }

    /// Split `[t0, t1]` at interior knots into linear pieces.
    pub fn pieces(&self, t0: f64, t1: f64) -> Pieces<'_> {
        Pieces {
            curve: self,
            cursor: t0,
            end: t1,
        }
    }

    /// Forecast value at `start - delta`, extending the first knot interval
    /// linearly and truncating.
    pub fn extrapolate_backward(&self, delta: f64) -> Result<f64> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidParameter {
                name: "delta",
                value: delta,
                reason: "must be positive and finite",
            });
        }
        let p = self.values[0] - self.interval_slope(0) * delta;
        Ok(truncate_unchecked(p, self.epsilon))
    }

    /// The same curve with one extra knot at `start - delta`.
    pub fn extended_backward(&self, delta: f64) -> Result<ForecastCurve> {
        let p_back = self.extrapolate_backward(delta)?;
        let mut times = Vec::with_capacity(self.times.len() + 1);
        let mut values = Vec::with_capacity(self.times.len() + 1);
        times.push(self.times[0] - delta);
        values.push(p_back);
        times.extend_from_slice(&self.times);
        values.extend_from_slice(&self.values);
        Ok(ForecastCurve {
            times,
            values,
            epsilon: self.epsilon,
        })
    }
}

/// Iterator returned by [`ForecastCurve::pieces`].
pub struct Pieces<'a> {
    curve: &'a ForecastCurve,
    cursor: f64,
    end: f64,
}

impl Iterator for Pieces<'_> {
    type Item = CurvePiece;

    fn next(&mut self) -> Option<CurvePiece> {
        if self.cursor >= self.end {
            return None;
        }
        let c = self.curve;
        let k = c.locate(self.cursor);
        let stop = if k + 1 < c.times.len() - 1 && c.times[k + 1] < self.end {
            c.times[k + 1]
        } else {
            self.end
        };
        // guard against a cursor sitting a hair before a knot
        let stop = if stop <= self.cursor { self.end } else { stop };
        let piece = c.piece(k, self.cursor, stop);
        self.cursor = stop;
        Some(piece)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

/// One contiguous window of equispaced observations with its forecast knots.
///
/// `x` holds `N + 1` normalized observations spaced `delta_seconds` apart.
/// `p_raw` holds `K + 1` normalized, untruncated forecast knots spread evenly
/// over the same window, so `N` must be a multiple of `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: String,
    pub provider: String,
    pub start: DateTime<Utc>,
    pub delta_seconds: f64,
    pub x: Vec<f64>,
    pub p_raw: Vec<f64>,
    #[serde(default)]
    pub curtailed: bool,
}

impl Segment {
    /// Observation spacing in model time units.
    pub fn dt(&self) -> f64 {
        self.delta_seconds / SECONDS_PER_TIME_UNIT
    }

    pub fn n_transitions(&self) -> usize {
        self.x.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let ctx = |msg: String| Error::Data(format!("segment {}: {msg}", self.id));
        if !(self.delta_seconds.is_finite() && self.delta_seconds > 0.0) {
            return Err(ctx("delta_seconds must be positive".into()));
        }
        if self.x.len() < 2 {
            return Err(ctx("needs at least 2 observations".into()));
        }
        if self.p_raw.len() < 2 {
            return Err(ctx("needs at least 2 forecast knots".into()));
        }
        if self.x.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(ctx("observations must lie in [0, 1]".into()));
        }
        if self.p_raw.iter().any(|p| !p.is_finite()) {
            return Err(ctx("forecast knots must be finite".into()));
        }
        if (self.x.len() - 1) % (self.p_raw.len() - 1) != 0 {
            return Err(ctx(format!(
                "{} observation intervals are not a multiple of {} forecast intervals",
                self.x.len() - 1,
                self.p_raw.len() - 1
            )));
        }
        Ok(())
    }

    /// Observations per forecast knot interval.
    pub fn knot_stride(&self) -> usize {
        (self.x.len() - 1) / (self.p_raw.len() - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        let dt = self.dt();
        (0..self.x.len()).map(|i| i as f64 * dt).collect()
    }

    /// Raw forecast linearly interpolated onto the observation times.
    pub fn forecast_at_samples(&self) -> Vec<f64> {
        let stride = self.knot_stride();
        (0..self.x.len())
            .map(|i| {
                let k = (i / stride).min(self.p_raw.len() - 2);
                let w = (i - k * stride) as f64 / stride as f64;
                self.p_raw[k] * (1.0 - w) + self.p_raw[k + 1] * w
            })
            .collect()
    }
}

/// Piecewise-linear curve through the truncated forecast knots of `segment`.
pub fn build_curve(segment: &Segment, epsilon: f64) -> Result<ForecastCurve> {
    segment.validate()?;
    let stride = segment.knot_stride();
    let dt = segment.dt();
    // same arithmetic as the observation times so knots land exactly on samples
    let times = (0..segment.p_raw.len())
        .map(|k| (k * stride) as f64 * dt)
        .collect();
    ForecastCurve::new(times, segment.p_raw.clone(), epsilon)
}

/// Forecast errors `v_i = x_i - p(t_i)`.
pub fn compute_errors(segment: &Segment, curve: &ForecastCurve) -> Vec<f64> {
    let dt = segment.dt();
    segment
        .x
        .iter()
        .enumerate()
        .map(|(i, x)| x - curve.value(i as f64 * dt))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurtailmentConfig {
    pub plateau_len: usize,
    pub flat_tol: f64,
    pub gap_tol: f64,
}

impl Default for CurtailmentConfig {
    fn default() -> Self {
        CurtailmentConfig {
            plateau_len: 9,
            flat_tol: 0.005,
            gap_tol: 0.1,
        }
    }
}

/// True when some run of `plateau_len` consecutive observations stays within
/// `flat_tol` of itself while the forecast exceeds production by more than
/// `gap_tol` at every sample of the run.
pub fn detect_curtailment(segment: &Segment, cfg: &CurtailmentConfig) -> bool {
    let len = cfg.plateau_len.max(1);
    if segment.x.len() < len {
        return false;
    }
    let forecast = segment.forecast_at_samples();
    (0..=segment.x.len() - len).any(|i| {
        let xs = &segment.x[i..i + len];
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        hi - lo <= cfg.flat_tol
            && xs
                .iter()
                .zip(&forecast[i..i + len])
                .all(|(x, p)| p - x > cfg.gap_tol)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSet {
    pub role: Role,
    pub segments: Vec<Segment>,
}

impl SegmentSet {
    pub fn n_transitions(&self) -> usize {
        self.segments.iter().map(Segment::n_transitions).sum()
    }
}

/// Alternate segments in chronological order: even positions train, odd test.
pub fn split_train_test(mut segments: Vec<Segment>) -> Result<(SegmentSet, SegmentSet)> {
    if segments.len() < 2 {
        return Err(Error::Data(format!(
            "cannot split {} segment(s) into train and test sets",
            segments.len()
        )));
    }
    segments.sort_by_key(|s| s.start);
    let mut train = Vec::with_capacity(segments.len() / 2 + 1);
    let mut test = Vec::with_capacity(segments.len() / 2);
    for (i, s) in segments.into_iter().enumerate() {
        if i % 2 == 0 {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    Ok((
        SegmentSet {
            role: Role::Train,
            segments: train,
        },
        SegmentSet {
            role: Role::Test,
            segments: test,
        },
    ))
}

/// A segment with its truncated forecast curve and error series.
#[derive(Debug, Clone)]
pub struct PreparedSegment {
    pub id: String,
    pub provider: String,
    pub dt: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub curve: ForecastCurve,
}

impl PreparedSegment {
    pub fn new(segment: &Segment, epsilon: f64) -> Result<Self> {
        let curve = build_curve(segment, epsilon)?;
        let v = compute_errors(segment, &curve);
        Ok(PreparedSegment {
            id: segment.id.clone(),
            provider: segment.provider.clone(),
            dt: segment.dt(),
            x: segment.x.clone(),
            v,
            curve,
        })
    }

    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Truncated forecast at observation `i`.
    #[inline]
    pub fn forecast(&self, i: usize) -> f64 {
        self.x[i] - self.v[i]
    }
}

/// Calibration input: prepared segments sharing one truncation level.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub epsilon: f64,
    pub segments: Vec<PreparedSegment>,
}

impl PreparedSet {
    pub fn new(set: &SegmentSet, epsilon: f64) -> Result<Self> {
        Self::from_segments(&set.segments, epsilon)
    }

    pub fn from_segments(segments: &[Segment], epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        let segments = segments
            .iter()
            .map(|s| PreparedSegment::new(s, epsilon))
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedSet { epsilon, segments })
    }

    pub fn n_transitions(&self) -> usize {
        self.segments.iter().map(|s| s.x.len() - 1).sum()
    }

    /// Observation spacing of the first segment.
    pub fn dt(&self) -> Option<f64> {
        self.segments.first().map(|s| s.dt)
    }
}
