//! Model definitions for the normalized forecast process.
//!
//! `X_t` is the normalized observation, `p_t` the (truncated) forecast and
//! `V_t = X_t - p_t` the forecast error. Two drifts share one Jacobi-type
//! diffusion `sqrt(2 alpha theta0 X (1 - X))`:
//!
//! * [`ModelKind::Plain`]: `dX = -theta0 (X - p) dt + ...` (no derivative tracking).
//! * [`ModelKind::DerivativeTracking`]: `dX = (p' - theta_t (X - p)) dt + ...`,
//!   whose mean follows the forecast exactly.
//!
//! The Lamperti transform `z = -sqrt(2 / (alpha theta0)) asin(sqrt(1 - x))` maps the
//! state to a process with unit diffusion. It depends on the state only through
//! `x = v + p`, so the `z` range is `[-pi / sqrt(2 alpha theta0), 0]`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::ForecastCurve;
use crate::error::{Error, Result};

/// Slack for floating point noise when checking `v + p` against `[0, 1]`.
const STATE_TOL: f64 = 1e-12;

/// Relative distance kept from the `z` boundaries by the guarded drift.
pub const Z_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Constant mean reversion toward the forecast, no derivative tracking.
    Plain,
    /// Derivative tracking with a time-varying mean-reversion rate.
    #[default]
    DerivativeTracking,
}

impl ModelKind {
    /// The numbering used in reports: 1 = plain, 2 = derivative tracking.
    pub fn number(self) -> u8 {
        match self {
            ModelKind::Plain => 1,
            ModelKind::DerivativeTracking => 2,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(ModelKind::Plain),
            2 => Ok(ModelKind::DerivativeTracking),
            _ => Err(Error::Config(format!(
                "unknown model number {n} (expected 1 or 2)"
            ))),
        }
    }
}

/// How the derivative-tracking model turns `(theta0, alpha, p, p')` into `theta_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaSchedule {
    /// `max(theta0, (alpha theta0 + |p'|) / min(p, 1 - p))`, which always
    /// satisfies the boundary non-attainment condition.
    #[default]
    Applied,
    /// `theta_t = theta0`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub theta0: f64,
    pub alpha: f64,
    pub kind: ModelKind,
    #[serde(default)]
    pub schedule: ThetaSchedule,
}

impl ModelParams {
    pub fn new(theta0: f64, alpha: f64, kind: ModelKind) -> Result<Self> {
        let params = ModelParams {
            theta0,
            alpha,
            kind,
            schedule: ThetaSchedule::Applied,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn tracking(theta0: f64, alpha: f64) -> Result<Self> {
        Self::new(theta0, alpha, ModelKind::DerivativeTracking)
    }

    pub fn plain(theta0: f64, alpha: f64) -> Result<Self> {
        Self::new(theta0, alpha, ModelKind::Plain)
    }

    pub fn with_schedule(mut self, schedule: ThetaSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta0.is_finite() && self.theta0 > 0.0) {
            return Err(Error::InvalidParameter {
                name: "theta0",
                value: self.theta0,
                reason: "must be positive and finite",
            });
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                value: self.alpha,
                reason: "must be positive and finite",
            });
        }
        Ok(())
    }

    /// The diffusion variability coefficient `theta0 * alpha`.
    pub fn product(&self) -> f64 {
        self.theta0 * self.alpha
    }

    /// Lower end of the Lamperti-space range.
    pub fn z_min(&self) -> f64 {
        -PI / (2.0 * self.product()).sqrt()
    }

    /// Forecast slope as it enters the drift of `X`: `p'` when tracking, zero otherwise.
    pub(crate) fn tracked_slope(&self, p_dot: f64) -> f64 {
        match self.kind {
            ModelKind::Plain => 0.0,
            ModelKind::DerivativeTracking => p_dot,
        }
    }
}

/// Model parameters plus the early-transition offset `delta` (model time units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtendedParams {
    pub base: ModelParams,
    pub delta: f64,
}

impl ExtendedParams {
    pub fn new(base: ModelParams, delta: f64) -> Result<Self> {
        base.validate()?;
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::InvalidParameter {
                name: "delta",
                value: delta,
                reason: "must be positive and finite",
            });
        }
        Ok(ExtendedParams { base, delta })
    }
}

/// Mean-reversion rate without input checks; `p` must lie in `(0, 1)`.
#[inline]
pub(crate) fn theta_at(params: &ModelParams, p: f64, p_dot: f64) -> f64 {
    match (params.kind, params.schedule) {
        (ModelKind::Plain, _) | (_, ThetaSchedule::Constant) => params.theta0,
        (ModelKind::DerivativeTracking, ThetaSchedule::Applied) => {
            let bound = (params.product() + p_dot.abs()) / p.min(1.0 - p);
            params.theta0.max(bound)
        }
    }
}

/// Time-varying mean-reversion rate at forecast value `p` and slope `p_dot`.
pub fn theta_t(params: &ModelParams, p: f64, p_dot: f64) -> Result<f64> {
    if params.kind == ModelKind::Plain {
        return Ok(params.theta0);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(
            "theta_t",
            format!("forecast value {p} not in (0, 1)"),
        ));
    }
    if !p_dot.is_finite() {
        return Err(Error::domain(
            "theta_t",
            "forecast derivative is not finite",
        ));
    }
    Ok(theta_at(params, p, p_dot))
}

/// Drift of the forecast error `V`.
///
/// Derivative tracking gives `-theta_t v`. The plain model has `X` drift
/// `-theta0 (X - p)`, so in error coordinates it picks up `-p'`.
pub fn drift_v(v: f64, p: f64, p_dot: f64, params: &ModelParams) -> Result<f64> {
    if !(v.is_finite() && p.is_finite() && p_dot.is_finite()) {
        return Err(Error::domain("drift_v", "non-finite input"));
    }
    let theta = theta_t(params, p, p_dot)?;
    Ok(params.tracked_slope(p_dot) - p_dot - theta * v)
}

/// Diffusion coefficient `sqrt(2 alpha theta0 (v + p)(1 - v - p))`.
pub fn diffusion_v(v: f64, p: f64, params: &ModelParams) -> Result<f64> {
    let x = state_in_unit(v + p, "diffusion_v")?;
    Ok((2.0 * params.product() * x * (1.0 - x)).sqrt())
}

fn state_in_unit(x: f64, op: &'static str) -> Result<f64> {
    if x.is_nan() || x < -STATE_TOL || x > 1.0 + STATE_TOL {
        return Err(Error::domain(
            op,
            format!("state v + p = {x} outside [0, 1]"),
        ));
    }
    Ok(x.clamp(0.0, 1.0))
}

/// Lamperti transform of an error value.
pub fn lamperti_forward(v: f64, p: f64, params: &ModelParams) -> Result<f64> {
    let x = state_in_unit(v + p, "lamperti_forward")?;
    Ok(z_of_state(x, params.product()))
}

#[inline]
pub(crate) fn z_of_state(x: f64, product: f64) -> f64 {
    -(2.0 / product).sqrt() * (1.0 - x).max(0.0).sqrt().asin()
}

/// Normalized state `x = v + p` for a Lamperti value; defined for any real `z`
/// and always inside `[0, 1]`.
#[inline]
pub(crate) fn state_of_z(z: f64, product: f64) -> f64 {
    let c = ((0.5 * product).sqrt() * z).cos();
    c * c
}

/// Inverse Lamperti transform: the error value for `z` at forecast value `p`.
pub fn lamperti_inverse(z: f64, p: f64, params: &ModelParams) -> Result<f64> {
    let z_min = params.z_min();
    let slack = STATE_TOL * z_min.abs();
    if z.is_nan() || z > slack || z < z_min - slack {
        return Err(Error::domain(
            "lamperti_inverse",
            format!("z = {z} outside [{z_min}, 0]"),
        ));
    }
    Ok(state_of_z(z, params.product()) - p)
}

/// Drift and its `z`-derivative at one point, with the guard status.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZDrift {
    pub value: f64,
    pub slope: f64,
    /// `z` was moved inside the guard band before evaluation.
    pub clamped: bool,
}

/// Drift of the Lamperti-transformed process.
///
/// Fails with [`Error::Singular`] at either end of the `z` range where the
/// drift has a pole.
pub fn drift_z(z: f64, p: f64, p_dot: f64, params: &ModelParams) -> Result<f64> {
    let s = checked_angle(z, params, "drift_z")?;
    let theta = theta_at(params, p, p_dot);
    Ok(z_drift_at_angle(s, p, p_dot, theta, params).0)
}

/// Derivative of [`drift_z`] with respect to `z`.
pub fn drift_z_prime(z: f64, p: f64, p_dot: f64, params: &ModelParams) -> Result<f64> {
    let s = checked_angle(z, params, "drift_z_prime")?;
    let theta = theta_at(params, p, p_dot);
    Ok(z_drift_at_angle(s, p, p_dot, theta, params).1)
}

/// The same drift written before substituting the inverse transform, as a
/// function of the error value `v`.
pub fn drift_z_untransformed(v: f64, p: f64, p_dot: f64, params: &ModelParams) -> Result<f64> {
    let x = state_in_unit(v + p, "drift_z_untransformed")?;
    if x <= 0.0 || x >= 1.0 {
        return Err(Error::domain(
            "drift_z_untransformed",
            "state on the boundary",
        ));
    }
    let c = params.product();
    let theta = theta_t(params, p, p_dot)?;
    let spread = (x * (1.0 - x)).sqrt();
    let b = (2.0 * c).sqrt() * spread;
    Ok((params.tracked_slope(p_dot) - theta * v) / b
        - 0.25 * (2.0 * c).sqrt() * (1.0 - 2.0 * x) / spread)
}

/// Guarded drift and slope used inside integrators and simulators: `z` is
/// clamped into `[z_min + eta, -eta]` with `eta = Z_GUARD * |z_min|`.
#[inline]
pub fn drift_z_guarded(z: f64, p: f64, p_dot: f64, params: &ModelParams) -> ZDrift {
    let z_min = params.z_min();
    let eta = Z_GUARD * z_min.abs();
    let zc = z.clamp(z_min + eta, -eta);
    let clamped = zc != z;
    let s = -(2.0 * params.product()).sqrt() * zc;
    let theta = theta_at(params, p, p_dot);
    let (value, slope) = z_drift_at_angle(s, p, p_dot, theta, params);
    ZDrift {
        value,
        slope,
        clamped,
    }
}

fn checked_angle(z: f64, params: &ModelParams, op: &'static str) -> Result<f64> {
    let z_min = params.z_min();
    let slack = STATE_TOL * z_min.abs();
    if z.is_nan() || z > slack || z < z_min - slack {
        return Err(Error::domain(op, format!("z = {z} outside [{z_min}, 0]")));
    }
    let s = -(2.0 * params.product()).sqrt() * z;
    if z >= 0.0 || z <= z_min || s.sin() <= 0.0 {
        return Err(Error::Singular { z, z_min });
    }
    Ok(s)
}

/// Drift and slope in terms of the angle `s = -sqrt(2 alpha theta0) z` in `(0, pi)`.
#[inline]
fn z_drift_at_angle(s: f64, p: f64, p_dot: f64, theta: f64, params: &ModelParams) -> (f64, f64) {
    let c = params.product();
    let (sin_s, cos_s) = s.sin_cos();
    let a = 2.0 * params.tracked_slope(p_dot) - theta * (1.0 - 2.0 * p);
    let value = (a + (c - theta) * cos_s) / ((2.0 * c).sqrt() * sin_s);
    let slope = ((c - theta) + a * cos_s) / (sin_s * sin_s);
    (value, slope)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    /// `0 <= p' + theta_t p <= theta_t` (existence, uniqueness, `[0, 1]` state space).
    A,
    /// `theta_t >= max((alpha theta0 + p') / (1 - p), (alpha theta0 - p') / p)`
    /// (boundaries never attained).
    B,
}

/// One failed inequality `lhs <= rhs` at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub condition: Condition,
    pub time: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub condition_a_ok: bool,
    pub condition_b_ok: bool,
    pub violations: Vec<Violation>,
}

/// Evaluate conditions (A) and (B) on `grid`. At forecast knots both one-sided
/// slopes are checked.
///
/// For the plain model the drift of `X` carries no `p'` term, so the
/// conditions are evaluated with a zero slope.
pub fn check_conditions(
    curve: &ForecastCurve,
    params: &ModelParams,
    grid: &[f64],
) -> ValidityReport {
    let c = params.product();
    let mut violations = Vec::new();
    for &t in grid {
        let p = curve.value(t);
        for p_dot in curve.slopes_at(t) {
            let theta = theta_at(params, p, p_dot);
            let slope = params.tracked_slope(p_dot);
            let drift_at_zero = slope + theta * p;
            let mut fail = |condition, lhs: f64, rhs: f64| {
                if lhs > rhs + 1e-12 * rhs.abs().max(1.0) {
                    violations.push(Violation {
                        condition,
                        time: t,
                        lhs,
                        rhs,
                    });
                }
            };
            fail(Condition::A, 0.0, drift_at_zero);
            fail(Condition::A, drift_at_zero, theta);
            let bound = ((c + slope) / (1.0 - p)).max((c - slope) / p);
            fail(Condition::B, bound, theta);
        }
    }
    ValidityReport {
        condition_a_ok: !violations.iter().any(|v| v.condition == Condition::A),
        condition_b_ok: !violations.iter().any(|v| v.condition == Condition::B),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(theta0: f64, alpha: f64) -> ModelParams {
        ModelParams::tracking(theta0, alpha).unwrap()
    }

    #[test]
    fn theta_t_examples() {
        assert_eq!(theta_t(&params(1.0, 0.1), 0.5, 0.0).unwrap(), 1.0);
        assert!((theta_t(&params(1.0, 0.1), 0.05, 0.0).unwrap() - 2.0).abs() < 1e-12);
        // alpha = 0 bypasses the constructor but is still a defined limit.
        let degenerate = ModelParams {
            theta0: 2.0,
            alpha: 0.0,
            kind: ModelKind::DerivativeTracking,
            schedule: ThetaSchedule::Applied,
        };
        assert_eq!(theta_t(&degenerate, 0.5, 0.0).unwrap(), 2.0);
    }

    #[test]
    fn theta_t_rejects_forecast_outside_unit_interval() {
        assert!(theta_t(&params(1.0, 0.1), 0.0, 0.0).is_err());
        assert!(theta_t(&params(1.0, 0.1), 1.0, 0.0).is_err());
        let plain = ModelParams::plain(1.5, 0.1).unwrap();
        assert_eq!(theta_t(&plain, 1.0, 3.0).unwrap(), 1.5);
    }

    #[test]
    fn constructor_rejects_nonpositive() {
        assert!(ModelParams::tracking(0.0, 0.1).is_err());
        assert!(ModelParams::tracking(1.0, -0.1).is_err());
        assert!(ExtendedParams::new(params(1.0, 0.1), 0.0).is_err());
    }

    #[test]
    fn drift_v_examples() {
        let p = params(1.0, 0.1);
        assert_eq!(drift_v(0.0, 0.3, 0.7, &p).unwrap(), 0.0);
        // theta_t = 2 at p = 0.05, p' = 0
        assert!((drift_v(0.1, 0.05, 0.0, &p).unwrap() + 0.2).abs() < 1e-12);
        let plain = ModelParams::plain(1.5, 0.1).unwrap();
        assert!((drift_v(-0.1, 0.4, 0.0, &plain).unwrap() - 0.15).abs() < 1e-12);
        // the plain model lags a moving forecast
        assert!((drift_v(0.0, 0.4, 0.5, &plain).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn diffusion_examples() {
        let p = params(2.0, 1.0);
        assert_eq!(diffusion_v(-0.5, 0.5, &p).unwrap(), 0.0);
        assert_eq!(diffusion_v(0.5, 0.5, &p).unwrap(), 0.0);
        assert!((diffusion_v(0.0, 0.5, &p).unwrap() - 1.0).abs() < 1e-15);
        let a = diffusion_v(0.0, 0.3, &p).unwrap();
        let b = diffusion_v(0.0, 0.7, &p).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(diffusion_v(0.2, 0.9, &p).is_err());
    }

    #[test]
    fn lamperti_examples() {
        let p = params(2.0, 1.0);
        assert_eq!(lamperti_forward(0.5, 0.5, &p).unwrap(), 0.0);
        let z = lamperti_forward(0.0, 0.5, &p).unwrap();
        assert!((z + PI / 4.0).abs() < 1e-12);
        let z0 = lamperti_forward(-0.5, 0.5, &p).unwrap();
        assert!((z0 + PI / 2.0).abs() < 1e-12);
        assert!((z0 - p.z_min()).abs() < 1e-12);
        assert_eq!(lamperti_inverse(0.0, 0.3, &p).unwrap(), 0.7);
        assert!(lamperti_inverse(-PI / 4.0, 0.5, &p).unwrap().abs() < 1e-12);
        assert!(lamperti_inverse(0.1, 0.5, &p).is_err());
        assert!(lamperti_forward(0.6, 0.5, &p).is_err());
    }

    #[test]
    fn lamperti_forward_is_increasing_in_v() {
        let p = params(1.3, 0.2);
        let zs: Vec<f64> = (0..=20)
            .map(|i| lamperti_forward(-0.4 + 0.05 * i as f64, 0.4, &p).unwrap())
            .collect();
        assert!(zs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn drift_z_symmetric_stationary_point() {
        // theta_t = alpha theta0 with p = 1/2 and p' = 0: both numerator terms vanish.
        let p = params(2.0, 1.0).with_schedule(ThetaSchedule::Constant);
        let mid = p.z_min() / 2.0;
        assert!(drift_z(mid, 0.5, 0.0, &p).unwrap().abs() < 1e-14);
        for z in [-0.3, -1.0, -1.5] {
            assert!(drift_z_prime(z, 0.5, 0.0, &p).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn drift_z_prime_negative_under_strong_reversion() {
        let p = ModelParams {
            theta0: 3.0,
            alpha: 0.1,
            kind: ModelKind::DerivativeTracking,
            schedule: ThetaSchedule::Constant,
        };
        let mid = p.z_min() / 2.0;
        assert!(drift_z_prime(mid, 0.5, 0.0, &p).unwrap() < 0.0);
    }

    #[test]
    fn drift_z_forms_agree_at_hand_point() {
        // p = 0.5, p' = 0, alpha theta0 = 2, theta_t = 1, z = -pi/4 (x = 1/2)
        let p = ModelParams {
            theta0: 1.0,
            alpha: 2.0,
            kind: ModelKind::DerivativeTracking,
            schedule: ThetaSchedule::Constant,
        };
        let a = drift_z(-PI / 4.0, 0.5, 0.0, &p).unwrap();
        let b = drift_z_untransformed(0.0, 0.5, 0.0, &p).unwrap();
        // cos(pi/2) = 0 and 1 - 2p = 0, so both forms vanish.
        assert!(a.abs() < 1e-15 && b.abs() < 1e-15);
    }

    #[test]
    fn drift_z_singular_at_boundaries() {
        let p = params(1.0, 0.5);
        assert!(matches!(
            drift_z(0.0, 0.5, 0.0, &p),
            Err(Error::Singular { .. })
        ));
        assert!(matches!(
            drift_z(p.z_min(), 0.5, 0.0, &p),
            Err(Error::Singular { .. })
        ));
        let guarded = drift_z_guarded(0.0, 0.5, 0.0, &p);
        assert!(guarded.clamped && guarded.value.is_finite());
        assert!(!drift_z_guarded(p.z_min() / 2.0, 0.5, 0.0, &p).clamped);
    }

    #[test]
    fn conditions_on_constant_midrange_forecast() {
        let curve = ForecastCurve::new(vec![0.0, 1.0], vec![0.5, 0.5], 0.02).unwrap();
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let report = check_conditions(&curve, &params(1.0, 0.1), &grid);
        assert!(report.condition_a_ok && report.condition_b_ok);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn condition_b_violation_reported() {
        // p = 0.1 with slope -0.5; theta_t = theta0 = 1 gives bound (0.1 + 0.5) / 0.1 = 6.
        let curve = ForecastCurve::new(vec![0.0, 0.1], vec![0.1, 0.05], 0.02).unwrap();
        let p = params(1.0, 0.1).with_schedule(ThetaSchedule::Constant);
        let report = check_conditions(&curve, &p, &[0.0]);
        assert!(!report.condition_b_ok);
        let v = report
            .violations
            .iter()
            .find(|v| v.condition == Condition::B)
            .unwrap();
        assert_eq!(v.time, 0.0);
        assert!((v.lhs - 6.0).abs() < 1e-12);
        assert_eq!(v.rhs, 1.0);
    }
}
