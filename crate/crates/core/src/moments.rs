//! Transition moments over one observation interval.
//!
//! In error space the first two raw moments obey a linear system driven by
//! the forecast; in Lamperti space the mean and variance come from the drift
//! linearized around the mean. The error system uses fixed-step RK4 and the
//! Lamperti system an adaptive step; both split at forecast knots so slope
//! discontinuities never fall inside a step.

use serde::{Deserialize, Serialize};

use crate::data::ForecastCurve;
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    /// RK4 steps per observation interval.
    pub substeps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { substeps: 20 }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::Config(
                "integrator substeps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Classical fixed-step fourth-order Runge-Kutta on `[t0, t1]`.
pub fn rk4_integrate<const D: usize, F>(
    mut f: F,
    y0: [f64; D],
    t0: f64,
    t1: f64,
    substeps: usize,
) -> Result<[f64; D]>
where
    F: FnMut(f64, &[f64; D]) -> [f64; D],
{
    if substeps == 0 {
        return Err(Error::Config("rk4 needs at least one step".into()));
    }
    let h = (t1 - t0) / substeps as f64;
    let mut y = y0;
    for step in 0..substeps {
        let t = t0 + step as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = f(t + h, &axpy(&y, h, &k3));
        for i in 0..D {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "rk4 state became non-finite at t = {}",
                t + h
            )));
        }
    }
    Ok(y)
}

#[inline]
fn axpy<const D: usize>(y: &[f64; D], a: f64, k: &[f64; D]) -> [f64; D] {
    let mut out = *y;
    for i in 0..D {
        out[i] += a * k[i];
    }
    out
}

/// Run `step` over each linear piece of `curve` inside `[t0, t1]`, giving each
/// piece a share of `substeps` proportional to its length (at least one).
fn integrate_piecewise<const D: usize, F>(
    curve: &ForecastCurve,
    t0: f64,
    t1: f64,
    substeps: usize,
    y0: [f64; D],
    mut rhs: F,
) -> Result<[f64; D]>
where
    F: FnMut(f64, f64, f64, &[f64; D]) -> [f64; D],
{
    let span = t1 - t0;
    let mut y = y0;
    for piece in curve.pieces(t0, t1) {
        let share = substeps as f64 * (piece.end - piece.start) / span;
        let n = (share - 1e-9).ceil().max(1.0) as usize;
        y = rk4_integrate(
            |t, y| rhs(piece.value(t), piece.slope, t, y),
            y,
            piece.start,
            piece.end,
            n,
        )?;
    }
    Ok(y)
}

/// First and second raw moments of the error at the end of an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentStateV {
    pub m1: f64,
    pub m2: f64,
}

impl MomentStateV {
    pub fn variance(&self) -> f64 {
        self.m2 - self.m1 * self.m1
    }
}

/// Integrate the error-moment system from `m1 = v0`, `m2 = v0^2` at `t0` to `t1`.
pub fn integrate_v_moments(
    v0: f64,
    t0: f64,
    t1: f64,
    curve: &ForecastCurve,
    params: &ModelParams,
    cfg: &IntegratorConfig,
) -> Result<MomentStateV> {
    let x0 = v0 + curve.value(t0);
    if !(x0 >= -1e-12 && x0 <= 1.0 + 1e-12) {
        return Err(Error::domain(
            "integrate_v_moments",
            format!("initial state v0 + p = {x0} outside [0, 1]"),
        ));
    }
    if !(t1 > t0) {
        return Err(Error::domain("integrate_v_moments", "empty interval"));
    }
    let c = params.product();
    let [m1, m2] = integrate_piecewise(
        curve,
        t0,
        t1,
        cfg.substeps,
        [v0, v0 * v0],
        |p, slope, _, y| {
            let theta = model::theta_at(params, p, slope);
            // forcing is zero under derivative tracking and -p' for the plain model
            let g = params.tracked_slope(slope) - slope;
            [
                -theta * y[0] + g,
                -2.0 * (theta + c) * y[1]
                    + 2.0 * (c * (1.0 - 2.0 * p) + g) * y[0]
                    + 2.0 * c * p * (1.0 - p),
            ]
        },
    )?;
    Ok(MomentStateV { m1, m2 })
}

/// Approximate mean and variance of the Lamperti process at the end of an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentStateZ {
    pub mu: f64,
    pub var: f64,
    /// The start was reflected into range or the guarded drift had to clamp
    /// the mean near a boundary.
    pub clamped: bool,
}

/// Integrate the linearized Lamperti moment system from `mu = z0`, `var = 0`.
///
/// A transition that starts at or next to a boundary is stiff for a short
/// while: the drift pushes the mean inward at a rate that diverges at the
/// boundary. An adaptive embedded Runge-Kutta step handles that phase with
/// tiny steps and then lengthens them; `cfg.substeps` only sets the first
/// trial step.
pub fn integrate_z_moments(
    z0: f64,
    t0: f64,
    t1: f64,
    curve: &ForecastCurve,
    params: &ModelParams,
    cfg: &IntegratorConfig,
) -> Result<MomentStateZ> {
    if !(t1 > t0) {
        return Err(Error::domain("integrate_z_moments", "empty interval"));
    }
    if !z0.is_finite() {
        return Err(Error::domain(
            "integrate_z_moments",
            "non-finite initial value",
        ));
    }
    // A start outside the range (data transformed at another product) is
    // reflected back in; the state x = cos^2 is unchanged by the reflection.
    let z_min = params.z_min();
    let mut start = z0;
    let mut clamped = false;
    for _ in 0..64 {
        if start > 0.0 {
            start = -start;
        } else if start < z_min {
            start = 2.0 * z_min - start;
        } else {
            break;
        }
        clamped = true;
    }
    let mut y = [start.clamp(z_min, 0.0), 0.0];
    let h0 = (t1 - t0) / cfg.substeps.max(1) as f64;
    for piece in curve.pieces(t0, t1) {
        y = adaptive_integrate(
            |t, y| {
                let d = model::drift_z_guarded(y[0], piece.value(t), piece.slope, params);
                clamped |= d.clamped;
                [d.value, 2.0 * d.slope * y[1] + 1.0]
            },
            y,
            piece.start,
            piece.end,
            h0.min(piece.end - piece.start),
        )?;
    }
    let [mu, var] = y;
    Ok(MomentStateZ {
        mu,
        var: var.max(0.0),
        clamped: clamped || var < 0.0,
    })
}

const ADAPTIVE_RTOL: f64 = 1e-9;
const ADAPTIVE_ATOL: f64 = 1e-12;
const ADAPTIVE_MAX_STEPS: usize = 100_000;

/// Dormand-Prince 5(4) with standard step-size control.
pub fn adaptive_integrate<const D: usize, F>(
    mut f: F,
    y0: [f64; D],
    t0: f64,
    t1: f64,
    h0: f64,
) -> Result<[f64; D]>
where
    F: FnMut(f64, &[f64; D]) -> [f64; D],
{
    const C2: f64 = 1.0 / 5.0;
    const C3: f64 = 3.0 / 10.0;
    const C4: f64 = 4.0 / 5.0;
    const C5: f64 = 8.0 / 9.0;
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    // differences between the fifth- and fourth-order weights
    const E1: f64 = 71.0 / 57600.0;
    const E3: f64 = -71.0 / 16695.0;
    const E4: f64 = 71.0 / 1920.0;
    const E5: f64 = -17253.0 / 339200.0;
    const E6: f64 = 22.0 / 525.0;
    const E7: f64 = -1.0 / 40.0;

    let span = t1 - t0;
    if !(span > 0.0) {
        return Ok(y0);
    }
    let mut t = t0;
    let mut y = y0;
    let mut h = h0.clamp(span * 1e-14, span);
    let mut k1 = f(t, &y);
    for _ in 0..ADAPTIVE_MAX_STEPS {
        let last = t + h >= t1 - 1e-15 * span.max(t1.abs());
        if last {
            h = t1 - t;
        }
        let stage = |coef: &[(f64, &[f64; D])]| {
            let mut out = y;
            for i in 0..D {
                for (a, k) in coef {
                    out[i] += h * a * k[i];
                }
            }
            out
        };
        let k2 = f(t + C2 * h, &stage(&[(A21, &k1)]));
        let k3 = f(t + C3 * h, &stage(&[(A31, &k1), (A32, &k2)]));
        let k4 = f(t + C4 * h, &stage(&[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(
            t + C5 * h,
            &stage(&[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + h,
            &stage(&[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        );
        let y_new = stage(&[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
        let k7 = f(t + h, &y_new);
        let mut err = 0.0f64;
        for i in 0..D {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = ADAPTIVE_ATOL + ADAPTIVE_RTOL * y[i].abs().max(y_new[i].abs());
            err = err.max((e / scale).abs());
        }
        if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
            h *= 0.1;
            if h < span * 1e-300 {
                break;
            }
            continue;
        }
        if err <= 1.0 {
            t += h;
            y = y_new;
            k1 = k7;
            if last {
                return Ok(y);
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    Err(Error::Numerical(format!(
        "adaptive integration stalled at t = {t} on [{t0}, {t1}]"
    )))
}
