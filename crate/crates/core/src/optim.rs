//! Derivative-free minimizers: Nelder-Mead and golden-section search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stand-in for objective values that are not finite.
pub const PENALTY: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Offset of the initial simplex vertices from the start point, per coordinate.
    pub init_scale: f64,
    /// Simplex diameter below which to stop (together with `f_tol`).
    pub x_tol: f64,
    /// Relative spread of simplex values below which to stop (together with `x_tol`).
    pub f_tol: f64,
    pub max_evals: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            init_scale: 0.1,
            x_tol: 1e-6,
            f_tol: 1e-8,
            max_evals: 2000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.init_scale) && ok(self.x_tol) && ok(self.f_tol)) || self.max_evals == 0 {
            return Err(Error::Config(
                "optimizer scale, tolerances and evaluation budget must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Simplex diameter and value spread are both below tolerance.
    Tolerance,
    MaxEvaluations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    pub reason: StopReason,
}

impl NelderMeadResult {
    pub fn converged(&self) -> bool {
        self.reason != StopReason::MaxEvaluations
    }
}

/// Optional box constraints; candidate points are projected onto the box.
#[derive(Debug, Clone, Default)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Self {
        Bounds {
            lower: vec![lower; dim],
            upper: vec![upper; dim],
        }
    }

    fn project(&self, x: &mut [f64]) {
        for (i, xi) in x.iter_mut().enumerate() {
            if let Some(&lo) = self.lower.get(i) {
                *xi = xi.max(lo);
            }
            if let Some(&hi) = self.upper.get(i) {
                *xi = xi.min(hi);
            }
        }
    }
}

/// Minimize `objective` with the standard Nelder-Mead simplex method
/// (reflection 1, expansion 2, contraction 1/2, shrink 1/2).
pub fn nelder_mead<F>(
    mut objective: F,
    x0: &[f64],
    bounds: Option<&Bounds>,
    cfg: &OptimizerConfig,
) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    let n = x0.len();
    if n == 0 {
        return Err(Error::domain("nelder_mead", "empty start point"));
    }
    let default_bounds = Bounds::default();
    let bounds = bounds.unwrap_or(&default_bounds);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = objective(x);
        if v.is_finite() {
            v
        } else {
            PENALTY
        }
    };

    let mut start = x0.to_vec();
    bounds.project(&mut start);
    let f0 = eval(&start, &mut evals);
    if f0 >= PENALTY {
        return Err(Error::Numerical(
            "objective is not finite at the start point".into(),
        ));
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(start.clone(), f0)];
    for i in 0..n {
        let mut v = start.clone();
        v[i] += cfg.init_scale;
        bounds.project(&mut v);
        if v[i] == start[i] {
            v[i] -= cfg.init_scale;
            bounds.project(&mut v);
        }
        let fv = eval(&v, &mut evals);
        simplex.push((v, fv));
    }

    let reason = loop {
        // stable sort keeps the earlier vertex first on ties
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[n].1;
        // Both tests must pass: a simplex straddling the minimum symmetrically
        // has no value spread while still being wide.
        let flat = f_worst - f_best <= cfg.f_tol * f_best.abs().max(f64::MIN_POSITIVE);
        let diameter = simplex[1..]
            .iter()
            .map(|(v, _)| max_abs_diff(v, &simplex[0].0))
            .fold(0.0, f64::max);
        if flat && diameter < cfg.x_tol {
            break StopReason::Tolerance;
        }
        if evals >= cfg.max_evals {
            break StopReason::MaxEvaluations;
        }

        let mut centroid = vec![0.0; n];
        for (v, _) in &simplex[..n] {
            for (c, vi) in centroid.iter_mut().zip(v) {
                *c += vi / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let along = |t: f64| {
            let mut p: Vec<f64> = centroid
                .iter()
                .zip(&worst)
                .map(|(c, w)| c + t * (c - w))
                .collect();
            bounds.project(&mut p);
            p
        };

        let xr = along(1.0);
        let fr = eval(&xr, &mut evals);
        if fr < f_best {
            let xe = along(2.0);
            let fe = eval(&xe, &mut evals);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        let (xc, fc, accept) = if fr < f_worst {
            let xc = along(0.5);
            let fc = eval(&xc, &mut evals);
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = along(-0.5);
            let fc = eval(&xc, &mut evals);
            let ok = fc < f_worst;
            (xc, fc, ok)
        };
        if accept {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut p: Vec<f64> = best
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| b + 0.5 * (v - b))
                .collect();
            bounds.project(&mut p);
            let fp = eval(&p, &mut evals);
            *vertex = (p, fp);
        }
    };
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Ok(NelderMeadResult {
        x,
        f,
        evaluations: evals,
        reason,
    })
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarMin {
    pub x: f64,
    pub f: f64,
    pub evaluations: usize,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for a minimum of a unimodal function on `[a, b]`,
/// stopping when the bracket is shorter than `tol`.
pub fn golden_section<F>(mut f: F, a: f64, b: f64, tol: f64) -> Result<ScalarMin>
where
    F: FnMut(f64) -> f64,
{
    if !(a.is_finite() && b.is_finite() && a < b) || !(tol > 0.0) {
        return Err(Error::domain(
            "golden_section",
            format!("bad bracket [{a}, {b}] or tolerance {tol}"),
        ));
    }
    let mut g = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            PENALTY
        }
    };
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = g(x1);
    let mut f2 = g(x2);
    let mut evals = 2;
    while hi - lo > tol && evals < 500 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = g(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = g(x2);
        }
        evals += 1;
    }
    let (x, f) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    Ok(ScalarMin {
        x,
        f,
        evaluations: evals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_one_dimension() {
        let r = nelder_mead(
            |x| (x[0] - 3.0).powi(2),
            &[0.0],
            None,
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-6, "{:?}", r);
        assert!(r.converged());
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let cfg = OptimizerConfig {
            init_scale: 0.5,
            x_tol: 1e-8,
            f_tol: 1e-14,
            max_evals: 500,
        };
        let r = nelder_mead(f, &[-1.2, 1.0], None, &cfg).unwrap();
        assert!(
            (r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4,
            "{:?}",
            r
        );
        assert!(r.evaluations <= 500);
    }

    #[test]
    fn constant_objective_returns_start() {
        let r = nelder_mead(|_| 7.0, &[1.0, 2.0], None, &OptimizerConfig::default()).unwrap();
        assert_eq!(r.x, vec![1.0, 2.0]);
        assert_eq!(r.reason, StopReason::Tolerance);
    }

    #[test]
    fn respects_bounds_and_penalizes_nan() {
        let bounds = Bounds::uniform(1, 1.0, 10.0);
        let r = nelder_mead(
            |x| x[0] * x[0],
            &[5.0],
            Some(&bounds),
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        let r = nelder_mead(
            |x| {
                if x[0] < 0.0 {
                    f64::NAN
                } else {
                    (x[0] - 0.5).powi(2)
                }
            },
            &[2.0],
            None,
            &OptimizerConfig::default(),
        )
        .unwrap();
        assert!((r.x[0] - 0.5).abs() < 1e-5);
        assert!(nelder_mead(|_| f64::NAN, &[0.0], None, &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn reports_budget_exhaustion() {
        let cfg = OptimizerConfig {
            max_evals: 10,
            ..Default::default()
        };
        let f = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let r = nelder_mead(f, &[-1.2, 1.0], None, &cfg).unwrap();
        assert!(!r.converged());
    }

    #[test]
    fn golden_section_finds_minimum() {
        let r = golden_section(|x| (x - 0.3).powi(2) + 1.0, -1.0, 2.0, 1e-9).unwrap();
        // a flat minimum is only resolvable to about sqrt(machine epsilon)
        assert!((r.x - 0.3).abs() < 1e-7);
        let r = golden_section(|x| x, 0.0, 1.0, 1e-9).unwrap();
        assert!(r.x < 1e-8);
        assert!(golden_section(|x| x, 1.0, 0.0, 1e-9).is_err());
    }
}
