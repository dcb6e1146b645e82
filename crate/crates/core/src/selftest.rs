//! Built-in acceptance checks on synthetic fixtures.
//!
//! Each check compares the library against an independent oracle (closed
//! forms, quadrature, Monte Carlo or parameter recovery) and reports a
//! pass/fail line.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::calibrate::{
    fit_delta, fit_v_space, fit_v_space_from, fit_z_space_fixed_point, initial_guess,
    CalibrationConfig, CalibrationResult, VProxy,
};
use crate::data::{ForecastCurve, PreparedSet};
use crate::error::{Error, Result};
use crate::likelihood::{beta_transition_logpdf, matched_beta_shapes, BetaShapes};
use crate::model::{
    drift_z, drift_z_guarded, drift_z_prime, drift_z_untransformed, lamperti_forward,
    lamperti_inverse, ModelKind, ModelParams,
};
use crate::moments::{integrate_v_moments, integrate_z_moments, IntegratorConfig};
use crate::simulate::{
    empirical_bands, path_rng, simulate_path, simulate_paths, InitialCondition, SimConfig,
};
use crate::synth::{random_forecast, synthetic_prepared, SynthConfig};

pub struct Check {
    pub name: &'static str,
    run: fn() -> Result<(bool, String)>,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {} ({:.1} s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            self.detail
        )
    }
}

pub fn checks() -> Vec<Check> {
    vec![
        Check {
            name: "lamperti_round_trip",
            run: lamperti_round_trip,
        },
        Check {
            name: "drift_dual_form",
            run: drift_dual_form,
        },
        Check {
            name: "moment_ode",
            run: moment_ode,
        },
        Check {
            name: "mean_tracking",
            run: mean_tracking,
        },
        Check {
            name: "boundedness",
            run: boundedness,
        },
        Check {
            name: "beta_matching",
            run: beta_matching,
        },
        Check {
            name: "parameter_recovery_v",
            run: recovery_v,
        },
        Check {
            name: "parameter_recovery_z",
            run: recovery_z,
        },
        Check {
            name: "v_z_agreement",
            run: v_z_agreement,
        },
        Check {
            name: "ridge",
            run: ridge,
        },
        Check {
            name: "model_selection",
            run: model_selection,
        },
        Check {
            name: "delta_behavior",
            run: delta_behavior,
        },
        Check {
            name: "band_coverage",
            run: band_coverage,
        },
        Check {
            name: "reproducibility",
            run: reproducibility,
        },
    ]
}

pub fn run_check(check: &Check) -> CheckOutcome {
    let start = Instant::now();
    let (passed, detail) = match (check.run)() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        name: check.name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_named(name: &str) -> Option<CheckOutcome> {
    checks().iter().find(|c| c.name == name).map(run_check)
}

const DT: f64 = 1.0 / 144.0;
const TRUE_THETA0: f64 = 1.9;
const TRUE_ALPHA: f64 = 0.05;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_params(rng: &mut ChaCha8Rng, kind: ModelKind) -> Result<ModelParams> {
    ModelParams::new(uniform(rng, 0.5, 4.0), uniform(rng, 0.01, 0.2), kind)
}

/// Mean and standard error of the mean.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn lamperti_round_trip() -> Result<(bool, String)> {
    let mut r = rng(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let kind = if r.random::<bool>() {
            ModelKind::DerivativeTracking
        } else {
            ModelKind::Plain
        };
        let params = random_params(&mut r, kind)?;
        let p = uniform(&mut r, 0.02, 0.98);
        let v = r.random::<f64>() - p;
        let z = lamperti_forward(v, p, &params)?;
        let back = lamperti_inverse(z, p, &params)?;
        worst = worst.max((back - v).abs());
    }
    Ok((
        worst <= 1e-12,
        format!("10000 tuples, max |inverse(forward(v)) - v| = {worst:.2e} (tol 1e-12)"),
    ))
}

fn drift_dual_form() -> Result<(bool, String)> {
    let mut r = rng(2);
    let mut worst_form = 0.0f64;
    let mut worst_fd = 0.0f64;
    let h = 1e-5;
    for _ in 0..1000 {
        let params = random_params(&mut r, ModelKind::DerivativeTracking)?;
        let p = uniform(&mut r, 0.05, 0.95);
        let p_dot = uniform(&mut r, -2.0, 2.0);
        let x = uniform(&mut r, 0.02, 0.98);
        let v = x - p;
        let z = lamperti_forward(v, p, &params)?;
        let a = drift_z(z, p, p_dot, &params)?;
        let b = drift_z_untransformed(v, p, p_dot, &params)?;
        worst_form = worst_form.max((a - b).abs() / a.abs().max(1.0));
        let fd =
            (drift_z(z + h, p, p_dot, &params)? - drift_z(z - h, p, p_dot, &params)?) / (2.0 * h);
        let exact = drift_z_prime(z, p, p_dot, &params)?;
        // excess over the allowed 1e-5 relative + 1e-8 absolute error
        worst_fd = worst_fd.max((exact - fd).abs() / (1e-5 * exact.abs() + 1e-8));
    }
    let passed = worst_form <= 1e-10 && worst_fd <= 1.0;
    Ok((
        passed,
        format!(
            "1000 points: max scaled gap between drift forms {worst_form:.2e} (tol 1e-10); \
             derivative vs central difference uses {:.1}% of tolerance",
            100.0 * worst_fd
        ),
    ))
}

/// Closed-form error moments for constant `theta`, constant forecast `p`
/// and no forecast slope.
fn closed_form_v_moments(v0: f64, theta: f64, c: f64, p: f64, t: f64) -> (f64, f64) {
    let m1 = v0 * (-theta * t).exp();
    let lambda = 2.0 * (theta + c);
    let b = 2.0 * c * (1.0 - 2.0 * p);
    let s = 2.0 * c * p * (1.0 - p);
    let k = b * v0 / (lambda - theta);
    let m2_inf = s / lambda;
    let m2 = m2_inf + (v0 * v0 - m2_inf - k) * (-lambda * t).exp() + k * (-theta * t).exp();
    (m1, m2)
}

/// Euler-Maruyama samples of the error after `dt`, stepping in the error itself.
fn em_v_samples(
    params: &ModelParams,
    curve: &ForecastCurve,
    v0: f64,
    dt: f64,
    n: usize,
    steps: usize,
    seed: u64,
) -> Vec<f64> {
    let c = params.product();
    let h = dt / steps as f64;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut r = path_rng(seed, k);
            let mut v = v0;
            for j in 0..steps {
                let t = j as f64 * h;
                let p = curve.value(t);
                let p_dot = curve.slope(t);
                let theta = crate::model::theta_t(params, p, p_dot).expect("valid forecast");
                let drift = params_slope(params, p_dot) - p_dot - theta * v;
                let x = (v + p).clamp(0.0, 1.0);
                v += drift * h + (2.0 * c * x * (1.0 - x)).sqrt() * h.sqrt() * normal(&mut r);
            }
            v
        })
        .collect()
}

fn params_slope(params: &ModelParams, p_dot: f64) -> f64 {
    match params.kind {
        ModelKind::DerivativeTracking => p_dot,
        ModelKind::Plain => 0.0,
    }
}

/// Euler-Maruyama samples of the Lamperti process after `dt`.
fn em_z_samples(
    params: &ModelParams,
    curve: &ForecastCurve,
    z0: f64,
    dt: f64,
    n: usize,
    steps: usize,
    seed: u64,
) -> Vec<f64> {
    let h = dt / steps as f64;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut r = path_rng(seed, k);
            let mut z = z0;
            for j in 0..steps {
                let t = j as f64 * h;
                let a = drift_z_guarded(z, curve.value(t), curve.slope(t), params).value;
                z += a * h + h.sqrt() * normal(&mut r);
            }
            z
        })
        .collect()
}

fn moment_ode() -> Result<(bool, String)> {
    // constant-coefficient closed form
    let mut r = rng(3);
    let fine = IntegratorConfig { substeps: 50 };
    let mut worst_closed = 0.0f64;
    for i in 0..60 {
        let kind = if i % 2 == 0 {
            ModelKind::Plain
        } else {
            ModelKind::DerivativeTracking
        };
        let params = random_params(&mut r, kind)?;
        let p = uniform(&mut r, 0.1, 0.9);
        let dt = [DT, 1.0 / 24.0, 1.0][i % 3];
        let curve = ForecastCurve::new(vec![0.0, dt], vec![p, p], 0.02)?;
        let v0 = uniform(&mut r, 0.0, 1.0) - p;
        let theta = crate::model::theta_t(&params, p, 0.0)?;
        let (m1, m2) = closed_form_v_moments(v0, theta, params.product(), p, dt);
        let got = integrate_v_moments(v0, 0.0, dt, &curve, &params, &fine)?;
        worst_closed = worst_closed
            .max((got.m1 - m1).abs())
            .max((got.m2 - m2).abs());
    }

    // Monte Carlo on generic transitions. With 40 comparisons at 3 SE about
    // one run in ten trips by chance, so a transition over the limit is rerun
    // once on an independent seed and judged on the rerun.
    let cfg = IntegratorConfig::default();
    let mut first_worst = 0.0f64;
    let mut worst = 0.0f64;
    let mut reruns = 0;
    for j in 0..20u64 {
        let params = ModelParams::tracking(uniform(&mut r, 1.0, 3.0), uniform(&mut r, 0.02, 0.1))?;
        let mid = uniform(&mut r, 0.2, 0.8);
        let curve = ForecastCurve::new(
            vec![0.0, DT / 2.0, DT],
            vec![
                mid + uniform(&mut r, -0.03, 0.03),
                mid,
                mid + uniform(&mut r, -0.03, 0.03),
            ],
            0.02,
        )?;
        let x0 = (curve.value(0.0) + uniform(&mut r, -0.1, 0.1)).clamp(0.05, 0.95);
        let v0 = x0 - curve.value(0.0);
        let gap = transition_moment_gap(&params, &curve, v0, &cfg, 1000 + j)?;
        first_worst = first_worst.max(gap);
        let gap = if gap > 3.0 {
            reruns += 1;
            transition_moment_gap(&params, &curve, v0, &cfg, 5000 + j)?
        } else {
            gap
        };
        worst = worst.max(gap);
    }
    let passed = worst_closed <= 1e-8 && worst <= 3.0;
    Ok((
        passed,
        format!(
            "closed form max error {worst_closed:.2e} (tol 1e-8); 20 transitions x 1e5 paths, error and Lamperti \
             moments: worst first-pass gap {first_worst:.2} SE, {reruns} rerun(s), worst final gap {worst:.2} SE (tol 3)"
        ),
    ))
}

/// Largest gap, in standard errors, between the moment ODEs and Monte Carlo
/// over one transition of length `DT`, across both the error and Lamperti systems.
fn transition_moment_gap(
    params: &ModelParams,
    curve: &ForecastCurve,
    v0: f64,
    cfg: &IntegratorConfig,
    seed: u64,
) -> Result<f64> {
    let (n, steps) = (100_000, 100);
    let vm = integrate_v_moments(v0, 0.0, DT, curve, params, cfg)?;
    let vs = em_v_samples(params, curve, v0, DT, n, steps, seed);
    let (mean, se) = mean_se(&vs);
    let sq: Vec<f64> = vs.iter().map(|v| v * v).collect();
    let (mean2, se2) = mean_se(&sq);

    let z0 = lamperti_forward(v0, curve.value(0.0), params)?;
    let zm = integrate_z_moments(z0, 0.0, DT, curve, params, cfg)?;
    let zs = em_z_samples(params, curve, z0, DT, n, steps, seed + 100_000);
    let (zmean, zse) = mean_se(&zs);
    let dev: Vec<f64> = zs.iter().map(|z| (z - zmean).powi(2)).collect();
    let (zvar, zvar_se) = mean_se(&dev);
    Ok([
        (vm.m1 - mean).abs() / se,
        (vm.m2 - mean2).abs() / se2,
        (zm.mu - zmean).abs() / zse,
        (zm.var - zvar).abs() / zvar_se,
    ]
    .into_iter()
    .fold(0.0, f64::max))
}

fn day_curve(seed: u64, range: (f64, f64), step_sd: f64) -> Result<(ForecastCurve, Vec<f64>)> {
    let mut r = path_rng(seed, 0);
    let knots = random_forecast(&mut r, 25, step_sd, range);
    let times = (0..25).map(|k| (k * 6) as f64 * DT).collect();
    let curve = ForecastCurve::new(times, knots, 0.02)?;
    let grid = (0..=144).map(|i| i as f64 * DT).collect();
    Ok((curve, grid))
}

/// Worst pointwise gap between the ensemble mean and `expected`, in standard errors.
fn worst_mean_gap(paths: &[Vec<f64>], expected: impl Fn(usize) -> f64) -> f64 {
    let n_times = paths[0].len();
    (0..n_times)
        .map(|i| {
            let col: Vec<f64> = paths.iter().map(|p| p[i]).collect();
            let (mean, se) = mean_se(&col);
            let gap = (mean - expected(i)).abs();
            // a degenerate column (the common start) only needs to match to rounding
            if se > 1e-9 {
                gap / se
            } else if gap < 1e-9 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

fn mean_tracking() -> Result<(bool, String)> {
    let params = ModelParams::tracking(TRUE_THETA0, TRUE_ALPHA)?;
    let (curve, grid) = day_curve(41, (0.1, 0.9), 0.05)?;
    let cfg = SimConfig {
        n_paths: 10_000,
        seed: 42,
        ..Default::default()
    };
    let bundle = simulate_paths(&params, &curve, &grid, &cfg, InitialCondition::Error(0.0))?;
    let tracking = worst_mean_gap(&bundle.paths, |i| curve.value(grid[i]));

    // plain model on a ramp lags the forecast by (slope / theta0)(1 - exp(-theta0 t))
    let plain = ModelParams::plain(TRUE_THETA0, TRUE_ALPHA)?;
    let ramp = ForecastCurve::new(vec![0.0, 1.0], vec![0.2, 0.8], 0.02)?;
    let slope = 0.6;
    let bundle = simulate_paths(
        &plain,
        &ramp,
        &grid,
        &SimConfig { seed: 43, ..cfg },
        InitialCondition::Error(0.0),
    )?;
    let lagged = worst_mean_gap(&bundle.paths, |i| {
        let t = grid[i];
        ramp.value(t) - slope / TRUE_THETA0 * (1.0 - (-TRUE_THETA0 * t).exp())
    });
    Ok((
        tracking <= 3.0 && lagged <= 3.0,
        format!(
            "1e4 paths x 145 points: tracking model worst gap to forecast {tracking:.2} SE; \
             plain model worst gap to lagged closed form {lagged:.2} SE (tol 3)"
        ),
    ))
}

fn boundedness() -> Result<(bool, String)> {
    let params = ModelParams::tracking(TRUE_THETA0, TRUE_ALPHA)?;
    let mut exits = 0usize;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut reflections = 0;
    for batch in 0..10u64 {
        // steep forecasts that run close to the truncation level
        let (curve, grid) = day_curve(500 + batch, (0.03, 0.97), 0.15)?;
        let cfg = SimConfig {
            n_paths: 10_000,
            seed: 600 + batch,
            ..Default::default()
        };
        let bundle = simulate_paths(&params, &curve, &grid, &cfg, InitialCondition::Error(0.0))?;
        reflections += bundle.reflections;
        for x in bundle.paths.iter().flatten() {
            exits += !(0.0..=1.0).contains(x) as usize;
            lo = lo.min(*x);
            hi = hi.max(*x);
        }
    }
    Ok((
        exits == 0,
        format!("1e5 paths x 144 steps: {exits} samples outside [0, 1]; range [{lo:.3e}, {hi:.6}]; {reflections} numerical reflections"),
    ))
}

// Gauss-Kronrod 7/15 nodes and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let s = f(c - h * XGK[i]) + f(c + h * XGK[i]);
        kronrod += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adaptive_quadrature(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let (value, err) = gauss_kronrod(f, a, b);
    if err <= tol || depth == 0 {
        return value;
    }
    let m = 0.5 * (a + b);
    adaptive_quadrature(f, a, m, 0.5 * tol, depth - 1)
        + adaptive_quadrature(f, m, b, 0.5 * tol, depth - 1)
}

/// Integral of the rescaled Beta density over its support, split around the mean.
fn beta_mass(shapes: &BetaShapes) -> f64 {
    let l = shapes.half_width();
    let s = shapes.xi1 + shapes.xi2;
    let mean = -l + 2.0 * l * shapes.xi1 / s;
    let sd = 2.0 * l * (shapes.xi1 * shapes.xi2 / (s * s * (s + 1.0))).sqrt();
    let mut cuts = vec![-l, l];
    for k in [-20.0, -8.0, -3.0, -1.0, 0.0, 1.0, 3.0, 8.0, 20.0] {
        let c = mean + k * sd;
        if c > -l && c < l {
            cuts.push(c);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let f = |v: f64| beta_transition_logpdf(v, shapes).map_or(0.0, f64::exp);
    cuts.windows(2)
        .map(|w| adaptive_quadrature(&f, w[0], w[1], 1e-13, 40))
        .sum()
}

fn beta_matching() -> Result<(bool, String)> {
    let mut r = rng(6);
    let cfg = IntegratorConfig::default();
    let eps = 0.02;
    let l = 1.0 - eps;
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    let mut repaired = 0;
    for _ in 0..1000 {
        let params = random_params(&mut r, ModelKind::DerivativeTracking)?;
        let a = uniform(&mut r, 0.05, 0.95);
        let b = (a + uniform(&mut r, -0.05, 0.05)).clamp(0.02, 0.98);
        let curve = ForecastCurve::new(vec![0.0, DT], vec![a, b], eps)?;
        let v0 = uniform(&mut r, 0.0, 1.0) - curve.value(0.0);
        let m = integrate_v_moments(v0, 0.0, DT, &curve, &params, &cfg)?;
        let (shapes, adjusted) = matched_beta_shapes(m.m1, m.variance(), eps)?;
        if adjusted {
            repaired += 1;
            continue;
        }
        let s = shapes.xi1 + shapes.xi2;
        let mean = -l + 2.0 * l * shapes.xi1 / s;
        let var = 4.0 * l * l * shapes.xi1 * shapes.xi2 / (s * s * (s + 1.0));
        worst_mean = worst_mean.max((mean - m.m1).abs());
        worst_var = worst_var.max((var - m.variance()).abs() / m.variance());
    }
    let mut worst_mass = 0.0f64;
    for _ in 0..1000 {
        let shapes = BetaShapes {
            xi1: 10f64.powf(uniform(&mut r, 0.0, 4.0)),
            xi2: 10f64.powf(uniform(&mut r, 0.0, 4.0)),
            epsilon: eps,
        };
        worst_mass = worst_mass.max((beta_mass(&shapes) - 1.0).abs());
    }
    let passed = worst_mean <= 1e-10 && worst_var <= 1e-10 && worst_mass <= 1e-8;
    Ok((
        passed,
        format!(
            "{} transitions: mean gap {worst_mean:.2e}, relative variance gap {worst_var:.2e} (tol 1e-10, {repaired} repaired moments skipped); \
             1000 shape pairs in [1, 1e4]: worst |mass - 1| = {worst_mass:.2e} (tol 1e-8)",
            1000 - repaired
        ),
    ))
}

fn recovery_set(seed: u64) -> Result<PreparedSet> {
    let params = ModelParams::tracking(TRUE_THETA0, TRUE_ALPHA)?;
    synthetic_prepared(
        &params,
        &SynthConfig {
            seed,
            ..Default::default()
        },
        0.02,
    )
}

struct Replication {
    v: CalibrationResult,
    z: CalibrationResult,
}

/// Ten replications fitted in both spaces, shared by the recovery checks.
fn replications() -> &'static std::result::Result<Vec<Replication>, String> {
    static CELL: OnceLock<std::result::Result<Vec<Replication>, String>> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = CalibrationConfig::default();
        (1..=10u64)
            .into_par_iter()
            .map(|seed| {
                let data = recovery_set(seed)?;
                let v = fit_v_space(&data, ModelKind::DerivativeTracking, VProxy::Beta, &cfg)?;
                let z = fit_z_space_fixed_point(&data, ModelKind::DerivativeTracking, &cfg)?;
                Ok(Replication { v, z })
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e: Error| e.to_string())
    })
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value / target - 1.0).abs() <= rel
}

fn products(reps: &[Replication], pick: impl Fn(&Replication) -> &CalibrationResult) -> String {
    reps.iter()
        .map(|r| format!("{:.4}", pick(r).product))
        .collect::<Vec<_>>()
        .join(" ")
}

fn recovery_v() -> Result<(bool, String)> {
    let reps = replications()
        .as_ref()
        .map_err(|e| Error::Numerical(e.clone()))?;
    let truth = TRUE_THETA0 * TRUE_ALPHA;
    let hits = reps
        .iter()
        .filter(|r| within(r.v.product, truth, 0.10))
        .count();
    Ok((
        hits >= 8,
        format!(
            "{hits}/10 error-space products within 10% of {truth}: {}",
            products(reps, |r| &r.v)
        ),
    ))
}

fn recovery_z() -> Result<(bool, String)> {
    let reps = replications()
        .as_ref()
        .map_err(|e| Error::Numerical(e.clone()))?;
    let truth = TRUE_THETA0 * TRUE_ALPHA;
    let hits = reps
        .iter()
        .filter(|r| r.z.converged && within(r.z.product, truth, 0.10))
        .count();
    let converged = reps.iter().filter(|r| r.z.converged).count();
    let monotone = reps
        .iter()
        .filter(|r| {
            r.z.trace.as_ref().is_some_and(|t| {
                t.inner_residuals.len() > 2
                    && t.inner_residuals[2..].windows(2).all(|w| w[1] <= w[0])
            })
        })
        .count();
    Ok((
        hits >= 8,
        format!(
            "{hits}/10 converged Lamperti-space products within 10% of {truth} ({converged}/10 converged, \
             {monotone}/10 with monotone residuals after iteration 2): {}",
            products(reps, |r| &r.z)
        ),
    ))
}

fn v_z_agreement() -> Result<(bool, String)> {
    let reps = replications()
        .as_ref()
        .map_err(|e| Error::Numerical(e.clone()))?;
    let gaps: Vec<f64> = reps
        .iter()
        .map(|r| (r.v.product - r.z.product).abs() / r.v.product)
        .collect();
    let agree = gaps.iter().filter(|g| **g <= 0.25).count();
    let listed: Vec<String> = gaps.iter().map(|g| format!("{:.0}%", 100.0 * g)).collect();
    Ok((
        agree >= 8,
        format!(
            "{agree}/10 replications with |product_V - product_Z| / product_V <= 25%: {}",
            listed.join(" ")
        ),
    ))
}

fn coefficient_of_variation(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var.sqrt() / mean
}

fn ridge() -> Result<(bool, String)> {
    let data = recovery_set(1)?;
    let cfg = CalibrationConfig::default();
    let guess = initial_guess(&data)?;
    let factors = [(0.5, 1.3), (0.75, 0.8), (1.0, 1.0), (1.5, 1.2), (2.0, 0.7)];
    let fits: Vec<CalibrationResult> = factors
        .par_iter()
        .map(|&(ft, fa)| {
            fit_v_space_from(
                &data,
                ModelKind::DerivativeTracking,
                VProxy::Beta,
                &cfg,
                [guess.theta0 * ft, guess.alpha * fa],
                guess.clone(),
            )
        })
        .collect::<Result<_>>()?;
    let prods: Vec<f64> = fits.iter().map(|f| f.product).collect();
    let thetas: Vec<f64> = fits.iter().map(|f| f.theta0).collect();
    let (lo, hi) = prods
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| {
            (a.min(p), b.max(p))
        });
    let spread = hi / lo - 1.0;
    let ratio = coefficient_of_variation(&thetas) / coefficient_of_variation(&prods);
    let fmt = |xs: &[f64]| {
        xs.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok((
        spread <= 0.02 && ratio > 3.0,
        format!(
            "5 starts: products {} (spread {:.2}%, tol 2%); theta0 {} (CV ratio {ratio:.1}, need > 3)",
            fmt(&prods),
            100.0 * spread,
            fmt(&thetas)
        ),
    ))
}

fn model_selection() -> Result<(bool, String)> {
    let cfg = CalibrationConfig::default();
    let outcomes: Vec<(f64, f64, f64)> = (1..=10u64)
        .into_par_iter()
        .map(|seed| {
            let data = recovery_set(seed)?;
            let m2 = fit_v_space(&data, ModelKind::DerivativeTracking, VProxy::Beta, &cfg)?;
            let m1 = fit_v_space(&data, ModelKind::Plain, VProxy::Beta, &cfg)?;
            let m1g = fit_v_space(&data, ModelKind::Plain, VProxy::Gaussian, &cfg)?;
            Ok((m2.aic, m1.aic, m1g.aic))
        })
        .collect::<Result<_>>()?;
    let ordered = outcomes.iter().filter(|(a, b, c)| a < b && b < c).count();
    let median_gap = |f: &dyn Fn(&(f64, f64, f64)) -> f64| {
        let mut g: Vec<f64> = outcomes.iter().map(f).collect();
        g.sort_by(f64::total_cmp);
        0.5 * (g[4] + g[5])
    };
    Ok((
        ordered >= 9,
        format!(
            "{ordered}/10 with AIC(model 2 beta) < AIC(model 1 beta) < AIC(model 1 gaussian); \
             median gaps {:.1} and {:.1}",
            median_gap(&|o| o.1 - o.0),
            median_gap(&|o| o.2 - o.1)
        ),
    ))
}

fn delta_behavior() -> Result<(bool, String)> {
    let (theta0, alpha, delta) = (2.22, 0.044, 0.054);
    let params = ModelParams::tracking(theta0, alpha)?;
    let data = synthetic_prepared(
        &params,
        &SynthConfig {
            delta: Some(delta),
            seed: 77,
            ..Default::default()
        },
        0.02,
    )?;
    let cfg = CalibrationConfig::default();
    let product = theta0 * alpha;
    let by_product: Vec<f64> = [0.5, 1.0, 2.0]
        .iter()
        .map(|f| Ok(fit_delta(&ModelParams::tracking(theta0, alpha * f)?, &data, &cfg)?.delta))
        .collect::<Result<_>>()?;
    let by_theta: Vec<f64> = [1.5, 2.22, 3.5]
        .iter()
        .map(|&t| Ok(fit_delta(&ModelParams::tracking(t, product / t)?, &data, &cfg)?.delta))
        .collect::<Result<_>>()?;
    let decreasing = by_product.windows(2).all(|w| w[1] < w[0]);
    let increasing = by_theta.windows(2).all(|w| w[1] > w[0]);
    let fmt = |xs: &[f64]| {
        xs.iter()
            .map(|x| format!("{x:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    Ok((
        decreasing && increasing,
        format!(
            "delta at product x0.5/x1/x2: {} (decreasing: {decreasing}); at theta0 1.5/2.22/3.5: {} (increasing: {increasing})",
            fmt(&by_product),
            fmt(&by_theta)
        ),
    ))
}

fn band_coverage() -> Result<(bool, String)> {
    let params = ModelParams::tracking(TRUE_THETA0, TRUE_ALPHA)?;
    let initial = InitialCondition::Lagged(0.054);
    let coverages: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|rep| {
            let (curve, grid) = day_curve(10_000 + rep, (0.1, 0.9), 0.05)?;
            let cfg = SimConfig {
                n_paths: 1000,
                seed: 20_000 + rep,
                ..Default::default()
            };
            let bundle = simulate_paths(&params, &curve, &grid, &cfg, initial)?;
            let bands = empirical_bands(&bundle, &[0.9])?;
            let truth_cfg = SimConfig {
                seed: 30_000 + rep,
                ..cfg
            };
            let truth = simulate_path(&params, &curve, &grid, &truth_cfg, initial, 0)?;
            let band = &bands.bands[0];
            let inside = truth
                .x
                .iter()
                .enumerate()
                .filter(|&(i, x)| band.lower[i] <= *x && *x <= band.upper[i])
                .count();
            Ok(inside as f64 / grid.len() as f64)
        })
        .collect::<Result<_>>()?;
    let mean = coverages.iter().sum::<f64>() / coverages.len() as f64;
    Ok((
        (mean - 0.9).abs() <= 0.05,
        format!("200 held-out paths, 1000-path ensembles: mean 90% band coverage {:.2}% (target 90 +/- 5)", 100.0 * mean),
    ))
}

fn reproducibility() -> Result<(bool, String)> {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_nanos());
    let dir = std::env::temp_dir().join(format!(
        "forecast-sde-selftest-{}-{nanos}",
        std::process::id()
    ));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    crate::cli::set_quiet(true);
    let result = reproducibility_in(&dir);
    crate::cli::set_quiet(false);
    let _ = std::fs::remove_dir_all(&dir);
    result
}

fn reproducibility_in(dir: &std::path::Path) -> Result<(bool, String)> {
    let p = |name: &str| dir.join(name).display().to_string();
    let commands: Vec<Vec<String>> = vec![
        vec![
            "synth",
            "--out",
            &p("raw.csv"),
            "--days",
            "6",
            "--seed",
            "7",
            "--capacity-mw",
            "100",
        ],
        vec![
            "ingest",
            &p("raw.csv"),
            "--out",
            &p("segments.json"),
            "--capacity-mw",
            "100",
        ],
        vec![
            "calibrate",
            "--segments",
            &p("segments.json"),
            "--out",
            &p("calibration.json"),
        ],
        vec![
            "validate",
            "--segments",
            &p("segments.json"),
            "--theta0",
            "1.9",
            "--alpha",
            "0.05",
            "--out",
            &p("validity.json"),
        ],
        vec![
            "compare",
            "--segments",
            &p("segments.json"),
            "--out-csv",
            &p("compare.csv"),
        ],
        vec![
            "simulate",
            "--calibration",
            &p("calibration.json"),
            "--segments",
            &p("segments.json"),
            "--paths",
            "5",
            "--seed",
            "11",
            "--out-dir",
            &p("sim"),
        ],
        vec![
            "bands",
            "--calibration",
            &p("calibration.json"),
            "--segments",
            &p("segments.json"),
            "--paths",
            "400",
            "--levels",
            "0.9",
            "--seed",
            "13",
            "--out-dir",
            &p("bands"),
        ],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();
    let manifests = [
        "raw.csv.manifest.json",
        "segments.json.manifest.json",
        "calibration.json.manifest.json",
        "validity.json.manifest.json",
        "compare.csv.manifest.json",
        "sim/simulate.manifest.json",
        "bands/bands.manifest.json",
    ];
    for args in &commands {
        let mut full = vec!["forecast-sde".to_string(), "--threads".into(), "2".into()];
        full.extend(args.iter().cloned());
        let code = crate::cli::run(full);
        if code != 0 {
            return Ok((
                false,
                format!("`{}` exited with code {code}", args.join(" ")),
            ));
        }
    }
    let mut checked = 0;
    for m in manifests {
        for threads in ["1", "3"] {
            let args = vec![
                "forecast-sde".into(),
                "--threads".into(),
                threads.into(),
                "replay".into(),
                p(m),
            ];
            let code = crate::cli::run(args);
            if code != 0 {
                return Ok((
                    false,
                    format!("replay of {m} with {threads} thread(s) exited with code {code}"),
                ));
            }
            checked += 1;
        }
    }
    Ok((
        true,
        format!("{} seeded commands replayed from their manifests {checked} times (1 and 3 threads): outputs byte-identical", commands.len()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_moments_satisfy_their_ode() {
        let (v0, theta, c, p) = (0.1, 2.0, 0.1, 0.3);
        let h = 1e-6;
        let t = 0.4;
        let (m1, m2) = closed_form_v_moments(v0, theta, c, p, t);
        let (a1, a2) = closed_form_v_moments(v0, theta, c, p, t + h);
        let (b1, b2) = closed_form_v_moments(v0, theta, c, p, t - h);
        let d1 = (a1 - b1) / (2.0 * h);
        let d2 = (a2 - b2) / (2.0 * h);
        assert!((d1 + theta * m1).abs() < 1e-8);
        let rhs =
            -2.0 * (theta + c) * m2 + 2.0 * c * (1.0 - 2.0 * p) * m1 + 2.0 * c * p * (1.0 - p);
        assert!((d2 - rhs).abs() < 1e-8);
        assert_eq!(closed_form_v_moments(v0, theta, c, p, 0.0).1, v0 * v0);
    }

    #[test]
    fn quadrature_integrates_polynomials_and_peaks() {
        let f = |x: f64| 3.0 * x * x;
        assert!((adaptive_quadrature(&f, 0.0, 1.0, 1e-14, 30) - 1.0).abs() < 1e-13);
        let shapes = BetaShapes {
            xi1: 2.0,
            xi2: 3.0,
            epsilon: 0.0,
        };
        assert!((beta_mass(&shapes) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn names_are_unique() {
        let names: Vec<&str> = checks().iter().map(|c| c.name).collect();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }
}
