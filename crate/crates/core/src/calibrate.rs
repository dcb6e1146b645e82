//! Parameter estimation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PreparedSet;
use crate::error::{Error, Result};
use crate::likelihood::{
    information_criteria, loglik_complete, loglik_delta, loglik_v, loglik_v_gaussian, loglik_z,
    loglik_z_frozen, transform_to_z, LikFlags, LogLikValue,
};
use crate::model::{ModelKind, ModelParams};
use crate::moments::IntegratorConfig;
use crate::optim::{golden_section, nelder_mead, Bounds, NelderMeadResult, OptimizerConfig};

/// Smallest rate accepted from the closed-form guess.
pub const MIN_RATE_GUESS: f64 = 1e-6;
/// Box for every fitted parameter.
pub const PARAM_LOWER: f64 = 1e-6;
pub const PARAM_UPPER: f64 = 1e3;
/// Upper end of the initial-transition lag search, in days.
pub const DELTA_MAX: f64 = 1.0;
const DELTA_GRID_POINTS: usize = 20;
const DELTA_LOG_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    VBeta,
    VGauss,
    ZFixedPoint,
    Complete,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::VBeta,
        Method::VGauss,
        Method::ZFixedPoint,
        Method::Complete,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::VBeta => "v_beta",
            Method::VGauss => "v_gauss",
            Method::ZFixedPoint => "z_fixed_point",
            Method::Complete => "complete",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }

    /// Number of fitted parameters.
    pub fn n_params(self) -> usize {
        match self {
            Method::Complete => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    pub max_iters: usize,
    /// Relative change of `(theta0, alpha)` below which the iteration stops.
    pub tol: f64,
    pub damping: f64,
    /// Number of leading iterations that use `damping`; later ones are undamped.
    pub damped_iters: usize,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            max_iters: 25,
            tol: 1e-3,
            damping: 0.5,
            damped_iters: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub integrator: IntegratorConfig,
    pub optimizer: OptimizerConfig,
    pub fixed_point: FixedPointConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialGuess {
    pub theta0: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub flags: Vec<String>,
}

/// Least-squares decay rate of the errors: `sum v_{i-1}(v_{i-1} - v_i) / sum dt v_{i-1}^2`.
///
/// Returns the rate and whether it had to be raised to [`MIN_RATE_GUESS`].
pub fn guess_theta0(data: &PreparedSet) -> Result<(f64, bool)> {
    let (mut num, mut den) = (0.0, 0.0);
    for s in &data.segments {
        for w in s.v.windows(2) {
            num += w[0] * (w[0] - w[1]);
            den += s.dt * w[0] * w[0];
        }
    }
    if data.n_transitions() == 0 {
        return Err(Error::Data("no transitions to estimate from".into()));
    }
    if !(den > 0.0) {
        return Err(Error::Data(
            "all starting errors are zero; decay rate is undetermined".into(),
        ));
    }
    let c = num / den;
    if c >= MIN_RATE_GUESS {
        Ok((c, false))
    } else {
        Ok((MIN_RATE_GUESS, true))
    }
}

/// Quadratic-variation estimate of `theta0 * alpha`.
pub fn guess_product(data: &PreparedSet) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for s in &data.segments {
        for i in 1..s.v.len() {
            let d = s.v[i] - s.v[i - 1];
            num += d * d;
            den += 2.0 * s.dt * s.x[i] * (1.0 - s.x[i]);
        }
    }
    if !(den > 0.0) {
        return Err(Error::Data(
            "every observation sits on a boundary; diffusion level is undetermined".into(),
        ));
    }
    Ok(num / den)
}

/// Initial guess for `(theta0, alpha)`, falling back to safe values (with
/// flags) when the data are degenerate.
pub fn initial_guess(data: &PreparedSet) -> Result<InitialGuess> {
    if data.n_transitions() == 0 {
        return Err(Error::Data("no transitions to fit".into()));
    }
    let mut flags = Vec::new();
    let theta0 = match guess_theta0(data) {
        Ok((c, clamped)) => {
            if clamped {
                flags.push("theta0_guess_clamped".to_string());
            }
            c
        }
        Err(_) => {
            flags.push("theta0_guess_degenerate".to_string());
            1.0
        }
    };
    let theta0 = theta0.clamp(PARAM_LOWER, PARAM_UPPER);
    let product = match guess_product(data) {
        Ok(p) if p > 0.0 => p,
        _ => {
            flags.push("product_guess_degenerate".to_string());
            PARAM_LOWER * theta0.max(1.0)
        }
    };
    let alpha = (product / theta0).clamp(PARAM_LOWER, PARAM_UPPER);
    Ok(InitialGuess {
        theta0,
        alpha,
        delta: None,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointTrace {
    /// `(theta0, alpha)` after each outer iteration, starting with the initial point.
    pub iterates: Vec<[f64; 2]>,
    /// Relative change between consecutive iterates.
    pub residuals: Vec<f64>,
    /// Relative distance from each iterate to its inner maximizer.
    pub inner_residuals: Vec<f64>,
    pub damping: Vec<f64>,
    pub converged: bool,
}

/// A fitted model with its likelihood and information criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub model: u8,
    pub provider: String,
    pub method: Method,
    /// Forecast truncation level the fit used.
    pub epsilon: f64,
    pub theta0: f64,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub delta: Option<f64>,
    pub product: f64,
    pub loglik: f64,
    pub n: usize,
    pub k: usize,
    pub aic: f64,
    pub bic: f64,
    pub flags: Vec<String>,
    pub loglik_flags: LikFlags,
    pub evaluations: usize,
    pub converged: bool,
    pub initial_guess: InitialGuess,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<FixedPointTrace>,
}

impl CalibrationResult {
    pub fn kind(&self) -> Result<ModelKind> {
        ModelKind::from_number(self.model)
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::new(self.theta0, self.alpha, self.kind()?)
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    data: &PreparedSet,
    kind: ModelKind,
    method: Method,
    theta: [f64; 2],
    delta: Option<f64>,
    ll: LogLikValue,
    nm: Option<&NelderMeadResult>,
    mut flags: Vec<String>,
    initial_guess: InitialGuess,
    trace: Option<FixedPointTrace>,
    converged: bool,
) -> Result<CalibrationResult> {
    let k = method.n_params();
    let ic = information_criteria(&ll, k)?;
    for (name, v) in [
        ("theta0", Some(theta[0])),
        ("alpha", Some(theta[1])),
        ("delta", delta),
    ] {
        if let Some(v) = v {
            if v <= PARAM_LOWER * (1.0 + 1e-6) || v >= PARAM_UPPER * (1.0 - 1e-6) {
                flags.push(format!("{name}_at_bound"));
            }
        }
    }
    if ll.flags.infeasible > 0 {
        flags.push(format!("infeasible_moments:{}", ll.flags.infeasible));
    }
    if ll.flags.clamped > 0 {
        flags.push(format!("clamped_observations:{}", ll.flags.clamped));
    }
    if ll.flags.boundary > 0 {
        flags.push(format!("boundary_transitions:{}", ll.flags.boundary));
    }
    let provider = data
        .segments
        .first()
        .map(|s| s.provider.clone())
        .unwrap_or_default();
    Ok(CalibrationResult {
        model: kind.number(),
        provider,
        method,
        epsilon: data.epsilon,
        theta0: theta[0],
        alpha: theta[1],
        delta,
        product: theta[0] * theta[1],
        loglik: ll.value,
        n: ic.n,
        k,
        aic: ic.aic,
        bic: ic.bic,
        flags,
        loglik_flags: ll.flags,
        evaluations: nm.map_or(0, |r| r.evaluations),
        converged,
        initial_guess,
        trace,
    })
}

fn log_bounds(dim: usize) -> Bounds {
    Bounds::uniform(dim, PARAM_LOWER.ln(), PARAM_UPPER.ln())
}

fn params_from_log(y: &[f64], kind: ModelKind) -> Result<ModelParams> {
    ModelParams::new(y[0].exp(), y[1].exp(), kind)
}

fn negate(r: Result<LogLikValue>) -> f64 {
    match r {
        Ok(ll) => -ll.value,
        Err(_) => f64::INFINITY,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VProxy {
    Beta,
    Gaussian,
}

fn v_objective(
    params: &ModelParams,
    data: &PreparedSet,
    cfg: &CalibrationConfig,
    proxy: VProxy,
) -> Result<LogLikValue> {
    match proxy {
        VProxy::Beta => loglik_v(params, data, &cfg.integrator),
        VProxy::Gaussian => loglik_v_gaussian(params, data, &cfg.integrator),
    }
}

/// Maximize an error-space likelihood over `(theta0, alpha)` in log space.
pub fn fit_v_space(
    data: &PreparedSet,
    kind: ModelKind,
    proxy: VProxy,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    let guess = initial_guess(data)?;
    fit_v_space_from(data, kind, proxy, cfg, [guess.theta0, guess.alpha], guess)
}

/// [`fit_v_space`] from an explicit start point.
pub fn fit_v_space_from(
    data: &PreparedSet,
    kind: ModelKind,
    proxy: VProxy,
    cfg: &CalibrationConfig,
    start: [f64; 2],
    guess: InitialGuess,
) -> Result<CalibrationResult> {
    let x0 = [start[0].ln(), start[1].ln()];
    let nm = nelder_mead(
        |y| match params_from_log(y, kind) {
            Ok(p) => negate(v_objective(&p, data, cfg, proxy)),
            Err(_) => f64::INFINITY,
        },
        &x0,
        Some(&log_bounds(2)),
        &cfg.optimizer,
    )?;
    let params = params_from_log(&nm.x, kind)?;
    let ll = v_objective(&params, data, cfg, proxy)?;
    let mut flags = guess.flags.clone();
    if !nm.converged() {
        flags.push("optimizer_max_evals".into());
    }
    let method = match proxy {
        VProxy::Beta => Method::VBeta,
        VProxy::Gaussian => Method::VGauss,
    };
    let converged = nm.converged();
    finish(
        data,
        kind,
        method,
        [params.theta0, params.alpha],
        None,
        ll,
        Some(&nm),
        flags,
        guess,
        None,
        converged,
    )
}

fn rel_change(a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    d / (b[0] * b[0] + b[1] * b[1]).sqrt()
}

/// Lamperti-space fit: alternate transforming the data at the current
/// parameters with maximizing the Gaussian likelihood of the frozen data,
/// until the parameters reproduce themselves.
pub fn fit_z_space_fixed_point(
    data: &PreparedSet,
    kind: ModelKind,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    let guess = initial_guess(data)?;
    fit_z_space_from(data, kind, cfg, [guess.theta0, guess.alpha], guess)
}

/// [`fit_z_space_fixed_point`] from an explicit start point.
pub fn fit_z_space_from(
    data: &PreparedSet,
    kind: ModelKind,
    cfg: &CalibrationConfig,
    start: [f64; 2],
    guess: InitialGuess,
) -> Result<CalibrationResult> {
    let fp = cfg.fixed_point;
    if fp.max_iters == 0 || !(fp.tol > 0.0) || !(0.0..1.0).contains(&fp.damping) {
        return Err(Error::Config("invalid fixed-point settings".into()));
    }
    let mut theta = start;
    let mut trace = FixedPointTrace {
        iterates: vec![theta],
        residuals: Vec::new(),
        inner_residuals: Vec::new(),
        damping: Vec::new(),
        converged: false,
    };
    let mut evaluations = 0;
    let mut last_nm = None;
    // iterate closest to self-consistency, returned when the loop runs out
    let mut best = (f64::INFINITY, theta);
    for k in 0..fp.max_iters {
        let current = ModelParams::new(theta[0], theta[1], kind)?;
        let z = transform_to_z(data, &current)?;
        let nm = nelder_mead(
            |y| match params_from_log(y, kind) {
                Ok(p) => negate(loglik_z_frozen(&p, data, &z, &cfg.integrator)),
                Err(_) => f64::INFINITY,
            },
            &[theta[0].ln(), theta[1].ln()],
            Some(&log_bounds(2)),
            &cfg.optimizer,
        )?;
        evaluations += nm.evaluations;
        let inner = [nm.x[0].exp(), nm.x[1].exp()];
        let inner_res = rel_change(inner, theta);
        trace.inner_residuals.push(inner_res);
        if inner_res < best.0 {
            best = (inner_res, theta);
        }
        last_nm = Some(nm);
        let d = if k < fp.damped_iters { fp.damping } else { 0.0 };
        let next = if inner_res < fp.tol {
            inner
        } else {
            [
                (1.0 - d) * inner[0] + d * theta[0],
                (1.0 - d) * inner[1] + d * theta[1],
            ]
        };
        trace.damping.push(if inner_res < fp.tol { 0.0 } else { d });
        trace.residuals.push(rel_change(next, theta));
        trace.iterates.push(next);
        theta = next;
        if inner_res < fp.tol {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        theta = best.1;
    }
    let params = ModelParams::new(theta[0], theta[1], kind)?;
    let ll = loglik_z(&params, data, &cfg.integrator)?;
    let mut flags = guess.flags.clone();
    if !trace.converged {
        flags.push("fixed_point_not_converged".into());
    }
    let converged = trace.converged;
    let mut nm = last_nm;
    if let Some(nm) = nm.as_mut() {
        nm.evaluations = evaluations;
    }
    finish(
        data,
        kind,
        Method::ZFixedPoint,
        theta,
        None,
        ll,
        nm.as_ref(),
        flags,
        guess,
        Some(trace),
        converged,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaFit {
    pub delta: f64,
    pub loglik: f64,
    pub at_boundary: bool,
    /// The golden-section bracket test failed and the coarse grid was used.
    pub used_grid: bool,
    pub evaluations: usize,
}

/// Search range for the initial-transition lag given the sampling interval.
pub fn delta_range(dt: f64) -> (f64, f64) {
    (dt / 10.0, DELTA_MAX)
}

/// Maximize the initial-transition likelihood over the lag `delta` with the
/// other parameters held fixed.
pub fn fit_delta(
    params: &ModelParams,
    data: &PreparedSet,
    cfg: &CalibrationConfig,
) -> Result<DeltaFit> {
    let dt = data
        .dt()
        .ok_or_else(|| Error::Data("no segments to fit the initial lag".into()))?;
    let (lo, hi) = delta_range(dt);
    let (a, b) = (lo.ln(), hi.ln());
    let mut evals = 0usize;
    let mut f = |u: f64| {
        evals += 1;
        negate(loglik_delta(params, u.exp(), data, &cfg.integrator))
    };
    let fa = f(a);
    let fb = f(b);
    let mid = 0.5 * (a + b);
    let fm = f(mid);
    let (search_lo, search_hi, used_grid) = if fm < fa && fm < fb {
        (a, b, false)
    } else {
        let grid: Vec<f64> = (0..DELTA_GRID_POINTS)
            .map(|i| a + (b - a) * i as f64 / (DELTA_GRID_POINTS - 1) as f64)
            .collect();
        let values: Vec<f64> = grid.iter().map(|&u| f(u)).collect();
        let best = values
            .iter()
            .enumerate()
            .min_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        (
            grid[best.saturating_sub(1)],
            grid[(best + 1).min(DELTA_GRID_POINTS - 1)],
            true,
        )
    };
    let mut best = golden_section(&mut f, search_lo, search_hi, DELTA_LOG_TOL)?;
    for (u, v) in [(a, fa), (b, fb)] {
        if v < best.f {
            best.x = u;
            best.f = v;
        }
    }
    let at_boundary = best.x - a < 2.0 * DELTA_LOG_TOL || b - best.x < 2.0 * DELTA_LOG_TOL;
    Ok(DeltaFit {
        delta: best.x.exp(),
        loglik: -best.f,
        at_boundary,
        used_grid,
        evaluations: evals,
    })
}

/// Joint fit of `(theta0, alpha, delta)` on the complete likelihood, started
/// from the error-space fit and the lag fitted at those parameters.
pub fn fit_complete(
    data: &PreparedSet,
    kind: ModelKind,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    let v = fit_v_space(data, kind, VProxy::Beta, cfg)?;
    let params = v.params()?;
    let d = fit_delta(&params, data, cfg)?;
    let dt = data.dt().unwrap_or(1.0);
    let (dlo, dhi) = delta_range(dt);
    let bounds = Bounds {
        lower: vec![PARAM_LOWER.ln(), PARAM_LOWER.ln(), dlo.ln()],
        upper: vec![PARAM_UPPER.ln(), PARAM_UPPER.ln(), dhi.ln()],
    };
    let x0 = [params.theta0.ln(), params.alpha.ln(), d.delta.ln()];
    let nm = nelder_mead(
        |y| match params_from_log(y, kind) {
            Ok(p) => negate(loglik_complete(&p, y[2].exp(), data, &cfg.integrator)),
            Err(_) => f64::INFINITY,
        },
        &x0,
        Some(&bounds),
        &cfg.optimizer,
    )?;
    let fitted = params_from_log(&nm.x, kind)?;
    let delta = nm.x[2].exp();
    let ll = loglik_complete(&fitted, delta, data, &cfg.integrator)?;
    let mut guess = v.initial_guess.clone();
    guess.delta = Some(d.delta);
    let mut flags = guess.flags.clone();
    if !nm.converged() {
        flags.push("optimizer_max_evals".into());
    }
    if nm.x[2] <= dlo.ln() + 1e-6 || nm.x[2] >= dhi.ln() - 1e-6 {
        flags.push("delta_at_search_boundary".into());
    }
    let converged = nm.converged();
    finish(
        data,
        kind,
        Method::Complete,
        [fitted.theta0, fitted.alpha],
        Some(delta),
        ll,
        Some(&nm),
        flags,
        guess,
        None,
        converged,
    )
}

/// Run one fit.
pub fn fit(
    data: &PreparedSet,
    kind: ModelKind,
    method: Method,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    match method {
        Method::VBeta => fit_v_space(data, kind, VProxy::Beta, cfg),
        Method::VGauss => fit_v_space(data, kind, VProxy::Gaussian, cfg),
        Method::ZFixedPoint => fit_z_space_fixed_point(data, kind, cfg),
        Method::Complete => fit_complete(data, kind, cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub provider: String,
    pub model: u8,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<CalibrationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Fit every `(provider, model, method)` cell and sort the rows by AIC, then
/// BIC, then product. Failed cells are kept, after all successful rows.
pub fn compare_models(
    sets: &[(String, PreparedSet)],
    models: &[ModelKind],
    methods: &[Method],
    cfg: &CalibrationConfig,
) -> Vec<ComparisonRow> {
    let cells: Vec<(usize, ModelKind, Method)> = (0..sets.len())
        .flat_map(|i| {
            models
                .iter()
                .flat_map(move |&m| methods.iter().map(move |&meth| (i, m, meth)))
        })
        .collect();
    let mut rows: Vec<ComparisonRow> = cells
        .par_iter()
        .map(|&(i, kind, method)| {
            let (provider, data) = &sets[i];
            match fit(data, kind, method, cfg) {
                Ok(mut r) => {
                    r.provider = provider.clone();
                    ComparisonRow {
                        provider: provider.clone(),
                        model: kind.number(),
                        method,
                        result: Some(r),
                        error: None,
                    }
                }
                Err(e) => ComparisonRow {
                    provider: provider.clone(),
                    model: kind.number(),
                    method,
                    result: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let key = |r: &ComparisonRow| r.result.as_ref().map(|c| (c.aic, c.bic, c.product));
    rows.sort_by(|a, b| match (key(a), key(b)) {
        (Some(x), Some(y)) => {
            x.0.total_cmp(&y.0)
                .then(x.1.total_cmp(&y.1))
                .then(x.2.total_cmp(&y.2))
        }
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ForecastCurve, PreparedSegment};

    fn set_from_errors(vs: Vec<Vec<f64>>, p: f64, dt: f64) -> PreparedSet {
        let segments = vs
            .into_iter()
            .enumerate()
            .map(|(j, v)| {
                let n = v.len().max(2);
                PreparedSegment {
                    id: format!("s{j}"),
                    provider: "test".into(),
                    dt,
                    x: v.iter().map(|e| e + p).collect(),
                    v,
                    curve: ForecastCurve::new(vec![0.0, (n - 1) as f64 * dt], vec![p, p], 0.02)
                        .unwrap(),
                }
            })
            .collect();
        PreparedSet {
            epsilon: 0.02,
            segments,
        }
    }

    #[test]
    fn theta_guess_on_noiseless_decay() {
        let (c, dt) = (2.0f64, 0.1f64);
        let v: Vec<f64> = (0..6).map(|i| 0.2 * (1.0 - c * dt).powi(i)).collect();
        let (g, clamped) = guess_theta0(&set_from_errors(vec![v], 0.5, dt)).unwrap();
        assert!((g - 2.0).abs() < 1e-12 && !clamped);
    }

    #[test]
    fn theta_guess_clamps_and_rejects() {
        let (g, clamped) = guess_theta0(&set_from_errors(vec![vec![0.1, 0.1]], 0.5, 0.1)).unwrap();
        assert_eq!(g, MIN_RATE_GUESS);
        assert!(clamped);
        assert!(guess_theta0(&set_from_errors(vec![vec![0.0, 0.1]], 0.5, 0.1)).is_err());
    }

    #[test]
    fn product_guess_hand_example() {
        // x = v + p with p = 1/2: v = (0, 1/4, 0) gives x = (1/2, 3/4, 1/2).
        // numerator 1/16 + 1/16 = 1/8; denominator 2 * (1/2) * (3/16 + 1/4) = 7/16.
        let g = guess_product(&set_from_errors(vec![vec![0.0, 0.25, 0.0]], 0.5, 0.5)).unwrap();
        assert!((g - 2.0 / 7.0).abs() < 1e-14);
        let g = guess_product(&set_from_errors(vec![vec![0.1; 5]], 0.5, 0.1)).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn degenerate_data_is_flagged_not_fatal() {
        let data = set_from_errors(vec![vec![0.0; 20]; 2], 0.5, 1.0 / 144.0);
        let cfg = CalibrationConfig {
            optimizer: OptimizerConfig {
                max_evals: 300,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = fit_v_space(&data, ModelKind::DerivativeTracking, VProxy::Beta, &cfg).unwrap();
        assert!(r.flags.iter().any(|f| f == "theta0_guess_degenerate"));
        assert!(r
            .flags
            .iter()
            .any(|f| f.ends_with("_at_bound") || f.starts_with("infeasible")));
        assert!(r.product < 1e-3);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("nope").is_err());
        assert_eq!(
            serde_json::to_string(&Method::ZFixedPoint).unwrap(),
            "\"z_fixed_point\""
        );
    }

    #[test]
    fn delta_at_lower_end_for_zero_initial_errors() {
        let data = set_from_errors(vec![vec![0.0, 0.01, 0.0]; 4], 0.5, 1.0 / 144.0);
        let params = ModelParams::tracking(2.0, 0.05).unwrap();
        let d = fit_delta(&params, &data, &CalibrationConfig::default()).unwrap();
        assert!(d.at_boundary);
        assert!((d.delta - delta_range(1.0 / 144.0).0).abs() / d.delta < 1e-3);
    }

    #[test]
    fn comparison_survives_degenerate_cells() {
        let data = set_from_errors(vec![vec![0.0]], 0.5, 1.0 / 144.0);
        let rows = compare_models(
            &[("a".into(), data)],
            &[ModelKind::DerivativeTracking],
            &[Method::VBeta, Method::VGauss],
            &CalibrationConfig::default(),
        );
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.error.is_some()));
    }
}
