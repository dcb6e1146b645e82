//! Monte Carlo paths, transition histograms and pointwise bands.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ForecastCurve;
use crate::error::{Error, Result};
use crate::likelihood::matched_beta_shapes;
use crate::model::{self, ModelParams};
use crate::moments::{integrate_v_moments, IntegratorConfig};

/// Reflection margin of the clamped error-space scheme.
pub const V_SCHEME_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Euler-Maruyama on the Lamperti process, mapped back through the inverse transform.
    #[default]
    ZSpace,
    /// Euler-Maruyama on the state, reflected inside `[1e-9, 1 - 1e-9]`.
    VSpaceClamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: usize,
    /// Euler steps per observation interval.
    pub substeps: usize,
    pub scheme: Scheme,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_paths: 1000,
            substeps: 10,
            scheme: Scheme::ZSpace,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Start every path at this forecast error.
    Error(f64),
    /// Draw the first error from the matched Beta of a transition that starts
    /// at zero error `delta` before the first grid time.
    Lagged(f64),
}

/// One simulated trajectory of the normalized state on the observation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub x: Vec<f64>,
    /// Reflections at a range end (both schemes).
    pub reflections: usize,
    /// The initial state had to be clamped into `[0, 1]`.
    pub start_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBundle {
    pub times: Vec<f64>,
    /// `paths[k][i]` is path `k` at `times[i]`.
    pub paths: Vec<Vec<f64>>,
    pub reflections: usize,
    pub start_clamps: usize,
    /// Indices of paths dropped because the state became non-finite.
    pub failed: Vec<usize>,
    pub warnings: Vec<String>,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Values of every path at grid index `i`.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[i]).collect()
    }
}

fn check_sim_params(params: &ModelParams) -> Result<()> {
    if !(params.theta0.is_finite() && params.theta0 > 0.0) {
        return Err(Error::InvalidParameter {
            name: "theta0",
            value: params.theta0,
            reason: "must be positive and finite",
        });
    }
    if !(params.alpha.is_finite() && params.alpha >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "alpha",
            value: params.alpha,
            reason: "must be non-negative and finite",
        });
    }
    Ok(())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::domain("simulate", "grid needs at least two times"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::domain(
            "simulate",
            "grid times must be finite and strictly increasing",
        ));
    }
    Ok(())
}

/// Per-path random stream: the seed selects the generator, the path index the stream.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Sampler for the first state of a path.
#[derive(Debug, Clone)]
enum Start {
    Fixed(f64),
    Beta {
        dist: Beta<f64>,
        half_width: f64,
        p0: f64,
    },
}

impl Start {
    fn new(
        params: &ModelParams,
        curve: &ForecastCurve,
        t0: f64,
        initial: InitialCondition,
    ) -> Result<Start> {
        match initial {
            InitialCondition::Error(v0) => {
                let x0 = v0 + curve.value(t0);
                if !(-1e-12..=1.0 + 1e-12).contains(&x0) {
                    return Err(Error::domain(
                        "simulate",
                        format!("initial state v0 + p = {x0} outside [0, 1]"),
                    ));
                }
                Ok(Start::Fixed(x0))
            }
            InitialCondition::Lagged(delta) => {
                if !(delta.is_finite() && delta > 0.0) {
                    return Err(Error::InvalidParameter {
                        name: "delta",
                        value: delta,
                        reason: "must be positive and finite",
                    });
                }
                if params.alpha == 0.0 {
                    return Ok(Start::Fixed(curve.value(t0)));
                }
                let shifted = shift_curve(curve, t0)?;
                let extended = shifted.extended_backward(delta)?;
                let steps = IntegratorConfig {
                    substeps: ((delta * 144.0 * 20.0).ceil() as usize).clamp(20, 20_000),
                };
                let m = integrate_v_moments(0.0, -delta, 0.0, &extended, params, &steps)?;
                let (shapes, _) = matched_beta_shapes(m.m1, m.variance(), curve.epsilon())?;
                let dist = Beta::new(shapes.xi1, shapes.xi2)
                    .map_err(|e| Error::Numerical(format!("initial Beta: {e}")))?;
                Ok(Start::Beta {
                    dist,
                    half_width: shapes.half_width(),
                    p0: curve.value(t0),
                })
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> (f64, bool) {
        let x = match self {
            Start::Fixed(x) => *x,
            Start::Beta {
                dist,
                half_width,
                p0,
            } => {
                let u: f64 = dist.sample(rng);
                p0 + half_width * (2.0 * u - 1.0)
            }
        };
        let clamped = x.clamp(0.0, 1.0);
        (clamped, clamped != x)
    }
}

/// The curve restricted to start at `t0`: knots before `t0` are dropped and a
/// knot is inserted at `t0`. Lagged starts extend backward from here.
fn shift_curve(curve: &ForecastCurve, t0: f64) -> Result<ForecastCurve> {
    let mut times = vec![t0];
    let mut values = vec![curve.value(t0)];
    for (&t, &v) in curve.knot_times().iter().zip(curve.knot_values()) {
        if t > t0 + 1e-12 {
            times.push(t);
            values.push(v);
        }
    }
    if times.len() < 2 {
        times.push(t0 + 1.0);
        values.push(curve.value(t0 + 1.0));
    }
    ForecastCurve::new(times, values, curve.epsilon())
}

fn reflect_z(mut z: f64, z_min: f64) -> (f64, usize) {
    let mut n = 0;
    while z > 0.0 || z < z_min {
        if !z.is_finite() || n > 64 {
            return (f64::NAN, n);
        }
        z = if z > 0.0 { -z } else { 2.0 * z_min - z };
        n += 1;
    }
    (z, n)
}

fn reflect_x(mut x: f64) -> (f64, usize) {
    let (lo, hi) = (V_SCHEME_MARGIN, 1.0 - V_SCHEME_MARGIN);
    let mut n = 0;
    while x < lo || x > hi {
        if !x.is_finite() || n > 64 {
            return (f64::NAN, n);
        }
        x = if x < lo { 2.0 * lo - x } else { 2.0 * hi - x };
        n += 1;
    }
    (x, n)
}

/// Deterministic state ODE `x' = tracked slope - theta_t (x - p)`, used when there is no diffusion.
fn deterministic_path(
    params: &ModelParams,
    curve: &ForecastCurve,
    grid: &[f64],
    x0: f64,
) -> Result<Vec<f64>> {
    let mut x = x0;
    let mut out = Vec::with_capacity(grid.len());
    out.push(x);
    for w in grid.windows(2) {
        for piece in curve.pieces(w[0], w[1]) {
            let [next] = crate::moments::rk4_integrate(
                |t, y| {
                    let p = piece.value(t);
                    let theta = model::theta_at(params, p, piece.slope);
                    [params.tracked_slope(piece.slope) - theta * (y[0] - p)]
                },
                [x],
                piece.start,
                piece.end,
                20,
            )?;
            x = next;
        }
        out.push(x.clamp(0.0, 1.0));
    }
    Ok(out)
}

/// Simulate path number `index`; the same `(seed, index)` always gives the same path.
pub fn simulate_path(
    params: &ModelParams,
    curve: &ForecastCurve,
    grid: &[f64],
    cfg: &SimConfig,
    initial: InitialCondition,
    index: usize,
) -> Result<SimPath> {
    check_sim_params(params)?;
    check_grid(grid)?;
    let start = Start::new(params, curve, grid[0], initial)?;
    run_path(params, curve, grid, cfg, &start, index)
}

fn run_path(
    params: &ModelParams,
    curve: &ForecastCurve,
    grid: &[f64],
    cfg: &SimConfig,
    start: &Start,
    index: usize,
) -> Result<SimPath> {
    let mut rng = path_rng(cfg.seed, index);
    let (x0, start_clamped) = start.draw(&mut rng);
    if params.alpha == 0.0 {
        return Ok(SimPath {
            x: deterministic_path(params, curve, grid, x0)?,
            reflections: 0,
            start_clamped,
        });
    }
    let c = params.product();
    let z_min = params.z_min();
    let mut reflections = 0;
    let mut out = Vec::with_capacity(grid.len());
    out.push(x0);
    let mut z = model::z_of_state(x0, c);
    let mut x = x0;
    for w in grid.windows(2) {
        let h = (w[1] - w[0]) / cfg.substeps as f64;
        let sqrt_h = h.sqrt();
        for k in 0..cfg.substeps {
            let t = w[0] + k as f64 * h;
            let p = curve.value(t);
            let p_dot = curve.slope(t);
            let noise: f64 = StandardNormal.sample(&mut rng);
            match cfg.scheme {
                Scheme::ZSpace => {
                    let a = model::drift_z_guarded(z, p, p_dot, params).value;
                    let (zn, n) = reflect_z(z + a * h + sqrt_h * noise, z_min);
                    z = zn;
                    reflections += n;
                }
                Scheme::VSpaceClamped => {
                    let theta = model::theta_at(params, p, p_dot);
                    let drift = params.tracked_slope(p_dot) - theta * (x - p);
                    let diff = (2.0 * c * x * (1.0 - x)).max(0.0).sqrt();
                    let (xn, n) = reflect_x(x + drift * h + diff * sqrt_h * noise);
                    x = xn;
                    reflections += n;
                }
            }
        }
        let value = match cfg.scheme {
            Scheme::ZSpace => model::state_of_z(z, c),
            Scheme::VSpaceClamped => x,
        };
        if !value.is_finite() {
            return Err(Error::Numerical(format!(
                "path {index} became non-finite at t = {}",
                w[1]
            )));
        }
        out.push(value);
    }
    Ok(SimPath {
        x: out,
        reflections,
        start_clamped,
    })
}

/// Simulate `cfg.n_paths` independent paths on `grid`.
pub fn simulate_paths(
    params: &ModelParams,
    curve: &ForecastCurve,
    grid: &[f64],
    cfg: &SimConfig,
    initial: InitialCondition,
) -> Result<PathBundle> {
    check_sim_params(params)?;
    check_grid(grid)?;
    if cfg.n_paths == 0 || cfg.substeps == 0 {
        return Err(Error::Config(
            "n_paths and substeps must be at least 1".into(),
        ));
    }
    let mut warnings = Vec::new();
    if params.alpha > 0.0 {
        let report = model::check_conditions(curve, params, grid);
        if !report.violations.is_empty() {
            let msg = format!(
                "{} boundary-condition violations on the simulation grid",
                report.violations.len()
            );
            log::debug!("{msg}");
            warnings.push(msg);
        }
    }
    let start = Start::new(params, curve, grid[0], initial)?;
    let results: Vec<Result<SimPath>> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|k| run_path(params, curve, grid, cfg, &start, k))
        .collect();
    let mut bundle = PathBundle {
        times: grid.to_vec(),
        paths: Vec::with_capacity(cfg.n_paths),
        reflections: 0,
        start_clamps: 0,
        failed: Vec::new(),
        warnings,
    };
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(path) => {
                bundle.reflections += path.reflections;
                bundle.start_clamps += path.start_clamped as usize;
                bundle.paths.push(path.x);
            }
            Err(Error::Numerical(msg)) => {
                log::warn!("{msg}");
                bundle.failed.push(k);
            }
            Err(e) => return Err(e),
        }
    }
    if !bundle.failed.is_empty() {
        bundle.warnings.push(format!(
            "{} paths dropped after non-finite states",
            bundle.failed.len()
        ));
    }
    Ok(bundle)
}

/// Sum of squared increments.
pub fn quadratic_variation(path: &[f64]) -> f64 {
    path.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges, one more than the number of bins.
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.density.len()
    }

    pub fn width(&self, i: usize) -> f64 {
        self.edges[i + 1] - self.edges[i]
    }

    /// Probability mass per bin.
    pub fn masses(&self) -> Vec<f64> {
        (0..self.n_bins())
            .map(|i| self.density[i] * self.width(i))
            .collect()
    }
}

/// Width of the single bin used when every value is identical.
pub const SPIKE_WIDTH: f64 = 1e-6;

/// Density histogram of `values` on `bins` equal-width bins over `[lo, hi]`;
/// values outside the range are dropped.
pub fn histogram_on(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if bins == 0 || !(hi > lo) {
        return Err(Error::domain(
            "histogram",
            "need at least one bin and hi > lo",
        ));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    let mut total = 0usize;
    for &v in values {
        if !(v >= lo && v <= hi) {
            continue;
        }
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(Error::domain("histogram", "no values inside the range"));
    }
    let density = counts
        .iter()
        .map(|&n| n as f64 / (total as f64 * width))
        .collect();
    Ok(Histogram { edges, density })
}

/// First differences of every series, pooled.
pub fn transitions<S: AsRef<[f64]>>(series: &[S]) -> Vec<f64> {
    series
        .iter()
        .flat_map(|s| {
            s.as_ref()
                .windows(2)
                .map(|w| w[1] - w[0])
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Density histogram of first differences over their observed range.
pub fn transition_histogram<S: AsRef<[f64]>>(series: &[S], bins: usize) -> Result<Histogram> {
    let d = transitions(series);
    if d.is_empty() {
        return Err(Error::domain("transition_histogram", "no transitions"));
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("transition_histogram", "non-finite values"));
    }
    let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return histogram_on(&d, lo - 0.5 * SPIKE_WIDTH, lo + 0.5 * SPIKE_WIDTH, 1);
    }
    histogram_on(&d, lo, hi, bins)
}

/// Total variation distance between two histograms on the same edges.
pub fn total_variation(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.edges != b.edges {
        return Err(Error::domain(
            "total_variation",
            "histograms use different bins",
        ));
    }
    Ok(0.5
        * a.masses()
            .iter()
            .zip(b.masses())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    pub times: Vec<f64>,
    /// Sorted ascending, so each band contains the previous one.
    pub bands: Vec<Band>,
    pub warnings: Vec<String>,
}

impl BandSet {
    pub fn levels(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.level).collect()
    }
}

/// Minimum ensemble size for bands.
pub const MIN_BAND_PATHS: usize = 100;

/// Linear-interpolation quantile of sorted data (the common "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise central quantile bands of an ensemble.
pub fn empirical_bands(bundle: &PathBundle, levels: &[f64]) -> Result<BandSet> {
    let n = bundle.n_paths();
    if n < MIN_BAND_PATHS {
        return Err(Error::domain(
            "empirical_bands",
            format!("{n} paths; at least {MIN_BAND_PATHS} are needed"),
        ));
    }
    if levels.is_empty() || levels.iter().any(|l| !(0.0..1.0).contains(l)) {
        return Err(Error::domain(
            "empirical_bands",
            "levels must lie in [0, 1)",
        ));
    }
    let mut levels = levels.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut warnings = Vec::new();
    let outer = levels[levels.len() - 1];
    if n as f64 * (1.0 - outer) / 2.0 < 10.0 {
        let msg =
            format!("{n} paths give fewer than 10 expected exceedances per tail at level {outer}");
        log::debug!("{msg}");
        warnings.push(msg);
    }
    let n_times = bundle.times.len();
    let mut bands: Vec<Band> = levels
        .iter()
        .map(|&level| Band {
            level,
            lower: Vec::with_capacity(n_times),
            upper: Vec::with_capacity(n_times),
        })
        .collect();
    for i in 0..n_times {
        let mut col = bundle.column(i);
        col.sort_by(f64::total_cmp);
        for band in bands.iter_mut() {
            band.lower
                .push(quantile_sorted(&col, 0.5 * (1.0 - band.level)));
            band.upper
                .push(quantile_sorted(&col, 0.5 * (1.0 + band.level)));
        }
    }
    Ok(BandSet {
        times: bundle.times.clone(),
        bands,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> ForecastCurve {
        ForecastCurve::new(vec![0.0, 0.5, 1.0], vec![0.3, 0.6, 0.4], 0.02).unwrap()
    }

    fn grid(n: usize, dt: f64) -> Vec<f64> {
        (0..=n).map(|i| i as f64 * dt).collect()
    }

    #[test]
    fn zero_diffusion_follows_forecast() {
        let params = ModelParams {
            alpha: 0.0,
            ..ModelParams::tracking(2.0, 0.05).unwrap()
        };
        let g = grid(144, 1.0 / 144.0);
        let b = simulate_paths(
            &params,
            &ramp(),
            &g,
            &SimConfig::default(),
            InitialCondition::Error(0.0),
        )
        .unwrap();
        for (i, &t) in g.iter().enumerate() {
            assert!((b.paths[3][i] - ramp().value(t)).abs() < 1e-9);
        }
    }

    #[test]
    fn paths_are_reproducible_and_bounded() {
        let params = ModelParams::tracking(2.0, 0.3).unwrap();
        let cfg = SimConfig {
            n_paths: 50,
            seed: 11,
            ..Default::default()
        };
        let g = grid(144, 1.0 / 144.0);
        let a = simulate_paths(&params, &ramp(), &g, &cfg, InitialCondition::Lagged(0.05)).unwrap();
        let b = simulate_paths(&params, &ramp(), &g, &cfg, InitialCondition::Lagged(0.05)).unwrap();
        assert_eq!(a, b);
        assert!(a.paths.iter().flatten().all(|x| (0.0..=1.0).contains(x)));
        let single = simulate_path(
            &params,
            &ramp(),
            &g,
            &cfg,
            InitialCondition::Lagged(0.05),
            7,
        )
        .unwrap();
        assert_eq!(single.x, a.paths[7]);
        let other = SimConfig { seed: 12, ..cfg };
        let c =
            simulate_paths(&params, &ramp(), &g, &other, InitialCondition::Lagged(0.05)).unwrap();
        assert_ne!(a.paths, c.paths);
    }

    #[test]
    fn clamped_scheme_stays_inside() {
        let params = ModelParams::tracking(1.0, 1.0).unwrap();
        let cfg = SimConfig {
            n_paths: 20,
            scheme: Scheme::VSpaceClamped,
            ..Default::default()
        };
        let b = simulate_paths(
            &params,
            &ramp(),
            &grid(144, 1.0 / 144.0),
            &cfg,
            InitialCondition::Error(0.0),
        )
        .unwrap();
        assert!(b
            .paths
            .iter()
            .flatten()
            .all(|x| (V_SCHEME_MARGIN..=1.0 - V_SCHEME_MARGIN).contains(x)));
    }

    #[test]
    fn qv_examples() {
        assert_eq!(quadratic_variation(&[0.4; 5]), 0.0);
        assert!((quadratic_variation(&[0.0, 0.1, 0.0]) - 0.02).abs() < 1e-15);
    }

    #[test]
    fn histogram_normalization_and_spike() {
        let series = vec![(0..200)
            .map(|i| ((i * 37) % 101) as f64 / 101.0)
            .collect::<Vec<_>>()];
        let h = transition_histogram(&series, 17).unwrap();
        let mass: f64 = h.masses().iter().sum();
        assert!((mass - 1.0).abs() < 1e-12);
        let h = transition_histogram(&[vec![0.2; 10]], 17).unwrap();
        assert_eq!(h.n_bins(), 1);
        assert!(h.edges[0] < 0.0 && h.edges[1] > 0.0);
        assert!((h.masses()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bands_collapse_and_nest() {
        let constant = PathBundle {
            times: vec![0.0, 1.0],
            paths: vec![vec![0.3, 0.5]; 120],
            reflections: 0,
            start_clamps: 0,
            failed: vec![],
            warnings: vec![],
        };
        let b = empirical_bands(&constant, &[0.9, 0.0]).unwrap();
        assert_eq!(b.levels(), vec![0.0, 0.9]);
        for band in &b.bands {
            assert_eq!(band.lower, vec![0.3, 0.5]);
            assert_eq!(band.upper, vec![0.3, 0.5]);
        }
        let varied = PathBundle {
            paths: (0..200)
                .map(|k| vec![k as f64 / 200.0, 1.0 - k as f64 / 200.0])
                .collect(),
            ..constant.clone()
        };
        let b = empirical_bands(&varied, &[0.5, 0.0, 0.99]).unwrap();
        let med = quantile_sorted(&varied.column(0).iter().copied().collect::<Vec<_>>(), 0.5);
        assert_eq!(b.bands[0].lower[0], med);
        for w in b.bands.windows(2) {
            for i in 0..2 {
                assert!(w[1].lower[i] <= w[0].lower[i] && w[1].upper[i] >= w[0].upper[i]);
            }
        }
        assert!(!b.warnings.is_empty());
        let small = PathBundle {
            paths: vec![vec![0.3, 0.5]; 10],
            ..constant
        };
        assert!(empirical_bands(&small, &[0.9]).is_err());
    }

    #[test]
    fn quantile_rule() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-15);
    }
}
