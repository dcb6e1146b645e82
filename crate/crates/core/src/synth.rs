//! Synthetic forecasts and production series drawn from the models.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ForecastCurve, PreparedSet, Segment, SECONDS_PER_TIME_UNIT};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::simulate::{path_rng, simulate_path, InitialCondition, Scheme, SimConfig};

const FORECAST_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_segments: usize,
    /// Transitions per segment.
    pub n_obs: usize,
    /// Observations per forecast knot interval.
    pub knot_stride: usize,
    /// Observation spacing in days.
    pub dt: f64,
    /// Euler steps per observation interval.
    pub substeps: usize,
    /// Standard deviation of each forecast knot increment.
    pub forecast_step_sd: f64,
    /// Forecast knots are reflected into this range.
    pub forecast_range: (f64, f64),
    /// Lag of the zero-error start before each segment; `None` starts on the forecast.
    pub delta: Option<f64>,
    pub provider: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_segments: 80,
            n_obs: 144,
            knot_stride: 6,
            dt: 1.0 / 144.0,
            substeps: 10,
            forecast_step_sd: 0.05,
            forecast_range: (0.1, 0.9),
            delta: None,
            provider: "synthetic".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.forecast_range;
        if self.n_segments == 0
            || self.n_obs == 0
            || self.knot_stride == 0
            || self.n_obs % self.knot_stride != 0
            || self.substeps == 0
        {
            return Err(Error::Config(
                "synthetic sizes must be positive and n_obs a multiple of knot_stride".into(),
            ));
        }
        if !(self.dt > 0.0 && self.forecast_step_sd >= 0.0 && 0.0 < lo && lo < hi && hi < 1.0) {
            return Err(Error::Config(
                "invalid synthetic spacing or forecast range".into(),
            ));
        }
        Ok(())
    }
}

fn reflect_into(mut x: f64, lo: f64, hi: f64) -> f64 {
    for _ in 0..64 {
        if x < lo {
            x = 2.0 * lo - x;
        } else if x > hi {
            x = 2.0 * hi - x;
        } else {
            return x;
        }
    }
    x.clamp(lo, hi)
}

/// Reflected Gaussian random walk of `n_knots` forecast values.
pub fn random_forecast(
    rng: &mut ChaCha8Rng,
    n_knots: usize,
    step_sd: f64,
    range: (f64, f64),
) -> Vec<f64> {
    let (lo, hi) = range;
    let mut p = lo + (hi - lo) * rng.random::<f64>();
    let mut out = Vec::with_capacity(n_knots);
    for _ in 0..n_knots {
        out.push(p);
        let step: f64 = rng.sample(StandardNormal);
        p = reflect_into(p + step_sd * step, lo, hi);
    }
    out
}

fn base_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2020, 1, 1, 13, 0, 0)
        .single()
        .expect("valid timestamp")
}

/// Segments with random forecasts and production simulated from `params`.
pub fn synthetic_segments(params: &ModelParams, cfg: &SynthConfig) -> Result<Vec<Segment>> {
    cfg.validate()?;
    let n_knots = cfg.n_obs / cfg.knot_stride + 1;
    let grid: Vec<f64> = (0..=cfg.n_obs).map(|i| i as f64 * cfg.dt).collect();
    let sim = SimConfig {
        n_paths: 1,
        substeps: cfg.substeps,
        scheme: Scheme::ZSpace,
        seed: cfg.seed,
    };
    let initial = match cfg.delta {
        Some(d) => InitialCondition::Lagged(d),
        None => InitialCondition::Error(0.0),
    };
    (0..cfg.n_segments)
        .map(|j| {
            let mut rng = path_rng(cfg.seed ^ FORECAST_STREAM_SALT, j);
            let p_raw =
                random_forecast(&mut rng, n_knots, cfg.forecast_step_sd, cfg.forecast_range);
            let times = (0..n_knots)
                .map(|k| (k * cfg.knot_stride) as f64 * cfg.dt)
                .collect();
            let curve = ForecastCurve::new(times, p_raw.clone(), 0.5 * cfg.forecast_range.0)?;
            let path = simulate_path(params, &curve, &grid, &sim, initial, j)?;
            Ok(Segment {
                id: format!("{}-{j:04}", cfg.provider),
                provider: cfg.provider.clone(),
                start: base_start() + Duration::days(j as i64),
                delta_seconds: cfg.dt * SECONDS_PER_TIME_UNIT,
                x: path.x,
                p_raw,
                curtailed: false,
            })
        })
        .collect()
}

/// [`synthetic_segments`] prepared for calibration.
pub fn synthetic_prepared(
    params: &ModelParams,
    cfg: &SynthConfig,
    epsilon: f64,
) -> Result<PreparedSet> {
    PreparedSet::from_segments(&synthetic_segments(params, cfg)?, epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSynthConfig {
    pub days: usize,
    pub capacity_mw: f64,
    /// Zero-based days that receive an injected curtailment plateau.
    pub curtailed_days: Vec<usize>,
    pub forecast_step_sd: f64,
    pub forecast_range: (f64, f64),
    pub seed: u64,
}

impl Default for CsvSynthConfig {
    fn default() -> Self {
        CsvSynthConfig {
            days: 10,
            capacity_mw: 100.0,
            curtailed_days: Vec::new(),
            forecast_step_sd: 0.04,
            forecast_range: (0.2, 0.8),
            seed: 0,
        }
    }
}

/// Samples per day at ten-minute resolution.
const SAMPLES_PER_DAY: usize = 144;
const PLATEAU_OFFSET: usize = 30;
const PLATEAU_LEN: usize = 18;

/// A continuous ten-minute production/forecast CSV (`timestamp,production_mw,forecast_mw`)
/// starting at 13:00 UTC, with hourly forecast knots interpolated to every row.
pub fn synthetic_csv(params: &ModelParams, cfg: &CsvSynthConfig) -> Result<String> {
    if cfg.days == 0 || !(cfg.capacity_mw > 0.0) {
        return Err(Error::Config("days and capacity must be positive".into()));
    }
    let n = cfg.days * SAMPLES_PER_DAY;
    let dt = 1.0 / SAMPLES_PER_DAY as f64;
    let hours = cfg.days * 24;
    let mut rng = path_rng(cfg.seed ^ FORECAST_STREAM_SALT, 0);
    let knots = random_forecast(
        &mut rng,
        hours + 1,
        cfg.forecast_step_sd,
        cfg.forecast_range,
    );
    let knot_times = (0..=hours).map(|k| (k * 6) as f64 * dt).collect();
    let curve = ForecastCurve::new(knot_times, knots.clone(), 0.5 * cfg.forecast_range.0)?;
    let grid: Vec<f64> = (0..=n).map(|i| i as f64 * dt).collect();
    let sim = SimConfig {
        n_paths: 1,
        substeps: 10,
        scheme: Scheme::ZSpace,
        seed: cfg.seed,
    };
    let mut x = simulate_path(params, &curve, &grid, &sim, InitialCondition::Error(0.0), 0)?.x;
    let forecast: Vec<f64> = (0..=n)
        .map(|i| {
            let k = (i / 6).min(hours - 1);
            let w = (i - 6 * k) as f64 / 6.0;
            knots[k] * (1.0 - w) + knots[k + 1] * w
        })
        .collect();
    for &day in &cfg.curtailed_days {
        if day >= cfg.days {
            return Err(Error::Config(format!(
                "curtailed day {day} beyond {} days",
                cfg.days
            )));
        }
        let start = day * SAMPLES_PER_DAY + PLATEAU_OFFSET;
        let window = start..start + PLATEAU_LEN;
        let low = window
            .clone()
            .map(|i| forecast[i])
            .fold(f64::INFINITY, f64::min);
        let level = (low - 0.25).max(0.0);
        for i in window {
            x[i] = level;
        }
    }
    let mut out = String::from("timestamp,production_mw,forecast_mw\n");
    let t0 = base_start();
    for i in 0..=n {
        let ts = t0 + Duration::minutes(10 * i as i64);
        out.push_str(&format!(
            "{},{:.6},{:.6}\n",
            ts.format("%Y-%m-%dT%H:%M:%SZ"),
            x[i] * cfg.capacity_mw,
            forecast[i] * cfg.capacity_mw
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{detect_curtailment, CurtailmentConfig};

    #[test]
    fn segments_are_valid_and_deterministic() {
        let params = ModelParams::tracking(1.9, 0.05).unwrap();
        let cfg = SynthConfig {
            n_segments: 3,
            seed: 5,
            ..Default::default()
        };
        let a = synthetic_segments(&params, &cfg).unwrap();
        let b = synthetic_segments(&params, &cfg).unwrap();
        assert_eq!(a, b);
        for s in &a {
            s.validate().unwrap();
            assert_eq!(s.x.len(), 145);
            assert_eq!(s.p_raw.len(), 25);
            assert_eq!(s.x[0], s.p_raw[0]);
            assert!(!detect_curtailment(s, &CurtailmentConfig::default()));
        }
        assert_ne!(a[0].x, a[1].x);
    }

    #[test]
    fn forecast_walk_stays_in_range() {
        let mut rng = path_rng(1, 0);
        let p = random_forecast(&mut rng, 500, 0.3, (0.1, 0.9));
        assert!(p.iter().all(|v| (0.1..=0.9).contains(v)));
    }

    #[test]
    fn csv_has_expected_rows() {
        let params = ModelParams::tracking(1.9, 0.05).unwrap();
        let csv = synthetic_csv(
            &params,
            &CsvSynthConfig {
                days: 2,
                curtailed_days: vec![1],
                ..Default::default()
            },
        )
        .unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 2 * 144 + 1);
        assert!(lines[1].starts_with("2020-01-01T13:00:00Z,"));
    }
}
