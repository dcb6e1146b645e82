//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_EPSILON;
use crate::error::{Error, Result};
use crate::ingest::IngestConfig;
use crate::moments::IntegratorConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "FORECAST_SDE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub epsilon: f64,
    pub ingest: IngestConfig,
    pub integrator: IntegratorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epsilon: DEFAULT_EPSILON,
            ingest: IngestConfig::default(),
            integrator: IntegratorConfig::default(),
        }
    }
}

pub const KEYS: [&str; 10] = [
    "epsilon",
    "plateau_len",
    "flat_tol",
    "gap_tol",
    "segment_hours",
    "capacity_mw",
    "delta_minutes",
    "forecast_minutes",
    "segment_start_hour",
    "substeps",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

impl RunConfig {
    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "plateau_len" => self.ingest.curtailment.plateau_len = parse_value(key, value)?,
            "flat_tol" => self.ingest.curtailment.flat_tol = parse_value(key, value)?,
            "gap_tol" => self.ingest.curtailment.gap_tol = parse_value(key, value)?,
            "segment_hours" => self.ingest.segment_hours = parse_value(key, value)?,
            "capacity_mw" => self.ingest.capacity_mw = parse_value(key, value)?,
            "delta_minutes" => self.ingest.delta_minutes = parse_value(key, value)?,
            "forecast_minutes" => self.ingest.forecast_minutes = parse_value(key, value)?,
            "segment_start_hour" => self.ingest.segment_start_hour = parse_value(key, value)?,
            "substeps" => self.integrator.substeps = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{source}:{}: expected key = value", i + 1))
            })?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("{source}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Defaults overlaid with the given file, or the one named by
    /// `FORECAST_SDE_CONFIG` when no path is passed.
    pub fn load(path: Option<&Path>) -> Result<(Self, Option<PathBuf>)> {
        let path = path.map(Path::to_path_buf).or_else(|| {
            std::env::var_os(CONFIG_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        });
        let mut cfg = RunConfig::default();
        if let Some(p) = &path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            cfg.apply_text(&text, &p.display().to_string())?;
        }
        cfg.validate()?;
        Ok((cfg, path))
    }

    pub fn validate(&self) -> Result<()> {
        crate::data::check_epsilon(self.epsilon)
            .and_then(|_| self.ingest.validate())
            .and_then(|_| self.integrator.validate())
            .map_err(|e| match e {
                Error::Config(_) => e,
                other => Error::Config(other.to_string()),
            })
    }

    /// Every key with its effective value, for manifests.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let c = &self.ingest.curtailment;
        [
            ("epsilon", self.epsilon.to_string()),
            ("plateau_len", c.plateau_len.to_string()),
            ("flat_tol", c.flat_tol.to_string()),
            ("gap_tol", c.gap_tol.to_string()),
            ("segment_hours", self.ingest.segment_hours.to_string()),
            ("capacity_mw", self.ingest.capacity_mw.to_string()),
            ("delta_minutes", self.ingest.delta_minutes.to_string()),
            ("forecast_minutes", self.ingest.forecast_minutes.to_string()),
            (
                "segment_start_hour",
                self.ingest.segment_start_hour.to_string(),
            ),
            ("substeps", self.integrator.substeps.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "# comment\nepsilon = 0.05\ncapacity_mw=100 # trailing\n\n",
            "t",
        )
        .unwrap();
        assert_eq!(cfg.epsilon, 0.05);
        assert_eq!(cfg.ingest.capacity_mw, 100.0);
        assert_eq!(cfg.ingest.segment_hours, 24);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("colour = red", "t").is_err());
        assert!(cfg.apply_text("epsilon 0.1", "t").is_err());
        let err = cfg
            .apply_text("\nsubsteps = many", "cfg")
            .unwrap_err()
            .to_string();
        assert!(err.contains("cfg:2"), "{err}");
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("gap_tol", "0.2").unwrap();
        let mut again = RunConfig::default();
        for (k, v) in cfg.snapshot() {
            again.set(&k, &v).unwrap();
        }
        assert_eq!(again, cfg);
        assert_eq!(cfg.snapshot().len(), KEYS.len());
    }
}
