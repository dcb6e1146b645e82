//! Raw production/forecast CSV ingestion into daily segments.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, NaiveTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::data::{detect_curtailment, split_train_test, CurtailmentConfig, Segment, SegmentSet};
use crate::error::{Error, Result};

/// Parse failures listed in full before the rest are summarized.
const MAX_LISTED_ERRORS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub capacity_mw: f64,
    pub segment_hours: u32,
    pub delta_minutes: u32,
    pub forecast_minutes: u32,
    /// UTC hour at which each daily segment starts.
    pub segment_start_hour: u32,
    pub curtailment: CurtailmentConfig,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            capacity_mw: 1474.0,
            segment_hours: 24,
            delta_minutes: 10,
            forecast_minutes: 60,
            segment_start_hour: 13,
            curtailment: CurtailmentConfig::default(),
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_mw.is_finite() && self.capacity_mw > 0.0) {
            return Err(Error::Config(format!(
                "capacity_mw must be positive, got {}",
                self.capacity_mw
            )));
        }
        if self.delta_minutes == 0 || self.forecast_minutes == 0 || self.segment_hours == 0 {
            return Err(Error::Config(
                "segment_hours, delta_minutes and forecast_minutes must be positive".into(),
            ));
        }
        if self.segment_hours > 24 {
            return Err(Error::Config(
                "daily segments cannot exceed 24 hours".into(),
            ));
        }
        if self.segment_start_hour > 23 {
            return Err(Error::Config("segment_start_hour must be in 0..=23".into()));
        }
        let minutes = self.segment_hours * 60;
        if self.forecast_minutes % self.delta_minutes != 0 || minutes % self.forecast_minutes != 0 {
            return Err(Error::Config(
                "forecast_minutes must be a multiple of delta_minutes and divide the segment length".into(),
            ));
        }
        Ok(())
    }

    /// Observation intervals per segment.
    pub fn n_obs(&self) -> usize {
        (self.segment_hours * 60 / self.delta_minutes) as usize
    }

    pub fn knot_stride(&self) -> usize {
        (self.forecast_minutes / self.delta_minutes) as usize
    }
}

/// One parsed CSV row in MW.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub line: u64,
    pub timestamp: DateTime<Utc>,
    pub production_mw: f64,
    pub forecast_mw: f64,
    pub provider: String,
}

fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|n| Utc.from_utc_datetime(&n))
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parse CSV text with header `timestamp,production_mw,forecast_mw[,provider]`.
/// Rows without a provider column take `default_provider`.
pub fn parse_csv(text: &str, default_provider: &str, source: &str) -> Result<Vec<RawRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(source, e.to_string()))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Data(format!("{source}: file is empty")));
    }
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(ts_col), Some(prod_col), Some(fc_col)) =
        (col("timestamp"), col("production_mw"), col("forecast_mw"))
    else {
        return Err(Error::parse(
            source,
            format!(
                "header must contain timestamp,production_mw,forecast_mw (got {})",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    };
    let provider_col = col("provider");

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                errors.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let field = |i: usize| record.get(i).filter(|s| !s.is_empty());
        let parsed = (|| {
            let ts = field(ts_col).ok_or("missing timestamp")?;
            let timestamp = parse_timestamp(ts).ok_or("unparseable timestamp")?;
            let production_mw = parse_number(field(prod_col).ok_or("missing production_mw")?)
                .ok_or("production_mw is not a number")?;
            let forecast_mw = parse_number(field(fc_col).ok_or("missing forecast_mw")?)
                .ok_or("forecast_mw is not a number")?;
            let provider = match provider_col {
                Some(c) => field(c).ok_or("missing provider")?.to_string(),
                None => default_provider.to_string(),
            };
            Ok::<_, &str>(RawRow {
                line,
                timestamp,
                production_mw,
                forecast_mw,
                provider,
            })
        })();
        match parsed {
            Ok(row) => rows.push(row),
            Err(msg) => errors.push(format!("line {line}: {msg}")),
        }
    }
    if !errors.is_empty() {
        let n = errors.len();
        let mut listed: Vec<String> = errors.into_iter().take(MAX_LISTED_ERRORS).collect();
        if n > MAX_LISTED_ERRORS {
            listed.push(format!("... and {} more", n - MAX_LISTED_ERRORS));
        }
        return Err(Error::parse(
            source,
            format!("{n} bad row(s)\n  {}", listed.join("\n  ")),
        ));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{source}: no data rows")));
    }
    Ok(rows)
}

/// Read and parse a CSV file; the provider defaults to the file stem.
pub fn read_csv(path: &Path) -> Result<Vec<RawRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("provider");
    parse_csv(&text, stem, &path.display().to_string())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub providers: Vec<String>,
    /// Complete segments found.
    pub total: usize,
    /// Candidate days dropped for missing samples.
    pub incomplete: usize,
    pub curtailed: usize,
    pub retained: usize,
    pub train: usize,
    pub test: usize,
    /// Normalized values clamped into [0, 1].
    pub clamped: usize,
}

fn normalize(mw: f64, capacity: f64, clamped: &mut usize) -> f64 {
    let v = mw / capacity;
    if (0.0..=1.0).contains(&v) {
        v
    } else {
        *clamped += 1;
        v.clamp(0.0, 1.0)
    }
}

/// Cut rows into daily segments per provider, normalize by capacity and flag curtailment.
/// Days with any missing sample are dropped.
pub fn build_segments(rows: &[RawRow], cfg: &IngestConfig) -> Result<(Vec<Segment>, IngestReport)> {
    cfg.validate()?;
    let mut by_provider: BTreeMap<&str, BTreeMap<DateTime<Utc>, (f64, f64)>> = BTreeMap::new();
    for row in rows {
        let series = by_provider.entry(row.provider.as_str()).or_default();
        if series
            .insert(row.timestamp, (row.production_mw, row.forecast_mw))
            .is_some()
        {
            return Err(Error::Data(format!(
                "line {}: duplicate timestamp {} for provider {}",
                row.line, row.timestamp, row.provider
            )));
        }
    }
    let n = cfg.n_obs();
    let stride = cfg.knot_stride();
    let step = Duration::minutes(cfg.delta_minutes as i64);
    let anchor = NaiveTime::from_hms_opt(cfg.segment_start_hour, 0, 0).expect("validated hour");
    let mut report = IngestReport {
        rows: rows.len(),
        providers: by_provider.keys().map(|s| s.to_string()).collect(),
        ..Default::default()
    };
    let mut segments = Vec::new();
    for (provider, series) in &by_provider {
        let (Some((&first, _)), Some((&last, _))) =
            (series.first_key_value(), series.last_key_value())
        else {
            continue;
        };
        let mut start = Utc.from_utc_datetime(&first.date_naive().and_time(anchor));
        if start < first {
            start += Duration::days(1);
        }
        while start + step * n as i32 <= last {
            let samples: Option<Vec<(f64, f64)>> = (0..=n)
                .map(|i| series.get(&(start + step * i as i32)).copied())
                .collect();
            match samples {
                Some(samples) => {
                    let x = samples
                        .iter()
                        .map(|s| normalize(s.0, cfg.capacity_mw, &mut report.clamped))
                        .collect();
                    let p_raw = (0..=n)
                        .step_by(stride)
                        .map(|i| normalize(samples[i].1, cfg.capacity_mw, &mut report.clamped))
                        .collect();
                    let mut segment = Segment {
                        id: format!("{provider}-{}", start.format("%Y-%m-%d")),
                        provider: provider.to_string(),
                        start,
                        delta_seconds: cfg.delta_minutes as f64 * 60.0,
                        x,
                        p_raw,
                        curtailed: false,
                    };
                    segment.curtailed = detect_curtailment(&segment, &cfg.curtailment);
                    segments.push(segment);
                }
                None => report.incomplete += 1,
            }
            start += Duration::days(1);
        }
    }
    report.total = segments.len();
    report.curtailed = segments.iter().filter(|s| s.curtailed).count();
    report.retained = report.total - report.curtailed;
    for (_, train, test) in provider_splits(&segments)? {
        report.train += train.segments.len();
        report.test += test.segments.len();
    }
    if segments.is_empty() {
        return Err(Error::Data("no complete segments in the input".into()));
    }
    Ok((segments, report))
}

/// Non-curtailed segments grouped by provider (sorted by name) and split into train/test.
/// Providers with fewer than two retained segments are skipped.
pub fn provider_splits(segments: &[Segment]) -> Result<Vec<(String, SegmentSet, SegmentSet)>> {
    let mut groups: BTreeMap<&str, Vec<Segment>> = BTreeMap::new();
    for s in segments.iter().filter(|s| !s.curtailed) {
        groups.entry(&s.provider).or_default().push(s.clone());
    }
    let mut out = Vec::new();
    for (provider, group) in groups {
        if group.len() < 2 {
            log::warn!(
                "provider {provider}: {} retained segment(s), not enough to split",
                group.len()
            );
            continue;
        }
        let (train, test) = split_train_test(group)?;
        out.push((provider.to_string(), train, test));
    }
    Ok(out)
}

pub fn read_segments(path: &Path) -> Result<Vec<Segment>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let segments: Vec<Segment> = serde_json::from_str(&text)?;
    if segments.is_empty() {
        return Err(Error::Data(format!("{}: no segments", path.display())));
    }
    for s in &segments {
        s.validate()?;
    }
    Ok(segments)
}

pub fn write_segments(path: &Path, segments: &[Segment]) -> Result<()> {
    let text = serde_json::to_string_pretty(segments)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelParams;
    use crate::synth::{synthetic_csv, CsvSynthConfig};

    fn fixture(curtailed_days: Vec<usize>) -> String {
        let params = ModelParams::tracking(1.9, 0.05).unwrap();
        synthetic_csv(
            &params,
            &CsvSynthConfig {
                curtailed_days,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap()
    }

    fn cfg() -> IngestConfig {
        IngestConfig {
            capacity_mw: 100.0,
            ..Default::default()
        }
    }

    #[test]
    fn ten_days_two_curtailed() {
        let rows = parse_csv(&fixture(vec![2, 7]), "wind", "fixture").unwrap();
        let (segments, report) = build_segments(&rows, &cfg()).unwrap();
        assert_eq!(
            (
                report.total,
                report.curtailed,
                report.retained,
                report.train,
                report.test
            ),
            (10, 2, 8, 4, 4)
        );
        assert!(segments[2].curtailed && segments[7].curtailed);
        assert_eq!(segments[0].x.len(), 145);
        assert_eq!(segments[0].p_raw.len(), 25);
        assert_eq!(segments[0].id, "wind-2020-01-01");
        assert_eq!(report.providers, vec!["wind".to_string()]);
    }

    #[test]
    fn normalization_and_clamping() {
        let mut clamped = 0;
        assert_eq!(normalize(737.0, 1474.0, &mut clamped), 0.5);
        assert_eq!(normalize(0.0, 1474.0, &mut clamped), 0.0);
        assert_eq!(normalize(1474.0, 1474.0, &mut clamped), 1.0);
        assert_eq!(clamped, 0);
        assert_eq!(normalize(1500.0, 1474.0, &mut clamped), 1.0);
        assert_eq!(clamped, 1);
    }

    #[test]
    fn bad_rows_reported_with_lines() {
        let text = "timestamp,production_mw,forecast_mw\n2020-01-01T13:00:00Z,1,2\n2020-01-01T13:10:00Z,,2\nnot-a-time,1,2\n";
        let err = parse_csv(text, "p", "bad.csv").unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("line 4"), "{err}");
        assert!(err.contains("bad.csv"));
    }

    #[test]
    fn empty_input_names_source() {
        let err = parse_csv("", "p", "empty.csv").unwrap_err().to_string();
        assert!(err.contains("empty.csv"), "{err}");
    }

    #[test]
    fn missing_sample_drops_day() {
        let text = fixture(vec![]);
        let mut lines: Vec<&str> = text.lines().collect();
        lines.remove(1 + 144 + 50);
        let rows = parse_csv(&lines.join("\n"), "w", "f").unwrap();
        let (segments, report) = build_segments(&rows, &cfg()).unwrap();
        assert_eq!(report.incomplete, 1);
        assert_eq!(segments.len(), 9);
    }

    #[test]
    fn provider_column_groups_rows() {
        let text = "timestamp,production_mw,forecast_mw,provider\n2020-01-01T13:00:00Z,1,2,a\n2020-01-01T13:00:00Z,1,2,b\n";
        let rows = parse_csv(text, "ignored", "f").unwrap();
        assert_eq!(rows[0].provider, "a");
        assert_eq!(rows[1].provider, "b");
    }
}
