//! The `forecast-sde` command-line tool.
//!
//! Commands run inside a rayon pool sized by `--threads`, so several runs with
//! different thread counts can share one process (used by `replay`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calibrate::{
    compare_models, fit, CalibrationConfig, CalibrationResult, ComparisonRow, Method,
};
use crate::config::RunConfig;
use crate::data::{build_curve, PreparedSegment, PreparedSet, Segment, SegmentSet};
use crate::error::{Error, Result};
use crate::ingest::{build_segments, provider_splits, read_csv, read_segments};
use crate::manifest::{manifest_path_for, RunManifest};
use crate::model::{check_conditions, ModelKind, ModelParams, ThetaSchedule, Violation};
use crate::simulate::{
    empirical_bands, histogram_on, simulate_paths, total_variation, transitions, InitialCondition,
    Scheme, SimConfig,
};
use crate::synth::{synthetic_csv, CsvSynthConfig};

static QUIET: AtomicBool = AtomicBool::new(false);

/// Silence command output on stdout; the self-test drives commands in-process.
pub(crate) fn set_quiet(quiet: bool) {
    QUIET.store(quiet, Ordering::Relaxed);
}

macro_rules! say {
    ($($t:tt)*) => {
        if !QUIET.load(Ordering::Relaxed) {
            println!($($t)*);
        }
    };
}

#[derive(Debug, Parser)]
#[command(
    name = "forecast-sde",
    version,
    about = "Calibrate and simulate bounded SDE models of power forecast errors"
)]
struct Cli {
    /// Config file (`key = value` lines); defaults to $FORECAST_SDE_CONFIG.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config key; repeatable. Takes precedence over the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    threads: Option<u16>,
    /// Where to write the run manifest (default: next to the primary output).
    #[arg(long, global = true, value_name = "PATH")]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cut raw CSV series into daily segments.
    Ingest(IngestArgs),
    /// Check the boundary conditions on every segment.
    Validate(ValidateArgs),
    /// Fit one model to one provider's segments.
    Calibrate(CalibrateArgs),
    /// Fit every provider/model/method combination and rank by AIC.
    Compare(CompareArgs),
    /// Simulate production paths for selected days.
    Simulate(SimulateArgs),
    /// Pointwise confidence bands for selected days.
    Bands(BandsArgs),
    /// Run the built-in acceptance checks.
    Selftest(SelftestArgs),
    /// Write a synthetic raw CSV drawn from the model.
    Synth(SynthArgs),
    /// Re-run a command from its manifest and compare outputs.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Input CSV files (`timestamp,production_mw,forecast_mw[,provider]`).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    capacity_mw: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Applied,
    Constant,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long)]
    segments: PathBuf,
    #[arg(long)]
    theta0: f64,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 2)]
    model: u8,
    #[arg(long, value_enum, default_value = "applied")]
    schedule: ScheduleArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RoleArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    segments: PathBuf,
    /// v_beta, v_gauss, z_fixed_point or complete.
    #[arg(long, default_value = "v_beta")]
    method: String,
    #[arg(long, default_value_t = 2)]
    model: u8,
    /// Required when the segments hold more than one provider.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long, value_enum, default_value = "train")]
    role: RoleArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    segments: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    models: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "v_beta,v_gauss")]
    methods: Vec<String>,
    /// Restrict to these providers (default: all).
    #[arg(long, value_delimiter = ',')]
    providers: Vec<String>,
    #[arg(long)]
    out_csv: PathBuf,
    #[arg(long)]
    out_json: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    ZSpace,
    VSpaceClamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitialArg {
    /// Lagged start when the calibration has a delta, observed otherwise.
    Auto,
    /// Start every path at the observed first error.
    Observed,
    /// Draw the first error from the lagged transition.
    Lagged,
}

#[derive(Debug, Args)]
struct SimCommon {
    /// Calibration JSON written by `calibrate`.
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    segments: PathBuf,
    /// Segment ids to simulate; repeatable. Defaults to the calibration provider's segments of `--role`.
    #[arg(long = "day")]
    days: Vec<String>,
    #[arg(long, value_enum, default_value = "test")]
    role: RoleArg,
    /// Random seed; drawn and echoed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 10)]
    substeps: usize,
    #[arg(long, value_enum, default_value = "z-space")]
    scheme: SchemeArg,
    #[arg(long, value_enum, default_value = "auto")]
    initial: InitialArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: SimCommon,
    #[arg(long, default_value_t = 5)]
    paths: usize,
    /// Bins of the transition histogram.
    #[arg(long, default_value_t = 50)]
    bins: usize,
}

#[derive(Debug, Args)]
struct BandsArgs {
    #[command(flatten)]
    common: SimCommon,
    #[arg(long, default_value_t = 5000)]
    paths: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.9,0.99")]
    levels: Vec<f64>,
}

#[derive(Debug, Args)]
struct SelftestArgs {
    /// Run only these checks (comma separated).
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// List check names and exit.
    #[arg(long)]
    list: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    days: usize,
    /// Zero-based days that get an injected curtailment plateau.
    #[arg(long, value_delimiter = ',')]
    curtailed_days: Vec<usize>,
    #[arg(long, default_value_t = 1.9)]
    theta0: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    capacity_mw: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    manifest_file: PathBuf,
}

/// Run the tool on `args` (program name first) and return the process exit code.
pub fn run(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.map_or(0, usize::from))
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return 3;
        }
    };
    let rest = args.get(1..).unwrap_or_default().to_vec();
    match pool.install(|| dispatch(&cli, rest)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx {
    config: RunConfig,
    config_file: Option<PathBuf>,
    args: Vec<String>,
    threads: Option<usize>,
    manifest: Option<PathBuf>,
    started: Instant,
}

impl Ctx {
    fn manifest(&self, command: &str) -> Result<RunManifest> {
        let mut m = RunManifest::new(command, self.args.clone());
        m.config = self.config.snapshot();
        m.threads = self.threads;
        if let Some(p) = &self.config_file {
            m.config_file = Some(p.display().to_string());
            m.add_input(p)?;
        }
        Ok(m)
    }

    fn finish(&self, mut m: RunManifest, primary: &Path) -> Result<()> {
        m.wall_time_seconds = self.started.elapsed().as_secs_f64();
        let path = self
            .manifest
            .clone()
            .unwrap_or_else(|| manifest_path_for(primary));
        m.write(&path)?;
        log::info!("manifest written to {}", path.display());
        Ok(())
    }

    /// The given seed, or a fresh one recorded in the manifest arguments.
    fn seed(&mut self, seed: Option<u64>) -> u64 {
        let seed = seed.unwrap_or_else(rand::random);
        if !self
            .args
            .iter()
            .any(|a| a == "--seed" || a.starts_with("--seed="))
        {
            self.args.push("--seed".into());
            self.args.push(seed.to_string());
        }
        say!("seed: {seed}");
        seed
    }
}

fn dispatch(cli: &Cli, args: Vec<String>) -> Result<()> {
    let (mut config, config_file) = RunConfig::load(cli.config.as_deref())?;
    for pair in &cli.set {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
        config.set(k.trim(), v)?;
    }
    let mut ctx = Ctx {
        config,
        config_file,
        args,
        threads: cli.threads.map(usize::from),
        manifest: cli.manifest.clone(),
        started: Instant::now(),
    };
    match &cli.command {
        Command::Ingest(a) => {
            if let Some(c) = a.capacity_mw {
                ctx.config.ingest.capacity_mw = c;
            }
            ctx.config.validate()?;
            cmd_ingest(&ctx, a)
        }
        Command::Synth(a) => {
            if let Some(c) = a.capacity_mw {
                ctx.config.ingest.capacity_mw = c;
            }
            ctx.config.validate()?;
            cmd_synth(&mut ctx, a)
        }
        command => {
            ctx.config.validate()?;
            match command {
                Command::Validate(a) => cmd_validate(&ctx, a),
                Command::Calibrate(a) => cmd_calibrate(&ctx, a),
                Command::Compare(a) => cmd_compare(&ctx, a),
                Command::Simulate(a) => cmd_simulate(&mut ctx, a),
                Command::Bands(a) => cmd_bands(&mut ctx, a),
                Command::Selftest(a) => cmd_selftest(a),
                Command::Replay(a) => cmd_replay(&ctx, a),
                Command::Ingest(_) | Command::Synth(_) => unreachable!("handled above"),
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn cmd_ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let mut m = ctx.manifest("ingest")?;
    let mut rows = Vec::new();
    for path in &a.inputs {
        rows.extend(read_csv(path)?);
        m.add_input(path)?;
    }
    let (segments, report) = build_segments(&rows, &ctx.config.ingest)?;
    // compact: segments carry hundreds of samples each
    write_text(&a.out, &(serde_json::to_string(&segments)? + "\n"))?;
    m.add_output(&a.out)?;
    say!(
        "segments: total {}, curtailed {}, retained {}, train {}, test {}",
        report.total,
        report.curtailed,
        report.retained,
        report.train,
        report.test
    );
    if report.incomplete > 0 {
        say!("incomplete days dropped: {}", report.incomplete);
    }
    if report.clamped > 0 {
        log::warn!(
            "{} values outside [0, capacity] were clamped",
            report.clamped
        );
    }
    if let Some(path) = &a.report {
        write_json(path, &report)?;
        m.add_output(path)?;
    }
    if report.retained == 0 {
        ctx.finish(m, &a.out)?;
        return Err(Error::Data("every segment was flagged as curtailed".into()));
    }
    ctx.finish(m, &a.out)
}

#[derive(Serialize)]
struct SegmentValidity {
    id: String,
    condition_a_ok: bool,
    condition_b_ok: bool,
    violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    first_violation: Option<Violation>,
}

fn usable(segments: Vec<Segment>) -> Result<Vec<Segment>> {
    let kept: Vec<Segment> = segments.into_iter().filter(|s| !s.curtailed).collect();
    if kept.is_empty() {
        return Err(Error::Data("no non-curtailed segments".into()));
    }
    Ok(kept)
}

fn cmd_validate(ctx: &Ctx, a: &ValidateArgs) -> Result<()> {
    let mut m = ctx.manifest("validate")?;
    let segments = usable(read_segments(&a.segments)?)?;
    m.add_input(&a.segments)?;
    let schedule = match a.schedule {
        ScheduleArg::Applied => ThetaSchedule::Applied,
        ScheduleArg::Constant => ThetaSchedule::Constant,
    };
    let params = ModelParams::new(a.theta0, a.alpha, ModelKind::from_number(a.model)?)?
        .with_schedule(schedule);
    let mut rows = Vec::with_capacity(segments.len());
    for s in &segments {
        let curve = build_curve(s, ctx.config.epsilon)?;
        let report = check_conditions(&curve, &params, &s.times());
        rows.push(SegmentValidity {
            id: s.id.clone(),
            condition_a_ok: report.condition_a_ok,
            condition_b_ok: report.condition_b_ok,
            violations: report.violations.len(),
            first_violation: report.violations.first().cloned(),
        });
    }
    let bad: Vec<&SegmentValidity> = rows.iter().filter(|r| r.violations > 0).collect();
    for r in &bad {
        say!(
            "{}: {} violation(s){}{}",
            r.id,
            r.violations,
            if r.condition_a_ok {
                ""
            } else {
                ", condition A"
            },
            if r.condition_b_ok {
                ""
            } else {
                ", condition B"
            }
        );
    }
    say!(
        "{} of {} segments satisfy both conditions",
        rows.len() - bad.len(),
        rows.len()
    );
    let n_bad = bad.len();
    write_json(&a.out, &rows)?;
    m.add_output(&a.out)?;
    ctx.finish(m, &a.out)?;
    if n_bad > 0 {
        return Err(Error::Data(format!(
            "{n_bad} segment(s) violate the boundary conditions"
        )));
    }
    Ok(())
}

fn pick_role(train: SegmentSet, test: SegmentSet, role: RoleArg) -> Vec<Segment> {
    match role {
        RoleArg::Train => train.segments,
        RoleArg::Test => test.segments,
        RoleArg::All => {
            let mut all = train.segments;
            all.extend(test.segments);
            all.sort_by_key(|s| s.start);
            all
        }
    }
}

fn provider_segments(
    segments: &[Segment],
    provider: Option<&str>,
    role: RoleArg,
) -> Result<(String, Vec<Segment>)> {
    let splits = provider_splits(segments)?;
    let names: Vec<String> = splits.iter().map(|(p, _, _)| p.clone()).collect();
    let wanted = match provider {
        Some(p) => p.to_string(),
        None if splits.len() == 1 => splits[0].0.clone(),
        None if splits.is_empty() => {
            return Err(Error::Data(
                "no provider has two or more usable segments".into(),
            ))
        }
        None => {
            return Err(Error::Config(format!(
                "several providers present ({}); choose one with --provider",
                names.join(", ")
            )))
        }
    };
    let (_, train, test) = splits
        .into_iter()
        .find(|(p, _, _)| *p == wanted)
        .ok_or_else(|| {
            Error::Data(format!(
                "provider {wanted} not found (have {})",
                names.join(", ")
            ))
        })?;
    Ok((wanted, pick_role(train, test, role)))
}

fn calibration_config(ctx: &Ctx) -> CalibrationConfig {
    CalibrationConfig {
        integrator: ctx.config.integrator,
        ..Default::default()
    }
}

fn cmd_calibrate(ctx: &Ctx, a: &CalibrateArgs) -> Result<()> {
    let mut m = ctx.manifest("calibrate")?;
    let method = Method::parse(&a.method)?;
    let kind = ModelKind::from_number(a.model)?;
    let segments = read_segments(&a.segments)?;
    m.add_input(&a.segments)?;
    let (provider, chosen) = provider_segments(&segments, a.provider.as_deref(), a.role)?;
    let data = PreparedSet::from_segments(&chosen, ctx.config.epsilon)?;
    let mut result = fit(&data, kind, method, &calibration_config(ctx))?;
    result.provider = provider;
    if !result.converged {
        log::warn!("optimizer did not converge; result is flagged");
    }
    say!("{}", summary_line(&result));
    if !result.flags.is_empty() {
        say!("flags: {}", result.flags.join(", "));
    }
    write_json(&a.out, &result)?;
    m.add_output(&a.out)?;
    ctx.finish(m, &a.out)
}

fn summary_line(r: &CalibrationResult) -> String {
    let mut s = format!(
        "{} model {} {}: theta0 {:.6} alpha {:.6}",
        r.provider,
        r.model,
        r.method.name(),
        r.theta0,
        r.alpha
    );
    if let Some(d) = r.delta {
        let _ = write!(s, " delta {d:.6}");
    }
    let _ = write!(
        s,
        " product {:.6} loglik {:.3} aic {:.3} bic {:.3}",
        r.product, r.loglik, r.aic, r.bic
    );
    s
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("provider,model,method,theta0,alpha,delta,product,loglik,n,k,aic,bic,converged,flags,error\n");
    for row in rows {
        let r = row.result.as_ref();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            row.provider,
            row.model,
            row.method.name(),
            opt_num(r.map(|r| r.theta0)),
            opt_num(r.map(|r| r.alpha)),
            opt_num(r.and_then(|r| r.delta)),
            opt_num(r.map(|r| r.product)),
            opt_num(r.map(|r| r.loglik)),
            r.map(|r| r.n.to_string()).unwrap_or_default(),
            r.map(|r| r.k.to_string()).unwrap_or_default(),
            opt_num(r.map(|r| r.aic)),
            opt_num(r.map(|r| r.bic)),
            r.map(|r| r.converged.to_string()).unwrap_or_default(),
            r.map(|r| r.flags.join(";")).unwrap_or_default(),
            row.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
    }
    out
}

fn cmd_compare(ctx: &Ctx, a: &CompareArgs) -> Result<()> {
    let mut m = ctx.manifest("compare")?;
    let segments = read_segments(&a.segments)?;
    m.add_input(&a.segments)?;
    let models = a
        .models
        .iter()
        .map(|&n| ModelKind::from_number(n))
        .collect::<Result<Vec<_>>>()?;
    let methods = a
        .methods
        .iter()
        .map(|s| Method::parse(s))
        .collect::<Result<Vec<_>>>()?;
    let mut sets = Vec::new();
    for (provider, train, _) in provider_splits(&segments)? {
        if a.providers.is_empty() || a.providers.contains(&provider) {
            let data = PreparedSet::new(&train, ctx.config.epsilon)?;
            sets.push((provider, data));
        }
    }
    if sets.is_empty() {
        return Err(Error::Data("no provider to compare".into()));
    }
    let rows = compare_models(&sets, &models, &methods, &calibration_config(ctx));
    for row in &rows {
        match &row.result {
            Some(r) => say!("{}", summary_line(r)),
            None => say!(
                "{} model {} {}: failed: {}",
                row.provider,
                row.model,
                row.method.name(),
                row.error.as_deref().unwrap_or("")
            ),
        }
    }
    write_text(&a.out_csv, &comparison_csv(&rows))?;
    m.add_output(&a.out_csv)?;
    if let Some(path) = &a.out_json {
        write_json(path, &rows)?;
        m.add_output(path)?;
    }
    ctx.finish(m, &a.out_csv)
}

struct SimInputs {
    calibration: CalibrationResult,
    params: ModelParams,
    segments: Vec<PreparedSegment>,
    scheme: Scheme,
}

fn load_sim_inputs(m: &mut RunManifest, c: &SimCommon) -> Result<SimInputs> {
    let text = std::fs::read_to_string(&c.calibration).map_err(|e| Error::io(&c.calibration, e))?;
    let calibration: CalibrationResult = serde_json::from_str(&text)?;
    m.add_input(&c.calibration)?;
    let params = calibration.params()?;
    let all = read_segments(&c.segments)?;
    m.add_input(&c.segments)?;
    let chosen: Vec<Segment> = if c.days.is_empty() {
        provider_segments(&all, Some(&calibration.provider), c.role)?.1
    } else {
        c.days
            .iter()
            .map(|d| {
                all.iter()
                    .find(|s| &s.id == d)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("no segment covers day {d}")))
            })
            .collect::<Result<_>>()?
    };
    if chosen.is_empty() {
        return Err(Error::Data("no segments selected".into()));
    }
    let segments = chosen
        .iter()
        .map(|s| PreparedSegment::new(s, calibration.epsilon))
        .collect::<Result<Vec<_>>>()?;
    let scheme = match c.scheme {
        SchemeArg::ZSpace => Scheme::ZSpace,
        SchemeArg::VSpaceClamped => Scheme::VSpaceClamped,
    };
    if c.substeps == 0 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    Ok(SimInputs {
        calibration,
        params,
        segments,
        scheme,
    })
}

fn initial_for(
    c: &SimCommon,
    cal: &CalibrationResult,
    seg: &PreparedSegment,
) -> Result<InitialCondition> {
    match (c.initial, cal.delta) {
        (InitialArg::Auto | InitialArg::Lagged, Some(d)) => Ok(InitialCondition::Lagged(d)),
        (InitialArg::Lagged, None) => Err(Error::Config(
            "lagged start needs a calibration with delta (method complete)".into(),
        )),
        _ => Ok(InitialCondition::Error(seg.v[0])),
    }
}

/// Independent seed for the `index`-th selected day.
fn day_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn hours(seg: &PreparedSegment, i: usize) -> f64 {
    seg.time(i) * 24.0
}

fn cmd_simulate(ctx: &mut Ctx, a: &SimulateArgs) -> Result<()> {
    let seed = ctx.seed(a.common.seed);
    let mut m = ctx.manifest("simulate")?;
    m.seed = Some(seed);
    let inputs = load_sim_inputs(&mut m, &a.common)?;
    if a.bins == 0 {
        return Err(Error::Config("bins must be at least 1".into()));
    }
    let mut simulated = Vec::new();
    let mut observed = Vec::new();
    for (idx, seg) in inputs.segments.iter().enumerate() {
        let grid: Vec<f64> = (0..seg.x.len()).map(|i| seg.time(i)).collect();
        let cfg = SimConfig {
            n_paths: a.paths,
            substeps: a.common.substeps,
            scheme: inputs.scheme,
            seed: day_seed(seed, idx),
        };
        let initial = initial_for(&a.common, &inputs.calibration, seg)?;
        let bundle = simulate_paths(&inputs.params, &seg.curve, &grid, &cfg, initial)?;
        for w in &bundle.warnings {
            log::warn!("{}: {w}", seg.id);
        }
        let mut csv = String::from("time,path_id,value\n");
        for i in 0..grid.len() {
            for (k, path) in bundle.paths.iter().enumerate() {
                let _ = writeln!(csv, "{},{},{}", hours(seg, i), k, path[i]);
            }
        }
        let path = a.common.out_dir.join(format!("{}.paths.csv", seg.id));
        write_text(&path, &csv)?;
        m.add_output(&path)?;
        simulated.extend(transitions(&bundle.paths));
        observed.extend(transitions(std::slice::from_ref(&seg.x)));
    }
    let lo = simulated
        .iter()
        .chain(&observed)
        .copied()
        .fold(f64::INFINITY, f64::min);
    let hi = simulated
        .iter()
        .chain(&observed)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let sim_hist = histogram_on(&simulated, lo, hi, a.bins)?;
    let obs_hist = histogram_on(&observed, lo, hi, a.bins)?;
    let tv = total_variation(&sim_hist, &obs_hist)?;
    let mut csv = String::from("bin_lo,bin_hi,simulated,observed\n");
    for i in 0..sim_hist.n_bins() {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            sim_hist.edges[i],
            sim_hist.edges[i + 1],
            sim_hist.density[i],
            obs_hist.density[i]
        );
    }
    let hist_path = a.common.out_dir.join("histogram.csv");
    write_text(&hist_path, &csv)?;
    m.add_output(&hist_path)?;
    say!(
        "{} day(s), {} paths each; transition histogram total variation {:.4}",
        inputs.segments.len(),
        a.paths,
        tv
    );
    ctx.finish(m, &a.common.out_dir.join("simulate"))
}

fn cmd_bands(ctx: &mut Ctx, a: &BandsArgs) -> Result<()> {
    let seed = ctx.seed(a.common.seed);
    let mut m = ctx.manifest("bands")?;
    m.seed = Some(seed);
    let inputs = load_sim_inputs(&mut m, &a.common)?;
    let mut inside: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (idx, seg) in inputs.segments.iter().enumerate() {
        let grid: Vec<f64> = (0..seg.x.len()).map(|i| seg.time(i)).collect();
        let cfg = SimConfig {
            n_paths: a.paths,
            substeps: a.common.substeps,
            scheme: inputs.scheme,
            seed: day_seed(seed, idx),
        };
        let initial = initial_for(&a.common, &inputs.calibration, seg)?;
        let bundle = simulate_paths(&inputs.params, &seg.curve, &grid, &cfg, initial)?;
        let bands = empirical_bands(&bundle, &a.levels)?;
        for w in bundle.warnings.iter().chain(&bands.warnings) {
            log::warn!("{}: {w}", seg.id);
        }
        let mut csv = String::from("time,level,lower,upper,observed\n");
        for i in 0..grid.len() {
            for band in &bands.bands {
                let obs = seg.x[i];
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    hours(seg, i),
                    band.level,
                    band.lower[i],
                    band.upper[i],
                    obs
                );
                let e = inside.entry(band.level.to_string()).or_default();
                e.0 += (band.lower[i] <= obs && obs <= band.upper[i]) as usize;
                e.1 += 1;
            }
        }
        let path = a.common.out_dir.join(format!("{}.bands.csv", seg.id));
        write_text(&path, &csv)?;
        m.add_output(&path)?;
    }
    for (level, (hit, n)) in &inside {
        say!(
            "level {level}: observed inside the band at {:.1}% of points",
            100.0 * *hit as f64 / *n as f64
        );
    }
    ctx.finish(m, &a.common.out_dir.join("bands"))
}

fn cmd_synth(ctx: &mut Ctx, a: &SynthArgs) -> Result<()> {
    let seed = ctx.seed(a.seed);
    let mut m = ctx.manifest("synth")?;
    m.seed = Some(seed);
    let params = ModelParams::tracking(a.theta0, a.alpha)?;
    let csv = synthetic_csv(
        &params,
        &CsvSynthConfig {
            days: a.days,
            capacity_mw: ctx.config.ingest.capacity_mw,
            curtailed_days: a.curtailed_days.clone(),
            seed,
            ..Default::default()
        },
    )?;
    write_text(&a.out, &csv)?;
    m.add_output(&a.out)?;
    say!("wrote {} days to {}", a.days, a.out.display());
    ctx.finish(m, &a.out)
}

fn cmd_selftest(a: &SelftestArgs) -> Result<()> {
    let checks = crate::selftest::checks();
    if a.list {
        for c in &checks {
            println!("{}", c.name);
        }
        return Ok(());
    }
    for name in &a.only {
        if !checks.iter().any(|c| c.name == name) {
            return Err(Error::Config(format!("unknown check {name:?}")));
        }
    }
    let mut failed = 0;
    let mut ran = 0;
    for check in checks
        .iter()
        .filter(|c| a.only.is_empty() || a.only.iter().any(|n| n == c.name))
    {
        let outcome = crate::selftest::run_check(check);
        println!("{}", outcome.line());
        ran += 1;
        failed += (!outcome.passed) as usize;
    }
    if failed > 0 {
        return Err(Error::Numerical(format!("{failed} of {ran} checks failed")));
    }
    println!("all {ran} checks passed");
    Ok(())
}

/// Manifest arguments without any thread setting.
fn strip_threads(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
        } else if a == "--threads" {
            skip = true;
        } else if !a.starts_with("--threads=") {
            out.push(a.clone());
        }
    }
    out
}

fn cmd_replay(ctx: &Ctx, a: &ReplayArgs) -> Result<()> {
    let recorded = RunManifest::read(&a.manifest_file)?;
    let mut args = vec!["forecast-sde".to_string()];
    if let Some(t) = ctx.threads {
        args.push("--threads".into());
        args.push(t.to_string());
    }
    args.extend(strip_threads(&recorded.args));
    let code = run(args);
    if code != 0 {
        return Err(Error::Data(format!(
            "replayed {} command exited with code {code}",
            recorded.command
        )));
    }
    let bad = recorded.mismatched_outputs()?;
    for out in &recorded.outputs {
        let state = if bad.contains(&out.path) {
            "differs"
        } else {
            "identical"
        };
        say!("{state}: {}", out.path);
    }
    if !bad.is_empty() {
        return Err(Error::Numerical(format!(
            "{} output(s) differ from the manifest",
            bad.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_flags_are_stripped() {
        let args: Vec<String> = ["--threads", "4", "calibrate", "--threads=2", "--out", "x"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(strip_threads(&args), vec!["calibrate", "--out", "x"]);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(vec!["forecast-sde".into(), "bogus".into()]), 1);
        assert_eq!(run(vec!["forecast-sde".into(), "--help".into()]), 0);
        assert_eq!(
            run(vec![
                "forecast-sde".into(),
                "--threads".into(),
                "0".into(),
                "selftest".into(),
                "--list".into()
            ]),
            1
        );
    }

    #[test]
    fn day_seeds_differ() {
        assert_ne!(day_seed(1, 0), day_seed(1, 1));
        assert_ne!(day_seed(1, 0), day_seed(2, 0));
    }
}
