//! Command-line front end.
//!
//! Exit codes: 0 success, 2 bad input (unreadable or malformed files,
//! invalid configuration), 3 runtime failure.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detect::DetectionFrame;
use crate::error::Error;
use crate::geometry::{localization_sensitivity, CameraModel};
use crate::metrics::{curve_csv, evaluate, DEFAULT_MATCH_RADIUS};
use crate::pipeline::{latency_percentiles, stream_scenario, write_jsonl_line, Replay, Strategy, StrategyConfig};
use crate::sim::{ground_truth, GroundTruthFrame, Scenario};
use crate::tracker::{TrackFrame, TrackerConfig};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: EXIT_RUNTIME, message: message.into() }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Input(_) | Error::Json(_) => CliError::input(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "panotrack", version, about = "People detection and tracking in equirectangular panoramas")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene: world snapshots and ground truth.
    Simulate(SimulateArgs),
    /// Run a detection strategy and the tracker over a scenario or a
    /// detections file.
    Track(TrackArgs),
    /// Score a tracks file against ground truth.
    Eval(EvalArgs),
    /// Localization error caused by pixel errors, per distance.
    Sensitivity(SensitivityArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Run configuration JSON file.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured strategy.
    #[arg(long, value_enum)]
    pub strategy: Option<Strategy>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth JSONL file.
    #[arg(long)]
    pub gt: PathBuf,
    /// Tracks JSONL file.
    #[arg(long)]
    pub tracks: PathBuf,
    /// Planar distance under which the target counts as tracked, metres.
    #[arg(long, default_value_t = DEFAULT_MATCH_RADIUS)]
    pub match_radius: f64,
    /// Width of the range bins of the error curve, metres.
    #[arg(long, default_value_t = 0.5)]
    pub bin_width: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    /// Camera JSON file; the default camera when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Ground distances, metres.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])]
    pub distances: Vec<f64>,
    /// Vertical pixel errors.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 2.0, 5.0, 10.0])]
    pub pixel_errors: Vec<f64>,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Contents of a `track` configuration file. Exactly one of `scenario`
/// and `detections` must be set; relative paths are resolved against the
/// configuration file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Camera for detection files; scenario inputs carry their own.
    #[serde(default)]
    pub camera: Option<CameraModel>,
    #[serde(default)]
    pub strategy: Strategy,
    #[serde(default)]
    pub strategy_params: StrategyConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default)]
    pub scenario: Option<PathBuf>,
    #[serde(default)]
    pub detections: Option<PathBuf>,
    /// Frame rate assumed for the first frame of a detections file.
    #[serde(default)]
    pub fps: Option<f64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

enum Input {
    Scenario(PathBuf),
    Detections(PathBuf),
}

impl RunConfig {
    fn input(&self, base: &Path) -> CliResult<Input> {
        match (&self.scenario, &self.detections) {
            (Some(s), None) => Ok(Input::Scenario(base.join(s))),
            (None, Some(d)) => Ok(Input::Detections(base.join(d))),
            _ => Err(CliError::input("exactly one of `scenario` and `detections` must be set")),
        }
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Parses a JSON file; serde messages carry line and column.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Reads a JSONL file, one value per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let file = File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn write_err(e: std::io::Error) -> CliError {
    CliError::runtime(e.to_string())
}

fn load_scenario(path: &Path, seed: Option<u64>) -> CliResult<Scenario> {
    let mut s: Scenario = read_json(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s.validate().map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(s)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let s = load_scenario(&args.config, args.seed)?;
    ensure_dir(&args.out)?;
    let mut snap = create(&args.out, "scenario.json")?;
    serde_json::to_writer_pretty(&mut snap, &s).map_err(|e| CliError::runtime(e.to_string()))?;
    snap.write_all(b"\n").and_then(|_| snap.flush()).map_err(write_err)?;

    let mut frames = create(&args.out, "frames.jsonl")?;
    let mut gt = create(&args.out, "ground_truth.jsonl")?;
    let mut n_gt = 0usize;
    for f in s.frames() {
        write_jsonl_line(&mut frames, &f)?;
        if s.is_annotated(f.frame) {
            write_jsonl_line(&mut gt, &ground_truth(&f, &s.cam))?;
            n_gt += 1;
        }
    }
    frames.flush().map_err(write_err)?;
    gt.flush().map_err(write_err)?;
    log::info!("simulated {} frames, {n_gt} annotated", s.frame_count());
    Ok(())
}

fn log_latency(lat: &[Duration]) {
    if let Some((p50, p95, max)) = latency_percentiles(lat) {
        log::info!(
            "tracker latency over {} frames: p50 {:.3} ms, p95 {:.3} ms, max {:.3} ms",
            lat.len(),
            p50.as_secs_f64() * 1e3,
            p95.as_secs_f64() * 1e3,
            max.as_secs_f64() * 1e3
        );
    }
}

pub fn cmd_track(args: &TrackArgs) -> CliResult<()> {
    let mut cfg: RunConfig = read_json(&args.config)?;
    if let Some(s) = args.strategy {
        cfg.strategy = s;
    }
    if args.seed.is_some() {
        cfg.seed = args.seed;
    }
    let base = args.config.parent().unwrap_or(Path::new("."));
    let out = match (&args.out, &cfg.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err(CliError::input("no output directory: pass --out or set `out`")),
    };
    cfg.tracker.validate().map_err(|e| CliError::input(e.to_string()))?;

    match cfg.input(base)? {
        Input::Scenario(path) => {
            let s = load_scenario(&path, cfg.seed)?;
            if cfg.camera.is_some_and(|c| c != s.cam) {
                return Err(CliError::input("`camera` differs from the scenario camera"));
            }
            ensure_dir(&out)?;
            let mut dets = create(&out, "detections.jsonl")?;
            let mut tracks = create(&out, "tracks.jsonl")?;
            let mut gt = create(&out, "ground_truth.jsonl")?;
            let lat = stream_scenario(&s, cfg.strategy, cfg.strategy_params, cfg.tracker, |snap, o| {
                write_jsonl_line(&mut dets, &o.detections)?;
                write_jsonl_line(&mut tracks, &o.tracks)?;
                if s.is_annotated(snap.frame) {
                    write_jsonl_line(&mut gt, &ground_truth(snap, &s.cam))?;
                }
                Ok(())
            })?;
            for w in [&mut dets, &mut tracks, &mut gt] {
                w.flush().map_err(write_err)?;
            }
            log_latency(&lat);
        }
        Input::Detections(path) => {
            let cam = cfg.camera.unwrap_or_default();
            let fps = cfg.fps.unwrap_or(30.0);
            if !(fps > 0.0) {
                return Err(CliError::input("fps must be positive"));
            }
            let mut replay = Replay::new(cam, cfg.tracker, 1.0 / fps)?;
            let file = File::open(&path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            ensure_dir(&out)?;
            let mut tracks = create(&out, "tracks.jsonl")?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1)))?;
                if line.trim().is_empty() {
                    continue;
                }
                let frame: DetectionFrame = serde_json::from_str(&line)
                    .map_err(|e| CliError::input(format!("{}:{}: {e}", path.display(), i + 1)))?;
                let tf = replay.process(&frame).map_err(|e| match e {
                    Error::Input(m) => CliError::input(format!("{}:{}: {m}", path.display(), i + 1)),
                    e => CliError::from(e),
                })?;
                write_jsonl_line(&mut tracks, &tf)?;
            }
            tracks.flush().map_err(write_err)?;
            log_latency(replay.latencies());
        }
    }
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let gt: Vec<GroundTruthFrame> = read_jsonl(&args.gt)?;
    let tracks: Vec<TrackFrame> = read_jsonl(&args.tracks)?;
    let report = evaluate(&gt, &tracks, args.match_radius, args.bin_width).map_err(|e| match e {
        Error::UndefinedMetric(_) => CliError::input(e.to_string()),
        e => CliError::from(e),
    })?;
    ensure_dir(&args.out)?;
    let mut w = create(&args.out, "report.json")?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| CliError::runtime(e.to_string()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(write_err)?;
    fs::write(args.out.join("error_vs_distance.csv"), curve_csv(&report.error_vs_distance)).map_err(write_err)?;
    log::info!(
        "M1 {:.4}  M2 {:.4}  M3 {}",
        report.m1,
        report.m2,
        report.m3.map(|m| format!("{m:.4} m")).unwrap_or_else(|| "undefined".into())
    );
    Ok(())
}

/// Sensitivity table: one row per pixel error, one column per distance.
pub fn sensitivity_csv(cam: &CameraModel, distances: &[f64], pixel_errors: &[f64]) -> crate::error::Result<String> {
    if distances.iter().any(|d| !(*d > 0.0)) || pixel_errors.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Config("distances must be positive and pixel errors non-negative".into()));
    }
    let mut s = String::from("pixel_error_px");
    for d in distances {
        s.push_str(&format!(",{d}m"));
    }
    s.push('\n');
    for &p in pixel_errors {
        s.push_str(&p.to_string());
        for &d in distances {
            s.push_str(&format!(",{}", localization_sensitivity(d, p, cam)?));
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn cmd_sensitivity(args: &SensitivityArgs) -> CliResult<()> {
    let cam = match &args.config {
        Some(p) => read_json(p)?,
        None => CameraModel::default(),
    };
    let csv = sensitivity_csv(&cam, &args.distances, &args.pixel_errors).map_err(|e| CliError::input(e.to_string()))?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    fs::write(&args.out, csv).map_err(write_err)
}

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Track(a) => cmd_track(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sensitivity(a) => cmd_sensitivity(a),
    }
}
