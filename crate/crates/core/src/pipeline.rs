//! Frame-by-frame detection and tracking.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::detect::{
    build_tiles, default_overlap, default_row_range, run_full_frame, run_roi, run_tiles, DetectionBatch, DetectionFrame,
    DetectorPort, Dispatch, RoiConfig, TileLayout, DEFAULT_SIGMA1,
};
use crate::error::{Error, Result};
use crate::geometry::CameraModel;
use crate::sim::{FrameSnapshot, GroundTruthFrame, Scenario};
use crate::tracker::{TrackFrame, TrackRecord, Tracker, TrackerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Tiles,
    Roi,
    #[serde(rename = "fullframe")]
    #[value(name = "fullframe")]
    FullFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TilesConfig {
    pub n_tiles: usize,
    /// Horizontal overlap in pixels; scaled from 150 px at 1920 when absent.
    pub overlap: Option<f64>,
    /// Processed rows `[start, end)`; elevations within 60 degrees when absent.
    pub row_range: Option<(f64, f64)>,
    pub sigma1: f64,
}

impl Default for TilesConfig {
    fn default() -> Self {
        Self {
            n_tiles: 3,
            overlap: None,
            row_range: None,
            sigma1: DEFAULT_SIGMA1,
        }
    }
}

impl TilesConfig {
    pub fn layout(&self, cam: &CameraModel) -> Result<TileLayout> {
        build_tiles(
            cam,
            self.n_tiles,
            self.overlap.unwrap_or_else(|| default_overlap(cam)),
            self.row_range.unwrap_or_else(|| default_row_range(cam)),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    pub tiles: TilesConfig,
    pub roi: RoiConfig,
    /// Scale of the fullframe pass; the ROI full-frame scale when absent.
    pub fullframe_scale: Option<f64>,
    pub dispatch: Dispatch,
}

/// Outputs of one processed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub detections: DetectionFrame,
    pub tracks: TrackFrame,
}

/// Detector plus tracker for one stream.
pub struct Pipeline<'d, F: ?Sized, D: ?Sized> {
    cam: CameraModel,
    strategy: Strategy,
    cfg: StrategyConfig,
    layout: Option<TileLayout>,
    detector: &'d D,
    tracker: Tracker,
    last_t: Option<f64>,
    nominal_dt: f64,
    latencies: Vec<Duration>,
    _frame: std::marker::PhantomData<fn(&F)>,
}

impl<'d, F, D> Pipeline<'d, F, D>
where
    F: ?Sized + Sync,
    D: DetectorPort<F> + ?Sized,
{
    /// `nominal_dt` is used for the first frame and for ROI prediction.
    pub fn new(
        cam: CameraModel,
        strategy: Strategy,
        cfg: StrategyConfig,
        tracker_cfg: TrackerConfig,
        detector: &'d D,
        nominal_dt: f64,
    ) -> Result<Self> {
        if !(nominal_dt > 0.0) {
            return Err(Error::Config("nominal time step must be positive".into()));
        }
        let layout = match strategy {
            Strategy::Tiles => Some(cfg.tiles.layout(&cam)?),
            _ => None,
        };
        Ok(Self {
            cam,
            strategy,
            cfg,
            layout,
            detector,
            tracker: Tracker::new(cam, tracker_cfg)?,
            last_t: None,
            nominal_dt,
            latencies: Vec::new(),
            _frame: std::marker::PhantomData,
        })
    }

    pub fn tracker(&self) -> &Tracker {
        &self.tracker
    }

    /// Tracker step durations so far.
    pub fn latencies(&self) -> &[Duration] {
        &self.latencies
    }

    fn detect(&self, frame: &F, dt: f64) -> Result<DetectionBatch> {
        let cam = &self.cam;
        match self.strategy {
            Strategy::Tiles => Ok(run_tiles(
                frame,
                self.detector,
                self.layout.as_ref().expect("tiles layout"),
                self.cfg.tiles.sigma1,
                self.cfg.dispatch,
            )),
            Strategy::Roi => {
                let p = self.tracker.target_prediction(dt);
                run_roi(frame, self.detector, p, cam, &self.cfg.roi, self.cfg.dispatch)
            }
            Strategy::FullFrame => {
                let scale = self.cfg.fullframe_scale.unwrap_or_else(|| self.cfg.roi.full_scale(cam));
                run_full_frame(frame, self.detector, cam, scale)
            }
        }
    }

    pub fn process(&mut self, frame: &F, index: u64, t: f64) -> Result<FrameOutput> {
        let dt = match self.last_t {
            Some(prev) if t > prev => t - prev,
            Some(prev) => return Err(Error::Input(format!("frame {index}: time {t} not after {prev}"))),
            None => self.nominal_dt,
        };
        let batch = self.detect(frame, dt)?;
        for e in &batch.errors {
            log::warn!("frame {index}: {e}");
        }
        let out = self.track(index, t, dt, batch.detections)?;
        self.last_t = Some(t);
        Ok(out)
    }

    fn track(&mut self, index: u64, t: f64, dt: f64, detections: Vec<crate::detect::Detection>) -> Result<FrameOutput> {
        let start = Instant::now();
        let reports = self.tracker.step(&detections, dt)?;
        self.latencies.push(start.elapsed());
        Ok(FrameOutput {
            detections: DetectionFrame { frame: index, t, detections },
            tracks: TrackFrame {
                frame: index,
                t,
                tracks: reports.iter().map(TrackRecord::from).collect(),
            },
        })
    }
}

/// Tracks a stream of already fused detections (full-image coordinates).
pub struct Replay {
    tracker: Tracker,
    last_t: Option<f64>,
    nominal_dt: f64,
    latencies: Vec<Duration>,
}

impl Replay {
    pub fn new(cam: CameraModel, tracker_cfg: TrackerConfig, nominal_dt: f64) -> Result<Self> {
        if !(nominal_dt > 0.0) {
            return Err(Error::Config("nominal time step must be positive".into()));
        }
        Ok(Self {
            tracker: Tracker::new(cam, tracker_cfg)?,
            last_t: None,
            nominal_dt,
            latencies: Vec::new(),
        })
    }

    pub fn latencies(&self) -> &[Duration] {
        &self.latencies
    }

    pub fn process(&mut self, frame: &DetectionFrame) -> Result<TrackFrame> {
        let dt = match self.last_t {
            Some(prev) if frame.t > prev => frame.t - prev,
            Some(prev) => return Err(Error::Input(format!("frame {}: time {} not after {prev}", frame.frame, frame.t))),
            None => self.nominal_dt,
        };
        let start = Instant::now();
        let reports = self.tracker.step(&frame.detections, dt)?;
        self.latencies.push(start.elapsed());
        self.last_t = Some(frame.t);
        Ok(TrackFrame {
            frame: frame.frame,
            t: frame.t,
            tracks: reports.iter().map(TrackRecord::from).collect(),
        })
    }
}

/// Complete in-memory result of tracking a simulated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub detections: Vec<DetectionFrame>,
    pub tracks: Vec<TrackFrame>,
    pub ground_truth: Vec<GroundTruthFrame>,
    pub latencies: Vec<Duration>,
}

/// Streams a scenario through a strategy and the tracker, handing each
/// frame's outputs to `sink`.
pub fn stream_scenario(
    scenario: &Scenario,
    strategy: Strategy,
    cfg: StrategyConfig,
    tracker_cfg: TrackerConfig,
    mut sink: impl FnMut(&FrameSnapshot, &FrameOutput) -> Result<()>,
) -> Result<Vec<Duration>> {
    scenario.validate()?;
    let detector = scenario.detector();
    let mut pipe: Pipeline<FrameSnapshot, _> =
        Pipeline::new(scenario.cam, strategy, cfg, tracker_cfg, &detector, scenario.dt())?;
    for snap in scenario.frames() {
        let out = pipe.process(&snap, snap.frame, snap.t)?;
        sink(&snap, &out)?;
    }
    Ok(pipe.latencies)
}

pub fn run_scenario_tracking(
    scenario: &Scenario,
    strategy: Strategy,
    cfg: StrategyConfig,
    tracker_cfg: TrackerConfig,
) -> Result<ScenarioOutput> {
    let mut detections = Vec::new();
    let mut tracks = Vec::new();
    let mut ground_truth = Vec::new();
    let latencies = stream_scenario(scenario, strategy, cfg, tracker_cfg, |snap, out| {
        detections.push(out.detections.clone());
        tracks.push(out.tracks.clone());
        if scenario.is_annotated(snap.frame) {
            ground_truth.push(crate::sim::ground_truth(snap, &scenario.cam));
        }
        Ok(())
    })?;
    Ok(ScenarioOutput {
        detections,
        tracks,
        ground_truth,
        latencies,
    })
}

/// Writes one JSON value per line.
pub fn write_jsonl_line<W: Write, T: Serialize>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Median, 95th percentile and maximum of a set of durations.
pub fn latency_percentiles(lat: &[Duration]) -> Option<(Duration, Duration, Duration)> {
    if lat.is_empty() {
        return None;
    }
    let mut v = lat.to_vec();
    v.sort_unstable();
    let at = |q: f64| v[((v.len() - 1) as f64 * q).round() as usize];
    Some((at(0.5), at(0.95), v[v.len() - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{evaluate, DEFAULT_MATCH_RADIUS};
    use crate::sim::{Agent, Body, DetectabilityConfig, NoiseModel, Trajectory};

    fn circle(sigma: f64, seed: u64) -> Scenario {
        Scenario {
            cam: CameraModel::default(),
            fps: 30.0,
            duration: 10.0,
            agents: vec![Agent {
                id: 0,
                trajectory: Trajectory::Circle { center: [0.0, 0.0], radius: 2.0, angular_speed: 0.5, phase: 0.0 },
                body: Body::default(),
            }],
            noise: NoiseModel { joint_sigma: sigma, ..Default::default() },
            detect_cfg: DetectabilityConfig::default(),
            seed,
            camera_path: None,
            annotation_stride: 1,
        }
    }

    #[test]
    fn every_strategy_tracks_a_circling_target() {
        for strategy in [Strategy::Tiles, Strategy::Roi, Strategy::FullFrame] {
            let out = run_scenario_tracking(&circle(1.0, 3), strategy, StrategyConfig::default(), TrackerConfig::default()).unwrap();
            assert_eq!(out.tracks.len(), 300);
            let r = evaluate(&out.ground_truth, &out.tracks, DEFAULT_MATCH_RADIUS, 0.5).unwrap();
            assert_eq!(r.m1, 1.0, "{strategy:?}");
            assert_eq!(r.m2, 1.0, "{strategy:?}");
            assert!(r.m3.unwrap() < 0.3, "{strategy:?} {:?}", r.m3);
        }
    }

    #[test]
    fn dispatch_mode_does_not_change_output() {
        let s = circle(1.0, 9);
        let par = run_scenario_tracking(&s, Strategy::Tiles, StrategyConfig::default(), TrackerConfig::default()).unwrap();
        let cfg = StrategyConfig { dispatch: Dispatch::Sequential, ..Default::default() };
        let seq = run_scenario_tracking(&s, Strategy::Tiles, cfg, TrackerConfig::default()).unwrap();
        assert_eq!(par.detections, seq.detections);
        assert_eq!(par.tracks, seq.tracks);
    }

    #[test]
    fn replay_matches_live_tracking() {
        let s = circle(1.0, 4);
        let live = run_scenario_tracking(&s, Strategy::Tiles, StrategyConfig::default(), TrackerConfig::default()).unwrap();
        let mut replay = Replay::new(s.cam, TrackerConfig::default(), s.dt()).unwrap();
        for (d, t) in live.detections.iter().zip(&live.tracks) {
            assert_eq!(&replay.process(d).unwrap(), t);
        }
    }

    #[test]
    fn percentiles() {
        let v: Vec<_> = (1..=100).map(Duration::from_micros).collect();
        let (p50, p95, max) = latency_percentiles(&v).unwrap();
        assert_eq!(p50, Duration::from_micros(51));
        assert_eq!(p95, Duration::from_micros(95));
        assert_eq!(max, Duration::from_micros(100));
        assert!(latency_percentiles(&[]).is_none());
    }
}
