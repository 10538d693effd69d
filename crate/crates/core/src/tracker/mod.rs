//! Multi-person tracking in world coordinates with image-space association.
//!
//! Each [`Track`] carries a UKF over `[x, y, vx, vy, h_n]`. Per frame the
//! tracker predicts every track, associates predicted necks with detected
//! necks, updates matched tracks, spawns tentative tracks from unmatched
//! detections, and keeps one confirmed track flagged as the target. A target
//! that is lost is never revived; the next one gets a new id.

pub mod assoc;
pub mod ukf;

use serde::{Deserialize, Serialize};

use crate::detect::{torso_bbox, Detection, Joint};
use crate::error::{Error, Result};
use crate::geometry::{ankle_midpoint, localize, wrap_column, CameraModel, ImagePoint, WorldPoint};

pub use assoc::{associate_points, solve_gated, Assignment};
pub use ukf::{
    project_state, wrap_correct, Measurement, StateCovariance, StateVector, TrackState, UkfParams, UpdateOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: TrackState,
    pub covariance: StateCovariance,
    pub status: TrackStatus,
    pub frames_since_update: u32,
    /// Consecutive accepted updates.
    pub hits: u32,
    pub is_target: bool,
    /// Torso box area of the last associated detection, pixels.
    pub last_box_area: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    pub ukf: UkfParams,
    /// Association gate on the neck image distance, pixels.
    pub gate_px: f64,
    /// Squared Mahalanobis distance above which an update is rejected.
    pub mahalanobis_gate: f64,
    /// Consecutive hits that confirm a tentative track.
    pub confirm_hits: u32,
    /// Consecutive misses after which a track is lost.
    pub max_misses: u32,
    /// Seam handling in the filter and in association. Turning it off
    /// gives a tracker that treats the image as a plain rectangle.
    pub wrap_aware: bool,
    /// Unmatched detections localized closer than this to a live track
    /// (metres) do not start a new track; 0 disables the check.
    pub spawn_exclusion_m: f64,
    /// Initial standard deviations of a new track.
    pub init_position_sigma: f64,
    /// Extra position sigma per metre of range for a new track.
    pub init_position_sigma_per_m: f64,
    pub init_velocity_sigma: f64,
    pub init_height_sigma: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            ukf: UkfParams::default(),
            gate_px: 150.0,
            mahalanobis_gate: 50.0,
            confirm_hits: 3,
            max_misses: 15,
            wrap_aware: true,
            spawn_exclusion_m: 0.5,
            init_position_sigma: 0.05,
            init_position_sigma_per_m: 0.05,
            init_velocity_sigma: 1.0,
            init_height_sigma: 0.1,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.ukf.validate()?;
        if !(self.gate_px > 0.0 && self.mahalanobis_gate > 0.0) {
            return Err(Error::Config("gates must be positive".into()));
        }
        if !(self.spawn_exclusion_m >= 0.0) {
            return Err(Error::Config("spawn_exclusion_m must be non-negative".into()));
        }
        if self.confirm_hits == 0 || self.max_misses == 0 {
            return Err(Error::Config("confirm_hits and max_misses must be at least 1".into()));
        }
        Ok(())
    }

    fn update_options(&self, cam: &CameraModel) -> UpdateOptions {
        UpdateOptions {
            image_width: cam.width(),
            wrap_aware: self.wrap_aware,
            gate: self.mahalanobis_gate,
        }
    }
}

/// Constant-velocity time update of one track.
pub fn predict(track: &Track, dt: f64, params: &UkfParams) -> Result<Track> {
    let (mean, cov) = ukf::predict_moments(&track.state.to_vector(), &track.covariance, dt, params)?;
    Ok(Track {
        state: TrackState::from_vector(&mean),
        covariance: cov,
        ..track.clone()
    })
}

/// Where a state's ankle midpoint and neck are imaged.
pub fn project_to_image(state: &TrackState, cam: &CameraModel) -> Result<Measurement> {
    let (ankle_mid, neck) = project_state(&state.to_vector(), cam)?;
    Ok(Measurement::FullBody { ankle_mid, neck })
}

/// Result of a measurement update.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome {
    Accepted(Track),
    /// Innovation outside the Mahalanobis gate; the track is unchanged
    /// apart from one more frame without update.
    Gated(Track),
}

impl UpdateOutcome {
    pub fn track(&self) -> &Track {
        match self {
            UpdateOutcome::Accepted(t) | UpdateOutcome::Gated(t) => t,
        }
    }
}

pub fn update(track: &Track, meas: &Measurement, cam: &CameraModel, params: &UkfParams, opts: &UpdateOptions) -> Result<UpdateOutcome> {
    if track.status == TrackStatus::Lost {
        return Err(Error::Input(format!("track {} is lost", track.id)));
    }
    match ukf::update_moments(&track.state.to_vector(), &track.covariance, meas, cam, params, opts)? {
        ukf::MomentUpdate::Accepted(mean, cov) => Ok(UpdateOutcome::Accepted(Track {
            state: TrackState::from_vector(&mean),
            covariance: cov,
            frames_since_update: 0,
            ..track.clone()
        })),
        ukf::MomentUpdate::Gated { .. } => Ok(UpdateOutcome::Gated(Track {
            frames_since_update: track.frames_since_update + 1,
            ..track.clone()
        })),
    }
}

/// Unscented prediction of a track's measurement.
pub fn predicted_measurement(track: &Track, cam: &CameraModel, params: &UkfParams, opts: &UpdateOptions) -> Result<Measurement> {
    ukf::predicted_measurement(&track.state.to_vector(), &track.covariance, cam, params, opts)
}

/// Turns a detection into a filter measurement.
///
/// Both ankles give their ground midpoint, a single ankle is used as is,
/// no ankles give a neck-only measurement. Detections without a neck
/// cannot be used.
pub fn measurement_from_detection(det: &Detection, cam: &CameraModel) -> Option<Measurement> {
    let w = cam.width();
    let neck = det.neck()?.wrapped(w);
    let left = det.joint(Joint::LeftAnkle).map(|k| k.point.wrapped(w));
    let right = det.joint(Joint::RightAnkle).map(|k| k.point.wrapped(w));
    let ankle_mid = match (left, right) {
        (Some(l), Some(r)) => Some(ankle_midpoint(l, r, cam)),
        (Some(a), None) | (None, Some(a)) => Some(a),
        (None, None) => None,
    };
    Some(match ankle_mid {
        Some(ankle_mid) if ankle_mid.y > cam.horizon_row() => Measurement::FullBody { ankle_mid, neck },
        _ => Measurement::NeckOnly { neck },
    })
}

/// Associates tracks and detections on their neck points.
///
/// Tracks are expected to be already predicted to the detection time.
/// Row indices refer to `tracks`, column indices to `dets`.
pub fn associate(tracks: &[Track], dets: &[Detection], cam: &CameraModel, gate: f64) -> Result<Assignment> {
    associate_with(tracks, dets, cam, gate, true)
}

fn associate_with(tracks: &[Track], dets: &[Detection], cam: &CameraModel, gate: f64, wrap_aware: bool) -> Result<Assignment> {
    let predicted = tracks
        .iter()
        .map(|t| project_state(&t.state.to_vector(), cam).map(|(_, n)| n))
        .collect::<Result<Vec<_>>>()?;
    let detected: Vec<Option<ImagePoint>> = dets.iter().map(|d| d.neck().map(|p| p.wrapped(cam.width()))).collect();
    Ok(associate_points(&predicted, &detected, cam.width(), gate, wrap_aware))
}

/// Per-track output of one [`Tracker::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrackReport {
    pub track: Track,
    /// Estimated ground position and neck height.
    pub position: WorldPoint,
    /// Projected neck.
    pub image: ImagePoint,
}

/// Tracking state machine. Calls to [`Tracker::step`] must be serialized.
#[derive(Debug, Clone)]
pub struct Tracker {
    cam: CameraModel,
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    had_target: bool,
}

impl Tracker {
    pub fn new(cam: CameraModel, cfg: TrackerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cam,
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            had_target: false,
        })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn target(&self) -> Option<&Track> {
        self.tracks.iter().find(|t| t.is_target)
    }

    /// Predicted neck position of the target `dt` seconds ahead.
    pub fn target_prediction(&self, dt: f64) -> Option<ImagePoint> {
        let t = self.target()?;
        let predicted = predict(t, dt, &self.cfg.ukf).ok()?;
        project_state(&predicted.state.to_vector(), &self.cam).ok().map(|(_, n)| n)
    }

    fn spawn(&mut self, det: &Detection) -> Option<Track> {
        let meas = measurement_from_detection(det, &self.cam)?;
        let Measurement::FullBody { ankle_mid, neck } = meas else {
            return None;
        };
        let pos = localize(ankle_mid, neck, &self.cam).ok()?;
        let range = pos.ground_range();
        if range <= 0.0 {
            return None;
        }
        let c = &self.cfg;
        let sp = c.init_position_sigma + c.init_position_sigma_per_m * range;
        let sv = c.init_velocity_sigma;
        let sh = c.init_height_sigma;
        let cov = StateCovariance::from_diagonal(&StateVector::new(sp * sp, sp * sp, sv * sv, sv * sv, sh * sh));
        let id = self.next_id;
        self.next_id += 1;
        Some(Track {
            id,
            state: TrackState::from_vector(&StateVector::new(pos.x, pos.y, 0.0, 0.0, pos.z)),
            covariance: cov,
            status: TrackStatus::Tentative,
            frames_since_update: 0,
            hits: 1,
            is_target: false,
            last_box_area: torso_bbox(det, self.cam.width()).map(|b| b.area()).unwrap_or(0.0),
        })
    }

    /// Advances the tracker by one frame.
    ///
    /// Returns every live track plus the tracks lost during this frame,
    /// ordered by id.
    pub fn step(&mut self, dets: &[Detection], dt: f64) -> Result<Vec<TrackReport>> {
        if !(dt > 0.0) {
            return Err(Error::Input(format!("time step {dt} must be positive")));
        }
        let cam = self.cam;
        let cfg = self.cfg;
        let opts = cfg.update_options(&cam);

        for t in &mut self.tracks {
            match predict(t, dt, &cfg.ukf) {
                Ok(p) => *t = p,
                Err(_) => t.status = TrackStatus::Lost,
            }
        }

        let live: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].status != TrackStatus::Lost)
            .collect();
        let live_tracks: Vec<Track> = live.iter().map(|&i| self.tracks[i].clone()).collect();
        let assignment = associate_with(&live_tracks, dets, &cam, cfg.gate_px, cfg.wrap_aware).unwrap_or_else(|_| {
            // a track on the camera axis cannot be projected; leave everything unmatched
            Assignment {
                pairs: Vec::new(),
                unmatched_rows: (0..live_tracks.len()).collect(),
                unmatched_cols: (0..dets.len()).collect(),
            }
        });

        let mut updated = vec![false; self.tracks.len()];
        let mut gated = vec![false; self.tracks.len()];
        for &(row, col) in &assignment.pairs {
            let idx = live[row];
            let det = &dets[col];
            let Some(meas) = measurement_from_detection(det, &cam) else {
                continue;
            };
            let track = &mut self.tracks[idx];
            match update(track, &meas, &cam, &cfg.ukf, &opts) {
                Ok(UpdateOutcome::Accepted(t)) => {
                    *track = t;
                    track.hits += 1;
                    if let Ok(b) = torso_bbox(det, cam.width()) {
                        track.last_box_area = b.area();
                    }
                    updated[idx] = true;
                }
                Ok(UpdateOutcome::Gated(t)) => {
                    *track = t;
                    gated[idx] = true;
                }
                Err(_) => track.status = TrackStatus::Lost,
            }
        }

        for (i, t) in self.tracks.iter_mut().enumerate() {
            if updated[i] || t.status == TrackStatus::Lost {
                continue;
            }
            if !gated[i] {
                t.frames_since_update += 1;
            }
            t.hits = 0;
            if t.status == TrackStatus::Tentative || t.frames_since_update >= cfg.max_misses {
                t.status = TrackStatus::Lost;
            }
        }

        for &col in &assignment.unmatched_cols {
            if let Some(t) = self.spawn(&dets[col]) {
                let p = t.state.position();
                let crowded = self
                    .tracks
                    .iter()
                    .any(|o| o.status != TrackStatus::Lost && o.state.position().planar_distance(&p) < cfg.spawn_exclusion_m);
                if crowded {
                    // ids are only consumed by tracks that exist
                    self.next_id -= 1;
                    continue;
                }
                self.tracks.push(t);
                updated.push(true);
            }
        }

        for t in &mut self.tracks {
            if t.status == TrackStatus::Tentative && t.hits >= cfg.confirm_hits {
                t.status = TrackStatus::Confirmed;
            }
            if t.status == TrackStatus::Lost {
                t.is_target = false;
            }
        }

        self.maintain_target(&updated);

        let mut reports: Vec<TrackReport> = self
            .tracks
            .iter()
            .map(|t| {
                let image = project_state(&t.state.to_vector(), &cam)
                    .map(|(_, n)| n)
                    .unwrap_or(ImagePoint::new(wrap_column(0.0, cam.width()), cam.horizon_row()));
                TrackReport {
                    track: t.clone(),
                    position: t.state.position(),
                    image,
                }
            })
            .collect();
        reports.sort_by_key(|r| r.track.id);
        self.tracks.retain(|t| t.status != TrackStatus::Lost);
        Ok(reports)
    }

    /// Promotes a new target when none is alive.
    ///
    /// Candidates are confirmed tracks updated this frame. Before any target
    /// has ever existed, tracks seen for the first time also qualify and the
    /// chosen one is confirmed immediately.
    fn maintain_target(&mut self, updated: &[bool]) {
        if self.tracks.iter().any(|t| t.is_target && t.status != TrackStatus::Lost) {
            return;
        }
        let bootstrap = !self.had_target;
        let cam = self.cam;
        let image_x = |t: &Track| {
            project_state(&t.state.to_vector(), &cam)
                .map(|(_, n)| n.x)
                .unwrap_or(f64::INFINITY)
        };
        let best = (0..self.tracks.len())
            .filter(|&i| updated[i])
            .filter(|&i| match self.tracks[i].status {
                TrackStatus::Confirmed => true,
                TrackStatus::Tentative => bootstrap,
                TrackStatus::Lost => false,
            })
            .min_by(|&a, &b| {
                let (ta, tb) = (&self.tracks[a], &self.tracks[b]);
                tb.last_box_area
                    .total_cmp(&ta.last_box_area)
                    .then_with(|| image_x(ta).total_cmp(&image_x(tb)))
                    .then_with(|| ta.id.cmp(&tb.id))
            });
        if let Some(i) = best {
            let t = &mut self.tracks[i];
            t.is_target = true;
            t.status = TrackStatus::Confirmed;
            self.had_target = true;
        }
    }
}

/// One track in a tracks JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub h: f64,
    pub img_x: f64,
    pub img_y: f64,
    pub status: TrackStatus,
    pub is_target: bool,
}

impl From<&TrackReport> for TrackRecord {
    fn from(r: &TrackReport) -> Self {
        Self {
            id: r.track.id,
            x: r.position.x,
            y: r.position.y,
            h: r.position.z,
            img_x: r.image.x,
            img_y: r.image.y,
            status: r.track.status,
            is_target: r.track.is_target,
        }
    }
}

/// One line of a tracks JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub frame: u64,
    pub t: f64,
    pub tracks: Vec<TrackRecord>,
}
