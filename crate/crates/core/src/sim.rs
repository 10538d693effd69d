//! Synthetic scenes and a synthetic skeleton detector.
//!
//! Scripted agents walk around the camera; every frame is a world snapshot
//! rather than an image. The synthetic detector projects each agent through
//! the exact camera model, keeps only agents a real detector could plausibly
//! see in the given viewport (inside it, tall enough at the processed
//! resolution, not hidden behind someone nearer) and perturbs the joints.
//! Agent 0 is the annotated target.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::detect::{DetectorPort, Joint, Keypoint, Skeleton, Viewport};
use crate::error::{Error, Result};
use crate::geometry::{normalize_deg, world_to_image, CameraModel, WorldPoint};

/// Hip height as a fraction of body height.
const HIP_HEIGHT_RATIO: f64 = 0.53;

/// Agents closer than this to the camera foot cannot be projected.
pub const MIN_AGENT_RANGE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Body {
    pub height: f64,
    pub ankle_height: f64,
    pub shoulder_half_width: f64,
    pub hip_half_width: f64,
    /// Distance of the neck below the top of the head.
    pub neck_drop: f64,
}

impl Default for Body {
    fn default() -> Self {
        Self {
            height: 1.7,
            ankle_height: 0.1,
            shoulder_half_width: 0.2,
            hip_half_width: 0.1,
            neck_drop: 0.25,
        }
    }
}

impl Body {
    pub fn neck_height(&self) -> f64 {
        self.height - self.neck_drop
    }

    fn validate(&self) -> Result<()> {
        if !(1.4..=2.1).contains(&self.height) {
            return Err(Error::Config(format!("body height {} outside [1.4, 2.1]", self.height)));
        }
        let ok = self.ankle_height >= 0.0
            && self.shoulder_half_width >= 0.0
            && self.hip_half_width >= 0.0
            && self.neck_drop >= 0.0
            && self.neck_drop < self.height;
        if !ok {
            return Err(Error::Config("body dimensions must be non-negative".into()));
        }
        Ok(())
    }
}

/// Scripted planar motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Trajectory {
    /// Walks the waypoints in order and stops at the last one. `speeds`
    /// holds one speed per segment, or a single speed for all of them.
    Polyline { waypoints: Vec<[f64; 2]>, speeds: Vec<f64> },
    Circle {
        center: [f64; 2],
        radius: f64,
        /// rad/s, counter-clockwise when positive.
        angular_speed: f64,
        #[serde(default)]
        phase: f64,
    },
}

/// Planar position and walking direction (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Trajectory {
    fn validate(&self) -> Result<()> {
        match self {
            Trajectory::Polyline { waypoints, speeds } => {
                if waypoints.is_empty() {
                    return Err(Error::Config("polyline needs at least one waypoint".into()));
                }
                let segs = waypoints.len() - 1;
                if segs > 0 && speeds.len() != 1 && speeds.len() != segs {
                    return Err(Error::Config(format!(
                        "polyline with {segs} segments needs 1 or {segs} speeds, got {}",
                        speeds.len()
                    )));
                }
                if speeds.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::Config("speeds must be positive".into()));
                }
            }
            Trajectory::Circle { radius, angular_speed, .. } => {
                if !(*radius > 0.0) || !(*angular_speed != 0.0 && angular_speed.is_finite()) {
                    return Err(Error::Config("circle needs positive radius and non-zero speed".into()));
                }
            }
        }
        Ok(())
    }

    pub fn pose_at(&self, t: f64) -> PlanarPose {
        match self {
            Trajectory::Circle { center, radius, angular_speed, phase } => {
                let a = phase + angular_speed * t;
                PlanarPose {
                    x: center[0] + radius * a.cos(),
                    y: center[1] + radius * a.sin(),
                    heading: a + angular_speed.signum() * std::f64::consts::FRAC_PI_2,
                }
            }
            Trajectory::Polyline { waypoints, speeds } => {
                let mut remaining = t.max(0.0);
                let mut heading = 0.0;
                for (i, seg) in waypoints.windows(2).enumerate() {
                    let (a, b) = (seg[0], seg[1]);
                    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                    let len = dx.hypot(dy);
                    if len == 0.0 {
                        continue;
                    }
                    heading = dy.atan2(dx);
                    let speed = if speeds.len() == 1 { speeds[0] } else { speeds[i] };
                    let dur = len / speed;
                    if remaining <= dur {
                        let f = remaining / dur;
                        return PlanarPose {
                            x: a[0] + f * dx,
                            y: a[1] + f * dy,
                            heading,
                        };
                    }
                    remaining -= dur;
                }
                let last = waypoints[waypoints.len() - 1];
                PlanarPose { x: last[0], y: last[1], heading }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub id: u64,
    pub trajectory: Trajectory,
    #[serde(default)]
    pub body: Body,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Isotropic Gaussian joint noise in processed viewport pixels.
    pub joint_sigma: f64,
    /// Per-joint dropout probability; both ankles drop together.
    pub miss_prob: f64,
    pub occlusion_enabled: bool,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            joint_sigma: 0.0,
            miss_prob: 0.0,
            occlusion_enabled: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectabilityConfig {
    /// Minimum projected body height, in processed pixels, to be detected.
    pub min_person_pixels: f64,
}

impl Default for DetectabilityConfig {
    fn default() -> Self {
        Self { min_person_pixels: 48.0 }
    }
}

fn default_stride() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub cam: CameraModel,
    pub fps: f64,
    pub duration: f64,
    pub agents: Vec<Agent>,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub detect_cfg: DetectabilityConfig,
    #[serde(default)]
    pub seed: u64,
    /// Optional scripted motion of the camera; agent positions are
    /// expressed relative to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_path: Option<Trajectory>,
    /// Ground truth is written every this many frames.
    #[serde(default = "default_stride")]
    pub annotation_stride: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) || !(self.duration > 0.0) {
            return Err(Error::Config("fps and duration must be positive".into()));
        }
        if self.annotation_stride == 0 {
            return Err(Error::Config("annotation_stride must be at least 1".into()));
        }
        let n = &self.noise;
        if !(n.joint_sigma >= 0.0) || !(0.0..=1.0).contains(&n.miss_prob) {
            return Err(Error::Config("noise sigma must be >= 0 and miss_prob in [0, 1]".into()));
        }
        if !(self.detect_cfg.min_person_pixels > 0.0) {
            return Err(Error::Config("min_person_pixels must be positive".into()));
        }
        let mut ids: Vec<u64> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.agents.len() {
            return Err(Error::Config("agent ids must be unique".into()));
        }
        for a in &self.agents {
            a.body.validate()?;
            a.trajectory.validate()?;
        }
        if let Some(p) = &self.camera_path {
            p.validate()?;
        }
        Ok(())
    }

    pub fn frame_count(&self) -> u64 {
        (self.duration * self.fps).round() as u64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }

    /// World snapshot at frame `k`, agents in the camera frame.
    pub fn snapshot(&self, k: u64) -> FrameSnapshot {
        let t = k as f64 / self.fps;
        let origin = self.camera_path.as_ref().map(|p| p.pose_at(t));
        let agents = self
            .agents
            .iter()
            .map(|a| {
                let mut p = a.trajectory.pose_at(t);
                if let Some(o) = origin {
                    p.x -= o.x;
                    p.y -= o.y;
                }
                AgentPose {
                    id: a.id,
                    x: p.x,
                    y: p.y,
                    heading: p.heading,
                    body: a.body,
                }
            })
            .collect();
        FrameSnapshot { frame: k, t, agents }
    }

    /// Lazily generated snapshots for the whole scenario.
    pub fn frames(&self) -> impl Iterator<Item = FrameSnapshot> + '_ {
        (0..self.frame_count()).map(move |k| self.snapshot(k))
    }

    pub fn is_annotated(&self, frame: u64) -> bool {
        frame.is_multiple_of(self.annotation_stride)
    }

    pub fn detector(&self) -> SyntheticDetector {
        SyntheticDetector {
            cam: self.cam,
            noise: self.noise,
            detect_cfg: self.detect_cfg,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub body: Body,
}

impl AgentPose {
    pub fn range(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// One simulated frame: the frame handle the synthetic detector reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSnapshot {
    pub frame: u64,
    pub t: f64,
    pub agents: Vec<AgentPose>,
}

/// Noise-free skeleton of an agent.
pub fn project_agent(pose: &AgentPose, cam: &CameraModel) -> Result<Skeleton> {
    if pose.range() <= MIN_AGENT_RANGE {
        return Err(Error::Singular);
    }
    let b = &pose.body;
    let (lx, ly) = (-pose.heading.sin(), pose.heading.cos());
    let at = |lateral: f64, z: f64| -> Result<Keypoint> {
        let p = world_to_image(WorldPoint::new(pose.x + lateral * lx, pose.y + lateral * ly, z), cam)?;
        Ok(Keypoint { point: p, confidence: 1.0 })
    };
    let neck_z = b.neck_height();
    let hip_z = HIP_HEIGHT_RATIO * b.height;
    Skeleton::new([
        (Joint::Neck, at(0.0, neck_z)?),
        (Joint::LeftShoulder, at(b.shoulder_half_width, neck_z)?),
        (Joint::RightShoulder, at(-b.shoulder_half_width, neck_z)?),
        (Joint::LeftHip, at(b.hip_half_width, hip_z)?),
        (Joint::RightHip, at(-b.hip_half_width, hip_z)?),
        (Joint::LeftAnkle, at(b.hip_half_width, b.ankle_height)?),
        (Joint::RightAnkle, at(-b.hip_half_width, b.ankle_height)?),
    ])
}

/// Full-resolution pixel height from feet to head top.
pub fn body_pixel_height(pose: &AgentPose, cam: &CameraModel) -> Result<f64> {
    let feet = world_to_image(WorldPoint::new(pose.x, pose.y, 0.0), cam)?;
    let head = world_to_image(WorldPoint::new(pose.x, pose.y, pose.body.height), cam)?;
    Ok(feet.y - head.y)
}

/// Azimuth interval `(centre, half width)` covered by the shoulders, degrees.
fn azimuth_interval(pose: &AgentPose) -> (f64, f64) {
    let centre = pose.y.atan2(pose.x).to_degrees();
    let half = pose.body.shoulder_half_width.atan2(pose.range()).to_degrees();
    (centre, half)
}

/// Whether `pose` is hidden by a strictly nearer agent covering more than
/// half of its azimuth interval.
fn occluded(pose: &AgentPose, others: &[AgentPose]) -> bool {
    let (c, h) = azimuth_interval(pose);
    others.iter().any(|o| {
        if o.id == pose.id || !(o.range() < pose.range()) {
            return false;
        }
        let (oc, oh) = azimuth_interval(o);
        let d = normalize_deg(oc - c).abs();
        let overlap = ((h + oh).min(2.0 * h).min(h + oh - d)).max(0.0);
        h > 0.0 && overlap / (2.0 * h) > 0.5
    })
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed shared by every viewport of one frame.
pub fn frame_stream(seed: u64, frame: u64) -> u64 {
    mix64(mix64(seed) ^ frame)
}

/// Random stream for one agent seen at one processing scale.
///
/// Viewports processed at the same scale see the same pixels of an agent,
/// so they share its noise; a different scale gets independent noise.
fn agent_stream(stream: u64, agent: u64, scale: f64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(mix64(stream ^ agent) ^ scale.to_bits()))
}

/// Detector port backed by the exact projection of simulated agents.
#[derive(Debug, Clone)]
pub struct SyntheticDetector {
    pub cam: CameraModel,
    pub noise: NoiseModel,
    pub detect_cfg: DetectabilityConfig,
    pub seed: u64,
}

impl SyntheticDetector {
    /// Skeletons visible in `viewport`, in processed viewport coordinates.
    /// `stream` seeds the noise (see [`frame_stream`]).
    pub fn synthetic_detect(&self, viewport: &Viewport, snapshot: &FrameSnapshot, stream: u64) -> Vec<Skeleton> {
        let cam = &self.cam;
        let w = cam.width();
        let normal = Normal::new(0.0, self.noise.joint_sigma.max(0.0)).expect("sigma is finite");
        let mut out = Vec::new();
        for pose in &snapshot.agents {
            let Ok(sk) = project_agent(pose, cam) else {
                continue;
            };
            let Ok(px) = body_pixel_height(pose, cam) else {
                continue;
            };
            let neck = sk.neck().expect("projected skeletons have a neck");
            if !viewport.contains_column(neck.x, w) {
                continue;
            }
            if px * viewport.scale < self.detect_cfg.min_person_pixels {
                continue;
            }
            if self.noise.occlusion_enabled && occluded(pose, &snapshot.agents) {
                continue;
            }
            let rng = &mut agent_stream(stream, pose.id, viewport.scale);
            let drop_ankles = self.noise.miss_prob > 0.0 && rng.random::<f64>() < self.noise.miss_prob;
            let mut joints = Vec::new();
            for (j, k) in sk.joints() {
                let mut local = viewport.to_local(k.point, w);
                if self.noise.joint_sigma > 0.0 {
                    local.x += normal.sample(rng);
                    local.y += normal.sample(rng);
                }
                let dropped = match j {
                    Joint::LeftAnkle | Joint::RightAnkle => drop_ankles,
                    _ => self.noise.miss_prob > 0.0 && rng.random::<f64>() < self.noise.miss_prob,
                };
                if !dropped {
                    joints.push((j, Keypoint { point: local, confidence: k.confidence }));
                }
            }
            if let Ok(s) = Skeleton::new(joints) {
                out.push(s);
            }
        }
        out
    }
}

impl DetectorPort<FrameSnapshot> for SyntheticDetector {
    fn detect(&self, frame: &FrameSnapshot, viewport: &Viewport, _viewport_index: usize) -> Result<Vec<Skeleton>> {
        Ok(self.synthetic_detect(viewport, frame, frame_stream(self.seed, frame.frame)))
    }
}

/// One agent in a ground-truth JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthAgent {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    /// Noise-free joints; empty when the agent is under the camera.
    pub joints: BTreeMap<Joint, Keypoint>,
    pub is_target: bool,
}

impl GroundTruthAgent {
    pub fn range(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// One line of a ground-truth JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub frame: u64,
    pub t: f64,
    pub agents: Vec<GroundTruthAgent>,
}

impl GroundTruthFrame {
    pub fn target(&self) -> Option<&GroundTruthAgent> {
        self.agents.iter().find(|a| a.is_target)
    }
}

/// Annotation of a snapshot; the agent with id 0 is the target.
pub fn ground_truth(snapshot: &FrameSnapshot, cam: &CameraModel) -> GroundTruthFrame {
    GroundTruthFrame {
        frame: snapshot.frame,
        t: snapshot.t,
        agents: snapshot
            .agents
            .iter()
            .map(|a| GroundTruthAgent {
                id: a.id,
                x: a.x,
                y: a.y,
                joints: project_agent(a, cam)
                    .map(|s| s.joints().map(|(j, k)| (j, *k)).collect())
                    .unwrap_or_default(),
                is_target: a.id == 0,
            })
            .collect(),
    }
}

/// A fully generated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRun {
    pub frames: Vec<FrameSnapshot>,
    pub ground_truth: Vec<GroundTruthFrame>,
}

pub fn run_scenario(s: &Scenario) -> Result<ScenarioRun> {
    s.validate()?;
    let frames: Vec<FrameSnapshot> = s.frames().collect();
    let ground_truth = frames
        .iter()
        .filter(|f| s.is_annotated(f.frame))
        .map(|f| ground_truth(f, &s.cam))
        .collect();
    Ok(ScenarioRun { frames, ground_truth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::{build_tiles, Viewport};
    use crate::geometry::{ankle_midpoint, localize};
    use approx::assert_abs_diff_eq;

    fn pose(x: f64, y: f64) -> AgentPose {
        AgentPose { id: 0, x, y, heading: 0.0, body: Body::default() }
    }

    #[test]
    fn projection_matches_geometry_chain() {
        let cam = CameraModel::default();
        let mut p = pose(1.1, 0.0);
        p.body.height = 1.418_803_604_117_623_7 + p.body.neck_drop;
        let sk = project_agent(&p, &cam).unwrap();
        let neck = sk.neck().unwrap();
        assert_abs_diff_eq!(neck.x, 960.0, epsilon = 1e-9);
        assert_abs_diff_eq!(neck.y, 420.0, epsilon = 1e-6);
        let mid = ankle_midpoint(
            sk.joint(Joint::LeftAnkle).unwrap().point,
            sk.joint(Joint::RightAnkle).unwrap().point,
            &cam,
        );
        assert_abs_diff_eq!(mid.x, 960.0, epsilon = 1e-9);
        assert_abs_diff_eq!(mid.y, 720.0, epsilon = 1e-9);
        let w = localize(mid, neck, &cam).unwrap();
        assert_abs_diff_eq!(w.x, 1.1, epsilon = 1e-6);
        assert_abs_diff_eq!(w.y, 0.0, epsilon = 1e-6);
    }

    #[test]
    fn agent_behind_camera_sits_on_seam() {
        let cam = CameraModel::default();
        let sk = project_agent(&pose(-2.0, 0.0), &cam).unwrap();
        assert_eq!(sk.neck().unwrap().x, 0.0);
        let l = sk.joint(Joint::LeftShoulder).unwrap().point.x;
        let r = sk.joint(Joint::RightShoulder).unwrap().point.x;
        assert!(l.min(r) < 100.0 && l.max(r) > 1820.0);
        assert!(matches!(project_agent(&pose(0.1, 0.1), &cam), Err(Error::Singular)));
    }

    #[test]
    fn pixel_height_brute_force() {
        let cam = CameraModel::default();
        // angular subtense of a 1.7 m person from a 1.2 m camera
        let oracle = |d: f64| ((1.2f64 / d).atan() + (0.5f64 / d).atan()).to_degrees() * 960.0 / 180.0;
        for d in [2.0, 3.5, 4.0, 7.0] {
            assert_abs_diff_eq!(body_pixel_height(&pose(d, 0.0), &cam).unwrap(), oracle(d), epsilon = 1e-9);
        }
        assert_abs_diff_eq!(oracle(3.5), 144.292, epsilon = 1e-3);
    }

    #[test]
    fn detectability_cutoff_at_downscaled_resolution() {
        let cam = CameraModel::default();
        let det = SyntheticDetector { cam, noise: NoiseModel::default(), detect_cfg: DetectabilityConfig::default(), seed: 1 };
        let full = Viewport::full_frame(&cam, 1.0 / 3.0).unwrap();
        let roi = Viewport::new(960.0 - 288.0, 384.0, 576.0, 192.0, 1.0, &cam).unwrap();
        let snap = |d: f64| FrameSnapshot { frame: 0, t: 0.0, agents: vec![pose(d, 0.0)] };
        assert_eq!(det.synthetic_detect(&full, &snap(3.5), 0).len(), 1);
        assert_eq!(det.synthetic_detect(&full, &snap(4.0), 0).len(), 0);
        assert_eq!(det.synthetic_detect(&roi, &snap(4.0), 0).len(), 1);
        assert_eq!(det.synthetic_detect(&roi, &snap(8.0), 0).len(), 1);
    }

    #[test]
    fn noise_free_detection_is_exact() {
        let cam = CameraModel::default();
        let det = SyntheticDetector { cam, noise: NoiseModel::default(), detect_cfg: DetectabilityConfig::default(), seed: 1 };
        let layout = build_tiles(&cam, 3, 150.0, (160.0, 800.0)).unwrap();
        let vp = layout.viewports[1];
        let p = pose(2.0, 0.3);
        let snap = FrameSnapshot { frame: 0, t: 0.0, agents: vec![p] };
        let got = det.detect(&snap, &vp, 1).unwrap();
        assert_eq!(got.len(), 1);
        let truth = project_agent(&p, &cam).unwrap();
        for (j, k) in truth.joints() {
            let back = vp.to_full(got[0].joint(j).unwrap().point, 1920.0);
            assert_abs_diff_eq!(back.x, k.point.x, epsilon = 1e-9);
            assert_abs_diff_eq!(back.y, k.point.y, epsilon = 1e-9);
        }
    }

    #[test]
    fn overlap_zone_produces_duplicates() {
        let cam = CameraModel::default();
        let det = SyntheticDetector { cam, noise: NoiseModel::default(), detect_cfg: DetectabilityConfig::default(), seed: 1 };
        let layout = build_tiles(&cam, 3, 150.0, (160.0, 800.0)).unwrap();
        // azimuth for column 700: theta = 180 - 700 * 0.1875
        let theta = (180.0f64 - 700.0 * 0.1875).to_radians();
        let p = pose(2.0 * theta.cos(), 2.0 * theta.sin());
        let snap = FrameSnapshot { frame: 0, t: 0.0, agents: vec![p] };
        let hits: usize = (0..3).map(|i| det.detect(&snap, &layout.viewports[i], i).unwrap().len()).sum();
        assert_eq!(hits, 2);
    }

    #[test]
    fn occlusion_hides_farther_agent() {
        let cam = CameraModel::default();
        let det = SyntheticDetector {
            cam,
            noise: NoiseModel { occlusion_enabled: true, ..Default::default() },
            detect_cfg: DetectabilityConfig::default(),
            seed: 1,
        };
        let near = pose(2.0, 0.0);
        let far = AgentPose { id: 1, ..pose(3.0, 0.1) };
        let side = AgentPose { id: 2, ..pose(0.0, 3.0) };
        let snap = FrameSnapshot { frame: 0, t: 0.0, agents: vec![near, far, side] };
        let full = Viewport::full_frame(&cam, 1.0).unwrap();
        assert_eq!(det.synthetic_detect(&full, &snap, 0).len(), 2);
    }

    #[test]
    fn ankles_drop_together() {
        let cam = CameraModel::default();
        let det = SyntheticDetector {
            cam,
            noise: NoiseModel { miss_prob: 0.5, ..Default::default() },
            detect_cfg: DetectabilityConfig::default(),
            seed: 1,
        };
        let full = Viewport::full_frame(&cam, 1.0).unwrap();
        let snap = FrameSnapshot { frame: 0, t: 0.0, agents: vec![pose(2.0, 0.0)] };
        for stream in 0..200 {
            for sk in det.synthetic_detect(&full, &snap, stream) {
                assert_eq!(sk.joint(Joint::LeftAnkle).is_some(), sk.joint(Joint::RightAnkle).is_some());
            }
        }
    }

    fn circle_scenario(seed: u64) -> Scenario {
        Scenario {
            cam: CameraModel::default(),
            fps: 30.0,
            duration: 10.0,
            agents: vec![Agent {
                id: 0,
                trajectory: Trajectory::Circle { center: [0.0, 0.0], radius: 2.0, angular_speed: 0.5, phase: 0.0 },
                body: Body::default(),
            }],
            noise: NoiseModel { joint_sigma: 1.0, ..Default::default() },
            detect_cfg: DetectabilityConfig::default(),
            seed,
            camera_path: None,
            annotation_stride: 1,
        }
    }

    #[test]
    fn scenario_frames_and_ground_truth() {
        let s = circle_scenario(7);
        let run = run_scenario(&s).unwrap();
        assert_eq!(run.frames.len(), 300);
        assert_eq!(run.ground_truth.len(), 300);
        for gt in &run.ground_truth {
            assert_abs_diff_eq!(gt.target().unwrap().range(), 2.0, epsilon = 1e-9);
        }
        assert_eq!(run, run_scenario(&circle_scenario(7)).unwrap());

        let sparse = Scenario { annotation_stride: 10, ..circle_scenario(7) };
        assert_eq!(run_scenario(&sparse).unwrap().ground_truth.len(), 30);
    }

    #[test]
    fn polyline_walks_and_stops() {
        let t = Trajectory::Polyline { waypoints: vec![[0.0, 0.0], [2.0, 0.0], [2.0, 2.0]], speeds: vec![1.0, 2.0] };
        let p = t.pose_at(1.0);
        assert_abs_diff_eq!(p.x, 1.0);
        let p = t.pose_at(2.5);
        assert_abs_diff_eq!(p.y, 1.0);
        assert_abs_diff_eq!(p.heading, std::f64::consts::FRAC_PI_2);
        let p = t.pose_at(100.0);
        assert_eq!((p.x, p.y), (2.0, 2.0));
    }

    #[test]
    fn camera_path_offsets_agents() {
        let mut s = circle_scenario(1);
        s.camera_path = Some(Trajectory::Polyline { waypoints: vec![[0.0, 0.0], [10.0, 0.0]], speeds: vec![1.0] });
        let snap = s.snapshot(30);
        let world = s.agents[0].trajectory.pose_at(1.0);
        assert_abs_diff_eq!(snap.agents[0].x, world.x - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn validation_rejects_bad_scenarios() {
        let mut s = circle_scenario(1);
        s.fps = 0.0;
        assert!(s.validate().is_err());
        let mut s = circle_scenario(1);
        s.agents[0].body.height = 2.5;
        assert!(s.validate().is_err());
        let mut s = circle_scenario(1);
        s.agents.push(s.agents[0].clone());
        assert!(s.validate().is_err());
        let mut s = circle_scenario(1);
        s.noise.miss_prob = 1.5;
        assert!(s.validate().is_err());
    }

    #[test]
    fn substreams_are_independent_of_call_order() {
        let cam = CameraModel::default();
        let s = circle_scenario(11);
        let det = s.detector();
        let snap = s.snapshot(4);
        let layout = build_tiles(&cam, 3, 150.0, (160.0, 800.0)).unwrap();
        let forward: Vec<_> = (0..3).map(|i| det.detect(&snap, &layout.viewports[i], i).unwrap()).collect();
        let mut backward: Vec<_> = (0..3).rev().map(|i| det.detect(&snap, &layout.viewports[i], i).unwrap()).collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn same_scale_viewports_share_noise() {
        let cam = CameraModel::default();
        let det = SyntheticDetector {
            cam,
            noise: NoiseModel { joint_sigma: 2.0, ..Default::default() },
            detect_cfg: DetectabilityConfig::default(),
            seed: 5,
        };
        let theta = (180.0f64 - 700.0 * 0.1875).to_radians();
        let snap = FrameSnapshot { frame: 3, t: 0.1, agents: vec![pose(2.0 * theta.cos(), 2.0 * theta.sin())] };
        let layout = build_tiles(&cam, 3, 150.0, (160.0, 800.0)).unwrap();
        let a = &det.detect(&snap, &layout.viewports[0], 0).unwrap()[0];
        let b = &det.detect(&snap, &layout.viewports[1], 1).unwrap()[0];
        let full = Viewport::full_frame(&cam, 1.0 / 3.0).unwrap();
        let c = &det.detect(&snap, &full, 0).unwrap()[0];
        let na = layout.viewports[0].to_full(a.neck().unwrap(), 1920.0);
        let nb = layout.viewports[1].to_full(b.neck().unwrap(), 1920.0);
        let nc = full.to_full(c.neck().unwrap(), 1920.0);
        assert_abs_diff_eq!(na.x, nb.x, epsilon = 1e-9);
        assert_abs_diff_eq!(na.y, nb.y, epsilon = 1e-9);
        assert!((na.x - nc.x).abs() > 1e-6);
    }
}
