//! Viewport planning, the detector port and duplicate fusion.
//!
//! A frame is never decoded here. Strategies decide which viewports of the
//! panorama a detector should look at, hand each one to a [`DetectorPort`],
//! map the returned skeletons back into full-image coordinates and collapse
//! the duplicates produced by overlapping viewports.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_column, wrap_diff, CameraModel, ImagePoint};

/// Default fusion threshold on the containment score.
pub const DEFAULT_SIGMA1: f64 = 0.9;

/// Tile overlap at 1920 columns: roughly the width of a person 1 m away.
pub const DEFAULT_OVERLAP_PX: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    Neck,
    LeftShoulder,
    RightShoulder,
    LeftHip,
    RightHip,
    LeftAnkle,
    RightAnkle,
}

impl Joint {
    pub const ALL: [Joint; 7] = [
        Joint::Neck,
        Joint::LeftShoulder,
        Joint::RightShoulder,
        Joint::LeftHip,
        Joint::RightHip,
        Joint::LeftAnkle,
        Joint::RightAnkle,
    ];

    const TORSO: [Joint; 5] = [
        Joint::Neck,
        Joint::LeftShoulder,
        Joint::RightShoulder,
        Joint::LeftHip,
        Joint::RightHip,
    ];
}

/// A joint location with detector confidence, serialized as `[x, y, conf]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, f64)", into = "(f64, f64, f64)")]
pub struct Keypoint {
    pub point: ImagePoint,
    pub confidence: f64,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self {
            point: ImagePoint::new(x, y),
            confidence,
        }
    }
}

impl From<(f64, f64, f64)> for Keypoint {
    fn from((x, y, c): (f64, f64, f64)) -> Self {
        Keypoint::new(x, y, c)
    }
}

impl From<Keypoint> for (f64, f64, f64) {
    fn from(k: Keypoint) -> Self {
        (k.point.x, k.point.y, k.confidence)
    }
}

/// Named body joints of one detected person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSkeleton")]
pub struct Skeleton {
    joints: BTreeMap<Joint, Keypoint>,
}

#[derive(Deserialize)]
struct RawSkeleton {
    joints: BTreeMap<Joint, Keypoint>,
}

impl TryFrom<RawSkeleton> for Skeleton {
    type Error = Error;

    fn try_from(raw: RawSkeleton) -> Result<Self> {
        Skeleton::new(raw.joints)
    }
}

/// The unit handed from a detection strategy to the tracker.
pub type Detection = Skeleton;

impl Skeleton {
    pub fn new(joints: impl IntoIterator<Item = (Joint, Keypoint)>) -> Result<Self> {
        let joints: BTreeMap<_, _> = joints.into_iter().collect();
        if joints.is_empty() {
            return Err(Error::DegenerateSkeleton("no joints"));
        }
        for k in joints.values() {
            if !(0.0..=1.0).contains(&k.confidence) {
                return Err(Error::Input(format!("confidence {} outside [0, 1]", k.confidence)));
            }
            if !k.point.x.is_finite() || !k.point.y.is_finite() {
                return Err(Error::Input("non-finite joint coordinate".into()));
            }
        }
        Ok(Self { joints })
    }

    pub fn joint(&self, j: Joint) -> Option<&Keypoint> {
        self.joints.get(&j)
    }

    pub fn joints(&self) -> impl Iterator<Item = (Joint, &Keypoint)> {
        self.joints.iter().map(|(j, k)| (*j, k))
    }

    pub fn neck(&self) -> Option<ImagePoint> {
        self.joint(Joint::Neck).map(|k| k.point)
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn mean_confidence(&self) -> f64 {
        self.joints.values().map(|k| k.confidence).sum::<f64>() / self.joints.len() as f64
    }

    /// Column used for ordering: the neck if present, else the leftmost joint.
    pub fn anchor_x(&self) -> f64 {
        self.neck().map(|p| p.x).unwrap_or_else(|| {
            self.joints
                .values()
                .map(|k| k.point.x)
                .fold(f64::INFINITY, f64::min)
        })
    }

    /// Applies `f` to every joint position.
    pub fn map_points(&self, mut f: impl FnMut(ImagePoint) -> ImagePoint) -> Skeleton {
        Skeleton {
            joints: self
                .joints
                .iter()
                .map(|(j, k)| {
                    (
                        *j,
                        Keypoint {
                            point: f(k.point),
                            confidence: k.confidence,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Axis-aligned box in full-image pixels; `x` wraps modulo the image width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Tight box around neck, shoulders and hips, computed across the seam.
pub fn torso_bbox(sk: &Skeleton, image_width: f64) -> Result<BoundingBox> {
    let neck = sk
        .neck()
        .ok_or(Error::DegenerateSkeleton("torso box needs a neck"))?;
    let pts: Vec<ImagePoint> = Joint::TORSO
        .iter()
        .filter_map(|j| sk.joint(*j).map(|k| k.point))
        .collect();
    if pts.len() < 2 {
        return Err(Error::DegenerateSkeleton(
            "torso box needs a shoulder or hip besides the neck",
        ));
    }
    // unwrap every column relative to the neck
    let xs = pts.iter().map(|p| neck.x + wrap_diff(p.x, neck.x, image_width));
    let (x_min, x_max) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    });
    let (y_min, y_max) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.y), hi.max(p.y))
        });
    Ok(BoundingBox {
        x: wrap_column(x_min, image_width),
        y: y_min,
        w: (x_max - x_min).max(1.0),
        h: (y_max - y_min).max(1.0),
    })
}

fn interval_overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Intersection over the smaller box's area; 1 whenever one box contains
/// the other.
pub fn merge_score(b1: &BoundingBox, b2: &BoundingBox, image_width: f64) -> f64 {
    let x1 = wrap_column(b1.x, image_width);
    let x2 = wrap_column(b2.x, image_width);
    let ox = [-image_width, 0.0, image_width]
        .iter()
        .map(|s| interval_overlap(x1, x1 + b1.w, x2 + s, x2 + s + b2.w))
        .fold(0.0, f64::max);
    let oy = interval_overlap(b1.y, b1.y + b1.h, b2.y, b2.y + b2.h);
    let smaller = b1.area().min(b2.area());
    if smaller <= 0.0 {
        return 0.0;
    }
    (ox * oy / smaller).clamp(0.0, 1.0)
}

/// A rectangle of the panorama handed to the detector, and the scale at
/// which the detector processes it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport {
    pub origin_x: f64,
    pub origin_y: f64,
    pub width: f64,
    pub height: f64,
    /// Processed pixels per full-resolution pixel, in (0, 1].
    pub scale: f64,
}

impl Viewport {
    pub fn new(origin_x: f64, origin_y: f64, width: f64, height: f64, scale: f64, cam: &CameraModel) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::Config("viewport must have positive size".into()));
        }
        if width > cam.width() || origin_y < 0.0 || origin_y + height > cam.height() {
            return Err(Error::Config(format!(
                "viewport {width}x{height} at row {origin_y} does not fit the image"
            )));
        }
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(Error::Config(format!("viewport scale {scale} outside (0, 1]")));
        }
        Ok(Self {
            origin_x: wrap_column(origin_x, cam.width()),
            origin_y,
            width,
            height,
            scale,
        })
    }

    /// The whole panorama processed at `scale`.
    pub fn full_frame(cam: &CameraModel, scale: f64) -> Result<Self> {
        Self::new(0.0, 0.0, cam.width(), cam.height(), scale, cam)
    }

    /// Whether a full-image column falls inside this viewport.
    pub fn contains_column(&self, x: f64, image_width: f64) -> bool {
        if self.width >= image_width {
            return true;
        }
        (x - self.origin_x).rem_euclid(image_width) < self.width
    }

    /// Full-image point to processed viewport coordinates.
    ///
    /// Points just outside either edge keep a small negative or overflowing
    /// coordinate instead of wrapping around.
    pub fn to_local(&self, p: ImagePoint, image_width: f64) -> ImagePoint {
        let centre = self.origin_x + self.width / 2.0;
        let dx = if self.width >= image_width {
            p.x - self.origin_x
        } else {
            wrap_diff(p.x, centre, image_width) + self.width / 2.0
        };
        ImagePoint::new(dx * self.scale, (p.y - self.origin_y) * self.scale)
    }

    /// Processed viewport coordinates back to the full image.
    pub fn to_full(&self, p: ImagePoint, image_width: f64) -> ImagePoint {
        ImagePoint::new(
            wrap_column(self.origin_x + p.x / self.scale, image_width),
            self.origin_y + p.y / self.scale,
        )
    }
}

/// Overlapping vertical tiles covering the full panorama width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileLayout {
    pub viewports: Vec<Viewport>,
    pub overlap: f64,
    pub n_tiles: usize,
    pub image_width: f64,
}

/// Rows kept by default: elevations within +-60 degrees.
pub fn default_row_range(cam: &CameraModel) -> (f64, f64) {
    (cam.row_of_elevation(60.0), cam.row_of_elevation(-60.0))
}

/// Tile overlap scaled from the 1920-column default.
pub fn default_overlap(cam: &CameraModel) -> f64 {
    DEFAULT_OVERLAP_PX * cam.width() / 1920.0
}

pub fn build_tiles(cam: &CameraModel, n_tiles: usize, overlap: f64, row_range: (f64, f64)) -> Result<TileLayout> {
    if n_tiles < 2 {
        return Err(Error::Config("at least two tiles are required".into()));
    }
    let stride = cam.width() / n_tiles as f64;
    if !(overlap >= 0.0 && overlap < stride) {
        return Err(Error::Config(format!(
            "overlap {overlap} must be in [0, {stride})"
        )));
    }
    let (r0, r1) = row_range;
    if !(r0 >= 0.0 && r1 <= cam.height() && r1 > r0) {
        return Err(Error::Config(format!("row range ({r0}, {r1}) invalid")));
    }
    let viewports = (0..n_tiles)
        .map(|i| Viewport::new(i as f64 * stride, r0, stride + overlap, r1 - r0, 1.0, cam))
        .collect::<Result<Vec<_>>>()?;
    Ok(TileLayout {
        viewports,
        overlap,
        n_tiles,
        image_width: cam.width(),
    })
}

/// Something that finds skeletons inside a viewport of a frame.
///
/// Returned skeletons are in processed viewport coordinates (see
/// [`Viewport::to_local`]). Implementations are called concurrently for
/// different viewports of the same frame and must be deterministic for a
/// fixed frame, viewport and viewport index.
pub trait DetectorPort<F: ?Sized>: Sync {
    fn detect(&self, frame: &F, viewport: &Viewport, viewport_index: usize) -> Result<Vec<Skeleton>>;
}

/// How viewports of one frame are dispatched to the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dispatch {
    #[default]
    Parallel,
    Sequential,
}

/// Fused detections of one frame, with any per-viewport failures.
#[derive(Debug, Default)]
pub struct DetectionBatch {
    pub detections: Vec<Detection>,
    pub errors: Vec<Error>,
}

impl DetectionBatch {
    /// True when at least one viewport failed and the result is incomplete.
    pub fn is_partial(&self) -> bool {
        !self.errors.is_empty()
    }
}

struct DisjointSets(Vec<usize>);

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

fn survivor_order(a: &(Skeleton, usize), b: &(Skeleton, usize)) -> Ordering {
    b.0.joint_count()
        .cmp(&a.0.joint_count())
        .then_with(|| b.0.mean_confidence().total_cmp(&a.0.mean_confidence()))
        .then_with(|| output_order(a, b))
}

fn output_order(a: &(Skeleton, usize), b: &(Skeleton, usize)) -> Ordering {
    a.1.cmp(&b.1)
        .then_with(|| a.0.anchor_x().total_cmp(&b.0.anchor_x()))
        .then_with(|| {
            let ya = a.0.neck().map_or(f64::NAN, |p| p.y);
            let yb = b.0.neck().map_or(f64::NAN, |p| p.y);
            ya.total_cmp(&yb)
        })
}

fn adjacent_pairs(n_viewports: usize) -> Vec<(usize, usize)> {
    match n_viewports {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        n => (0..n).map(|i| (i, (i + 1) % n)).collect(),
    }
}

/// Collapses skeletons seen twice by cyclically adjacent viewports.
///
/// Pairs from adjacent viewports whose torso boxes score at least `sigma1`
/// are linked; each connected group keeps one member, the one with the most
/// joints, then the highest mean confidence. Skeletons without a usable
/// torso box are never merged. The output keeps each survivor's viewport
/// index and is sorted by viewport index, then column.
pub fn fuse_adjacent(
    dets: &[(Skeleton, usize)],
    n_viewports: usize,
    image_width: f64,
    sigma1: f64,
) -> Vec<(Skeleton, usize)> {
    let boxes: Vec<Option<BoundingBox>> = dets
        .iter()
        .map(|(sk, _)| torso_bbox(sk, image_width).ok())
        .collect();
    let mut sets = DisjointSets::new(dets.len());
    for (va, vb) in adjacent_pairs(n_viewports) {
        for i in 0..dets.len() {
            if dets[i].1 != va {
                continue;
            }
            for j in 0..dets.len() {
                if dets[j].1 != vb {
                    continue;
                }
                if let (Some(bi), Some(bj)) = (&boxes[i], &boxes[j]) {
                    if merge_score(bi, bj, image_width) >= sigma1 {
                        sets.union(i, j);
                    }
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..dets.len() {
        let root = sets.find(i);
        groups.entry(root).or_default().push(i);
    }
    let mut out: Vec<(Skeleton, usize)> = groups
        .values()
        .map(|members| {
            members
                .iter()
                .map(|&i| &dets[i])
                .min_by(|a, b| survivor_order(a, b))
                .cloned()
                .expect("groups are never empty")
        })
        .collect();
    out.sort_by(output_order);
    out
}

/// [`fuse_adjacent`] over the tiles of `layout`.
pub fn fuse_duplicates(dets: &[(Skeleton, usize)], layout: &TileLayout, sigma1: f64) -> Vec<(Skeleton, usize)> {
    fuse_adjacent(dets, layout.viewports.len(), layout.image_width, sigma1)
}

/// Runs the detector on every viewport and maps results to full-image
/// coordinates, keeping viewport order regardless of completion order.
fn dispatch<F, D>(
    frame: &F,
    detector: &D,
    viewports: &[Viewport],
    image_width: f64,
    mode: Dispatch,
) -> (Vec<(Skeleton, usize)>, Vec<Error>)
where
    F: ?Sized + Sync,
    D: DetectorPort<F> + ?Sized,
{
    let run = |(i, vp): (usize, &Viewport)| -> Result<Vec<(Skeleton, usize)>> {
        let local = detector.detect(frame, vp, i)?;
        Ok(local
            .iter()
            .map(|sk| (sk.map_points(|p| vp.to_full(p, image_width)), i))
            .collect())
    };
    let results: Vec<Result<Vec<(Skeleton, usize)>>> = match mode {
        Dispatch::Parallel => viewports.par_iter().enumerate().map(run).collect(),
        Dispatch::Sequential => viewports.iter().enumerate().map(run).collect(),
    };
    let mut found = Vec::new();
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(mut v) => found.append(&mut v),
            Err(e) => errors.push(e),
        }
    }
    (found, errors)
}

/// Tiled strategy: one detector call per tile, then fusion across the
/// overlaps (including the seam pair).
pub fn run_tiles<F, D>(frame: &F, detector: &D, layout: &TileLayout, sigma1: f64, mode: Dispatch) -> DetectionBatch
where
    F: ?Sized + Sync,
    D: DetectorPort<F> + ?Sized,
{
    let (found, errors) = dispatch(frame, detector, &layout.viewports, layout.image_width, mode);
    let detections = fuse_duplicates(&found, layout, sigma1)
        .into_iter()
        .map(|(sk, _)| sk)
        .collect();
    DetectionBatch { detections, errors }
}

/// Processing sizes for the region-of-interest strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoiConfig {
    pub roi_width: f64,
    pub roi_height: f64,
    /// Width the whole panorama is downscaled to.
    pub full_width: f64,
    /// Height the whole panorama is downscaled to.
    pub full_height: f64,
    pub sigma1: f64,
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            roi_width: 576.0,
            roi_height: 192.0,
            full_width: 640.0,
            full_height: 320.0,
            sigma1: DEFAULT_SIGMA1,
        }
    }
}

impl RoiConfig {
    /// Scale of the downscaled full-frame pass.
    pub fn full_scale(&self, cam: &CameraModel) -> f64 {
        (self.full_width / cam.width()).min(self.full_height / cam.height())
    }

    /// Full-resolution crop centred on `centre`, wrapping in x and clamped
    /// to the image in y.
    pub fn roi_viewport(&self, centre: ImagePoint, cam: &CameraModel) -> Result<Viewport> {
        let h = self.roi_height.min(cam.height());
        let y0 = (centre.y - h / 2.0).clamp(0.0, cam.height() - h);
        Viewport::new(centre.x - self.roi_width / 2.0, y0, self.roi_width, h, 1.0, cam)
    }
}

/// Region-of-interest strategy.
///
/// With a target prediction: a downscaled full-frame pass plus a
/// full-resolution crop around the prediction, fused. Without one: the
/// downscaled pass alone.
pub fn run_roi<F, D>(
    frame: &F,
    detector: &D,
    target_prediction: Option<ImagePoint>,
    cam: &CameraModel,
    cfg: &RoiConfig,
    mode: Dispatch,
) -> Result<DetectionBatch>
where
    F: ?Sized + Sync,
    D: DetectorPort<F> + ?Sized,
{
    let mut viewports = vec![Viewport::full_frame(cam, cfg.full_scale(cam))?];
    if let Some(p) = target_prediction {
        viewports.push(cfg.roi_viewport(p, cam)?);
    }
    let (found, errors) = dispatch(frame, detector, &viewports, cam.width(), mode);
    let detections = fuse_adjacent(&found, viewports.len(), cam.width(), cfg.sigma1)
        .into_iter()
        .map(|(sk, _)| sk)
        .collect();
    Ok(DetectionBatch { detections, errors })
}

/// Single downscaled pass over the whole panorama.
pub fn run_full_frame<F, D>(frame: &F, detector: &D, cam: &CameraModel, scale: f64) -> Result<DetectionBatch>
where
    F: ?Sized + Sync,
    D: DetectorPort<F> + ?Sized,
{
    let vp = Viewport::full_frame(cam, scale)?;
    let (found, errors) = dispatch(frame, detector, &[vp], cam.width(), Dispatch::Sequential);
    Ok(DetectionBatch {
        detections: found.into_iter().map(|(sk, _)| sk).collect(),
        errors,
    })
}

/// Picks the person to follow: the largest torso box, leftmost on ties.
pub fn select_target(dets: &[Detection], image_width: f64) -> Result<&Detection> {
    let area = |d: &Detection| torso_bbox(d, image_width).map(|b| b.area()).unwrap_or(0.0);
    dets.iter()
        .min_by(|a, b| {
            area(b)
                .total_cmp(&area(a))
                .then_with(|| a.anchor_x().total_cmp(&b.anchor_x()))
        })
        .ok_or(Error::NoTarget)
}

/// One line of a detections JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub frame: u64,
    pub t: f64,
    pub detections: Vec<Detection>,
}
