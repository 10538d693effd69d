//! Equirectangular camera model.
//!
//! Columns map linearly to azimuth and rows to elevation. The camera is
//! assumed to look at the horizon from a fixed height above a flat ground
//! plane, so a single image point on the ground (the ankle midpoint) is
//! enough to recover range, and a second point straight above it (the neck)
//! gives the person's height.
//!
//! Angles are degrees at every public boundary. World coordinates are
//! metres in a frame centred on the camera foot with `z` up; azimuth zero is
//! the `+x` axis, which lands on the centre column of the image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intrinsics and mounting of an equirectangular camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCameraModel")]
pub struct CameraModel {
    pub image_width: u32,
    pub image_height: u32,
    /// Horizontal field of view, degrees.
    pub fov_h: f64,
    /// Vertical field of view, degrees.
    pub fov_v: f64,
    /// Height of the sensor above the ground, metres.
    pub mount_height: f64,
    /// Average height of a human ankle above the ground, metres.
    pub ankle_height: f64,
}

#[derive(Deserialize)]
struct RawCameraModel {
    image_width: u32,
    image_height: u32,
    fov_h: f64,
    fov_v: f64,
    mount_height: f64,
    ankle_height: f64,
}

impl TryFrom<RawCameraModel> for CameraModel {
    type Error = Error;

    fn try_from(raw: RawCameraModel) -> Result<Self> {
        CameraModel::new(
            raw.image_width,
            raw.image_height,
            raw.fov_h,
            raw.fov_v,
            raw.mount_height,
            raw.ankle_height,
        )
    }
}

impl Default for CameraModel {
    /// 1920x960 full sphere panorama mounted 1.2 m above the ground.
    fn default() -> Self {
        Self {
            image_width: 1920,
            image_height: 960,
            fov_h: 360.0,
            fov_v: 180.0,
            mount_height: 1.2,
            ankle_height: 0.10,
        }
    }
}

impl CameraModel {
    pub fn new(
        image_width: u32,
        image_height: u32,
        fov_h: f64,
        fov_v: f64,
        mount_height: f64,
        ankle_height: f64,
    ) -> Result<Self> {
        if image_width == 0 || image_height == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        if !(fov_h > 0.0 && fov_h <= 360.0) {
            return Err(Error::Config(format!("fov_h {fov_h} outside (0, 360]")));
        }
        if !(fov_v > 0.0 && fov_v <= 180.0) {
            return Err(Error::Config(format!("fov_v {fov_v} outside (0, 180]")));
        }
        if !(ankle_height >= 0.0 && mount_height > ankle_height) {
            return Err(Error::Config(
                "mount_height must exceed ankle_height >= 0".into(),
            ));
        }
        Ok(Self {
            image_width,
            image_height,
            fov_h,
            fov_v,
            mount_height,
            ankle_height,
        })
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.image_width as f64
    }

    #[inline]
    pub fn height(&self) -> f64 {
        self.image_height as f64
    }

    /// Degrees of azimuth per column.
    #[inline]
    fn deg_per_col(&self) -> f64 {
        self.fov_h / self.width()
    }

    /// Degrees of elevation per row.
    #[inline]
    fn deg_per_row(&self) -> f64 {
        self.fov_v / self.height()
    }

    /// Row of the horizon (elevation zero).
    pub fn horizon_row(&self) -> f64 {
        90.0 / self.deg_per_row()
    }

    /// Image row at which the given elevation is imaged.
    pub fn row_of_elevation(&self, phi: f64) -> f64 {
        (90.0 - phi) / self.deg_per_row()
    }
}

/// Pixel position; `x` is the column and wraps modulo the image width.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ImagePoint {
    pub x: f64,
    pub y: f64,
}

impl ImagePoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Same point with the column reduced into `[0, width)`.
    pub fn wrapped(self, width: f64) -> Self {
        Self {
            x: wrap_column(self.x, width),
            y: self.y,
        }
    }
}

/// Azimuth `theta` in (-180, 180] and elevation `phi` in [-90, 90], degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarDirection {
    pub theta: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WorldPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl WorldPoint {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Horizontal distance from the camera foot.
    pub fn ground_range(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn planar_distance(&self, other: &WorldPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Reduces an angle in degrees into (-180, 180].
pub fn normalize_deg(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(360.0);
    if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Reduces a column into `[0, width)`.
pub fn wrap_column(x: f64, width: f64) -> f64 {
    let r = x.rem_euclid(width);
    // rem_euclid can round up to exactly `width` for tiny negative inputs
    if r >= width {
        0.0
    } else {
        r
    }
}

/// Signed column difference `a - b` folded into (-width/2, width/2].
pub fn wrap_diff(a: f64, b: f64, width: f64) -> f64 {
    let half = width / 2.0;
    let mut d = (a - b).rem_euclid(width);
    if d > half {
        d -= width;
    }
    d
}

pub fn image_to_polar(p: ImagePoint, cam: &CameraModel) -> Result<PolarDirection> {
    let in_bounds = p.x.is_finite()
        && p.y.is_finite()
        && (0.0..cam.width()).contains(&p.x)
        && (0.0..=cam.height()).contains(&p.y);
    if !in_bounds {
        return Err(Error::OutOfBounds {
            x: p.x,
            y: p.y,
            width: cam.image_width,
            height: cam.image_height,
        });
    }
    Ok(PolarDirection {
        theta: normalize_deg(180.0 - cam.deg_per_col() * p.x),
        phi: 90.0 - cam.deg_per_row() * p.y,
    })
}

/// Horizontal distance to a point at ankle height seen at elevation `phi`.
///
/// Uses the depression angle so the result is positive below the horizon.
pub fn ground_range(phi: f64, cam: &CameraModel) -> Result<f64> {
    if !(phi < 0.0) {
        return Err(Error::AboveHorizon { phi });
    }
    if phi <= -90.0 {
        return Ok(0.0);
    }
    Ok((cam.mount_height - cam.ankle_height) / (-phi).to_radians().tan())
}

/// Height of a point at range `rho` seen at elevation `phi_neck`.
pub fn estimate_height(phi_neck: f64, rho: f64, cam: &CameraModel) -> Result<f64> {
    if !(rho > 0.0) {
        return Err(Error::Input(format!("range {rho} must be positive")));
    }
    Ok(cam.mount_height + rho * phi_neck.to_radians().tan())
}

/// Places a person from the image of their ankle midpoint and neck.
///
/// The neck is assumed to sit vertically above the ankle midpoint, so its
/// range is taken from the ankles.
pub fn localize(ankle_mid: ImagePoint, neck: ImagePoint, cam: &CameraModel) -> Result<WorldPoint> {
    let ankle = image_to_polar(ankle_mid, cam)?;
    let rho = ground_range(ankle.phi, cam)?;
    let neck_dir = image_to_polar(neck, cam)?;
    let height = if rho > 0.0 {
        estimate_height(neck_dir.phi, rho, cam)?
    } else {
        cam.mount_height
    };
    let theta = ankle.theta.to_radians();
    Ok(WorldPoint::new(rho * theta.cos(), rho * theta.sin(), height))
}

/// Projects a world point into the panorama.
pub fn world_to_image(w: WorldPoint, cam: &CameraModel) -> Result<ImagePoint> {
    let range = w.ground_range();
    if range == 0.0 || !range.is_finite() || !w.z.is_finite() {
        return Err(Error::Singular);
    }
    let theta = w.y.atan2(w.x).to_degrees();
    let phi = (w.z - cam.mount_height).atan2(range).to_degrees();
    Ok(ImagePoint {
        x: wrap_column((180.0 - theta) / cam.deg_per_col(), cam.width()),
        y: cam.row_of_elevation(phi),
    })
}

/// Image point of the midpoint between two ankles, taken on the ground.
///
/// Each ankle is lifted to its ground position, the two positions are
/// averaged, and the average is projected back. Falls back to a
/// wrap-aware image-space average if either ankle is not below the horizon.
pub fn ankle_midpoint(left: ImagePoint, right: ImagePoint, cam: &CameraModel) -> ImagePoint {
    let lift = |p: ImagePoint| -> Option<(f64, f64)> {
        let dir = image_to_polar(p.wrapped(cam.width()), cam).ok()?;
        let rho = ground_range(dir.phi, cam).ok()?;
        let t = dir.theta.to_radians();
        Some((rho * t.cos(), rho * t.sin()))
    };
    if let (Some(l), Some(r)) = (lift(left), lift(right)) {
        let mid = WorldPoint::new((l.0 + r.0) / 2.0, (l.1 + r.1) / 2.0, cam.ankle_height);
        if let Ok(p) = world_to_image(mid, cam) {
            return p;
        }
    }
    let w = cam.width();
    let dx = wrap_diff(right.x, left.x, w);
    ImagePoint::new(wrap_column(left.x + dx / 2.0, w), (left.y + right.y) / 2.0)
}

/// Seam-aware Euclidean distance between two image points.
pub fn wrap_distance(p1: ImagePoint, p2: ImagePoint, image_width: f64) -> f64 {
    let dx = (p1.x - p2.x).abs().rem_euclid(image_width);
    let dx = dx.min(image_width - dx);
    dx.hypot(p1.y - p2.y)
}

/// Ground-range error caused by mislocating the ankle by `pixel_error`
/// rows towards the horizon, for a person `distance` metres away.
///
/// Returns `f64::INFINITY` when the perturbed row is at or above the
/// horizon, where range is no longer defined.
pub fn localization_sensitivity(distance: f64, pixel_error: f64, cam: &CameraModel) -> Result<f64> {
    if !(distance > 0.0) || !(pixel_error >= 0.0) {
        return Err(Error::Input(format!(
            "sensitivity needs distance > 0 and pixel_error >= 0, got {distance}, {pixel_error}"
        )));
    }
    if pixel_error == 0.0 {
        return Ok(0.0);
    }
    let row = world_to_image(WorldPoint::new(distance, 0.0, cam.ankle_height), cam)?.y;
    let phi = 90.0 - cam.deg_per_row() * (row - pixel_error);
    match ground_range(phi, cam) {
        Ok(rho) => Ok((rho - distance).abs()),
        Err(Error::AboveHorizon { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}
