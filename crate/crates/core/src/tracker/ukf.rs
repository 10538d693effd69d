//! Unscented Kalman filter over the 5-dimensional person state
//! `[x, y, vx, vy, h_n]`, observed through the equirectangular camera.
//!
//! Sigma points use the scaled formulation:
//! `lambda = alpha^2 (n + kappa) - n`, points `mean +- columns of
//! chol((n + lambda) P)`. Measurement columns live on a circle, so before
//! moments are taken the projected sigma columns go through
//! [`wrap_correct`], and innovations use the short signed difference.

use nalgebra::{Cholesky, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_column, wrap_diff, world_to_image, CameraModel, ImagePoint, WorldPoint};

pub const STATE_DIM: usize = 5;
const SIGMA_COUNT: usize = 2 * STATE_DIM + 1;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateCovariance = SMatrix<f64, STATE_DIM, STATE_DIM>;

/// Smallest diagonal jitter tried when repairing a covariance.
const JITTER_FLOOR: f64 = 1e-12;
const JITTER_CEIL: f64 = 1e-3;

pub const MIN_PERSON_HEIGHT: f64 = 0.5;
pub const MAX_PERSON_HEIGHT: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackState {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    /// Neck height above the ground, metres.
    pub h_n: f64,
}

impl TrackState {
    pub fn to_vector(&self) -> StateVector {
        StateVector::new(self.x, self.y, self.vx, self.vy, self.h_n)
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            x: v[0],
            y: v[1],
            vx: v[2],
            vy: v[3],
            h_n: v[4].clamp(MIN_PERSON_HEIGHT, MAX_PERSON_HEIGHT),
        }
    }

    pub fn position(&self) -> WorldPoint {
        WorldPoint::new(self.x, self.y, self.h_n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Per-dimension process noise variance accumulated per second.
    pub process_noise: [f64; STATE_DIM],
    /// Pixel variance of each measured image coordinate.
    pub measurement_noise: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 2.0,
            kappa: 0.0,
            process_noise: [0.05, 0.05, 0.5, 0.5, 0.01],
            measurement_noise: 4.0,
        }
    }
}

/// Mean and covariance weights of the sigma points.
#[derive(Debug, Clone, Copy)]
pub struct SigmaWeights {
    pub mean: [f64; SIGMA_COUNT],
    pub cov: [f64; SIGMA_COUNT],
    /// `n + lambda`, the squared spread factor.
    pub spread: f64,
}

impl UkfParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config("ukf alpha must be positive".into()));
        }
        if !(STATE_DIM as f64 + self.kappa > 0.0) {
            return Err(Error::Config("ukf kappa must keep n + kappa positive".into()));
        }
        if self.process_noise.iter().any(|q| !(*q >= 0.0)) || !(self.measurement_noise > 0.0) {
            return Err(Error::Config("ukf noise variances must be non-negative, measurement noise positive".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> SigmaWeights {
        let n = STATE_DIM as f64;
        let lambda = self.alpha * self.alpha * (n + self.kappa) - n;
        let spread = n + lambda;
        let w = 1.0 / (2.0 * spread);
        let mut mean = [w; SIGMA_COUNT];
        let mut cov = [w; SIGMA_COUNT];
        mean[0] = lambda / spread;
        cov[0] = mean[0] + (1.0 - self.alpha * self.alpha + self.beta);
        SigmaWeights { mean, cov, spread }
    }
}

fn symmetrize(p: &StateCovariance) -> StateCovariance {
    (p + p.transpose()) * 0.5
}

/// Cholesky factor of `p`, adding growing diagonal jitter when needed.
fn robust_cholesky(p: &StateCovariance) -> Result<(SMatrix<f64, STATE_DIM, STATE_DIM>, StateCovariance)> {
    let p = symmetrize(p);
    if let Some(c) = Cholesky::new(p) {
        return Ok((c.l(), p));
    }
    let scale = p.diagonal().amax().max(1.0);
    let mut jitter = JITTER_FLOOR;
    while jitter <= JITTER_CEIL {
        let repaired = p + StateCovariance::identity() * (jitter * scale);
        if let Some(c) = Cholesky::new(repaired) {
            return Ok((c.l(), repaired));
        }
        jitter *= 10.0;
    }
    Err(Error::FilterDivergence)
}

/// Ensures `p` is symmetric positive definite, repairing with jitter.
pub fn ensure_spd(p: &StateCovariance) -> Result<StateCovariance> {
    robust_cholesky(p).map(|(_, p)| p)
}

pub fn sigma_points(mean: &StateVector, cov: &StateCovariance, w: &SigmaWeights) -> Result<[StateVector; SIGMA_COUNT]> {
    let (l, _) = robust_cholesky(&(cov * w.spread))?;
    let mut pts = [*mean; SIGMA_COUNT];
    for i in 0..STATE_DIM {
        let col = l.column(i);
        pts[1 + i] = mean + col;
        pts[1 + STATE_DIM + i] = mean - col;
    }
    Ok(pts)
}

/// Constant-velocity motion with a random-walk neck height.
fn propagate(s: &StateVector, dt: f64) -> StateVector {
    StateVector::new(s[0] + s[2] * dt, s[1] + s[3] * dt, s[2], s[3], s[4])
}

/// Unscented time update. Returns the propagated mean and covariance.
pub fn predict_moments(
    mean: &StateVector,
    cov: &StateCovariance,
    dt: f64,
    params: &UkfParams,
) -> Result<(StateVector, StateCovariance)> {
    if !(dt > 0.0) {
        return Err(Error::Input(format!("time step {dt} must be positive")));
    }
    let w = params.weights();
    let pts = sigma_points(mean, cov, &w)?.map(|p| propagate(&p, dt));
    let mut m = StateVector::zeros();
    for (p, wm) in pts.iter().zip(w.mean) {
        m += p * wm;
    }
    let mut p = StateCovariance::from_diagonal(&StateVector::from(params.process_noise)) * dt;
    for (s, wc) in pts.iter().zip(w.cov) {
        let d = s - m;
        p += d * d.transpose() * wc;
    }
    Ok((m, ensure_spd(&p)?))
}

/// Shifts columns that fell on the far side of the seam.
///
/// If the columns span more than half the image, every column in the left
/// half is moved right by one image width. Returns the shifted columns and
/// their weighted mean in the shifted frame (not reduced).
pub fn wrap_correct_weighted(xs: &[f64], weights: &[f64], width: f64) -> (Vec<f64>, f64) {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let split = hi - lo > width / 2.0;
    let shifted: Vec<f64> = xs
        .iter()
        .map(|&x| if split && x < width / 2.0 { x + width } else { x })
        .collect();
    let mean = shifted.iter().zip(weights).map(|(x, w)| x * w).sum();
    (shifted, mean)
}

/// Seam correction for a cloud of image points, with an unweighted mean
/// reduced back into `[0, width)`.
pub fn wrap_correct(points: &[ImagePoint], image_width: f64) -> (Vec<ImagePoint>, ImagePoint) {
    assert!(!points.is_empty(), "wrap_correct needs at least one point");
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let weights = vec![1.0 / n; points.len()];
    let (shifted, mean_x) = wrap_correct_weighted(&xs, &weights, image_width);
    let mean_y = points.iter().map(|p| p.y).sum::<f64>() / n;
    let out = shifted
        .iter()
        .zip(points)
        .map(|(x, p)| ImagePoint::new(*x, p.y))
        .collect();
    (out, ImagePoint::new(wrap_column(mean_x, image_width), mean_y))
}

/// Observation of a person in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement {
    FullBody { ankle_mid: ImagePoint, neck: ImagePoint },
    /// Ankles occluded; only the neck was seen.
    NeckOnly { neck: ImagePoint },
}

/// Image of the ankle midpoint and neck for a state.
pub fn project_state(state: &StateVector, cam: &CameraModel) -> Result<(ImagePoint, ImagePoint)> {
    let ankle = world_to_image(WorldPoint::new(state[0], state[1], cam.ankle_height), cam)?;
    let neck = world_to_image(WorldPoint::new(state[0], state[1], state[4]), cam)?;
    Ok((ankle, neck))
}

/// How column wrap-around is handled during the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOptions {
    pub image_width: f64,
    /// Apply the sigma-point seam correction and signed wrap innovation.
    pub wrap_aware: bool,
    /// Squared Mahalanobis distance above which an update is rejected.
    pub gate: f64,
}

/// Outcome of a measurement update on moments.
pub enum MomentUpdate {
    Accepted(StateVector, StateCovariance),
    Gated { mahalanobis_sq: f64 },
}

/// Predicted measurement moments: mean (in the shifted column frame when
/// wrap-aware), innovation covariance and state-measurement
/// cross-covariance.
struct MeasurementMoments<const M: usize> {
    mean: SVector<f64, M>,
    s: SMatrix<f64, M, M>,
    cross: SMatrix<f64, STATE_DIM, M>,
}

fn measurement_moments<const M: usize>(
    mean: &StateVector,
    cov: &StateCovariance,
    params: &UkfParams,
    h: impl Fn(&StateVector) -> Result<SVector<f64, M>>,
    x_rows: &[usize],
    opts: &UpdateOptions,
) -> Result<MeasurementMoments<M>> {
    let w = params.weights();
    let pts = sigma_points(mean, cov, &w)?;
    let mut zs = pts.iter().map(&h).collect::<Result<Vec<SVector<f64, M>>>>()?;
    let mut zbar = SVector::<f64, M>::zeros();
    for (z, wm) in zs.iter().zip(w.mean) {
        zbar += z * wm;
    }
    if opts.wrap_aware {
        for &r in x_rows {
            let xs: Vec<f64> = zs.iter().map(|z| z[r]).collect();
            let (shifted, m) = wrap_correct_weighted(&xs, &w.mean, opts.image_width);
            for (z, x) in zs.iter_mut().zip(shifted) {
                z[r] = x;
            }
            zbar[r] = m;
        }
    }
    let mut s = SMatrix::<f64, M, M>::identity() * params.measurement_noise;
    let mut cross = SMatrix::<f64, STATE_DIM, M>::zeros();
    for ((z, x), wc) in zs.iter().zip(pts.iter()).zip(w.cov) {
        let dz = z - zbar;
        s += dz * dz.transpose() * wc;
        cross += (x - mean) * dz.transpose() * wc;
    }
    Ok(MeasurementMoments { mean: zbar, s, cross })
}

fn moment_update<const M: usize>(
    mean: &StateVector,
    cov: &StateCovariance,
    params: &UkfParams,
    h: impl Fn(&StateVector) -> Result<SVector<f64, M>>,
    z: &SVector<f64, M>,
    x_rows: &[usize],
    opts: &UpdateOptions,
) -> Result<MomentUpdate> {
    let mm = measurement_moments(mean, cov, params, h, x_rows, opts)?;
    let mut innovation = z - mm.mean;
    if opts.wrap_aware {
        for &r in x_rows {
            innovation[r] = wrap_diff(z[r], mm.mean[r], opts.image_width);
        }
    }
    let s_chol = Cholesky::new((mm.s + mm.s.transpose()) * 0.5).ok_or(Error::FilterDivergence)?;
    let s_inv = s_chol.inverse();
    let d2 = (innovation.transpose() * s_inv * innovation)[(0, 0)];
    if !d2.is_finite() {
        return Err(Error::FilterDivergence);
    }
    if d2 > opts.gate {
        return Ok(MomentUpdate::Gated { mahalanobis_sq: d2 });
    }
    let gain = mm.cross * s_inv;
    let new_mean = mean + gain * innovation;
    let new_cov = ensure_spd(&(cov - gain * mm.s * gain.transpose()))?;
    Ok(MomentUpdate::Accepted(new_mean, new_cov))
}

fn full_body_model(cam: CameraModel) -> impl Fn(&StateVector) -> Result<SVector<f64, 4>> {
    move |s| {
        let (a, n) = project_state(s, &cam)?;
        Ok(SVector::<f64, 4>::new(a.x, a.y, n.x, n.y))
    }
}

fn neck_model(cam: CameraModel) -> impl Fn(&StateVector) -> Result<SVector<f64, 2>> {
    move |s| {
        let (_, n) = project_state(s, &cam)?;
        Ok(SVector::<f64, 2>::new(n.x, n.y))
    }
}

/// Unscented measurement update for either measurement kind.
pub fn update_moments(
    mean: &StateVector,
    cov: &StateCovariance,
    meas: &Measurement,
    cam: &CameraModel,
    params: &UkfParams,
    opts: &UpdateOptions,
) -> Result<MomentUpdate> {
    match meas {
        Measurement::FullBody { ankle_mid, neck } => {
            let z = SVector::<f64, 4>::new(ankle_mid.x, ankle_mid.y, neck.x, neck.y);
            moment_update(mean, cov, params, full_body_model(*cam), &z, &[0, 2], opts)
        }
        Measurement::NeckOnly { neck } => {
            let z = SVector::<f64, 2>::new(neck.x, neck.y);
            moment_update(mean, cov, params, neck_model(*cam), &z, &[0], opts)
        }
    }
}

/// Unscented estimate of where the full-body measurement should appear,
/// with columns reduced into the image.
pub fn predicted_measurement(
    mean: &StateVector,
    cov: &StateCovariance,
    cam: &CameraModel,
    params: &UkfParams,
    opts: &UpdateOptions,
) -> Result<Measurement> {
    let mm = measurement_moments(mean, cov, params, full_body_model(*cam), &[0, 2], opts)?;
    let w = opts.image_width;
    Ok(Measurement::FullBody {
        ankle_mid: ImagePoint::new(wrap_column(mm.mean[0], w), mm.mean[1]),
        neck: ImagePoint::new(wrap_column(mm.mean[2], w), mm.mean[3]),
    })
}
