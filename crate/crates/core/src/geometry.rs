//! Gaze geometry: eye rays to a 3D gaze point, pinhole projection, and the
//! window transforms used for preprocessing and augmentation.
//!
//! Frame convention (head/device frame): x right, y up, z forward along the
//! camera's optical axis. Image pixels have u to the right and v downward
//! with the principal point at the image center.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::rng;

pub type Vec3 = [f64; 3];

/// Default inter-pupillary baseline in meters.
pub const DEFAULT_BASELINE_M: f64 = 0.063;
/// Depth used when the two eye rays are (nearly) parallel.
pub const PARALLEL_FALLBACK_DEPTH_M: f64 = 1.0;
const PARALLEL_SIN_EPS: f64 = 1e-6;

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(p: Vec3, s: f64, d: Vec3) -> Vec3 {
    [p[0] + s * d[0], p[1] + s * d[1], p[2] + s * d[2]]
}

/// Unit direction for a yaw (about y, positive to the right) and pitch
/// (positive upward), both in radians.
pub fn ray_direction(yaw: f64, pitch: f64) -> Vec3 {
    [pitch.cos() * yaw.sin(), pitch.sin(), pitch.cos() * yaw.cos()]
}

/// Point on the fronto-parallel plane at `depth` seen under the given
/// angles (degrees).
pub fn point_at_angles(yaw_deg: f64, pitch_deg: f64, depth: f64) -> Vec3 {
    [
        depth * yaw_deg.to_radians().tan(),
        depth * pitch_deg.to_radians().tan(),
        depth,
    ]
}

/// Left and right eye rays at one timestamp.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EyeRayPair {
    pub timestamp: f64,
    pub left_origin: Vec3,
    pub left_dir: Vec3,
    pub right_origin: Vec3,
    pub right_dir: Vec3,
}

impl EyeRayPair {
    /// Eyes at `(-baseline/2, 0, 0)` and `(baseline/2, 0, 0)`; angles are
    /// `(yaw, pitch)` in radians.
    pub fn from_angles(timestamp: f64, baseline: f64, left: (f64, f64), right: (f64, f64)) -> Self {
        EyeRayPair {
            timestamp,
            left_origin: [-baseline / 2.0, 0.0, 0.0],
            left_dir: ray_direction(left.0, left.1),
            right_origin: [baseline / 2.0, 0.0, 0.0],
            right_dir: ray_direction(right.0, right.1),
        }
    }

    /// Both eyes verging exactly on `target`.
    pub fn looking_at(timestamp: f64, baseline: f64, target: Vec3) -> Self {
        let lo = [-baseline / 2.0, 0.0, 0.0];
        let ro = [baseline / 2.0, 0.0, 0.0];
        let unit = |o: Vec3| {
            let d = [target[0] - o[0], target[1] - o[1], target[2] - o[2]];
            let n = norm(d);
            [d[0] / n, d[1] / n, d[2] / n]
        };
        EyeRayPair {
            timestamp,
            left_origin: lo,
            left_dir: unit(lo),
            right_origin: ro,
            right_dir: unit(ro),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayIntersection {
    pub point: Vec3,
    /// Rays were near-parallel; `point` is the fallback at default depth.
    pub degenerate: bool,
}

/// Midpoint of the shortest segment between the two eye rays.
///
/// The result does not depend on which ray is called left or right: the
/// pair is put in a canonical order before solving.
pub fn intersect_rays(pair: &EyeRayPair) -> RayIntersection {
    let a = (pair.left_origin, pair.left_dir);
    let b = (pair.right_origin, pair.right_dir);
    let key = |r: &(Vec3, Vec3)| [r.0[0], r.0[1], r.0[2], r.1[0], r.1[1], r.1[2]];
    let (first, second) = if key(&a)
        .iter()
        .zip(key(&b).iter())
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x > y)
    {
        (b, a)
    } else {
        (a, b)
    };
    let ((p1, d1), (p2, d2)) = (first, second);
    let sin = norm(cross(d1, d2)) / (norm(d1) * norm(d2));
    if sin < PARALLEL_SIN_EPS {
        let mid = [(p1[0] + p2[0]) / 2.0, (p1[1] + p2[1]) / 2.0, (p1[2] + p2[2]) / 2.0];
        let mean = [d1[0] + d2[0], d1[1] + d2[1], d1[2] + d2[2]];
        let n = norm(mean);
        let dir = [mean[0] / n, mean[1] / n, mean[2] / n];
        return RayIntersection {
            point: axpy(mid, PARALLEL_FALLBACK_DEPTH_M / dir[2].abs().max(1e-12), dir),
            degenerate: true,
        };
    }
    let w0 = [p1[0] - p2[0], p1[1] - p2[1], p1[2] - p2[2]];
    let (aa, bb, cc) = (dot(d1, d1), dot(d1, d2), dot(d2, d2));
    let (dd, ee) = (dot(d1, w0), dot(d2, w0));
    let denom = aa * cc - bb * bb;
    let s = (bb * ee - cc * dd) / denom;
    let t = (aa * ee - bb * dd) / denom;
    let q1 = axpy(p1, s, d1);
    let q2 = axpy(p2, t, d2);
    RayIntersection {
        point: [(q1[0] + q2[0]) / 2.0, (q1[1] + q2[1]) / 2.0, (q1[2] + q2[2]) / 2.0],
        degenerate: false,
    }
}

/// Pinhole model of the scene camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view in degrees.
    pub hfov_deg: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            width: 1408,
            height: 1408,
            hfov_deg: 110.0,
        }
    }
}

impl CameraModel {
    pub fn new(width: u32, height: u32, hfov_deg: f64) -> Result<Self> {
        if !(hfov_deg > 0.0 && hfov_deg < 180.0) {
            return config_err(format!("field of view {hfov_deg} outside (0, 180)"));
        }
        if width == 0 || height == 0 {
            return config_err("image size must be positive");
        }
        Ok(CameraModel {
            width,
            height,
            hfov_deg,
        })
    }

    pub fn focal(&self) -> f64 {
        (self.width as f64 / 2.0) / (self.hfov_deg.to_radians() / 2.0).tan()
    }

    pub fn center(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Point on the ray through pixel `(u, v)` at the given depth.
    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Vec3 {
        let (cx, cy) = self.center();
        let f = self.focal();
        [(pixel[0] - cx) / f * depth, -(pixel[1] - cy) / f * depth, depth]
    }
}

pub fn project_to_image(point: Vec3, cam: &CameraModel) -> Result<[f64; 2]> {
    if !(point[2] > 0.0) {
        return Err(Error::BehindCamera { depth: point[2] });
    }
    let (cx, cy) = cam.center();
    let f = cam.focal();
    Ok([cx + f * point[0] / point[2], cy - f * point[1] / point[2]])
}

/// Side of the square foveated crop covering `fov_deg`, rounded to the
/// nearest even pixel count.
pub fn crop_geometry(fov_deg: f64, cam: &CameraModel) -> Result<usize> {
    if !(fov_deg > 0.0 && fov_deg <= cam.hfov_deg) {
        return config_err(format!("crop field of view {fov_deg} outside (0, {}]", cam.hfov_deg));
    }
    let half = (fov_deg / cam.hfov_deg * cam.width as f64 / 2.0).round() as usize;
    if half == 0 {
        return config_err(format!("crop of {fov_deg} degrees rounds to zero pixels"));
    }
    Ok(2 * half)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GazeRepr {
    Point3d,
    Velocity3d,
    Projection2d,
    Velocity2d,
}

impl GazeRepr {
    pub fn dim(self) -> usize {
        match self {
            GazeRepr::Point3d | GazeRepr::Velocity3d => 3,
            GazeRepr::Projection2d | GazeRepr::Velocity2d => 2,
        }
    }

    pub fn is_velocity(self) -> bool {
        matches!(self, GazeRepr::Velocity3d | GazeRepr::Velocity2d)
    }

    pub fn name(self) -> &'static str {
        match self {
            GazeRepr::Point3d => "point3d",
            GazeRepr::Velocity3d => "velocity3d",
            GazeRepr::Projection2d => "projection2d",
            GazeRepr::Velocity2d => "velocity2d",
        }
    }
}

/// Time-ordered gaze samples at a fixed rate; the last sample is the most
/// recent.
#[derive(Clone, Debug, PartialEq)]
pub struct GazeWindow {
    hz: f64,
    repr: GazeRepr,
    data: Vec<f64>,
}

impl GazeWindow {
    pub fn new(hz: f64, repr: GazeRepr, data: Vec<f64>) -> Result<Self> {
        if !(hz > 0.0) {
            return config_err(format!("gaze rate {hz} must be positive"));
        }
        if data.is_empty() || !data.len().is_multiple_of(repr.dim()) {
            return Err(Error::Data(format!(
                "{} values do not form {}-D samples",
                data.len(),
                repr.dim()
            )));
        }
        Ok(GazeWindow { hz, repr, data })
    }

    pub fn from_samples(hz: f64, repr: GazeRepr, samples: &[Vec3]) -> Result<Self> {
        let d = repr.dim();
        GazeWindow::new(hz, repr, samples.iter().flat_map(|s| s[..d].iter().copied()).collect())
    }

    pub fn hz(&self) -> f64 {
        self.hz
    }

    pub fn repr(&self) -> GazeRepr {
        self.repr
    }

    pub fn dim(&self) -> usize {
        self.repr.dim()
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.hz
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim())
    }

    /// Sub-window of samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Data(format!("slice [{start}, {end}) of {} samples", self.len())));
        }
        let d = self.dim();
        GazeWindow::new(self.hz, self.repr, self.data[start * d..end * d].to_vec())
    }

    fn map_samples(&self, f: impl Fn(&mut [f64])) -> Self {
        let mut out = self.clone();
        for s in out.data.chunks_mut(self.dim()) {
            f(s);
        }
        out
    }
}

/// Forward differences scaled by the sample rate. The first velocity is
/// repeated so the sample count is unchanged.
pub fn differentiate(w: &GazeWindow) -> Result<GazeWindow> {
    let repr = match w.repr {
        GazeRepr::Point3d => GazeRepr::Velocity3d,
        GazeRepr::Projection2d => GazeRepr::Velocity2d,
        r => return config_err(format!("cannot differentiate a {} window", r.name())),
    };
    let n = w.len();
    if n < 2 {
        return Err(Error::Data("differentiation needs at least two samples".into()));
    }
    let d = w.dim();
    let mut out = vec![0.0; n * d];
    for i in 1..n {
        for c in 0..d {
            out[i * d + c] = (w.data[i * d + c] - w.data[(i - 1) * d + c]) * w.hz;
        }
    }
    for c in 0..d {
        out[c] = out[d + c];
    }
    GazeWindow::new(w.hz, repr, out)
}

/// Stride decimation to `target_hz`, keeping the most recent sample.
pub fn resample(w: &GazeWindow, target_hz: f64) -> Result<GazeWindow> {
    let ratio = w.hz / target_hz;
    if !(target_hz > 0.0) || ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
        return config_err(format!(
            "target rate {target_hz} Hz does not divide source rate {} Hz",
            w.hz
        ));
    }
    let stride = ratio.round() as usize;
    let count = ((target_hz * w.duration()).round() as usize).max(1);
    let n = w.len();
    let d = w.dim();
    let mut idx: Vec<usize> = (0..count).map_while(|k| (n - 1).checked_sub(k * stride)).collect();
    idx.reverse();
    let data = idx
        .iter()
        .flat_map(|&i| w.data[i * d..(i + 1) * d].iter().copied())
        .collect();
    GazeWindow::new(target_hz, w.repr, data)
}

/// Rotates the `(x, y)` components by `quarter_turns * 90` degrees about the
/// viewing axis; other components are untouched.
pub fn rotate_gaze(w: &GazeWindow, quarter_turns: i32) -> GazeWindow {
    match quarter_turns.rem_euclid(4) {
        0 => w.clone(),
        1 => w.map_samples(|s| {
            let (x, y) = (s[0], s[1]);
            s[0] = -y;
            s[1] = x;
        }),
        2 => w.map_samples(|s| {
            s[0] = -s[0];
            s[1] = -s[1];
        }),
        _ => w.map_samples(|s| {
            let (x, y) = (s[0], s[1]);
            s[0] = y;
            s[1] = -x;
        }),
    }
}

/// Mirrors the window horizontally (negates x).
pub fn flip_gaze(w: &GazeWindow) -> GazeWindow {
    w.map_samples(|s| s[0] = -s[0])
}

/// Adds i.i.d. zero-mean Gaussian noise to every coordinate.
pub fn add_gaze_noise(w: &GazeWindow, sigma: f64, seed: u64) -> Result<GazeWindow> {
    if !(sigma >= 0.0) {
        return config_err(format!("noise sigma {sigma} must be non-negative"));
    }
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut r = rng::stream(seed, 0x6e6f_6973);
    let mut out = w.clone();
    for v in &mut out.data {
        *v += normal.sample(&mut r);
    }
    Ok(out)
}

/// Projects a 3D point window into pixel coordinates.
pub fn project_window(w: &GazeWindow, cam: &CameraModel) -> Result<GazeWindow> {
    if w.repr != GazeRepr::Point3d {
        return config_err("projection needs a point3d window");
    }
    let mut out = Vec::with_capacity(w.len() * 2);
    for s in w.samples() {
        let px = project_to_image([s[0], s[1], s[2]], cam)?;
        out.extend_from_slice(&px);
    }
    GazeWindow::new(w.hz, GazeRepr::Projection2d, out)
}

/// Horizontal angle (degrees) subtended by the leftmost and rightmost gaze
/// pixels of a projected window.
pub fn gaze_span(w: &GazeWindow, cam: &CameraModel) -> Result<f64> {
    if w.repr != GazeRepr::Projection2d {
        return config_err("gaze span needs a projection2d window");
    }
    let (lo, hi) = w
        .samples()
        .map(|s| s[0])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), x| (l.min(x), h.max(x)));
    let (cx, _) = cam.center();
    let f = cam.focal();
    let angle = |u: f64| ((u - cx) / f).atan().to_degrees();
    Ok(angle(hi) - angle(lo))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn window(samples: &[Vec3]) -> GazeWindow {
        GazeWindow::from_samples(60.0, GazeRepr::Point3d, samples).unwrap()
    }

    #[test]
    fn rays_through_a_common_point_meet_there() {
        let pair = EyeRayPair::looking_at(0.0, DEFAULT_BASELINE_M, [0.0, 0.0, 1.0]);
        let hit = intersect_rays(&pair);
        assert!(!hit.degenerate);
        for (a, b) in hit.point.iter().zip([0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn symmetric_vergence_depth_closed_form() {
        let b = DEFAULT_BASELINE_M;
        for theta_deg in [0.5f64, 2.0, 5.0, 20.0] {
            let th = theta_deg.to_radians();
            // left eye turns right (+yaw), right eye turns left (-yaw)
            let pair = EyeRayPair::from_angles(0.0, b, (th, 0.0), (-th, 0.0));
            let hit = intersect_rays(&pair);
            let depth = (b / 2.0) / th.tan();
            assert!(hit.point[0].abs() < 1e-12);
            assert!((hit.point[2] - depth).abs() < 1e-9 * depth.max(1.0));
        }
    }

    #[test]
    fn parallel_rays_fall_back_to_default_depth() {
        let pair = EyeRayPair::from_angles(0.0, DEFAULT_BASELINE_M, (0.1, 0.0), (0.1, 0.0));
        let hit = intersect_rays(&pair);
        assert!(hit.degenerate);
        assert!((hit.point[2] - PARALLEL_FALLBACK_DEPTH_M).abs() < 1e-12);
    }

    #[test]
    fn projection_center_and_edge() {
        let cam = CameraModel::default();
        assert_eq!(project_to_image([0.0, 0.0, 2.0], &cam).unwrap(), [704.0, 704.0]);
        let half = (55.0f64).to_radians().tan();
        let px = project_to_image([half, 0.0, 1.0], &cam).unwrap();
        assert!((px[0] - 1408.0).abs() < 1e-9);
        assert!(matches!(
            project_to_image([0.0, 0.0, 0.0], &cam),
            Err(Error::BehindCamera { .. })
        ));
        assert!(CameraModel::new(100, 100, 180.0).is_err());
    }

    #[test]
    fn crop_sizes() {
        let cam = CameraModel::default();
        assert_eq!(crop_geometry(5.0, &cam).unwrap(), 64);
        assert_eq!(crop_geometry(110.0, &cam).unwrap(), 1408);
        assert_eq!(crop_geometry(3.5, &cam).unwrap(), 44);
        assert!(crop_geometry(0.0, &cam).is_err());
        assert!(crop_geometry(120.0, &cam).is_err());
    }

    #[test]
    fn differentiate_ramp_and_constant() {
        let ramp: Vec<Vec3> = (0..10).map(|i| [i as f64 * 0.01, 0.0, 1.0]).collect();
        let v = differentiate(&window(&ramp)).unwrap();
        assert_eq!(v.len(), 10);
        assert_eq!(v.repr(), GazeRepr::Velocity3d);
        for s in v.samples() {
            assert!((s[0] - 0.6).abs() < 1e-12 && s[1] == 0.0 && s[2] == 0.0);
        }
        let flat = differentiate(&window(&[[0.1, 0.2, 0.3]; 5])).unwrap();
        assert!(flat.data().iter().all(|&x| x == 0.0));
        assert!(differentiate(&window(&[[0.0; 3]])).is_err());
        assert!(differentiate(&v).is_err());
    }

    #[test]
    fn differentiate_sinusoid_peak_velocity() {
        let (amp, freq, hz) = (0.05, 1.5, 60.0);
        let omega = 2.0 * std::f64::consts::PI * freq;
        let s: Vec<Vec3> = (0..600)
            .map(|i| [amp * (omega * i as f64 / hz).sin(), 0.0, 1.0])
            .collect();
        let v = differentiate(&GazeWindow::from_samples(hz, GazeRepr::Point3d, &s).unwrap()).unwrap();
        let peak = v.samples().map(|s| s[0].abs()).fold(0.0, f64::max);
        assert!((peak - amp * omega).abs() / (amp * omega) < 0.01);
    }

    #[test]
    fn resample_keep_last() {
        let s: Vec<Vec3> = (0..120).map(|i| [i as f64, 0.0, 1.0]).collect();
        let w = window(&s);
        assert_eq!(resample(&w, 60.0).unwrap(), w);
        let half = resample(&w, 30.0).unwrap();
        assert_eq!(half.len(), 60);
        let xs: Vec<f64> = half.samples().map(|s| s[0]).collect();
        assert_eq!(xs.first(), Some(&1.0));
        assert_eq!(xs.last(), Some(&119.0));
        let six = resample(&w, 6.0).unwrap();
        let idx: Vec<usize> = six.samples().map(|s| s[0] as usize).collect();
        // Decimation enumerated by hand: every 10th index ending at 119.
        let want: Vec<usize> = (0..12).map(|k| 9 + 10 * k).collect();
        assert_eq!(idx, want);
        assert!(resample(&w, 7.0).is_err());
        assert!(resample(&w, 120.0).is_err());
    }

    #[test]
    fn rotation_and_flip_cases() {
        let w = window(&[[1.0, 2.0, 3.0], [-0.5, 0.25, 1.0]]);
        assert_eq!(rotate_gaze(&w, 0), w);
        assert_eq!(rotate_gaze(&w, 4), w);
        assert_eq!(rotate_gaze(&w, 1).sample(0), &[-2.0, 1.0, 3.0]);
        assert_eq!(rotate_gaze(&w, -1), rotate_gaze(&w, 3));
        assert_eq!(flip_gaze(&flip_gaze(&w)), w);
        let vertical = window(&[[0.0, 1.0, 1.0], [0.0, 2.0, 1.0]]);
        assert_eq!(flip_gaze(&vertical).sample(1), &[-0.0, 2.0, 1.0]);
        assert_eq!(flip_gaze(&rotate_gaze(&w, 2)), rotate_gaze(&flip_gaze(&w), 2));
    }

    #[test]
    fn noise_identity_determinism_and_mean() {
        let w = window(&[[0.0, 0.0, 1.0]; 1000]);
        assert_eq!(add_gaze_noise(&w, 0.0, 3).unwrap(), w);
        let a = add_gaze_noise(&w, 0.01, 3).unwrap();
        assert_eq!(a, add_gaze_noise(&w, 0.01, 3).unwrap());
        assert_ne!(a, add_gaze_noise(&w, 0.01, 4).unwrap());
        let big = window(&vec![[0.0; 3]; 100_000 / 3 + 1]);
        let sigma = 0.02;
        let n = add_gaze_noise(&big, sigma, 11).unwrap();
        let mean = n.data().iter().sum::<f64>() / n.data().len() as f64;
        assert!(mean.abs() < 3.0 * sigma / (n.data().len() as f64).sqrt());
    }

    #[test]
    fn span_cases() {
        let cam = CameraModel::default();
        let w = GazeWindow::new(60.0, GazeRepr::Projection2d, vec![300.0, 400.0, 300.0, 400.0]).unwrap();
        assert_eq!(gaze_span(&w, &cam).unwrap(), 0.0);
        let edges = GazeWindow::new(60.0, GazeRepr::Projection2d, vec![0.0, 704.0, 1408.0, 704.0]).unwrap();
        assert!((gaze_span(&edges, &cam).unwrap() - 110.0).abs() < 1e-9);
        // +-2.5 degrees at 0.6 m, projected through the camera.
        let pts = [point_at_angles(-2.5, 1.0, 0.6), point_at_angles(2.5, -1.0, 0.6)];
        let proj = project_window(&window(&pts), &cam).unwrap();
        assert!((gaze_span(&proj, &cam).unwrap() - 5.0).abs() < 0.05);
    }

    proptest! {
        #[test]
        fn reprojection_recovers_point(x in -2.0f64..2.0, y in -2.0f64..2.0, z in 0.1f64..5.0) {
            let cam = CameraModel::default();
            let px = project_to_image([x, y, z], &cam).unwrap();
            let back = cam.unproject(px, z);
            prop_assert!((back[0] - x).abs() < 1e-6 && (back[1] - y).abs() < 1e-6 && (back[2] - z).abs() < 1e-12);
        }

        #[test]
        fn intersection_is_symmetric_and_least_squares(
            yl in -0.5f64..0.5, pl in -0.3f64..0.3, yr in -0.5f64..0.5, pr in -0.3f64..0.3,
        ) {
            let pair = EyeRayPair::from_angles(0.0, DEFAULT_BASELINE_M, (yl, pl), (yr, pr));
            let swapped = EyeRayPair {
                left_origin: pair.right_origin, left_dir: pair.right_dir,
                right_origin: pair.left_origin, right_dir: pair.left_dir, ..pair
            };
            let a = intersect_rays(&pair);
            let b = intersect_rays(&swapped);
            prop_assert_eq!(a.point, b.point);
            if !a.degenerate {
                // Independent solve: normal equations of
                // min |p1 + s d1 - p2 - t d2|^2 via Cramer's rule on [s, t].
                let (p1, d1, p2, d2) = (pair.left_origin, pair.left_dir, pair.right_origin, pair.right_dir);
                let r = [p2[0] - p1[0], p2[1] - p1[1], p2[2] - p1[2]];
                let m = [[dot(d1, d1), -dot(d1, d2)], [dot(d1, d2), -dot(d2, d2)]];
                let rhs = [dot(d1, r), dot(d2, r)];
                let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
                let s = (rhs[0] * m[1][1] - m[0][1] * rhs[1]) / det;
                let t = (m[0][0] * rhs[1] - rhs[0] * m[1][0]) / det;
                let q1 = axpy(p1, s, d1);
                let q2 = axpy(p2, t, d2);
                for c in 0..3 {
                    let mid = (q1[c] + q2[c]) / 2.0;
                    prop_assert!((mid - a.point[c]).abs() < 1e-6 * (1.0 + mid.abs()));
                }
            }
        }

        #[test]
        fn rotation_group_and_speed_isometry(
            pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, 0.2f64..2.0), 2..30),
            k in -8i32..8,
        ) {
            let s: Vec<Vec3> = pts.iter().map(|&(x, y, z)| [x, y, z]).collect();
            let w = window(&s);
            let mut r = w.clone();
            for _ in 0..4 { r = rotate_gaze(&r, 1); }
            prop_assert_eq!(&r, &w);
            let rot = rotate_gaze(&w, k);
            prop_assert_eq!(rotate_gaze(&rot, -k), w.clone());
            let speed = |w: &GazeWindow| -> Vec<f64> {
                differentiate(w).unwrap().samples().map(|s| (s[0]*s[0] + s[1]*s[1] + s[2]*s[2]).sqrt()).collect()
            };
            let (a, b, c) = (speed(&w), speed(&rot), speed(&flip_gaze(&w)));
            for i in 0..a.len() {
                prop_assert!((a[i] - b[i]).abs() < 1e-9 && (a[i] - c[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn differentiate_is_linear(
            pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 2..20),
            a in -3.0f64..3.0,
        ) {
            let w1: Vec<Vec3> = pts.iter().map(|&(x, y, z)| [x, y, z]).collect();
            let w2: Vec<Vec3> = pts.iter().map(|&(x, y, z)| [y, z, x]).collect();
            let comb: Vec<Vec3> = w1.iter().zip(&w2).map(|(p, q)| [a*p[0]+q[0], a*p[1]+q[1], a*p[2]+q[2]]).collect();
            let d = differentiate(&window(&comb)).unwrap();
            let d1 = differentiate(&window(&w1)).unwrap();
            let d2 = differentiate(&window(&w2)).unwrap();
            for i in 0..d.data().len() {
                prop_assert!((d.data()[i] - (a * d1.data()[i] + d2.data()[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn resample_commutes_with_differentiate_on_affine_paths(
            x0 in -1.0f64..1.0, vx in -2.0f64..2.0, vy in -2.0f64..2.0, target in prop::sample::select(vec![6.0, 10.0, 15.0, 20.0, 30.0, 60.0]),
        ) {
            let s: Vec<Vec3> = (0..120).map(|i| { let t = i as f64 / 60.0; [x0 + vx * t, vy * t, 1.0] }).collect();
            let w = window(&s);
            let a = differentiate(&resample(&w, target).unwrap()).unwrap();
            let b = resample(&differentiate(&w).unwrap(), target).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for i in 1..a.len() {
                for c in 0..3 {
                    prop_assert!((a.sample(i)[c] - b.sample(i)[c]).abs() < 1e-9);
                }
            }
        }
    }
}
