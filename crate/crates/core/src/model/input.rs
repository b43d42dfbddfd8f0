use super::{GazeInput, Modality, ModalitySet, ModelConfig};
use crate::error::{shape_err, Result};
use crate::geometry::{differentiate, project_window, resample, CameraModel, GazeRepr, GazeWindow};
use crate::sim::{ImuWindow, LabeledClip, RgbPatch, IMU_DIM};
use crate::tensor::{Scalar, Tensor};

/// Channel-first gaze features `[d, n]` in the model's representation.
///
/// Raw point windows are decimated to the model rate, cut to the most
/// recent `duration` seconds, then differentiated and/or projected.
/// Projected coordinates are expressed relative to the principal point in
/// focal-length units.
pub fn gaze_features(w: &GazeWindow, g: &GazeInput, cam: &CameraModel) -> Result<Vec<f64>> {
    let want = (g.hz * g.duration_s).round() as usize;
    let mut w = if w.hz() == g.hz { w.clone() } else { resample(w, g.hz)? };
    if w.len() < want {
        return shape_err(format!("gaze window has {} samples, model needs {want}", w.len()));
    }
    if w.len() > want {
        w = w.slice(w.len() - want, w.len())?;
    }
    let w = match (w.repr(), g.repr) {
        (a, b) if a == b => w,
        (GazeRepr::Point3d, GazeRepr::Velocity3d) => differentiate(&w)?,
        (GazeRepr::Point3d, GazeRepr::Projection2d) => project_window(&w, cam)?,
        (GazeRepr::Point3d, GazeRepr::Velocity2d) => differentiate(&project_window(&w, cam)?)?,
        (a, b) => return shape_err(format!("cannot turn a {} window into {}", a.name(), b.name())),
    };
    let (cx, cy) = cam.center();
    let f = cam.focal();
    let d = w.dim();
    let n = w.len();
    let mut out = vec![0.0; d * n];
    for (i, s) in w.samples().enumerate() {
        for c in 0..d {
            out[c * n + i] = match g.repr {
                GazeRepr::Projection2d => (s[c] - if c == 0 { cx } else { cy }) / f,
                GazeRepr::Velocity2d => s[c] / f,
                _ => s[c],
            };
        }
    }
    Ok(out)
}

fn imu_features(w: &ImuWindow, hz: f64, duration: f64) -> Result<Vec<f64>> {
    let want = (hz * duration).round() as usize;
    let ratio = w.hz() / hz;
    if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
        return shape_err(format!("IMU rate {} Hz is not a multiple of {hz} Hz", w.hz()));
    }
    let stride = ratio.round() as usize;
    let n = w.len();
    if n == 0 || (n - 1) / stride + 1 < want {
        return shape_err(format!("IMU window has too few samples for {want} at {hz} Hz"));
    }
    let mut out = vec![0.0; IMU_DIM * want];
    for k in 0..want {
        let src = n - 1 - (want - 1 - k) * stride;
        for (c, &v) in w.sample(src).iter().enumerate() {
            out[c * want + k] = v;
        }
    }
    Ok(out)
}

/// Model-ready inputs; absent modalities are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    pub gaze: Option<Tensor<T>>,
    pub rgb: Option<Tensor<T>>,
    pub imu: Option<Tensor<T>>,
}

impl<T: Scalar> ModelInput<T> {
    /// Converts raw windows for `cfg`; windows for modalities the model
    /// lacks are ignored.
    pub fn build(
        cfg: &ModelConfig,
        gaze: Option<&GazeWindow>,
        rgb: Option<&RgbPatch>,
        imu: Option<&ImuWindow>,
    ) -> Result<Self> {
        let gaze = match (gaze, cfg.gaze) {
            (Some(w), Some(g)) => {
                let f = gaze_features(w, &g, &cfg.camera)?;
                let n = f.len() / g.repr.dim();
                Some(Tensor::from_f64(&[g.repr.dim(), n], &f)?)
            }
            _ => None,
        };
        let rgb = match (rgb, cfg.rgb) {
            (Some(p), Some(r)) => {
                if p.height() != r.size || p.width() != r.size || p.channels() != r.channels {
                    return shape_err(format!(
                        "patch {}x{}x{} but model expects {s}x{s}x{}",
                        p.height(),
                        p.width(),
                        p.channels(),
                        r.channels,
                        s = r.size
                    ));
                }
                Some(Tensor::from_f64(&[r.channels, r.size, r.size], &p.to_chw())?)
            }
            _ => None,
        };
        let imu = match (imu, cfg.imu) {
            (Some(w), Some(i)) => {
                let f = imu_features(w, i.hz, i.duration_s)?;
                Some(Tensor::from_f64(&[IMU_DIM, f.len() / IMU_DIM], &f)?)
            }
            _ => None,
        };
        Ok(ModelInput { gaze, rgb, imu })
    }

    pub fn from_clip(cfg: &ModelConfig, clip: &LabeledClip) -> Result<Self> {
        Self::build(cfg, clip.gaze.as_ref(), clip.rgb.as_ref(), clip.imu.as_ref())
    }

    pub fn present(&self) -> ModalitySet {
        ModalitySet {
            gaze: self.gaze.is_some(),
            rgb: self.rgb.is_some(),
            imu: self.imu.is_some(),
        }
    }

    pub fn get(&self, m: Modality) -> Option<&Tensor<T>> {
        match m {
            Modality::Gaze => self.gaze.as_ref(),
            Modality::Rgb => self.rgb.as_ref(),
            Modality::Imu => self.imu.as_ref(),
        }
    }

    /// The same inputs with modalities outside `keep` removed.
    pub fn restrict(&self, keep: ModalitySet) -> Self {
        ModelInput {
            gaze: self.gaze.clone().filter(|_| keep.gaze),
            rgb: self.rgb.clone().filter(|_| keep.rgb),
            imu: self.imu.clone().filter(|_| keep.imu),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ModelInput<U> {
        ModelInput {
            gaze: self.gaze.as_ref().map(Tensor::cast),
            rgb: self.rgb.as_ref().map(Tensor::cast),
            imu: self.imu.as_ref().map(Tensor::cast),
        }
    }
}
