//! The fusion model: convolutional tokenizers per modality, a small
//! pre-norm transformer over the concatenated tokens and a CLS token, and
//! a linear head.

mod checkpoint;
mod input;
mod net;
mod params;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, read_header, save_checkpoint, write_checkpoint, CheckpointMeta, TensorEntry,
};
pub use input::{gaze_features, ModelInput};
pub use net::{Forward, Model, Prediction};
pub use params::{param_count, param_layout, ParamInit, ParamSpec};

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::geometry::{CameraModel, GazeRepr};
use crate::rng::Rng;
use crate::tensor::conv_out_len;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Gaze,
    Rgb,
    Imu,
}

impl Modality {
    /// Token order inside the fused sequence.
    pub const ALL: [Modality; 3] = [Modality::Gaze, Modality::Rgb, Modality::Imu];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Gaze => "gaze",
            Modality::Rgb => "rgb",
            Modality::Imu => "imu",
        }
    }
}

/// A subset of the three modalities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalitySet {
    pub gaze: bool,
    pub rgb: bool,
    pub imu: bool,
}

impl ModalitySet {
    pub const ALL: ModalitySet = ModalitySet {
        gaze: true,
        rgb: true,
        imu: true,
    };
    pub const NONE: ModalitySet = ModalitySet {
        gaze: false,
        rgb: false,
        imu: false,
    };

    pub fn only(m: Modality) -> Self {
        ModalitySet::NONE.with(m, true)
    }

    pub fn contains(&self, m: Modality) -> bool {
        match m {
            Modality::Gaze => self.gaze,
            Modality::Rgb => self.rgb,
            Modality::Imu => self.imu,
        }
    }

    pub fn with(mut self, m: Modality, on: bool) -> Self {
        match m {
            Modality::Gaze => self.gaze = on,
            Modality::Rgb => self.rgb = on,
            Modality::Imu => self.imu = on,
        }
        self
    }

    pub fn iter(self) -> impl Iterator<Item = Modality> {
        Modality::ALL.into_iter().filter(move |&m| self.contains(m))
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn intersect(self, other: ModalitySet) -> Self {
        ModalitySet {
            gaze: self.gaze && other.gaze,
            rgb: self.rgb && other.rgb,
            imu: self.imu && other.imu,
        }
    }

    /// Parses `gaze+rgb+imu` style lists; `all` selects everything.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(ModalitySet::ALL);
        }
        let mut out = ModalitySet::NONE;
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            let m = match part {
                "gaze" => Modality::Gaze,
                "rgb" => Modality::Rgb,
                "imu" => Modality::Imu,
                _ => return config_err(format!("unknown modality '{part}' (gaze, rgb, imu)")),
            };
            out = out.with(m, true);
        }
        if out.is_empty() {
            return config_err(format!("modality list '{s}' is empty"));
        }
        Ok(out)
    }
}

impl std::fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let names: Vec<&str> = self.iter().map(Modality::name).collect();
        f.write_str(&names.join("+"))
    }
}

/// Random subset of `present` for one training example: a subset size of
/// 1, 2 or 3 with equal probability (capped at what is available), then a
/// uniform subset of that size. Never empty unless `present` is.
pub fn modality_dropout(rng: &mut Rng, present: ModalitySet) -> ModalitySet {
    let avail: Vec<Modality> = present.iter().collect();
    if avail.is_empty() {
        return ModalitySet::NONE;
    }
    let size = rng.random_range(1..=3usize).min(avail.len());
    let mut out = ModalitySet::NONE;
    for i in sample(rng, avail.len(), size) {
        out = out.with(avail[i], true);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeInput {
    pub repr: GazeRepr,
    pub hz: f64,
    pub duration_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuInput {
    pub hz: f64,
    pub duration_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbInput {
    pub size: usize,
    pub channels: usize,
}

/// Named model widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    Xs,
    S,
    M,
    L,
}

impl ModelSize {
    pub const ALL: [ModelSize; 4] = [ModelSize::Xs, ModelSize::S, ModelSize::M, ModelSize::L];

    pub fn dim(self) -> usize {
        match self {
            ModelSize::Xs => 8,
            ModelSize::S => 16,
            ModelSize::M => 32,
            ModelSize::L => 64,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "xs" => Ok(ModelSize::Xs),
            "s" => Ok(ModelSize::S),
            "m" => Ok(ModelSize::M),
            "l" => Ok(ModelSize::L),
            _ => config_err(format!("unknown model size '{s}' (xs, s, m, l)")),
        }
    }
}

/// Architecture hyperparameters; every parameter shape follows from these.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub conv_layers: usize,
    pub temporal_kernel: usize,
    pub rgb_kernel: usize,
    pub stride: usize,
    pub classes: usize,
    pub gaze: Option<GazeInput>,
    pub imu: Option<ImuInput>,
    pub rgb: Option<RgbInput>,
    /// Used to express projected gaze in normalised image coordinates.
    pub camera: CameraModel,
}

impl ModelConfig {
    /// Default architecture of the given width with all three modalities
    /// at 60 Hz, 2 s windows and a 64 px patch.
    pub fn new(size: ModelSize, classes: usize) -> Self {
        ModelConfig {
            dim: size.dim(),
            layers: 3,
            heads: 2,
            mlp_ratio: 4,
            conv_layers: 3,
            temporal_kernel: 9,
            rgb_kernel: 5,
            stride: 2,
            classes,
            gaze: Some(GazeInput {
                repr: GazeRepr::Velocity3d,
                hz: 60.0,
                duration_s: 2.0,
            }),
            imu: Some(ImuInput {
                hz: 60.0,
                duration_s: 2.0,
            }),
            rgb: Some(RgbInput { size: 64, channels: 3 }),
            camera: CameraModel::default(),
        }
    }

    /// Modalities the model has encoders for.
    pub fn modalities(&self) -> ModalitySet {
        ModalitySet {
            gaze: self.gaze.is_some(),
            rgb: self.rgb.is_some(),
            imu: self.imu.is_some(),
        }
    }

    /// Drops the encoders of modalities outside `keep`.
    pub fn restrict(mut self, keep: ModalitySet) -> Self {
        if !keep.gaze {
            self.gaze = None;
        }
        if !keep.rgb {
            self.rgb = None;
        }
        if !keep.imu {
            self.imu = None;
        }
        self
    }

    pub fn gaze_samples(&self) -> Option<usize> {
        self.gaze.map(|g| (g.hz * g.duration_s).round() as usize)
    }

    pub fn imu_samples(&self) -> Option<usize> {
        self.imu.map(|i| (i.hz * i.duration_s).round() as usize)
    }

    fn conv_chain(&self, mut len: usize, kernel: usize) -> Result<usize> {
        for _ in 0..self.conv_layers {
            len = conv_out_len(len, kernel, self.stride, kernel / 2)?;
        }
        Ok(len)
    }

    /// Number of tokens a modality contributes.
    pub fn tokens(&self, m: Modality) -> Result<usize> {
        match m {
            Modality::Gaze => match self.gaze_samples() {
                Some(n) => self.conv_chain(n, self.temporal_kernel),
                None => config_err("model has no gaze encoder"),
            },
            Modality::Imu => match self.imu_samples() {
                Some(n) => self.conv_chain(n, self.temporal_kernel),
                None => config_err("model has no IMU encoder"),
            },
            Modality::Rgb => match self.rgb {
                Some(r) => {
                    let side = self.conv_chain(r.size, self.rgb_kernel)?;
                    Ok(side * side)
                }
                None => config_err("model has no RGB encoder"),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return config_err(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.classes < 2 {
            return config_err(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.layers == 0 || self.conv_layers == 0 || self.mlp_ratio == 0 || self.stride == 0 {
            return config_err("layer counts, MLP ratio and stride must be positive");
        }
        if self.modalities().is_empty() {
            return config_err("model needs at least one modality");
        }
        if let Some(g) = self.gaze {
            if !(g.hz > 0.0 && g.duration_s > 0.0) {
                return config_err("gaze rate and duration must be positive");
            }
        }
        if let Some(i) = self.imu {
            if !(i.hz > 0.0 && i.duration_s > 0.0) {
                return config_err("IMU rate and duration must be positive");
            }
        }
        if let Some(r) = self.rgb {
            if r.size == 0 || r.channels == 0 {
                return config_err("patch size and channels must be positive");
            }
        }
        for m in self.modalities().iter() {
            self.tokens(m)?;
        }
        Ok(())
    }
}
