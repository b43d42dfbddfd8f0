//! Synthetic gaze, head-motion and foveated-RGB clips.
//!
//! The generators are pure functions of a [`ScenarioSpec`] (which carries
//! its own seed) and a [`SimConfig`]. Reading is produced in a canonical
//! left-to-right frame and then mirrored or rotated for other text
//! directions, so direction changes never alter the random draws.

mod alternating;
mod dataset;
mod imu;
mod patch;
mod scanpath;

pub use alternating::{
    gen_alternating, AlternatingSequence, ChangePoint, Segment, SegmentKind, StreamCanvas, CANVAS_SIZE,
};
pub use dataset::{
    gen_dataset, gen_streams, read_jsonl, read_stream_jsonl, write_jsonl, write_stream_jsonl, ClipDefaults, GazeRecord,
    ImuRecord, Manifest, ManifestEntry, Meta, Record, RgbRecord, StreamEntry, StreamRecord,
};
pub use imu::{gen_imu, ImuWindow, MotionKind, IMU_DIM};
pub use patch::{crop_patch, gen_patch, scene_texture, text_texture, RgbPatch};
pub use scanpath::{gen_nonreading_scanpath, gen_reading_scanpath, EventKind, GazeEvent, NegativeKind, Scanpath};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NotReading,
    Reading,
}

impl Label {
    pub fn name(self) -> &'static str {
        match self {
            Label::NotReading => "not_reading",
            Label::Reading => "reading",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Engaged,
    Skim,
    Scan,
    OutLoud,
    WalkRead,
    WriteRead,
    None,
}

impl Mode {
    pub const READING: [Mode; 6] = [
        Mode::Engaged,
        Mode::Skim,
        Mode::Scan,
        Mode::OutLoud,
        Mode::WalkRead,
        Mode::WriteRead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Engaged => "engaged",
            Mode::Skim => "skim",
            Mode::Scan => "scan",
            Mode::OutLoud => "out_loud",
            Mode::WalkRead => "walk_read",
            Mode::WriteRead => "write_read",
            Mode::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Medium {
    Print,
    Digital,
    Objects,
    None,
}

impl Medium {
    pub const TEXT: [Medium; 3] = [Medium::Print, Medium::Digital, Medium::Objects];

    pub fn name(self) -> &'static str {
        match self {
            Medium::Print => "print",
            Medium::Digital => "digital",
            Medium::Objects => "objects",
            Medium::None => "none",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    #[default]
    Ltr,
    Rtl,
    Vertical,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Ltr => "ltr",
            Direction::Rtl => "rtl",
            Direction::Vertical => "vertical",
        }
    }
}

/// What a non-reading clip is doing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activity {
    /// Everyday activity without reading.
    Daily,
    /// Text in view but not being read.
    HardNegative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub label: Label,
    pub mode: Mode,
    pub medium: Medium,
    pub direction: Direction,
    pub activity: Option<Activity>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn reading(mode: Mode, medium: Medium, direction: Direction, seed: u64) -> Self {
        ScenarioSpec {
            label: Label::Reading,
            mode,
            medium,
            direction,
            activity: None,
            seed,
        }
    }

    pub fn not_reading(activity: Activity, seed: u64) -> Self {
        ScenarioSpec {
            label: Label::NotReading,
            mode: Mode::None,
            medium: Medium::None,
            direction: Direction::Ltr,
            activity: Some(activity),
            seed,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        ScenarioSpec { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        match self.label {
            Label::Reading if self.mode == Mode::None || self.medium == Medium::None => {
                Err(Error::Config("reading needs a reading mode and a text medium".into()))
            }
            Label::NotReading if self.mode != Mode::None || self.medium != Medium::None => {
                Err(Error::Config("non-reading clips have mode and medium 'none'".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn is_text_in_view(&self) -> bool {
        self.label == Label::Reading || self.activity == Some(Activity::HardNegative)
    }

    /// Short tag used for per-scenario breakdowns.
    pub fn scenario_tag(&self) -> String {
        match (self.label, self.activity) {
            (Label::Reading, _) => format!("reading/{}", self.mode.name()),
            (Label::NotReading, Some(Activity::HardNegative)) => {
                format!("hard_negative/{}", NegativeKind::of(self).name())
            }
            (Label::NotReading, _) => format!("daily/{}", NegativeKind::of(self).name()),
        }
    }

    pub(crate) fn rng(&self, stream: u64) -> rng::Rng {
        rng::stream(self.seed, stream)
    }
}

/// Classification task and its label mapping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// not reading / reading
    Binary,
    /// not reading plus the six reading modes
    Mode7,
    /// not reading plus print / digital / objects
    Medium4,
}

impl Task {
    pub fn num_classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Mode7 => 7,
            Task::Medium4 => 4,
        }
    }

    pub fn class_names(self) -> Vec<&'static str> {
        match self {
            Task::Binary => vec!["not_reading", "reading"],
            Task::Mode7 => std::iter::once("not_reading")
                .chain(Mode::READING.iter().map(|m| m.name()))
                .collect(),
            Task::Medium4 => std::iter::once("not_reading")
                .chain(Medium::TEXT.iter().map(|m| m.name()))
                .collect(),
        }
    }

    pub fn label_of(self, spec: &ScenarioSpec) -> usize {
        if spec.label == Label::NotReading {
            return 0;
        }
        match self {
            Task::Binary => 1,
            Task::Mode7 => 1 + Mode::READING.iter().position(|&m| m == spec.mode).unwrap_or(0),
            Task::Medium4 => 1 + Medium::TEXT.iter().position(|&m| m == spec.medium).unwrap_or(0),
        }
    }

    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "binary" => Ok(Task::Binary),
            "mode7" => Ok(Task::Mode7),
            "medium4" => Ok(Task::Medium4),
            _ => Err(Error::Config(format!("unknown task '{s}' (binary, mode7, medium4)"))),
        }
    }
}

/// Every tunable of the behavioural model, in one record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Per-sample fixational jitter, degrees (1 sigma, per axis).
    pub tremor_deg: f64,
    /// Slow fixational drift speed, degrees per second.
    pub drift_deg_per_s: f64,
    /// Depth used to express the tremor in meters.
    pub reference_depth_m: f64,
    /// Fixation slow-down factor for reading out loud.
    pub out_loud_slowdown: f64,
    /// Vertical gaze bob amplitude while walking, degrees.
    pub walk_bob_deg: f64,
    /// Walking cadence range, Hz.
    pub step_hz: (f64, f64),
    pub accel_noise: f64,
    pub gyro_noise: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            tremor_deg: 0.08,
            drift_deg_per_s: 0.05,
            reference_depth_m: 0.5,
            out_loud_slowdown: 1.3,
            walk_bob_deg: 0.4,
            step_hz: (1.8, 2.2),
            accel_noise: 0.05,
            gyro_noise: 0.01,
        }
    }
}

impl SimConfig {
    /// Fixational jitter expressed in meters at the reference depth.
    pub fn tremor_sigma_m(&self) -> f64 {
        self.reference_depth_m * self.tremor_deg.to_radians().tan()
    }

    /// The same model without fixational noise or walking bob; used to
    /// measure the underlying eye trajectories exactly.
    pub fn noiseless(&self) -> Self {
        SimConfig {
            tremor_deg: 0.0,
            drift_deg_per_s: 0.0,
            walk_bob_deg: 0.0,
            ..self.clone()
        }
    }
}

/// One labelled example. Modalities that are absent are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledClip {
    pub id: String,
    pub spec: ScenarioSpec,
    pub gaze: Option<crate::geometry::GazeWindow>,
    pub imu: Option<ImuWindow>,
    pub rgb: Option<RgbPatch>,
}

impl LabeledClip {
    pub fn label(&self, task: Task) -> usize {
        task.label_of(&self.spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaze.is_none() && self.imu.is_none() && self.rgb.is_none() {
            return Err(Error::Data(format!("clip {} has no modality", self.id)));
        }
        if let (Some(g), Some(i)) = (&self.gaze, &self.imu) {
            if (g.duration() - i.duration()).abs() > 1e-6 {
                return Err(Error::Data(format!(
                    "clip {}: gaze covers {}s but IMU {}s",
                    self.id,
                    g.duration(),
                    i.duration()
                )));
            }
        }
        Ok(())
    }
}

/// Draws one clip for `spec` with the given window parameters.
pub fn gen_clip(
    id: impl Into<String>,
    spec: &ScenarioSpec,
    defaults: &ClipDefaults,
    cfg: &SimConfig,
) -> Result<LabeledClip> {
    spec.validate()?;
    let t = defaults.duration_s;
    let gaze = if defaults.gaze {
        let path = match spec.label {
            Label::Reading => gen_reading_scanpath(spec, cfg, defaults.gaze_hz, t)?,
            Label::NotReading => gen_nonreading_scanpath(spec, cfg, defaults.gaze_hz, t)?,
        };
        Some(path.window)
    } else {
        None
    };
    let imu = if defaults.imu {
        Some(gen_imu(spec, cfg, defaults.imu_hz, t)?)
    } else {
        None
    };
    let rgb = if defaults.rgb {
        let size = crate::geometry::crop_geometry(defaults.patch_fov_deg, &defaults.camera)?;
        Some(gen_patch(spec, size)?)
    } else {
        None
    };
    let clip = LabeledClip {
        id: id.into(),
        spec: *spec,
        gaze,
        imu,
        rgb,
    };
    clip.validate()?;
    Ok(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_invariants() {
        assert!(ScenarioSpec::reading(Mode::Engaged, Medium::Print, Direction::Ltr, 1)
            .validate()
            .is_ok());
        assert!(ScenarioSpec::reading(Mode::None, Medium::Print, Direction::Ltr, 1)
            .validate()
            .is_err());
        let mut neg = ScenarioSpec::not_reading(Activity::Daily, 1);
        assert!(neg.validate().is_ok());
        neg.mode = Mode::Skim;
        assert!(neg.validate().is_err());
    }

    #[test]
    fn task_labels() {
        let neg = ScenarioSpec::not_reading(Activity::HardNegative, 0);
        let walk = ScenarioSpec::reading(Mode::WalkRead, Medium::Objects, Direction::Ltr, 0);
        assert_eq!(Task::Binary.label_of(&neg), 0);
        assert_eq!(Task::Binary.label_of(&walk), 1);
        assert_eq!(Task::Mode7.label_of(&walk), 5);
        assert_eq!(Task::Medium4.label_of(&walk), 3);
        assert_eq!(Task::Mode7.class_names().len(), 7);
        assert_eq!(Task::Medium4.class_names()[2], "digital");
        assert!(Task::parse("mode9").is_err());
    }
}
