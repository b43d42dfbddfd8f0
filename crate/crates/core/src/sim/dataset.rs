use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::alternating::{change_points_of, gen_alternating, AlternatingSequence, ChangePoint, Segment, StreamCanvas};
use super::{
    gen_clip, Activity, Direction, ImuWindow, Label, LabeledClip, Medium, Mode, RgbPatch, ScenarioSpec, SimConfig, Task,
};
use crate::error::{config_err, Error, Result};
use crate::geometry::{CameraModel, GazeRepr, GazeWindow};
use crate::rng;

/// Window parameters shared by every clip of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClipDefaults {
    pub gaze: bool,
    pub imu: bool,
    pub rgb: bool,
    pub gaze_hz: f64,
    pub imu_hz: f64,
    pub duration_s: f64,
    pub patch_fov_deg: f64,
    pub camera: CameraModel,
}

impl Default for ClipDefaults {
    fn default() -> Self {
        ClipDefaults {
            gaze: true,
            imu: true,
            rgb: true,
            gaze_hz: 60.0,
            imu_hz: 60.0,
            duration_s: 2.0,
            patch_fov_deg: 5.0,
            camera: CameraModel::default(),
        }
    }
}

fn mode_none() -> Mode {
    Mode::None
}

fn medium_none() -> Medium {
    Medium::None
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: Label,
    #[serde(default = "mode_none")]
    pub mode: Mode,
    #[serde(default = "medium_none")]
    pub medium: Medium,
    #[serde(default)]
    pub direction: Direction,
    #[serde(default)]
    pub activity: Option<Activity>,
    pub count: usize,
}

impl ManifestEntry {
    pub fn reading(mode: Mode, medium: Medium, count: usize) -> Self {
        ManifestEntry {
            label: Label::Reading,
            mode,
            medium,
            direction: Direction::Ltr,
            activity: None,
            count,
        }
    }

    pub fn not_reading(activity: Activity, count: usize) -> Self {
        ManifestEntry {
            label: Label::NotReading,
            mode: Mode::None,
            medium: Medium::None,
            direction: Direction::Ltr,
            activity: Some(activity),
            count,
        }
    }

    fn spec(&self, seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            label: self.label,
            mode: self.mode,
            medium: self.medium,
            direction: self.direction,
            activity: match self.label {
                Label::NotReading => Some(self.activity.unwrap_or(Activity::Daily)),
                Label::Reading => None,
            },
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamEntry {
    pub scenario: u8,
    pub total_s: f64,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

/// Everything needed to regenerate a dataset byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub entries: Vec<ManifestEntry>,
    #[serde(default)]
    pub streams: Vec<StreamEntry>,
    #[serde(default)]
    pub clip: ClipDefaults,
    #[serde(default)]
    pub sim: SimConfig,
}

/// Splits `n` as evenly as possible into `parts` counts.
fn spread(n: usize, parts: usize) -> impl Iterator<Item = usize> {
    (0..parts).map(move |i| n / parts + usize::from(i < n % parts))
}

fn reading_entries(n: usize, modes: &[Mode]) -> Vec<ManifestEntry> {
    let cells: Vec<(Mode, Medium)> = modes
        .iter()
        .flat_map(|&m| Medium::TEXT.iter().map(move |&md| (m, md)))
        .collect();
    spread(n, cells.len())
        .zip(&cells)
        .filter(|(c, _)| *c > 0)
        .map(|(c, &(m, md))| ManifestEntry::reading(m, md, c))
        .collect()
}

fn negative_entries(n: usize) -> Vec<ManifestEntry> {
    let hard = n * 2 / 5;
    vec![
        ManifestEntry::not_reading(Activity::Daily, n - hard),
        ManifestEntry::not_reading(Activity::HardNegative, hard),
    ]
}

impl Manifest {
    pub fn empty(seed: u64) -> Self {
        Manifest {
            seed,
            entries: Vec::new(),
            streams: Vec::new(),
            clip: ClipDefaults::default(),
            sim: SimConfig::default(),
        }
    }

    /// `reading` clips spread over every mode and medium, and
    /// `not_reading` clips of which two fifths are hard negatives.
    pub fn binary(seed: u64, reading: usize, not_reading: usize) -> Self {
        let mut m = Manifest::empty(seed);
        m.entries = reading_entries(reading, &Mode::READING);
        m.entries.extend(negative_entries(not_reading));
        m
    }

    /// `per_class` clips for each of the seven mode classes.
    pub fn mode7(seed: u64, per_class: usize) -> Self {
        let mut m = Manifest::empty(seed);
        for mode in Mode::READING {
            m.entries.extend(reading_entries(per_class, &[mode]));
        }
        m.entries.extend(negative_entries(per_class));
        m
    }

    /// `per_class` clips for each of the four medium classes.
    pub fn medium4(seed: u64, per_class: usize) -> Self {
        let mut m = Manifest::empty(seed);
        for medium in Medium::TEXT {
            m.entries.extend(
                spread(per_class, Mode::READING.len())
                    .zip(Mode::READING)
                    .filter(|(c, _)| *c > 0)
                    .map(|(c, mode)| ManifestEntry::reading(mode, medium, c)),
            );
        }
        m.entries.extend(negative_entries(per_class));
        m
    }

    pub fn total_clips(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_clips() == 0 && self.streams.iter().all(|s| s.count == 0) {
            return config_err("manifest requests no clips and no streams");
        }
        for e in &self.entries {
            e.spec(0).validate()?;
        }
        let c = &self.clip;
        if !(c.gaze || c.imu || c.rgb) {
            return config_err("clip defaults enable no modality");
        }
        Ok(())
    }

    /// Per-class clip counts for `task`.
    pub fn class_counts(&self, task: Task) -> BTreeMap<&'static str, usize> {
        let names = task.class_names();
        let mut out: BTreeMap<&'static str, usize> = names.iter().map(|&n| (n, 0)).collect();
        for e in &self.entries {
            *out.get_mut(names[task.label_of(&e.spec(0))]).expect("class") += e.count;
        }
        out
    }
}

/// Generates every clip of `manifest` in entry order. Clip `i` uses a
/// seed derived from the manifest seed and `i`, so entries can be edited
/// without disturbing earlier clips.
pub fn gen_dataset(manifest: &Manifest) -> Result<Vec<LabeledClip>> {
    manifest.validate()?;
    let mut clips = Vec::with_capacity(manifest.total_clips());
    let mut idx = 0u64;
    for e in &manifest.entries {
        for _ in 0..e.count {
            let spec = e.spec(rng::derive(manifest.seed, idx));
            clips.push(gen_clip(
                format!("clip-{idx:06}"),
                &spec,
                &manifest.clip,
                &manifest.sim,
            )?);
            idx += 1;
        }
    }
    Ok(clips)
}

/// Generates the alternating streams of `manifest`.
pub fn gen_streams(manifest: &Manifest) -> Result<Vec<AlternatingSequence>> {
    let mut out = Vec::new();
    let mut idx = 0u64;
    for s in &manifest.streams {
        for _ in 0..s.count {
            let seed = rng::derive(manifest.seed ^ 0x5354_5245_414d, idx);
            out.push(gen_alternating(
                s.scenario,
                s.total_s,
                seed,
                &manifest.clip,
                &manifest.sim,
            )?);
            idx += 1;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub mode: Mode,
    pub medium: Medium,
    pub direction: Direction,
    pub scenario: String,
    #[serde(default)]
    pub activity: Option<Activity>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeRecord {
    pub hz: f64,
    pub repr: GazeRepr,
    pub data: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImuRecord {
    pub hz: f64,
    pub data: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RgbRecord {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: String,
    /// Stream canvases only: image pixel of the top-left corner.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
}

/// One line of a clip file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub label: usize,
    pub meta: Meta,
    pub gaze: Option<GazeRecord>,
    pub imu: Option<ImuRecord>,
    pub rgb: Option<RgbRecord>,
}

/// One line of a stream file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamRecord {
    pub id: String,
    pub scenario_id: u8,
    pub total_s: f64,
    pub initial_state: Label,
    pub change_points: Vec<ChangePoint>,
    #[serde(default)]
    pub segments: Vec<Segment>,
    pub gaze: GazeRecord,
    pub imu: ImuRecord,
    pub rgb: RgbRecord,
}

fn gaze_record(w: &GazeWindow) -> GazeRecord {
    GazeRecord {
        hz: w.hz(),
        repr: w.repr(),
        data: w.samples().map(|s| s.to_vec()).collect(),
        t: None,
    }
}

fn imu_record(w: &ImuWindow) -> ImuRecord {
    ImuRecord {
        hz: w.hz(),
        data: (0..w.len()).map(|i| w.sample(i).to_vec()).collect(),
        t: None,
    }
}

fn rgb_record(p: &RgbPatch) -> RgbRecord {
    RgbRecord {
        h: p.height(),
        w: p.width(),
        c: p.channels(),
        data: B64.encode(p.data()),
        offset: None,
        camera: None,
    }
}

fn flatten(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() * dim);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::Data(format!(
                "{what} sample {i} has {} values, expected {dim}",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{what} sample {i} is not finite")));
        }
        out.extend_from_slice(r);
    }
    Ok(out)
}

impl GazeRecord {
    pub fn window(&self) -> Result<GazeWindow> {
        let data = flatten(&self.data, self.repr.dim(), "gaze")?;
        GazeWindow::new(self.hz, self.repr, data).map_err(|e| Error::Data(e.to_string()))
    }
}

impl ImuRecord {
    pub fn window(&self) -> Result<ImuWindow> {
        let data = flatten(&self.data, super::IMU_DIM, "imu")?;
        ImuWindow::new(self.hz, data).map_err(|e| Error::Data(e.to_string()))
    }
}

impl RgbRecord {
    pub fn patch(&self) -> Result<RgbPatch> {
        let bytes = B64
            .decode(&self.data)
            .map_err(|e| Error::Data(format!("rgb payload is not base64: {e}")))?;
        RgbPatch::new(self.h, self.w, self.c, bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

impl Record {
    pub fn from_clip(clip: &LabeledClip) -> Self {
        let s = &clip.spec;
        Record {
            id: clip.id.clone(),
            label: Task::Binary.label_of(s),
            meta: Meta {
                mode: s.mode,
                medium: s.medium,
                direction: s.direction,
                scenario: s.scenario_tag(),
                activity: s.activity,
                seed: s.seed,
            },
            gaze: clip.gaze.as_ref().map(gaze_record),
            imu: clip.imu.as_ref().map(imu_record),
            rgb: clip.rgb.as_ref().map(rgb_record),
        }
    }

    pub fn into_clip(self) -> Result<LabeledClip> {
        let label = match self.label {
            0 => Label::NotReading,
            1 => Label::Reading,
            l => return Err(Error::Data(format!("clip {}: label {l} is not 0 or 1", self.id))),
        };
        let spec = ScenarioSpec {
            label,
            mode: self.meta.mode,
            medium: self.meta.medium,
            direction: self.meta.direction,
            activity: self.meta.activity,
            seed: self.meta.seed,
        };
        spec.validate()
            .map_err(|e| Error::Data(format!("clip {}: {e}", self.id)))?;
        let clip = LabeledClip {
            id: self.id,
            spec,
            gaze: self.gaze.as_ref().map(GazeRecord::window).transpose()?,
            imu: self.imu.as_ref().map(ImuRecord::window).transpose()?,
            rgb: self.rgb.as_ref().map(RgbRecord::patch).transpose()?,
        };
        clip.validate()?;
        Ok(clip)
    }
}

impl StreamRecord {
    pub fn from_sequence(id: impl Into<String>, s: &AlternatingSequence) -> Self {
        let mut rgb = rgb_record(&s.canvas.image);
        rgb.offset = Some(s.canvas.offset);
        rgb.camera = Some(s.canvas.camera);
        let mut gaze = gaze_record(&s.gaze);
        gaze.t = s.gaze_t.clone();
        let mut imu = imu_record(&s.imu);
        imu.t = s.imu_t.clone();
        StreamRecord {
            id: id.into(),
            scenario_id: s.scenario_id,
            total_s: s.total_s,
            initial_state: s.initial_state(),
            change_points: s.change_points.clone(),
            segments: s.segments.clone(),
            gaze,
            imu,
            rgb,
        }
    }

    pub fn into_sequence(self) -> Result<AlternatingSequence> {
        let image = self.rgb.patch()?;
        let camera = self.rgb.camera.unwrap_or_default();
        let offset = self.rgb.offset.unwrap_or([
            (camera.width as f64 - image.width() as f64) / 2.0,
            (camera.height as f64 - image.height() as f64) / 2.0,
        ]);
        let gaze = self.gaze.window()?;
        let imu = self.imu.window()?;
        for (name, t, n) in [("gaze", &self.gaze.t, gaze.len()), ("imu", &self.imu.t, imu.len())] {
            if let Some(t) = t {
                if t.len() != n {
                    return Err(Error::Data(format!(
                        "{name} has {n} samples but {} timestamps",
                        t.len()
                    )));
                }
            }
        }
        if self.change_points.windows(2).any(|w| !(w[0].t < w[1].t)) {
            return Err(Error::Data(format!("stream {}: change points not increasing", self.id)));
        }
        let seq = AlternatingSequence {
            scenario_id: self.scenario_id,
            total_s: self.total_s,
            gaze,
            imu,
            canvas: StreamCanvas { image, offset, camera },
            initial: self.initial_state,
            segments: self.segments,
            change_points: self.change_points,
            gaze_t: self.gaze.t,
            imu_t: self.imu.t,
        };
        if !seq.segments.is_empty() && change_points_of(&seq.segments) != seq.change_points {
            return Err(Error::Data(format!(
                "stream {}: segments disagree with change points",
                self.id
            )));
        }
        Ok(seq)
    }
}

fn write_lines<T: Serialize>(mut out: impl Write, items: impl Iterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(input: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl(out: impl Write, clips: &[LabeledClip]) -> Result<()> {
    write_lines(out, clips.iter().map(Record::from_clip))
}

pub fn read_jsonl(input: impl BufRead) -> Result<Vec<LabeledClip>> {
    read_lines::<Record>(input)?
        .into_iter()
        .map(Record::into_clip)
        .collect()
}

pub fn write_stream_jsonl(out: impl Write, streams: &[AlternatingSequence]) -> Result<()> {
    write_lines(
        out,
        streams
            .iter()
            .enumerate()
            .map(|(i, s)| StreamRecord::from_sequence(format!("stream-{i:04}"), s)),
    )
}

pub fn read_stream_jsonl(input: impl BufRead) -> Result<Vec<AlternatingSequence>> {
    read_lines::<StreamRecord>(input)?
        .into_iter()
        .map(StreamRecord::into_sequence)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_balance_classes() {
        let m = Manifest::binary(1, 1000, 1000);
        assert_eq!(m.total_clips(), 2000);
        let c = m.class_counts(Task::Binary);
        assert_eq!((c["reading"], c["not_reading"]), (1000, 1000));
        let m7 = Manifest::mode7(1, 30).class_counts(Task::Mode7);
        assert!(m7.values().all(|&n| n == 30), "{m7:?}");
        let m4 = Manifest::medium4(1, 30).class_counts(Task::Medium4);
        assert!(m4.values().all(|&n| n == 30), "{m4:?}");
    }

    #[test]
    fn clips_survive_a_jsonl_round_trip() {
        let m = Manifest::binary(5, 3, 3);
        let clips = gen_dataset(&m).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &clips).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, clips);
    }

    #[test]
    fn streams_survive_a_jsonl_round_trip() {
        let mut m = Manifest::empty(2);
        m.streams.push(StreamEntry {
            scenario: 3,
            total_s: 20.0,
            count: 1,
        });
        let s = gen_streams(&m).unwrap();
        let mut buf = Vec::new();
        write_stream_jsonl(&mut buf, &s).unwrap();
        assert_eq!(read_stream_jsonl(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(read_jsonl("{\"id\": 1}\n".as_bytes()).is_err());
        assert!(Manifest::empty(0).validate().is_err());
    }
}
