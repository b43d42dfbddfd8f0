use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::dataset::ClipDefaults;
use super::imu::{ImuWindow, MotionKind, MotionSource, IMU_DIM};
use super::patch::{crop_patch, scene_texture, text_texture, RgbPatch};
use super::scanpath::{finish, negative_start, run_negative, sample_count, NegativeKind, Reader, TextBlock, Timeline};
use super::{Direction, Label, Medium, Mode, SimConfig};
use crate::error::{config_err, Result};
use crate::geometry::{project_to_image, CameraModel, GazeWindow, Vec3};
use crate::rng;

pub const CANVAS_SIZE: usize = 512;
const MIN_SEGMENT_S: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SegmentKind {
    Reading { mode: Mode, medium: Medium },
    NotReading { gaze: NegativeKind, motion: MotionKind },
}

impl SegmentKind {
    pub fn label(&self) -> Label {
        match self {
            SegmentKind::Reading { .. } => Label::Reading,
            SegmentKind::NotReading { .. } => Label::NotReading,
        }
    }

    fn motion(&self) -> MotionKind {
        match *self {
            SegmentKind::Reading {
                mode: Mode::WalkRead, ..
            } => MotionKind::Walking,
            SegmentKind::Reading { .. } => MotionKind::Stationary,
            SegmentKind::NotReading { motion, .. } => motion,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub kind: SegmentKind,
}

/// Ground-truth state change: at time `t` the wearer switches to `state`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangePoint {
    pub t: f64,
    pub state: Label,
}

/// Static grayscale scene in front of the wearer, covering the central
/// part of the camera image. `offset` is the image pixel of the canvas's
/// top-left corner.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamCanvas {
    pub image: RgbPatch,
    pub offset: [f64; 2],
    pub camera: CameraModel,
}

impl StreamCanvas {
    /// Foveated crop around the projection of a 3D gaze point.
    pub fn patch_at(&self, gaze: Vec3, size: usize, channels: usize) -> Result<RgbPatch> {
        let px = project_to_image(gaze, &self.camera)?;
        crop_patch(
            &self.image,
            [px[0] - self.offset[0], px[1] - self.offset[1]],
            size,
            channels,
        )
    }
}

/// A continuous recording that switches between reading and other
/// activities at known times.
#[derive(Clone, Debug, PartialEq)]
pub struct AlternatingSequence {
    pub scenario_id: u8,
    pub total_s: f64,
    pub gaze: GazeWindow,
    pub imu: ImuWindow,
    pub canvas: StreamCanvas,
    /// State before the first change point.
    pub initial: Label,
    pub segments: Vec<Segment>,
    pub change_points: Vec<ChangePoint>,
    /// Per-sample arrival times when they are not uniform at the stream
    /// rate; `None` means sample `i` arrives at `i / hz`.
    pub gaze_t: Option<Vec<f64>>,
    pub imu_t: Option<Vec<f64>>,
}

impl AlternatingSequence {
    pub fn initial_state(&self) -> Label {
        self.initial
    }

    /// Ground-truth state at time `t`.
    pub fn state_at(&self, t: f64) -> Label {
        let mut state = self.initial_state();
        for c in &self.change_points {
            if c.t <= t {
                state = c.state;
            }
        }
        state
    }
}

pub(super) fn change_points_of(segments: &[Segment]) -> Vec<ChangePoint> {
    segments
        .windows(2)
        .filter(|w| w[0].kind.label() != w[1].kind.label())
        .map(|w| ChangePoint {
            t: w[1].start,
            state: w[1].kind.label(),
        })
        .collect()
}

/// Segment states for one of the ten recorded scenario types; `true`
/// means reading.
fn template(id: u8) -> &'static [bool] {
    const RNR: &[bool] = &[true, false, true];
    match id {
        1..=4 => RNR,
        5 => &[true, false, true, false, true],
        6 | 8 => &[false, true, false],
        7 => &[false, true, false, true],
        9 => &[true, false, true, false, true, false],
        _ => &[true, false, true, false, true, false, true],
    }
}

fn negative_kind(id: u8, rng: &mut rng::Rng) -> (NegativeKind, MotionKind) {
    use MotionKind::*;
    use NegativeKind::*;
    match id {
        1 | 6 => (RandomSaccades, Walking),
        2 if rng.random_bool(0.5) => (LongFixation, Stationary),
        2 => (RandomSaccades, Stationary),
        3 => (FixationClusters, Stationary),
        4 | 8 => (RandomSaccades, HeadTurns),
        5 => (FixationClusters, HeadTurns),
        7 => (SmoothPursuit, Walking),
        9 if rng.random_bool(0.5) => (SmoothPursuit, HeadTurns),
        9 => (RandomSaccades, HeadTurns),
        _ => (FixationClusters, Stationary),
    }
}

fn reading_kind(id: u8, medium: Medium, rng: &mut rng::Rng) -> SegmentKind {
    let mode = match id {
        7 => Mode::WalkRead,
        8 => Mode::Skim,
        9 | 10 => Mode::Engaged,
        _ if rng.random_bool(0.7) => Mode::Engaged,
        _ => Mode::Skim,
    };
    SegmentKind::Reading { mode, medium }
}

/// Angle of a canvas pixel column/row, degrees.
fn canvas_angle(px: f64, center: f64, f: f64) -> f64 {
    ((px - center) / f).atan().to_degrees()
}

fn canvas_pixel(deg: f64, center: f64, f: f64) -> f64 {
    center + f * deg.to_radians().tan()
}

/// Stitches reading and non-reading segments for scenario `scenario_id`
/// (1 to 10) into one stream of `total_s` seconds.
pub fn gen_alternating(
    scenario_id: u8,
    total_s: f64,
    seed: u64,
    defaults: &ClipDefaults,
    cfg: &SimConfig,
) -> Result<AlternatingSequence> {
    if !(1..=10).contains(&scenario_id) {
        return config_err(format!("scenario {scenario_id} outside 1..=10"));
    }
    let states = template(scenario_id);
    if !(total_s >= MIN_SEGMENT_S * states.len() as f64) {
        return config_err(format!(
            "scenario {scenario_id} needs at least {} s, got {total_s}",
            MIN_SEGMENT_S * states.len() as f64
        ));
    }
    let n_gaze = sample_count(defaults.gaze_hz, total_s)?;
    let n_imu = sample_count(defaults.imu_hz, total_s)?;
    let mut r = rng::stream(seed, 0x616c_7400 + scenario_id as u64);

    let medium = match scenario_id {
        6 => Medium::Objects,
        _ if r.random_bool(0.5) => Medium::Print,
        _ => Medium::Digital,
    };
    let weights: Vec<f64> = states.iter().map(|_| r.random_range(0.7..1.3)).collect();
    let wsum: f64 = weights.iter().sum();
    let slack = total_s - MIN_SEGMENT_S * states.len() as f64;
    let mut segments = Vec::with_capacity(states.len());
    let mut t = 0.0;
    for (i, (&reading, w)) in states.iter().zip(&weights).enumerate() {
        let end = if i + 1 == states.len() {
            total_s
        } else {
            t + MIN_SEGMENT_S + slack * w / wsum
        };
        let kind = if reading {
            reading_kind(scenario_id, medium, &mut r)
        } else {
            let (gaze, motion) = negative_kind(scenario_id, &mut r);
            SegmentKind::NotReading { gaze, motion }
        };
        segments.push(Segment { start: t, end, kind });
        t = end;
    }

    // Scene: text block on the left, scenery elsewhere.
    let cam = defaults.camera;
    let f = cam.focal();
    let half = CANVAS_SIZE as f64 / 2.0;
    let (cx, cy) = cam.center();
    let offset = [cx - half, cy - half];
    let (yaw_lo, yaw_hi, pitch_half): (f64, f64, f64) = match medium {
        Medium::Objects => (-14.0, -2.0, 4.0),
        _ => (-20.0, 4.0, 10.0),
    };
    let bx0 = canvas_pixel(yaw_lo, half, f).round() as usize;
    let bx1 = canvas_pixel(yaw_hi, half, f).round() as usize;
    let by0 = (half - f * pitch_half.to_radians().tan()).round() as usize;
    let by1 = (half + f * pitch_half.to_radians().tan()).round() as usize;
    let (pitch_px, ink, bg) = match medium {
        Medium::Digital => (r.random_range(9.0..11.0), 230, 25),
        Medium::Objects => (r.random_range(17.0..22.0), 30, 220),
        _ => (r.random_range(13.0..17.0), 40, 225),
    };
    let mut image = scene_texture(CANVAS_SIZE, &mut r);
    let text = text_texture(CANVAS_SIZE, pitch_px, ink, bg, false, &mut r);
    for y in by0..by1 {
        for x in bx0..bx1 {
            image[y * CANVAS_SIZE + x] = text[y * CANVAS_SIZE + x];
        }
    }
    let canvas = StreamCanvas {
        image: RgbPatch::from_gray(CANVAS_SIZE, CANVAS_SIZE, 1, &image)?,
        offset,
        camera: cam,
    };
    let spacing = (pitch_px / f).atan().to_degrees();
    let top = canvas_angle(half - by0 as f64 - pitch_px / 2.0, 0.0, f);
    let block = TextBlock {
        x0: yaw_lo + 0.5,
        top,
        width: yaw_hi - yaw_lo - 1.0,
        spacing,
        lines: ((by1 - by0) as f64 / pitch_px).floor() as usize,
    };
    let look = (8.0, 25.0, -15.0, 15.0);

    // Gaze: one continuous timeline through all segments.
    let mut tl = None::<Timeline>;
    for seg in &segments {
        let (start, mut reader) = match seg.kind {
            SegmentKind::Reading { mode, medium } => {
                let rd = Reader::on_block(mode, medium, cfg, &mut r, &block);
                (rd.start_pos(&mut r), Some(rd))
            }
            SegmentKind::NotReading { gaze, .. } => (negative_start(gaze, &mut r, look), None),
        };
        let tl = tl.get_or_insert_with(|| Timeline::new(-r.random_range(0.0..0.2), start, cfg));
        if !tl.events.is_empty() {
            tl.saccade(start, super::EventKind::Saccade);
        }
        match (seg.kind, reader.as_mut()) {
            (_, Some(rd)) => rd.run(tl, &mut r, seg.end),
            (SegmentKind::NotReading { gaze, .. }, None) => run_negative(gaze, tl, &mut r, seg.end, look),
            _ => unreachable!("reading segments carry a reader"),
        }
    }
    let tl = tl.expect("at least one segment");
    let positions = tl.sample(defaults.gaze_hz, n_gaze);
    let gait = (
        r.random_range(cfg.step_hz.0..=cfg.step_hz.1),
        r.random_range(0.0..std::f64::consts::TAU),
    );
    let segment_at = |t: f64| {
        segments
            .iter()
            .find(|s| t < s.end)
            .unwrap_or(segments.last().expect("segments"))
    };
    let bob_at = |t: f64| (segment_at(t).kind.motion() == MotionKind::Walking).then_some(gait);
    let gaze = finish(Direction::Ltr, &mut r, cfg, defaults.gaze_hz, &positions, &bob_at)?;

    // Head motion, one source per segment.
    let sources: Vec<MotionSource> = segments
        .iter()
        .map(|s| MotionSource::new(s.kind.motion(), cfg, gait, &mut r, s.start, s.end))
        .collect();
    let mut data = Vec::with_capacity(n_imu * IMU_DIM);
    for i in 0..n_imu {
        let t = i as f64 / defaults.imu_hz;
        let k = segments.iter().position(|s| t < s.end).unwrap_or(segments.len() - 1);
        data.extend_from_slice(&sources[k].sample(t, &mut r));
    }
    let imu = ImuWindow::new(defaults.imu_hz, data)?;

    let change_points = change_points_of(&segments);
    Ok(AlternatingSequence {
        scenario_id,
        total_s,
        gaze,
        imu,
        canvas,
        initial: segments[0].kind.label(),
        segments,
        change_points,
        gaze_t: None,
        imu_t: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_tile_the_stream() {
        let d = ClipDefaults::default();
        let cfg = SimConfig::default();
        for id in 1..=10u8 {
            let s = gen_alternating(id, 60.0, 7, &d, &cfg).unwrap();
            assert_eq!(s.segments.len(), template(id).len());
            assert_eq!(s.change_points.len(), s.segments.len() - 1);
            assert_eq!(s.segments.last().unwrap().end, 60.0);
            for w in s.segments.windows(2) {
                assert_eq!(w[0].end, w[1].start);
                assert!(w[0].end - w[0].start >= MIN_SEGMENT_S);
            }
            assert_eq!(s.gaze.len(), 3600);
            assert_eq!(s.imu.len(), 3600);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let d = ClipDefaults::default();
        let cfg = SimConfig::default();
        assert!(gen_alternating(0, 60.0, 1, &d, &cfg).is_err());
        assert!(gen_alternating(10, 10.0, 1, &d, &cfg).is_err());
    }

    #[test]
    fn reading_gaze_lands_on_text() {
        let d = ClipDefaults::default();
        let s = gen_alternating(2, 40.0, 3, &d, &SimConfig::default()).unwrap();
        let seg = s.segments[0];
        let i = ((seg.start + seg.end) / 2.0 * s.gaze.hz()) as usize;
        let g = s.gaze.sample(i);
        let px = project_to_image([g[0], g[1], g[2]], &s.canvas.camera).unwrap();
        let cx = px[0] - s.canvas.offset[0];
        assert!(cx > 60.0 && cx < 300.0, "{cx}");
    }
}
