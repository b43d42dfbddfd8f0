use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::imu::MotionKind;
use super::{Activity, Direction, Label, Medium, Mode, ScenarioSpec, SimConfig};
use crate::error::{config_err, Result};
use crate::geometry::{flip_gaze, point_at_angles, rotate_gaze, GazeRepr, GazeWindow};
use crate::rng::Rng;

pub(super) const STREAM_GAZE: u64 = 1;
pub(super) const STREAM_KIND: u64 = 4;
pub(super) const STREAM_GAIT: u64 = 5;
const STREAM_TREMOR: u64 = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Fixation,
    Saccade,
    ReturnSweep,
    Glance,
    Pursuit,
}

/// Ground-truth oculomotor event, times in seconds relative to the first
/// sample. The first event may start before zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GazeEvent {
    pub kind: EventKind,
    pub start: f64,
    pub end: f64,
}

impl GazeEvent {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scanpath {
    pub window: GazeWindow,
    pub events: Vec<GazeEvent>,
}

/// Gaze behaviour of a non-reading clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    RandomSaccades,
    SmoothPursuit,
    LongFixation,
    FixationClusters,
}

impl NegativeKind {
    /// Kind drawn for a non-reading spec; hard negatives always dwell on a
    /// static region.
    pub fn of(spec: &ScenarioSpec) -> NegativeKind {
        if spec.activity == Some(Activity::HardNegative) {
            return NegativeKind::FixationClusters;
        }
        let u: f64 = spec.rng(STREAM_KIND).random();
        if u < 0.4 {
            NegativeKind::RandomSaccades
        } else if u < 0.7 {
            NegativeKind::SmoothPursuit
        } else {
            NegativeKind::LongFixation
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NegativeKind::RandomSaccades => "random_saccades",
            NegativeKind::SmoothPursuit => "smooth_pursuit",
            NegativeKind::LongFixation => "long_fixation",
            NegativeKind::FixationClusters => "fixation_clusters",
        }
    }
}

/// Walking cadence (Hz) and phase shared by the gaze bob and the IMU.
pub(super) fn gait(spec: &ScenarioSpec, cfg: &SimConfig) -> (f64, f64) {
    let mut r = spec.rng(STREAM_GAIT);
    let hz = r.random_range(cfg.step_hz.0..=cfg.step_hz.1);
    let phase = r.random_range(0.0..std::f64::consts::TAU);
    (hz, phase)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(super) struct Pos {
    pub yaw: f64,
    pub pitch: f64,
    pub depth: f64,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Linear,
    MinJerk,
}

#[derive(Clone, Copy, Debug)]
struct Seg {
    t0: f64,
    t1: f64,
    from: Pos,
    to: Pos,
    shape: Shape,
}

/// Piecewise gaze trajectory in angle space.
pub(super) struct Timeline {
    segs: Vec<Seg>,
    pub events: Vec<GazeEvent>,
    pub t: f64,
    pub pos: Pos,
    drift: f64,
}

impl Timeline {
    pub fn new(start_time: f64, pos: Pos, cfg: &SimConfig) -> Self {
        Timeline {
            segs: Vec::new(),
            events: Vec::new(),
            t: start_time,
            pos,
            drift: cfg.drift_deg_per_s,
        }
    }

    pub fn fixate(&mut self, rng: &mut Rng, dur: f64) {
        let ang = rng.random_range(0.0..std::f64::consts::TAU);
        let to = Pos {
            yaw: self.pos.yaw + self.drift * dur * ang.cos(),
            pitch: self.pos.pitch + self.drift * dur * ang.sin(),
            depth: self.pos.depth,
        };
        self.push(dur, to, Shape::Linear, EventKind::Fixation);
    }

    /// Ballistic movement with a main-sequence duration.
    pub fn saccade(&mut self, to: Pos, kind: EventKind) {
        let amp = (to.yaw - self.pos.yaw).hypot(to.pitch - self.pos.pitch);
        let dur = (20.0 + 2.2 * amp) / 1000.0;
        self.push(dur, to, Shape::MinJerk, kind);
    }

    pub fn glide(&mut self, dur: f64, to: Pos, kind: EventKind) {
        self.push(dur, to, Shape::Linear, kind);
    }

    fn push(&mut self, dur: f64, to: Pos, shape: Shape, kind: EventKind) {
        let seg = Seg {
            t0: self.t,
            t1: self.t + dur,
            from: self.pos,
            to,
            shape,
        };
        self.segs.push(seg);
        match self.events.last_mut() {
            Some(e) if e.kind == kind && kind == EventKind::Pursuit && e.end == self.t => e.end = seg.t1,
            _ => self.events.push(GazeEvent {
                kind,
                start: seg.t0,
                end: seg.t1,
            }),
        }
        self.t = seg.t1;
        self.pos = to;
    }

    /// Positions at `n` sample times `i / hz`.
    pub fn sample(&self, hz: f64, n: usize) -> Vec<Pos> {
        let mut out = Vec::with_capacity(n);
        let mut k = 0;
        for i in 0..n {
            let t = i as f64 / hz;
            while k + 1 < self.segs.len() && self.segs[k].t1 <= t {
                k += 1;
            }
            let s = &self.segs[k];
            let u = ((t - s.t0) / (s.t1 - s.t0)).clamp(0.0, 1.0);
            let w = match s.shape {
                Shape::Linear => u,
                Shape::MinJerk => u * u * u * (10.0 - 15.0 * u + 6.0 * u * u),
            };
            out.push(Pos {
                yaw: s.from.yaw + w * (s.to.yaw - s.from.yaw),
                pitch: s.from.pitch + w * (s.to.pitch - s.from.pitch),
                depth: s.from.depth + w * (s.to.depth - s.from.depth),
            });
        }
        out
    }
}

fn normal_clamped(rng: &mut Rng, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let v = Normal::new(mean, sd).expect("positive sd").sample(rng);
    v.clamp(lo, hi)
}

pub(super) fn sample_count(hz: f64, duration: f64) -> Result<usize> {
    if !(duration > 0.0) {
        return config_err(format!("duration {duration} must be positive"));
    }
    if !(hz > 0.0) {
        return config_err(format!("rate {hz} must be positive"));
    }
    let n = (hz * duration).round() as usize;
    if n == 0 {
        return config_err("window holds no samples");
    }
    Ok(n)
}

/// Converts angle-space positions to a point window, adding tremor, the
/// walking bob where `bob_at` yields a cadence, and the text-direction
/// transform.
pub(super) fn finish(
    direction: Direction,
    tremor_rng: &mut Rng,
    cfg: &SimConfig,
    hz: f64,
    positions: &[Pos],
    bob_at: &dyn Fn(f64) -> Option<(f64, f64)>,
) -> Result<GazeWindow> {
    let tremor = if cfg.tremor_deg > 0.0 {
        Some(Normal::new(0.0, cfg.tremor_deg).expect("tremor sd"))
    } else {
        None
    };
    let mut samples = Vec::with_capacity(positions.len());
    for (i, p) in positions.iter().enumerate() {
        let (mut yaw, mut pitch) = (p.yaw, p.pitch);
        if let Some(n) = &tremor {
            yaw += n.sample(tremor_rng);
            pitch += n.sample(tremor_rng);
        }
        let t = i as f64 / hz;
        if let Some((step_hz, phase)) = bob_at(t) {
            let w = std::f64::consts::TAU * step_hz * t + phase;
            pitch += cfg.walk_bob_deg * w.sin();
            yaw += 0.3 * cfg.walk_bob_deg * (0.5 * w).sin();
        }
        samples.push(point_at_angles(yaw, pitch, p.depth));
    }
    let w = GazeWindow::from_samples(hz, GazeRepr::Point3d, &samples)?;
    Ok(match direction {
        Direction::Ltr => w,
        Direction::Rtl => flip_gaze(&w),
        Direction::Vertical => rotate_gaze(&w, 1),
    })
}

fn finish_clip(spec: &ScenarioSpec, cfg: &SimConfig, hz: f64, positions: &[Pos]) -> Result<GazeWindow> {
    let bob = (MotionKind::of(spec) == MotionKind::Walking).then(|| gait(spec, cfg));
    let mut r = spec.rng(STREAM_TREMOR);
    finish(spec.direction, &mut r, cfg, hz, positions, &|_| bob)
}

/// Text block in angle space: left edge, pitch of the first line, width,
/// line spacing (degrees) and number of lines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(super) struct TextBlock {
    pub x0: f64,
    pub top: f64,
    pub width: f64,
    pub spacing: f64,
    pub lines: usize,
}

struct TextLayout {
    x0: f64,
    width: f64,
    top: f64,
    spacing: f64,
    lines: usize,
    depth: f64,
    /// Saccade amplitude scale relative to print.
    amp_scale: f64,
}

impl TextLayout {
    fn draw(medium: Medium, rng: &mut Rng) -> Self {
        let (width, spacing, depth, lines, amp_scale) = match medium {
            Medium::Digital => (
                rng.random_range(10.0..14.0),
                rng.random_range(0.75..0.95),
                rng.random_range(0.26..0.36),
                12,
                0.7,
            ),
            Medium::Objects => (
                rng.random_range(5.0..9.0),
                rng.random_range(1.5..2.0),
                rng.random_range(0.8..2.0),
                3,
                1.3,
            ),
            _ => (
                rng.random_range(18.0..24.0),
                rng.random_range(1.1..1.4),
                rng.random_range(0.38..0.5),
                14,
                1.0,
            ),
        };
        let x0 = -width / 2.0 + rng.random_range(-3.0..3.0);
        let top = lines as f64 * spacing / 2.0 + rng.random_range(-2.0..2.0);
        TextLayout {
            x0,
            width,
            top,
            spacing,
            lines,
            depth,
            amp_scale,
        }
    }

    fn line_pitch(&self, line: usize) -> f64 {
        self.top - line as f64 * self.spacing
    }
}

struct ModeParams {
    fix_mean_ms: f64,
    fix_sd_ms: f64,
    amp_deg: f64,
    amp_sd: f64,
    regression_p: f64,
    skip_p: f64,
}

fn mode_params(mode: Mode, cfg: &SimConfig) -> ModeParams {
    let engaged = ModeParams {
        fix_mean_ms: 230.0,
        fix_sd_ms: 40.0,
        amp_deg: 2.0,
        amp_sd: 0.5,
        regression_p: 0.08,
        skip_p: 0.0,
    };
    match mode {
        Mode::Skim => ModeParams {
            fix_mean_ms: 185.0,
            fix_sd_ms: 35.0,
            amp_deg: 4.5,
            amp_sd: 1.2,
            regression_p: 0.02,
            skip_p: 0.5,
        },
        Mode::Scan => ModeParams {
            fix_mean_ms: 200.0,
            fix_sd_ms: 55.0,
            ..engaged
        },
        Mode::OutLoud => ModeParams {
            fix_mean_ms: 230.0 * cfg.out_loud_slowdown,
            fix_sd_ms: 50.0,
            regression_p: 0.06,
            ..engaged
        },
        Mode::WalkRead => ModeParams {
            fix_mean_ms: 240.0,
            ..engaged
        },
        _ => engaged,
    }
}

/// Reading state carried across successive calls so that long streams
/// continue line by line.
pub(super) struct Reader {
    layout: TextLayout,
    params: ModeParams,
    mode: Mode,
    line: usize,
    next_glance: f64,
}

impl Reader {
    fn new(spec: &ScenarioSpec, cfg: &SimConfig, rng: &mut Rng) -> Self {
        let layout = TextLayout::draw(spec.medium, rng);
        let line = rng.random_range(0..layout.lines);
        Reader {
            params: mode_params(spec.mode, cfg),
            mode: spec.mode,
            line,
            next_glance: rng.random_range(0.7..1.4),
            layout,
        }
    }

    /// Reader placed on a fixed text block, used for stream canvases.
    pub(super) fn on_block(mode: Mode, medium: Medium, cfg: &SimConfig, rng: &mut Rng, block: &TextBlock) -> Self {
        let mut layout = TextLayout::draw(medium, rng);
        layout.x0 = block.x0;
        layout.top = block.top;
        layout.width = block.width;
        layout.spacing = block.spacing;
        layout.lines = block.lines.max(1);
        Reader {
            params: mode_params(mode, cfg),
            mode,
            line: 0,
            next_glance: rng.random_range(0.7..1.4),
            layout,
        }
    }

    pub(super) fn start_pos(&self, rng: &mut Rng) -> Pos {
        Pos {
            yaw: self.layout.x0 + rng.random_range(0.0..0.9) * self.layout.width,
            pitch: self.layout.line_pitch(self.line),
            depth: self.layout.depth,
        }
    }

    fn fixation_s(&self, rng: &mut Rng) -> f64 {
        let p = &self.params;
        normal_clamped(rng, p.fix_mean_ms, p.fix_sd_ms, 90.0, 600.0) / 1000.0
    }

    /// Reads until the timeline reaches `until`.
    pub(super) fn run(&mut self, tl: &mut Timeline, rng: &mut Rng, until: f64) {
        let lay = &self.layout;
        let (x0, x1) = (lay.x0, lay.x0 + lay.width);
        let mut reading_clock = 0.0;
        while tl.t < until {
            let fix = self.fixation_s(rng);
            tl.fixate(rng, fix);
            reading_clock += fix;
            if tl.t >= until {
                break;
            }
            if self.mode == Mode::WriteRead && reading_clock >= self.next_glance {
                let back = tl.pos;
                let hands = Pos {
                    yaw: back.yaw + rng.random_range(-3.0..3.0),
                    pitch: back.pitch - rng.random_range(12.0..18.0),
                    depth: back.depth * 0.8,
                };
                tl.saccade(hands, EventKind::Glance);
                let hold = rng.random_range(0.3..0.6);
                tl.fixate(rng, hold);
                tl.saccade(back, EventKind::Glance);
                reading_clock = 0.0;
                self.next_glance = rng.random_range(0.7..1.4);
                continue;
            }
            let p = &self.params;
            let lay = &self.layout;
            let cur = tl.pos;
            if self.mode == Mode::Scan && rng.random_bool(0.5) {
                let jump = rng.random_range(1..=3);
                self.line = (self.line + jump) % lay.lines;
                let target = Pos {
                    yaw: x0 + rng.random_range(0.0..1.0) * lay.width,
                    pitch: self.layout.line_pitch(self.line),
                    depth: lay.depth,
                };
                tl.saccade(target, EventKind::Saccade);
                continue;
            }
            let amp = normal_clamped(rng, p.amp_deg, p.amp_sd, 0.5, 3.0 * p.amp_deg) * lay.amp_scale;
            if cur.yaw + amp > x1 {
                let skip = if rng.random_bool(p.skip_p) {
                    rng.random_range(2..=3)
                } else {
                    1
                };
                self.line = (self.line + skip) % lay.lines;
                let target = Pos {
                    yaw: x0 + rng.random_range(0.0..1.0),
                    pitch: self.layout.line_pitch(self.line),
                    depth: self.layout.depth,
                };
                tl.saccade(target, EventKind::ReturnSweep);
            } else if rng.random_bool(p.regression_p) && cur.yaw - x0 > 1.5 {
                let back = rng.random_range(0.5..1.5) * lay.amp_scale;
                tl.saccade(
                    Pos {
                        yaw: cur.yaw - back,
                        ..cur
                    },
                    EventKind::Saccade,
                );
            } else {
                tl.saccade(
                    Pos {
                        yaw: cur.yaw + amp,
                        pitch: lay.line_pitch(self.line),
                        ..cur
                    },
                    EventKind::Saccade,
                );
            }
        }
    }
}

/// Fixation-saccade staircase over lines of text, with return sweeps.
pub fn gen_reading_scanpath(spec: &ScenarioSpec, cfg: &SimConfig, hz: f64, duration: f64) -> Result<Scanpath> {
    if spec.label != Label::Reading {
        return config_err("reading scanpath requested for a non-reading spec");
    }
    spec.validate()?;
    let n = sample_count(hz, duration)?;
    let mut rng = spec.rng(STREAM_GAZE);
    let mut reader = Reader::new(spec, cfg, &mut rng);
    let start = reader.start_pos(&mut rng);
    let offset = rng.random_range(0.0..reader.params.fix_mean_ms / 1000.0);
    let mut tl = Timeline::new(-offset, start, cfg);
    reader.run(&mut tl, &mut rng, n as f64 / hz);
    let positions = tl.sample(hz, n);
    let window = finish_clip(spec, cfg, hz, &positions)?;
    Ok(Scanpath {
        window,
        events: tl.events,
    })
}

/// Gaze box for looking around, degrees.
const LOOK_YAW: f64 = 25.0;
const LOOK_PITCH: f64 = 15.0;

/// Non-reading behaviour of the given kind, continuing on `tl`.
pub(super) fn run_negative(
    kind: NegativeKind,
    tl: &mut Timeline,
    rng: &mut Rng,
    until: f64,
    bounds: (f64, f64, f64, f64),
) {
    let (ylo, yhi, plo, phi) = bounds;
    match kind {
        NegativeKind::RandomSaccades => {
            let mut sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            while tl.t < until {
                let dur = rng.random_range(0.2..0.6);
                tl.fixate(rng, dur);
                if tl.t >= until {
                    break;
                }
                let amp = rng.random_range(6.0..20.0);
                let theta = rng.random_range(0.0..60f64.to_radians());
                let vsign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let cur = tl.pos;
                // Shortened rather than reflected at the box edge, so the
                // horizontal direction always alternates.
                let room = if sign > 0.0 { yhi - cur.yaw } else { cur.yaw - ylo };
                let dx = sign * (amp * theta.cos()).min(room);
                let target = Pos {
                    yaw: cur.yaw + dx,
                    pitch: (cur.pitch + vsign * amp * theta.sin()).clamp(plo, phi),
                    depth: (cur.depth * rng.random_range(0.8..1.25)).clamp(0.6, 3.0),
                };
                tl.saccade(target, EventKind::Saccade);
                sign = -sign;
            }
        }
        NegativeKind::SmoothPursuit => {
            let radius = rng.random_range(5.0..15.0);
            let speed = rng.random_range(5.0..20.0);
            let omega = speed / radius * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let mut ang = rng.random_range(0.0..std::f64::consts::TAU);
            let center = Pos {
                yaw: tl.pos.yaw - radius * ang.cos(),
                pitch: tl.pos.pitch - radius * ang.sin(),
                depth: tl.pos.depth,
            };
            let dt = 0.05;
            while tl.t < until {
                ang += omega * dt;
                let to = Pos {
                    yaw: center.yaw + radius * ang.cos(),
                    pitch: center.pitch + radius * ang.sin(),
                    depth: center.depth,
                };
                tl.glide(dt, to, EventKind::Pursuit);
            }
        }
        NegativeKind::LongFixation => {
            let dur = (until - tl.t).max(0.0) + 0.05;
            tl.fixate(rng, dur);
        }
        NegativeKind::FixationClusters => {
            let center = tl.pos;
            let radius = rng.random_range(2.0..4.0);
            while tl.t < until {
                let dur = rng.random_range(0.25..0.7);
                tl.fixate(rng, dur);
                if tl.t >= until {
                    break;
                }
                let r = radius * rng.random_range(0.0f64..1.0).sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                tl.saccade(
                    Pos {
                        yaw: center.yaw + r * a.cos(),
                        pitch: center.pitch + r * a.sin(),
                        depth: center.depth,
                    },
                    EventKind::Saccade,
                );
            }
        }
    }
}

/// Start position and depth for a negative kind inside `bounds`.
pub(super) fn negative_start(kind: NegativeKind, rng: &mut Rng, bounds: (f64, f64, f64, f64)) -> Pos {
    let (ylo, yhi, plo, phi) = bounds;
    let (ym, pm) = ((ylo + yhi) / 2.0, (plo + phi) / 2.0);
    let (yh, ph) = ((yhi - ylo) / 2.0, (phi - plo) / 2.0);
    let depth = match kind {
        NegativeKind::RandomSaccades => rng.random_range(0.6..3.0),
        NegativeKind::SmoothPursuit => rng.random_range(1.0..3.0),
        NegativeKind::LongFixation => rng.random_range(0.5..3.0),
        NegativeKind::FixationClusters => rng.random_range(0.35..0.6),
    };
    let spread = match kind {
        NegativeKind::RandomSaccades => 0.8,
        _ => 0.4,
    };
    Pos {
        yaw: ym + yh * spread * rng.random_range(-1.0..1.0),
        pitch: pm + ph * spread * rng.random_range(-1.0..1.0),
        depth,
    }
}

/// Looking around, following a moving target, staring, or dwelling on a
/// static region; never the reading staircase.
pub fn gen_nonreading_scanpath(spec: &ScenarioSpec, cfg: &SimConfig, hz: f64, duration: f64) -> Result<Scanpath> {
    if spec.label != Label::NotReading {
        return config_err("non-reading scanpath requested for a reading spec");
    }
    spec.validate()?;
    let n = sample_count(hz, duration)?;
    let kind = NegativeKind::of(spec);
    let mut rng = spec.rng(STREAM_GAZE);
    let bounds = (-LOOK_YAW, LOOK_YAW, -LOOK_PITCH, LOOK_PITCH);
    let start = negative_start(kind, &mut rng, bounds);
    let offset = rng.random_range(0.0..0.3);
    let mut tl = Timeline::new(-offset, start, cfg);
    run_negative(kind, &mut tl, &mut rng, n as f64 / hz, bounds);
    let positions = tl.sample(hz, n);
    let window = finish_clip(spec, cfg, hz, &positions)?;
    Ok(Scanpath {
        window,
        events: tl.events,
    })
}
