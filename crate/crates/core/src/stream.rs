//! Sliding-window detection over continuous streams, hysteresis on the
//! per-window decisions, and latency and accuracy against annotated
//! change points.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::eval::Confusion;
use crate::geometry::{GazeRepr, GazeWindow};
use crate::model::{ModalitySet, Model, ModelInput};
use crate::sim::{AlternatingSequence, ChangePoint, ImuWindow, Label, StreamCanvas, IMU_DIM};
use crate::tensor::Scalar;

/// Slack for comparing sample times with emission times.
const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Window length in seconds.
    pub window_s: f64,
    pub stride_s: f64,
    pub threshold: f64,
    /// Consecutive disagreeing windows needed to switch state.
    pub hysteresis: usize,
    /// Longest delay at which a detection still counts for a change.
    pub max_match_s: f64,
    pub modalities: ModalitySet,
}

impl DetectorConfig {
    pub fn new(window_s: f64) -> Self {
        DetectorConfig {
            window_s,
            stride_s: 0.1,
            threshold: 0.5,
            hysteresis: 3,
            max_match_s: 5.0,
            modalities: ModalitySet::ALL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.window_s > 0.0 && self.stride_s > 0.0) {
            return config_err("window and stride must be positive");
        }
        if self.stride_s > self.window_s {
            return config_err(format!(
                "stride {} s exceeds the {} s window",
                self.stride_s, self.window_s
            ));
        }
        if self.hysteresis == 0 {
            return config_err("hysteresis must be at least 1");
        }
        if !(self.max_match_s > 0.0) {
            return config_err("match window must be positive");
        }
        if self.modalities.is_empty() {
            return Err(Error::NoModality);
        }
        Ok(())
    }
}

/// One scored window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emission {
    pub t: f64,
    pub score: f64,
    /// State after the hysteresis update.
    pub state: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionTrace {
    pub emissions: Vec<Emission>,
    pub changes: Vec<ChangePoint>,
}

impl DetectionTrace {
    /// `t,score,state` rows; state 1 is reading.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "t,score,state")?;
        for e in &self.emissions {
            writeln!(w, "{},{},{}", e.t, e.score, (e.state == Label::Reading) as u8)?;
        }
        Ok(())
    }
}

fn label_of(reading: bool) -> Label {
    if reading {
        Label::Reading
    } else {
        Label::NotReading
    }
}

/// Debounces per-window decisions: the state flips once `h` consecutive
/// windows disagree with it. The first window sets the initial state.
#[derive(Clone, Debug)]
pub struct Hysteresis {
    h: usize,
    threshold: f64,
    state: Option<Label>,
    run: usize,
}

impl Hysteresis {
    pub fn new(h: usize, threshold: f64) -> Self {
        Hysteresis {
            h: h.max(1),
            threshold,
            state: None,
            run: 0,
        }
    }

    /// Feeds one score; returns the new state and whether it changed.
    pub fn update(&mut self, score: f64) -> (Label, bool) {
        let raw = label_of(score >= self.threshold);
        match self.state {
            None => {
                self.state = Some(raw);
                (raw, false)
            }
            Some(s) if s == raw => {
                self.run = 0;
                (s, false)
            }
            Some(s) => {
                self.run += 1;
                if self.run >= self.h {
                    self.run = 0;
                    self.state = Some(raw);
                    (raw, true)
                } else {
                    (s, false)
                }
            }
        }
    }
}

/// Runs the hysteresis over a precomputed `(t, score)` series.
pub fn trace_from_scores(scores: &[(f64, f64)], hysteresis: usize, threshold: f64) -> DetectionTrace {
    let mut hy = Hysteresis::new(hysteresis, threshold);
    let mut trace = DetectionTrace {
        emissions: Vec::with_capacity(scores.len()),
        changes: Vec::new(),
    };
    for &(t, score) in scores {
        let (state, changed) = hy.update(score);
        if changed {
            trace.changes.push(ChangePoint { t, state });
        }
        trace.emissions.push(Emission { t, score, state });
    }
    trace
}

/// Emission times `k * stride` from the first full window up to `end`.
pub fn emission_times(window_s: f64, stride_s: f64, end: f64) -> Vec<f64> {
    let first = ((window_s - TIME_EPS) / stride_s).ceil().max(0.0) as u64;
    (first..)
        .map(|k| k as f64 * stride_s)
        .take_while(|&t| t <= end + TIME_EPS)
        .collect()
}

fn sample_times(n: usize, hz: f64, explicit: Option<&Vec<f64>>) -> Vec<f64> {
    match explicit {
        Some(t) => t.clone(),
        None => (0..n).map(|i| i as f64 / hz).collect(),
    }
}

/// Rejects timestamps that go backwards or skip at least one sample.
pub fn check_gaps(stream: &'static str, times: &[f64], hz: f64) -> Result<()> {
    let limit = 1.5 / hz;
    for w in times.windows(2) {
        if !(w[1] > w[0]) || w[1] - w[0] > limit {
            return Err(Error::StreamGap {
                stream,
                t: w[1],
                prev: w[0],
            });
        }
    }
    Ok(())
}

/// Number of stream samples in a window of `window_s` seconds.
fn window_len(hz: f64, window_s: f64) -> usize {
    (hz * window_s).round() as usize
}

/// Samples of the window ending at `t`: the last `n` with time <= t.
fn window_range(times: &[f64], n: usize, t: f64) -> Option<(usize, usize)> {
    let end = times.partition_point(|&s| s <= t + TIME_EPS);
    (end >= n).then(|| (end - n, end))
}

/// Model input for the window ending at `t`, cut directly from the whole
/// recording.
pub fn offline_window<T: Scalar>(
    model: &Model<T>,
    seq: &AlternatingSequence,
    cfg: &DetectorConfig,
    t: f64,
) -> Result<ModelInput<T>> {
    let gt = sample_times(seq.gaze.len(), seq.gaze.hz(), seq.gaze_t.as_ref());
    let it = sample_times(seq.imu.len(), seq.imu.hz(), seq.imu_t.as_ref());
    let ng = window_len(seq.gaze.hz(), cfg.window_s);
    let ni = window_len(seq.imu.hz(), cfg.window_s);
    let short = || Error::Data(format!("stream does not cover a {} s window at t={t}", cfg.window_s));
    let (g0, g1) = window_range(&gt, ng, t).ok_or_else(short)?;
    let (i0, i1) = window_range(&it, ni, t).ok_or_else(short)?;
    let gaze = seq.gaze.slice(g0, g1)?;
    let imu = seq.imu.slice(i0, i1)?;
    let last = gaze.sample(gaze.len() - 1);
    assemble(model, cfg, &seq.canvas, gaze.clone(), imu, [last[0], last[1], last[2]])
}

fn assemble<T: Scalar>(
    model: &Model<T>,
    cfg: &DetectorConfig,
    canvas: &StreamCanvas,
    gaze: GazeWindow,
    imu: ImuWindow,
    point: [f64; 3],
) -> Result<ModelInput<T>> {
    let keep = cfg.modalities.intersect(model.config().modalities());
    if keep.is_empty() {
        return Err(Error::NoModality);
    }
    let rgb = match model.config().rgb {
        Some(r) if keep.rgb => Some(canvas.patch_at(point, r.size, r.channels)?),
        _ => None,
    };
    ModelInput::build(
        model.config(),
        keep.gaze.then_some(&gaze),
        rgb.as_ref(),
        keep.imu.then_some(&imu),
    )
}

/// Incremental detector: samples are pushed as they arrive and windows
/// are assembled from bounded buffers.
pub struct StreamingDetector<'a, T> {
    model: &'a Model<T>,
    cfg: DetectorConfig,
    canvas: &'a StreamCanvas,
    gaze_hz: f64,
    imu_hz: f64,
    gaze: VecDeque<(f64, [f64; 3])>,
    imu: VecDeque<(f64, [f64; IMU_DIM])>,
    ng: usize,
    ni: usize,
    hysteresis: Hysteresis,
    trace: DetectionTrace,
}

impl<'a, T: Scalar> StreamingDetector<'a, T> {
    pub fn new(
        model: &'a Model<T>,
        cfg: DetectorConfig,
        canvas: &'a StreamCanvas,
        gaze_hz: f64,
        imu_hz: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(StreamingDetector {
            model,
            cfg,
            canvas,
            gaze_hz,
            imu_hz,
            gaze: VecDeque::new(),
            imu: VecDeque::new(),
            ng: window_len(gaze_hz, cfg.window_s),
            ni: window_len(imu_hz, cfg.window_s),
            hysteresis: Hysteresis::new(cfg.hysteresis, cfg.threshold),
            trace: DetectionTrace {
                emissions: Vec::new(),
                changes: Vec::new(),
            },
        })
    }

    pub fn push_gaze(&mut self, t: f64, s: [f64; 3]) -> Result<()> {
        if let Some(&(prev, _)) = self.gaze.back() {
            check_gaps("gaze", &[prev, t], self.gaze_hz)?;
        }
        self.gaze.push_back((t, s));
        if self.gaze.len() > self.ng {
            self.gaze.pop_front();
        }
        Ok(())
    }

    pub fn push_imu(&mut self, t: f64, s: [f64; IMU_DIM]) -> Result<()> {
        if let Some(&(prev, _)) = self.imu.back() {
            check_gaps("imu", &[prev, t], self.imu_hz)?;
        }
        self.imu.push_back((t, s));
        if self.imu.len() > self.ni {
            self.imu.pop_front();
        }
        Ok(())
    }

    /// Scores the buffered window; `None` until both buffers are full.
    pub fn emit(&mut self, t: f64) -> Result<Option<Emission>> {
        if self.gaze.len() < self.ng || self.imu.len() < self.ni {
            return Ok(None);
        }
        let gdata: Vec<f64> = self.gaze.iter().flat_map(|(_, s)| *s).collect();
        let idata: Vec<f64> = self.imu.iter().flat_map(|(_, s)| *s).collect();
        let gaze = GazeWindow::new(self.gaze_hz, GazeRepr::Point3d, gdata)?;
        let imu = ImuWindow::new(self.imu_hz, idata)?;
        let point = self.gaze.back().expect("full buffer").1;
        let input = assemble(self.model, &self.cfg, self.canvas, gaze, imu, point)?;
        let score = self.model.predict(&input)?.score();
        let (state, changed) = self.hysteresis.update(score);
        if changed {
            self.trace.changes.push(ChangePoint { t, state });
        }
        let e = Emission { t, score, state };
        self.trace.emissions.push(e);
        Ok(Some(e))
    }

    pub fn finish(self) -> DetectionTrace {
        self.trace
    }
}

fn check_sequence(seq: &AlternatingSequence, cfg: &DetectorConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    if seq.gaze.repr() != GazeRepr::Point3d {
        return Err(Error::Data("stream gaze must be point3d".into()));
    }
    let gt = sample_times(seq.gaze.len(), seq.gaze.hz(), seq.gaze_t.as_ref());
    let it = sample_times(seq.imu.len(), seq.imu.hz(), seq.imu_t.as_ref());
    check_gaps("gaze", &gt, seq.gaze.hz())?;
    check_gaps("imu", &it, seq.imu.hz())?;
    let cover = gt.last().copied().unwrap_or(0.0).min(it.last().copied().unwrap_or(0.0));
    if cover + TIME_EPS < cfg.window_s {
        return Err(Error::Data(format!(
            "streams cover {cover:.3} s, less than the {} s window",
            cfg.window_s
        )));
    }
    Ok((gt, it))
}

/// Replays a recording sample by sample through a [`StreamingDetector`].
pub fn detect<T: Scalar>(model: &Model<T>, seq: &AlternatingSequence, cfg: &DetectorConfig) -> Result<DetectionTrace> {
    cfg.validate()?;
    let (gt, it) = check_sequence(seq, cfg)?;
    let end = gt.last().copied().unwrap_or(0.0).min(it.last().copied().unwrap_or(0.0));
    let mut det = StreamingDetector::new(model, *cfg, &seq.canvas, seq.gaze.hz(), seq.imu.hz())?;
    let (mut gi, mut ii) = (0, 0);
    for t in emission_times(cfg.window_s, cfg.stride_s, end) {
        while gi < gt.len() && gt[gi] <= t + TIME_EPS {
            let s = seq.gaze.sample(gi);
            det.push_gaze(gt[gi], [s[0], s[1], s[2]])?;
            gi += 1;
        }
        while ii < it.len() && it[ii] <= t + TIME_EPS {
            let mut s = [0.0; IMU_DIM];
            s.copy_from_slice(seq.imu.sample(ii));
            det.push_imu(it[ii], s)?;
            ii += 1;
        }
        det.emit(t)?;
    }
    Ok(det.finish())
}

/// Same windows as [`detect`], cut from the full arrays.
pub fn detect_offline<T: Scalar>(
    model: &Model<T>,
    seq: &AlternatingSequence,
    cfg: &DetectorConfig,
) -> Result<DetectionTrace> {
    cfg.validate()?;
    let (gt, it) = check_sequence(seq, cfg)?;
    let end = gt.last().copied().unwrap_or(0.0).min(it.last().copied().unwrap_or(0.0));
    let mut scores = Vec::new();
    for t in emission_times(cfg.window_s, cfg.stride_s, end) {
        let input = offline_window(model, seq, cfg, t)?;
        scores.push((t, model.predict(&input)?.score()));
    }
    Ok(trace_from_scores(&scores, cfg.hysteresis, cfg.threshold))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedChange {
    pub truth_t: f64,
    pub detected_t: f64,
    pub state: Label,
    pub latency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub matched: Vec<MatchedChange>,
    pub misses: Vec<ChangePoint>,
    /// Mean over matched changes only.
    pub mean_latency: Option<f64>,
}

/// Pairs every true change with the first unused detected change of the
/// same polarity in `[t, t + max_match]`.
pub fn latency(detected: &[ChangePoint], truth: &[ChangePoint], max_match: f64) -> LatencyReport {
    let mut used = vec![false; detected.len()];
    let mut matched = Vec::new();
    let mut misses = Vec::new();
    for c in truth {
        let hit = detected.iter().enumerate().find(|(i, d)| {
            !used[*i] && d.state == c.state && d.t >= c.t - TIME_EPS && d.t <= c.t + max_match + TIME_EPS
        });
        match hit {
            Some((i, d)) => {
                used[i] = true;
                matched.push(MatchedChange {
                    truth_t: c.t,
                    detected_t: d.t,
                    state: c.state,
                    latency: d.t - c.t,
                });
            }
            None => misses.push(*c),
        }
    }
    let mean_latency =
        (!matched.is_empty()).then(|| matched.iter().map(|m| m.latency).sum::<f64>() / matched.len() as f64);
    LatencyReport {
        matched,
        misses,
        mean_latency,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedAccuracy {
    pub included: usize,
    /// Emissions whose window contains a true change.
    pub excluded: usize,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub f1: f64,
}

/// Scores each emission's state against the true state at its time,
/// skipping windows `(t - window, t]` that contain a change.
pub fn windowed_accuracy(
    trace: &DetectionTrace,
    initial: Label,
    truth: &[ChangePoint],
    window_s: f64,
) -> WindowedAccuracy {
    let mut c = Confusion::default();
    let mut excluded = 0;
    for e in &trace.emissions {
        if truth.iter().any(|ch| ch.t > e.t - window_s && ch.t <= e.t) {
            excluded += 1;
            continue;
        }
        let gt = truth.iter().rev().find(|ch| ch.t <= e.t).map_or(initial, |ch| ch.state);
        match (e.state == Label::Reading, gt == Label::Reading) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    WindowedAccuracy {
        included: c.total(),
        excluded,
        confusion: c,
        accuracy: c.accuracy(),
        f1: c.f1(),
    }
}

/// Everything `detect` reports for one recording.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub scenario_id: u8,
    pub config: DetectorConfig,
    pub emissions: usize,
    pub detected: Vec<ChangePoint>,
    pub truth: Vec<ChangePoint>,
    pub latency: LatencyReport,
    pub accuracy: WindowedAccuracy,
}

pub fn stream_report(seq: &AlternatingSequence, trace: &DetectionTrace, cfg: &DetectorConfig) -> StreamReport {
    StreamReport {
        scenario_id: seq.scenario_id,
        config: *cfg,
        emissions: trace.emissions.len(),
        detected: trace.changes.clone(),
        truth: seq.change_points.clone(),
        latency: latency(&trace.changes, &seq.change_points, cfg.max_match_s),
        accuracy: windowed_accuracy(trace, seq.initial_state(), &seq.change_points, cfg.window_s),
    }
}
