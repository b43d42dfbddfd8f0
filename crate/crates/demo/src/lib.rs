//! Browser demo over `gzrd-core`: a scanpath augmentation viewer, the
//! foveated crop geometry, and a hysteresis/latency explorer. The plain
//! functions return serialisable views and are tested natively; the
//! `#[wasm_bindgen]` wrappers only turn them into JSON.

use gzrd_core::geometry::{
    add_gaze_noise, crop_geometry, flip_gaze, gaze_span, project_window, rotate_gaze, CameraModel, GazeWindow,
};
use gzrd_core::rng::mix;
use gzrd_core::sim::{
    gen_alternating, gen_nonreading_scanpath, gen_patch, gen_reading_scanpath, Activity, ChangePoint, ClipDefaults,
    GazeEvent, Label, Mode, ScenarioSpec, SimConfig,
};
use gzrd_core::stream::{
    emission_times, latency, trace_from_scores, windowed_accuracy, LatencyReport, WindowedAccuracy,
};
use gzrd_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn parse<T: DeserializeOwned>(what: &str, name: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| Error::Config(format!("unknown {what} {name:?}")))
}

/// A reading mode name (`engaged`, `skim`, ...) or a non-reading activity
/// (`daily`, `hard_negative`).
fn spec_for(kind: &str, medium: &str, direction: &str, seed: u64) -> Result<ScenarioSpec> {
    if let Ok(activity) = parse::<Activity>("activity", kind) {
        return Ok(ScenarioSpec::not_reading(activity, seed));
    }
    let mode: Mode = parse("mode", kind)?;
    Ok(ScenarioSpec::reading(
        mode,
        parse("medium", medium)?,
        parse("direction", direction)?,
        seed,
    ))
}

fn pixels(w: &GazeWindow) -> Vec<[f64; 2]> {
    w.samples().map(|s| [s[0], s[1]]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanpathView {
    pub width: u32,
    pub height: u32,
    pub hz: f64,
    pub label: Label,
    pub events: Vec<GazeEvent>,
    pub original: Vec<[f64; 2]>,
    pub augmented: Vec<[f64; 2]>,
    pub span_deg: f64,
    pub augmented_span_deg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanpathQuery {
    pub kind: String,
    pub medium: String,
    pub direction: String,
    pub seed: u64,
    pub duration_s: f64,
    pub quarter_turns: i32,
    pub flip: bool,
    /// Gaze noise as an angle at the reference depth, degrees.
    pub noise_deg: f64,
}

pub fn scanpath_view(q: &ScanpathQuery) -> Result<ScanpathView> {
    let spec = spec_for(&q.kind, &q.medium, &q.direction, q.seed)?;
    let cfg = SimConfig::default();
    let cam = CameraModel::default();
    let hz = 60.0;
    let path = match spec.label {
        Label::Reading => gen_reading_scanpath(&spec, &cfg, hz, q.duration_s)?,
        Label::NotReading => gen_nonreading_scanpath(&spec, &cfg, hz, q.duration_s)?,
    };
    let mut aug = rotate_gaze(&path.window, q.quarter_turns);
    if q.flip {
        aug = flip_gaze(&aug);
    }
    let sigma = SimConfig {
        tremor_deg: q.noise_deg,
        ..cfg
    }
    .tremor_sigma_m();
    aug = add_gaze_noise(&aug, sigma, q.seed)?;
    let original = project_window(&path.window, &cam)?;
    let augmented = project_window(&aug, &cam)?;
    Ok(ScanpathView {
        width: cam.width,
        height: cam.height,
        hz,
        label: spec.label,
        events: path.events,
        span_deg: gaze_span(&original, &cam)?,
        augmented_span_deg: gaze_span(&augmented, &cam)?,
        original: pixels(&original),
        augmented: pixels(&augmented),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CropView {
    pub fov_deg: f64,
    pub size: usize,
    pub frame: u32,
    pub area_fraction: f64,
    pub focal_px: f64,
}

pub fn crop_view(fov_deg: f64) -> Result<CropView> {
    let cam = CameraModel::default();
    let size = crop_geometry(fov_deg, &cam)?;
    let frame = cam.width as f64 * cam.height as f64;
    Ok(CropView {
        fov_deg,
        size,
        frame: cam.width,
        area_fraction: (size * size) as f64 / frame,
        focal_px: cam.focal(),
    })
}

/// RGBA bytes of the simulated crop a clip of `kind` would see.
pub fn crop_rgba(fov_deg: f64, kind: &str, medium: &str, seed: u64) -> Result<Vec<u8>> {
    let size = crop_geometry(fov_deg, &CameraModel::default())?;
    let patch = gen_patch(&spec_for(kind, medium, "ltr", seed)?, size)?;
    let c = patch.channels();
    let mut out = Vec::with_capacity(size * size * 4);
    for y in 0..patch.height() {
        for x in 0..patch.width() {
            for ch in 0..3 {
                out.push(patch.pixel(y, x, ch.min(c - 1)));
            }
            out.push(255);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HysteresisQuery {
    pub scenario: u8,
    pub total_s: f64,
    pub seed: u64,
    pub window_s: f64,
    pub stride_s: f64,
    pub hysteresis: usize,
    pub threshold: f64,
    /// Standard deviation of the score noise.
    pub noise: f64,
    pub max_match_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HysteresisView {
    pub total_s: f64,
    pub initial: Label,
    /// `(start, end, reading)` per ground-truth segment.
    pub segments: Vec<(f64, f64, bool)>,
    pub truth: Vec<ChangePoint>,
    /// `(t, score, reading)` per emission.
    pub scores: Vec<(f64, f64, bool)>,
    pub detected: Vec<ChangePoint>,
    pub latency: LatencyReport,
    pub accuracy: WindowedAccuracy,
}

/// Deterministic standard normal draw for index `k`.
fn normal(seed: u64, k: u64) -> f64 {
    let unit = |z: u64| ((mix(z) >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    let base = mix(seed ^ k.wrapping_mul(0x9E37_79B9));
    let (u, v) = (unit(base), unit(base ^ 0xA5A5));
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Runs the debounced detector over synthetic window scores: each score is
/// the fraction of its window spent reading, squeezed into `[0.15, 0.85]`,
/// plus Gaussian noise.
pub fn hysteresis_view(q: &HysteresisQuery) -> Result<HysteresisView> {
    if !(q.stride_s > 0.0 && q.window_s >= q.stride_s) || q.hysteresis == 0 || q.noise.is_nan() || q.noise < 0.0 {
        return Err(Error::Config(
            "need 0 < stride <= window, hysteresis >= 1, noise >= 0".into(),
        ));
    }
    let seq = gen_alternating(
        q.scenario,
        q.total_s,
        q.seed,
        &ClipDefaults::default(),
        &SimConfig::default(),
    )?;
    let reading_in = |a: f64, b: f64| -> f64 {
        seq.segments
            .iter()
            .filter(|s| s.kind.label() == Label::Reading)
            .map(|s| (s.end.min(b) - s.start.max(a)).max(0.0))
            .sum::<f64>()
    };
    let scores: Vec<(f64, f64)> = emission_times(q.window_s, q.stride_s, q.total_s)
        .into_iter()
        .enumerate()
        .map(|(k, t)| {
            let frac = reading_in(t - q.window_s, t) / q.window_s;
            let s = 0.15 + 0.7 * frac + q.noise * normal(q.seed, k as u64);
            (t, s.clamp(0.0, 1.0))
        })
        .collect();
    let trace = trace_from_scores(&scores, q.hysteresis, q.threshold);
    Ok(HysteresisView {
        total_s: q.total_s,
        initial: seq.initial,
        segments: seq
            .segments
            .iter()
            .map(|s| (s.start, s.end, s.kind.label() == Label::Reading))
            .collect(),
        latency: latency(&trace.changes, &seq.change_points, q.max_match_s),
        accuracy: windowed_accuracy(&trace, seq.initial, &seq.change_points, q.window_s),
        scores: trace
            .emissions
            .iter()
            .map(|e| (e.t, e.score, e.state == Label::Reading))
            .collect(),
        truth: seq.change_points,
        detected: trace.changes,
    })
}

fn to_json<T: Serialize>(r: Result<T>) -> std::result::Result<String, String> {
    r.and_then(|v| serde_json::to_string(&v).map_err(Error::from))
        .map_err(|e| e.to_string())
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn scanpath(
    kind: &str,
    medium: &str,
    direction: &str,
    seed: u32,
    duration_s: f64,
    quarter_turns: i32,
    flip: bool,
    noise_deg: f64,
) -> std::result::Result<String, String> {
    to_json(scanpath_view(&ScanpathQuery {
        kind: kind.into(),
        medium: medium.into(),
        direction: direction.into(),
        seed: seed as u64,
        duration_s,
        quarter_turns,
        flip,
        noise_deg,
    }))
}

#[wasm_bindgen]
pub fn crop(fov_deg: f64) -> std::result::Result<String, String> {
    to_json(crop_view(fov_deg))
}

#[wasm_bindgen]
pub fn crop_pixels(fov_deg: f64, kind: &str, medium: &str, seed: u32) -> std::result::Result<Vec<u8>, String> {
    crop_rgba(fov_deg, kind, medium, seed as u64).map_err(|e| e.to_string())
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn hysteresis(
    scenario: u8,
    total_s: f64,
    seed: u32,
    window_s: f64,
    stride_s: f64,
    h: u32,
    threshold: f64,
    noise: f64,
    max_match_s: f64,
) -> std::result::Result<String, String> {
    to_json(hysteresis_view(&HysteresisQuery {
        scenario,
        total_s,
        seed: seed as u64,
        window_s,
        stride_s,
        hysteresis: h as usize,
        threshold,
        noise,
        max_match_s,
    }))
}
