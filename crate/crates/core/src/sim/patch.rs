use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Activity, Direction, Label, Medium, ScenarioSpec};
use crate::error::{shape_err, Result};
use crate::rng::Rng;

const STREAM_PATCH: u64 = 3;

/// Row-major `h × w × c` bytes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RgbPatch {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<u8>,
}

impl RgbPatch {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<u8>) -> Result<Self> {
        if h == 0 || w == 0 || c == 0 {
            return shape_err(format!("patch {h}x{w}x{c} has an empty dimension"));
        }
        if data.len() != h * w * c {
            return shape_err(format!(
                "patch {h}x{w}x{c} needs {} bytes, got {}",
                h * w * c,
                data.len()
            ));
        }
        Ok(RgbPatch { h, w, c, data })
    }

    /// Replicates a single-channel image into `c` channels.
    pub fn from_gray(h: usize, w: usize, c: usize, gray: &[u8]) -> Result<Self> {
        if gray.len() != h * w {
            return shape_err(format!("gray image needs {} bytes, got {}", h * w, gray.len()));
        }
        let data = gray.iter().flat_map(|&v| std::iter::repeat_n(v, c)).collect();
        RgbPatch::new(h, w, c, data)
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize, ch: usize) -> u8 {
        self.data[(y * self.w + x) * self.c + ch]
    }

    /// Channel-first floats in [-1, 1], the model's input layout.
    pub fn to_chw(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.data.len()];
        for y in 0..self.h {
            for x in 0..self.w {
                for ch in 0..self.c {
                    out[(ch * self.h + y) * self.w + x] = self.pixel(y, x, ch) as f64 / 127.5 - 1.0;
                }
            }
        }
        out
    }
}

fn noise(rng: &mut Rng, amp: f64) -> f64 {
    rng.random_range(-amp..=amp)
}

/// Lines of word blocks on a plain background. `pitch` is the line
/// spacing in pixels; vertical text runs in columns instead of rows.
pub fn text_texture(size: usize, pitch: f64, ink: u8, bg: u8, vertical: bool, rng: &mut Rng) -> Vec<u8> {
    let mut img = vec![0u8; size * size];
    let char_w = 0.5 * pitch;
    let glyph_h = 0.45 * pitch;
    let phase = rng.random_range(0.0..pitch);
    let n_lines = (size as f64 / pitch).ceil() as usize + 1;
    // Ink mask in (along, across) coordinates.
    let mut mask = vec![false; size * size];
    for line in 0..n_lines {
        let top = phase + line as f64 * pitch - pitch;
        let mut x = -rng.random_range(0.0..4.0 * char_w);
        while x < size as f64 {
            let word = rng.random_range(2..=9);
            for _ in 0..word {
                let strokes = rng.random_range(1..=2);
                for s in 0..strokes {
                    let sx = x + (s as f64 + 0.5) * char_w / strokes as f64;
                    let asc = if rng.random_bool(0.3) { 0.25 * pitch } else { 0.0 };
                    let (a0, a1) = (sx - 0.12 * char_w, sx + 0.12 * char_w + 0.6);
                    let (c0, c1) = (top - asc, top + glyph_h);
                    for a in a0.max(0.0).floor() as usize..(a1.min(size as f64).ceil() as usize) {
                        for c in c0.max(0.0).floor() as usize..(c1.min(size as f64).ceil().max(0.0) as usize) {
                            mask[c * size + a] = true;
                        }
                    }
                }
                let bar = top + 0.5 * glyph_h;
                if bar >= 0.0 && (bar as usize) < size {
                    let a0 = x.max(0.0) as usize;
                    let a1 = (x + char_w).clamp(0.0, size as f64) as usize;
                    for a in a0..a1 {
                        mask[bar as usize * size + a] = true;
                    }
                }
                x += char_w;
            }
            x += char_w * rng.random_range(0.8..1.4);
        }
    }
    for r in 0..size {
        for col in 0..size {
            let on = if vertical {
                mask[col * size + r]
            } else {
                mask[r * size + col]
            };
            let base = if on { ink } else { bg } as f64;
            img[r * size + col] = (base + noise(rng, 6.0)).clamp(0.0, 255.0) as u8;
        }
    }
    img
}

/// Smooth low-contrast gradient with a few soft blobs.
pub fn scene_texture(size: usize, rng: &mut Rng) -> Vec<u8> {
    let base = rng.random_range(90.0..170.0);
    let (gx, gy) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
    let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.random_range(3..=6))
        .map(|_| {
            (
                rng.random_range(0.0..size as f64),
                rng.random_range(0.0..size as f64),
                rng.random_range(0.15..0.5) * size as f64,
                rng.random_range(-25.0..25.0),
            )
        })
        .collect();
    let mut img = vec![0u8; size * size];
    let s = size as f64;
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let mut v = base + gx * (fx / s - 0.5) + gy * (fy / s - 0.5);
            for &(bx, by, r, a) in &blobs {
                let d2 = ((fx - bx).powi(2) + (fy - by).powi(2)) / (r * r);
                v += a * (-d2).exp();
            }
            img[y * size + x] = (v + noise(rng, 3.0)).clamp(0.0, 255.0) as u8;
        }
    }
    img
}

/// Line pitch (pixels) and ink/background levels for a medium.
fn text_style(medium: Medium, rng: &mut Rng) -> (f64, u8, u8) {
    let pitch = match medium {
        Medium::Digital => rng.random_range(9.0..11.0),
        Medium::Objects => rng.random_range(17.0..22.0),
        _ => rng.random_range(13.0..17.0),
    };
    let (mut ink, mut bg) = (rng.random_range(20..=70), rng.random_range(190..=240));
    if medium == Medium::Digital && rng.random_bool(0.3) {
        std::mem::swap(&mut ink, &mut bg);
    }
    (pitch, ink, bg)
}

/// Gray texture for a spec: text for reading and hard negatives, scene
/// otherwise. Objects carry their text on a label over a scene.
pub(super) fn gray_for(spec: &ScenarioSpec, size: usize, rng: &mut Rng) -> Vec<u8> {
    let medium = match (spec.label, spec.activity) {
        (Label::Reading, _) => spec.medium,
        (_, Some(Activity::HardNegative)) => Medium::TEXT[rng.random_range(0..3)],
        _ => return scene_texture(size, rng),
    };
    let (pitch, ink, bg) = text_style(medium, rng);
    let vertical = spec.direction == Direction::Vertical;
    let text = text_texture(size, pitch, ink, bg, vertical, rng);
    if medium != Medium::Objects {
        return text;
    }
    let mut img = scene_texture(size, rng);
    let frac = rng.random_range(0.55..0.8);
    let side = (frac * size as f64) as usize;
    let y0 = rng.random_range(0..=size - side);
    let x0 = rng.random_range(0..=size - side);
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            img[y * size + x] = text[y * size + x];
        }
    }
    img
}

/// Foveated crop content for a clip, square `size` pixels, three channels.
pub fn gen_patch(spec: &ScenarioSpec, size: usize) -> Result<RgbPatch> {
    spec.validate()?;
    if size == 0 {
        return shape_err("patch size must be positive");
    }
    let mut rng = spec.rng(STREAM_PATCH);
    let gray = gray_for(spec, size, &mut rng);
    RgbPatch::from_gray(size, size, 3, &gray)
}

/// Square crop of `size` pixels centred on `center` (x, y) in `canvas`
/// pixels; the area outside the canvas reads as mid-gray. The canvas is
/// single-channel and the crop replicates it into `channels`.
pub fn crop_patch(canvas: &RgbPatch, center: [f64; 2], size: usize, channels: usize) -> Result<RgbPatch> {
    if size == 0 || channels == 0 {
        return shape_err("crop size and channel count must be positive");
    }
    let x0 = (center[0] - size as f64 / 2.0).round();
    let y0 = (center[1] - size as f64 / 2.0).round();
    let (cw, ch) = (canvas.width() as f64, canvas.height() as f64);
    let mut gray = vec![128u8; size * size];
    if x0.is_finite() && y0.is_finite() {
        for y in 0..size {
            let sy = y0 + y as f64;
            if sy < 0.0 || sy >= ch {
                continue;
            }
            for x in 0..size {
                let sx = x0 + x as f64;
                if sx >= 0.0 && sx < cw {
                    gray[y * size + x] = canvas.pixel(sy as usize, sx as usize, 0);
                }
            }
        }
    }
    RgbPatch::from_gray(size, size, channels, &gray)
}
