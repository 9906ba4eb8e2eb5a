//! Procedurally generated image-classification fixtures.
//!
//! Each class is a geometric texture or shape drawn with random colours,
//! phase, scale and pixel noise, so colour alone never identifies a class.
//! The cluttered variant pastes a class-bearing patch into a canvas of
//! uniform noise and records its bounding box.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::manifest::{BBox, DatasetManifest, Sample};
use super::DataError;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    HStripes,
    VStripes,
    DiagUp,
    DiagDown,
    Checker,
    Disk,
    Ring,
    Plus,
    SquareOutline,
    Dots,
    XCross,
    Triangle,
    Grid,
}

impl Pattern {
    pub const ALL: [Pattern; 13] = [
        Pattern::HStripes,
        Pattern::VStripes,
        Pattern::DiagUp,
        Pattern::DiagDown,
        Pattern::Checker,
        Pattern::Disk,
        Pattern::Ring,
        Pattern::Plus,
        Pattern::SquareOutline,
        Pattern::Dots,
        Pattern::XCross,
        Pattern::Triangle,
        Pattern::Grid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::HStripes => "hstripes",
            Pattern::VStripes => "vstripes",
            Pattern::DiagUp => "diag_up",
            Pattern::DiagDown => "diag_down",
            Pattern::Checker => "checker",
            Pattern::Disk => "disk",
            Pattern::Ring => "ring",
            Pattern::Plus => "plus",
            Pattern::SquareOutline => "square",
            Pattern::Dots => "dots",
            Pattern::XCross => "xcross",
            Pattern::Triangle => "triangle",
            Pattern::Grid => "grid",
        }
    }

    /// Whether pixel `(x, y)` of a `size × size` tile is foreground.
    fn covers(self, x: f64, y: f64, size: f64, v: &Variation) -> bool {
        let period = v.period;
        let band = |t: f64| (t + v.phase).rem_euclid(period) < period / 2.0;
        let (dx, dy) = ((x - v.cx * size) / (v.scale * size), (y - v.cy * size) / (v.scale * size));
        let r = (dx * dx + dy * dy).sqrt();
        match self {
            Pattern::HStripes => band(y),
            Pattern::VStripes => band(x),
            Pattern::DiagUp => band((x + y) / std::f64::consts::SQRT_2),
            Pattern::DiagDown => band((x - y + size) / std::f64::consts::SQRT_2),
            Pattern::Checker => band(x) ^ band(y),
            Pattern::Disk => r < 0.36,
            Pattern::Ring => (0.22..0.4).contains(&r),
            Pattern::Plus => (dx.abs() < 0.1 || dy.abs() < 0.1) && dx.abs() < 0.42 && dy.abs() < 0.42,
            Pattern::SquareOutline => (0.24..0.38).contains(&dx.abs().max(dy.abs())),
            Pattern::Dots => {
                let fx = (x + v.phase).rem_euclid(period) - period / 2.0;
                let fy = (y + v.phase).rem_euclid(period) - period / 2.0;
                fx * fx + fy * fy < (period * 0.28).powi(2)
            }
            Pattern::XCross => (dx.abs() - dy.abs()).abs() < 0.1 && dx.abs() < 0.42,
            Pattern::Triangle => dy > -0.38 && dy < 0.34 && dx.abs() < (dy + 0.38) * 0.62,
            Pattern::Grid => {
                let line = |t: f64| (t + v.phase).rem_euclid(period) < period * 0.25;
                line(x) || line(y)
            }
        }
    }
}

/// Random per-image parameters.
struct Variation {
    fg: [f64; 3],
    bg: [f64; 3],
    period: f64,
    phase: f64,
    cx: f64,
    cy: f64,
    scale: f64,
    noise: f64,
}

impl Variation {
    fn draw(rng: &mut Rng, size: u32) -> Self {
        let bright = |rng: &mut Rng| [0; 3].map(|_| rng.uniform_range(150.0, 255.0));
        let dark = |rng: &mut Rng| [0; 3].map(|_| rng.uniform_range(0.0, 90.0));
        let (fg, bg) = if rng.uniform() < 0.5 {
            (bright(rng), dark(rng))
        } else {
            (dark(rng), bright(rng))
        };
        let base = size as f64 / 6.0;
        Variation {
            fg,
            bg,
            period: rng.uniform_range(0.8 * base, 1.2 * base).max(4.0),
            phase: rng.uniform_range(0.0, size as f64),
            cx: rng.uniform_range(0.45, 0.55),
            cy: rng.uniform_range(0.45, 0.55),
            scale: rng.uniform_range(0.9, 1.1),
            noise: 16.0,
        }
    }
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// One `size × size` image of `pattern`.
pub fn render(pattern: Pattern, size: u32, rng: &mut Rng) -> RgbImage {
    let v = Variation::draw(rng, size);
    let mut img = RgbImage::new(size, size);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let base = if pattern.covers(x as f64 + 0.5, y as f64 + 0.5, size as f64, &v) { v.fg } else { v.bg };
        *px = Rgb(base.map(|c| clamp_u8(c + rng.uniform_range(-v.noise, v.noise))));
    }
    img
}

/// A `canvas × canvas` image of uniform noise with a `patch × patch`
/// rendering of `pattern` at a random position, plus that patch's box.
pub fn render_cluttered(pattern: Pattern, canvas: u32, patch: u32, rng: &mut Rng) -> (RgbImage, BBox) {
    let tile = render(pattern, patch, rng);
    let mut img = RgbImage::from_fn(canvas, canvas, |_, _| Rgb([0; 3]));
    for px in img.pixels_mut() {
        *px = Rgb([0; 3].map(|_| rng.below(256) as u8));
    }
    let x0 = rng.below((canvas - patch + 1) as usize) as u32;
    let y0 = rng.below((canvas - patch + 1) as usize) as u32;
    image::imageops::replace(&mut img, &tile, x0 as i64, y0 as i64);
    let bbox = BBox::new(x0 as i64, y0 as i64, (x0 + patch) as i64, (y0 + patch) as i64);
    (img, bbox)
}

fn save(img: &RgbImage, path: &Path) -> Result<(), DataError> {
    img.save(path).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))
}

/// Writes `per_class` plain images per pattern under `dir` plus
/// `dir/manifest.jsonl`.
pub fn write_plain(dir: &Path, patterns: &[Pattern], per_class: usize, size: u32, seed: u64) -> Result<DatasetManifest, DataError> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    let mut rng = Rng::new(seed);
    let mut samples = Vec::new();
    for i in 0..per_class {
        for (label, &p) in patterns.iter().enumerate() {
            let path = dir.join(format!("{}_{i:03}.png", p.name()));
            save(&render(p, size, &mut rng), &path)?;
            samples.push(Sample { path, label, bbox: None, split: None });
        }
    }
    finish(dir, patterns, samples, "synthetic")
}

/// Cluttered counterpart of [`write_plain`]; every sample carries its box.
pub fn write_cluttered(
    dir: &Path,
    patterns: &[Pattern],
    per_class: usize,
    canvas: u32,
    patch: u32,
    seed: u64,
) -> Result<DatasetManifest, DataError> {
    if patch > canvas {
        return Err(DataError::Param(format!("patch {patch} larger than canvas {canvas}")));
    }
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.to_path_buf(), source })?;
    let mut rng = Rng::new(seed);
    let mut samples = Vec::new();
    for i in 0..per_class {
        for (label, &p) in patterns.iter().enumerate() {
            let path = dir.join(format!("{}_{i:03}.png", p.name()));
            let (img, bbox) = render_cluttered(p, canvas, patch, &mut rng);
            save(&img, &path)?;
            samples.push(Sample { path, label, bbox: Some(bbox), split: None });
        }
    }
    finish(dir, patterns, samples, "synthetic-cluttered")
}

fn finish(dir: &Path, patterns: &[Pattern], samples: Vec<Sample>, provenance: &str) -> Result<DatasetManifest, DataError> {
    let manifest = DatasetManifest {
        classes: patterns.iter().map(|p| p.name().to_string()).collect(),
        samples,
        provenance: provenance.to_string(),
    };
    manifest.save(&dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
