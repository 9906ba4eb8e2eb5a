//! Decoding, bounding-box cropping and bilinear resizing.
//!
//! Pipeline order is fixed: crop → resize → scale to `[0, 1]` → subtract
//! per-channel means.

use std::path::Path;

use image::RgbImage;

use super::manifest::BBox;
use super::DataError;
use crate::tensor::{Shape, Tensor};

/// Decodes PNG or JPEG bytes to 8-bit RGB.
pub fn decode(bytes: &[u8]) -> Result<RgbImage, DataError> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| DataError::Format(e.to_string()))
}

/// Returns exactly the pixels in `[x1, x2) × [y1, y2)` after clamping the
/// box to the image.
pub fn bbox_crop(img: &RgbImage, bbox: &BBox) -> Result<RgbImage, DataError> {
    let b = bbox.clamp(img.width(), img.height()).ok_or_else(|| {
        DataError::EmptyBox(format!(
            "box [{}, {}, {}, {}] has no area inside {}x{} image",
            bbox.x1,
            bbox.y1,
            bbox.x2,
            bbox.y2,
            img.width(),
            img.height()
        ))
    })?;
    Ok(image::imageops::crop_imm(img, b.x1 as u32, b.y1 as u32, b.width() as u32, b.height() as u32)
        .to_image())
}

/// Source coordinate and blend weight for destination index `i`, using
/// half-pixel centres (corners not aligned) and edge clamping.
fn taps(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let pos = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).max(0.0);
    let lo = (pos.floor() as usize).min(src - 1);
    let hi = (lo + 1).min(src - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resize to `height × width`, returning planar RGB in `[0, 1]`.
pub fn resize_bilinear(img: &RgbImage, height: usize, width: usize) -> Vec<f32> {
    let (sw, sh) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let px = |x: usize, y: usize, c: usize| raw[(y * sw + x) * 3 + c] as f64 / 255.0;
    let cols: Vec<_> = (0..width).map(|x| taps(x, sw, width)).collect();
    let mut out = vec![0.0f32; 3 * height * width];
    for y in 0..height {
        let (y0, y1, fy) = taps(y, sh, height);
        for (x, &(x0, x1, fx)) in cols.iter().enumerate() {
            for c in 0..3 {
                let top = px(x0, y0, c) * (1.0 - fx) + px(x1, y0, c) * fx;
                let bottom = px(x0, y1, c) * (1.0 - fx) + px(x1, y1, c) * fx;
                out[(c * height + y) * width + x] = (top * (1.0 - fy) + bottom * fy) as f32;
            }
        }
    }
    out
}

/// Target size and channel means of the network input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preprocess {
    pub height: usize,
    pub width: usize,
    pub mean: [f32; 3],
}

impl Preprocess {
    pub fn new(height: usize, width: usize, mean: [f32; 3]) -> Self {
        Preprocess { height, width, mean }
    }

    /// Preprocessing matching a network's input size and stored means.
    pub fn for_spec(spec: &crate::net::NetworkSpec) -> Self {
        Preprocess { height: spec.input[2], width: spec.input[3], mean: spec.mean }
    }

    pub fn item_len(&self) -> usize {
        3 * self.height * self.width
    }

    /// Crop (optional) → resize → scale; no mean subtraction.
    pub fn scaled(&self, img: &RgbImage, bbox: Option<&BBox>) -> Result<Vec<f32>, DataError> {
        Ok(match bbox {
            Some(b) => resize_bilinear(&bbox_crop(img, b)?, self.height, self.width),
            None => resize_bilinear(img, self.height, self.width),
        })
    }

    /// Full pipeline on a decoded image, as planar `3 × h × w` values.
    pub fn apply(&self, img: &RgbImage, bbox: Option<&BBox>) -> Result<Vec<f32>, DataError> {
        let mut v = self.scaled(img, bbox)?;
        let plane = self.height * self.width;
        for (c, chunk) in v.chunks_mut(plane).enumerate() {
            for x in chunk {
                *x -= self.mean[c];
            }
        }
        Ok(v)
    }

    pub fn load(&self, path: &Path, bbox: Option<&BBox>) -> Result<Vec<f32>, DataError> {
        let bytes = std::fs::read(path).map_err(|source| DataError::Io { path: path.to_path_buf(), source })?;
        self.apply(&decode(&bytes)?, bbox)
    }

    pub fn to_tensor(&self, data: Vec<f32>) -> Tensor<f32> {
        let shape = Shape::new(1, 3, self.height, self.width).expect("preprocess dims are positive");
        Tensor::from_vec(shape, data).expect("preprocess length matches")
    }
}

/// Decode, bilinearly resize to `target`, scale to `[0, 1]` and subtract
/// `mean`; returns a `1×3×h×w` tensor.
pub fn decode_resize(bytes: &[u8], target: (usize, usize), mean: [f32; 3]) -> Result<Tensor<f32>, DataError> {
    let p = Preprocess::new(target.0, target.1, mean);
    Ok(p.to_tensor(p.apply(&decode(bytes)?, None)?))
}
