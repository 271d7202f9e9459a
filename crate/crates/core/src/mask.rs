//! Binary hole masks: synthetic free-form strokes, random squares, masking
//! and compositing on image tensors, and 8-bit file I/O.
//!
//! Convention everywhere: `1` marks a valid pixel, `0` marks a hole.

use std::path::Path;

use candle_core::Tensor;
use image::{DynamicImage, GrayImage, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{self, DTYPE};

/// Smallest side accepted by [`generate_stroke_mask`].
pub const MIN_STROKE_MASK_SIDE: usize = 32;
/// Rejection-sampling budget when a hole-ratio bucket is requested.
pub const BUCKET_ATTEMPTS: usize = 1000;
/// Square hole side at the 256-pixel reference resolution.
pub const REFERENCE_SQUARE: usize = 85;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    /// Builds a mask from row-major values; every value must be exactly 0 or 1.
    pub fn from_vec(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "mask data has {} values for {height}x{width}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| **v > 1) {
            return Err(Error::InvalidArgument(format!(
                "mask values must be 0 or 1, found {bad}"
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.get(y, x) == 1
    }

    fn set_hole(&mut self, y: usize, x: usize) {
        self.data[y * self.width + x] = 0;
    }

    pub fn hole_count(&self) -> usize {
        self.data.iter().filter(|v| **v == 0).count()
    }

    /// `1 − mean(mask)`.
    pub fn hole_ratio(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.hole_count() as f64 / self.data.len() as f64
    }

    /// Swaps holes and valid pixels (for masks stored with the opposite convention).
    pub fn inverted(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| 1 - v).collect(),
        }
    }

    /// Pixelwise AND: a pixel is valid only if it is valid in both masks.
    pub fn union_holes(&self, other: &Mask) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::ShapeMismatch(format!(
                "masks {}x{} and {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a & b).collect(),
        })
    }

    /// `1×1×H×W` tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        let values: Vec<f64> = self.data.iter().map(|v| *v as f64).collect();
        Ok(Tensor::from_vec(
            values,
            (1, 1, self.height, self.width),
            &nn::device(),
        )?)
    }

    /// Reads a single `1×1×H×W` (or `H×W`) tensor; values are thresholded at 0.5.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let dims = t.dims().to_vec();
        let (h, w) = match dims.as_slice() {
            [h, w] | [1, h, w] | [1, 1, h, w] => (*h, *w),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "expected a single-channel mask tensor, got {dims:?}"
                )))
            }
        };
        let values = nn::to_vec(t)?;
        Ok(Self {
            height: h,
            width: w,
            data: values.iter().map(|v| u8::from(*v >= 0.5)).collect(),
        })
    }
}

/// Stacks equally sized masks into a `B×1×H×W` tensor.
pub fn stack_masks(masks: &[Mask]) -> Result<Tensor> {
    let first = masks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no masks to stack".into()))?;
    let tensors = masks
        .iter()
        .map(|m| {
            if (m.height, m.width) != (first.height, first.width) {
                return Err(Error::ShapeMismatch("masks differ in size".into()));
            }
            m.to_tensor()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::cat(&tensors, 0)?)
}

/// Parameters of the synthetic free-form mask distribution.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MaskSpec {
    pub height: usize,
    pub width: usize,
    pub square_size: usize,
    /// Inclusive stroke-count interval.
    pub stroke_count_range: (usize, usize),
    /// Inclusive brush-width interval, pixels.
    pub stroke_width_range: (f64, f64),
    /// Inclusive polyline vertex-count interval.
    pub vertex_count_range: (usize, usize),
    pub target_ratio_bucket: Option<(f64, f64)>,
    pub seed: u64,
}

impl MaskSpec {
    /// Default recipe; brush widths and the square side scale with `min(height, width) / 256`.
    pub fn new(height: usize, width: usize, seed: u64) -> Self {
        let scale = height.min(width) as f64 / 256.0;
        Self {
            height,
            width,
            square_size: scaled_square(height.min(width)),
            stroke_count_range: (1, 20),
            stroke_width_range: ((5.0 * scale).max(1.0), (30.0 * scale).max(2.0)),
            vertex_count_range: (4, 12),
            target_ratio_bucket: None,
            seed,
        }
    }

    pub fn with_bucket(mut self, lo: f64, hi: f64) -> Self {
        self.target_ratio_bucket = Some((lo, hi));
        self
    }

    pub fn with_strokes(mut self, min: usize, max: usize) -> Self {
        self.stroke_count_range = (min, max);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.square_size > self.height.min(self.width) {
            return Err(Error::SquareTooLarge {
                size: self.square_size,
                height: self.height,
                width: self.width,
            });
        }
        let (c0, c1) = self.stroke_count_range;
        let (w0, w1) = self.stroke_width_range;
        let (v0, v1) = self.vertex_count_range;
        if c0 > c1 || w0 > w1 || v0 > v1 || v0 < 2 || w0 <= 0.0 {
            return Err(Error::Config(format!("inconsistent stroke ranges in {self:?}")));
        }
        if let Some((lo, hi)) = self.target_ratio_bucket {
            if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
                return Err(Error::Config(format!(
                    "ratio bucket [{lo}, {hi}] must lie inside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

/// The 85-pixel square of the 256-pixel recipe, rescaled to `side`.
pub fn scaled_square(side: usize) -> usize {
    ((REFERENCE_SQUARE * side) as f64 / 256.0).round() as usize
}

fn check_stroke_dims(spec: &MaskSpec) -> Result<()> {
    if spec.height < MIN_STROKE_MASK_SIDE || spec.width < MIN_STROKE_MASK_SIDE {
        return Err(Error::MaskTooSmall {
            height: spec.height,
            width: spec.width,
        });
    }
    spec.validate()
}

/// Free-form mask made of random thick polylines.
///
/// With a ratio bucket, strokes are added one at a time until the hole ratio
/// reaches the bucket floor; the attempt is kept if it is also under the
/// ceiling, otherwise a new attempt starts.
pub fn generate_stroke_mask(spec: &MaskSpec) -> Result<Mask> {
    check_stroke_dims(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample_mask(spec, &mut rng, |_| Mask::ones(spec.height, spec.width))
}

/// Strokes unioned with one random square, bucketed on the combined hole ratio.
pub fn generate_combined_mask(spec: &MaskSpec) -> Result<Mask> {
    check_stroke_dims(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    sample_mask(spec, &mut rng, |rng| {
        let mut base = Mask::ones(spec.height, spec.width);
        carve_square(&mut base, spec.square_size, rng);
        base
    })
}

fn sample_mask(spec: &MaskSpec, rng: &mut ChaCha8Rng, start: impl Fn(&mut ChaCha8Rng) -> Mask) -> Result<Mask> {
    let (min_strokes, max_strokes) = spec.stroke_count_range;
    match spec.target_ratio_bucket {
        None => {
            let mut mask = start(rng);
            let count = rng.random_range(min_strokes..=max_strokes);
            for _ in 0..count {
                draw_stroke(&mut mask, spec, rng);
            }
            Ok(mask)
        }
        Some((lo, hi)) => {
            for _ in 0..BUCKET_ATTEMPTS {
                let mut mask = start(rng);
                let mut strokes = 0;
                while strokes < max_strokes && (strokes < min_strokes || mask.hole_ratio() < lo) {
                    draw_stroke(&mut mask, spec, rng);
                    strokes += 1;
                }
                let ratio = mask.hole_ratio();
                if ratio >= lo && ratio <= hi {
                    return Ok(mask);
                }
            }
            Err(Error::BucketExhausted {
                lo,
                hi,
                attempts: BUCKET_ATTEMPTS,
            })
        }
    }
}

fn draw_stroke(mask: &mut Mask, spec: &MaskSpec, rng: &mut ChaCha8Rng) {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let (v0, v1) = spec.vertex_count_range;
    let (w0, w1) = spec.stroke_width_range;
    let vertices = rng.random_range(v0..=v1);
    let radius = rng.random_range(w0..=w1) / 2.0;
    let max_step = h.max(w) / 4.0;
    let mut prev = (rng.random_range(0.0..h), rng.random_range(0.0..w));
    for _ in 1..vertices {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let length = rng.random_range(max_step / 4.0..=max_step);
        let next = (
            (prev.0 + length * angle.sin()).clamp(0.0, h - 1.0),
            (prev.1 + length * angle.cos()).clamp(0.0, w - 1.0),
        );
        draw_segment(mask, prev, next, radius);
        prev = next;
    }
}

/// Marks every pixel centre within `radius` of the segment `a`–`b` as a hole.
fn draw_segment(mask: &mut Mask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let y0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let y1 = ((a.0.max(b.0) + radius).ceil() as usize).min(mask.height - 1);
    let x0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let x1 = ((a.1.max(b.1) + radius).ceil() as usize).min(mask.width - 1);
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let r2 = radius * radius;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let t = if len2 > 0.0 {
                (((py - a.0) * dy + (px - a.1) * dx) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (cy, cx) = (a.0 + t * dy, a.1 + t * dx);
            if (py - cy).powi(2) + (px - cx).powi(2) <= r2 {
                mask.set_hole(y, x);
            }
        }
    }
}

fn carve_square(mask: &mut Mask, size: usize, rng: &mut ChaCha8Rng) {
    if size == 0 {
        return;
    }
    let top = rng.random_range(0..=mask.height - size);
    let left = rng.random_range(0..=mask.width - size);
    for y in top..top + size {
        for x in left..left + size {
            mask.set_hole(y, x);
        }
    }
}

/// Returns a copy of `mask` with one `square_size` square of holes at a uniformly random position.
pub fn add_random_square(mask: &Mask, square_size: usize, seed: u64) -> Result<Mask> {
    if square_size > mask.height.min(mask.width) {
        return Err(Error::SquareTooLarge {
            size: square_size,
            height: mask.height,
            width: mask.width,
        });
    }
    let mut out = mask.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    carve_square(&mut out, square_size, &mut rng);
    Ok(out)
}

fn check_mask_for(image: &Tensor, mask: &Tensor, what: &str) -> Result<()> {
    let (id, md) = (image.dims(), mask.dims());
    let ok = id.len() == 4 && md.len() == 4 && md[1] == 1 && (md[0] == id[0] || md[0] == 1) && md[2..] == id[2..];
    if !ok {
        return Err(Error::ShapeMismatch(format!("{what}: image {id:?} vs mask {md:?}")));
    }
    Ok(())
}

/// `image ⊙ mask`, broadcasting the mask over channels. Holes become 0 (mid-gray).
pub fn apply_mask(image: &Tensor, mask: &Tensor) -> Result<Tensor> {
    check_mask_for(image, mask, "apply_mask")?;
    Ok(image.broadcast_mul(mask)?)
}

/// `masked·M + generated·(1−M)`: valid pixels come from `masked`, holes from `generated`.
pub fn composite(masked: &Tensor, generated: &Tensor, mask: &Tensor) -> Result<Tensor> {
    nn::check_same_shape("composite", masked, generated)?;
    check_mask_for(masked, mask, "composite")?;
    let keep = masked.broadcast_mul(mask)?;
    let hole = mask.affine(-1.0, 1.0)?;
    Ok((keep + generated.broadcast_mul(&hole)?)?)
}

/// Writes an 8-bit grayscale image: valid → 255, hole → 0.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let img = GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([mask.get(y as usize, x as usize) * 255])
    });
    img.save(path).map_err(|source| Error::ImageFile {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    load_mask_with(path, false)
}

/// Loads a single-channel 8-bit mask (`≥128` → valid); `inverted` flips the convention.
pub fn load_mask_with(path: impl AsRef<Path>, inverted: bool) -> Result<Mask> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| Error::ImageFile {
        path: path.to_path_buf(),
        source,
    })?;
    let mask = mask_from_image(&img)?;
    Ok(if inverted { mask.inverted() } else { mask })
}

/// Thresholds a decoded single-channel image at 128.
pub fn mask_from_image(img: &DynamicImage) -> Result<Mask> {
    let channels = img.color().channel_count() as usize;
    if channels != 1 {
        return Err(Error::ChannelCount {
            expected: 1,
            got: channels,
        });
    }
    let gray = img.to_luma8();
    let (w, h) = gray.dimensions();
    let data = gray.pixels().map(|p| u8::from(p.0[0] >= 128)).collect();
    Mask::from_vec(h as usize, w as usize, data)
}

pub fn mask_to_image(mask: &Mask) -> GrayImage {
    GrayImage::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([mask.get(y as usize, x as usize) * 255])
    })
}

/// Mean of a tensor's values, used by tests and reports.
pub fn tensor_mean(t: &Tensor) -> Result<f64> {
    nn::to_scalar(&t.to_dtype(DTYPE)?.mean_all()?)
}
