//! Loading a trained generator/extractor pair and moving images in and out of it.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use candle_core::Tensor;
use image::{DynamicImage, ImageFormat};

use crate::checkpoint::{self, GENERATOR_FORMAT};
use crate::dataset::{self, AttributeVector};
use crate::error::{Error, Result};
use crate::extractors::AttributeExtractor;
use crate::generator::Generator;
use crate::mask::{self, Mask};
use crate::trainer::{self, AttributeSampling};

pub const GENERATOR_FILE: &str = "generator.safetensors";
pub const EXTRACTOR_FILE: &str = "extractor.safetensors";

/// Read-only models needed at test time.
pub struct InferenceModel {
    pub generator: Generator,
    pub extractor: AttributeExtractor,
    checkpoint_id: String,
}

impl InferenceModel {
    pub fn new(generator: Generator, extractor: AttributeExtractor, checkpoint_id: impl Into<String>) -> Result<Self> {
        let (g, e) = (generator.config().resolution, extractor.config().resolution);
        if g != e {
            return Err(Error::Config(format!(
                "generator works at {g} px but extractor at {e} px"
            )));
        }
        Ok(Self {
            generator,
            extractor,
            checkpoint_id: checkpoint_id.into(),
        })
    }

    /// Loads from a snapshot directory, or from a generator file whose
    /// directory also holds the extractor.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let dir: PathBuf = if path.is_dir() {
            path.to_path_buf()
        } else {
            path.parent().map(Path::to_path_buf).unwrap_or_default()
        };
        let gen_path = if path.is_dir() {
            dir.join(GENERATOR_FILE)
        } else {
            path.to_path_buf()
        };
        let archive = checkpoint::read_archive(&gen_path, Some(GENERATOR_FORMAT))?;
        let id = archive
            .checkpoint_id()
            .ok_or_else(|| Error::checkpoint(&gen_path, "no embedded checkpoint id"))?
            .to_string();
        drop(archive);
        Self::new(
            Generator::load(&gen_path)?,
            AttributeExtractor::load(dir.join(EXTRACTOR_FILE))?,
            id,
        )
    }

    pub fn checkpoint_id(&self) -> &str {
        &self.checkpoint_id
    }

    pub fn resolution(&self) -> usize {
        self.generator.config().resolution
    }

    /// `Ext(image)` for a `1×3×R×R` image.
    pub fn extract(&self, image: &Tensor) -> Result<AttributeVector> {
        let rows = AttributeVector::rows(&self.extractor.extract(image)?)?;
        Ok(rows[0])
    }

    /// Composited completions of `image` (unmasked, `1×3×R×R`) for each attribute vector.
    pub fn complete(&self, image: &Tensor, mask: &Tensor, attrs: &[AttributeVector]) -> Result<Vec<Tensor>> {
        let masked = mask::apply_mask(image, mask)?;
        trainer::complete_with(&self.generator, &masked, mask, attrs)
    }

    /// `k` completions under Bernoulli(0.5) attributes drawn from `seed`.
    pub fn sample(&self, image: &Tensor, mask: &Tensor, k: usize, seed: u64) -> Result<Vec<(Tensor, AttributeVector)>> {
        let masked = mask::apply_mask(image, mask)?;
        trainer::sample_pluralistic(&self.generator, &masked, mask, k, seed, AttributeSampling::Bernoulli)
    }

    /// Completions along an intensity sweep of attribute `index` around `base`.
    pub fn sweep(
        &self,
        image: &Tensor,
        mask: &Tensor,
        base: &AttributeVector,
        index: usize,
        values: &[f64],
    ) -> Result<Vec<(Tensor, AttributeVector)>> {
        let masked = mask::apply_mask(image, mask)?;
        trainer::sweep_attribute(&self.generator, &masked, mask, base, index, values)
    }
}

/// Decodes an RGB(A) image file payload to a `1×3×H×W` tensor; alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<Tensor> {
    let img = image::load_from_memory(bytes)?;
    let rgb = DynamicImage::ImageRgb8(img.to_rgb8());
    Ok(dataset::normalize_image(&rgb)?.unsqueeze(0)?)
}

/// Decodes a mask payload of any colour type by thresholding its luma at 128.
pub fn decode_mask(bytes: &[u8]) -> Result<Mask> {
    let img = image::load_from_memory(bytes)?;
    mask::mask_from_image(&DynamicImage::ImageLuma8(img.to_luma8()))
}

pub fn encode_png(image: &Tensor) -> Result<Vec<u8>> {
    let rgb = dataset::denormalize(image)?;
    let mut out = Cursor::new(Vec::new());
    rgb.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn encode_mask_png(mask: &Mask) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    mask::mask_to_image(mask).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn to_base64(bytes: &[u8]) -> String {
    BASE64.encode(bytes)
}

/// Accepts plain base64 or a `data:…;base64,` URL.
pub fn from_base64(s: &str) -> Result<Vec<u8>> {
    let body = match s.split_once(";base64,") {
        Some((prefix, rest)) if prefix.starts_with("data:") => rest,
        _ => s,
    };
    BASE64
        .decode(body.trim())
        .map_err(|e| Error::InvalidArgument(format!("invalid base64 payload: {e}")))
}
