//! Attribute-labelled face corpora: loading, pixel normalization, splits and batching.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, DTYPE};

/// Canonical attribute order used by checkpoints, batches and the service API.
pub const ATTRIBUTE_NAMES: [&str; 8] = [
    "Bushy_Eyebrows",
    "Mouth_Slightly_Open",
    "Big_Lips",
    "Male",
    "Mustache",
    "Smiling",
    "Wearing_Lipstick",
    "No_Beard",
];

pub const ATTRIBUTE_DIM: usize = ATTRIBUTE_NAMES.len();

/// Looks an attribute up by name, ignoring case and treating `-`/` ` like `_`.
pub fn attribute_index(name: &str) -> Option<usize> {
    let wanted = name.to_ascii_lowercase().replace(['-', ' '], "_");
    ATTRIBUTE_NAMES.iter().position(|n| n.to_ascii_lowercase() == wanted)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributeVector(pub [f64; ATTRIBUTE_DIM]);

impl AttributeVector {
    pub fn zeros() -> Self {
        Self([0.0; ATTRIBUTE_DIM])
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; ATTRIBUTE_DIM] = values.try_into().map_err(|_| {
            Error::ShapeMismatch(format!(
                "attribute vector needs {ATTRIBUTE_DIM} values, got {}",
                values.len()
            ))
        })?;
        Ok(Self(arr))
    }

    pub fn values(&self) -> &[f64; ATTRIBUTE_DIM] {
        &self.0
    }

    /// `1×8` tensor.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::from_vec(self.0.to_vec(), (1, ATTRIBUTE_DIM), &nn::device())?)
    }

    /// Splits a `B×8` tensor into per-row vectors.
    pub fn rows(t: &Tensor) -> Result<Vec<Self>> {
        let (_, d) = t.dims2()?;
        if d != ATTRIBUTE_DIM {
            return Err(Error::ShapeMismatch(format!(
                "attribute tensor has width {d}, expected {ATTRIBUTE_DIM}"
            )));
        }
        t.to_dtype(DTYPE)?
            .to_vec2::<f64>()?
            .into_iter()
            .map(|r| Self::from_slice(&r))
            .collect()
    }

    pub fn stack(vectors: &[Self]) -> Result<Tensor> {
        let flat: Vec<f64> = vectors.iter().flat_map(|v| v.0).collect();
        Ok(Tensor::from_vec(flat, (vectors.len(), ATTRIBUTE_DIM), &nn::device())?)
    }
}

/// Maps `[0, 255]` linearly onto `[−1, 1]`; input is row-major `H×W×C`, output `C×H×W`.
pub fn normalize(pixels: &[u8], height: usize, width: usize, channels: usize) -> Result<Tensor> {
    if channels != 3 {
        return Err(Error::ChannelCount {
            expected: 3,
            got: channels,
        });
    }
    if pixels.len() != height * width * channels {
        return Err(Error::ShapeMismatch(format!(
            "{} bytes for a {height}x{width}x{channels} image",
            pixels.len()
        )));
    }
    let mut planar = vec![0.0f64; pixels.len()];
    let plane = height * width;
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * plane + i] = px[c] as f64 * 2.0 / 255.0 - 1.0;
        }
    }
    Ok(Tensor::from_vec(planar, (3, height, width), &nn::device())?)
}

pub fn normalize_image(img: &image::DynamicImage) -> Result<Tensor> {
    let channels = img.color().channel_count() as usize;
    if channels != 3 {
        return Err(Error::ChannelCount {
            expected: 3,
            got: channels,
        });
    }
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    normalize(rgb.as_raw(), h as usize, w as usize, 3)
}

/// Inverse of [`normalize`] for a `3×H×W` (or `1×3×H×W`) tensor; values are clamped and rounded.
pub fn denormalize(t: &Tensor) -> Result<image::RgbImage> {
    let t = match t.rank() {
        4 if t.dims()[0] == 1 => t.squeeze(0)?,
        3 => t.clone(),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "expected a single 3×H×W image, got {:?}",
                t.dims()
            )))
        }
    };
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(Error::ChannelCount { expected: 3, got: c });
    }
    let values = nn::to_vec(&t)?;
    let plane = h * w;
    let mut raw = vec![0u8; plane * 3];
    for i in 0..plane {
        for ch in 0..3 {
            let v = (values[ch * plane + i] + 1.0) * 255.0 / 2.0;
            raw[i * 3 + ch] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(image::RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized to image"))
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    /// `3×R×R`, values in `[−1, 1]`.
    pub image: Tensor,
    pub attributes: AttributeVector,
}

/// Read-only, id-ordered collection of samples at one resolution.
#[derive(Debug, Clone)]
pub struct Corpus {
    resolution: usize,
    samples: Vec<Sample>,
}

impl Corpus {
    pub fn from_samples(resolution: usize, mut samples: Vec<Sample>) -> Result<Self> {
        for s in &samples {
            if s.image.dims() != [3, resolution, resolution] {
                return Err(Error::ShapeMismatch(format!(
                    "sample `{}` is {:?}, corpus resolution is {resolution}",
                    s.id,
                    s.image.dims()
                )));
            }
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(Self { resolution, samples })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn get(&self, index: usize) -> &Sample {
        &self.samples[index]
    }

    /// Stacks the given samples into a batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let images = indices
            .iter()
            .map(|i| self.samples[*i].image.unsqueeze(0))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let attrs: Vec<AttributeVector> = indices.iter().map(|i| self.samples[*i].attributes).collect();
        Ok(Batch {
            images: Tensor::cat(&images, 0)?,
            attributes: AttributeVector::stack(&attrs)?,
            ids: indices.iter().map(|i| self.samples[*i].id.clone()).collect(),
        })
    }
}

/// Parses the label CSV (`id,<attribute names…>`) into canonical-order vectors.
pub fn read_labels(label_file: impl AsRef<Path>) -> Result<BTreeMap<String, AttributeVector>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(label_file.as_ref())?;
    let headers = reader.headers()?.clone();
    let mut columns = [usize::MAX; ATTRIBUTE_DIM];
    let mut id_column = None;
    for (col, name) in headers.iter().enumerate() {
        if name.eq_ignore_ascii_case("id") {
            id_column = Some(col);
            continue;
        }
        match ATTRIBUTE_NAMES.iter().position(|n| *n == name) {
            Some(idx) => columns[idx] = col,
            None => return Err(Error::Schema(format!("unknown attribute `{name}`"))),
        }
    }
    let id_column = id_column.ok_or_else(|| Error::Schema("missing `id` column".into()))?;
    if let Some(missing) = columns.iter().position(|c| *c == usize::MAX) {
        return Err(Error::Schema(format!(
            "missing attribute `{}`",
            ATTRIBUTE_NAMES[missing]
        )));
    }
    let mut labels = BTreeMap::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let id = record
            .get(id_column)
            .ok_or_else(|| Error::Schema(format!("row {} has no id", row + 1)))?
            .to_string();
        let mut values = [0.0; ATTRIBUTE_DIM];
        for (idx, col) in columns.iter().enumerate() {
            let raw = record
                .get(*col)
                .ok_or_else(|| Error::Schema(format!("row `{id}` is missing attribute `{}`", ATTRIBUTE_NAMES[idx])))?;
            values[idx] = match raw {
                "1" | "1.0" => 1.0,
                "0" | "0.0" | "-1" | "-1.0" => 0.0,
                other => {
                    return Err(Error::Schema(format!(
                        "row `{id}`, `{}`: value `{other}` is not in {{-1, 0, 1}}",
                        ATTRIBUTE_NAMES[idx]
                    )))
                }
            };
        }
        labels.insert(id, AttributeVector(values));
    }
    Ok(labels)
}

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

/// Loads every image in `image_dir` (named `<id>.<ext>`) with its label row,
/// resized to `resolution`×`resolution`.
pub fn load_corpus(image_dir: impl AsRef<Path>, label_file: impl AsRef<Path>, resolution: usize) -> Result<Corpus> {
    let labels = read_labels(label_file)?;
    let mut samples = Vec::new();
    for entry in std::fs::read_dir(image_dir.as_ref())? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let attributes = *labels.get(&id).ok_or_else(|| Error::MissingLabel(id.clone()))?;
        let img = image::open(&path).map_err(|source| Error::ImageFile {
            path: path.clone(),
            source,
        })?;
        let img = if img.width() as usize != resolution || img.height() as usize != resolution {
            img.resize_exact(
                resolution as u32,
                resolution as u32,
                image::imageops::FilterType::Triangle,
            )
        } else {
            img
        };
        let rgb = image::DynamicImage::ImageRgb8(img.to_rgb8());
        samples.push(Sample {
            id,
            image: normalize_image(&rgb)?,
            attributes,
        });
    }
    Corpus::from_samples(resolution, samples)
}

/// Writes a corpus as `<id>.png` files plus a label CSV in canonical column order.
pub fn write_corpus(corpus: &Corpus, image_dir: impl AsRef<Path>, label_file: impl AsRef<Path>) -> Result<()> {
    let image_dir = image_dir.as_ref();
    std::fs::create_dir_all(image_dir)?;
    let mut writer = csv::Writer::from_path(label_file.as_ref())?;
    let mut header = vec!["id".to_string()];
    header.extend(ATTRIBUTE_NAMES.iter().map(|s| s.to_string()));
    writer.write_record(&header)?;
    for s in corpus.samples() {
        let path = image_dir.join(format!("{}.png", s.id));
        denormalize(&s.image)?
            .save(&path)
            .map_err(|source| Error::ImageFile { path, source })?;
        let mut row = vec![s.id.clone()];
        row.extend(
            s.attributes
                .0
                .iter()
                .map(|v| if *v >= 0.5 { "1" } else { "-1" }.to_string()),
        );
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub train_count: usize,
    pub test_count: usize,
    pub shuffle_seed: u64,
}

/// Disjoint train/test index sets into a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn new(corpus: &Corpus, config: SplitConfig) -> Result<Self> {
        let total = config.train_count + config.test_count;
        if total > corpus.len() {
            return Err(Error::Config(format!(
                "split wants {total} samples, corpus has {}",
                corpus.len()
            )));
        }
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.shuffle_seed));
        let test = order[config.train_count..total].to_vec();
        let mut train = order[..config.train_count].to_vec();
        train.sort_unstable();
        let mut test = test;
        test.sort_unstable();
        Ok(Self { train, test })
    }
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `B×3×R×R`.
    pub images: Tensor,
    /// `B×8`.
    pub attributes: Tensor,
    pub ids: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Mirrors every image left-to-right.
    pub fn flipped(&self) -> Result<Self> {
        let w = self.images.dims()[3];
        let idx: Vec<u32> = (0..w as u32).rev().collect();
        let idx = Tensor::from_vec(idx, w, &nn::device())?;
        Ok(Self {
            images: self.images.index_select(&idx, 3)?,
            attributes: self.attributes.clone(),
            ids: self.ids.clone(),
        })
    }
}

/// One epoch over `indices` in a seed-determined order; the last batch may be short.
pub struct BatchIter<'a> {
    corpus: &'a Corpus,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
    hflip: bool,
}

pub fn batch_iterator<'a>(
    corpus: &'a Corpus,
    indices: &[usize],
    batch_size: usize,
    seed: u64,
) -> Result<BatchIter<'a>> {
    if batch_size < 1 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    Ok(BatchIter {
        corpus,
        order: epoch_order(indices, seed),
        batch_size,
        cursor: 0,
        hflip: false,
    })
}

/// Seeded permutation of `indices`.
pub fn epoch_order(indices: &[usize], seed: u64) -> Vec<usize> {
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

impl BatchIter<'_> {
    pub fn with_hflip(mut self, enabled: bool) -> Self {
        self.hflip = enabled;
        self
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let chunk = &self.order[self.cursor..end];
        self.cursor = end;
        let batch = self.corpus.batch(chunk);
        Some(if self.hflip {
            batch.and_then(|b| b.flipped())
        } else {
            batch
        })
    }
}

/// Collects the distinct ids of a set of samples.
pub fn ids_of(corpus: &Corpus, indices: &[usize]) -> HashSet<String> {
    indices.iter().map(|i| corpus.get(*i).id.clone()).collect()
}
