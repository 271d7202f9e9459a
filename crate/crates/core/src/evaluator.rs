//! Metric harness: SSIM, LPIPS and FID per mask bucket, measured on
//! composited completions against ground truth.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use candle_core::Tensor;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Corpus;
use crate::error::{Error, Result};
use crate::features::{FeatureNetwork, FeatureSource};
use crate::generator::Inpainter;
use crate::mask::{self, Mask, MaskSpec};
use crate::nn;
use crate::ssim::{self, SsimConfig};
use crate::trainer::derive_seed;

/// Single-scale SSIM (window 11, σ 1.5) averaged over the batch.
pub fn metric_ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    nn::to_scalar(&ssim::ssim(a, b, &SsimConfig::default())?.mean_all()?)
}

fn to_matrix(features: &Tensor) -> Result<DMatrix<f64>> {
    let (n, d) = features
        .dims2()
        .map_err(|_| Error::ShapeMismatch(format!("FID features must be N×D, got {:?}", features.dims())))?;
    Ok(DMatrix::from_row_slice(n, d, &nn::to_vec(features)?))
}

fn moments(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mean, cov)
}

/// Square root of a symmetric PSD matrix; negative eigenvalues are clamped to zero.
fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    warn_negative(&eig.eigenvalues);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

fn warn_negative(eigenvalues: &DVector<f64>) {
    let scale = eigenvalues.amax().max(1.0);
    let min = eigenvalues.min();
    if min < -1e-10 * scale {
        tracing::warn!(min, "clamping negative covariance eigenvalue to zero");
    }
}

/// Fréchet distance between Gaussian fits of two `N×D` feature sets.
pub fn metric_fid(real: &Tensor, fake: &Tensor) -> Result<f64> {
    let (r, f) = (to_matrix(real)?, to_matrix(fake)?);
    if r.ncols() != f.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "FID feature widths differ: {} vs {}",
            r.ncols(),
            f.ncols()
        )));
    }
    if r.nrows() < 2 || f.nrows() < 2 {
        return Err(Error::InvalidArgument(format!(
            "FID needs at least 2 samples per set, got {} and {}",
            r.nrows(),
            f.nrows()
        )));
    }
    let (mu_r, cov_r) = moments(&r);
    let (mu_f, cov_f) = moments(&f);
    // tr((Σr Σf)^½) = tr((Σr^½ Σf Σr^½)^½), which is symmetric
    let root_r = sym_sqrt(&cov_r);
    let inner = &root_r * &cov_f * &root_r;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    warn_negative(&eig.eigenvalues);
    let cross: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let fid = (mu_r - mu_f).norm_squared() + cov_r.trace() + cov_f.trace() - 2.0 * cross;
    Ok(fid.max(0.0))
}

/// Which masks a bucket draws.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bucket {
    /// Default strokes-plus-square recipe, any ratio.
    Quickdraw,
    /// Combined hole ratio in `[lo, hi]`.
    Ratio { lo: f64, hi: f64 },
    /// No holes at all.
    Empty,
}

impl Bucket {
    pub fn mask(&self, side: usize, seed: u64) -> Result<Mask> {
        match *self {
            Bucket::Quickdraw => mask::generate_combined_mask(&MaskSpec::new(side, side, seed)),
            Bucket::Ratio { lo, hi } => {
                mask::generate_combined_mask(&MaskSpec::new(side, side, seed).with_bucket(lo, hi))
            }
            Bucket::Empty => Ok(Mask::ones(side, side)),
        }
    }

    /// Comma-separated bucket list, e.g. `quickdraw,0.1:0.2,none`.
    pub fn parse_list(s: &str) -> Result<Vec<Bucket>> {
        s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
    }

    /// The four ratio buckets from 10–20% to 40–50%.
    pub fn standard() -> Vec<Bucket> {
        (1..=4)
            .map(|i| Bucket::Ratio {
                lo: i as f64 / 10.0,
                hi: (i + 1) as f64 / 10.0,
            })
            .collect()
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bucket::Quickdraw => f.write_str("quickdraw"),
            Bucket::Ratio { lo, hi } => write!(f, "{lo}:{hi}"),
            Bucket::Empty => f.write_str("none"),
        }
    }
}

impl FromStr for Bucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "quickdraw" => Ok(Bucket::Quickdraw),
            "none" => Ok(Bucket::Empty),
            _ => {
                let bad = || Error::InvalidArgument(format!("unknown bucket `{s}`; use quickdraw, none or lo:hi"));
                let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
                let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
                let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
                if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
                    return Err(Error::InvalidArgument(format!(
                        "bucket {lo}:{hi} must lie inside (0, 1)"
                    )));
                }
                Ok(Bucket::Ratio { lo, hi })
            }
        }
    }
}

impl Serialize for Bucket {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Bucket {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub buckets: Vec<Bucket>,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            buckets: Bucket::standard(),
            seed: 0,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub bucket: Bucket,
    pub samples: usize,
    pub mean_hole_ratio: f64,
    pub ssim: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lpips: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Which images the metrics compare against ground truth.
    pub metrics_on: String,
    /// Feature backend behind LPIPS/FID; `none` when those columns are omitted.
    pub backend: String,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    pub buckets: Vec<BucketMetrics>,
}

impl EvalReport {
    pub fn bucket(&self, bucket: &Bucket) -> Option<&BucketMetrics> {
        self.buckets.iter().find(|b| b.bucket == *bucket)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per bucket; absent metrics are empty cells.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bucket", "samples", "hole_ratio", "ssim", "lpips", "fid"])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for b in &self.buckets {
            w.write_record([
                b.bucket.to_string(),
                b.samples.to_string(),
                format!("{:.4}", b.mean_hole_ratio),
                format!("{:.6}", b.ssim),
                opt(b.lpips),
                opt(b.fid),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits utf-8"))
    }

    /// Writes `report.json` and `report.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json()?)?;
        std::fs::write(dir.join("report.csv"), self.to_csv()?)?;
        Ok(())
    }
}

/// Output := masked input, so holes stay mid-gray.
pub struct GrayFill;

impl Inpainter for GrayFill {
    fn complete(&self, masked: &Tensor, _mask: &Tensor, _attrs: &Tensor) -> Result<Tensor> {
        Ok(masked.clone())
    }
}

/// Uniform noise in `[−1, 1]`, seeded.
pub struct RandomNoise {
    pub seed: u64,
}

impl Inpainter for RandomNoise {
    fn complete(&self, masked: &Tensor, _mask: &Tensor, _attrs: &Tensor) -> Result<Tensor> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let data: Vec<f64> = (0..masked.elem_count()).map(|_| rng.random_range(-1.0..=1.0)).collect();
        Ok(Tensor::from_vec(data, masked.dims(), &nn::device())?)
    }
}

/// Short tag naming the feature backend, for report provenance.
pub fn backend_tag(source: &FeatureSource) -> String {
    match source {
        FeatureSource::Random { width, seed } => format!("random(width={width},seed={seed})"),
        FeatureSource::Pretrained { weights, lpips } => {
            let name = |p: &str| {
                Path::new(p)
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.to_string())
            };
            match lpips {
                Some(l) => format!("vgg16({})+lpips({})", name(weights), name(l)),
                None => format!("vgg16({})", name(weights)),
            }
        }
    }
}

/// A feature backend together with its provenance tag.
pub struct Backend<'a> {
    pub network: &'a FeatureNetwork,
    pub tag: String,
}

/// Completes every test image under each bucket's masks with its ground-truth
/// attributes, then scores composites against ground truth.
///
/// LPIPS and FID are only reported for a pretrained backend.
pub fn evaluate(
    model: &dyn Inpainter,
    corpus: &Corpus,
    indices: &[usize],
    config: &EvalConfig,
    backend: Option<Backend<'_>>,
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument(
            "evaluation needs at least one test image".into(),
        ));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("evaluation batch_size must be positive".into()));
    }
    let backend = backend.filter(|b| b.network.is_pretrained());
    let side = corpus.resolution();
    let mut rows = Vec::with_capacity(config.buckets.len());
    for (bi, bucket) in config.buckets.iter().enumerate() {
        let mut ssims = Vec::with_capacity(indices.len());
        let mut lpips = Vec::new();
        let mut real_emb = Vec::new();
        let mut fake_emb = Vec::new();
        let mut hole_total = 0.0;
        for (ci, chunk) in indices.chunks(config.batch_size).enumerate() {
            let batch = corpus.batch(chunk)?;
            let masks = chunk
                .iter()
                .enumerate()
                .map(|(j, _)| {
                    let n = (ci * config.batch_size + j) as u64;
                    bucket.mask(side, derive_seed(config.seed, &[bi as u64, n]))
                })
                .collect::<Result<Vec<_>>>()?;
            hole_total += masks.iter().map(Mask::hole_ratio).sum::<f64>();
            let m = mask::stack_masks(&masks)?;
            let masked = mask::apply_mask(&batch.images, &m)?;
            let comp = model.complete_composited(&masked, &m, &batch.attributes)?;
            ssims.extend(nn::to_vec(&ssim::ssim(&comp, &batch.images, &SsimConfig::default())?)?);
            if let Some(b) = &backend {
                if b.network.has_lpips() {
                    lpips.extend(b.network.lpips(&comp, &batch.images)?);
                }
                real_emb.push(b.network.embedding(&batch.images)?);
                fake_emb.push(b.network.embedding(&comp)?);
            }
        }
        let n = ssims.len();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let fid = if backend.is_some() && n >= 2 {
            Some(metric_fid(&Tensor::cat(&real_emb, 0)?, &Tensor::cat(&fake_emb, 0)?)?)
        } else {
            None
        };
        rows.push(BucketMetrics {
            bucket: *bucket,
            samples: n,
            mean_hole_ratio: hole_total / n as f64,
            ssim: mean(&ssims),
            lpips: (!lpips.is_empty()).then(|| mean(&lpips)),
            fid,
        });
    }
    let config_json = serde_json::to_string(config)?;
    let hash = Sha256::digest(format!("{config_json}|{indices:?}").as_bytes());
    Ok(EvalReport {
        metrics_on: "composite".into(),
        backend: backend.map(|b| b.tag).unwrap_or_else(|| "none".into()),
        config_hash: hex::encode(&hash[..8]),
        model_id: None,
        buckets: rows,
    })
}
