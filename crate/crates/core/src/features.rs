//! Frozen feature network φ shared by the perceptual and style losses and the
//! LPIPS/FID metrics.
//!
//! Layout is the first three blocks of VGG-16 (`2, 2, 3` 3×3 convs with ReLU,
//! each followed by 2×2 max pooling); the taps are the three pooled outputs.
//! Weights come either from a fixed seed (hermetic default) or from a
//! torchvision VGG-16 `safetensors` export.

use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::nn::{self, Init, Padding};

/// Convs per block in the first three VGG-16 blocks.
pub const VGG_BLOCKS: [usize; 3] = [2, 2, 3];
/// Indices of those convs inside torchvision's `features` sequential.
pub const VGG_FEATURE_INDICES: [usize; 7] = [0, 2, 5, 7, 10, 12, 14];
const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSource {
    /// Fixed-seed random weights; `width` is the first block's channel count.
    Random { width: usize, seed: u64 },
    /// torchvision VGG-16 weights (`features.{i}.weight/bias`), optionally with
    /// LPIPS linear heads (`lin{k}.model.1.weight`).
    Pretrained {
        weights: String,
        #[serde(default)]
        lpips: Option<String>,
    },
}

impl Default for FeatureSource {
    fn default() -> Self {
        Self::Random { width: 16, seed: 7 }
    }
}

#[derive(Clone)]
pub struct FeatureConv {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl FeatureConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = nn::conv2d(x, &self.weight, 1, 1, Padding::Zeros)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1, 1))?)?.relu()?)
    }
}

#[derive(Clone)]
pub struct FeatureNetwork {
    blocks: Vec<Vec<FeatureConv>>,
    imagenet_input: bool,
    pretrained: bool,
    lpips_heads: Option<Vec<Tensor>>,
}

impl FeatureNetwork {
    pub fn from_source(source: &FeatureSource) -> Result<Self> {
        match source {
            FeatureSource::Random { width, seed } => Self::random(*width, *seed),
            FeatureSource::Pretrained { weights, lpips } => {
                let mut net = Self::from_vgg16(weights)?;
                if let Some(path) = lpips {
                    net = net.with_lpips(path)?;
                }
                Ok(net)
            }
        }
    }

    pub fn random(width: usize, seed: u64) -> Result<Self> {
        if width == 0 {
            return Err(Error::Config("feature width must be positive".into()));
        }
        let mut init = Init::new(seed);
        let mut blocks = Vec::new();
        let mut in_ch = 3;
        for (i, convs) in VGG_BLOCKS.iter().enumerate() {
            let out = width << i;
            let mut block = Vec::new();
            for _ in 0..*convs {
                block.push(FeatureConv {
                    weight: init.kaiming(&[out, in_ch, 3, 3], in_ch * 9, 0.0)?,
                    bias: nn::full(0.0, &[out])?,
                });
                in_ch = out;
            }
            blocks.push(block);
        }
        Ok(Self {
            blocks,
            imagenet_input: false,
            pretrained: false,
            lpips_heads: None,
        })
    }

    /// Builds a network from explicit blocks; each block ends with 2×2 max pooling and a tap.
    pub fn from_blocks(blocks: Vec<Vec<FeatureConv>>) -> Result<Self> {
        if blocks.is_empty() || blocks.iter().any(Vec::is_empty) {
            return Err(Error::Config("feature network needs at least one tap layer".into()));
        }
        Ok(Self {
            blocks,
            imagenet_input: false,
            pretrained: false,
            lpips_heads: None,
        })
    }

    pub fn from_vgg16(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let archive = checkpoint::read_archive(path, None)?;
        let mut convs = VGG_FEATURE_INDICES.iter().map(|i| {
            let get = |suffix: &str| -> Result<Tensor> {
                let key = format!("features.{i}.{suffix}");
                archive
                    .tensors
                    .get(&key)
                    .cloned()
                    .ok_or_else(|| Error::checkpoint(path, format!("missing tensor `{key}`")))
            };
            Ok(FeatureConv {
                weight: get("weight")?,
                bias: get("bias")?,
            })
        });
        let mut blocks = Vec::new();
        for n in VGG_BLOCKS {
            blocks.push(
                (0..n)
                    .map(|_| convs.next().expect("seven convs"))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self {
            blocks,
            imagenet_input: true,
            pretrained: true,
            lpips_heads: None,
        })
    }

    /// Attaches LPIPS per-channel weights for the three taps.
    pub fn with_lpips(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let archive = checkpoint::read_archive(path, None)?;
        let heads = (0..self.blocks.len())
            .map(|k| {
                let key = format!("lin{k}.model.1.weight");
                let w = archive
                    .tensors
                    .get(&key)
                    .ok_or_else(|| Error::checkpoint(path, format!("missing tensor `{key}`")))?;
                Ok(w.flatten_all()?)
            })
            .collect::<Result<Vec<_>>>()?;
        self.lpips_heads = Some(heads);
        Ok(self)
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    pub fn has_lpips(&self) -> bool {
        self.lpips_heads.is_some()
    }

    pub fn tap_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn tap_channels(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .map(|b| b.last().expect("non-empty block").weight.dims()[0])
            .collect()
    }

    fn prepare(&self, x: &Tensor) -> Result<Tensor> {
        if !self.imagenet_input {
            return Ok(x.clone());
        }
        let mean = Tensor::new(&IMAGENET_MEAN, &nn::device())?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&IMAGENET_STD, &nn::device())?.reshape((1, 3, 1, 1))?;
        Ok(x.affine(0.5, 0.5)?.broadcast_sub(&mean)?.broadcast_div(&std)?)
    }

    /// Tap activations φ_1..φ_N for `[-1, 1]` images.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.rank() != 4 || x.dims()[1] != 3 {
            return Err(Error::ShapeMismatch(format!(
                "feature network expects B×3×H×W, got {:?}",
                x.dims()
            )));
        }
        let mut h = self.prepare(x)?;
        let mut taps = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            for conv in block {
                h = conv.forward(&h)?;
            }
            h = nn::max_pool2x2(&h)?;
            taps.push(h.clone());
        }
        Ok(taps)
    }

    /// LPIPS distance per image; requires attached heads.
    pub fn lpips(&self, x: &Tensor, y: &Tensor) -> Result<Vec<f64>> {
        let heads = self
            .lpips_heads
            .as_ref()
            .ok_or_else(|| Error::Config("LPIPS needs pretrained linear heads".into()))?;
        let fx = self.features(x)?;
        let fy = self.features(y)?;
        let b = x.dims()[0];
        let mut total = Tensor::zeros(b, nn::DTYPE, &nn::device())?;
        for ((a, c), head) in fx.iter().zip(&fy).zip(heads) {
            let unit = |t: &Tensor| -> Result<Tensor> {
                let norm = (t.sqr()?.sum_keepdim(1)?.sqrt()? + 1e-10)?;
                Ok(t.broadcast_div(&norm)?)
            };
            let diff = (unit(a)? - unit(c)?)?.sqr()?;
            let weighted = diff.broadcast_mul(&head.reshape((1, (), 1, 1))?)?.sum(1)?;
            total = (total + weighted.mean((1, 2))?)?;
        }
        Ok(total.to_vec1()?)
    }

    /// Global-average-pooled deepest tap, `B×C`, for FID statistics.
    pub fn embedding(&self, x: &Tensor) -> Result<Tensor> {
        let taps = self.features(x)?;
        Ok(taps.last().expect("at least one tap").mean((2, 3))?)
    }
}

/// Gram matrices `F·Fᵀ / (C·H·W)` of a `B×C×H×W` feature tensor, shape `B×C×C`.
pub fn gram(features: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = features.dims4()?;
    let flat = features.reshape((b, c, h * w))?;
    Ok((flat.matmul(&flat.t()?)? / (c * h * w) as f64)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_network_has_three_pooled_taps() {
        let net = FeatureNetwork::random(4, 0).unwrap();
        let x = Init::new(1).uniform(&[2, 3, 32, 32], -1.0, 1.0).unwrap();
        let taps = net.features(&x).unwrap();
        assert_eq!(taps.len(), 3);
        assert_eq!(taps[0].dims(), &[2, 4, 16, 16]);
        assert_eq!(taps[2].dims(), &[2, 16, 4, 4]);
        assert_eq!(net.tap_channels(), vec![4, 8, 16]);
    }

    #[test]
    fn gram_is_symmetric() {
        let f = Init::new(2).normal(&[1, 5, 3, 3], 1.0).unwrap();
        let g = gram(&f).unwrap().squeeze(0).unwrap().to_vec2::<f64>().unwrap();
        for (i, row) in g.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((v - g[j][i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_blocks_rejected() {
        assert!(FeatureNetwork::from_blocks(vec![]).is_err());
    }

    #[test]
    fn lpips_requires_heads() {
        let net = FeatureNetwork::random(4, 0).unwrap();
        let x = nn::full(0.0, &[1, 3, 16, 16]).unwrap();
        assert!(net.lpips(&x, &x).is_err());
    }
}
