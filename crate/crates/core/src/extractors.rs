//! Attribute extractors: `Ext`, a VGG-16-style classifier applied to reference
//! images, and `AE`, a convolution-only auxiliary extractor applied to
//! generated images.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, AUX_FORMAT, EXTRACTOR_FORMAT};
use crate::dataset::{epoch_order, Corpus, ATTRIBUTE_DIM};
use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, Init, LayerKind, Linear, ParamStore};
use crate::optim::{Adam, AdamConfig};

/// Convs per block of VGG-16.
pub const VGG16_BLOCKS: [usize; 5] = [2, 2, 3, 3, 3];
const VGG16_WIDTH_MULTIPLIERS: [usize; 5] = [1, 2, 4, 8, 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub resolution: usize,
    /// First-block width; VGG-16 proper uses 64.
    pub base_channels: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl ExtractorConfig {
    pub fn full() -> Self {
        Self {
            resolution: 256,
            base_channels: 64,
            hidden: 512,
            seed: 2,
        }
    }

    pub fn desk(resolution: usize) -> Self {
        Self {
            resolution,
            base_channels: 4,
            hidden: 64,
            ..Self::full()
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.resolution.is_multiple_of(32) || self.resolution == 0 {
            return Err(Error::Config(format!(
                "extractor resolution must be a positive multiple of 32, got {}",
                self.resolution
            )));
        }
        if self.base_channels == 0 || self.hidden == 0 {
            return Err(Error::Config("extractor widths must be positive".into()));
        }
        Ok(())
    }
}

fn check_image(x: &Tensor, resolution: usize) -> Result<()> {
    match x.dims() {
        [_, 3, h, w] if *h == resolution && *w == resolution => Ok(()),
        d => Err(Error::ShapeMismatch(format!(
            "extractor expects B×3×{resolution}×{resolution}, got {d:?}"
        ))),
    }
}

#[derive(Clone)]
pub struct AttributeExtractor {
    config: ExtractorConfig,
    params: ParamStore,
    blocks: Vec<Vec<Conv2d>>,
    fc1: Linear,
    fc2: Linear,
}

impl AttributeExtractor {
    pub fn new(config: ExtractorConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(config.seed);
        let mut blocks = Vec::new();
        let mut in_ch = 3;
        for (b, (n, mult)) in VGG16_BLOCKS.iter().zip(VGG16_WIDTH_MULTIPLIERS).enumerate() {
            let out = config.base_channels * mult;
            let mut block = Vec::new();
            for c in 0..*n {
                let name = format!("ext.block{}.conv{}", b + 1, c + 1);
                block.push(Conv2d::new(&mut params, &mut init, &name, in_ch, out, 3, 1, 1, true)?);
                in_ch = out;
            }
            blocks.push(block);
        }
        let side = config.resolution / 32;
        let flat = in_ch * side * side;
        let fc1 = Linear::new(&mut params, &mut init, "ext.fc1", flat, config.hidden)?;
        let fc2 = Linear::new(&mut params, &mut init, "ext.fc2", config.hidden, ATTRIBUTE_DIM)?;
        Ok(Self {
            config,
            params,
            blocks,
            fc1,
            fc2,
        })
    }

    pub fn config(&self) -> &ExtractorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Logits before the sigmoid, `B×8`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        check_image(x, self.config.resolution)?;
        let mut h = x.clone();
        for block in &self.blocks {
            for conv in block {
                h = conv.forward(&h)?.relu()?;
            }
            h = nn::max_pool2x2(&h)?;
        }
        let h = h.flatten_from(1)?;
        let h = self.fc1.forward(&h)?.relu()?;
        self.fc2.forward(&h)
    }

    /// `A_ext = Ext(I)`, entries in `(0, 1)`.
    pub fn extract(&self, x: &Tensor) -> Result<Tensor> {
        nn::sigmoid(&self.logits(x)?)
    }

    pub fn layer_manifest(&self) -> Vec<LayerKind> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.extend(block.iter().map(|_| LayerKind::Conv));
            out.push(LayerKind::Pool);
        }
        out.extend([LayerKind::Dense, LayerKind::Dense]);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        checkpoint::write_archive(
            path,
            EXTRACTOR_FORMAT,
            Some(serde_json::to_string(&self.config)?),
            BTreeMap::new(),
            &self.params.named_tensors(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let archive = checkpoint::read_archive(path, Some(EXTRACTOR_FORMAT))?;
        let ext = Self::new(archive.config(path)?)?;
        ext.params.assign(&archive.tensors)?;
        Ok(ext)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxConfig {
    pub resolution: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub stages: usize,
    pub slope: f64,
    pub seed: u64,
}

impl AuxConfig {
    pub fn full() -> Self {
        Self {
            resolution: 256,
            base_channels: 32,
            max_channels: 256,
            stages: 5,
            slope: 0.2,
            seed: 3,
        }
    }

    pub fn desk(resolution: usize) -> Self {
        Self {
            resolution,
            base_channels: 8,
            max_channels: 64,
            ..Self::full()
        }
    }
}

#[derive(Clone)]
pub struct AuxExtractor {
    config: AuxConfig,
    params: ParamStore,
    convs: Vec<Conv2d>,
    head: Conv2d,
}

impl AuxExtractor {
    pub fn new(config: AuxConfig) -> Result<Self> {
        if config.stages == 0 || config.base_channels == 0 || config.resolution == 0 {
            return Err(Error::Config("invalid auxiliary extractor config".into()));
        }
        let mut params = ParamStore::new();
        let mut init = Init::new(config.seed);
        let mut convs = Vec::new();
        let mut in_ch = 3;
        for i in 0..config.stages {
            let out = (config.base_channels << i).min(config.max_channels);
            convs.push(Conv2d::new(
                &mut params,
                &mut init,
                &format!("aux.conv{}", i + 1),
                in_ch,
                out,
                3,
                2,
                1,
                true,
            )?);
            in_ch = out;
        }
        let head = Conv2d::new(&mut params, &mut init, "aux.head", in_ch, ATTRIBUTE_DIM, 1, 1, 0, true)?;
        Ok(Self {
            config,
            params,
            convs,
            head,
        })
    }

    pub fn config(&self) -> &AuxConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// `A_aux = AE(I)`, entries in `(0, 1)`.
    pub fn extract(&self, x: &Tensor) -> Result<Tensor> {
        check_image(x, self.config.resolution)?;
        let mut h = x.clone();
        for conv in &self.convs {
            h = nn::leaky_relu(&conv.forward(&h)?, self.config.slope)?;
        }
        let pooled = h.mean_keepdim((2, 3))?;
        let logits = self.head.forward(&pooled)?.flatten_from(1)?;
        nn::sigmoid(&logits)
    }

    pub fn layer_manifest(&self) -> Vec<LayerKind> {
        let mut out = vec![LayerKind::Conv; self.convs.len()];
        out.push(LayerKind::Pool);
        out.push(LayerKind::Conv);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        checkpoint::write_archive(
            path,
            AUX_FORMAT,
            Some(serde_json::to_string(&self.config)?),
            BTreeMap::new(),
            &self.params.named_tensors(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let archive = checkpoint::read_archive(path, Some(AUX_FORMAT))?;
        let aux = Self::new(archive.config(path)?)?;
        aux.params.assign(&archive.tensors)?;
        Ok(aux)
    }
}

/// Supervised fitting of `Ext` to ground-truth labels, used to warm-start training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            batch_size: 16,
            adam: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            seed: 0,
        }
    }
}

/// `mean(softplus(z) − y·z)`, the logistic loss on logits.
pub fn binary_cross_entropy_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    nn::check_same_shape("binary cross-entropy", logits, targets)?;
    let softplus = (logits.relu()? + logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?)?;
    Ok((softplus - logits.mul(targets)?)?.mean_all()?)
}

/// Fits `ext` to the labels of `indices`; returns the per-step losses.
pub fn fit_extractor(
    ext: &AttributeExtractor,
    corpus: &Corpus,
    indices: &[usize],
    config: &FitConfig,
) -> Result<Vec<f64>> {
    if indices.is_empty() || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "fitting needs samples and a positive batch size".into(),
        ));
    }
    let mut opt = Adam::new(ext.params().iter().map(|(n, v)| (n.to_string(), v)), config.adam)?;
    let mut losses = Vec::with_capacity(config.steps);
    let mut order = Vec::new();
    for step in 0..config.steps {
        if order.len() < config.batch_size {
            let epoch = (step * config.batch_size / indices.len()) as u64;
            order.extend(epoch_order(indices, config.seed.wrapping_add(epoch)));
        }
        let batch_idx: Vec<usize> = order.drain(..config.batch_size.min(order.len())).collect();
        let batch = corpus.batch(&batch_idx)?;
        let loss = binary_cross_entropy_with_logits(&ext.logits(&batch.images)?, &batch.attributes)?;
        losses.push(nn::to_scalar(&loss)?);
        opt.step(&loss.backward()?)?;
    }
    Ok(losses)
}

/// Fraction of attribute entries where `Ext` lands on the right side of 0.5.
pub fn attribute_accuracy(ext: &AttributeExtractor, corpus: &Corpus, indices: &[usize]) -> Result<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for chunk in indices.chunks(32) {
        let batch = corpus.batch(chunk)?;
        let pred = nn::to_vec(&ext.extract(&batch.images)?)?;
        let truth = nn::to_vec(&batch.attributes)?;
        hits += pred
            .iter()
            .zip(&truth)
            .filter(|(p, t)| (**p >= 0.5) == (**t >= 0.5))
            .count();
        total += pred.len();
    }
    Ok(hits as f64 / total.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_are_probabilities() {
        let x = Init::new(0).uniform(&[3, 3, 64, 64], -1.0, 1.0).unwrap();
        let ext = AttributeExtractor::new(ExtractorConfig::desk(64)).unwrap();
        let aux = AuxExtractor::new(AuxConfig::desk(64)).unwrap();
        for a in [ext.extract(&x).unwrap(), aux.extract(&x).unwrap()] {
            assert_eq!(a.dims(), &[3, 8]);
            assert!(nn::to_vec(&a).unwrap().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn manifests_separate_dense_from_conv_only() {
        let ext = AttributeExtractor::new(ExtractorConfig::desk(64)).unwrap();
        let aux = AuxExtractor::new(AuxConfig::desk(64)).unwrap();
        assert!(ext.layer_manifest().contains(&LayerKind::Dense));
        assert!(!aux.layer_manifest().contains(&LayerKind::Dense));
        assert_eq!(
            ext.layer_manifest().iter().filter(|k| **k == LayerKind::Conv).count(),
            13
        );
    }

    #[test]
    fn batch_matches_single() {
        let x = Init::new(1).uniform(&[2, 3, 64, 64], -1.0, 1.0).unwrap();
        let ext = AttributeExtractor::new(ExtractorConfig::desk(64)).unwrap();
        let batch = nn::to_vec(&ext.extract(&x).unwrap()).unwrap();
        let single = nn::to_vec(&ext.extract(&x.narrow(0, 1, 1).unwrap()).unwrap()).unwrap();
        for (a, b) in batch[8..].iter().zip(&single) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn logistic_loss_matches_closed_form() {
        let z = Tensor::new(&[[-30.0f64, 0.0, 2.0]], &nn::device()).unwrap();
        let y = Tensor::new(&[[0.0f64, 1.0, 1.0]], &nn::device()).unwrap();
        let got = nn::to_scalar(&binary_cross_entropy_with_logits(&z, &y).unwrap()).unwrap();
        let want = ((1.0f64 + (-30.0f64).exp()).ln() + 2f64.ln() + (1.0 + (-2.0f64).exp()).ln()) / 3.0;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn parameters_are_disjoint() {
        let ext = AttributeExtractor::new(ExtractorConfig::desk(64)).unwrap();
        let aux = AuxExtractor::new(AuxConfig::desk(64)).unwrap();
        let ext_ids: std::collections::HashSet<_> = ext.params().vars().iter().map(|v| v.as_tensor().id()).collect();
        assert!(aux
            .params()
            .vars()
            .iter()
            .all(|v| !ext_ids.contains(&v.as_tensor().id())));
    }
}
