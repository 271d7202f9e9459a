//! Encoder–decoder inpainting generator with bidirectional attention and
//! attribute conditioning at the bottleneck.
//!
//! Encoder stage `l` (1-based) halves the resolution with a 4×4/stride-2 conv
//! whose output is gated by the forward mask stream (seeded with `M`). The
//! attribute vector is tiled over the bottleneck and concatenated on the
//! channel axis. Decoder stage `l` doubles the resolution with a transposed
//! conv over `[decoder, skip]`, and its output is gated by the reverse mask
//! stream (seeded with `1 − M`). There is one decoder; reconstruction and
//! attribute-edited generation both run through it.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::attention::{
    self, constant_mask_conv, forward_attention, mask_update, reverse_attention, AttentionGate, GateInit, MaskAttention,
};
use crate::checkpoint::{self, GENERATOR_FORMAT};
use crate::dataset::ATTRIBUTE_DIM;
use crate::error::{Error, Result};
use crate::mask;
use crate::nn::{self, Conv2d, ConvTranspose2d, Init, ParamStore};

const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub resolution: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub depth: usize,
    pub attribute_dim: usize,
    pub gate: GateInit,
    pub mask_exponent: f64,
    pub encoder_slope: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    /// Full-size topology: 256 px, seven stages, 64 → 512 channels.
    pub fn full() -> Self {
        Self {
            resolution: 256,
            base_channels: 64,
            max_channels: 512,
            depth: 7,
            attribute_dim: ATTRIBUTE_DIM,
            gate: GateInit::default(),
            mask_exponent: 0.8,
            encoder_slope: 0.2,
            seed: 0,
        }
    }

    /// Narrow network for desk-scale runs; depth is `log2(resolution) − 1`.
    pub fn desk(resolution: usize) -> Self {
        let depth = (resolution.max(4).ilog2() as usize).saturating_sub(1);
        Self {
            resolution,
            base_channels: 8,
            max_channels: 64,
            depth,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::Config("generator depth must be at least 2".into()));
        }
        if !self.resolution.is_multiple_of(1 << self.depth) {
            return Err(Error::Config(format!(
                "resolution {} is not divisible by 2^{}",
                self.resolution, self.depth
            )));
        }
        if self.attribute_dim != ATTRIBUTE_DIM {
            return Err(Error::Config(format!(
                "attribute_dim {} does not match the {ATTRIBUTE_DIM}-entry attribute vector",
                self.attribute_dim
            )));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(Error::Config("invalid channel widths".into()));
        }
        Ok(())
    }

    /// Channels produced by encoder stage `level` (1-based).
    pub fn channels(&self, level: usize) -> usize {
        (self.base_channels << (level - 1)).min(self.max_channels)
    }

    pub fn bottleneck_size(&self) -> usize {
        self.resolution >> self.depth
    }
}

#[derive(Clone)]
struct EncoderStage {
    conv: Conv2d,
    attention: MaskAttention,
    normalize: bool,
}

#[derive(Clone)]
struct DecoderStage {
    deconv: ConvTranspose2d,
    /// Reverse gate on this stage's output; absent on the output stage.
    gate: Option<AttentionGate>,
    normalize: bool,
}

/// Encoder output: bottleneck, skips and the forward attention trace.
#[derive(Debug, Clone)]
pub struct LatentFeatures {
    /// `B×C×s×s`, `s = resolution / 2^depth`; widened by `attribute_channels` after injection.
    pub bottleneck: Tensor,
    /// Outputs of encoder stages `1..depth−1`.
    pub skips: Vec<Tensor>,
    /// Forward gate values per encoder stage.
    pub attention_maps: Vec<Tensor>,
    /// Forward mask-feature stream after each encoder stage.
    pub mask_stream: Vec<Tensor>,
    pub attribute_channels: usize,
}

#[derive(Clone)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamStore,
    encoder: Vec<EncoderStage>,
    reverse_convs: Vec<Conv2d>,
    /// Index 0 is the deepest stage (level `depth`).
    decoder: Vec<DecoderStage>,
}

impl Generator {
    pub fn new(config: GeneratorConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(config.seed);
        let depth = config.depth;

        let mut encoder = Vec::with_capacity(depth);
        for level in 1..=depth {
            let (in_ch, mask_in) = if level == 1 {
                (4, 1)
            } else {
                (config.channels(level - 1), config.channels(level - 1))
            };
            let out = config.channels(level);
            let name = format!("encoder.{level}");
            let conv = Conv2d::new(
                &mut params,
                &mut init,
                &format!("{name}.conv"),
                in_ch,
                out,
                4,
                2,
                1,
                true,
            )?;
            let attention = MaskAttention::new(
                &mut params,
                &name,
                mask_in,
                out,
                4,
                2,
                1,
                config.gate,
                config.mask_exponent,
            )?;
            encoder.push(EncoderStage {
                conv,
                attention,
                normalize: level != 1 && level != depth,
            });
        }

        let mut reverse_convs = Vec::with_capacity(depth - 1);
        let mut decoder = Vec::with_capacity(depth);
        for level in (1..=depth).rev() {
            let name = format!("decoder.{level}");
            let in_ch = if level == depth {
                config.channels(depth) + config.attribute_dim
            } else {
                2 * config.channels(level)
            };
            let out = if level == 1 { 3 } else { config.channels(level - 1) };
            let deconv = ConvTranspose2d::new(
                &mut params,
                &mut init,
                &format!("{name}.deconv"),
                in_ch,
                out,
                4,
                2,
                1,
                true,
            )?;
            let gate = if level > 1 {
                Some(AttentionGate::new(&mut params, &format!("{name}.gate"), config.gate)?)
            } else {
                None
            };
            decoder.push(DecoderStage {
                deconv,
                gate,
                normalize: level != 1,
            });
        }
        // reverse stream level l feeds the gate of decoder stage l + 1
        for level in 1..depth {
            let mask_in = if level == 1 { 1 } else { config.channels(level - 1) };
            reverse_convs.push(constant_mask_conv(
                &mut params,
                &format!("decoder.{}.reverse_conv", level + 1),
                mask_in,
                config.channels(level),
                4,
                2,
                1,
            )?);
        }

        Ok(Self {
            config,
            params,
            encoder,
            reverse_convs,
            decoder,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Names of decoder-side parameters (deconvs, reverse convs and gates).
    pub fn decoder_param_names(&self) -> Vec<String> {
        self.params
            .names()
            .into_iter()
            .filter(|n| n.starts_with("decoder."))
            .collect()
    }

    fn check_inputs(&self, masked_image: &Tensor, mask: &Tensor) -> Result<()> {
        let r = self.config.resolution;
        let dims = masked_image.dims();
        if dims.len() != 4 || dims[1] != 3 || dims[2] != r || dims[3] != r {
            return Err(Error::ShapeMismatch(format!(
                "generator expects B×3×{r}×{r}, got {dims:?}"
            )));
        }
        let md = mask.dims();
        if md != [dims[0], 1, r, r] {
            return Err(Error::ShapeMismatch(format!(
                "mask {md:?} does not match image {dims:?}"
            )));
        }
        Ok(())
    }

    pub fn encode(&self, masked_image: &Tensor, mask: &Tensor) -> Result<LatentFeatures> {
        self.config.validate()?;
        self.check_inputs(masked_image, mask)?;
        let mut x = Tensor::cat(&[masked_image, mask], 1)?;
        let mut m = mask.clone();
        let mut outputs = Vec::with_capacity(self.config.depth);
        let mut attention_maps = Vec::with_capacity(self.config.depth);
        let mut mask_stream = Vec::with_capacity(self.config.depth);
        for stage in &self.encoder {
            let features = stage.conv.forward(&x)?;
            let step = forward_attention(&features, &m, &stage.attention)?;
            let mut h = step.attended;
            if stage.normalize {
                h = nn::instance_norm(&h, NORM_EPS)?;
            }
            h = nn::leaky_relu(&h, self.config.encoder_slope)?;
            attention_maps.push(step.attention);
            mask_stream.push(step.mask_features.clone());
            m = step.mask_features;
            outputs.push(h.clone());
            x = h;
        }
        let bottleneck = outputs.pop().expect("depth >= 2");
        Ok(LatentFeatures {
            bottleneck,
            skips: outputs,
            attention_maps,
            mask_stream,
            attribute_channels: 0,
        })
    }

    /// Tiles `attrs` (`B×8` or `1×8`) over the bottleneck and appends it as channels.
    pub fn inject_attributes(&self, latent: &LatentFeatures, attrs: &Tensor) -> Result<LatentFeatures> {
        inject_attributes(latent, attrs, self.config.attribute_dim)
    }

    pub fn decode(&self, latent: &LatentFeatures, mask: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        let s = cfg.bottleneck_size();
        let expected = [cfg.channels(cfg.depth) + cfg.attribute_dim, s, s];
        let bd = latent.bottleneck.dims();
        if latent.attribute_channels != cfg.attribute_dim
            || bd.len() != 4
            || bd[1..] != expected
            || latent.skips.len() != cfg.depth - 1
        {
            return Err(Error::ShapeMismatch(format!(
                "latent {bd:?} with {} attribute channels and {} skips does not fit this generator",
                latent.attribute_channels,
                latent.skips.len()
            )));
        }
        let md = mask.dims();
        if md.len() != 4 || md[0] != bd[0] || md[2] != cfg.resolution || md[3] != cfg.resolution {
            return Err(Error::ShapeMismatch(format!("mask {md:?} for latent {bd:?}")));
        }

        let mut reverse = Vec::with_capacity(cfg.depth - 1);
        let mut r = mask.affine(-1.0, 1.0)?;
        for conv in &self.reverse_convs {
            let pre = conv.forward(&r)?;
            r = mask_update(&pre, cfg.mask_exponent)?;
            reverse.push(pre);
        }

        let mut d = latent.bottleneck.clone();
        for (i, stage) in self.decoder.iter().enumerate() {
            let level = cfg.depth - i;
            let h = if level == cfg.depth {
                d
            } else {
                Tensor::cat(&[&d, &latent.skips[level - 1]], 1)?
            };
            let up = stage.deconv.forward(&h)?;
            match &stage.gate {
                Some(gate) => {
                    let mut g = reverse_attention(&up, &reverse[level - 2], gate)?;
                    if stage.normalize {
                        g = nn::instance_norm(&g, NORM_EPS)?;
                    }
                    d = g.silu()?;
                }
                None => return Ok(up.tanh()?),
            }
        }
        unreachable!("the last decoder stage has no gate")
    }

    /// `G([masked, M], attrs)`: encode, inject, decode.
    pub fn generate(&self, masked_image: &Tensor, mask: &Tensor, attrs: &Tensor) -> Result<Tensor> {
        let latent = self.encode(masked_image, mask)?;
        let latent = self.inject_attributes(&latent, attrs)?;
        self.decode(&latent, mask)
    }

    /// All attention gates with their ceilings, encoder first.
    pub fn gates(&self) -> Vec<&AttentionGate> {
        self.encoder
            .iter()
            .map(|s| &s.attention.gate)
            .chain(self.decoder.iter().filter_map(|s| s.gate.as_ref()))
            .collect()
    }

    /// Encoder-stage attention layers, for probing the forward stream directly.
    pub fn encoder_attention(&self, level: usize) -> &MaskAttention {
        &self.encoder[level - 1].attention
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        checkpoint::write_archive(
            path,
            GENERATOR_FORMAT,
            Some(serde_json::to_string(&self.config)?),
            BTreeMap::new(),
            &self.params.named_tensors(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let archive = checkpoint::read_archive(path, Some(GENERATOR_FORMAT))?;
        let gen = Self::new(archive.config(path)?)?;
        gen.params.assign(&archive.tensors)?;
        Ok(gen)
    }
}

pub fn inject_attributes(latent: &LatentFeatures, attrs: &Tensor, attribute_dim: usize) -> Result<LatentFeatures> {
    if latent.attribute_channels != 0 {
        return Err(Error::InvalidArgument("attributes already injected".into()));
    }
    let (b, _, h, w) = latent.bottleneck.dims4()?;
    let (ab, ad) = attrs
        .dims2()
        .map_err(|_| Error::ShapeMismatch(format!("attributes must be B×{attribute_dim}, got {:?}", attrs.dims())))?;
    if ad != attribute_dim || (ab != b && ab != 1) {
        return Err(Error::ShapeMismatch(format!(
            "attributes {:?} for a batch of {b} with {attribute_dim} attributes",
            attrs.dims()
        )));
    }
    let tiled = attrs
        .reshape((ab, ad, 1, 1))?
        .broadcast_as((b, ad, h, w))?
        .contiguous()?;
    Ok(LatentFeatures {
        bottleneck: Tensor::cat(&[&latent.bottleneck, &tiled], 1)?,
        skips: latent.skips.clone(),
        attention_maps: latent.attention_maps.clone(),
        mask_stream: latent.mask_stream.clone(),
        attribute_channels: ad,
    })
}

/// Anything that can fill holes given a masked image, its mask and attributes.
pub trait Inpainter {
    /// Raw completion (before compositing) for `B×3×R×R` inputs.
    fn complete(&self, masked: &Tensor, mask: &Tensor, attrs: &Tensor) -> Result<Tensor>;

    /// Completion with the valid pixels pasted back from `masked`.
    fn complete_composited(&self, masked: &Tensor, mask: &Tensor, attrs: &Tensor) -> Result<Tensor> {
        let raw = self.complete(masked, mask, attrs)?;
        mask::composite(masked, &raw, mask)
    }
}

impl Inpainter for Generator {
    fn complete(&self, masked: &Tensor, mask: &Tensor, attrs: &Tensor) -> Result<Tensor> {
        self.generate(masked, mask, attrs)
    }
}

pub use attention::{forward_attention as forward_attention_op, reverse_attention as reverse_attention_op};
