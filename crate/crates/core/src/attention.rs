//! Learnable bidirectional attention: mask-feature streams gated by a
//! learnable asymmetric activation.
//!
//! The gate is
//!
//! ```text
//! g(x) = a · |2σ(b·x) − 1|^γ          for x ≥ 0
//! g(x) = a · λ · |2σ(b·x) − 1|^γ      for x < 0
//! ```
//!
//! so `g(0) = 0`, it is bounded by `|a|·max(1, λ)`, and `a`, `b`, `γ` are learned
//! per layer. `γ` is clamped to `[1, 3]` in the forward pass so the gate stays
//! differentiable at zero.

use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, Padding, ParamStore, DTYPE};

const LOG_EPS: f64 = 1e-12;
const MASK_EPS: f64 = 1e-6;
pub const GAMMA_RANGE: (f64, f64) = (1.0, 3.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateInit {
    pub scale: f64,
    pub sharpness: f64,
    pub exponent: f64,
    pub negative_slope: f64,
}

impl Default for GateInit {
    fn default() -> Self {
        Self {
            scale: 1.1,
            sharpness: 2.0,
            exponent: 1.0,
            negative_slope: 0.1,
        }
    }
}

#[derive(Clone)]
pub struct AttentionGate {
    pub scale: Var,
    pub sharpness: Var,
    pub exponent: Var,
    pub negative_slope: f64,
}

fn broadcast_scalar(v: &Var, like: &Tensor) -> Result<Tensor> {
    let shape = vec![1usize; like.rank()];
    Ok(v.as_tensor().reshape(shape)?.broadcast_as(like.shape())?)
}

impl AttentionGate {
    pub fn new(params: &mut ParamStore, name: &str, init: GateInit) -> Result<Self> {
        Ok(Self {
            scale: params.insert(format!("{name}.a"), nn::full(init.scale, &[1])?)?,
            sharpness: params.insert(format!("{name}.b"), nn::full(init.sharpness, &[1])?)?,
            exponent: params.insert(format!("{name}.gamma"), nn::full(init.exponent, &[1])?)?,
            negative_slope: init.negative_slope,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let a = broadcast_scalar(&self.scale, x)?;
        let b = broadcast_scalar(&self.sharpness, x)?;
        let gamma = broadcast_scalar(&self.exponent, x)?.clamp(GAMMA_RANGE.0, GAMMA_RANGE.1)?;
        // |2σ(bx) − 1| == |tanh(bx / 2)|
        let t = (x * &b)?.affine(0.5, 0.0)?.tanh()?.abs()?;
        let alive = t.detach().gt(0.0)?.to_dtype(DTYPE)?;
        let powered = (gamma * t.maximum(LOG_EPS)?.log()?)?.exp()?.mul(&alive)?;
        let side = x
            .detach()
            .ge(0.0)?
            .to_dtype(DTYPE)?
            .affine(1.0 - self.negative_slope, self.negative_slope)?;
        Ok((a * side)?.mul(&powered)?)
    }

    /// Upper bound on `|g(x)|` for the current parameters.
    pub fn ceiling(&self) -> Result<f64> {
        let a = nn::to_scalar(self.scale.as_tensor())?.abs();
        Ok(a * self.negative_slope.max(1.0))
    }
}

/// `(relu(x) + δ)^α − δ^α`: the propagated mask-feature nonlinearity.
pub fn mask_update(pre: &Tensor, exponent: f64) -> Result<Tensor> {
    let shifted = (pre.relu()? + MASK_EPS)?.powf(exponent)?;
    Ok((shifted - MASK_EPS.powf(exponent))?)
}

/// A mask-stream convolution plus the gate it drives.
#[derive(Clone)]
pub struct MaskAttention {
    pub mask_conv: Conv2d,
    pub gate: AttentionGate,
    pub mask_exponent: f64,
}

impl MaskAttention {
    /// The mask kernel is bias-free, replicate-padded and initialised to the
    /// constant `1/fan_in`, so a constant mask stays constant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        gate: GateInit,
        mask_exponent: f64,
    ) -> Result<Self> {
        let mask_conv = constant_mask_conv(
            params,
            &format!("{name}.mask_conv"),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        )?;
        let gate = AttentionGate::new(params, &format!("{name}.gate"), gate)?;
        Ok(Self {
            mask_conv,
            gate,
            mask_exponent,
        })
    }
}

pub fn constant_mask_conv(
    params: &mut ParamStore,
    name: &str,
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Conv2d> {
    let fan_in = (in_channels * kernel * kernel) as f64;
    let w = nn::full(1.0 / fan_in, &[out_channels, in_channels, kernel, kernel])?;
    let weight = params.insert(format!("{name}.weight"), w)?;
    Ok(Conv2d {
        weight,
        bias: None,
        stride,
        padding,
        padding_mode: Padding::Replicate,
    })
}

/// Output of one forward-attention step.
pub struct ForwardAttention {
    pub attended: Tensor,
    /// The gate values `g(conv_m(mask_features))`.
    pub attention: Tensor,
    /// Mask features handed to the next stage.
    pub mask_features: Tensor,
}

/// Gates `features` by `g(conv_m(mask_features))` and propagates the mask stream.
pub fn forward_attention(features: &Tensor, mask_features: &Tensor, layer: &MaskAttention) -> Result<ForwardAttention> {
    let pre = layer.mask_conv.forward(mask_features)?;
    if pre.dims() != features.dims() {
        return Err(Error::ShapeMismatch(format!(
            "forward attention: features {:?}, mask stream {:?}",
            features.dims(),
            pre.dims()
        )));
    }
    let attention = layer.gate.forward(&pre)?;
    Ok(ForwardAttention {
        attended: features.mul(&attention)?,
        attention,
        mask_features: mask_update(&pre, layer.mask_exponent)?,
    })
}

/// Gates decoder features by `g(reverse_mask_features)`, where the reverse stream
/// was seeded from `1 − M`.
pub fn reverse_attention(
    decoder_features: &Tensor,
    reverse_mask_features: &Tensor,
    gate: &AttentionGate,
) -> Result<Tensor> {
    if decoder_features.dims() != reverse_mask_features.dims() {
        return Err(Error::ShapeMismatch(format!(
            "reverse attention: decoder {:?}, reverse stream {:?}",
            decoder_features.dims(),
            reverse_mask_features.dims()
        )));
    }
    Ok(decoder_features.mul(&gate.forward(reverse_mask_features)?)?)
}
