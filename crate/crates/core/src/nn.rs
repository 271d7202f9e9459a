//! Small layer toolkit over `candle_core` used by every learnable model.
//!
//! All arithmetic runs in `f64` on the CPU device. Parameters live in a
//! [`ParamStore`], an insertion-ordered list of named [`Var`]s, so that
//! optimizer state and checkpoints can be addressed by name.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub const DTYPE: DType = DType::F64;

pub fn device() -> Device {
    Device::Cpu
}

/// Named, insertion-ordered learnable parameters of one model.
#[derive(Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<Var> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let var = Var::from_tensor(&value)?;
        self.entries.push((name, var.clone()));
        Ok(var)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.entries
            .iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().detach()))
            .collect()
    }

    /// Overwrites every parameter from `values`; names and shapes must match exactly.
    pub fn assign(&self, values: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.entries {
            let value = values
                .get(name)
                .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
            if value.dims() != var.dims() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter `{name}`: stored {:?}, model {:?}",
                    value.dims(),
                    var.dims()
                )));
            }
            var.set(&value.to_dtype(DTYPE)?)?;
        }
        let extra: Vec<_> = values.keys().filter(|k| self.get(k).is_none()).cloned().collect();
        if !extra.is_empty() {
            return Err(Error::Config(format!("unexpected parameters {extra:?}")));
        }
        Ok(())
    }
}

/// Seeded weight initializer; every model draws its parameters from one of these.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self, shape: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Ok(Tensor::from_vec(data, shape, &device())?)
    }

    pub fn uniform(&mut self, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.random_range(lo..hi)).collect();
        Ok(Tensor::from_vec(data, shape, &device())?)
    }

    /// He-style init for a kernel whose fan-in is `fan_in`.
    pub fn kaiming(&mut self, shape: &[usize], fan_in: usize, slope: f64) -> Result<Tensor> {
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        self.normal(shape, gain / (fan_in as f64).sqrt())
    }
}

pub fn full(value: f64, shape: &[usize]) -> Result<Tensor> {
    Ok(Tensor::full(value, shape, &device())?)
}

pub fn scalar(value: f64) -> Result<Tensor> {
    Ok(Tensor::new(value, &device())?)
}

/// Numerically stable logistic function, `σ(x) = (1 + tanh(x/2)) / 2`.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

/// Derivative of [`leaky_relu`] as a constant tensor (no graph).
pub fn leaky_relu_slope(x: &Tensor, slope: f64) -> Result<Tensor> {
    let positive = x.detach().ge(0.0)?.to_dtype(DTYPE)?;
    Ok(positive.affine(1.0 - slope, slope)?)
}

/// Per-sample, per-channel normalization over the spatial dims of a `B×C×H×W` tensor.
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim((2, 3))?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim((2, 3))?;
    Ok(centered.broadcast_div(&(var + eps)?.sqrt()?)?)
}

/// 2×2 max pooling built from reductions; candle's own backward scales unique maxima by 1/4.
pub fn max_pool2x2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    let x = x.narrow(2, 0, oh * 2)?.narrow(3, 0, ow * 2)?;
    Ok(x.reshape((b, c, oh, 2, ow, 2))?.max(5)?.max(3)?)
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_same_shape("mse", a, b)?;
    Ok((a - b)?.sqr()?.mean_all()?)
}

pub fn check_same_shape(what: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn to_scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DTYPE)?.flatten_all()?.to_vec1::<f64>()?[0])
}

pub fn to_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DTYPE)?.flatten_all()?.to_vec1::<f64>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zeros,
    /// Edge replication; a constant input stays constant after convolution.
    Replicate,
}

/// 2-D convolution with square kernels.
#[derive(Clone)]
pub struct Conv2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub stride: usize,
    pub padding: usize,
    pub padding_mode: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamStore,
        init: &mut Init,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let w = init.kaiming(&[out_channels, in_channels, kernel, kernel], fan_in, 0.2)?;
        let weight = params.insert(format!("{name}.weight"), w)?;
        let bias = if bias {
            Some(params.insert(format!("{name}.bias"), full(0.0, &[out_channels])?)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
            padding_mode: Padding::Zeros,
        })
    }

    pub fn with_padding_mode(mut self, mode: Padding) -> Self {
        self.padding_mode = mode;
        self
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_with(x, self.weight.as_tensor())
    }

    /// Convolution using an externally transformed kernel (e.g. spectrally normalized).
    pub fn forward_with(&self, x: &Tensor, weight: &Tensor) -> Result<Tensor> {
        let y = conv2d(x, weight, self.stride, self.padding, self.padding_mode)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }
}

pub fn conv2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize, mode: Padding) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d expects B×C×H×W input, got {:?}",
            x.dims()
        )));
    }
    let in_channels = weight.dims()[1];
    if x.dims()[1] != in_channels {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input has {} channels, kernel expects {in_channels}",
            x.dims()[1]
        )));
    }
    match mode {
        Padding::Zeros => Ok(x.conv2d(weight, padding, stride, 1, 1)?),
        Padding::Replicate => {
            let padded = x
                .pad_with_same(2, padding, padding)?
                .pad_with_same(3, padding, padding)?;
            Ok(padded.conv2d(weight, 0, stride, 1, 1)?)
        }
    }
}

/// Transposed convolution with an `in × out × k × k` kernel.
pub fn conv_transpose2d(x: &Tensor, weight: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    Ok(x.conv_transpose2d(weight, padding, 0, stride, 1)?)
}

/// Transposed convolution; the kernel is stored as `in × out × k × k`.
#[derive(Clone)]
pub struct ConvTranspose2d {
    pub weight: Var,
    pub bias: Option<Var>,
    pub stride: usize,
    pub padding: usize,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        params: &mut ParamStore,
        init: &mut Init,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        // each output pixel of a stride-s transpose conv sees in·(k/s)² weights
        let fan_in = in_channels * (kernel / stride).max(1).pow(2);
        let w = init.kaiming(&[in_channels, out_channels, kernel, kernel], fan_in, 0.0)?;
        let weight = params.insert(format!("{name}.weight"), w)?;
        let bias = if bias {
            Some(params.insert(format!("{name}.bias"), full(0.0, &[out_channels])?)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let in_channels = self.weight.dims()[0];
        if x.rank() != 4 || x.dims()[1] != in_channels {
            return Err(Error::ShapeMismatch(format!(
                "transposed conv expects {in_channels} input channels, got {:?}",
                x.dims()
            )));
        }
        let y = conv_transpose2d(x, self.weight.as_tensor(), self.stride, self.padding)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.as_tensor().reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

#[derive(Clone)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn new(
        params: &mut ParamStore,
        init: &mut Init,
        name: &str,
        in_features: usize,
        out_features: usize,
    ) -> Result<Self> {
        let w = init.kaiming(&[out_features, in_features], in_features, 0.0)?;
        let weight = params.insert(format!("{name}.weight"), w)?;
        let bias = params.insert(format!("{name}.bias"), full(0.0, &[out_features])?)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.as_tensor().t()?)?;
        Ok(y.broadcast_add(self.bias.as_tensor())?)
    }
}

/// Structural description of a model, used to assert layer-type constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    Dense,
    Pool,
}
