//! Spectrally normalised WGAN-GP critic.
//!
//! Stack of 4×4/stride-2 convolutions with leaky ReLU, then a 1×1 conv summed
//! over space to one score per image. Every weight is divided by a power-iteration
//! estimate of its largest singular value.
//!
//! The gradient penalty needs `∇_x D(x)` as a differentiable function of the
//! weights. Because the critic is piecewise linear in its input, that gradient
//! is built directly as a transposed pass through the normalised weights, with
//! the activation slopes held constant.

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CRITIC_FORMAT};
use crate::error::{Error, Result};
use crate::nn::{self, Init, Padding, ParamStore};

pub const SIGMA_EPS: f64 = 1e-12;
const GRAD_NORM_EPS: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticConfig {
    pub resolution: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub slope: f64,
    /// Power iterations run once at construction.
    pub warmup_iterations: usize,
    pub seed: u64,
}

impl CriticConfig {
    pub fn full() -> Self {
        Self {
            resolution: 256,
            base_channels: 64,
            max_channels: 512,
            slope: 0.2,
            warmup_iterations: 20,
            seed: 1,
        }
    }

    pub fn desk(resolution: usize) -> Self {
        Self {
            resolution,
            base_channels: 16,
            max_channels: 128,
            ..Self::full()
        }
    }

    /// `log2(resolution) − 2`: six stages at 256 px, four at 64 px.
    pub fn stages(&self) -> usize {
        (self.resolution.max(1).ilog2() as usize).saturating_sub(2)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.resolution.is_power_of_two() || self.resolution < 8 {
            return Err(Error::Config(format!(
                "critic resolution must be a power of two ≥ 8, got {}",
                self.resolution
            )));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(Error::Config("invalid critic channel widths".into()));
        }
        Ok(())
    }
}

/// Persistent left/right singular-vector estimates for one weight.
#[derive(Debug, Clone)]
pub struct PowerVectors {
    pub u: Tensor,
    pub v: Tensor,
}

fn unit(t: &Tensor) -> Result<Tensor> {
    let norm = nn::to_scalar(&t.sqr()?.sum_all()?.sqrt()?)?;
    Ok((t / norm.max(SIGMA_EPS))?)
}

fn as_matrix(weight: &Tensor) -> Result<Tensor> {
    let rows = weight.dims()[0];
    Ok(weight.reshape((rows, ()))?)
}

impl PowerVectors {
    pub fn random(weight: &Tensor, init: &mut Init) -> Result<Self> {
        let w = as_matrix(weight)?;
        let (rows, cols) = w.dims2()?;
        Ok(Self {
            u: unit(&init.normal(&[rows], 1.0)?)?,
            v: unit(&init.normal(&[cols], 1.0)?)?,
        })
    }

    /// Runs `iterations` power-iteration steps against `weight` (no graph).
    pub fn iterate(&mut self, weight: &Tensor, iterations: usize) -> Result<()> {
        let w = as_matrix(&weight.detach())?;
        for _ in 0..iterations {
            let v = unit(&w.t()?.matmul(&self.u.unsqueeze(1)?)?.squeeze(1)?)?;
            let u = unit(&w.matmul(&v.unsqueeze(1)?)?.squeeze(1)?)?;
            self.v = v;
            self.u = u;
        }
        Ok(())
    }

    /// `uᵀ W v`, differentiable in `weight`.
    pub fn sigma(&self, weight: &Tensor) -> Result<Tensor> {
        let w = as_matrix(weight)?;
        Ok(self
            .u
            .unsqueeze(0)?
            .matmul(&w)?
            .matmul(&self.v.unsqueeze(1)?)?
            .flatten_all()?)
    }
}

/// `weight / max(σ̂, ε)` after `iterations` power-iteration updates of `vectors`.
pub fn spectral_normalize(weight: &Tensor, vectors: &mut PowerVectors, iterations: usize) -> Result<Tensor> {
    vectors.iterate(weight, iterations)?;
    normalized(weight, vectors)
}

fn normalized(weight: &Tensor, vectors: &PowerVectors) -> Result<Tensor> {
    let sigma = vectors.sigma(weight)?.maximum(SIGMA_EPS)?;
    let shape = vec![1usize; weight.rank()];
    Ok(weight.broadcast_div(&sigma.reshape(shape)?)?)
}

/// A differentiable scalar field on images, as seen by the gradient penalty.
pub trait CriticFn {
    /// One score per batch element, shape `B`.
    fn score(&self, x: &Tensor) -> Result<Tensor>;
    /// `∇_x Σ_b score(x)_b`, differentiable with respect to the critic parameters.
    fn input_gradient(&self, x: &Tensor) -> Result<Tensor>;
}

#[derive(Clone)]
struct SnConv {
    weight: Var,
    bias: Var,
    vectors: PowerVectors,
    name: String,
}

impl SnConv {
    fn new(
        params: &mut ParamStore,
        init: &mut Init,
        name: &str,
        inp: usize,
        out: usize,
        k: usize,
        slope: f64,
    ) -> Result<Self> {
        let w = init.kaiming(&[out, inp, k, k], inp * k * k, slope)?;
        let weight = params.insert(format!("{name}.weight"), w)?;
        let bias = params.insert(format!("{name}.bias"), nn::full(0.0, &[out])?)?;
        let vectors = PowerVectors::random(weight.as_tensor(), init)?;
        Ok(Self {
            weight,
            bias,
            vectors,
            name: name.to_string(),
        })
    }

    fn normalized(&self) -> Result<Tensor> {
        normalized(self.weight.as_tensor(), &self.vectors)
    }
}

#[derive(Clone)]
pub struct Critic {
    config: CriticConfig,
    params: ParamStore,
    convs: Vec<SnConv>,
    head: SnConv,
}

impl Critic {
    pub fn new(config: CriticConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut init = Init::new(config.seed);
        let mut convs = Vec::new();
        let mut in_ch = 3;
        for i in 0..config.stages() {
            let out = (config.base_channels << i).min(config.max_channels);
            convs.push(SnConv::new(
                &mut params,
                &mut init,
                &format!("critic.{}", i + 1),
                in_ch,
                out,
                4,
                config.slope,
            )?);
            in_ch = out;
        }
        let head = SnConv::new(&mut params, &mut init, "critic.head", in_ch, 1, 1, 1.0)?;
        let mut critic = Self {
            config,
            params,
            convs,
            head,
        };
        critic.power_iteration(critic.config.warmup_iterations)?;
        Ok(critic)
    }

    pub fn config(&self) -> &CriticConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Refreshes every layer's power vectors from the current weights.
    pub fn power_iteration(&mut self, iterations: usize) -> Result<()> {
        for layer in self.convs.iter_mut().chain(std::iter::once(&mut self.head)) {
            layer.vectors.iterate(layer.weight.as_tensor(), iterations)?;
        }
        Ok(())
    }

    /// Normalised weights in layer order, head last.
    pub fn normalized_weights(&self) -> Result<Vec<Tensor>> {
        self.convs
            .iter()
            .chain(std::iter::once(&self.head))
            .map(SnConv::normalized)
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let r = self.config.resolution;
        match x.dims() {
            [_, 3, h, w] if *h == r && *w == r => Ok(()),
            d => Err(Error::ShapeMismatch(format!("critic expects B×3×{r}×{r}, got {d:?}"))),
        }
    }

    /// Pre-activations of every conv stage plus the head map.
    fn forward_all(&self, x: &Tensor, weights: &[Tensor]) -> Result<(Vec<Tensor>, Tensor)> {
        let mut pre = Vec::with_capacity(self.convs.len());
        let mut h = x.clone();
        for (layer, w) in self.convs.iter().zip(weights) {
            let z = nn::conv2d(&h, w, 2, 1, Padding::Zeros)?.broadcast_add(&layer.bias.as_tensor().reshape((
                1,
                (),
                1,
                1,
            ))?)?;
            h = nn::leaky_relu(&z, self.config.slope)?;
            pre.push(z);
        }
        let head_w = weights.last().expect("head weight");
        let map = nn::conv2d(&h, head_w, 1, 0, Padding::Zeros)?
            .broadcast_add(&self.head.bias.as_tensor().reshape((1, 1, 1, 1))?)?;
        Ok((pre, map))
    }
}

impl CriticFn for Critic {
    fn score(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let weights = self.normalized_weights()?;
        let (_, map) = self.forward_all(x, &weights)?;
        let b = x.dims()[0];
        Ok(map.reshape((b, ()))?.sum(1)?)
    }

    fn input_gradient(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let weights = self.normalized_weights()?;
        let (pre, map) = self.forward_all(&x.detach(), &weights)?;
        let ones = Tensor::ones(map.shape(), nn::DTYPE, &nn::device())?;
        let mut g = nn::conv_transpose2d(&ones, weights.last().expect("head"), 1, 0)?;
        for (z, w) in pre.iter().zip(&weights).rev() {
            g = (g * nn::leaky_relu_slope(z, self.config.slope)?)?;
            g = nn::conv_transpose2d(&g, w, 2, 1)?;
        }
        Ok(g)
    }
}

impl Critic {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<String> {
        let mut tensors = self.params.named_tensors();
        for layer in self.convs.iter().chain(std::iter::once(&self.head)) {
            tensors.push((format!("{}.sn_u", layer.name), layer.vectors.u.clone()));
            tensors.push((format!("{}.sn_v", layer.name), layer.vectors.v.clone()));
        }
        checkpoint::write_archive(
            path,
            CRITIC_FORMAT,
            Some(serde_json::to_string(&self.config)?),
            BTreeMap::new(),
            &tensors,
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let archive = checkpoint::read_archive(path, Some(CRITIC_FORMAT))?;
        let mut critic = Self::new(archive.config(path)?)?;
        let mut params = BTreeMap::new();
        for (name, t) in &archive.tensors {
            if !name.ends_with(".sn_u") && !name.ends_with(".sn_v") {
                params.insert(name.clone(), t.clone());
            }
        }
        critic.params.assign(&params)?;
        for layer in critic.convs.iter_mut().chain(std::iter::once(&mut critic.head)) {
            let get = |suffix: &str| {
                archive
                    .tensors
                    .get(&format!("{}.{suffix}", layer.name))
                    .cloned()
                    .ok_or_else(|| Error::checkpoint(path, format!("missing power vector for {}", layer.name)))
            };
            layer.vectors = PowerVectors {
                u: get("sn_u")?,
                v: get("sn_v")?,
            };
        }
        Ok(critic)
    }
}

/// One interpolation coefficient per sample, uniform on `[0, 1)`.
pub fn sample_epsilon(batch: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let eps: Vec<f64> = (0..batch).map(|_| rng.random::<f64>()).collect();
    Ok(Tensor::from_vec(eps, batch, &nn::device())?)
}

/// `λ · mean_b (‖∇ D(x̂_b)‖₂ − 1)²` with `x̂ = ε·real + (1 − ε)·fake`.
pub fn gradient_penalty(
    critic: &dyn CriticFn,
    real: &Tensor,
    fake: &Tensor,
    lambda: f64,
    epsilon: &Tensor,
) -> Result<Tensor> {
    nn::check_same_shape("gradient penalty", real, fake)?;
    let b = real.dims()[0];
    if epsilon.dims() != [b] {
        return Err(Error::ShapeMismatch(format!(
            "epsilon {:?} for a batch of {b}",
            epsilon.dims()
        )));
    }
    let shape: Vec<usize> = std::iter::once(b)
        .chain(std::iter::repeat_n(1, real.rank() - 1))
        .collect();
    let eps = epsilon.reshape(shape)?;
    let real = real.detach();
    let fake = fake.detach();
    let interp = (real.broadcast_mul(&eps)? + fake.broadcast_mul(&eps.affine(-1.0, 1.0)?)?)?;
    let grad = critic.input_gradient(&interp)?;
    let norm = (grad.reshape((b, ()))?.sqr()?.sum(1)? + GRAD_NORM_EPS)?.sqrt()?;
    Ok(((norm - 1.0)?.sqr()?.mean_all()? * lambda)?)
}

/// Closed-form critics for checking the penalty.
pub mod testing {
    use super::*;

    /// `D(x) = scale · ⟨w, x⟩`.
    pub struct LinearCritic {
        pub w: Tensor,
        pub scale: f64,
    }

    impl LinearCritic {
        /// Random unit-norm direction over `C×H×W` images.
        pub fn unit(shape: &[usize], scale: f64, seed: u64) -> Result<Self> {
            let w = Init::new(seed).normal(shape, 1.0)?;
            Ok(Self { w: unit(&w)?, scale })
        }
    }

    impl CriticFn for LinearCritic {
        fn score(&self, x: &Tensor) -> Result<Tensor> {
            let b = x.dims()[0];
            Ok((x.broadcast_mul(&self.w.unsqueeze(0)?)?.reshape((b, ()))?.sum(1)? * self.scale)?)
        }

        fn input_gradient(&self, x: &Tensor) -> Result<Tensor> {
            Ok((self.w.unsqueeze(0)?.broadcast_as(x.shape())? * self.scale)?)
        }
    }

    /// `D(x) = c`.
    pub struct ConstantCritic(pub f64);

    impl CriticFn for ConstantCritic {
        fn score(&self, x: &Tensor) -> Result<Tensor> {
            nn::full(self.0, &[x.dims()[0]])
        }

        fn input_gradient(&self, x: &Tensor) -> Result<Tensor> {
            Ok(x.zeros_like()?)
        }
    }
}
