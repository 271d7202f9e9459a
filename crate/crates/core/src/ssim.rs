//! Differentiable SSIM and multi-scale SSIM over `[-1, 1]` images.
//!
//! Images are shifted to `[0, 1]` (`L = 1`) and filtered with a separable
//! Gaussian window using valid convolution.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Padding};

/// Per-scale exponents of the five-scale MS-SSIM.
pub const STANDARD_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    /// One exponent per scale, finest first.
    pub weights: Vec<f64>,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            c1: 0.01f64.powi(2),
            c2: 0.03f64.powi(2),
            weights: STANDARD_WEIGHTS.to_vec(),
        }
    }
}

impl SsimConfig {
    /// Keeps the first `scales` standard exponents, renormalised to sum to one.
    pub fn with_scales(mut self, scales: usize) -> Result<Self> {
        if scales == 0 || scales > STANDARD_WEIGHTS.len() {
            return Err(Error::InvalidArgument(format!(
                "MS-SSIM supports 1..={} scales, got {scales}",
                STANDARD_WEIGHTS.len()
            )));
        }
        let kept = &STANDARD_WEIGHTS[..scales];
        let sum: f64 = kept.iter().sum();
        self.weights = kept.iter().map(|w| w / sum).collect();
        Ok(self)
    }

    pub fn with_window(mut self, window: usize, sigma: f64) -> Self {
        self.window = window;
        self.sigma = sigma;
        self
    }

    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    /// Largest number of scales (≤ 5) usable on images of side `side`.
    pub fn max_scales(side: usize, window: usize) -> usize {
        (1..=STANDARD_WEIGHTS.len())
            .rev()
            .find(|s| side >= (1 << (s - 1)) * window)
            .unwrap_or(0)
    }

    /// Default window with as many standard scales as `side` supports.
    pub fn for_side(side: usize) -> Result<Self> {
        let cfg = Self::default();
        let scales = Self::max_scales(side, cfg.window);
        if scales == 0 {
            return Err(Error::InvalidArgument(format!(
                "a {side} px image is smaller than the {} px SSIM window",
                cfg.window
            )));
        }
        cfg.with_scales(scales)
    }

    fn check_side(&self, height: usize, width: usize) -> Result<()> {
        let needed = (1usize << (self.scales() - 1)) * self.window;
        if height < needed || width < needed {
            let fits = Self::max_scales(height.min(width), self.window);
            return Err(Error::InvalidArgument(format!(
                "{height}×{width} images are too small for {} SSIM scales with an {}-px window \
                 (need {needed} px); use {fits} scales or fewer",
                self.scales(),
                self.window
            )));
        }
        Ok(())
    }
}

pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Valid separable Gaussian filtering of every channel independently.
fn blur(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let k = kernel.dims1()?;
    let flat = x.reshape((b * c, 1, h, w))?;
    let horizontal = nn::conv2d(&flat, &kernel.reshape((1, 1, 1, k))?, 1, 0, Padding::Zeros)?;
    let both = nn::conv2d(&horizontal, &kernel.reshape((1, 1, k, 1))?, 1, 0, Padding::Zeros)?;
    let (_, _, oh, ow) = both.dims4()?;
    Ok(both.reshape((b, c, oh, ow))?)
}

/// Per-image `(ssim, cs)` means for images already in `[0, 1]`.
fn components(x: &Tensor, y: &Tensor, cfg: &SsimConfig, kernel: &Tensor) -> Result<(Tensor, Tensor)> {
    let mu_x = blur(x, kernel)?;
    let mu_y = blur(y, kernel)?;
    let mu_xx = mu_x.sqr()?;
    let mu_yy = mu_y.sqr()?;
    let mu_xy = (&mu_x * &mu_y)?;
    let sigma_xx = (blur(&x.sqr()?, kernel)? - &mu_xx)?;
    let sigma_yy = (blur(&y.sqr()?, kernel)? - &mu_yy)?;
    let sigma_xy = (blur(&(x * y)?, kernel)? - &mu_xy)?;
    let cs_map = ((sigma_xy.affine(2.0, cfg.c2))? / (sigma_xx + sigma_yy)?.affine(1.0, cfg.c2)?)?;
    let lum_map = (mu_xy.affine(2.0, cfg.c1)? / (mu_xx + mu_yy)?.affine(1.0, cfg.c1)?)?;
    let ssim_map = (lum_map * &cs_map)?;
    let b = x.dims()[0];
    let mean = |t: Tensor| -> Result<Tensor> { Ok(t.reshape((b, ()))?.mean(1)?) };
    Ok((mean(ssim_map)?, mean(cs_map)?))
}

fn check_pair(x: &Tensor, y: &Tensor) -> Result<(usize, usize)> {
    nn::check_same_shape("ssim", x, y)?;
    let (_, _, h, w) = x
        .dims4()
        .map_err(|_| Error::ShapeMismatch(format!("ssim expects B×C×H×W images, got {:?}", x.dims())))?;
    Ok((h, w))
}

fn to_unit(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(0.5, 0.5)?)
}

fn kernel(cfg: &SsimConfig) -> Result<Tensor> {
    Ok(Tensor::from_vec(
        gaussian_window(cfg.window, cfg.sigma),
        cfg.window,
        &nn::device(),
    )?)
}

/// Single-scale SSIM per image (`B`) for `[-1, 1]` inputs.
pub fn ssim(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    let (h, w) = check_pair(x, y)?;
    if h < cfg.window || w < cfg.window {
        return Err(Error::InvalidArgument(format!(
            "{h}×{w} images are smaller than the {}-px SSIM window",
            cfg.window
        )));
    }
    Ok(components(&to_unit(x)?, &to_unit(y)?, cfg, &kernel(cfg)?)?.0)
}

/// Multi-scale SSIM per image (`B`) for `[-1, 1]` inputs.
pub fn ms_ssim(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    let (h, w) = check_pair(x, y)?;
    cfg.check_side(h, w)?;
    let k = kernel(cfg)?;
    let mut x = to_unit(x)?;
    let mut y = to_unit(y)?;
    let last = cfg.scales() - 1;
    let mut product: Option<Tensor> = None;
    for (scale, weight) in cfg.weights.iter().enumerate() {
        let (s, cs) = components(&x, &y, cfg, &k)?;
        let term = if scale == last { s } else { cs };
        let factor = term.maximum(FLOOR)?.powf(*weight)?;
        product = Some(match product {
            Some(p) => (p * factor)?,
            None => factor,
        });
        if scale != last {
            x = x.avg_pool2d(2)?;
            y = y.avg_pool2d(2)?;
        }
    }
    Ok(product.expect("at least one scale"))
}

/// `1 − mean_b MS-SSIM(x_b, y_b)`.
pub fn ms_ssim_loss(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<Tensor> {
    Ok(ms_ssim(x, y, cfg)?.mean_all()?.affine(-1.0, 1.0)?)
}
