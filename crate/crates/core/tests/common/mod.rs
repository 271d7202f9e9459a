#![allow(dead_code)]

use candle_core::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refill::features::{FeatureConv, FeatureNetwork};
use refill::losses::LossTerms;
use refill::nn::{self, Init};

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &Tensor, h: f64, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let base = nn::to_vec(x).unwrap();
    let dims = x.dims().to_vec();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += h;
        minus[i] -= h;
        let tp = Tensor::from_vec(plus, dims.as_slice(), &nn::device()).unwrap();
        let tm = Tensor::from_vec(minus, dims.as_slice(), &nn::device()).unwrap();
        out.push((f(&tp) - f(&tm)) / (2.0 * h));
    }
    out
}

/// Autograd gradient of `f` at `x`.
pub fn autograd_gradient(x: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> Vec<f64> {
    let var = Var::from_tensor(x).unwrap();
    let y = f(var.as_tensor());
    let grads = y.backward().unwrap();
    nn::to_vec(grads.get(var.as_tensor()).expect("input receives a gradient")).unwrap()
}

/// `‖a − b‖ / max(‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Relative error between autograd and central differences for a scalar function of `x`.
pub fn gradient_check(x: &Tensor, f: impl Fn(&Tensor) -> Tensor) -> f64 {
    let analytic = autograd_gradient(x, &f);
    let numeric = numeric_gradient(x, 1e-5, |t| nn::to_scalar(&f(t)).unwrap());
    relative_error(&analytic, &numeric)
}

pub fn scalar(t: &Tensor) -> f64 {
    nn::to_scalar(t).unwrap()
}

pub fn values(t: &Tensor) -> Vec<f64> {
    nn::to_vec(t).unwrap()
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    values(a)
        .iter()
        .zip(values(b))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Bernoulli(0.6) valid-pixel masks, `B×1×H×W`.
pub fn random_mask(shape: (usize, usize, usize), seed: u64) -> Tensor {
    let (b, h, w) = shape;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..b * h * w)
        .map(|_| f64::from(u8::from(rng.random_bool(0.6))))
        .collect();
    Tensor::from_vec(data, (b, 1, h, w), &nn::device()).unwrap()
}

/// The generator objective written out with literal weights.
pub fn literal_total(t: &LossTerms) -> f64 {
    0.1 * t.adv_g + t.attr + 3.0 * t.ms_ssim + 120.0 * t.style + 0.01 * t.percep + 6.0 * t.hole + t.valid
}

/// One `(weight, bias)` conv per block for the channel chain `channels`.
pub fn random_layers(init: &mut Init, channels: &[usize]) -> Vec<(Tensor, Tensor)> {
    channels
        .windows(2)
        .map(|c| {
            (
                init.normal(&[c[1], c[0], 3, 3], 0.3).unwrap(),
                init.normal(&[c[1]], 0.1).unwrap(),
            )
        })
        .collect()
}

pub fn layered_network(layers: &[(Tensor, Tensor)]) -> FeatureNetwork {
    let blocks = layers
        .iter()
        .map(|(w, b)| {
            vec![FeatureConv {
                weight: w.clone(),
                bias: b.clone(),
            }]
        })
        .collect();
    FeatureNetwork::from_blocks(blocks).unwrap()
}

/// Plain-loop conv3×3 (pad 1) + ReLU + 2×2 max-pool, one channel-major image.
pub fn oracle_block(x: &[f64], c: usize, h: usize, w: usize, weight: &[f64], bias: &[f64], out: usize) -> Vec<f64> {
    let mut y = vec![0.0; out * h * w];
    for o in 0..out {
        for i in 0..h {
            for j in 0..w {
                let mut acc = bias[o];
                for ci in 0..c {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (yy, xx) = (i as isize + ky as isize - 1, j as isize + kx as isize - 1);
                            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let wv = weight[((o * c + ci) * 3 + ky) * 3 + kx];
                            acc += wv * x[(ci * h + yy as usize) * w + xx as usize];
                        }
                    }
                }
                y[(o * h + i) * w + j] = acc.max(0.0);
            }
        }
    }
    let (ph, pw) = (h / 2, w / 2);
    let mut pooled = vec![0.0; out * ph * pw];
    for o in 0..out {
        for i in 0..ph {
            for j in 0..pw {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(y[(o * h + 2 * i + dy) * w + 2 * j + dx]);
                    }
                }
                pooled[(o * ph + i) * pw + j] = m;
            }
        }
    }
    pooled
}

/// Mean over taps of the per-tap mean squared feature difference, computed with plain loops.
pub fn oracle_perceptual(gt: &Tensor, comp: &Tensor, layers: &[(Tensor, Tensor)]) -> f64 {
    let (b, c0, h, w) = gt.dims4().unwrap();
    let host: Vec<(Vec<f64>, Vec<f64>, usize)> = layers
        .iter()
        .map(|(wt, bs)| (values(wt), values(bs), wt.dims()[0]))
        .collect();
    let taps = |img: &[f64]| {
        let (mut x, mut c, mut side) = (img.to_vec(), c0, (h, w));
        let mut out = Vec::new();
        for (wt, bs, o) in &host {
            x = oracle_block(&x, c, side.0, side.1, wt, bs, *o);
            c = *o;
            side = (side.0 / 2, side.1 / 2);
            out.push(x.clone());
        }
        out
    };
    let (g, p) = (values(gt), values(comp));
    let plane = c0 * h * w;
    let mut sums = vec![0.0; layers.len()];
    let mut counts = vec![0usize; layers.len()];
    for i in 0..b {
        let ta = taps(&g[i * plane..(i + 1) * plane]);
        let tb = taps(&p[i * plane..(i + 1) * plane]);
        for (k, (x, y)) in ta.iter().zip(&tb).enumerate() {
            sums[k] += x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>();
            counts[k] += x.len();
        }
    }
    sums.iter().zip(&counts).map(|(s, n)| s / *n as f64).sum::<f64>() / layers.len() as f64
}
