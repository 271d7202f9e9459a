mod common;

use common::{gradient_check, scalar, values};
use proptest::prelude::*;
use refill::nn::{self, Init};
use refill::ssim::{self, SsimConfig};

/// Direct 2-D window SSIM over one `[0, 1]` plane, returning the mean SSIM and CS maps.
fn oracle_plane(x: &[f64], y: &[f64], h: usize, w: usize, window: usize, sigma: f64) -> (f64, f64) {
    let c = (window as f64 - 1.0) / 2.0;
    let mut k = vec![0.0; window * window];
    for i in 0..window {
        for j in 0..window {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            k[i * window + j] = (-d2 / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (oh, ow) = (h - window + 1, w - window + 1);
    let (mut s_sum, mut cs_sum) = (0.0, 0.0);
    for i in 0..oh {
        for j in 0..ow {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for a in 0..window {
                for b in 0..window {
                    let g = k[a * window + b];
                    let (p, q) = (x[(i + a) * w + j + b], y[(i + a) * w + j + b]);
                    mx += g * p;
                    my += g * q;
                    xx += g * p * p;
                    yy += g * q * q;
                    xy += g * p * q;
                }
            }
            let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
            let cs = (2.0 * cov + c2) / (vx + vy + c2);
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            s_sum += l * cs;
            cs_sum += cs;
        }
    }
    let n = (oh * ow) as f64;
    (s_sum / n, cs_sum / n)
}

fn oracle_ssim(x: &[f64], y: &[f64], c: usize, h: usize, w: usize) -> f64 {
    let plane = h * w;
    let unit = |v: &[f64]| v.iter().map(|p| 0.5 * p + 0.5).collect::<Vec<_>>();
    let (x, y) = (unit(x), unit(y));
    (0..c)
        .map(|ch| {
            oracle_plane(
                &x[ch * plane..(ch + 1) * plane],
                &y[ch * plane..(ch + 1) * plane],
                h,
                w,
                11,
                1.5,
            )
            .0
        })
        .sum::<f64>()
        / c as f64
}

#[test]
fn ssim_matches_direct_window_oracle_on_five_pairs() {
    for seed in 0..5u64 {
        let mut init = Init::new(seed);
        let x = init.uniform(&[1, 3, 24, 20], -1.0, 1.0).unwrap();
        let y = (&x * 0.6).unwrap() + init.uniform(&[1, 3, 24, 20], -0.4, 0.4).unwrap();
        let y = y.unwrap();
        let got = scalar(&ssim::ssim(&x, &y, &SsimConfig::default()).unwrap().mean_all().unwrap());
        let want = oracle_ssim(&values(&x), &values(&y), 3, 24, 20);
        assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn gray_plus_tiny_noise_is_near_zero_but_positive() {
    let gray = nn::full(0.0, &[2, 3, 32, 32]).unwrap();
    let noisy = (&gray + Init::new(3).uniform(&[2, 3, 32, 32], -1e-3, 1e-3).unwrap()).unwrap();
    let cfg = SsimConfig::for_side(32).unwrap();
    let loss = scalar(&ssim::ms_ssim_loss(&noisy, &gray, &cfg).unwrap());
    assert!(loss > 0.0 && loss < 1e-2, "{loss}");
}

#[test]
fn ms_ssim_gradient_on_8x8_matches_finite_differences() {
    let cfg = SsimConfig::default().with_window(3, 1.5).with_scales(2).unwrap();
    for seed in 0..3u64 {
        let mut init = Init::new(100 + seed);
        let x = init.uniform(&[1, 3, 8, 8], -1.0, 1.0).unwrap();
        let y = init.uniform(&[1, 3, 8, 8], -1.0, 1.0).unwrap();
        let err = gradient_check(&x, |t| ssim::ms_ssim_loss(t, &y, &cfg).unwrap());
        assert!(err < 1e-3, "seed {seed}: {err}");
    }
}

#[test]
fn pyramid_too_deep_for_image_suggests_fewer_scales() {
    let x = nn::full(0.0, &[1, 3, 64, 64]).unwrap();
    let cfg = SsimConfig::default().with_scales(5).unwrap();
    let err = ssim::ms_ssim_loss(&x, &x, &cfg).unwrap_err().to_string();
    assert!(err.contains("3 scales or fewer"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn self_similarity_loss_is_zero(seed in any::<u64>()) {
        let x = Init::new(seed).uniform(&[2, 3, 32, 32], -1.0, 1.0).unwrap();
        let cfg = SsimConfig::for_side(32).unwrap();
        prop_assert!(scalar(&ssim::ms_ssim_loss(&x, &x, &cfg).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn loss_is_symmetric(seed in any::<u64>()) {
        let mut init = Init::new(seed);
        let a = init.uniform(&[2, 3, 32, 32], -1.0, 1.0).unwrap();
        let b = init.uniform(&[2, 3, 32, 32], -1.0, 1.0).unwrap();
        let cfg = SsimConfig::for_side(32).unwrap();
        let ab = scalar(&ssim::ms_ssim_loss(&a, &b, &cfg).unwrap());
        let ba = scalar(&ssim::ms_ssim_loss(&b, &a, &cfg).unwrap());
        prop_assert!((ab - ba).abs() < 1e-7);
    }

    #[test]
    fn single_scale_ssim_is_bounded(seed in any::<u64>()) {
        let mut init = Init::new(seed);
        let a = init.uniform(&[1, 3, 16, 16], -1.0, 1.0).unwrap();
        let b = init.uniform(&[1, 3, 16, 16], -1.0, 1.0).unwrap();
        let s = scalar(&ssim::ssim(&a, &b, &SsimConfig::default()).unwrap().mean_all().unwrap());
        prop_assert!((-1.0..=1.0).contains(&s));
    }
}
