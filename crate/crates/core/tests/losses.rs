mod common;

use candle_core::Tensor;
use common::{gradient_check, literal_total, random_mask, scalar};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refill::features::{gram, FeatureConv, FeatureNetwork};
use refill::losses::{self, LossTerms, LossWeights, Term};
use refill::mask;
use refill::nn::{self, Init};

#[test]
fn hole_plus_valid_is_mean_l1_on_200_triples() {
    for seed in 0..200u64 {
        let mut init = Init::new(seed);
        let gt = init.uniform(&[2, 3, 12, 12], -1.0, 1.0).unwrap();
        let recon = init.uniform(&[2, 3, 12, 12], -1.0, 1.0).unwrap();
        let m = random_mask((2, 12, 12), seed);
        let masked = mask::apply_mask(&gt, &m).unwrap();
        let hole = scalar(&losses::loss_hole(&recon, &gt, &m).unwrap());
        let valid = scalar(&losses::loss_valid(&recon, &masked, &m).unwrap());
        let direct: f64 = common::values(&recon)
            .iter()
            .zip(common::values(&gt))
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / recon.elem_count() as f64;
        assert!((hole + valid - direct).abs() < 1e-6, "seed {seed}");
    }
}

#[test]
fn total_is_the_literal_weighted_sum_on_200_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let weights = LossWeights::default();
    for _ in 0..200 {
        let mut r = || rng.random_range(-2.0..2.0f64);
        let terms = LossTerms {
            hole: r().abs(),
            valid: r().abs(),
            percep: r().abs(),
            style: r().abs(),
            ms_ssim: r().abs(),
            attr: r().abs(),
            adv_g: r(),
        };
        let total = losses::total_loss(&terms, &weights).unwrap();
        assert!((total - literal_total(&terms)).abs() < 1e-6);
    }
}

#[test]
fn l1_gradients_match_finite_differences() {
    let mut init = Init::new(11);
    let gt = init.uniform(&[1, 3, 8, 8], -1.0, 1.0).unwrap();
    let recon = init.uniform(&[1, 3, 8, 8], -1.0, 1.0).unwrap();
    let m = random_mask((1, 8, 8), 3);
    let masked = mask::apply_mask(&gt, &m).unwrap();
    assert!(gradient_check(&recon, |x| losses::loss_hole(x, &gt, &m).unwrap()) < 1e-3);
    assert!(gradient_check(&recon, |x| losses::loss_valid(x, &masked, &m).unwrap()) < 1e-3);
}

#[test]
fn perceptual_and_style_gradients_match_finite_differences() {
    // positive biases keep activations off the relu kink and away from pooling ties
    let mut init = Init::new(12);
    let conv = |init: &mut Init, out: usize, inp: usize| FeatureConv {
        weight: init.normal(&[out, inp, 3, 3], 0.2).unwrap(),
        bias: init.uniform(&[out], 0.5, 1.0).unwrap(),
    };
    let blocks = vec![vec![conv(&mut init, 4, 3)], vec![conv(&mut init, 6, 4)]];
    let net = FeatureNetwork::from_blocks(blocks).unwrap();
    let gt = init.uniform(&[1, 3, 8, 8], -1.0, 1.0).unwrap();
    let comp = init.uniform(&[1, 3, 8, 8], -1.0, 1.0).unwrap();
    let p = gradient_check(&comp, |x| losses::loss_perceptual(&gt, x, &net).unwrap());
    let s = gradient_check(&comp, |x| losses::loss_style(&gt, x, &net).unwrap());
    assert!(p < 1e-3, "perceptual {p}");
    assert!(s < 1e-3, "style {s}");
}

#[test]
fn ms_ssim_gradient_matches_finite_differences() {
    let cfg = refill::ssim::SsimConfig::default()
        .with_window(3, 1.5)
        .with_scales(2)
        .unwrap();
    let mut init = Init::new(13);
    let gt = init.uniform(&[2, 3, 8, 8], -1.0, 1.0).unwrap();
    let recon = init.uniform(&[2, 3, 8, 8], -1.0, 1.0).unwrap();
    let err = gradient_check(&recon, |x| losses::loss_ms_ssim(x, &gt, &cfg).unwrap());
    assert!(err < 1e-3, "{err}");
}

#[test]
fn identical_inputs_give_zero_feature_losses() {
    let net = FeatureNetwork::random(4, 1).unwrap();
    let x = Init::new(1).uniform(&[2, 3, 16, 16], -1.0, 1.0).unwrap();
    assert_eq!(scalar(&losses::loss_perceptual(&x, &x, &net).unwrap()), 0.0);
    assert_eq!(scalar(&losses::loss_style(&x, &x, &net).unwrap()), 0.0);
}

#[test]
fn perceptual_loss_ignores_batch_order() {
    let net = FeatureNetwork::random(4, 1).unwrap();
    let mut init = Init::new(2);
    let a = init.uniform(&[3, 3, 16, 16], -1.0, 1.0).unwrap();
    let b = init.uniform(&[3, 3, 16, 16], -1.0, 1.0).unwrap();
    let perm = Tensor::new(&[2u32, 0, 1], &nn::device()).unwrap();
    let pa = a.index_select(&perm, 0).unwrap();
    let pb = b.index_select(&perm, 0).unwrap();
    let v1 = scalar(&losses::loss_perceptual(&a, &b, &net).unwrap());
    let v2 = scalar(&losses::loss_perceptual(&pa, &pb, &net).unwrap());
    assert!((v1 - v2).abs() < 1e-12);
}

#[test]
fn perceptual_loss_matches_a_two_layer_oracle() {
    let mut init = Init::new(21);
    let layers = common::random_layers(&mut init, &[3, 4, 5]);
    let net = common::layered_network(&layers);
    let gt = init.uniform(&[2, 3, 8, 8], -1.0, 1.0).unwrap();
    let comp = init.uniform(&[2, 3, 8, 8], -1.0, 1.0).unwrap();
    let got = scalar(&losses::loss_perceptual(&gt, &comp, &net).unwrap());
    let want = common::oracle_perceptual(&gt, &comp, &layers);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn style_distance_is_invariant_to_shared_channel_permutation() {
    let mut init = Init::new(4);
    let fa = init.normal(&[2, 5, 4, 4], 1.0).unwrap();
    let fb = init.normal(&[2, 5, 4, 4], 1.0).unwrap();
    let perm = Tensor::new(&[3u32, 0, 4, 1, 2], &nn::device()).unwrap();
    let dist = |a: &Tensor, b: &Tensor| {
        scalar(
            &(gram(a).unwrap() - gram(b).unwrap())
                .unwrap()
                .sqr()
                .unwrap()
                .sum_all()
                .unwrap(),
        )
    };
    let d1 = dist(&fa, &fb);
    let d2 = dist(&fa.index_select(&perm, 1).unwrap(), &fb.index_select(&perm, 1).unwrap());
    assert!((d1 - d2).abs() < 1e-10);
}

fn min_eigenvalue(g: &Tensor) -> f64 {
    let c = g.dims()[0];
    let m = nalgebra::DMatrix::from_row_slice(c, c, &common::values(g));
    nalgebra::SymmetricEigen::new(m).eigenvalues.min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gram_matrices_are_positive_semidefinite(seed in any::<u64>(), c in 1usize..8, hw in 1usize..6) {
        let f = Init::new(seed).normal(&[1, c, hw, hw], 1.0).unwrap();
        let g = gram(&f).unwrap().squeeze(0).unwrap();
        prop_assert!(min_eigenvalue(&g) >= -1e-8);
        let gv = common::values(&g);
        for i in 0..c {
            for j in 0..c {
                prop_assert!((gv[i * c + j] - gv[j * c + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reconstruction_losses_are_nonnegative(seed in any::<u64>()) {
        let mut init = Init::new(seed);
        let gt = init.uniform(&[1, 3, 8, 8], -1.0, 1.0).unwrap();
        let recon = init.uniform(&[1, 3, 8, 8], -1.0, 1.0).unwrap();
        let m = random_mask((1, 8, 8), seed);
        let masked = mask::apply_mask(&gt, &m).unwrap();
        prop_assert!(scalar(&losses::loss_hole(&recon, &gt, &m).unwrap()) >= 0.0);
        prop_assert!(scalar(&losses::loss_valid(&recon, &masked, &m).unwrap()) >= 0.0);
        prop_assert_eq!(scalar(&losses::loss_hole(&gt, &gt, &m).unwrap()), 0.0);
    }

    #[test]
    fn weighted_total_is_linear_in_each_term(seed in any::<u64>(), k in 0usize..7) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..7).map(|_| rng.random_range(0.0..1.0)).collect();
        let make = |v: &[f64]| LossTerms { hole: v[0], valid: v[1], percep: v[2], style: v[3], ms_ssim: v[4], attr: v[5], adv_g: v[6] };
        let w = LossWeights::default();
        let t0 = losses::total_loss(&make(&v), &w).unwrap();
        v[k] += 1.0;
        let t1 = losses::total_loss(&make(&v), &w).unwrap();
        let term = [Term::Hole, Term::Valid, Term::Percep, Term::Style, Term::MsSsim, Term::Attr, Term::Adv][k];
        prop_assert!((t1 - t0 - w.effective(term)).abs() < 1e-9);
    }
}
