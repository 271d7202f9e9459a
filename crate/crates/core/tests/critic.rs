mod common;

use candle_core::Tensor;
use common::{scalar, values};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use refill::critic::{
    gradient_penalty, sample_epsilon, spectral_normalize, Critic, CriticConfig, CriticFn, PowerVectors,
};
use refill::features::FeatureSource;
use refill::nn::{self, Init};
use refill::synthetic;
use refill::trainer::{self, TrainConfig, TrainingSnapshot};

fn largest_singular(w: &Tensor) -> f64 {
    let rows = w.dims()[0];
    let data = values(w);
    DMatrix::from_row_slice(rows, data.len() / rows, &data)
        .singular_values()
        .max()
}

#[test]
fn scores_stay_finite_over_1000_draws() {
    let critic = Critic::new(CriticConfig::desk(16)).unwrap();
    let mut init = Init::new(77);
    for _ in 0..10 {
        let x = init.uniform(&[100, 3, 16, 16], -1.0, 1.0).unwrap();
        assert!(values(&critic.score(&x).unwrap()).iter().all(|s| s.is_finite()));
    }
}

#[test]
fn scoring_is_deterministic() {
    let critic = Critic::new(CriticConfig::desk(16)).unwrap();
    let x = Init::new(1).uniform(&[3, 3, 16, 16], -1.0, 1.0).unwrap();
    assert_eq!(values(&critic.score(&x).unwrap()), values(&critic.score(&x).unwrap()));
}

#[test]
fn zero_weight_is_guarded() {
    let w = nn::full(0.0, &[2, 2]).unwrap();
    let mut pv = PowerVectors::random(&w, &mut Init::new(0)).unwrap();
    let n = spectral_normalize(&w, &mut pv, 3).unwrap();
    assert!(values(&n).iter().all(|v| *v == 0.0));
}

#[test]
fn unit_sigma_weight_is_a_fixed_point() {
    let w = Tensor::new(&[[1.0f64, 0.0], [0.0, 0.5]], &nn::device()).unwrap();
    let mut pv = PowerVectors::random(&w, &mut Init::new(2)).unwrap();
    let n = spectral_normalize(&w, &mut pv, 20).unwrap();
    assert!(common::max_abs_diff(&n, &w) < 1e-6);
}

#[test]
fn critic_layers_stay_normalized_after_a_train_step() {
    let cfg = TrainConfig {
        resolution: 32,
        batch_size: 2,
        ssim_scales: Some(1),
        features: FeatureSource::Random { width: 4, seed: 1 },
        ..TrainConfig::default()
    };
    let corpus = synthetic::corpus(4, 32, 0).unwrap();
    let mut snap = TrainingSnapshot::new(cfg.clone()).unwrap();
    let batch = trainer::make_batch(&corpus, &[0, 1, 2, 3], &cfg, 0).unwrap();
    snap.train_step(&batch).unwrap();
    for w in snap.critic.normalized_weights().unwrap() {
        let s = largest_singular(&w);
        assert!((0.95..=1.05).contains(&s), "{s}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spectral_normalization_ignores_positive_scale(seed in any::<u64>(), c in 0.01f64..100.0) {
        let w = Init::new(seed).normal(&[4, 6], 1.0).unwrap();
        let mut a = PowerVectors::random(&w, &mut Init::new(seed ^ 1)).unwrap();
        let mut b = a.clone();
        let na = spectral_normalize(&w, &mut a, 50).unwrap();
        let nb = spectral_normalize(&(&w * c).unwrap(), &mut b, 50).unwrap();
        prop_assert!(common::max_abs_diff(&na, &nb) < 1e-4);
    }

    #[test]
    fn random_2x2_reaches_unit_sigma(seed in any::<u64>()) {
        let w = Init::new(seed).normal(&[2, 2], 1.0).unwrap();
        let sv = DMatrix::from_row_slice(2, 2, &values(&w)).singular_values();
        // power iteration converges at rate σ₂/σ₁
        prop_assume!(sv.min() < 0.8 * sv.max());
        let mut pv = PowerVectors::random(&w, &mut Init::new(seed ^ 7)).unwrap();
        let n = spectral_normalize(&w, &mut pv, 50).unwrap();
        let s = largest_singular(&n);
        prop_assert!((0.999..=1.001).contains(&s), "{}", s);
    }

    #[test]
    fn gradient_penalty_is_nonnegative(seed in any::<u64>(), lambda in 0.0f64..20.0) {
        let critic = Critic::new(CriticConfig { seed, ..CriticConfig::desk(8) }).unwrap();
        let mut init = Init::new(seed);
        let real = init.uniform(&[2, 3, 8, 8], -1.0, 1.0).unwrap();
        let fake = init.uniform(&[2, 3, 8, 8], -1.0, 1.0).unwrap();
        let eps = sample_epsilon(2, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let gp = scalar(&gradient_penalty(&critic, &real, &fake, lambda, &eps).unwrap());
        prop_assert!(gp >= 0.0 && gp.is_finite());
        let grad = critic.input_gradient(&real).unwrap();
        prop_assert_eq!(grad.dims(), real.dims());
    }
}
