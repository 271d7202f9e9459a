//! Scores a model against gray-fill and noise baselines per hole-ratio bucket and writes the report.
//!
//! cargo run --release --example evaluate -- [checkpoint_dir] [out_dir]

use std::path::PathBuf;

use anyhow::Result;
use refill::evaluator::{self, Bucket, EvalConfig, GrayFill, RandomNoise};
use refill::generator::{Generator, Inpainter};
use refill::inference::GENERATOR_FILE;
use refill::optim::AdamConfig;
use refill::synthetic;
use refill::trainer::{self, TrainConfig};

fn generator(checkpoint: Option<String>) -> Result<Generator> {
    if let Some(dir) = checkpoint.filter(|d| d != "-") {
        return Ok(Generator::load(PathBuf::from(dir).join(GENERATOR_FILE))?);
    }
    eprintln!("no checkpoint given; training a 32 px model for 200 steps");
    let config = TrainConfig {
        resolution: 32,
        total_steps: 200,
        ssim_scales: Some(2),
        adam_generator: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    Ok(trainer::train(&config, &synthetic::corpus(32, 32, 0)?)?.0.generator)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let model = generator(args.next())?;
    let out: PathBuf = args.next().unwrap_or_else(|| "eval".into()).into();

    let side = model.config().resolution;
    let test = synthetic::corpus(32, side, 1_000_003)?;
    let indices: Vec<usize> = (0..test.len()).collect();
    let mut buckets = Bucket::standard();
    buckets.push(Bucket::Quickdraw);
    let config = EvalConfig {
        buckets,
        seed: 7,
        ..EvalConfig::default()
    };

    let candidates: [(&str, &dyn Inpainter); 3] = [
        ("model", &model),
        ("gray fill", &GrayFill),
        ("noise", &RandomNoise { seed: 5 }),
    ];
    println!(
        "{:<10} {}",
        "",
        config.buckets.iter().map(|b| format!("{b:>10}")).collect::<String>()
    );
    for (name, candidate) in candidates {
        let report = evaluator::evaluate(candidate, &test, &indices, &config, None)?;
        println!(
            "{name:<10} {}",
            report
                .buckets
                .iter()
                .map(|b| format!("{:>10.4}", b.ssim))
                .collect::<String>()
        );
        if name == "model" {
            report.write(&out)?;
        }
    }
    println!("model report written to {}", out.display());
    Ok(())
}
