//! Completes one masked face several times under random attribute vectors.
//!
//! cargo run --release --example pluralistic -- [checkpoint_dir] [k] [out_dir]

use std::fs;
use std::path::PathBuf;

use anyhow::Result;
use refill::dataset::ATTRIBUTE_NAMES;
use refill::inference::{self, InferenceModel};
use refill::mask::{self, MaskSpec};
use refill::optim::AdamConfig;
use refill::synthetic;
use refill::trainer::{self, TrainConfig};

fn model(checkpoint: Option<String>) -> Result<InferenceModel> {
    if let Some(dir) = checkpoint.filter(|d| d != "-") {
        return Ok(InferenceModel::load(dir)?);
    }
    eprintln!("no checkpoint given; training a 32 px model for 120 steps");
    let config = TrainConfig {
        resolution: 32,
        total_steps: 120,
        adam_generator: AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    let (snap, _) = trainer::train(&config, &synthetic::corpus(32, 32, 0)?)?;
    Ok(InferenceModel::new(snap.generator, snap.extractor, "quick")?)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let model = model(args.next())?;
    let k: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(6);
    let out: PathBuf = args.next().unwrap_or_else(|| "pluralistic".into()).into();
    fs::create_dir_all(&out)?;

    let side = model.resolution();
    let face = synthetic::corpus(1, side, 77)?.get(0).image.unsqueeze(0)?;
    let hole = mask::generate_combined_mask(&MaskSpec::new(side, side, 3).with_bucket(0.3, 0.4))?;
    let m = hole.to_tensor()?;
    fs::write(
        out.join("input.png"),
        inference::encode_png(&mask::apply_mask(&face, &m)?)?,
    )?;

    for (i, (image, attrs)) in model.sample(&face, &m, k, 2024)?.iter().enumerate() {
        let on: Vec<&str> = ATTRIBUTE_NAMES
            .iter()
            .zip(attrs.values())
            .filter(|(_, v)| **v >= 0.5)
            .map(|(n, _)| *n)
            .collect();
        let path = out.join(format!("sample-{i}.png"));
        fs::write(&path, inference::encode_png(image)?)?;
        println!("{}: {}", path.display(), on.join(", "));
    }
    Ok(())
}
