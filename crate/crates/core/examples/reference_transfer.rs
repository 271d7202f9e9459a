//! Fills a target face's hole with the attributes Ext reads off a reference face.
//!
//! cargo run --release --example reference_transfer -- [checkpoint_dir] [out_dir]

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
    let out: PathBuf = args.next().unwrap_or_else(|| "transfer".into()).into();
    fs::create_dir_all(&out)?;

    let side = model.resolution();
    let faces = synthetic::corpus(2, side, 5150)?;
    let target = faces.get(0).image.unsqueeze(0)?;
    let reference = faces.get(1).image.unsqueeze(0)?;
    let m = mask::generate_combined_mask(&MaskSpec::new(side, side, 8).with_bucket(0.2, 0.3))?.to_tensor()?;

    let read = model.extract(&reference)?;
    println!("{:<20} {:>6} {:>6}", "attribute", "label", "Ext");
    for (i, name) in ATTRIBUTE_NAMES.iter().enumerate() {
        println!(
            "{name:<20} {:>6.0} {:>6.2}",
            faces.get(1).attributes.values()[i],
            read.values()[i]
        );
    }

    let own = model.extract(&target)?;
    let completions = model.complete(&target, &m, &[own, read])?;
    fs::write(
        out.join("target-masked.png"),
        inference::encode_png(&mask::apply_mask(&target, &m)?)?,
    )?;
    fs::write(out.join("reference.png"), inference::encode_png(&reference)?)?;
    fs::write(out.join("own-attributes.png"), inference::encode_png(&completions[0])?)?;
    fs::write(
        out.join("reference-attributes.png"),
        inference::encode_png(&completions[1])?,
    )?;
    println!("wrote {}", out.display());
    Ok(())
}
