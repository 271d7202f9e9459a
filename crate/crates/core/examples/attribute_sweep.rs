//! Sweeps one attribute's intensity, including values outside [0, 1], and writes a filmstrip.
//!
//! cargo run --release --example attribute_sweep -- [attribute] [checkpoint_dir] [out_dir]

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Result};
use refill::dataset::{self, AttributeVector};
use refill::inference::{self, InferenceModel};
use refill::mask::{self, Mask};
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
    let name = args.next().unwrap_or_else(|| "Smiling".into());
    let Some(index) = dataset::attribute_index(&name) else {
        bail!(
            "unknown attribute {name}; expected one of {:?}",
            dataset::ATTRIBUTE_NAMES
        );
    };
    let model = model(args.next())?;
    let out: PathBuf = args.next().unwrap_or_else(|| "sweep".into()).into();
    fs::create_dir_all(&out)?;

    let side = model.resolution();
    let sample = synthetic::corpus(1, side, 91)?.get(0).clone();
    let face = sample.image.unsqueeze(0)?;
    // hide the lower half of the face, where mouth and beard live
    let mut data = vec![1u8; side * side];
    data[side * side / 2..].fill(0);
    let m = Mask::from_vec(side, side, data)?.to_tensor()?;

    let base: AttributeVector = model.extract(&face)?;
    let values = trainer::sweep_values(-1.0, 2.0, 7)?;
    for (image, attrs) in model.sweep(&face, &m, &base, index, &values)? {
        let v = attrs.values()[index];
        let path = out.join(format!("{name}-{v:+.1}.png"));
        fs::write(&path, inference::encode_png(&image)?)?;
        println!("{name} = {v:+.2} -> {}", path.display());
    }
    fs::write(
        out.join("masked.png"),
        inference::encode_png(&mask::apply_mask(&face, &m)?)?,
    )?;
    Ok(())
}
