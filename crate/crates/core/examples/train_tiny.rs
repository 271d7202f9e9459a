//! Trains the desk-scale model on procedurally drawn faces and prints the loss trace.
//!
//! cargo run --release --example train_tiny -- [steps] [output_dir]

use std::time::Instant;

use anyhow::Result;
use refill::synthetic;
use refill::trainer::{self, TrainConfig};

fn main() -> Result<()> {
    tracing_subscriber::fmt().with_env_filter("info").init();
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(100);
    let output_dir = args.next().map(Into::into);

    let config = TrainConfig {
        resolution: 64,
        batch_size: 8,
        total_steps: steps,
        checkpoint_interval: if output_dir.is_some() { 50 } else { 0 },
        output_dir,
        ..TrainConfig::default()
    };
    let corpus = synthetic::corpus(8, config.resolution, 0)?;
    let started = Instant::now();
    let (_, reports) = trainer::train(&config, &corpus)?;
    for r in reports.iter().step_by((steps as usize / 20).max(1)) {
        println!(
            "step {:>4}  hole {:.4}  valid {:.4}  ms_ssim {:.4}  style {:.5}  adv_g {:+.4}  attr {:.4}  total {:.3}",
            r.step, r.hole, r.valid, r.ms_ssim, r.style, r.adv_g, r.attr, r.total
        );
    }
    if let (Some(first), Some(last)) = (reports.first(), reports.last()) {
        println!(
            "hole+valid {:.4} -> {:.4} in {:.1?}",
            first.hole + first.valid,
            last.hole + last.valid,
            started.elapsed()
        );
    }
    Ok(())
}
