//! Writes free-form stroke masks (plus the scaled square hole) for each hole-ratio bucket.
//!
//! cargo run --release --example generate_masks -- [out_dir] [count_per_bucket] [size]

use std::fs;
use std::path::PathBuf;

use anyhow::Result;
use refill::evaluator::Bucket;
use refill::mask::{self, MaskSpec};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out: PathBuf = args.next().unwrap_or_else(|| "masks".into()).into();
    let count: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(4);
    let size: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(256);

    for bucket in Bucket::standard() {
        let Bucket::Ratio { lo, hi } = bucket else { continue };
        let dir = out.join(format!("{:02}-{:02}", (lo * 100.0).round(), (hi * 100.0).round()));
        fs::create_dir_all(&dir)?;
        let mut ratios = Vec::new();
        for seed in 0..count {
            let m = mask::generate_combined_mask(&MaskSpec::new(size, size, seed).with_bucket(lo, hi))?;
            mask::save_mask(&m, dir.join(format!("{seed:04}.png")))?;
            ratios.push(m.hole_ratio());
        }
        let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
        println!("{bucket}: {}  -> {}", shown.join(" "), dir.display());
    }

    // strokes alone, without the square, for comparison
    let strokes = mask::generate_stroke_mask(&MaskSpec::new(size, size, 0))?;
    mask::save_mask(&strokes, out.join("strokes-only.png"))?;
    println!("strokes only: hole ratio {:.3}", strokes.hole_ratio());
    Ok(())
}
