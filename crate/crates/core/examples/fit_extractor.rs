//! Supervised warm start of the attribute extractor Ext on labelled faces.
//!
//! cargo run --release --example fit_extractor -- [steps] [out_file]

use anyhow::Result;
use refill::extractors::{self, AttributeExtractor, ExtractorConfig, FitConfig};
use refill::synthetic;

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);
    let out = args.next();

    let corpus = synthetic::corpus(96, 32, 0)?;
    let (train, held_out): (Vec<usize>, Vec<usize>) = (0..corpus.len()).partition(|i| i % 4 != 0);
    let ext = AttributeExtractor::new(ExtractorConfig::desk(32))?;
    println!(
        "before: train {:.3}  held-out {:.3}",
        extractors::attribute_accuracy(&ext, &corpus, &train)?,
        extractors::attribute_accuracy(&ext, &corpus, &held_out)?
    );
    let losses = extractors::fit_extractor(
        &ext,
        &corpus,
        &train,
        &FitConfig {
            steps,
            ..FitConfig::default()
        },
    )?;
    for (i, l) in losses.iter().enumerate().step_by((steps / 10).max(1)) {
        println!("step {i:>4}  bce {l:.4}");
    }
    println!(
        "after:  train {:.3}  held-out {:.3}",
        extractors::attribute_accuracy(&ext, &corpus, &train)?,
        extractors::attribute_accuracy(&ext, &corpus, &held_out)?
    );
    if let Some(path) = out {
        ext.save(&path)?;
        println!("saved {path}");
    }
    Ok(())
}
