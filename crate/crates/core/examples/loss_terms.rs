//! Prints every generator loss term, its weight and its weighted share for one batch.
//!
//! cargo run --release --example loss_terms

use anyhow::Result;
use refill::losses::{self, LossWeights, Term};
use refill::synthetic;
use refill::trainer::{self, TrainConfig, TrainingSnapshot};

fn main() -> Result<()> {
    let config = TrainConfig {
        resolution: 32,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let corpus = synthetic::corpus(8, config.resolution, 0)?;
    let pool: Vec<usize> = (0..corpus.len()).collect();
    let batch = trainer::make_batch(&corpus, &pool, &config, 0)?;
    let snap = TrainingSnapshot::new(config.clone())?;

    let a_ext = snap.extractor.extract(&batch.images)?;
    let objective = snap.generator_objective(&batch, &a_ext)?;
    let terms = objective.terms.values()?;
    let weights = LossWeights::default();
    let total = losses::total_loss(&terms, &weights)?;
    println!("{:<10} {:>10} {:>8} {:>10}", "term", "value", "weight", "weighted");
    for term in Term::ALL {
        let (v, w) = (terms.get(term), weights.effective(term));
        println!("{:<10} {v:>10.5} {w:>8} {:>10.5}", format!("{term:?}"), v * w);
    }
    println!("{:<10} {total:>10.5}", "total");
    Ok(())
}
