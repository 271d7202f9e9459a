//! Runs the HTTP inference service on 127.0.0.1:8080.
//!
//! cargo run --release --example serve -- [checkpoint_dir] [static_dir]
//!
//! curl localhost:8080/v1/health

use std::path::PathBuf;

use anyhow::Result;
use refill::optim::AdamConfig;
use refill::service::{self, ServeConfig};
use refill::synthetic;
use refill::trainer::{self, TrainConfig};

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt().with_env_filter("info").init();
    let mut args = std::env::args().skip(1);
    let checkpoint = match args.next().filter(|d| d != "-") {
        Some(dir) => PathBuf::from(dir),
        None => {
            let dir = std::env::temp_dir().join("refill-serve-example");
            tracing::info!("no checkpoint given; training a 32 px model into {}", dir.display());
            let config = TrainConfig {
                resolution: 32,
                total_steps: 120,
                adam_generator: AdamConfig {
                    lr: 1e-3,
                    ..AdamConfig::default()
                },
                ..TrainConfig::default()
            };
            let snap = tokio::task::spawn_blocking(move || trainer::train(&config, &synthetic::corpus(32, 32, 0)?))
                .await??
                .0;
            snap.save(&dir)?;
            dir
        }
    };
    let config = ServeConfig {
        addr: "127.0.0.1:8080".parse()?,
        checkpoint: Some(checkpoint),
        static_dir: args.next().map(PathBuf::from),
        ..ServeConfig::default()
    };
    service::serve(config).await?;
    Ok(())
}
