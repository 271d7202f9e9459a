use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use refill::dataset::{attribute_index, AttributeVector, ATTRIBUTE_NAMES};
use refill::evaluator::{self, Backend, Bucket, EvalConfig};
use refill::features::{FeatureNetwork, FeatureSource};
use refill::inference::{self, InferenceModel};
use refill::mask::{self, MaskSpec};
use refill::service::{self, ServeConfig};
use refill::trainer::{self, DataSource, TrainConfig, TrainingSnapshot};

#[derive(Parser)]
#[command(name = "refill", version, about = "Reference-guided face inpainting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML config, or resume a snapshot directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
        /// Write a config template with every field and exit.
        #[arg(long)]
        write_template: Option<PathBuf>,
    },
    /// Pluralistic completions from random attribute vectors.
    Sample {
        #[command(flatten)]
        io: CompletionArgs,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Vary one attribute's intensity and write a filmstrip of completions.
    Sweep {
        #[command(flatten)]
        io: CompletionArgs,
        /// Attribute name or index.
        #[arg(long)]
        attr: String,
        #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
        from: f64,
        #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
        to: f64,
        #[arg(long, default_value_t = 7)]
        steps: usize,
        /// Take the base attributes from this image instead of the input.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// SSIM (and LPIPS/FID with pretrained features) per mask bucket.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "0.1:0.2,0.2:0.3,0.3:0.4,0.4:0.5")]
        buckets: String,
        /// Synthetic test faces to draw when no folder is given.
        #[arg(long, default_value_t = 64)]
        synthetic: usize,
        #[arg(long, requires = "labels")]
        images: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// torchvision VGG-16 safetensors for LPIPS/FID.
        #[arg(long)]
        vgg: Option<PathBuf>,
        #[arg(long, requires = "vgg")]
        lpips: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Mask utilities.
    Masks {
        #[command(subcommand)]
        command: MasksCommand,
    },
    /// Run the HTTP inference service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        max_batch: usize,
        /// Directory served for every non-API path.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum MasksCommand {
    /// Write stroke-plus-square masks as PNG files.
    Generate {
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        bucket: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Strokes only, without the square.
        #[arg(long)]
        no_square: bool,
        #[arg(long, default_value = "masks")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CompletionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Single-channel mask, white = keep.
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

struct Loaded {
    model: InferenceModel,
    image: candle_core::Tensor,
    mask: candle_core::Tensor,
}

impl CompletionArgs {
    fn load(&self) -> Result<Loaded> {
        let model =
            InferenceModel::load(&self.checkpoint).with_context(|| format!("loading {}", self.checkpoint.display()))?;
        let image = read_image(&self.image, model.resolution())?;
        let mask = mask::load_mask(&self.mask)?;
        if (mask.height(), mask.width()) != (model.resolution(), model.resolution()) {
            bail!("mask must be {0}×{0}", model.resolution());
        }
        Ok(Loaded {
            image,
            mask: mask.to_tensor()?,
            model,
        })
    }
}

fn read_image(path: &Path, resolution: usize) -> Result<candle_core::Tensor> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let t = inference::decode_image(&bytes)?;
    if t.dims()[2..] != [resolution, resolution] {
        bail!("{} must be {resolution}×{resolution}", path.display());
    }
    Ok(t)
}

fn write_results(out: &Path, stem: &str, results: &[(candle_core::Tensor, AttributeVector)]) -> Result<()> {
    std::fs::create_dir_all(out)?;
    for (i, (img, attrs)) in results.iter().enumerate() {
        let path = out.join(format!("{stem}_{i:02}.png"));
        std::fs::write(&path, inference::encode_png(img)?)?;
        let named: Vec<String> = ATTRIBUTE_NAMES
            .iter()
            .zip(attrs.values())
            .map(|(n, v)| format!("{n}={v:.2}"))
            .collect();
        println!("{}  {}", path.display(), named.join(" "));
    }
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    match Cli::parse().command {
        Command::Train {
            config,
            resume,
            write_template,
        } => {
            if let Some(path) = write_template {
                trainer::write_config_template(&path)?;
                println!("wrote {}", path.display());
                return Ok(());
            }
            let (mut snapshot, cfg) = match (config, resume) {
                (Some(path), None) => {
                    let cfg = TrainConfig::from_toml_file(&path)?;
                    (TrainingSnapshot::new(cfg.clone())?, cfg)
                }
                (None, Some(dir)) => {
                    let snap = TrainingSnapshot::load(&dir)?;
                    let cfg = snap.config().clone();
                    (snap, cfg)
                }
                _ => bail!("pass --config or --resume"),
            };
            let corpus = cfg.data.load(cfg.resolution)?;
            let pool: Vec<usize> = (0..corpus.len()).collect();
            let reports = trainer::run(&mut snapshot, &corpus, &pool, cfg.total_steps)?;
            if let Some(dir) = &cfg.output_dir {
                snapshot.save(dir.join("final"))?;
            }
            if let Some(last) = reports.last() {
                println!("{}", last.to_json_line()?);
            }
        }
        Command::Sample { io, k, seed } => {
            let l = io.load()?;
            let results = l.model.sample(&l.image, &l.mask, k, seed)?;
            write_results(&io.out, "sample", &results)?;
        }
        Command::Sweep {
            io,
            attr,
            from,
            to,
            steps,
            reference,
        } => {
            let l = io.load()?;
            let index = attribute_index(&attr)
                .or_else(|| attr.parse().ok())
                .filter(|i| *i < ATTRIBUTE_NAMES.len())
                .with_context(|| format!("unknown attribute `{attr}`; one of {}", ATTRIBUTE_NAMES.join(", ")))?;
            let base = match reference {
                Some(path) => l.model.extract(&read_image(&path, l.model.resolution())?)?,
                None => l.model.extract(&l.image)?,
            };
            let values = trainer::sweep_values(from, to, steps)?;
            let results = l.model.sweep(&l.image, &l.mask, &base, index, &values)?;
            write_results(&io.out, &format!("sweep_{}", ATTRIBUTE_NAMES[index]), &results)?;
        }
        Command::Eval {
            checkpoint,
            buckets,
            synthetic,
            images,
            labels,
            vgg,
            lpips,
            seed,
            out,
        } => {
            let model = InferenceModel::load(&checkpoint)?;
            let source = match (images, labels) {
                (Some(images), Some(labels)) => DataSource::Folder { images, labels },
                _ => DataSource::Synthetic {
                    count: synthetic,
                    seed: 1_000_003,
                },
            };
            let corpus = source.load(model.resolution())?;
            let indices: Vec<usize> = (0..corpus.len()).collect();
            let config = EvalConfig {
                buckets: Bucket::parse_list(&buckets)?,
                seed,
                ..EvalConfig::default()
            };
            let feature_source = vgg.map(|w| FeatureSource::Pretrained {
                weights: w.to_string_lossy().into_owned(),
                lpips: lpips.map(|p| p.to_string_lossy().into_owned()),
            });
            let network = feature_source.as_ref().map(FeatureNetwork::from_source).transpose()?;
            let backend = network.as_ref().zip(feature_source.as_ref()).map(|(n, s)| Backend {
                network: n,
                tag: evaluator::backend_tag(s),
            });
            let mut report = evaluator::evaluate(&model.generator, &corpus, &indices, &config, backend)?;
            report.model_id = Some(model.checkpoint_id().to_string());
            report.write(&out)?;
            print!("{}", report.to_csv()?);
        }
        Command::Masks {
            command:
                MasksCommand::Generate {
                    count,
                    size,
                    bucket,
                    seed,
                    no_square,
                    out,
                },
        } => {
            std::fs::create_dir_all(&out)?;
            let bucket = bucket.as_deref().map(str::parse::<Bucket>).transpose()?;
            for i in 0..count {
                let mut spec = MaskSpec::new(size, size, trainer::derive_seed(seed, &[i as u64]));
                if let Some(Bucket::Ratio { lo, hi }) = bucket {
                    spec = spec.with_bucket(lo, hi);
                }
                let m = if no_square {
                    mask::generate_stroke_mask(&spec)?
                } else {
                    mask::generate_combined_mask(&spec)?
                };
                let path = out.join(format!("mask_{i:05}.png"));
                mask::save_mask(&m, &path)?;
                println!("{}  hole_ratio={:.4}", path.display(), m.hole_ratio());
            }
        }
        Command::Serve {
            host,
            port,
            checkpoint,
            max_batch,
            static_dir,
        } => {
            let config = ServeConfig {
                addr: SocketAddr::new(host, port),
                checkpoint,
                max_batch,
                static_dir,
            };
            tokio::runtime::Runtime::new()?.block_on(service::serve(config))?;
        }
    }
    Ok(())
}
