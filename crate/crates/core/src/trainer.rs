//! Training loop: dual-path generation, critic / auxiliary / generator updates,
//! snapshots, and attribute-driven sampling.
//!
//! Every step is a pure function of the snapshot, the corpus and `(seed, step)`:
//! batch order, masks and gradient-penalty interpolation all derive from that
//! pair, so resuming a saved snapshot replays the remaining steps bit for bit.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, OPTIMIZER_FORMAT};
use crate::critic::{gradient_penalty, sample_epsilon, Critic, CriticConfig, CriticFn};
use crate::dataset::{epoch_order, AttributeVector, Corpus, ATTRIBUTE_DIM};
use crate::error::{Error, Result};
use crate::extractors::{AttributeExtractor, AuxConfig, AuxExtractor, ExtractorConfig};
use crate::features::{FeatureNetwork, FeatureSource};
use crate::generator::{Generator, GeneratorConfig};
use crate::losses::{self, LossReport, LossWeights, TermTensors};
use crate::mask::{self, generate_combined_mask, stack_masks, MaskSpec};
use crate::nn;
use crate::optim::{Adam, AdamConfig};
use crate::ssim::SsimConfig;

/// How random attribute vectors are drawn for pluralistic sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeSampling {
    #[default]
    Bernoulli,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Procedurally rendered faces.
    Synthetic { count: usize, seed: u64 },
    /// An image directory plus a label CSV.
    Folder { images: PathBuf, labels: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        Self::Synthetic { count: 64, seed: 0 }
    }
}

impl DataSource {
    pub fn load(&self, resolution: usize) -> Result<Corpus> {
        match self {
            DataSource::Synthetic { count, seed } => crate::synthetic::corpus(*count, resolution, *seed),
            DataSource::Folder { images, labels } => crate::dataset::load_corpus(images, labels, resolution),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub resolution: usize,
    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub critic_steps_per_gen_step: usize,
    /// Steps between snapshots; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub output_dir: Option<PathBuf>,
    pub data: DataSource,
    pub weights: LossWeights,
    pub adam_generator: AdamConfig,
    pub adam_critic: AdamConfig,
    pub adam_extractor: AdamConfig,
    pub adam_aux: AdamConfig,
    pub features: FeatureSource,
    /// Defaults to as many MS-SSIM scales as the resolution allows.
    pub ssim_scales: Option<usize>,
    pub critic_on_composite: bool,
    pub attribute_sampling: AttributeSampling,
    pub hflip: bool,
    /// Optional pretrained Ext checkpoint to start from.
    pub extractor_warm_start: Option<PathBuf>,
    pub generator: Option<GeneratorConfig>,
    pub critic: Option<CriticConfig>,
    pub extractor: Option<ExtractorConfig>,
    pub aux: Option<AuxConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            batch_size: 8,
            total_steps: 1000,
            seed: 0,
            critic_steps_per_gen_step: 1,
            checkpoint_interval: 0,
            output_dir: None,
            data: DataSource::default(),
            weights: LossWeights::default(),
            adam_generator: AdamConfig::default(),
            adam_critic: AdamConfig::default(),
            adam_extractor: AdamConfig::default(),
            adam_aux: AdamConfig::default(),
            features: FeatureSource::default(),
            ssim_scales: None,
            critic_on_composite: false,
            attribute_sampling: AttributeSampling::Bernoulli,
            hflip: false,
            extractor_warm_start: None,
            generator: None,
            critic: None,
            extractor: None,
            aux: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.critic_steps_per_gen_step == 0 {
            return Err(Error::Config("critic_steps_per_gen_step must be at least 1".into()));
        }
        for (name, a) in [
            ("adam_generator", &self.adam_generator),
            ("adam_critic", &self.adam_critic),
            ("adam_extractor", &self.adam_extractor),
            ("adam_aux", &self.adam_aux),
        ] {
            if !(a.lr > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
                return Err(Error::Config(format!(
                    "{name}: learning rate must be > 0 and betas in [0, 1)"
                )));
            }
        }
        self.weights.validate()?;
        for (name, r) in [
            ("generator", self.generator.as_ref().map(|c| c.resolution)),
            ("critic", self.critic.as_ref().map(|c| c.resolution)),
            ("extractor", self.extractor.as_ref().map(|c| c.resolution)),
            ("aux", self.aux.as_ref().map(|c| c.resolution)),
        ] {
            if let Some(r) = r {
                if r != self.resolution {
                    return Err(Error::Config(format!(
                        "{name} resolution {r} differs from training resolution {}",
                        self.resolution
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        self.generator.clone().unwrap_or_else(|| GeneratorConfig {
            seed: self.seed,
            ..GeneratorConfig::desk(self.resolution)
        })
    }

    pub fn critic_config(&self) -> CriticConfig {
        self.critic.clone().unwrap_or_else(|| CriticConfig {
            seed: self.seed.wrapping_add(1),
            ..CriticConfig::desk(self.resolution)
        })
    }

    pub fn extractor_config(&self) -> ExtractorConfig {
        self.extractor.clone().unwrap_or_else(|| ExtractorConfig {
            seed: self.seed.wrapping_add(2),
            ..ExtractorConfig::desk(self.resolution)
        })
    }

    pub fn aux_config(&self) -> AuxConfig {
        self.aux.clone().unwrap_or_else(|| AuxConfig {
            seed: self.seed.wrapping_add(3),
            ..AuxConfig::desk(self.resolution)
        })
    }

    pub fn ssim_config(&self) -> Result<SsimConfig> {
        match self.ssim_scales {
            Some(s) => SsimConfig::default().with_scales(s),
            None => SsimConfig::for_side(self.resolution),
        }
    }
}

/// Mixes a seed with stream identifiers (SplitMix64 finaliser).
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for p in parts {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(*p);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const STREAM_ORDER: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_STEP: u64 = 3;

/// Corpus indices for `step`: consecutive slices of per-epoch permutations.
pub fn batch_indices(pool: &[usize], batch_size: usize, seed: u64, step: u64) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    let n = pool.len() as u64;
    let start = step * batch_size as u64;
    let mut cached: Option<(u64, Vec<usize>)> = None;
    let mut out = Vec::with_capacity(batch_size);
    for q in start..start + batch_size as u64 {
        let epoch = q / n;
        if cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            cached = Some((epoch, epoch_order(pool, derive_seed(seed, &[STREAM_ORDER, epoch]))));
        }
        let (_, order) = cached.as_ref().expect("filled above");
        out.push(order[(q % n) as usize]);
    }
    Ok(out)
}

/// Images, ground-truth attributes and one training mask per sample.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub images: Tensor,
    pub attributes: Tensor,
    pub masks: Tensor,
}

impl TrainBatch {
    pub fn masked(&self) -> Result<Tensor> {
        mask::apply_mask(&self.images, &self.masks)
    }
}

/// The batch used at `step`: deterministic in `(config.seed, step)`.
pub fn make_batch(corpus: &Corpus, pool: &[usize], config: &TrainConfig, step: u64) -> Result<TrainBatch> {
    let indices = batch_indices(pool, config.batch_size, config.seed, step)?;
    let mut batch = corpus.batch(&indices)?;
    if config.hflip && step % 2 == 1 {
        batch = batch.flipped()?;
    }
    let r = config.resolution;
    let masks = (0..indices.len())
        .map(|i| {
            generate_combined_mask(&MaskSpec::new(
                r,
                r,
                derive_seed(config.seed, &[STREAM_MASK, step, i as u64]),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainBatch {
        images: batch.images,
        attributes: batch.attributes,
        masks: stack_masks(&masks)?,
    })
}

/// The two generator outputs of one step.
pub struct GeneratorPaths {
    pub masked: Tensor,
    pub recon: Tensor,
    pub fake: Tensor,
    /// `I_recon` pasted into the valid pixels of `I_masked`.
    pub composite: Tensor,
}

/// Generator-side losses for one batch and one choice of `A_ext`.
pub struct GeneratorObjective {
    pub terms: TermTensors,
    pub paths: GeneratorPaths,
    /// `MSE(AE(I_fake), A_ext)`.
    pub attr_fake: Tensor,
    /// `MSE(A_gt, AE(I_gt))`, detached.
    pub attr_aux: Tensor,
}

pub struct TrainingSnapshot {
    config: TrainConfig,
    pub generator: Generator,
    pub critic: Critic,
    pub extractor: AttributeExtractor,
    pub aux: AuxExtractor,
    opt_generator: Adam,
    opt_critic: Adam,
    opt_extractor: Adam,
    opt_aux: Adam,
    features: FeatureNetwork,
    ssim: SsimConfig,
    step: u64,
}

const SNAPSHOT_FILE: &str = "snapshot.json";

#[derive(Serialize, Deserialize)]
struct SnapshotMeta {
    step: u64,
    seed: u64,
    config: TrainConfig,
}

fn prefixed(prefix: &str, params: &nn::ParamStore) -> Vec<(String, candle_core::Var)> {
    params
        .iter()
        .map(|(n, v)| (format!("{prefix}{n}"), v.clone()))
        .collect()
}

fn adam_for(prefix: &str, params: &nn::ParamStore, cfg: AdamConfig) -> Result<Adam> {
    let vars = prefixed(prefix, params);
    Adam::new(vars.iter().map(|(n, v)| (n.clone(), v)), cfg)
}

impl TrainingSnapshot {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.generator_config())?;
        let critic = Critic::new(config.critic_config())?;
        let extractor = match &config.extractor_warm_start {
            Some(path) => AttributeExtractor::load(path)?,
            None => AttributeExtractor::new(config.extractor_config())?,
        };
        let aux = AuxExtractor::new(config.aux_config())?;
        Self::assemble(config, generator, critic, extractor, aux)
    }

    fn assemble(
        config: TrainConfig,
        generator: Generator,
        critic: Critic,
        extractor: AttributeExtractor,
        aux: AuxExtractor,
    ) -> Result<Self> {
        Ok(Self {
            opt_generator: adam_for("", generator.params(), config.adam_generator)?,
            opt_critic: adam_for("", critic.params(), config.adam_critic)?,
            opt_extractor: adam_for("", extractor.params(), config.adam_extractor)?,
            opt_aux: adam_for("", aux.params(), config.adam_aux)?,
            features: FeatureNetwork::from_source(&config.features)?,
            ssim: config.ssim_config()?,
            config,
            generator,
            critic,
            extractor,
            aux,
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn features(&self) -> &FeatureNetwork {
        &self.features
    }

    pub fn ssim(&self) -> &SsimConfig {
        &self.ssim
    }

    /// `(parameters, optimizer slots)` per model, in generator/critic/extractor/aux order.
    pub fn optimizer_slot_counts(&self) -> [(usize, usize); 4] {
        [
            (
                self.generator.params().len(),
                self.opt_generator.named_state("").len() / 2,
            ),
            (self.critic.params().len(), self.opt_critic.named_state("").len() / 2),
            (
                self.extractor.params().len(),
                self.opt_extractor.named_state("").len() / 2,
            ),
            (self.aux.params().len(), self.opt_aux.named_state("").len() / 2),
        ]
    }

    fn critic_input(&self, image: &Tensor, batch: &TrainBatch, masked: &Tensor) -> Result<Tensor> {
        if self.config.critic_on_composite {
            mask::composite(masked, image, &batch.masks)
        } else {
            Ok(image.clone())
        }
    }

    /// Both generation paths through the one generator: `I_recon` with `A_gt` and
    /// `I_fake` with `a_ext`, sharing the encoder pass.
    pub fn generator_paths(&self, batch: &TrainBatch, a_ext: &Tensor) -> Result<GeneratorPaths> {
        let m = &batch.masks;
        let masked = batch.masked()?;
        let latent = self.generator.encode(&masked, m)?;
        let recon = self
            .generator
            .decode(&self.generator.inject_attributes(&latent, &batch.attributes)?, m)?;
        let fake = self
            .generator
            .decode(&self.generator.inject_attributes(&latent, a_ext)?, m)?;
        let composite = mask::composite(&masked, &recon, m)?;
        Ok(GeneratorPaths {
            masked,
            recon,
            fake,
            composite,
        })
    }

    /// Every generator-side loss, given the two paths, with the current critic and AE.
    pub fn objective_from(
        &self,
        batch: &TrainBatch,
        paths: GeneratorPaths,
        a_ext: &Tensor,
    ) -> Result<GeneratorObjective> {
        let gt = &batch.images;
        let m = &batch.masks;
        let hole = losses::loss_hole(&paths.recon, gt, m)?;
        let valid = losses::loss_valid(&paths.recon, &paths.masked, m)?;
        let (percep, style) = losses::loss_perceptual_and_style(gt, &paths.composite, &self.features)?;
        let ms_ssim = losses::loss_ms_ssim(&paths.recon, gt, &self.ssim)?;
        let critic_in = self.critic_input(&paths.fake, batch, &paths.masked)?;
        let adv_g = losses::loss_adversarial_g(&self.critic.score(&critic_in)?)?;
        let attr_fake = nn::mse(&self.aux.extract(&paths.fake)?, a_ext)?;
        let attr_aux = nn::mse(&batch.attributes, &self.aux.extract(gt)?)?.detach();
        let attr = (&attr_fake + &attr_aux)?;
        Ok(GeneratorObjective {
            terms: TermTensors {
                hole,
                valid,
                percep,
                style,
                ms_ssim,
                attr,
                adv_g,
            },
            paths,
            attr_fake,
            attr_aux,
        })
    }

    /// [`Self::generator_paths`] followed by [`Self::objective_from`].
    pub fn generator_objective(&self, batch: &TrainBatch, a_ext: &Tensor) -> Result<GeneratorObjective> {
        let paths = self.generator_paths(batch, a_ext)?;
        self.objective_from(batch, paths, a_ext)
    }

    fn abort(term: &str, report: &LossReport) -> Error {
        Error::NonFinite {
            term: term.to_string(),
            report: Some(Box::new(report.clone())),
        }
    }

    /// One optimisation step: critic update(s), auxiliary extractor, then generator and Ext.
    pub fn train_step(&mut self, batch: &TrainBatch) -> Result<LossReport> {
        let step = self.step;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, &[STREAM_STEP, step]));
        let mut report = LossReport {
            step,
            ..LossReport::default()
        };
        let gt = &batch.images;
        let b = gt.dims()[0];

        let a_ext = self.extractor.extract(gt)?;
        let paths = self.generator_paths(batch, &a_ext)?;
        let critic_fake = self.critic_input(&paths.fake, batch, &paths.masked)?.detach();
        for _ in 0..self.config.critic_steps_per_gen_step {
            let real_scores = self.critic.score(gt)?;
            let fake_scores = self.critic.score(&critic_fake)?;
            let eps = sample_epsilon(b, &mut rng)?;
            let gp = gradient_penalty(&self.critic, gt, &critic_fake, self.config.weights.gp, &eps)?;
            let loss_d = losses::loss_adversarial_d(&real_scores, &fake_scores, &gp)?;
            report.gp = nn::to_scalar(&gp)?;
            report.adv_d = nn::to_scalar(&loss_d)?;
            if let Some(term) = report.non_finite_term() {
                return Err(Self::abort(term, &report));
            }
            self.opt_critic.step(&loss_d.backward()?)?;
            self.critic.power_iteration(1)?;
        }

        let loss_aux = nn::mse(&batch.attributes, &self.aux.extract(gt)?)?;
        let aux_value = nn::to_scalar(&loss_aux)?;
        report.attr_aux = aux_value;
        if !aux_value.is_finite() {
            return Err(Self::abort("attr_aux", &report));
        }
        self.opt_aux.step(&loss_aux.backward()?)?;

        let objective = self.objective_from(batch, paths, &a_ext)?;
        let values = objective.terms.values()?;
        report.hole = values.hole;
        report.valid = values.valid;
        report.percep = values.percep;
        report.style = values.style;
        report.ms_ssim = values.ms_ssim;
        report.attr = values.attr;
        report.adv_g = values.adv_g;
        report.attr_fake = nn::to_scalar(&objective.attr_fake)?;
        report.attr_aux = nn::to_scalar(&objective.attr_aux)?;
        if let Some(term) = report.non_finite_term() {
            return Err(Self::abort(term, &report));
        }
        report.total = losses::total_loss(&values, &self.config.weights)?;
        let total = objective.terms.total(&self.config.weights)?;
        let grads = total.backward()?;
        self.opt_generator.step(&grads)?;
        self.opt_extractor.step(&grads)?;
        self.step += 1;
        Ok(report)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.generator.save(dir.join("generator.safetensors"))?;
        self.critic.save(dir.join("critic.safetensors"))?;
        self.extractor.save(dir.join("extractor.safetensors"))?;
        self.aux.save(dir.join("aux.safetensors"))?;
        let mut tensors = Vec::new();
        let mut extra = BTreeMap::new();
        for (name, opt) in self.optimizers() {
            tensors.extend(opt.named_state(&format!("{name}/")));
            extra.insert(format!("steps.{name}"), opt.steps_taken().to_string());
        }
        checkpoint::write_archive(
            dir.join("optimizer.safetensors"),
            OPTIMIZER_FORMAT,
            None,
            extra,
            &tensors,
        )?;
        let meta = SnapshotMeta {
            step: self.step,
            seed: self.config.seed,
            config: self.config.clone(),
        };
        fs::write(dir.join(SNAPSHOT_FILE), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(dir.join(SNAPSHOT_FILE))?)?;
        let mut snap = Self::assemble(
            meta.config,
            Generator::load(dir.join("generator.safetensors"))?,
            Critic::load(dir.join("critic.safetensors"))?,
            AttributeExtractor::load(dir.join("extractor.safetensors"))?,
            AuxExtractor::load(dir.join("aux.safetensors"))?,
        )?;
        let opt_path = dir.join("optimizer.safetensors");
        let archive = checkpoint::read_archive(&opt_path, Some(OPTIMIZER_FORMAT))?;
        for (name, opt) in snap.optimizers_mut() {
            let steps = archive
                .metadata
                .get(&format!("steps.{name}"))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::checkpoint(&opt_path, format!("missing step count for {name}")))?;
            opt.load_state(&format!("{name}/"), steps, &archive.tensors)?;
        }
        snap.step = meta.step;
        Ok(snap)
    }

    fn optimizers(&self) -> [(&'static str, &Adam); 4] {
        [
            ("generator", &self.opt_generator),
            ("critic", &self.opt_critic),
            ("extractor", &self.opt_extractor),
            ("aux", &self.opt_aux),
        ]
    }

    fn optimizers_mut(&mut self) -> [(&'static str, &mut Adam); 4] {
        [
            ("generator", &mut self.opt_generator),
            ("critic", &mut self.opt_critic),
            ("extractor", &mut self.opt_extractor),
            ("aux", &mut self.opt_aux),
        ]
    }
}

/// Runs steps until `snapshot.step() == until`, writing JSON-lines reports and
/// periodic snapshots when the config names an output directory.
pub fn run(snapshot: &mut TrainingSnapshot, corpus: &Corpus, pool: &[usize], until: u64) -> Result<Vec<LossReport>> {
    let config = snapshot.config().clone();
    if corpus.resolution() != config.resolution {
        return Err(Error::Config(format!(
            "corpus resolution {} differs from training resolution {}",
            corpus.resolution(),
            config.resolution
        )));
    }
    let mut log = match &config.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let file = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join("losses.jsonl"))?;
            Some(BufWriter::new(file))
        }
        None => None,
    };
    let mut reports = Vec::new();
    while snapshot.step() < until {
        let batch = make_batch(corpus, pool, &config, snapshot.step())?;
        let report = snapshot.train_step(&batch)?;
        if let Some(w) = log.as_mut() {
            writeln!(w, "{}", report.to_json_line()?)?;
        }
        tracing::debug!(step = report.step, total = report.total, hole = report.hole, "step");
        reports.push(report);
        let done = snapshot.step();
        if let Some(dir) = &config.output_dir {
            if config.checkpoint_interval > 0 && done.is_multiple_of(config.checkpoint_interval) {
                if let Some(w) = log.as_mut() {
                    w.flush()?;
                }
                snapshot.save(dir.join(format!("step_{done:06}")))?;
            }
        }
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    Ok(reports)
}

/// Fresh snapshot trained for `config.total_steps` on every corpus sample.
pub fn train(config: &TrainConfig, corpus: &Corpus) -> Result<(TrainingSnapshot, Vec<LossReport>)> {
    let mut snapshot = TrainingSnapshot::new(config.clone())?;
    let pool: Vec<usize> = (0..corpus.len()).collect();
    let reports = run(&mut snapshot, corpus, &pool, config.total_steps)?;
    if let Some(dir) = &config.output_dir {
        snapshot.save(dir.join("final"))?;
    }
    Ok((snapshot, reports))
}

/// `k` attribute vectors drawn from `seed`.
pub fn draw_attributes(k: usize, seed: u64, mode: AttributeSampling) -> Vec<AttributeVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let mut v = [0.0; ATTRIBUTE_DIM];
            for x in &mut v {
                *x = match mode {
                    AttributeSampling::Bernoulli => f64::from(u8::from(rng.random_bool(0.5))),
                    AttributeSampling::Uniform => rng.random::<f64>(),
                };
            }
            AttributeVector(v)
        })
        .collect()
}

fn repeat(t: &Tensor, k: usize) -> Result<Tensor> {
    Ok(Tensor::cat(&vec![t; k], 0)?)
}

fn check_single(masked: &Tensor, mask: &Tensor) -> Result<()> {
    if masked.dims().first() != Some(&1) || mask.dims().first() != Some(&1) {
        return Err(Error::ShapeMismatch(format!(
            "expected one image and one mask, got {:?} and {:?}",
            masked.dims(),
            mask.dims()
        )));
    }
    Ok(())
}

/// Composited completions for explicit attribute vectors, one per vector.
pub fn complete_with(
    generator: &Generator,
    masked: &Tensor,
    mask: &Tensor,
    attrs: &[AttributeVector],
) -> Result<Vec<Tensor>> {
    check_single(masked, mask)?;
    if attrs.is_empty() {
        return Ok(Vec::new());
    }
    let k = attrs.len();
    let masked_k = repeat(masked, k)?;
    let mask_k = repeat(mask, k)?;
    let out = generator.generate(&masked_k, &mask_k, &AttributeVector::stack(attrs)?)?;
    let comp = mask::composite(&masked_k, &out, &mask_k)?;
    (0..k).map(|i| Ok(comp.narrow(0, i, 1)?)).collect()
}

/// `k` diverse completions from random attribute vectors.
pub fn sample_pluralistic(
    generator: &Generator,
    masked: &Tensor,
    mask: &Tensor,
    k: usize,
    seed: u64,
    mode: AttributeSampling,
) -> Result<Vec<(Tensor, AttributeVector)>> {
    if k < 1 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let attrs = draw_attributes(k, seed, mode);
    let images = complete_with(generator, masked, mask, &attrs)?;
    Ok(images.into_iter().zip(attrs).collect())
}

/// Generator output with attribute `index` of `base` set to `intensity`.
pub fn interpolate_attribute(
    generator: &Generator,
    masked: &Tensor,
    mask: &Tensor,
    base: &AttributeVector,
    index: usize,
    intensity: f64,
) -> Result<Tensor> {
    let attrs = with_intensity(base, index, intensity)?;
    generator.generate(masked, mask, &attrs.to_tensor()?)
}

fn with_intensity(base: &AttributeVector, index: usize, intensity: f64) -> Result<AttributeVector> {
    if index >= ATTRIBUTE_DIM {
        return Err(Error::InvalidArgument(format!(
            "attribute index {index} out of range 0..{ATTRIBUTE_DIM}"
        )));
    }
    if !intensity.is_finite() {
        return Err(Error::InvalidArgument("intensity must be finite".into()));
    }
    let mut v = *base;
    v.0[index] = intensity;
    Ok(v)
}

/// Evenly spaced intensities from `from` to `to` inclusive.
pub fn sweep_values(from: f64, to: f64, steps: usize) -> Result<Vec<f64>> {
    match steps {
        0 => Err(Error::InvalidArgument("a sweep needs at least one step".into())),
        1 => Ok(vec![from]),
        n => Ok((0..n).map(|i| from + (to - from) * i as f64 / (n - 1) as f64).collect()),
    }
}

/// Composited completions along an intensity sweep of one attribute.
pub fn sweep_attribute(
    generator: &Generator,
    masked: &Tensor,
    mask: &Tensor,
    base: &AttributeVector,
    index: usize,
    values: &[f64],
) -> Result<Vec<(Tensor, AttributeVector)>> {
    let attrs = values
        .iter()
        .map(|v| with_intensity(base, index, *v))
        .collect::<Result<Vec<_>>>()?;
    let images = complete_with(generator, masked, mask, &attrs)?;
    Ok(images.into_iter().zip(attrs).collect())
}

/// Writes a config template with every field spelled out.
pub fn write_config_template(path: impl AsRef<Path>) -> Result<()> {
    let mut f = File::create(path)?;
    f.write_all(TrainConfig::default().to_toml()?.as_bytes())?;
    Ok(())
}
