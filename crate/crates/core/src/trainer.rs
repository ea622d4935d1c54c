//! Adversarial training orchestration.
//!
//! Each epoch runs cycles of `k_d` discriminator steps followed by `k_g`
//! generator steps. Discriminator batches are class-balanced by pairing and
//! a fraction `gamma` of their spam side is generator-perturbed pseudo-spam,
//! still labeled 1. Checkpoints land in the output directory every epoch;
//! validation macro-F1 drives early stopping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{self, AugmentClient, AugmentedSet};
use crate::charsim::{CharRecord, SimilarityNetwork};
use crate::checkpoint;
use crate::corpus::{check_two_classes, LabeledSample};
use crate::discriminator::{DiscriminatorConfig, DiscriminatorModel};
use crate::embeddings::{train_base_vectors, EmbeddingTable, SkipGramConfig};
use crate::error::{Error, Result};
use crate::evaluate::{confusion, metrics, threshold_predictions, MetricsReport};
use crate::generator::{CandidateMode, GeneratorConfig, GeneratorModel, RewardBaseline};

/// How augmentation participates in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    None,
    Static,
    Dynamic,
}

impl AugmentMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AugmentMode::None),
            "static" => Ok(AugmentMode::Static),
            "dynamic" => Ok(AugmentMode::Dynamic),
            other => Err(Error::Config(format!("bad augment mode {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentMode::None => "none",
            AugmentMode::Static => "static",
            AugmentMode::Dynamic => "dynamic",
        }
    }
}

/// Full training configuration. Every field is addressable by the flat
/// `key = value` config file format.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub dim: usize,
    pub rho: f64,
    pub tau: f64,
    pub lambda_cl: f64,
    pub lambda_sim: f64,
    pub gen_lr: f64,
    pub disc_lr: f64,
    pub gamma: f64,
    pub k_d: usize,
    pub k_g: usize,
    pub seed: u64,
    pub augment_mode: AugmentMode,
    pub warmup_epochs: usize,
    pub patience: usize,
    pub sg_window: usize,
    pub sg_negatives: usize,
    pub sg_epochs: usize,
    pub gen_model_dim: usize,
    pub gen_ff_dim: usize,
    pub gen_layers: usize,
    pub gen_heads: usize,
    pub gen_candidates: CandidateMode,
    pub temperature_start: f64,
    pub temperature_end: f64,
    pub augment_fraction: f64,
    pub augment_count: usize,
    pub static_target: usize,
    pub train_table: bool,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 64,
            dim: 64,
            rho: 0.7,
            tau: 0.07,
            lambda_cl: 0.1,
            lambda_sim: 1.0,
            gen_lr: 1e-3,
            disc_lr: 1e-3,
            gamma: 0.3,
            k_d: 1,
            k_g: 1,
            seed: 42,
            augment_mode: AugmentMode::None,
            warmup_epochs: 1,
            patience: 3,
            sg_window: 5,
            sg_negatives: 5,
            sg_epochs: 5,
            gen_model_dim: 64,
            gen_ff_dim: 128,
            gen_layers: 2,
            gen_heads: 2,
            gen_candidates: CandidateMode::FullVocab,
            temperature_start: 1.0,
            temperature_end: 0.3,
            augment_fraction: 0.25,
            augment_count: 50,
            static_target: 0,
            train_table: true,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0,1], got {}", self.gamma)));
        }
        if self.gen_lr < 0.0 || self.disc_lr < 0.0 {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0,1], got {}", self.rho)));
        }
        if !(0.0..=1.0).contains(&self.augment_fraction) {
            return Err(Error::Config("augment_fraction must lie in [0,1]".into()));
        }
        if self.k_d == 0 || self.k_g == 0 {
            return Err(Error::Config("k_d and k_g must be >= 1".into()));
        }
        if self.tau <= 0.0 || self.temperature_start <= 0.0 || self.temperature_end <= 0.0 {
            return Err(Error::Config("temperatures must be > 0".into()));
        }
        Ok(())
    }

    /// Apply one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        }
        match key {
            "epochs" => self.epochs = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "dim" => self.dim = p(key, value)?,
            "rho" => self.rho = p(key, value)?,
            "tau" => self.tau = p(key, value)?,
            "lambda_cl" => self.lambda_cl = p(key, value)?,
            "lambda_sim" => self.lambda_sim = p(key, value)?,
            "gen_lr" => self.gen_lr = p(key, value)?,
            "disc_lr" => self.disc_lr = p(key, value)?,
            "gamma" => self.gamma = p(key, value)?,
            "k_d" => self.k_d = p(key, value)?,
            "k_g" => self.k_g = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "augment_mode" => self.augment_mode = AugmentMode::parse(value)?,
            "warmup_epochs" => self.warmup_epochs = p(key, value)?,
            "patience" => self.patience = p(key, value)?,
            "sg_window" => self.sg_window = p(key, value)?,
            "sg_negatives" => self.sg_negatives = p(key, value)?,
            "sg_epochs" => self.sg_epochs = p(key, value)?,
            "gen_model_dim" => self.gen_model_dim = p(key, value)?,
            "gen_ff_dim" => self.gen_ff_dim = p(key, value)?,
            "gen_layers" => self.gen_layers = p(key, value)?,
            "gen_heads" => self.gen_heads = p(key, value)?,
            "gen_candidates" => {
                self.gen_candidates = match value {
                    "full" => CandidateMode::FullVocab,
                    "neighbors" => CandidateMode::Neighbors,
                    other => {
                        return Err(Error::Config(format!("bad gen_candidates {other:?}")));
                    }
                }
            }
            "temperature_start" => self.temperature_start = p(key, value)?,
            "temperature_end" => self.temperature_end = p(key, value)?,
            "augment_fraction" => self.augment_fraction = p(key, value)?,
            "augment_count" => self.augment_count = p(key, value)?,
            "static_target" => self.static_target = p(key, value)?,
            "train_table" => self.train_table = p(key, value)?,
            "threshold" => self.threshold = p(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Parse a flat `key = value` config text; `#` lines are comments.
    pub fn from_str_with_defaults(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected key = value"))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_str_with_defaults(&text, &path.display().to_string())
    }

    /// Render every field as `key = value` lines.
    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("epochs", self.epochs.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("dim", self.dim.to_string());
        kv("rho", format!("{}", self.rho));
        kv("tau", format!("{}", self.tau));
        kv("lambda_cl", format!("{}", self.lambda_cl));
        kv("lambda_sim", format!("{}", self.lambda_sim));
        kv("gen_lr", format!("{}", self.gen_lr));
        kv("disc_lr", format!("{}", self.disc_lr));
        kv("gamma", format!("{}", self.gamma));
        kv("k_d", self.k_d.to_string());
        kv("k_g", self.k_g.to_string());
        kv("seed", self.seed.to_string());
        kv("augment_mode", self.augment_mode.as_str().to_string());
        kv("warmup_epochs", self.warmup_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("sg_window", self.sg_window.to_string());
        kv("sg_negatives", self.sg_negatives.to_string());
        kv("sg_epochs", self.sg_epochs.to_string());
        kv("gen_model_dim", self.gen_model_dim.to_string());
        kv("gen_ff_dim", self.gen_ff_dim.to_string());
        kv("gen_layers", self.gen_layers.to_string());
        kv("gen_heads", self.gen_heads.to_string());
        kv(
            "gen_candidates",
            match self.gen_candidates {
                CandidateMode::FullVocab => "full".to_string(),
                CandidateMode::Neighbors => "neighbors".to_string(),
            },
        );
        kv("temperature_start", format!("{}", self.temperature_start));
        kv("temperature_end", format!("{}", self.temperature_end));
        kv("augment_fraction", format!("{}", self.augment_fraction));
        kv("augment_count", self.augment_count.to_string());
        kv("static_target", self.static_target.to_string());
        kv("train_table", self.train_table.to_string());
        kv("threshold", format!("{}", self.threshold));
        out
    }

    /// The four experimental arms: `baseline` turns off the adversarial and
    /// contrastive parts, the augmentation arms add their strategy on top of
    /// the baseline, and `gcc` is the full system.
    pub fn apply_mode(&mut self, mode: &str) -> Result<()> {
        match mode {
            "baseline" => {
                self.gamma = 0.0;
                self.lambda_cl = 0.0;
                self.augment_mode = AugmentMode::None;
            }
            "gcc" => {
                self.augment_mode = AugmentMode::None;
            }
            "static-augment" => {
                self.gamma = 0.0;
                self.lambda_cl = 0.0;
                self.augment_mode = AugmentMode::Static;
            }
            "dynamic-augment" => {
                self.gamma = 0.0;
                self.lambda_cl = 0.0;
                self.augment_mode = AugmentMode::Dynamic;
            }
            other => return Err(Error::Config(format!("unknown mode {other:?}"))),
        }
        Ok(())
    }
}

/// One batch entry: the sample plus an audit flag marking pseudo-spam.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub sample: LabeledSample,
    pub perturbed: bool,
}

/// Class-balanced batch with a `gamma` fraction of the spam side replaced by
/// generator perturbations (still labeled 1). Deterministic per seed.
pub fn make_discriminator_batch(
    real: &[LabeledSample],
    generator: Option<&GeneratorModel>,
    gamma: f64,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<BatchItem>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::OutOfRange { what: "gamma", value: gamma });
    }
    let spam: Vec<&LabeledSample> = real.iter().filter(|s| s.is_spam()).collect();
    let ham: Vec<&LabeledSample> = real.iter().filter(|s| !s.is_spam()).collect();
    if spam.is_empty() || ham.is_empty() {
        return Err(Error::SingleClassCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = (batch_size / 2).max(1);
    let n_perturb = (gamma * half as f64).floor() as usize;
    let mut items = Vec::with_capacity(half * 2);
    for i in 0..half {
        let s = spam[rng.gen_range(0..spam.len())];
        if i < n_perturb {
            let gen = generator.ok_or_else(|| {
                Error::Config("gamma > 0 requires a generator".into())
            })?;
            let trace = gen.perturb(&s.text, rng.gen())?;
            items.push(BatchItem {
                sample: LabeledSample { text: trace.perturbed_text(), label: 1 },
                perturbed: true,
            });
        } else {
            items.push(BatchItem { sample: s.clone(), perturbed: false });
        }
    }
    for _ in 0..half {
        let s = ham[rng.gen_range(0..ham.len())];
        items.push(BatchItem { sample: s.clone(), perturbed: false });
    }
    items.shuffle(&mut rng);
    Ok(items)
}

/// Per-epoch record: losses, reward, and validation metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub disc_loss: f64,
    pub gen_loss: f64,
    pub mean_reward: f64,
    pub val_metrics: MetricsReport,
}

/// Everything a finished run returns.
pub struct TrainOutcome {
    pub disc: DiscriminatorModel,
    pub gen: GeneratorModel,
    pub net: SimilarityNetwork,
    pub reports: Vec<EpochReport>,
    pub epochs_run: usize,
    pub best_val_macro_f1: f64,
}

/// Threshold predictions for a whole labeled set.
pub fn evaluate_model(disc: &DiscriminatorModel, set: &[LabeledSample]) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut probs = Vec::with_capacity(set.len());
    for s in set {
        probs.push(disc.predict(&s.text)?);
    }
    let labels: Vec<u8> = set.iter().map(|s| s.label).collect();
    let preds = threshold_predictions(&probs, disc.threshold);
    let report = metrics(&confusion(&labels, &preds)?)?;
    report.validate()?;
    Ok(report)
}

/// Run the full pipeline: similarity network, base vectors, aggregated
/// table, then alternating adversarial training with per-epoch checkpoints
/// under `out_dir`.
pub fn train(
    cfg: &TrainConfig,
    dictionary: Vec<CharRecord>,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    client: &dyn AugmentClient,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_two_classes(train_set)?;
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let net = SimilarityNetwork::build(dictionary, cfg.rho)?;

    // Static augmentation happens before anything is trained.
    let mut pool: Vec<LabeledSample> = train_set.to_vec();
    if cfg.augment_mode == AugmentMode::Static {
        let target = if cfg.static_target > 0 { cfg.static_target } else { pool.len() * 2 };
        pool = augment::static_augment(&pool, client, target, cfg.seed)?;
        log::info!("static augmentation grew the pool to {}", pool.len());
    }

    let texts: Vec<String> = pool.iter().map(|s| s.text.clone()).collect();
    let base = train_base_vectors(
        &texts,
        &SkipGramConfig {
            dim: cfg.dim,
            window: cfg.sg_window,
            negatives: cfg.sg_negatives,
            epochs: cfg.sg_epochs,
            learning_rate: 0.05,
            seed: cfg.seed,
        },
    )?;
    let table = EmbeddingTable::build(&net, &base)?;

    let disc_cfg = DiscriminatorConfig {
        lambda_cl: cfg.lambda_cl,
        tau: cfg.tau,
        learning_rate: cfg.disc_lr,
        train_table: cfg.train_table,
        threshold: cfg.threshold,
    };
    let mut disc = DiscriminatorModel::new(table, &disc_cfg, cfg.seed)?;
    let gen_cfg = GeneratorConfig {
        model_dim: cfg.gen_model_dim,
        ff_dim: cfg.gen_ff_dim,
        layers: cfg.gen_layers,
        heads: cfg.gen_heads,
        lambda_sim: cfg.lambda_sim,
        temperature: cfg.temperature_start,
        learning_rate: cfg.gen_lr,
        candidates: cfg.gen_candidates,
    };
    let mut gen = GeneratorModel::new(&disc.table, &net, gen_cfg, cfg.seed)?;

    let mut disc_opt = disc.optimizer(cfg.disc_lr);
    let mut gen_opt = gen.optimizer(cfg.gen_lr);
    let mut baseline = RewardBaseline::default();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7EA1);
    let mut accumulator: Vec<AugmentedSet> = Vec::new();

    let mut reports: Vec<EpochReport> = Vec::new();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut stale = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..cfg.epochs {
        let warmup = epoch < cfg.warmup_epochs;
        // Exponential temperature decay across epochs.
        let temp = if cfg.epochs <= 1 {
            cfg.temperature_end
        } else {
            let frac = epoch as f64 / (cfg.epochs - 1) as f64;
            (cfg.temperature_start * (cfg.temperature_end / cfg.temperature_start).powf(frac))
                .max(cfg.temperature_end)
        };
        gen.set_temperature(temp)?;

        let disc_steps = pool.len().div_ceil(cfg.batch_size).max(1);
        let cycles = disc_steps.div_ceil(cfg.k_d);
        let mut disc_losses = Vec::new();
        let mut gen_losses = Vec::new();
        let mut rewards = Vec::new();

        let spam_texts: Vec<String> =
            pool.iter().filter(|s| s.is_spam()).map(|s| s.text.clone()).collect();

        for _cycle in 0..cycles {
            for _ in 0..cfg.k_d {
                let gamma = if warmup { 0.0 } else { cfg.gamma };
                let gen_ref = if warmup { None } else { Some(&gen) };
                let mut items = make_discriminator_batch(
                    &pool,
                    gen_ref,
                    gamma,
                    cfg.batch_size,
                    master.gen(),
                )?;
                // Dynamic mode: swap a fraction of slots for accumulated
                // augmented samples of the same class.
                if cfg.augment_mode == AugmentMode::Dynamic && !accumulator.is_empty() {
                    mix_in_augmented(&mut items, &accumulator, cfg.augment_fraction, &mut master);
                }
                let batch: Vec<LabeledSample> =
                    items.iter().map(|i| i.sample.clone()).collect();
                let loss = match disc.train_step(&batch, &mut disc_opt) {
                    Ok(l) => l,
                    Err(Error::ZeroVector(_)) => {
                        // A fully out-of-vocabulary sentence defeats the
                        // cosine term; fall back to a CE-only step.
                        let saved = disc.lambda_cl;
                        disc.lambda_cl = 0.0;
                        let l = disc.train_step(&batch, &mut disc_opt);
                        disc.lambda_cl = saved;
                        l?
                    }
                    Err(e) => return Err(abort(e, epoch, &reports)),
                };
                if !loss.is_finite() {
                    return Err(abort(
                        Error::NonFinite("discriminator loss".into()),
                        epoch,
                        &reports,
                    ));
                }
                disc_losses.push(loss);
            }
            if !warmup && cfg.gamma > 0.0 {
                for _ in 0..cfg.k_g {
                    let mut batch_texts: Vec<&str> = Vec::with_capacity(cfg.batch_size / 2);
                    for _ in 0..(cfg.batch_size / 2).max(1) {
                        batch_texts
                            .push(spam_texts[master.gen_range(0..spam_texts.len())].as_str());
                    }
                    let mut step_rng = ChaCha8Rng::seed_from_u64(master.gen());
                    let d = gen
                        .step(&batch_texts, &disc, &mut gen_opt, &mut baseline, &mut step_rng)
                        .map_err(|e| abort(e, epoch, &reports))?;
                    gen_losses.push(d.loss);
                    rewards.push(d.mean_reward);
                }
            }
        }

        if cfg.augment_mode == AugmentMode::Dynamic {
            augment::dynamic_augment_epoch_hook(
                epoch,
                &disc,
                &pool,
                client,
                &mut accumulator,
                cfg.augment_count,
            )?;
            if let Some(set) = accumulator.last() {
                if set.epoch_tag == epoch {
                    let path = out_dir.join(format!("augmented_epoch_{epoch}.tsv"));
                    std::fs::write(&path, augment::augmented_set_to_string(set))
                        .map_err(|e| Error::io(path.display().to_string(), e))?;
                }
            }
        }

        let val_metrics = evaluate_model(&disc, val_set)?;
        let report = EpochReport {
            epoch,
            disc_loss: mean(&disc_losses),
            gen_loss: mean(&gen_losses),
            mean_reward: mean(&rewards),
            val_metrics,
        };
        checkpoint::save_discriminator(
            &out_dir.join(format!("disc_epoch_{epoch}.ckpt")),
            &disc,
            cfg.rho,
            cfg.seed,
        )?;
        checkpoint::save_generator(&out_dir.join(format!("gen_epoch_{epoch}.ckpt")), &gen, cfg.seed)?;
        let f1 = report.val_metrics.macro_f1;
        log::info!(
            "epoch {epoch}: disc_loss={:.4} gen_loss={:.4} reward={:.4} val_macro_f1={:.4}",
            report.disc_loss,
            report.gen_loss,
            report.mean_reward,
            f1
        );
        reports.push(report);
        epochs_run = epoch + 1;

        if f1 > best_f1 + 1e-9 {
            best_f1 = f1;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience && epoch + 1 >= cfg.warmup_epochs + 1 {
                log::info!("early stop after {} stale epochs", stale);
                break;
            }
        }
    }

    checkpoint::save_discriminator(&out_dir.join("disc_final.ckpt"), &disc, cfg.rho, cfg.seed)?;
    checkpoint::save_generator(&out_dir.join("gen_final.ckpt"), &gen, cfg.seed)?;
    let report_json =
        serde_json::to_string_pretty(&reports).expect("reports serialize");
    let report_path = out_dir.join("epoch_reports.json");
    std::fs::write(&report_path, report_json)
        .map_err(|e| Error::io(report_path.display().to_string(), e))?;

    Ok(TrainOutcome { disc, gen, net, reports, epochs_run, best_val_macro_f1: best_f1 })
}

fn abort(e: Error, epoch: usize, reports: &[EpochReport]) -> Error {
    Error::TrainingAborted(format!(
        "epoch {epoch} failed after {} completed epochs (last checkpoints retained): {e}",
        reports.len()
    ))
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn mix_in_augmented(
    items: &mut [BatchItem],
    accumulator: &[AugmentedSet],
    fraction: f64,
    rng: &mut ChaCha8Rng,
) {
    let all: Vec<&LabeledSample> =
        accumulator.iter().flat_map(|s| s.samples.iter()).collect();
    if all.is_empty() {
        return;
    }
    let n_swap = (fraction * items.len() as f64).floor() as usize;
    for slot in 0..n_swap {
        // Keep the class of the replaced slot to preserve balance.
        let want = items[slot].sample.label;
        let of_class: Vec<&&LabeledSample> =
            all.iter().filter(|s| s.label == want).collect();
        if of_class.is_empty() {
            continue;
        }
        let pick = of_class[rng.gen_range(0..of_class.len())];
        items[slot] =
            BatchItem { sample: (*pick).clone(), perturbed: false };
    }
}

/// Key-value dump of a config for run manifests.
pub fn config_map(cfg: &TrainConfig) -> BTreeMap<String, String> {
    cfg.to_config_string()
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
