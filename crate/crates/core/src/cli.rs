//! Command-line interface: one binary, one subcommand per pipeline stage.
//!
//! Exit codes are a stable contract: 0 success, 2 usage or input error,
//! 3 runtime abort (training failure).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::augment::{self, client_from_spec};
use crate::charsim::{load_dictionary, SimilarityNetwork};
use crate::checkpoint;
use crate::corpus::{load_corpus, LabeledSample};
use crate::embeddings::{train_base_vectors, EmbeddingTable, SkipGramConfig};
use crate::error::{Error, Result};
use crate::evaluate::{confusion, metrics, threshold_predictions};
use crate::manifest::RunManifest;
use crate::trainer::{self, config_map, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ABORT: i32 = 3;

/// Environment variable selecting the real augmentation backend; unset
/// means the offline mock.
pub const AUGMENT_ENDPOINT_ENV: &str = "GCC_SPAM_AUGMENT_ENDPOINT";

#[derive(Parser)]
#[command(
    name = "gcc-spam",
    about = "Adversarially trained Chinese spam-text detection",
    version
)]
pub struct Cli {
    /// Config file (flat `key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for all randomness in the invocation.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Output directory for artifacts, reports and the run manifest.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build the character similarity network from a dictionary file.
    BuildSimnet {
        #[arg(long)]
        dictionary: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        rho: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train base character vectors on a corpus and persist the table.
    TrainEmbeddings {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dictionary: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        rho: f64,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 5)]
        window: usize,
        #[arg(long, default_value_t = 5)]
        negatives: usize,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run adversarial training (or one of the comparison arms).
    Train {
        #[arg(long)]
        dictionary: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        /// Experimental arm: baseline, gcc, static-augment, dynamic-augment.
        #[arg(long, default_value = "gcc")]
        mode: String,
        /// Config overrides as repeated `key=value` pairs.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on a labeled test file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Score lines: `p<TAB>label<TAB>text` per input line.
    Detect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input file of raw text lines; stdin when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Perturb spam lines and audit discriminator scores before and after.
    Attack {
        #[arg(long)]
        generator: PathBuf,
        #[arg(long)]
        discriminator: PathBuf,
        /// File of spam text lines to perturb.
        #[arg(long)]
        spam: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate augmentation samples with the configured client.
    Augment {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        dictionary: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        rho: f64,
        /// Total corpus size to grow to.
        #[arg(long)]
        target: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Entry point used by the binary; maps errors onto the exit-code contract.
pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e @ Error::TrainingAborted(_)) => {
            eprintln!("error: {e}");
            EXIT_ABORT
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn dispatch(cli: Cli) -> Result<()> {
    ensure_dir(&cli.out_dir)?;
    match cli.command {
        Command::BuildSimnet { dictionary, rho, out } => {
            cmd_build_simnet(&dictionary, rho, &out, cli.seed, &cli.out_dir)
        }
        Command::TrainEmbeddings {
            corpus,
            dictionary,
            rho,
            dim,
            window,
            negatives,
            epochs,
            out,
        } => cmd_train_embeddings(
            &corpus, &dictionary, rho, dim, window, negatives, epochs, &out, cli.seed,
            &cli.out_dir,
        ),
        Command::Train { dictionary, train, val, mode, overrides } => cmd_train(
            cli.config.as_deref(),
            &dictionary,
            &train,
            &val,
            &mode,
            &overrides,
            cli.seed,
            &cli.out_dir,
        ),
        Command::Eval { checkpoint, test } => {
            cmd_eval(&checkpoint, &test, cli.seed, &cli.out_dir)
        }
        Command::Detect { checkpoint, input, threshold } => {
            cmd_detect(&checkpoint, input.as_deref(), threshold, cli.seed, &cli.out_dir)
        }
        Command::Attack { generator, discriminator, spam, out } => {
            cmd_attack(&generator, &discriminator, &spam, &out, cli.seed, &cli.out_dir)
        }
        Command::Augment { corpus, dictionary, rho, target, out } => {
            cmd_augment(&corpus, &dictionary, rho, target, &out, cli.seed, &cli.out_dir)
        }
    }
}

pub fn cmd_build_simnet(
    dictionary: &Path,
    rho: f64,
    out: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let mut manifest = RunManifest::start("build-simnet", seed, BTreeMap::new());
    manifest.add_input(dictionary)?;
    let records = load_dictionary(dictionary)?;
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let net = SimilarityNetwork::build(records, rho)?;
    net.save(out)?;
    manifest.add_output(out)?;
    manifest.finish(out_dir)?;
    println!("similarity network over {} characters written to {}", net.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train_embeddings(
    corpus: &Path,
    dictionary: &Path,
    rho: f64,
    dim: usize,
    window: usize,
    negatives: usize,
    epochs: usize,
    out: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let mut manifest = RunManifest::start("train-embeddings", seed, BTreeMap::new());
    manifest.add_input(corpus)?;
    manifest.add_input(dictionary)?;
    let samples = load_corpus(corpus)?;
    let texts: Vec<String> = samples.into_iter().map(|s| s.text).collect();
    let records = load_dictionary(dictionary)?;
    let net = SimilarityNetwork::build(records, rho)?;
    let base = train_base_vectors(
        &texts,
        &SkipGramConfig { dim, window, negatives, epochs, learning_rate: 0.05, seed },
    )?;
    let table = EmbeddingTable::build(&net, &base)?;
    table.save(out, Some(6))?;
    manifest.add_output(out)?;
    manifest.finish(out_dir)?;
    println!(
        "embedding table ({} tokens, d={}) written to {}",
        table.vocab_len(),
        table.dim,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    config: Option<&Path>,
    dictionary: &Path,
    train: &Path,
    val: &Path,
    mode: &str,
    overrides: &[String],
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let mut cfg = match config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    cfg.seed = seed;
    cfg.apply_mode(mode)?;
    for item in overrides {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;

    let mut manifest = RunManifest::start("train", cfg.seed, config_map(&cfg));
    manifest.add_input(dictionary)?;
    manifest.add_input(train)?;
    manifest.add_input(val)?;

    let records = load_dictionary(dictionary)?;
    let train_set = load_corpus(train)?;
    let val_set = load_corpus(val)?;
    let rho = cfg.rho;
    let net_for_client = SimilarityNetwork::build(records.clone(), rho)?;
    let endpoint = std::env::var(AUGMENT_ENDPOINT_ENV).ok();
    let client = client_from_spec(endpoint.as_deref(), &net_for_client, cfg.seed, 60);

    let outcome = trainer::train(&cfg, records, &train_set, &val_set, client.as_ref(), out_dir)?;
    manifest.add_output(&out_dir.join("disc_final.ckpt"))?;
    manifest.add_output(&out_dir.join("gen_final.ckpt"))?;
    manifest.add_output(&out_dir.join("epoch_reports.json"))?;
    manifest.finish(out_dir)?;
    println!(
        "trained {} epochs (mode {mode}), best validation macro-F1 {:.4}",
        outcome.epochs_run, outcome.best_val_macro_f1
    );
    for r in &outcome.reports {
        println!(
            "epoch {}: disc_loss={:.4} gen_loss={:.4} reward={:.4} val_macro_f1={:.4}",
            r.epoch, r.disc_loss, r.gen_loss, r.mean_reward, r.val_metrics.macro_f1
        );
    }
    Ok(())
}

pub fn cmd_eval(checkpoint_path: &Path, test: &Path, seed: u64, out_dir: &Path) -> Result<()> {
    let mut manifest = RunManifest::start("eval", seed, BTreeMap::new());
    manifest.add_input(checkpoint_path)?;
    manifest.add_input(test)?;
    let (model, _) = checkpoint::load_discriminator(checkpoint_path)?;
    let test_set = load_corpus(test)?;
    if test_set.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let report = trainer::evaluate_model(&model, &test_set)?;
    let json_path = out_dir.join("metrics.json");
    std::fs::write(&json_path, report.to_json())
        .map_err(|e| Error::io(json_path.display().to_string(), e))?;
    let table_path = out_dir.join("metrics.txt");
    std::fs::write(&table_path, report.to_table())
        .map_err(|e| Error::io(table_path.display().to_string(), e))?;
    manifest.add_output(&json_path)?;
    manifest.add_output(&table_path)?;
    manifest.finish(out_dir)?;
    print!("{}", report.to_table());
    Ok(())
}

pub fn cmd_detect(
    checkpoint_path: &Path,
    input: Option<&Path>,
    threshold: Option<f64>,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let mut manifest = RunManifest::start("detect", seed, BTreeMap::new());
    manifest.add_input(checkpoint_path)?;
    let (mut model, _) = checkpoint::load_discriminator(checkpoint_path)?;
    if let Some(t) = threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange { what: "threshold", value: t });
        }
        model.threshold = t;
    }
    let text = match input {
        Some(path) => {
            manifest.add_input(path)?;
            let bytes =
                std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
            String::from_utf8(bytes).map_err(|_| {
                Error::Parse {
                    path: path.display().to_string(),
                    line: 0,
                    msg: "input is not valid UTF-8".into(),
                }
            })?
        }
        None => {
            let mut buf = Vec::new();
            std::io::stdin()
                .lock()
                .read_to_end(&mut buf)
                .map_err(|e| Error::io("stdin", e))?;
            String::from_utf8(buf).map_err(|_| Error::Parse {
                path: "stdin".into(),
                line: 0,
                msg: "input is not valid UTF-8".into(),
            })?
        }
    };
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in text.lines() {
        if line.is_empty() {
            continue;
        }
        let p = model.predict(line)?;
        let label = u8::from(p >= model.threshold);
        writeln!(out, "{p:.6}\t{label}\t{line}").map_err(|e| Error::io("stdout", e))?;
    }
    manifest.finish(out_dir)?;
    Ok(())
}

pub fn cmd_attack(
    generator_path: &Path,
    discriminator_path: &Path,
    spam: &Path,
    out: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let mut manifest = RunManifest::start("attack", seed, BTreeMap::new());
    manifest.add_input(generator_path)?;
    manifest.add_input(discriminator_path)?;
    manifest.add_input(spam)?;
    let gen = checkpoint::load_generator(generator_path)?;
    let (disc, _) = checkpoint::load_discriminator(discriminator_path)?;
    if gen.vocab() != disc.table.vocab() {
        return Err(Error::Checkpoint(
            "generator and discriminator checkpoints have different vocabularies".into(),
        ));
    }
    let text =
        std::fs::read_to_string(spam).map_err(|e| Error::io(spam.display().to_string(), e))?;
    let mut audit = String::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let trace = gen.perturb(line, seed.wrapping_add(i as u64))?;
        let d_orig = disc.predict(line)?;
        let d_pert = disc.predict(&trace.perturbed_text())?;
        audit.push_str(&format!(
            "{}\t{d_orig:.6}\t{d_pert:.6}\n",
            trace.audit_line(gen.net())
        ));
    }
    std::fs::write(out, &audit).map_err(|e| Error::io(out.display().to_string(), e))?;
    manifest.add_output(out)?;
    manifest.finish(out_dir)?;
    println!("attack audit written to {}", out.display());
    Ok(())
}

pub fn cmd_augment(
    corpus: &Path,
    dictionary: &Path,
    rho: f64,
    target: usize,
    out: &Path,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let mut manifest = RunManifest::start("augment", seed, BTreeMap::new());
    manifest.add_input(corpus)?;
    manifest.add_input(dictionary)?;
    let samples = load_corpus(corpus)?;
    let records = load_dictionary(dictionary)?;
    let net = SimilarityNetwork::build(records, rho)?;
    let endpoint = std::env::var(AUGMENT_ENDPOINT_ENV).ok();
    let client = client_from_spec(endpoint.as_deref(), &net, seed, 60);
    let grown = augment::static_augment(&samples, client.as_ref(), target, seed)?;
    let added = &grown[samples.len()..];
    let set = augment::AugmentedSet {
        epoch_tag: 0,
        samples: added.to_vec(),
        provenance: client.name().to_string(),
        skipped_lines: 0,
    };
    std::fs::write(out, augment::augmented_set_to_string(&set))
        .map_err(|e| Error::io(out.display().to_string(), e))?;
    manifest.add_output(out)?;
    manifest.finish(out_dir)?;
    println!("{} augmented samples written to {}", added.len(), out.display());
    Ok(())
}

/// Library-level detect over in-memory lines, mirrored by the subcommand.
pub fn detect_lines(
    model: &crate::discriminator::DiscriminatorModel,
    lines: &[&str],
) -> Result<Vec<(f64, u8)>> {
    lines
        .iter()
        .map(|l| {
            let p = model.predict(l)?;
            Ok((p, u8::from(p >= model.threshold)))
        })
        .collect()
}

/// Library-level eval used by tests to cross-check the subcommand output.
pub fn eval_samples(
    model: &crate::discriminator::DiscriminatorModel,
    samples: &[LabeledSample],
) -> Result<crate::evaluate::MetricsReport> {
    let probs: Vec<f64> =
        samples.iter().map(|s| model.predict(&s.text)).collect::<Result<_>>()?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let preds = threshold_predictions(&probs, model.threshold);
    metrics(&confusion(&labels, &preds)?)
}
