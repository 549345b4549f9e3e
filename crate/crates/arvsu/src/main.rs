//! Thin command-line front end over [`arvsu::pipeline`].
//!
//! Each subcommand maps onto one `run_*` function; this file only parses
//! arguments, forwards them, and prints results. Domain errors come out
//! as a single `error: <kind>: <message>` line with a non-zero exit.
//! Selected options can also be set through `ARVSU_`-prefixed
//! environment variables (see `--help` per subcommand).

use std::io::{self, BufReader, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use arvsu::corpus::{Priority, SynthOptions, NUM_CLASSES};
use arvsu::pipeline::{
    rerun, run_eval, run_predict, run_predict_file, run_prepare, run_stats, run_synth, run_train,
    PredictSource, PrepareOptions, SplitSelector, TrainOptions,
};
use arvsu::{Error, Result};

#[derive(Parser)]
#[command(
    name = "arvsu",
    version,
    about = "Addressee recognition for visually grounded utterances: corpus tools, training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Turn a raw annotation file into a training corpus plus statistics.
    Prepare {
        /// Raw annotation file (tag line `arvsu-raw/1`).
        raw: PathBuf,
        /// Corpus file to write; sidecars and stats land next to it.
        #[arg(long)]
        out: PathBuf,
        /// Class priority for multi-flag annotations, e.g. `photographer,los,others`.
        #[arg(long, env = "ARVSU_PRIORITY", default_value_t = Priority::default().to_string())]
        priority: String,
        /// Width of the placeholder saliency features.
        #[arg(long, default_value_t = 64)]
        saliency_dim: usize,
        /// Width of the placeholder speaker features.
        #[arg(long, default_value_t = 64)]
        speaker_dim: usize,
    },
    /// Train a model on a corpus (seeded 3:1:1 split, best-epoch checkpoint).
    Train {
        /// Corpus file produced by `prepare` or `synth`.
        corpus: PathBuf,
        /// Output directory for model.ckpt, train.log and train.manifest.
        #[arg(long, env = "ARVSU_OUT")]
        out: PathBuf,
        /// Model variant: visual_only, text_only or multimodal.
        #[arg(long, env = "ARVSU_VARIANT", default_value = "multimodal")]
        variant: String,
        #[arg(long, env = "ARVSU_LR", default_value_t = 0.001)]
        lr: f64,
        #[arg(long, env = "ARVSU_BATCH_SIZE", default_value_t = 64)]
        batch_size: usize,
        #[arg(long, env = "ARVSU_MAX_EPOCHS", default_value_t = 100)]
        max_epochs: usize,
        /// Epochs without a validation improvement before stopping.
        #[arg(long, default_value_t = 10)]
        patience: usize,
        #[arg(long, env = "ARVSU_SEED", default_value_t = 0)]
        seed: u64,
        /// Cap on tokens per utterance (default: keep all).
        #[arg(long)]
        max_tokens: Option<usize>,
        /// Pretrained word-vector file (text variants only).
        #[arg(long, env = "ARVSU_EMBEDDINGS")]
        embeddings: Option<PathBuf>,
        /// Output width of each image stream's dense layer.
        #[arg(long, default_value_t = 256)]
        stream_dim: usize,
        #[arg(long, default_value_t = 100)]
        embed_dim: usize,
        #[arg(long, default_value_t = 128)]
        lstm_hidden: usize,
        /// Minimum training-split frequency for a vocabulary row.
        #[arg(long, default_value_t = 1)]
        vocab_min_count: usize,
    },
    /// Evaluate a checkpoint on one split of a corpus.
    Eval {
        checkpoint: PathBuf,
        corpus: PathBuf,
        /// Which split to score: train, val or test.
        #[arg(long, default_value = "test")]
        split: String,
        /// Split seed; defaults to the seed stored in the checkpoint.
        #[arg(long, env = "ARVSU_SEED")]
        seed: Option<u64>,
        /// Also write the structured report (and a manifest) here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict classes for corpus records or utterance lines.
    Predict {
        checkpoint: PathBuf,
        /// Corpus file, or `-` to read `id<TAB>utterance` lines from stdin.
        input: String,
        /// Write predictions here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic corpus with a chosen signal structure.
    Synth {
        /// Number of records (at least 30).
        n: usize,
        /// Corpus file to write.
        #[arg(long)]
        out: PathBuf,
        /// Which modality carries the label: visual, text or both.
        #[arg(long, default_value = "both")]
        regime: String,
        #[arg(long, env = "ARVSU_SEED", default_value_t = 0)]
        seed: u64,
        /// Width of both feature vectors.
        #[arg(long, default_value_t = 32)]
        feat_dim: usize,
        /// Feature noise amplitude.
        #[arg(long)]
        noise: Option<f64>,
        /// Relative class frequencies, e.g. `0.5086,0.1420,0.3494`.
        #[arg(long)]
        proportions: Option<String>,
        /// Per-class share of records made deliberately ambiguous.
        #[arg(long)]
        ambiguous: Option<String>,
    },
    /// Print statistics for a raw annotation file or a corpus file.
    Stats {
        input: PathBuf,
        /// Priority used to resolve multi-flag annotations in raw files.
        #[arg(long, env = "ARVSU_PRIORITY", default_value_t = Priority::default().to_string())]
        priority: String,
    },
    /// Replay a previous run from its manifest file.
    Rerun { manifest: PathBuf },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        // A downstream `head` closing the pipe is not a failure.
        Err(Error::Io { source, .. }) if source.kind() == io::ErrorKind::BrokenPipe => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Prepare {
            raw,
            out,
            priority,
            saliency_dim,
            speaker_dim,
        } => {
            let opts = PrepareOptions {
                priority: priority.parse()?,
                saliency_dim,
                speaker_dim,
            };
            let summary = run_prepare(&raw, &out, &opts)?;
            println!(
                "wrote {} records to {} ({} dropped as not-applicable)",
                summary.kept,
                summary.corpus_path.display(),
                summary.skipped
            );
            println!("stats: {}", summary.stats_path.display());
            Ok(())
        }
        Cmd::Train {
            corpus,
            out,
            variant,
            lr,
            batch_size,
            max_epochs,
            patience,
            seed,
            max_tokens,
            embeddings,
            stream_dim,
            embed_dim,
            lstm_hidden,
            vocab_min_count,
        } => {
            let opts = TrainOptions {
                variant: variant.parse()?,
                stream_dim,
                embed_dim,
                lstm_hidden,
                vocab_min_count,
                lr,
                batch_size,
                max_epochs,
                patience,
                seed,
                max_tokens,
                embeddings,
            };
            let art = run_train(&corpus, &out, &opts)?;
            println!(
                "split {} / {} / {} records (train/val/test), vocabulary {} entries",
                art.train_records,
                art.val_records,
                art.test_records,
                art.checkpoint.vocab.len()
            );
            if let Some(stats) = &art.embedding_stats {
                println!(
                    "embeddings: {} matched, {} randomly initialised",
                    stats.matched, stats.missing
                );
            }
            println!(
                "{} epochs, best epoch {} at validation accuracy {:.4}{}",
                art.outcome.epochs_run,
                art.outcome.best_epoch,
                art.outcome.best_val_accuracy,
                if art.outcome.stopped_early {
                    " (stopped early)"
                } else {
                    ""
                }
            );
            println!("checkpoint: {}", art.checkpoint_path.display());
            println!("log: {}", art.log_path.display());
            Ok(())
        }
        Cmd::Eval {
            checkpoint,
            corpus,
            split,
            seed,
            out,
        } => {
            let split = SplitSelector::from_str(&split)?;
            let arts = run_eval(&checkpoint, &corpus, split, seed, out.as_deref())?;
            print!("{}", arts.table);
            if let Some(path) = arts.report_path {
                println!("report: {}", path.display());
            }
            Ok(())
        }
        Cmd::Predict {
            checkpoint,
            input,
            out,
        } => {
            if input == "-" {
                let stdin = io::stdin();
                let mut reader = BufReader::new(stdin.lock());
                let mut sink: Box<dyn Write> = match &out {
                    Some(path) => Box::new(std::fs::File::create(path).map_err(|e| {
                        Error::Io {
                            path: path.clone(),
                            source: e,
                        }
                    })?),
                    None => Box::new(io::stdout().lock()),
                };
                run_predict(&checkpoint, PredictSource::Lines(&mut reader), &mut sink)?;
            } else {
                let corpus = PathBuf::from(&input);
                match &out {
                    Some(path) => {
                        let (n, _) = run_predict_file(&checkpoint, &corpus, path)?;
                        println!("wrote {n} predictions to {}", path.display());
                    }
                    None => {
                        let mut stdout = io::stdout().lock();
                        run_predict(&checkpoint, PredictSource::Corpus(&corpus), &mut stdout)?;
                    }
                }
            }
            Ok(())
        }
        Cmd::Synth {
            n,
            out,
            regime,
            seed,
            feat_dim,
            noise,
            proportions,
            ambiguous,
        } => {
            let mut opts = SynthOptions::new(n, regime.parse()?, seed);
            opts.feat_dim = feat_dim;
            if let Some(noise) = noise {
                opts.noise = noise;
            }
            if let Some(raw) = proportions {
                opts.proportions = parse_triple(&raw, "--proportions")?;
            }
            if let Some(raw) = ambiguous {
                opts.ambiguous_rate = parse_triple(&raw, "--ambiguous")?;
            }
            let summary = run_synth(&out, &opts)?;
            println!(
                "wrote {} synthetic records to {}",
                summary.records,
                summary.corpus_path.display()
            );
            Ok(())
        }
        Cmd::Stats { input, priority } => {
            let text = run_stats(&input, &priority.parse()?)?;
            print!("{text}");
            Ok(())
        }
        Cmd::Rerun { manifest } => {
            let sub = rerun(&manifest)?;
            println!("replayed {sub} run from {}", manifest.display());
            Ok(())
        }
    }
}

fn parse_triple(raw: &str, flag: &str) -> Result<[f64; NUM_CLASSES]> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != NUM_CLASSES {
        return Err(Error::Usage(format!(
            "{flag} needs {NUM_CLASSES} comma-separated values, got {}",
            parts.len()
        )));
    }
    let mut out = [0.0; NUM_CLASSES];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part.trim().parse().map_err(|_| {
            Error::Usage(format!("{flag} has an unparsable value in `{raw}`"))
        })?;
    }
    Ok(out)
}
