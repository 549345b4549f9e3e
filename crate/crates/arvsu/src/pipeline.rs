//! End-to-end workflows: prepare, train, eval, predict, synth, stats.
//!
//! Each `run_*` function is the library form of one CLI subcommand. They
//! are deliberately free of printing (callers decide where text goes) and
//! every byte they write is deterministic: same inputs and seed, same
//! output files.
//!
//! Every run that produces files also writes a `<subcommand>.manifest`
//! next to its primary output. The manifest records the resolved inputs,
//! options and output paths, and [`rerun`] replays any run from its
//! manifest alone, reproducing the outputs byte for byte.

use std::fmt;
use std::fs;
use std::io::{BufRead, Write as IoWrite};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::corpus::{
    generate_synthetic, read_corpus, read_raw_annotations, reorganize_label, shuffled_split,
    write_corpus, ClassStats, ClassWeights, CorpusRecord, FlagStats, Priority, SynthOptions,
    NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::model::{ModelConfig, ModelParams, SampleInput, Variant};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::text::{load_pretrained, tokenize, LoadStats, Vocabulary};
use crate::train::{prepare_samples, train, TrainConfig, TrainOutcome};

pub const MANIFEST_TAG: &str = "arvsu-manifest/1";
pub const TRAIN_LOG_TAG: &str = "arvsu-train-log/1";

/// RNG stream tags so the parameter init, the embedding fill-in and the
/// split shuffle never share a stream.
const INIT_TAG: u64 = 0x494e_4954;
const EMBED_TAG: u64 = 0x454d_4244;

// ---------------------------------------------------------------------------
// Manifest

/// Resolved record of one run: subcommand, tool version and every option
/// needed to repeat it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        let mut m = RunManifest {
            entries: Vec::new(),
        };
        m.push("subcommand", subcommand);
        m.push("tool_version", env!("CARGO_PKG_VERSION"));
        m
    }

    pub fn push(&mut self, key: &str, value: impl fmt::Display) {
        let value = value.to_string();
        debug_assert!(!key.contains('=') && !key.contains('\n'));
        debug_assert!(!value.contains('\n'));
        self.entries.push((key.to_string(), value));
    }

    pub fn subcommand(&self) -> Result<&str> {
        self.value("subcommand")
    }

    pub fn value(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::InvalidConfig(format!("manifest is missing key `{key}`")))
    }

    /// Parse the value under `key`, naming the key on failure.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.value(key)?;
        raw.parse().map_err(|_| {
            Error::InvalidConfig(format!("manifest key `{key}` has unusable value `{raw}`"))
        })
    }

    /// Parse `key` whose value may be the literal `none`.
    pub fn parsed_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.value(key)? {
            "none" => Ok(None),
            _ => Ok(Some(self.parsed(key)?)),
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn emit(&self) -> String {
        let mut out = String::with_capacity(256);
        out.push_str(MANIFEST_TAG);
        out.push('\n');
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(tag) if tag == MANIFEST_TAG => {}
            _ => return Err(Error::BadMagic),
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: "<manifest>".into(),
                line: i + 2,
                msg: "expected key=value".into(),
            })?;
            entries.push((k.to_string(), v.to_string()));
        }
        let m = RunManifest { entries };
        m.subcommand()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.emit()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn manifest_path_for(primary_output: &Path, subcommand: &str) -> PathBuf {
    primary_output.with_file_name(format!("{subcommand}.manifest"))
}

fn join_csv<T: fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_csv3(raw: &str, key: &str) -> Result<[f64; NUM_CLASSES]> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != NUM_CLASSES {
        return Err(Error::InvalidConfig(format!(
            "manifest key `{key}` needs {NUM_CLASSES} comma-separated values, got {}",
            parts.len()
        )));
    }
    let mut out = [0.0; NUM_CLASSES];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part.trim().parse().map_err(|_| {
            Error::InvalidConfig(format!("manifest key `{key}` has unusable value `{raw}`"))
        })?;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// prepare

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOptions {
    /// Class priority for annotations carrying several addressee flags.
    pub priority: Priority,
    /// Width of the placeholder saliency features attached to each record.
    pub saliency_dim: usize,
    /// Width of the placeholder speaker features.
    pub speaker_dim: usize,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            priority: Priority::default(),
            saliency_dim: 64,
            speaker_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    /// Annotations that became corpus records.
    pub kept: usize,
    /// Annotations dropped as not-applicable.
    pub skipped: usize,
    pub flags: FlagStats,
    pub classes: ClassStats,
    pub corpus_path: PathBuf,
    pub stats_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Turn a raw annotation file into a training corpus plus a statistics
/// report. Multi-flag annotations resolve to one class by `priority`;
/// not-applicable annotations are dropped; features are deterministic
/// placeholders derived from each record id.
pub fn run_prepare(raw: &Path, out: &Path, opts: &PrepareOptions) -> Result<PrepareSummary> {
    if opts.saliency_dim == 0 || opts.speaker_dim == 0 {
        return Err(Error::InvalidConfig(
            "feature widths must be positive".into(),
        ));
    }
    let annotations = read_raw_annotations(raw)?;
    let flags = FlagStats::of(&annotations);

    let mut records = Vec::new();
    let mut skipped = 0usize;
    for (i, a) in annotations.iter().enumerate() {
        let label = reorganize_label(&a.flags, &opts.priority).map_err(|e| Error::Parse {
            path: raw.display().to_string(),
            // Data rows start after the single tag line.
            line: i + 2,
            msg: e.to_string(),
        })?;
        let Some(label) = label else {
            skipped += 1;
            continue;
        };
        records.push(CorpusRecord {
            record_id: a.record_id.clone(),
            label,
            head_loc: a.head_loc,
            utterance: a.utterance.clone(),
            saliency: crate::corpus::stub_features(&a.record_id, "saliency", opts.saliency_dim),
            speaker: crate::corpus::stub_features(&a.record_id, "speaker", opts.speaker_dim),
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput {
            what: "surviving records",
        });
    }
    let classes = ClassStats::of(&records);

    write_corpus(out, &records)?;
    let stats_path = out.with_extension("stats.txt");
    fs::write(&stats_path, stats_report_text(Some(&flags), &classes, skipped))
        .map_err(|e| Error::io(&stats_path, e))?;

    let mut manifest = RunManifest::new("prepare");
    manifest.push("raw", raw.display());
    manifest.push("out", out.display());
    manifest.push("priority", &opts.priority);
    manifest.push("saliency_dim", opts.saliency_dim);
    manifest.push("speaker_dim", opts.speaker_dim);
    let manifest_path = manifest_path_for(out, "prepare");
    manifest.write(&manifest_path)?;

    Ok(PrepareSummary {
        kept: records.len(),
        skipped,
        flags,
        classes,
        corpus_path: out.to_path_buf(),
        stats_path,
        manifest_path,
    })
}

fn stats_report_text(flags: Option<&FlagStats>, classes: &ClassStats, skipped: usize) -> String {
    let mut out = String::new();
    if let Some(flags) = flags {
        out.push_str("annotation flags (an annotation may carry several)\n");
        out.push_str(&flags.to_string());
        out.push_str("\n\n");
    }
    out.push_str("addressee classes\n");
    out.push_str(&classes.to_string());
    out.push('\n');
    if skipped > 0 {
        out.push_str(&format!("dropped as not-applicable: {skipped}\n"));
    }
    out
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub variant: Variant,
    /// Output width of each image stream's dense layer.
    pub stream_dim: usize,
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    /// Words must appear this often in the training split to get a
    /// vocabulary row; rarer words map to the unknown token.
    pub vocab_min_count: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub max_tokens: Option<usize>,
    /// Optional pretrained word-vector file; rows matching the vocabulary
    /// replace the random embedding init.
    pub embeddings: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        let t = TrainConfig::default();
        let m = ModelConfig::default();
        TrainOptions {
            variant: Variant::Multimodal,
            stream_dim: m.stream_dim,
            embed_dim: m.embed_dim,
            lstm_hidden: m.lstm_hidden,
            vocab_min_count: 1,
            lr: t.lr,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            max_tokens: t.max_tokens,
            embeddings: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifacts {
    pub outcome: TrainOutcome,
    pub checkpoint: Checkpoint,
    pub class_weights: ClassWeights,
    /// Coverage of the pretrained embedding file, when one was given.
    pub embedding_stats: Option<LoadStats>,
    pub train_records: usize,
    pub val_records: usize,
    pub test_records: usize,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Train a model on a corpus file: seeded 3:1:1 split, vocabulary and
/// class weights from the training split only, best-validation-epoch
/// checkpoint written to `out_dir/model.ckpt` with an epoch log beside it.
pub fn run_train(corpus: &Path, out_dir: &Path, opts: &TrainOptions) -> Result<TrainArtifacts> {
    let records = read_corpus(corpus)?;
    if records.len() < 5 {
        return Err(Error::TooFewRecords {
            n: records.len(),
            min: 5,
        });
    }
    if opts.embeddings.is_some() && !opts.variant.uses_text() {
        return Err(Error::InvalidConfig(
            "pretrained embeddings only apply to text-using variants".into(),
        ));
    }
    let saliency_dim = records[0].saliency.len();
    let speaker_dim = records[0].speaker.len();

    let (train_recs, val_recs, test_recs) = shuffled_split(records, opts.seed)?;

    let docs: Vec<Vec<String>> = train_recs.iter().map(|r| tokenize(&r.utterance)).collect();
    let vocab = Vocabulary::build(docs.iter().map(|d| d.as_slice()), opts.vocab_min_count);

    let mut counts = [0usize; NUM_CLASSES];
    for r in &train_recs {
        counts[r.label.index()] += 1;
    }
    let class_weights = ClassWeights::from_counts(counts)?;

    let config = ModelConfig {
        saliency_dim,
        speaker_dim,
        head_loc_dim: 2,
        stream_dim: opts.stream_dim,
        embed_dim: opts.embed_dim,
        lstm_hidden: opts.lstm_hidden,
        num_classes: NUM_CLASSES,
        vocab_size: vocab.len(),
    };
    let mut params = ModelParams::init(
        opts.variant,
        &config,
        &mut Rng::new(opts.seed).derive(INIT_TAG),
    )?;

    let mut embedding_stats = None;
    if let Some(emb_path) = &opts.embeddings {
        let (table, stats) = load_pretrained(
            emb_path,
            &vocab,
            opts.embed_dim,
            &mut Rng::new(opts.seed).derive(EMBED_TAG),
        )?;
        let slot = params
            .tensors_mut()
            .into_iter()
            .find(|(name, _)| name == "embedding.table")
            .map(|(_, t)| t)
            .ok_or_else(|| Error::ConfigMismatch("model has no embedding table".into()))?;
        slot.data_mut().copy_from_slice(table.data());
        embedding_stats = Some(stats);
    }

    let train_samples = prepare_samples(&train_recs, &vocab, opts.max_tokens);
    let val_samples = prepare_samples(&val_recs, &vocab, opts.max_tokens);

    let cfg = TrainConfig {
        lr: opts.lr,
        batch_size: opts.batch_size,
        max_epochs: opts.max_epochs,
        patience: opts.patience,
        seed: opts.seed,
        class_weights,
        max_tokens: opts.max_tokens,
    };
    let outcome = train(&mut params, &cfg, &train_samples, &val_samples)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let checkpoint = Checkpoint::from_model(
        &params,
        &vocab,
        outcome.best_epoch,
        outcome.best_val_accuracy,
        opts.seed,
        opts.max_tokens,
    );
    let checkpoint_path = out_dir.join("model.ckpt");
    checkpoint.write(&checkpoint_path)?;

    let log_path = out_dir.join("train.log");
    fs::write(
        &log_path,
        train_log_text(opts, &vocab, &class_weights, &outcome, [
            train_recs.len(),
            val_recs.len(),
            test_recs.len(),
        ], embedding_stats.as_ref()),
    )
    .map_err(|e| Error::io(&log_path, e))?;

    let mut manifest = RunManifest::new("train");
    manifest.push("corpus", corpus.display());
    manifest.push("out", out_dir.display());
    manifest.push("variant", opts.variant);
    manifest.push("stream_dim", opts.stream_dim);
    manifest.push("embed_dim", opts.embed_dim);
    manifest.push("lstm_hidden", opts.lstm_hidden);
    manifest.push("vocab_min_count", opts.vocab_min_count);
    manifest.push("lr", opts.lr);
    manifest.push("batch_size", opts.batch_size);
    manifest.push("max_epochs", opts.max_epochs);
    manifest.push("patience", opts.patience);
    manifest.push("seed", opts.seed);
    match opts.max_tokens {
        Some(n) => manifest.push("max_tokens", n),
        None => manifest.push("max_tokens", "none"),
    }
    match &opts.embeddings {
        Some(p) => manifest.push("embeddings", p.display()),
        None => manifest.push("embeddings", "none"),
    }
    let manifest_path = out_dir.join("train.manifest");
    manifest.write(&manifest_path)?;

    Ok(TrainArtifacts {
        outcome,
        checkpoint,
        class_weights,
        embedding_stats,
        train_records: train_recs.len(),
        val_records: val_recs.len(),
        test_records: test_recs.len(),
        checkpoint_path,
        log_path,
        manifest_path,
    })
}

fn train_log_text(
    opts: &TrainOptions,
    vocab: &Vocabulary,
    weights: &ClassWeights,
    outcome: &TrainOutcome,
    split_sizes: [usize; 3],
    embedding_stats: Option<&LoadStats>,
) -> String {
    let mut out = String::new();
    out.push_str(TRAIN_LOG_TAG);
    out.push('\n');
    out.push_str(&format!("variant={}\n", opts.variant));
    out.push_str(&format!("seed={}\n", opts.seed));
    out.push_str(&format!("train_records={}\n", split_sizes[0]));
    out.push_str(&format!("val_records={}\n", split_sizes[1]));
    out.push_str(&format!("test_records={}\n", split_sizes[2]));
    out.push_str(&format!("vocab_size={}\n", vocab.len()));
    out.push_str(&format!(
        "class_weights={}\n",
        join_csv(&weights.as_array())
    ));
    if let Some(stats) = embedding_stats {
        out.push_str(&format!(
            "embeddings_matched={}\nembeddings_missing={}\n",
            stats.matched, stats.missing
        ));
    }
    out.push_str(&format!("epochs_run={}\n", outcome.epochs_run));
    out.push_str(&format!("best_epoch={}\n", outcome.best_epoch));
    out.push_str(&format!(
        "best_val_accuracy={}\n",
        outcome.best_val_accuracy
    ));
    out.push_str(&format!("stopped_early={}\n", outcome.stopped_early));
    out.push_str("epoch\ttrain_loss\tval_accuracy\n");
    for e in &outcome.log {
        out.push_str(&format!(
            "{}\t{}\t{}\n",
            e.epoch, e.train_loss, e.val_accuracy
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSelector {
    Train,
    Val,
    Test,
}

impl SplitSelector {
    pub fn name(self) -> &'static str {
        match self {
            SplitSelector::Train => "train",
            SplitSelector::Val => "val",
            SplitSelector::Test => "test",
        }
    }
}

impl fmt::Display for SplitSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitSelector::Train),
            "val" => Ok(SplitSelector::Val),
            "test" => Ok(SplitSelector::Test),
            other => Err(Error::Usage(format!(
                "unknown split `{other}` (expected train, val or test)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArtifacts {
    pub report: EvalReport,
    /// Human-readable per-class table.
    pub table: String,
    pub report_path: Option<PathBuf>,
    pub manifest_path: Option<PathBuf>,
}

/// Evaluate a checkpoint on one split of a corpus. The split is recreated
/// with `seed` (defaulting to the seed stored in the checkpoint, so it
/// matches training membership exactly). With `out`, the structured
/// report and a manifest are written next to each other.
pub fn run_eval(
    ckpt_path: &Path,
    corpus: &Path,
    split: SplitSelector,
    seed: Option<u64>,
    out: Option<&Path>,
) -> Result<EvalArtifacts> {
    let ckpt = Checkpoint::read(ckpt_path)?;
    let params = ckpt.to_model()?;
    let records = read_corpus(corpus)?;
    check_corpus_dims(&ckpt, &records)?;

    let seed = seed.unwrap_or(ckpt.seed);
    let (train_recs, val_recs, test_recs) = shuffled_split(records, seed)?;
    let chosen = match split {
        SplitSelector::Train => train_recs,
        SplitSelector::Val => val_recs,
        SplitSelector::Test => test_recs,
    };
    let samples = prepare_samples(&chosen, &ckpt.vocab, ckpt.max_tokens);
    let confusion = evaluate(&params, &samples)?;
    let report = EvalReport::new(ckpt.variant.name(), split.name(), confusion)?;
    let table = report.text_table();

    let mut report_path = None;
    let mut manifest_path = None;
    if let Some(out) = out {
        fs::write(out, report.emit()).map_err(|e| Error::io(out, e))?;
        let mut manifest = RunManifest::new("eval");
        manifest.push("checkpoint", ckpt_path.display());
        manifest.push("corpus", corpus.display());
        manifest.push("split", split);
        manifest.push("seed", seed);
        manifest.push("out", out.display());
        let mpath = manifest_path_for(out, "eval");
        manifest.write(&mpath)?;
        report_path = Some(out.to_path_buf());
        manifest_path = Some(mpath);
    }

    Ok(EvalArtifacts {
        report,
        table,
        report_path,
        manifest_path,
    })
}

fn check_corpus_dims(ckpt: &Checkpoint, records: &[CorpusRecord]) -> Result<()> {
    if !ckpt.variant.uses_visual() {
        return Ok(());
    }
    let Some(first) = records.first() else {
        return Ok(());
    };
    if first.saliency.len() != ckpt.config.saliency_dim {
        return Err(Error::ConfigMismatch(format!(
            "corpus saliency features are {}-dimensional, checkpoint expects {}",
            first.saliency.len(),
            ckpt.config.saliency_dim
        )));
    }
    if first.speaker.len() != ckpt.config.speaker_dim {
        return Err(Error::ConfigMismatch(format!(
            "corpus speaker features are {}-dimensional, checkpoint expects {}",
            first.speaker.len(),
            ckpt.config.speaker_dim
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// predict

/// Where prediction inputs come from: a corpus file (all variants) or a
/// stream of `id<TAB>utterance` / bare-utterance lines (text-only models,
/// since lines carry no visual features).
pub enum PredictSource<'a> {
    Corpus(&'a Path),
    Lines(&'a mut dyn BufRead),
}

/// Predict a class for every input record, streaming one line per record
/// to `sink` in input order: record id, class name and the three class
/// probabilities at full precision, tab-separated. Returns the record
/// count.
pub fn run_predict(
    ckpt_path: &Path,
    source: PredictSource<'_>,
    sink: &mut dyn IoWrite,
) -> Result<usize> {
    let ckpt = Checkpoint::read(ckpt_path)?;
    let params = ckpt.to_model()?;
    let mut n = 0usize;
    match source {
        PredictSource::Corpus(path) => {
            let records = read_corpus(path)?;
            check_corpus_dims(&ckpt, &records)?;
            for r in &records {
                let input = corpus_record_input(&ckpt, r);
                predict_line(&params, &r.record_id, &input, sink)?;
                n += 1;
            }
        }
        PredictSource::Lines(reader) => {
            if ckpt.variant.uses_visual() {
                return Err(Error::InvalidConfig(
                    "line input carries no visual features; this checkpoint needs a corpus file"
                        .into(),
                ));
            }
            for line in reader.lines() {
                let line = line.map_err(|e| Error::io(Path::new("<input>"), e))?;
                if line.is_empty() {
                    continue;
                }
                n += 1;
                let (id, utterance) = match line.split_once('\t') {
                    Some((id, utt)) => (id.to_string(), utt.to_string()),
                    None => (format!("line-{n:06}"), line),
                };
                let input = SampleInput {
                    saliency: Tensor::vector(Vec::new()),
                    speaker: Tensor::vector(Vec::new()),
                    head_loc: Vec::new(),
                    tokens: encode_utterance(&ckpt, &utterance),
                };
                predict_line(&params, &id, &input, sink)?;
            }
        }
    }
    Ok(n)
}

/// File-to-file prediction with a manifest, for reproducible runs.
pub fn run_predict_file(ckpt_path: &Path, corpus: &Path, out: &Path) -> Result<(usize, PathBuf)> {
    let mut buf = Vec::new();
    let n = run_predict(ckpt_path, PredictSource::Corpus(corpus), &mut buf)?;
    fs::write(out, buf).map_err(|e| Error::io(out, e))?;
    let mut manifest = RunManifest::new("predict");
    manifest.push("checkpoint", ckpt_path.display());
    manifest.push("corpus", corpus.display());
    manifest.push("out", out.display());
    let manifest_path = manifest_path_for(out, "predict");
    manifest.write(&manifest_path)?;
    Ok((n, manifest_path))
}

fn encode_utterance(ckpt: &Checkpoint, utterance: &str) -> Vec<usize> {
    let mut tokens = ckpt.vocab.encode(&tokenize(utterance));
    if tokens.is_empty() {
        tokens.push(crate::text::OOV_INDEX);
    }
    if let Some(cap) = ckpt.max_tokens {
        tokens.truncate(cap.max(1));
    }
    tokens
}

fn corpus_record_input(ckpt: &Checkpoint, r: &CorpusRecord) -> SampleInput {
    SampleInput {
        saliency: Tensor::vector(r.saliency.clone()),
        speaker: Tensor::vector(r.speaker.clone()),
        head_loc: r.head_loc.to_vec(),
        tokens: encode_utterance(ckpt, &r.utterance),
    }
}

fn predict_line(
    params: &ModelParams,
    id: &str,
    input: &SampleInput,
    sink: &mut dyn IoWrite,
) -> Result<()> {
    let probs = params.forward(input)?;
    let class = crate::corpus::AddresseeClass::from_index(probs.argmax())?;
    let cells: Vec<String> = probs.data().iter().map(|p| p.to_string()).collect();
    writeln!(sink, "{}\t{}\t{}", id, class.name(), cells.join("\t"))
        .map_err(|e| Error::io(Path::new("<output>"), e))
}

// ---------------------------------------------------------------------------
// synth

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub records: usize,
    pub classes: ClassStats,
    pub corpus_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Generate a synthetic corpus and write it as corpus files plus a
/// manifest.
pub fn run_synth(out: &Path, opts: &SynthOptions) -> Result<SynthSummary> {
    let records = generate_synthetic(opts)?;
    let classes = ClassStats::of(&records);
    write_corpus(out, &records)?;

    let mut manifest = RunManifest::new("synth");
    manifest.push("out", out.display());
    manifest.push("n", opts.n);
    manifest.push("regime", opts.regime);
    manifest.push("feat_dim", opts.feat_dim);
    manifest.push("proportions", join_csv(&opts.proportions));
    manifest.push("ambiguous_rate", join_csv(&opts.ambiguous_rate));
    manifest.push("noise", opts.noise);
    manifest.push("seed", opts.seed);
    let manifest_path = manifest_path_for(out, "synth");
    manifest.write(&manifest_path)?;

    Ok(SynthSummary {
        records: records.len(),
        classes,
        corpus_path: out.to_path_buf(),
        manifest_path,
    })
}

// ---------------------------------------------------------------------------
// stats

/// Statistics report for either file kind: raw annotation files get a
/// flag table plus the class table under the given priority; corpus files
/// get the class table.
pub fn run_stats(path: &Path, priority: &Priority) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or("");
    match first {
        crate::corpus::RAW_TAG => {
            let annotations = read_raw_annotations(path)?;
            let flags = FlagStats::of(&annotations);
            let mut counts = [0usize; NUM_CLASSES];
            let mut skipped = 0usize;
            for (i, a) in annotations.iter().enumerate() {
                match reorganize_label(&a.flags, priority).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 2,
                    msg: e.to_string(),
                })? {
                    Some(label) => counts[label.index()] += 1,
                    None => skipped += 1,
                }
            }
            Ok(stats_report_text(
                Some(&flags),
                &ClassStats { counts },
                skipped,
            ))
        }
        crate::corpus::CORPUS_TAG => {
            let records = read_corpus(path)?;
            Ok(stats_report_text(None, &ClassStats::of(&records), 0))
        }
        _ => Err(Error::BadMagic),
    }
}

// ---------------------------------------------------------------------------
// rerun

/// Replay a run from its manifest. Outputs land at the recorded paths and
/// are byte-identical to the original run's. Returns the subcommand that
/// was replayed.
pub fn rerun(manifest_path: &Path) -> Result<String> {
    let m = RunManifest::read(manifest_path)?;
    let sub = m.subcommand()?.to_string();
    match sub.as_str() {
        "prepare" => {
            let opts = PrepareOptions {
                priority: m.parsed("priority")?,
                saliency_dim: m.parsed("saliency_dim")?,
                speaker_dim: m.parsed("speaker_dim")?,
            };
            run_prepare(
                Path::new(m.value("raw")?),
                Path::new(m.value("out")?),
                &opts,
            )?;
        }
        "train" => {
            let opts = TrainOptions {
                variant: m.parsed("variant")?,
                stream_dim: m.parsed("stream_dim")?,
                embed_dim: m.parsed("embed_dim")?,
                lstm_hidden: m.parsed("lstm_hidden")?,
                vocab_min_count: m.parsed("vocab_min_count")?,
                lr: m.parsed("lr")?,
                batch_size: m.parsed("batch_size")?,
                max_epochs: m.parsed("max_epochs")?,
                patience: m.parsed("patience")?,
                seed: m.parsed("seed")?,
                max_tokens: m.parsed_opt("max_tokens")?,
                embeddings: m.parsed_opt::<PathBuf>("embeddings")?,
            };
            run_train(
                Path::new(m.value("corpus")?),
                Path::new(m.value("out")?),
                &opts,
            )?;
        }
        "eval" => {
            run_eval(
                Path::new(m.value("checkpoint")?),
                Path::new(m.value("corpus")?),
                m.parsed("split")?,
                Some(m.parsed("seed")?),
                Some(Path::new(m.value("out")?)),
            )?;
        }
        "predict" => {
            run_predict_file(
                Path::new(m.value("checkpoint")?),
                Path::new(m.value("corpus")?),
                Path::new(m.value("out")?),
            )?;
        }
        "synth" => {
            let mut opts = SynthOptions::new(
                m.parsed("n")?,
                m.parsed("regime")?,
                m.parsed("seed")?,
            );
            opts.feat_dim = m.parsed("feat_dim")?;
            opts.proportions = parse_csv3(m.value("proportions")?, "proportions")?;
            opts.ambiguous_rate = parse_csv3(m.value("ambiguous_rate")?, "ambiguous_rate")?;
            opts.noise = m.parsed("noise")?;
            run_synth(Path::new(m.value("out")?), &opts)?;
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "manifest names unknown subcommand `{other}`"
            )))
        }
    }
    Ok(sub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AddresseeFlag, RawAnnotation, SignalRegime};
    use crate::corpus::write_raw_annotations;

    fn toy_annotations() -> Vec<RawAnnotation> {
        let mk = |id: &str, flags: Vec<AddresseeFlag>, x: f64, utt: &str| RawAnnotation {
            record_id: id.to_string(),
            flags,
            head_loc: [x, 0.5],
            utterance: utt.to_string(),
        };
        vec![
            mk("r1", vec![AddresseeFlag::LineOfSight], 0.2, "hey you there"),
            mk("r2", vec![AddresseeFlag::Photographer], 0.4, "say cheese now"),
            mk("r3", vec![AddresseeFlag::NotApplicable], 0.5, "static noise"),
            mk(
                "r4",
                vec![AddresseeFlag::LineOfSight, AddresseeFlag::Photographer],
                0.6,
                "both of you smile",
            ),
            mk("r5", vec![AddresseeFlag::Monologue], 0.8, "talking to myself again"),
        ]
    }

    fn small_synth(dir: &Path, n: usize, seed: u64) -> PathBuf {
        let mut opts = SynthOptions::new(n, SignalRegime::Both, seed);
        opts.feat_dim = 6;
        opts.proportions = [1.0, 1.0, 1.0];
        let path = dir.join("corpus.tsv");
        run_synth(&path, &opts).unwrap();
        path
    }

    fn quick_train(dir: &Path, corpus: &Path, variant: Variant, seed: u64) -> TrainArtifacts {
        let opts = TrainOptions {
            variant,
            stream_dim: 4,
            embed_dim: 5,
            lstm_hidden: 6,
            lr: 0.05,
            max_epochs: 3,
            patience: 3,
            seed,
            ..TrainOptions::default()
        };
        run_train(corpus, dir, &opts).unwrap()
    }

    #[test]
    fn prepare_drops_not_applicable_and_reports_stats() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw.tsv");
        write_raw_annotations(&raw, &toy_annotations()).unwrap();

        let out = dir.path().join("corpus.tsv");
        let summary = run_prepare(&raw, &out, &PrepareOptions::default()).unwrap();
        assert_eq!(summary.kept, 4);
        assert_eq!(summary.skipped, 1);
        // r4 carries two flags; default priority resolves it to Photographer.
        assert_eq!(summary.classes.counts, [1, 2, 1]);

        let stats = fs::read_to_string(&summary.stats_path).unwrap();
        assert!(stats.contains("addressee classes"));
        assert!(stats.contains("Photographer"));
        assert!(stats.contains("dropped as not-applicable: 1"));

        let records = read_corpus(&out).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(records[0].saliency.len(), 64);
    }

    #[test]
    fn prepare_is_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw.tsv");
        write_raw_annotations(&raw, &toy_annotations()).unwrap();
        let out_a = dir.path().join("a").join("corpus.tsv");
        let out_b = dir.path().join("b").join("corpus.tsv");
        fs::create_dir_all(out_a.parent().unwrap()).unwrap();
        fs::create_dir_all(out_b.parent().unwrap()).unwrap();
        let a = run_prepare(&raw, &out_a, &PrepareOptions::default()).unwrap();
        let b = run_prepare(&raw, &out_b, &PrepareOptions::default()).unwrap();
        assert_eq!(fs::read(&out_a).unwrap(), fs::read(&out_b).unwrap());
        assert_eq!(
            fs::read(&a.stats_path).unwrap(),
            fs::read(&b.stats_path).unwrap()
        );
    }

    #[test]
    fn prepare_with_all_not_applicable_errors() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw.tsv");
        let anns = vec![RawAnnotation {
            record_id: "only".into(),
            flags: vec![AddresseeFlag::NotApplicable],
            head_loc: [0.5, 0.5],
            utterance: "nothing".into(),
        }];
        write_raw_annotations(&raw, &anns).unwrap();
        let err = run_prepare(
            &raw,
            &dir.path().join("c.tsv"),
            &PrepareOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err.kind(), "empty-input");
    }

    #[test]
    fn train_writes_checkpoint_log_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_synth(dir.path(), 60, 3);
        let art = quick_train(&dir.path().join("run"), &corpus, Variant::Multimodal, 3);

        assert!(art.checkpoint_path.exists());
        assert!(art.log_path.exists());
        assert!(art.manifest_path.exists());
        assert_eq!(art.train_records, 36);
        assert_eq!(art.val_records, 12);
        assert_eq!(art.test_records, 12);

        let log = fs::read_to_string(&art.log_path).unwrap();
        assert!(log.starts_with(TRAIN_LOG_TAG));
        assert!(log.contains("epoch\ttrain_loss\tval_accuracy"));
        let ckpt = Checkpoint::read(&art.checkpoint_path).unwrap();
        assert_eq!(ckpt.seed, 3);
        assert_eq!(ckpt.variant, Variant::Multimodal);
    }

    #[test]
    fn eval_matches_training_split_membership() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_synth(dir.path(), 60, 5);
        let art = quick_train(&dir.path().join("run"), &corpus, Variant::TextOnly, 5);

        let report_path = dir.path().join("report.txt");
        let arts = run_eval(
            &art.checkpoint_path,
            &corpus,
            SplitSelector::Val,
            None,
            Some(&report_path),
        )
        .unwrap();
        // The checkpoint's best validation accuracy was measured on this
        // same split; recomputing it through run_eval must agree.
        assert_eq!(
            arts.report.confusion.accuracy(),
            art.outcome.best_val_accuracy
        );
        let text = fs::read_to_string(&report_path).unwrap();
        let parsed = crate::eval::parse_report(&text).unwrap();
        assert_eq!(parsed.confusion, arts.report.confusion);
        assert!(arts.manifest_path.unwrap().exists());
    }

    #[test]
    fn eval_rejects_mismatched_feature_dims() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_synth(dir.path(), 60, 7);
        let art = quick_train(&dir.path().join("run"), &corpus, Variant::VisualOnly, 7);

        let mut opts = SynthOptions::new(60, SignalRegime::Both, 7);
        opts.feat_dim = 9; // trained model expects 6
        opts.proportions = [1.0, 1.0, 1.0];
        let wide = dir.path().join("wide.tsv");
        run_synth(&wide, &opts).unwrap();

        let err = run_eval(
            &art.checkpoint_path,
            &wide,
            SplitSelector::Test,
            None,
            None,
        )
        .unwrap_err();
        assert_eq!(err.kind(), "config-mismatch");
    }

    #[test]
    fn predict_emits_one_line_per_record_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_synth(dir.path(), 60, 9);
        let art = quick_train(&dir.path().join("run"), &corpus, Variant::Multimodal, 9);

        let mut buf = Vec::new();
        let n = run_predict(
            &art.checkpoint_path,
            PredictSource::Corpus(&corpus),
            &mut buf,
        )
        .unwrap();
        assert_eq!(n, 60);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 60);
        let records = read_corpus(&corpus).unwrap();
        for (line, record) in lines.iter().zip(&records) {
            let fields: Vec<&str> = line.split('\t').collect();
            assert_eq!(fields.len(), 5);
            assert_eq!(fields[0], record.record_id);
            let probs: Vec<f64> = fields[2..].iter().map(|p| p.parse().unwrap()).collect();
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn predict_streams_text_lines_for_text_models() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_synth(dir.path(), 60, 11);
        let art = quick_train(&dir.path().join("run"), &corpus, Variant::TextOnly, 11);

        let input = "u1\tsay cheese please\nno id on this line\n";
        let mut reader = std::io::BufReader::new(input.as_bytes());
        let mut buf = Vec::new();
        let n = run_predict(
            &art.checkpoint_path,
            PredictSource::Lines(&mut reader),
            &mut buf,
        )
        .unwrap();
        assert_eq!(n, 2);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("u1\t"));
        assert!(lines[1].starts_with("line-000002\t"));
    }

    #[test]
    fn predict_rejects_line_input_for_visual_models() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_synth(dir.path(), 60, 13);
        let art = quick_train(&dir.path().join("run"), &corpus, Variant::Multimodal, 13);
        let mut reader = std::io::BufReader::new("hello\n".as_bytes());
        let err = run_predict(
            &art.checkpoint_path,
            PredictSource::Lines(&mut reader),
            &mut Vec::new(),
        )
        .unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn stats_reads_both_file_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let raw = dir.path().join("raw.tsv");
        write_raw_annotations(&raw, &toy_annotations()).unwrap();
        let text = run_stats(&raw, &Priority::default()).unwrap();
        assert!(text.contains("annotation flags"));
        assert!(text.contains("addressee classes"));

        let corpus = small_synth(dir.path(), 60, 15);
        let text = run_stats(&corpus, &Priority::default()).unwrap();
        assert!(!text.contains("annotation flags"));
        assert!(text.contains("addressee classes"));

        let other = dir.path().join("junk.txt");
        fs::write(&other, "not a recognised file\n").unwrap();
        assert_eq!(
            run_stats(&other, &Priority::default()).unwrap_err().kind(),
            "bad-magic"
        );
    }

    #[test]
    fn manifest_round_trips() {
        let mut m = RunManifest::new("train");
        m.push("corpus", "/data/c.tsv");
        m.push("lr", 0.001);
        m.push("max_tokens", "none");
        let text = m.emit();
        let back = RunManifest::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.value("lr").unwrap(), "0.001");
        assert_eq!(back.parsed::<f64>("lr").unwrap(), 0.001);
        assert_eq!(back.parsed_opt::<usize>("max_tokens").unwrap(), None);
        assert_eq!(
            RunManifest::parse("wrong\n").unwrap_err().kind(),
            "bad-magic"
        );
    }

    #[test]
    fn rerun_reproduces_synth_and_train_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_synth(dir.path(), 60, 17);
        let corpus_bytes = fs::read(&corpus).unwrap();

        let run_dir = dir.path().join("run");
        let art = quick_train(&run_dir, &corpus, Variant::TextOnly, 17);
        let ckpt_bytes = fs::read(&art.checkpoint_path).unwrap();
        let log_bytes = fs::read(&art.log_path).unwrap();
        let manifest_bytes = fs::read(&art.manifest_path).unwrap();

        // Replaying the synth manifest rewrites the corpus in place.
        assert_eq!(
            rerun(&dir.path().join("synth.manifest")).unwrap(),
            "synth"
        );
        assert_eq!(fs::read(&corpus).unwrap(), corpus_bytes);

        // Replaying the train manifest reproduces checkpoint and log.
        assert_eq!(rerun(&art.manifest_path).unwrap(), "train");
        assert_eq!(fs::read(&art.checkpoint_path).unwrap(), ckpt_bytes);
        assert_eq!(fs::read(&art.log_path).unwrap(), log_bytes);
        assert_eq!(fs::read(&art.manifest_path).unwrap(), manifest_bytes);
    }

    #[test]
    fn embeddings_only_apply_to_text_variants() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_synth(dir.path(), 60, 19);
        let opts = TrainOptions {
            variant: Variant::VisualOnly,
            embeddings: Some(dir.path().join("vectors.txt")),
            ..TrainOptions::default()
        };
        let err = run_train(&corpus, &dir.path().join("run"), &opts).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn pretrained_embeddings_land_in_the_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = small_synth(dir.path(), 60, 21);

        // Give one known vocabulary word a distinctive vector.
        let emb_path = dir.path().join("vectors.txt");
        let dims = 5;
        let row: Vec<String> = (0..dims).map(|i| format!("{}", 0.111 * (i + 1) as f64)).collect();
        fs::write(&emb_path, format!("cheese {}\n", row.join(" "))).unwrap();

        let opts = TrainOptions {
            variant: Variant::TextOnly,
            stream_dim: 4,
            embed_dim: dims,
            lstm_hidden: 6,
            lr: 0.05,
            max_epochs: 1,
            patience: 1,
            seed: 21,
            embeddings: Some(emb_path),
            ..TrainOptions::default()
        };
        let art = run_train(&corpus, &dir.path().join("run"), &opts).unwrap();
        let stats = art.embedding_stats.unwrap();
        assert_eq!(stats.matched, 1);
        let ckpt = Checkpoint::read(&art.checkpoint_path).unwrap();
        // One epoch of SGD moves the row, but it must start near the file's
        // values; with lr 0.05 it cannot wander far from 0.111..0.555.
        let pos = ckpt.vocab.position("cheese").unwrap();
        let (_, table) = ckpt
            .tensors()
            .iter()
            .find(|(n, _)| n == "embedding.table")
            .unwrap();
        let got = &table.data()[pos * dims..(pos + 1) * dims];
        for (g, want) in got.iter().zip((1..=dims).map(|i| 0.111 * i as f64)) {
            assert!((g - want).abs() < 0.05, "got {g}, expected near {want}");
        }
    }
}
