//! Command-line front end.
//!
//! Every subcommand accepts `--config FILE` (key=value, keys spelled like the
//! long flags) and explicit flags override the file. The fully resolved
//! settings are written as `manifest.txt` into the output directory before any
//! work starts; the manifest is itself a valid `--config` file, so
//! `jointspace <cmd> --config run/manifest.txt --out other/` repeats a run.
//!
//! Exit codes: 0 success, 1 user or configuration error, 2 internal error.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_bool, validate_language, KeyValues};
use crate::corpus::{
    parse_parallel, read_documents, restrict_labels, select_top_labels, tokenize, ParallelCorpus, TextDocument,
};
use crate::embeddings::{export_table, format_value, nearest_neighbors, ModelBundle, Similarity, TargetLanguages};
use crate::error::{Error, Result};
use crate::evaluation::{cldc_run, transfer_matrix, EvalReport, PerceptronConfig, ReprConfig, RepresentationLevel, Task};
use crate::synth;
use crate::training::{self, TrainConfig, TrainMode, Trainer};
use crate::vocab::Vocabulary;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Parser)]
#[command(
    name = "jointspace",
    version,
    about = "Joint-space multilingual word embeddings from parallel text, with cross-lingual document classification",
    after_help = "Defaults marked \"reference setting\" follow the published training regime; \
                  \"toolkit choice\" marks defaults chosen by this implementation."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn embeddings from one or more parallel corpora.
    Train(TrainArgs),
    /// Cross-lingual document classification.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Nearest neighbours of a word across languages.
    Query(QueryArgs),
    /// Write embedding tables in the text format.
    Export(ExportArgs),
    /// Generate a synthetic corpus with known translations and topics.
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Train a classifier in one language and test it in another.
    Cldc(CldcArgs),
    /// Every ordered pair of distinct languages.
    Transfer(TransferArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// key=value settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parallel corpus LANG1:LANG2:FILE1:FILE2 (repeatable). LANG1 is the pivot in joint mode.
    #[arg(long)]
    pub pair: Vec<String>,
    /// Embedding dimension d [default: 128, reference setting].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Hinge margin m, must be > 0 [default: equal to d, reference setting].
    #[arg(long)]
    pub margin: Option<f64>,
    /// Noise samples k per aligned pair [default: 50, reference setting].
    #[arg(long)]
    pub noise: Option<usize>,
    /// L2 coefficient [default: 1, reference setting].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// AdaGrad base step size [default: 0.05, reference setting].
    #[arg(long)]
    pub step: Option<f64>,
    /// Minibatch size [default: 50, reference setting].
    #[arg(long)]
    pub batch: Option<usize>,
    /// Passes over the corpus [default: 100, reference setting].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Composition model add|bi [default: add, toolkit choice].
    #[arg(long)]
    pub cvm: Option<String>,
    /// Train on aligned documents; --pair files are then in the document format [default: off, toolkit choice].
    #[arg(long)]
    pub doc_signal: bool,
    /// single|joint; joint shares the pivot table across all pairs [default: single, toolkit choice].
    #[arg(long)]
    pub mode: Option<String>,
    /// Seed for initialisation, shuffling and noise [default: 1, toolkit choice].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gradient threads; 1 is bitwise deterministic [default: 1, toolkit choice].
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory: checkpoint, manifest and loss log.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Continue from a checkpoint directory (only --epochs and --threads may change).
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

/// Options shared by both evaluation protocols.
#[derive(Debug, Args)]
pub struct EvalOptions {
    /// key=value settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// single|multi label task [default: single, toolkit choice].
    #[arg(long)]
    pub task: Option<String>,
    /// sentence-average|doc-cvm [default: doc-cvm for multi-label runs on document-trained models, else sentence-average; toolkit choice].
    #[arg(long)]
    pub repr: Option<String>,
    /// Keep the N most frequent labels in multi-label runs [default: 15, reference setting].
    #[arg(long)]
    pub top_labels: Option<usize>,
    /// Perceptron epochs [default: 10, toolkit choice].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Classifier shuffling seed [default: 1, toolkit choice].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Expected embedding dimension; a mismatch with the model is an error.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Output directory for the report and manifest; without it the report goes to stdout only.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CldcArgs {
    /// Training documents LANG:FILE.
    #[arg(long)]
    pub train: Option<String>,
    /// Test documents LANG:FILE.
    #[arg(long)]
    pub test: Option<String>,
    #[command(flatten)]
    pub common: EvalOptions,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Documents LANG:FILE (repeatable); each file is both training and test set.
    #[arg(long)]
    pub docs: Vec<String>,
    /// Comma-separated subset of the --docs languages [default: all].
    #[arg(long)]
    pub langs: Option<String>,
    #[command(flatten)]
    pub common: EvalOptions,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// key=value settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Query word LANG:WORD.
    #[arg(long)]
    pub word: Option<String>,
    /// Number of neighbours [default: 10, toolkit choice].
    #[arg(long)]
    pub n: Option<usize>,
    /// Language to search, or `all` [default: all, toolkit choice].
    #[arg(long)]
    pub target: Option<String>,
    /// cosine|euclidean [default: cosine, toolkit choice].
    #[arg(long)]
    pub metric: Option<String>,
    /// Also write neighbours and a manifest into this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// key=value settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Export only these languages (repeatable) [default: all].
    #[arg(long)]
    pub lang: Vec<String>,
    /// Destination directory; one `<lang>.vec` per language.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into an existing non-empty path.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// key=value settings file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// twin (two languages) or pivot (pivot plus two) [default: twin].
    #[arg(long)]
    pub kind: Option<String>,
    /// Comma-separated languages [default: en,de for twin, en,de,fr for pivot].
    #[arg(long)]
    pub langs: Option<String>,
    /// Latent sentences per parallel corpus [default: 500].
    #[arg(long)]
    pub sentences: Option<usize>,
    /// Documents per document file [default: 200].
    #[arg(long)]
    pub docs: Option<usize>,
    /// Generator seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

/// Parsed `LANG1:LANG2:FILE1:FILE2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSpec {
    pub source_lang: String,
    pub target_lang: String,
    pub source_file: PathBuf,
    pub target_file: PathBuf,
}

impl PairSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.splitn(4, ':').collect();
        if parts.len() != 4 || parts[2].is_empty() || parts[3].is_empty() {
            return Err(Error::Config(format!(
                "--pair expects LANG1:LANG2:FILE1:FILE2, got {spec:?}"
            )));
        }
        validate_language(parts[0])?;
        validate_language(parts[1])?;
        if parts[0] == parts[1] {
            return Err(Error::Config(format!("--pair {spec:?} pairs a language with itself")));
        }
        Ok(PairSpec {
            source_lang: parts[0].to_string(),
            target_lang: parts[1].to_string(),
            source_file: PathBuf::from(parts[2]),
            target_file: PathBuf::from(parts[3]),
        })
    }
}

/// Parsed `LANG:VALUE` (document files, query words).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LangSpec {
    pub language: String,
    pub value: String,
}

impl LangSpec {
    pub fn parse(spec: &str, what: &str) -> Result<Self> {
        let (language, value) = spec
            .split_once(':')
            .filter(|(_, v)| !v.is_empty())
            .ok_or_else(|| Error::Config(format!("{what} expects LANG:VALUE, got {spec:?}")))?;
        validate_language(language)?;
        Ok(LangSpec {
            language: language.to_string(),
            value: value.to_string(),
        })
    }
}

/// Parses and runs a command line, printing diagnostics to stderr. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Contract(_) | Error::NonFinite { .. } | Error::Composition(_) | Error::UnknownId { .. } => 2,
        _ => 1,
    }
}

/// Runs a parsed command, writing reports to `stdout`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, stdout),
        Command::Eval(EvalCommand::Cldc(a)) => cmd_cldc(a, stdout),
        Command::Eval(EvalCommand::Transfer(a)) => cmd_transfer(a, stdout),
        Command::Query(a) => cmd_query(a, stdout),
        Command::Export(a) => cmd_export(a, stdout),
        Command::Synth(a) => cmd_synth(a, stdout),
    }
}

/// Explicitly given flags, in `--config` key spelling.
#[derive(Default)]
struct Flags(KeyValues);

impl Flags {
    fn opt<T: Display>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.0.push(key, v);
        }
    }

    fn path(&mut self, key: &str, value: &Option<PathBuf>) {
        if let Some(v) = value {
            self.0.push(key, v.display());
        }
    }

    fn switch(&mut self, key: &str, on: bool) {
        if on {
            self.0.push(key, true);
        }
    }

    fn all(&mut self, key: &str, values: &[String]) {
        for v in values {
            self.0.push(key, v);
        }
    }
}

/// Config file entries overridden key by key by the explicit flags.
fn merge(config: &Option<PathBuf>, flags: Flags, subcommand: &str, allowed: &[&str]) -> Result<KeyValues> {
    let file = match config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            KeyValues::parse(&text)?
        }
        None => KeyValues::new(),
    };
    if let Some(s) = file.get("subcommand") {
        if s != subcommand {
            return Err(Error::Config(format!(
                "config file is for `{s}`, not `{subcommand}`"
            )));
        }
    }
    for key in file.keys() {
        if key != "subcommand" && !allowed.contains(&key) {
            return Err(Error::Config(format!("unknown config key {key:?} for `{subcommand}`")));
        }
    }
    let overridden: BTreeSet<&str> = flags.0.keys().collect();
    let mut merged = KeyValues::new();
    for (k, v) in file.iter() {
        if k != "subcommand" && !overridden.contains(k) {
            merged.push(k, v);
        }
    }
    for (k, v) in flags.0.iter() {
        merged.push(k, v);
    }
    Ok(merged)
}

fn flag_on(kv: &KeyValues, key: &str) -> Result<bool> {
    kv.get(key).map(parse_bool).transpose().map(|v| v.unwrap_or(false))
}

fn require_path(kv: &KeyValues, key: &str) -> Result<PathBuf> {
    kv.get(key)
        .map(PathBuf::from)
        .ok_or_else(|| Error::Config(format!("--{key} is required")))
}

fn is_nonempty(path: &Path) -> bool {
    match fs::metadata(path) {
        Ok(m) if m.is_dir() => fs::read_dir(path).map_or(true, |mut d| d.next().is_some()),
        Ok(_) => true,
        Err(_) => false,
    }
}

/// Creates `dir`, refusing a non-empty existing path unless `force`.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if is_nonempty(dir) && !force {
        return Err(Error::Config(format!(
            "{} exists and is not empty (use --force)",
            dir.display()
        )));
    }
    if dir.exists() && !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_manifest(dir: &Path, manifest: &KeyValues) -> Result<()> {
    write_file(&dir.join(MANIFEST_FILE), &manifest.to_text())
}

fn starts_manifest(subcommand: &str) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.push("subcommand", subcommand);
    kv
}

const TRAIN_KEYS: &[&str] = &[
    "pair", "dim", "margin", "noise", "lambda", "step", "batch", "epochs", "cvm", "doc-signal", "mode", "seed",
    "epsilon", "threads", "out", "force", "resume",
];

fn cmd_train(a: &TrainArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut f = Flags::default();
    f.all("pair", &a.pair);
    f.opt("dim", &a.dim);
    f.opt("margin", &a.margin);
    f.opt("noise", &a.noise);
    f.opt("lambda", &a.lambda);
    f.opt("step", &a.step);
    f.opt("batch", &a.batch);
    f.opt("epochs", &a.epochs);
    f.opt("cvm", &a.cvm);
    f.switch("doc-signal", a.doc_signal);
    f.opt("mode", &a.mode);
    f.opt("seed", &a.seed);
    f.opt("threads", &a.threads);
    f.path("out", &a.out);
    f.switch("force", a.force);
    f.path("resume", &a.resume);
    let kv = merge(&a.config, f, "train", TRAIN_KEYS)?;

    let pairs = kv
        .get_all("pair")
        .into_iter()
        .map(PairSpec::parse)
        .collect::<Result<Vec<_>>>()?;
    let out = require_path(&kv, "out")?;
    let force = flag_on(&kv, "force")?;
    let resume_dir = kv.get("resume").map(PathBuf::from);

    let mut resumed = match &resume_dir {
        Some(dir) => Some(training::resume(dir)?),
        None => None,
    };
    let config = match &resumed {
        Some(r) => {
            let mut config = r.trainer.config().clone();
            config.apply(&kv)?;
            let mut same = config.clone();
            same.epochs = r.trainer.config().epochs;
            same.threads = r.trainer.config().threads;
            if &same != r.trainer.config() {
                return Err(Error::Config(
                    "only --epochs and --threads may differ from the checkpoint when resuming".into(),
                ));
            }
            config
        }
        None => {
            let mut config = TrainConfig::default();
            config.apply(&kv)?;
            config
        }
    };
    config.validate()?;
    match (config.mode, pairs.len()) {
        (_, 0) => return Err(Error::Config("at least one --pair is required".into())),
        (TrainMode::Single, n) if n > 1 => {
            return Err(Error::Config(format!(
                "{n} pairs given in single mode; use --mode joint"
            )))
        }
        _ => {}
    }
    if let Some(first) = pairs.first() {
        if let Some(p) = pairs.iter().find(|p| p.source_lang != first.source_lang) {
            return Err(Error::Config(format!(
                "joint pairs must share the pivot language: {} vs {}",
                first.source_lang, p.source_lang
            )));
        }
    }

    prepare_out(&out, force)?;
    let mut manifest = starts_manifest("train");
    for (k, v) in config.to_key_values().iter() {
        manifest.push(k, v);
    }
    for p in kv.get_all("pair") {
        manifest.push("pair", p);
    }
    manifest.push("out", out.display());
    if let Some(dir) = &resume_dir {
        manifest.push("resume", dir.display());
    }
    write_manifest(&out, &manifest)?;

    let (corpora, mut bundle, mut trainer) = match resumed.take() {
        Some(r) => {
            let corpora = load_corpora(&pairs, config.doc_signal, |lang| {
                Ok(r.bundle.vocab(lang)?.clone())
            })?;
            let trainer = Trainer::from_parts(config.clone(), r.trainer.state().clone(), r.trainer.epoch())?;
            (corpora, r.bundle, trainer)
        }
        None => {
            let vocabs = build_vocabs(&pairs, config.doc_signal)?;
            let bundle = ModelBundle::initialise(
                config.dim,
                config.kind,
                vocabs.iter().map(|(l, v)| (l.as_str(), v.clone())),
                config.seed,
            );
            let corpora = load_corpora(&pairs, config.doc_signal, |lang| Ok(vocabs[lang].clone()))?;
            let trainer = Trainer::new(config.clone(), &bundle)?;
            (corpora, bundle, trainer)
        }
    };
    let report = trainer.train(&corpora, &mut bundle)?;
    write_file(&out.join("loss.tsv"), &report.loss_tsv())?;
    write_file(&out.join("timing.tsv"), &report.timing_tsv())?;
    trainer.checkpoint(&bundle, &out)?;
    let _ = writeln!(
        stdout,
        "trained {} epoch(s) to epoch {}; checkpoint in {}",
        report.epochs.len(),
        trainer.epoch(),
        out.display()
    );
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_docs_for(path: &Path, language: &str) -> Result<Vec<TextDocument>> {
    let docs = read_documents(path)?;
    if let Some(d) = docs.iter().find(|d| d.language != language) {
        return Err(Error::Config(format!(
            "{}: document {:?} is in language {:?}, expected {language:?}",
            path.display(),
            d.id,
            d.language
        )));
    }
    Ok(docs)
}

/// Vocabulary per language over every side of every pair, in first-occurrence
/// order following the order of the pairs.
fn build_vocabs(pairs: &[PairSpec], doc_signal: bool) -> Result<BTreeMap<String, Vocabulary>> {
    let mut vocabs: BTreeMap<String, Vocabulary> = BTreeMap::new();
    for p in pairs {
        for (lang, path) in [(&p.source_lang, &p.source_file), (&p.target_lang, &p.target_file)] {
            let vocab = vocabs.entry(lang.clone()).or_default();
            if doc_signal {
                let docs = read_docs_for(path, lang)?;
                vocab.extend(docs.iter().flat_map(|d| d.sentences.iter()));
            } else {
                vocab.extend(read_text(path)?.lines().map(tokenize));
            }
        }
    }
    Ok(vocabs)
}

fn load_corpora<F>(pairs: &[PairSpec], doc_signal: bool, vocab_for: F) -> Result<Vec<ParallelCorpus>>
where
    F: Fn(&str) -> Result<Vocabulary>,
{
    pairs
        .iter()
        .map(|p| {
            let vs = vocab_for(&p.source_lang)?;
            let vt = vocab_for(&p.target_lang)?;
            if doc_signal {
                let map = |path: &Path, lang: &str, vocab: &Vocabulary| -> Result<Vec<_>> {
                    Ok(read_docs_for(path, lang)?
                        .iter()
                        .filter_map(|d| d.to_ids(vocab))
                        .collect())
                };
                let src = map(&p.source_file, &p.source_lang, &vs)?;
                let tgt = map(&p.target_file, &p.target_lang, &vt)?;
                let mut corpus = ParallelCorpus::from_documents(&src, &tgt)?;
                corpus.source_lang = p.source_lang.clone();
                corpus.target_lang = p.target_lang.clone();
                Ok(corpus)
            } else {
                let pairs = parse_parallel(&read_text(&p.source_file)?, &read_text(&p.target_file)?, &vs, &vt)?;
                Ok(ParallelCorpus::new(&p.source_lang, &p.target_lang, pairs))
            }
        })
        .collect()
}

const EVAL_KEYS: &[&str] = &[
    "model", "task", "repr", "top-labels", "epochs", "seed", "dim", "out", "force", "train", "test", "docs", "langs",
];

fn eval_flags(c: &EvalOptions) -> Flags {
    let mut f = Flags::default();
    f.path("model", &c.model);
    f.opt("task", &c.task);
    f.opt("repr", &c.repr);
    f.opt("top-labels", &c.top_labels);
    f.opt("epochs", &c.epochs);
    f.opt("seed", &c.seed);
    f.opt("dim", &c.dim);
    f.path("out", &c.out);
    f.switch("force", c.force);
    f
}

/// Resolved evaluation settings shared by both protocols.
struct EvalPlan {
    model: PathBuf,
    bundle: ModelBundle,
    repr: ReprConfig,
    top_labels: usize,
    out: Option<PathBuf>,
}

impl EvalPlan {
    fn resolve(kv: &KeyValues) -> Result<Self> {
        let model = require_path(kv, "model")?;
        let bundle = training::load_model(&model)?;
        if let Some(dim) = kv.parse_value::<usize>("dim")? {
            if dim != bundle.dim() {
                return Err(Error::Config(format!(
                    "--dim {dim} does not match the model dimension {}",
                    bundle.dim()
                )));
            }
        }
        let task: Task = kv.get("task").unwrap_or("single").parse()?;
        let doc_model = model_uses_documents(&model)?;
        let level = match kv.get("repr") {
            Some(r) => r.parse()?,
            None if task == Task::MultiLabel && doc_model => RepresentationLevel::DocCvm,
            None => RepresentationLevel::SentenceAverage,
        };
        let epochs = kv.parse_value("epochs")?.unwrap_or(10);
        if epochs < 1 {
            return Err(Error::Config("perceptron epochs must be >= 1".into()));
        }
        let top_labels = kv.parse_value("top-labels")?.unwrap_or(15);
        if top_labels < 1 {
            return Err(Error::Config("--top-labels must be >= 1".into()));
        }
        Ok(EvalPlan {
            model,
            repr: ReprConfig {
                kind: bundle.kind(),
                level,
                task,
                perceptron: PerceptronConfig {
                    epochs,
                    seed: kv.parse_value("seed")?.unwrap_or(1),
                    shuffle: true,
                },
            },
            bundle,
            top_labels,
            out: kv.get("out").map(PathBuf::from),
        })
    }

    fn manifest(&self, subcommand: &str) -> KeyValues {
        let mut m = starts_manifest(subcommand);
        m.push("model", self.model.display());
        m.push(
            "task",
            match self.repr.task {
                Task::SingleLabel => "single",
                Task::MultiLabel => "multi",
            },
        );
        m.push("repr", self.repr.level);
        m.push("top-labels", self.top_labels);
        m.push("epochs", self.repr.perceptron.epochs);
        m.push("seed", self.repr.perceptron.seed);
        m.push("dim", self.bundle.dim());
        m
    }
}

fn model_uses_documents(model: &Path) -> Result<bool> {
    let path = model.join("meta.txt");
    let meta = KeyValues::parse(&read_text(&path)?)?;
    meta.get("doc-signal").map(parse_bool).transpose().map(|v| v.unwrap_or(false))
}

fn begin_eval(plan: &EvalPlan, force: bool, manifest: KeyValues) -> Result<()> {
    if let Some(out) = &plan.out {
        prepare_out(out, force)?;
        let mut manifest = manifest;
        manifest.push("out", out.display());
        write_manifest(out, &manifest)?;
    }
    Ok(())
}

fn finish_eval(plan: &EvalPlan, report: &EvalReport, stdout: &mut dyn Write) -> Result<()> {
    if !report.flagged_labels.is_empty() {
        eprintln!(
            "warning: no positive training example for label(s): {}",
            report.flagged_labels.join(", ")
        );
    }
    if let Some(out) = &plan.out {
        write_file(&out.join("results.tsv"), &report.to_tsv())?;
        write_file(&out.join("baselines.tsv"), &report.extras_tsv())?;
        if !report.flagged_labels.is_empty() {
            write_file(&out.join("flagged_labels.txt"), &(report.flagged_labels.join("\n") + "\n"))?;
        }
    }
    stdout
        .write_all(report.to_tsv().as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

/// Keeps the most frequent labels (multi-label runs only).
fn apply_top_labels(plan: &EvalPlan, sets: &mut [&mut Vec<TextDocument>]) -> Result<()> {
    if plan.repr.task != Task::MultiLabel {
        return Ok(());
    }
    let all: Vec<TextDocument> = sets.iter().flat_map(|s| s.iter().cloned()).collect();
    let top = select_top_labels(&all, plan.top_labels)?;
    if top.underfull {
        eprintln!(
            "warning: only {} distinct labels available, fewer than --top-labels {}",
            top.labels.len(),
            plan.top_labels
        );
    }
    for docs in sets.iter_mut() {
        restrict_labels(docs, &top.labels);
    }
    Ok(())
}

fn cmd_cldc(a: &CldcArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut f = eval_flags(&a.common);
    f.opt("train", &a.train);
    f.opt("test", &a.test);
    let kv = merge(&a.common.config, f, "eval-cldc", EVAL_KEYS)?;
    let spec = |key: &str| -> Result<LangSpec> {
        let raw = kv
            .get(key)
            .ok_or_else(|| Error::Config(format!("--{key} LANG:FILE is required")))?;
        LangSpec::parse(raw, &format!("--{key}"))
    };
    let (train, test) = (spec("train")?, spec("test")?);
    let plan = EvalPlan::resolve(&kv)?;
    let mut manifest = plan.manifest("eval-cldc");
    manifest.push("train", kv.get("train").unwrap_or_default());
    manifest.push("test", kv.get("test").unwrap_or_default());
    begin_eval(&plan, flag_on(&kv, "force")?, manifest)?;

    let mut train_docs = read_docs_for(Path::new(&train.value), &train.language)?;
    let mut test_docs = read_docs_for(Path::new(&test.value), &test.language)?;
    apply_top_labels(&plan, &mut [&mut train_docs, &mut test_docs])?;
    let report = cldc_run(
        (&train.language, &train_docs),
        (&test.language, &test_docs),
        &plan.bundle,
        &plan.repr,
    )?;
    finish_eval(&plan, &report, stdout)
}

fn cmd_transfer(a: &TransferArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut f = eval_flags(&a.common);
    f.all("docs", &a.docs);
    f.opt("langs", &a.langs);
    let kv = merge(&a.common.config, f, "eval-transfer", EVAL_KEYS)?;
    let specs = kv
        .get_all("docs")
        .into_iter()
        .map(|s| LangSpec::parse(s, "--docs"))
        .collect::<Result<Vec<_>>>()?;
    let mut by_lang: BTreeMap<String, PathBuf> = BTreeMap::new();
    for s in &specs {
        if by_lang.insert(s.language.clone(), PathBuf::from(&s.value)).is_some() {
            return Err(Error::Config(format!("--docs given twice for {}", s.language)));
        }
    }
    let selected: Vec<String> = match kv.get("langs") {
        Some(list) => list.split(',').map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect(),
        None => by_lang.keys().cloned().collect(),
    };
    for l in &selected {
        if !by_lang.contains_key(l) {
            return Err(Error::Config(format!("--langs names {l:?} but no --docs {l}:FILE was given")));
        }
    }
    let plan = EvalPlan::resolve(&kv)?;
    let mut manifest = plan.manifest("eval-transfer");
    for s in kv.get_all("docs") {
        manifest.push("docs", s);
    }
    manifest.push("langs", selected.join(","));
    begin_eval(&plan, flag_on(&kv, "force")?, manifest)?;

    let mut docs: BTreeMap<String, Vec<TextDocument>> = BTreeMap::new();
    for l in &selected {
        docs.insert(l.clone(), read_docs_for(&by_lang[l], l)?);
    }
    {
        let mut sets: Vec<&mut Vec<TextDocument>> = docs.values_mut().collect();
        apply_top_labels(&plan, &mut sets)?;
    }
    let report = transfer_matrix(&docs, &plan.bundle, &plan.repr)?;
    finish_eval(&plan, &report, stdout)
}

const QUERY_KEYS: &[&str] = &["model", "word", "n", "target", "metric", "out", "force"];

fn cmd_query(a: &QueryArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut f = Flags::default();
    f.path("model", &a.model);
    f.opt("word", &a.word);
    f.opt("n", &a.n);
    f.opt("target", &a.target);
    f.opt("metric", &a.metric);
    f.path("out", &a.out);
    f.switch("force", a.force);
    let kv = merge(&a.config, f, "query", QUERY_KEYS)?;
    let model = require_path(&kv, "model")?;
    let word = LangSpec::parse(
        kv.get("word").ok_or_else(|| Error::Config("--word LANG:WORD is required".into()))?,
        "--word",
    )?;
    let n: usize = kv.parse_value("n")?.unwrap_or(10);
    let target = kv.get("target").unwrap_or("all").to_string();
    if target != "all" {
        validate_language(&target)?;
    }
    let metric = match kv.get("metric").unwrap_or("cosine") {
        "cosine" => Similarity::Cosine,
        "euclidean" => Similarity::Euclidean,
        other => return Err(Error::Config(format!("unknown metric {other:?} (cosine|euclidean)"))),
    };
    let out = kv.get("out").map(PathBuf::from);
    if let Some(dir) = &out {
        prepare_out(dir, flag_on(&kv, "force")?)?;
        let mut m = starts_manifest("query");
        m.push("model", model.display());
        m.push("word", format!("{}:{}", word.language, word.value));
        m.push("n", n);
        m.push("target", &target);
        m.push("metric", if metric == Similarity::Cosine { "cosine" } else { "euclidean" });
        m.push("out", dir.display());
        write_manifest(dir, &m)?;
    }

    let bundle = training::load_model(&model)?;
    let token = match tokenize(&word.value).as_slice() {
        [t] => t.clone(),
        _ => return Err(Error::Config(format!("--word must be a single token, got {:?}", word.value))),
    };
    let neighbors = nearest_neighbors(&bundle, &word.language, &token, n, &TargetLanguages::parse(&target), metric)?;
    let mut tsv = String::from("language\ttoken\tscore\n");
    for nb in &neighbors {
        tsv.push_str(&format!("{}\t{}\t{}\n", nb.language, nb.token, format_value(nb.score)));
    }
    if let Some(dir) = &out {
        write_file(&dir.join("neighbors.tsv"), &tsv)?;
    }
    stdout.write_all(tsv.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

const EXPORT_KEYS: &[&str] = &["model", "lang", "out", "force"];

fn cmd_export(a: &ExportArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut f = Flags::default();
    f.path("model", &a.model);
    f.all("lang", &a.lang);
    f.path("out", &a.out);
    f.switch("force", a.force);
    let kv = merge(&a.config, f, "export", EXPORT_KEYS)?;
    let model = require_path(&kv, "model")?;
    let out = require_path(&kv, "out")?;
    let bundle = training::load_model(&model)?;
    let mut langs: Vec<String> = kv.get_all("lang").into_iter().map(str::to_string).collect();
    if langs.is_empty() {
        langs = bundle.languages().map(str::to_string).collect();
    }
    for l in &langs {
        bundle.language(l)?;
    }
    prepare_out(&out, flag_on(&kv, "force")?)?;
    let mut m = starts_manifest("export");
    m.push("model", model.display());
    for l in &langs {
        m.push("lang", l);
    }
    m.push("out", out.display());
    write_manifest(&out, &m)?;
    for l in &langs {
        let lang = bundle.language(l)?;
        let path = out.join(format!("{l}.vec"));
        export_table(&lang.table, &lang.vocab, &path)?;
        let _ = writeln!(stdout, "{}", path.display());
    }
    Ok(())
}

const SYNTH_KEYS: &[&str] = &["kind", "langs", "sentences", "docs", "seed", "out", "force"];

fn cmd_synth(a: &SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut f = Flags::default();
    f.opt("kind", &a.kind);
    f.opt("langs", &a.langs);
    f.opt("sentences", &a.sentences);
    f.opt("docs", &a.docs);
    f.opt("seed", &a.seed);
    f.path("out", &a.out);
    f.switch("force", a.force);
    let kv = merge(&a.config, f, "synth", SYNTH_KEYS)?;
    let kind = kv.get("kind").unwrap_or("twin").to_string();
    let default_langs = match kind.as_str() {
        "twin" => "en,de",
        "pivot" => "en,de,fr",
        other => return Err(Error::Config(format!("unknown synth kind {other:?} (twin|pivot)"))),
    };
    let langs: Vec<String> = kv
        .get("langs")
        .unwrap_or(default_langs)
        .split(',')
        .map(|l| l.trim().to_string())
        .collect();
    for l in &langs {
        validate_language(l)?;
    }
    let expected = if kind == "twin" { 2 } else { 3 };
    if langs.len() != expected || langs.iter().collect::<BTreeSet<_>>().len() != expected {
        return Err(Error::Config(format!("{kind} needs {expected} distinct languages")));
    }
    let sentences: usize = kv.parse_value("sentences")?.unwrap_or(500);
    let docs: usize = kv.parse_value("docs")?.unwrap_or(200);
    if sentences < 2 || docs < 1 {
        return Err(Error::Config("need at least 2 sentences and 1 document".into()));
    }
    let seed: u64 = kv.parse_value("seed")?.unwrap_or(1);
    let out = require_path(&kv, "out")?;
    prepare_out(&out, flag_on(&kv, "force")?)?;
    let mut m = starts_manifest("synth");
    m.push("kind", &kind);
    m.push("langs", langs.join(","));
    m.push("sentences", sentences);
    m.push("docs", docs);
    m.push("seed", seed);
    m.push("out", out.display());
    write_manifest(&out, &m)?;

    let (texts, train, test) = if kind == "twin" {
        let t = synth::twin_task(&langs[0], &langs[1], sentences, docs, seed);
        (vec![t.parallel], t.train_docs, t.test_docs)
    } else {
        let t = synth::pivot_task(&langs[0], &langs[1], &langs[2], sentences, docs, seed);
        (t.pivot_pairs, t.train_docs, t.test_docs)
    };
    for text in &texts {
        let (a, b) = text.write(&out)?;
        let _ = writeln!(stdout, "{}\n{}", a.display(), b.display());
    }
    for (docs, role) in [(&train, "train"), (&test, "test")] {
        let lang = &docs.first().map(|d| d.language.clone()).unwrap_or_default();
        let path = out.join(format!("{lang}.{role}.docs"));
        synth::write_documents(&path, docs)?;
        let _ = writeln!(stdout, "{}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_specs() {
        let p = PairSpec::parse("en:de:a.txt:dir/b:c.txt").unwrap();
        assert_eq!(p.source_lang, "en");
        assert_eq!(p.target_file, PathBuf::from("dir/b:c.txt"));
        for bad in ["en:de:a", "en:en:a:b", "e n:de:a:b", "en:de::b", ""] {
            assert!(PairSpec::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn lang_specs() {
        let s = LangSpec::parse("de:x:y.docs", "--docs").unwrap();
        assert_eq!((s.language.as_str(), s.value.as_str()), ("de", "x:y.docs"));
        assert!(LangSpec::parse("de:", "--docs").is_err());
        assert!(LangSpec::parse("nolang", "--docs").is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(&path, "subcommand=train\ndim=8\npair=a:b:x:y\npair=a:c:x:z\nseed=3\n").unwrap();
        let mut f = Flags::default();
        f.opt("dim", &Some(16));
        let kv = merge(&Some(path.clone()), f, "train", TRAIN_KEYS).unwrap();
        assert_eq!(kv.get("dim"), Some("16"));
        assert_eq!(kv.get("seed"), Some("3"));
        assert_eq!(kv.get_all("pair").len(), 2);

        let mut f = Flags::default();
        f.all("pair", &["q:r:s:t".to_string()]);
        let kv = merge(&Some(path.clone()), f, "train", TRAIN_KEYS).unwrap();
        assert_eq!(kv.get_all("pair"), vec!["q:r:s:t"]);

        assert!(merge(&Some(path.clone()), Flags::default(), "query", QUERY_KEYS).is_err());
        fs::write(&path, "bogus=1\n").unwrap();
        assert!(merge(&Some(path), Flags::default(), "train", TRAIN_KEYS).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 1);
        assert_eq!(exit_code(&Error::UnknownLanguage("x".into())), 1);
        assert_eq!(exit_code(&Error::Contract("x".into())), 2);
        assert_eq!(run(["jointspace", "train", "--margin", "0", "--pair", "a:b:x:y", "--out", "/nonexistent/x"]), 1);
        assert_eq!(run(["jointspace", "frobnicate"]), 1);
        assert_eq!(run(["jointspace", "--help"]), 0);
    }

    #[test]
    fn out_directory_guard() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("o");
        prepare_out(&target, false).unwrap();
        prepare_out(&target, false).unwrap();
        fs::write(target.join("f"), "x").unwrap();
        assert!(matches!(prepare_out(&target, false), Err(Error::Config(_))));
        prepare_out(&target, true).unwrap();
        assert!(prepare_out(&target.join("f"), true).is_err());
    }
}
