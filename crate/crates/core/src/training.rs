//! Minibatch AdaGrad over the contrastive objective.
//!
//! Each epoch shuffles every sub-corpus (Fisher-Yates, seeded by
//! `seed + epoch`), cuts it into minibatches and visits the batches of all
//! sub-corpora round-robin. Noise is drawn afresh for every example in every
//! epoch. The minibatch gradient is the sum of per-example gradients; one
//! AdaGrad step is applied per minibatch, and L2 regularisation is added only
//! to the rows that minibatch touched.
//!
//! All randomness derives from `(seed, epoch, sub-corpus)`, so training can be
//! stopped after any epoch and resumed bit-for-bit from a checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::composition::CompositionKind;
use crate::config::{parse_bool, validate_language, KeyValues};
use crate::corpus::{draw_excluding, sample_noise, ParallelCorpus, Sentence};
use crate::embeddings::{export_table, format_value, import_table, EmbeddingTable, ModelBundle};
use crate::error::{Error, Result};
use crate::objective::{DocPair, LossBreakdown, Objective, SparseGradient};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainMode {
    #[default]
    Single,
    Joint,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMode::Single => "single",
            TrainMode::Joint => "joint",
        })
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(TrainMode::Single),
            "joint" => Ok(TrainMode::Joint),
            other => Err(Error::Config(format!("unknown mode {other:?} (single|joint)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub margin: f64,
    /// Noise samples per positive example.
    pub noise: usize,
    pub lambda: f64,
    pub step: f64,
    pub batch: usize,
    pub epochs: usize,
    pub kind: CompositionKind,
    pub doc_signal: bool,
    pub mode: TrainMode,
    pub seed: u64,
    pub epsilon: f64,
    /// 1 = deterministic sequential gradients.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 128,
            margin: 128.0,
            noise: 50,
            lambda: 1.0,
            step: 0.05,
            batch: 50,
            epochs: 100,
            kind: CompositionKind::Add,
            doc_signal: false,
            mode: TrainMode::Single,
            seed: 1,
            epsilon: 1e-6,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.dim < 1 {
            return fail("dim must be >= 1");
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return fail("margin must be > 0");
        }
        if self.noise < 1 {
            return fail("noise must be >= 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be >= 0");
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return fail("step must be > 0");
        }
        if self.batch < 1 {
            return fail("batch must be >= 1");
        }
        if self.epochs < 1 {
            return fail("epochs must be >= 1");
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return fail("epsilon must be > 0");
        }
        if self.threads < 1 {
            return fail("threads must be >= 1");
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("dim", self.dim);
        kv.push("margin", format_value(self.margin));
        kv.push("noise", self.noise);
        kv.push("lambda", format_value(self.lambda));
        kv.push("step", format_value(self.step));
        kv.push("batch", self.batch);
        kv.push("epochs", self.epochs);
        kv.push("cvm", self.kind);
        kv.push("doc-signal", self.doc_signal);
        kv.push("mode", self.mode);
        kv.push("seed", self.seed);
        kv.push("epsilon", format_value(self.epsilon));
        kv.push("threads", self.threads);
        kv
    }

    /// Overrides fields present in `kv`. When `dim` is given without
    /// `margin`, the margin follows it (`m = d`).
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(dim) = kv.parse_value("dim")? {
            self.dim = dim;
            if kv.get("margin").is_none() {
                self.margin = dim as f64;
            }
        }
        if let Some(v) = kv.parse_value("margin")? {
            self.margin = v;
        }
        if let Some(v) = kv.parse_value("noise")? {
            self.noise = v;
        }
        if let Some(v) = kv.parse_value("lambda")? {
            self.lambda = v;
        }
        if let Some(v) = kv.parse_value("step")? {
            self.step = v;
        }
        if let Some(v) = kv.parse_value("batch")? {
            self.batch = v;
        }
        if let Some(v) = kv.parse_value("epochs")? {
            self.epochs = v;
        }
        if let Some(v) = kv.get("cvm") {
            self.kind = v.parse()?;
        }
        if let Some(v) = kv.get("doc-signal") {
            self.doc_signal = parse_bool(v)?;
        }
        if let Some(v) = kv.get("mode") {
            self.mode = v.parse()?;
        }
        if let Some(v) = kv.parse_value("seed")? {
            self.seed = v;
        }
        if let Some(v) = kv.parse_value("epsilon")? {
            self.epsilon = v;
        }
        if let Some(v) = kv.parse_value("threads")? {
            self.threads = v;
        }
        Ok(())
    }
}

/// Per-coordinate sums of squared gradients, shaped like the tables.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGradState {
    accumulators: BTreeMap<String, EmbeddingTable>,
}

impl AdaGradState {
    pub fn for_bundle(bundle: &ModelBundle) -> Self {
        let accumulators = bundle
            .iter()
            .map(|(code, lang)| {
                (
                    code.to_string(),
                    EmbeddingTable::zeros(code, lang.table.rows(), bundle.dim()),
                )
            })
            .collect();
        AdaGradState { accumulators }
    }

    pub fn accumulator(&self, language: &str) -> Option<&EmbeddingTable> {
        self.accumulators.get(language)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingTable)> {
        self.accumulators.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// True when every entry of `self` is >= the matching entry of `earlier`.
    pub fn dominates(&self, earlier: &AdaGradState) -> bool {
        earlier.accumulators.iter().all(|(code, old)| {
            self.accumulators.get(code).is_some_and(|new| {
                new.as_slice().len() == old.as_slice().len()
                    && new.as_slice().iter().zip(old.as_slice()).all(|(n, o)| n >= o)
            })
        })
    }
}

/// One AdaGrad step: for each touched coordinate, `g += lambda * w`,
/// `G += g²`, `w -= step * g / sqrt(G + epsilon)`.
///
/// Non-finite gradients reject the whole update before anything changes.
pub fn adagrad_apply(
    bundle: &mut ModelBundle,
    grads: &SparseGradient,
    state: &mut AdaGradState,
    config: &TrainConfig,
) -> Result<()> {
    for (language, id, g) in grads.iter() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                language: language.to_string(),
                id,
            });
        }
        let rows = bundle.table(language)?.rows();
        if id as usize >= rows || g.len() != bundle.dim() {
            return Err(Error::UnknownId {
                language: language.to_string(),
                id,
                size: rows,
            });
        }
        if !state.accumulators.contains_key(language) {
            return Err(Error::Contract(format!(
                "no AdaGrad accumulator for language {language:?}"
            )));
        }
    }
    for (language, id, g) in grads.iter() {
        let acc = state
            .accumulators
            .get_mut(language)
            .expect("checked above")
            .row_mut(id);
        let w = bundle.table_mut(language)?.row_mut(id);
        for ((wj, gj), aj) in w.iter_mut().zip(g).zip(acc.iter_mut()) {
            let g = gj + config.lambda * *wj;
            *aj += g * g;
            *wj -= config.step * g / (*aj + config.epsilon).sqrt();
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub hinge_total: f64,
    pub active_fraction: f64,
    pub updates: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    /// `epoch TAB hinge_total TAB active_fraction TAB updates` with a header.
    pub fn loss_tsv(&self) -> String {
        let mut out = String::from("epoch\thinge_total\tactive_fraction\tupdates\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                e.epoch,
                format_value(e.hinge_total),
                format_value(e.active_fraction),
                e.updates
            ));
        }
        out
    }

    pub fn timing_tsv(&self) -> String {
        let mut out = String::from("epoch\tseconds\n");
        for e in &self.epochs {
            out.push_str(&format!("{}\t{:.3}\n", e.epoch, e.seconds));
        }
        out
    }
}

/// A training unit: one sentence pair or one aligned document.
#[derive(Debug, Clone, Copy)]
enum Unit {
    Pair(usize),
    Doc(usize),
}

/// Noise chosen for one unit before gradients are evaluated.
enum UnitNoise {
    Pair(Vec<usize>),
    Doc {
        docs: Vec<usize>,
        sentences: Vec<Vec<usize>>,
    },
}

struct Job<'c> {
    corpus: &'c ParallelCorpus,
    unit: Unit,
    noise: UnitNoise,
}

fn rng_for(seed: u64, epoch: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch as u64));
    rng.set_stream(stream);
    rng
}

/// Owns the optimiser state and the epoch counter of a run.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    state: AdaGradState,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig, bundle: &ModelBundle) -> Result<Self> {
        config.validate()?;
        if bundle.dim() != config.dim {
            return Err(Error::Config(format!(
                "bundle has d={} but the config asks for d={}",
                bundle.dim(),
                config.dim
            )));
        }
        Ok(Trainer {
            config,
            state: AdaGradState::for_bundle(bundle),
            epoch: 0,
        })
    }

    pub fn from_parts(config: TrainConfig, state: AdaGradState, epoch: usize) -> Result<Self> {
        config.validate()?;
        Ok(Trainer { config, state, epoch })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn state(&self) -> &AdaGradState {
        &self.state
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn check_corpora(&self, corpora: &[ParallelCorpus], bundle: &ModelBundle) -> Result<()> {
        let pivot = corpora
            .first()
            .ok_or_else(|| Error::Config("no training corpus".into()))?
            .source_lang
            .as_str();
        for corpus in corpora {
            if corpus.source_lang != pivot {
                return Err(Error::Config(format!(
                    "sub-corpora must share the pivot language: {pivot:?} vs {:?}",
                    corpus.source_lang
                )));
            }
            let src = bundle.table(&corpus.source_lang)?.rows();
            let tgt = bundle.table(&corpus.target_lang)?.rows();
            let out_of_range = |s: &Sentence, rows: usize| s.tokens().iter().any(|&t| t as usize >= rows);
            if corpus
                .pairs
                .iter()
                .any(|p| out_of_range(&p.source, src) || out_of_range(&p.target, tgt))
            {
                return Err(Error::Config(format!(
                    "corpus {}-{} uses token ids outside its vocabularies",
                    corpus.source_lang, corpus.target_lang
                )));
            }
        }
        Ok(())
    }

    fn uses_documents(&self, corpus: &ParallelCorpus) -> bool {
        self.config.doc_signal && corpus.documents.is_some()
    }

    /// Shuffled, batched units of every corpus, interleaved round-robin.
    fn schedule(&self, corpora: &[ParallelCorpus]) -> Vec<(usize, Vec<Unit>)> {
        let mut per_corpus: Vec<Vec<Vec<Unit>>> = Vec::with_capacity(corpora.len());
        for (ci, corpus) in corpora.iter().enumerate() {
            let mut rng = rng_for(self.config.seed, self.epoch, 2 * ci as u64);
            let mut units: Vec<Unit> = if self.uses_documents(corpus) {
                let n = corpus.documents.as_ref().map_or(0, Vec::len);
                (0..n).map(Unit::Doc).collect()
            } else {
                (0..corpus.len()).map(Unit::Pair).collect()
            };
            units.shuffle(&mut rng);
            per_corpus.push(units.chunks(self.config.batch).map(<[Unit]>::to_vec).collect());
        }
        let rounds = per_corpus.iter().map(Vec::len).max().unwrap_or(0);
        let mut schedule = Vec::new();
        for r in 0..rounds {
            for (ci, batches) in per_corpus.iter().enumerate() {
                if let Some(b) = batches.get(r) {
                    schedule.push((ci, b.clone()));
                }
            }
        }
        schedule
    }

    fn draw_noise(&self, corpus: &ParallelCorpus, unit: Unit, rng: &mut ChaCha8Rng) -> Result<UnitNoise> {
        let k = self.config.noise;
        match unit {
            Unit::Pair(i) => Ok(UnitNoise::Pair(
                sample_noise(&corpus.pairs, i, k, rng)?
                    .into_iter()
                    .map(|n| n.source_index)
                    .collect(),
            )),
            Unit::Doc(d) => {
                let docs = corpus.documents.as_ref().expect("document unit");
                let noise_docs = (0..k)
                    .map(|_| draw_excluding(rng, docs.len(), d))
                    .collect::<Result<Vec<_>>>()?;
                let sentences = docs[d]
                    .clone()
                    .map(|p| (0..k).map(|_| draw_excluding(rng, corpus.len(), p)).collect())
                    .collect::<Result<Vec<_>>>()?;
                Ok(UnitNoise::Doc {
                    docs: noise_docs,
                    sentences,
                })
            }
        }
    }

    fn evaluate(&self, bundle: &ModelBundle, job: &Job<'_>) -> Result<(LossBreakdown, SparseGradient)> {
        let corpus = job.corpus;
        let objective = Objective {
            bundle,
            kind: self.config.kind,
            margin: self.config.margin,
            source_lang: &corpus.source_lang,
            target_lang: &corpus.target_lang,
        };
        match (&job.unit, &job.noise) {
            (Unit::Pair(i), UnitNoise::Pair(noise)) => {
                let pair = &corpus.pairs[*i];
                let noise: Vec<&Sentence> = noise.iter().map(|&j| &corpus.pairs[j].target).collect();
                objective.sentence_loss(&pair.source, &pair.target, &noise)
            }
            (Unit::Doc(d), UnitNoise::Doc { docs, sentences }) => {
                let ranges = corpus.documents.as_ref().expect("document unit");
                let source: Vec<Sentence> = corpus.pairs[ranges[*d].clone()]
                    .iter()
                    .map(|p| p.source.clone())
                    .collect();
                let target: Vec<Sentence> = corpus.pairs[ranges[*d].clone()]
                    .iter()
                    .map(|p| p.target.clone())
                    .collect();
                let noise_docs: Vec<Vec<Sentence>> = docs
                    .iter()
                    .map(|&n| corpus.pairs[ranges[n].clone()].iter().map(|p| p.target.clone()).collect())
                    .collect();
                let noise_refs: Vec<&[Sentence]> = noise_docs.iter().map(Vec::as_slice).collect();
                let sentence_noise: Vec<Vec<&Sentence>> = sentences
                    .iter()
                    .map(|list| list.iter().map(|&j| &corpus.pairs[j].target).collect())
                    .collect();
                objective.doc_loss_and_grads(
                    DocPair {
                        source: &source,
                        target: &target,
                    },
                    &noise_refs,
                    Some(&sentence_noise),
                )
            }
            _ => unreachable!("noise always matches its unit"),
        }
    }

    fn evaluate_batch(&self, bundle: &ModelBundle, jobs: &[Job<'_>]) -> Result<(LossBreakdown, SparseGradient)> {
        let threads = self.config.threads.min(jobs.len()).max(1);
        let mut loss = LossBreakdown::default();
        let mut grads = SparseGradient::new();
        if threads == 1 {
            for job in jobs {
                let (l, g) = self.evaluate(bundle, job)?;
                loss.merge(&l);
                grads.merge(&g);
            }
            return Ok((loss, grads));
        }
        let chunk = jobs.len().div_ceil(threads);
        let partials: Vec<Result<(LossBreakdown, SparseGradient)>> = std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .chunks(chunk)
                .map(|part| {
                    scope.spawn(move || {
                        let mut loss = LossBreakdown::default();
                        let mut grads = SparseGradient::new();
                        for job in part {
                            let (l, g) = self.evaluate(bundle, job)?;
                            loss.merge(&l);
                            grads.merge(&g);
                        }
                        Ok((loss, grads))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("gradient worker panicked"))
                .collect()
        });
        for part in partials {
            let (l, g) = part?;
            loss.merge(&l);
            grads.merge(&g);
        }
        Ok((loss, grads))
    }

    /// Runs one epoch over all sub-corpora and advances the epoch counter.
    pub fn run_epoch(&mut self, corpora: &[ParallelCorpus], bundle: &mut ModelBundle) -> Result<EpochStats> {
        self.check_corpora(corpora, bundle)?;
        let started = Instant::now();
        let schedule = self.schedule(corpora);
        let mut noise_rngs: Vec<ChaCha8Rng> = (0..corpora.len())
            .map(|ci| rng_for(self.config.seed, self.epoch, 2 * ci as u64 + 1))
            .collect();
        let mut total = LossBreakdown::default();
        let mut updates = 0;
        for (ci, units) in schedule {
            let corpus = &corpora[ci];
            let jobs = units
                .into_iter()
                .map(|unit| {
                    Ok(Job {
                        corpus,
                        unit,
                        noise: self.draw_noise(corpus, unit, &mut noise_rngs[ci])?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = self.evaluate_batch(bundle, &jobs)?;
            total.merge(&loss);
            adagrad_apply(bundle, &grads, &mut self.state, &self.config)?;
            updates += 1;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            hinge_total: total.hinge_total,
            active_fraction: if total.comparisons == 0 {
                0.0
            } else {
                total.active_noise_count as f64 / total.comparisons as f64
            },
            updates,
            seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Trains until `config.epochs` epochs have been completed.
    pub fn train(&mut self, corpora: &[ParallelCorpus], bundle: &mut ModelBundle) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        while self.epoch < self.config.epochs {
            report.epochs.push(self.run_epoch(corpora, bundle)?);
        }
        Ok(report)
    }

    pub fn checkpoint(&self, bundle: &ModelBundle, dir: impl AsRef<Path>) -> Result<()> {
        checkpoint(bundle, self, dir)
    }
}

pub fn train_single(
    corpus: &ParallelCorpus,
    bundle: &mut ModelBundle,
    config: &TrainConfig,
) -> Result<TrainReport> {
    Trainer::new(config.clone(), bundle)?.train(std::slice::from_ref(corpus), bundle)
}

/// Trains on several sub-corpora that share a pivot (source) language; the
/// pivot table is a single set of parameters updated by all of them.
pub fn train_joint(
    corpora: &[ParallelCorpus],
    bundle: &mut ModelBundle,
    config: &TrainConfig,
) -> Result<TrainReport> {
    Trainer::new(config.clone(), bundle)?.train(corpora, bundle)
}

const META_FILE: &str = "meta.txt";

fn vec_path(dir: &Path, code: &str) -> PathBuf {
    dir.join(format!("{code}.vec"))
}

fn state_path(dir: &Path, code: &str) -> PathBuf {
    dir.join(format!("{code}.adagrad"))
}

/// Writes `<lang>.vec`, `<lang>.adagrad` and `meta.txt` into `dir`.
pub fn checkpoint(bundle: &ModelBundle, trainer: &Trainer, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut meta = trainer.config.to_key_values();
    meta.push("epoch", trainer.epoch);
    let mut languages = Vec::new();
    for (code, lang) in bundle.iter() {
        validate_language(code)?;
        languages.push(code);
        export_table(&lang.table, &lang.vocab, vec_path(dir, code))?;
        let acc = trainer.state.accumulator(code).ok_or_else(|| {
            Error::Contract(format!("no AdaGrad accumulator for language {code:?}"))
        })?;
        export_table(acc, &lang.vocab, state_path(dir, code))?;
    }
    meta.push("languages", languages.join(","));
    let path = dir.join(META_FILE);
    fs::write(&path, meta.to_text()).map_err(|e| Error::io(path, e))
}

/// Everything needed to continue a run.
#[derive(Debug, Clone)]
pub struct Resumed {
    pub bundle: ModelBundle,
    pub trainer: Trainer,
}

pub fn resume(dir: impl AsRef<Path>) -> Result<Resumed> {
    let dir = dir.as_ref();
    let fail = |message: String| Error::Resume {
        path: dir.to_path_buf(),
        message,
    };
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| fail(format!("{}: {e}", meta_path.display())))?;
    let meta = KeyValues::parse(&text).map_err(|e| fail(e.to_string()))?;
    let mut config = TrainConfig::default();
    config.apply(&meta).map_err(|e| fail(e.to_string()))?;
    let epoch: usize = meta.require("epoch").map_err(|e| fail(e.to_string()))?;
    let languages = meta
        .get("languages")
        .ok_or_else(|| fail("metadata lacks `languages`".into()))?;

    let (bundle, state) = load_tables(dir, languages, config.dim, config.kind, true)
        .map_err(|e| fail(e.to_string()))?;
    let state = state.expect("requested");
    let trainer = Trainer::from_parts(config, state, epoch).map_err(|e| fail(e.to_string()))?;
    Ok(Resumed { bundle, trainer })
}

/// Loads only the embedding tables of a checkpoint.
pub fn load_model(dir: impl AsRef<Path>) -> Result<ModelBundle> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta = KeyValues::parse(&text)?;
    let dim: usize = meta.require("dim")?;
    let kind: CompositionKind = meta.get("cvm").unwrap_or("add").parse()?;
    let languages = meta
        .get("languages")
        .ok_or_else(|| Error::Config(format!("{} lacks `languages`", meta_path.display())))?;
    Ok(load_tables(dir, languages, dim, kind, false)?.0)
}

fn load_tables(
    dir: &Path,
    languages: &str,
    dim: usize,
    kind: CompositionKind,
    with_state: bool,
) -> Result<(ModelBundle, Option<AdaGradState>)> {
    let mut bundle = ModelBundle::new(dim, kind);
    let mut accumulators = BTreeMap::new();
    for code in languages.split(',').filter(|c| !c.is_empty()) {
        validate_language(code)?;
        let (vocab, table) = import_table(vec_path(dir, code))?;
        if with_state {
            let (state_vocab, acc) = import_table(state_path(dir, code))?;
            if state_vocab != vocab || acc.dim() != dim {
                return Err(Error::Config(format!(
                    "AdaGrad state for {code:?} does not match its table"
                )));
            }
            if acc.as_slice().iter().any(|v| *v < 0.0) {
                return Err(Error::Config(format!("negative AdaGrad accumulator for {code:?}")));
            }
            accumulators.insert(code.to_string(), acc);
        }
        bundle.insert(vocab, table)?;
    }
    let state = with_state.then_some(AdaGradState { accumulators });
    Ok((bundle, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ParallelPair;
    use crate::vocab::Vocabulary;

    fn scalar_bundle(w: f64) -> ModelBundle {
        let mut b = ModelBundle::new(1, CompositionKind::Add);
        b.insert(
            Vocabulary::from_words(["w"]).unwrap(),
            EmbeddingTable::from_rows("en", 1, vec![w]).unwrap(),
        )
        .unwrap();
        b
    }

    fn cfg(step: f64, lambda: f64) -> TrainConfig {
        TrainConfig {
            dim: 1,
            margin: 1.0,
            step,
            lambda,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adagrad_hand_example() {
        let mut b = scalar_bundle(0.0);
        let mut state = AdaGradState::for_bundle(&b);
        let mut g = SparseGradient::new();
        g.add("en", 0, &[2.0]);
        adagrad_apply(&mut b, &g, &mut state, &cfg(0.1, 0.0)).unwrap();
        assert_eq!(state.accumulator("en").unwrap().row(0), &[4.0]);
        // -0.1 * 2 / sqrt(4 + 1e-6), evaluated with mpmath
        let expected = -0.099_999_987_500_002_34;
        assert!((b.table("en").unwrap().row(0)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point_without_l2() {
        let mut b = scalar_bundle(0.7);
        let mut state = AdaGradState::for_bundle(&b);
        let mut g = SparseGradient::new();
        g.add("en", 0, &[0.0]);
        adagrad_apply(&mut b, &g, &mut state, &cfg(0.1, 0.0)).unwrap();
        assert_eq!(b.table("en").unwrap().row(0), &[0.7]);
        assert_eq!(state.accumulator("en").unwrap().row(0), &[0.0]);
    }

    #[test]
    fn repeated_gradient_takes_shrinking_steps() {
        let mut b = scalar_bundle(0.0);
        let mut state = AdaGradState::for_bundle(&b);
        let mut g = SparseGradient::new();
        g.add("en", 0, &[2.0]);
        let config = cfg(0.1, 0.0);
        adagrad_apply(&mut b, &g, &mut state, &config).unwrap();
        let after_one = b.table("en").unwrap().row(0)[0];
        adagrad_apply(&mut b, &g, &mut state, &config).unwrap();
        let second = b.table("en").unwrap().row(0)[0] - after_one;
        assert!(second.abs() < after_one.abs());
    }

    #[test]
    fn non_finite_gradient_rejected_untouched() {
        let mut b = scalar_bundle(0.5);
        let mut state = AdaGradState::for_bundle(&b);
        let mut g = SparseGradient::new();
        g.add("en", 0, &[f64::NAN]);
        let err = adagrad_apply(&mut b, &g, &mut state, &cfg(0.1, 1.0)).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(b.table("en").unwrap().row(0), &[0.5]);
    }

    #[test]
    fn l2_applies_to_touched_rows() {
        let mut b = scalar_bundle(1.0);
        let mut state = AdaGradState::for_bundle(&b);
        let mut g = SparseGradient::new();
        g.add("en", 0, &[0.0]);
        adagrad_apply(&mut b, &g, &mut state, &cfg(0.1, 1.0)).unwrap();
        assert!(b.table("en").unwrap().row(0)[0] < 1.0);
        let untouched = SparseGradient::new();
        let before = b.clone();
        adagrad_apply(&mut b, &untouched, &mut state, &cfg(0.1, 1.0)).unwrap();
        assert_eq!(before, b);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { margin: 0.0, ..TrainConfig::default() },
            TrainConfig { noise: 0, ..TrainConfig::default() },
            TrainConfig { batch: 0, ..TrainConfig::default() },
            TrainConfig { step: 0.0, ..TrainConfig::default() },
            TrainConfig { dim: 0, ..TrainConfig::default() },
            TrainConfig { epsilon: 0.0, ..TrainConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn config_key_values_round_trip() {
        let c = TrainConfig {
            dim: 8,
            margin: 3.25,
            kind: CompositionKind::Bi,
            doc_signal: true,
            mode: TrainMode::Joint,
            seed: 99,
            ..TrainConfig::default()
        };
        let mut back = TrainConfig::default();
        back.apply(&c.to_key_values()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn margin_follows_dim() {
        let mut c = TrainConfig::default();
        c.apply(&KeyValues::parse("dim=16").unwrap()).unwrap();
        assert_eq!(c.margin, 16.0);
    }

    fn tiny_corpus() -> (ModelBundle, ParallelCorpus) {
        let words = |p: &str| Vocabulary::from_words((0..6).map(|i| format!("{p}{i}"))).unwrap();
        let bundle = ModelBundle::initialise(
            4,
            CompositionKind::Add,
            [("en", words("e")), ("de", words("d"))],
            5,
        );
        let pairs = (0..6)
            .map(|i| ParallelPair {
                source: Sentence::new(vec![i as u32, ((i + 1) % 6) as u32]).unwrap(),
                target: Sentence::new(vec![i as u32]).unwrap(),
                index: i,
            })
            .collect();
        (bundle, ParallelCorpus::new("en", "de", pairs))
    }

    #[test]
    fn one_update_per_epoch_when_batch_is_corpus() {
        let (mut bundle, corpus) = tiny_corpus();
        let config = TrainConfig {
            dim: 4,
            margin: 4.0,
            noise: 2,
            batch: corpus.len(),
            epochs: 1,
            ..TrainConfig::default()
        };
        let report = train_single(&corpus, &mut bundle, &config).unwrap();
        assert_eq!(report.epochs.len(), 1);
        assert_eq!(report.epochs[0].updates, 1);
    }

    #[test]
    fn pivot_must_be_shared() {
        let (mut bundle, corpus) = tiny_corpus();
        let mut flipped = corpus.clone();
        std::mem::swap(&mut flipped.source_lang, &mut flipped.target_lang);
        let config = TrainConfig { dim: 4, epochs: 1, noise: 1, ..TrainConfig::default() };
        let err = train_joint(&[corpus, flipped], &mut bundle, &config).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn resume_from_empty_dir_fails() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(resume(dir.path()), Err(Error::Resume { .. })));
    }

    #[test]
    fn parallel_mode_keeps_invariants() {
        let (mut bundle, corpus) = tiny_corpus();
        let config = TrainConfig {
            dim: 4,
            margin: 4.0,
            noise: 3,
            batch: 3,
            epochs: 3,
            threads: 3,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(config, &bundle).unwrap();
        let mut prev = trainer.state().clone();
        for _ in 0..3 {
            trainer.run_epoch(std::slice::from_ref(&corpus), &mut bundle).unwrap();
            assert!(trainer.state().dominates(&prev));
            prev = trainer.state().clone();
        }
        assert!(bundle.table("en").unwrap().as_slice().iter().all(|v| v.is_finite()));
    }
}
