//! Cross-lingual document classification.
//!
//! Documents are embedded with the trained word vectors (sentence CVM outputs,
//! then either averaged or composed by the document CVM). A classifier is
//! trained on one language and tested on another with no target-language
//! supervision: a multiclass averaged perceptron for single-label tasks, and
//! one-vs-rest binary averaged perceptrons for multi-label tasks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::composition::{compose, compose_document, CompositionKind};
use crate::corpus::TextDocument;
use crate::embeddings::{fnv1a, format_value, LanguageEmbeddings, ModelBundle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RepresentationLevel {
    /// Mean of the sentence vectors.
    #[default]
    SentenceAverage,
    /// Sentence vectors composed by the document-level CVM.
    DocCvm,
}

impl fmt::Display for RepresentationLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RepresentationLevel::SentenceAverage => "sentence-average",
            RepresentationLevel::DocCvm => "doc-cvm",
        })
    }
}

impl FromStr for RepresentationLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sentence-average" | "average" => Ok(RepresentationLevel::SentenceAverage),
            "doc-cvm" | "doc" => Ok(RepresentationLevel::DocCvm),
            other => Err(Error::Config(format!(
                "unknown representation {other:?} (sentence-average|doc-cvm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DocVector {
    pub vector: Vec<f64>,
    pub doc_id: String,
    pub labels: BTreeSet<String>,
}

/// Embeds a document. Out-of-vocabulary tokens are skipped, as are sentences
/// with no known token; a document with nothing left is an error.
pub fn doc_representation(
    doc: &TextDocument,
    lang: &LanguageEmbeddings,
    kind: CompositionKind,
    level: RepresentationLevel,
) -> Result<DocVector> {
    let mut sentence_vectors = Vec::new();
    for sentence in &doc.sentences {
        let rows: Vec<&[f64]> = sentence
            .iter()
            .filter_map(|tok| lang.vocab.get(tok))
            .map(|id| lang.table.row(id))
            .collect();
        if rows.is_empty() {
            continue;
        }
        sentence_vectors.push(compose(kind, &rows)?.output);
    }
    if sentence_vectors.is_empty() {
        return Err(Error::Representation(doc.id.clone()));
    }
    let vector = match level {
        RepresentationLevel::SentenceAverage => {
            let n = sentence_vectors.len() as f64;
            let mut mean = vec![0.0; lang.table.dim()];
            for v in &sentence_vectors {
                for (m, x) in mean.iter_mut().zip(v) {
                    *m += x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            mean
        }
        RepresentationLevel::DocCvm => compose_document(&sentence_vectors, kind)?.output,
    };
    Ok(DocVector {
        vector,
        doc_id: doc.id.clone(),
        labels: doc.labels.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerceptronConfig {
    pub epochs: usize,
    pub seed: u64,
    /// Reshuffle examples every epoch.
    pub shuffle: bool,
}

impl Default for PerceptronConfig {
    fn default() -> Self {
        PerceptronConfig {
            epochs: 10,
            seed: 1,
            shuffle: true,
        }
    }
}

fn with_bias(x: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(1.0);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn visiting_order(n: usize, epoch: usize, config: &PerceptronConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if config.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
    }
    order
}

/// Multiclass averaged perceptron. Weight rows include a trailing bias.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptronModel {
    classes: usize,
    width: usize,
    weights: Vec<f64>,
    averaged: Vec<f64>,
    snapshots: usize,
}

impl PerceptronModel {
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Averaged weights of `class` (features then bias).
    pub fn averaged(&self, class: usize) -> &[f64] {
        &self.averaged[class * self.width..(class + 1) * self.width]
    }

    /// Final (non-averaged) weights of `class`.
    pub fn current(&self, class: usize) -> &[f64] {
        &self.weights[class * self.width..(class + 1) * self.width]
    }

    pub fn snapshots(&self) -> usize {
        self.snapshots
    }

    /// Multiplies every averaged weight by `factor`.
    pub fn scale(&mut self, factor: f64) {
        self.averaged.iter_mut().for_each(|w| *w *= factor);
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let x = with_bias(x);
        (0..self.classes).map(|c| dot(self.averaged(c), &x)).collect()
    }

    /// Highest-scoring class; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.scores(x))
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Trains on `(features, class id)` pairs. At least two distinct classes must
/// occur. The averaged weights are the mean of the weights after every
/// example visit.
pub fn train_multiclass(examples: &[(Vec<f64>, usize)], config: &PerceptronConfig) -> Result<PerceptronModel> {
    let distinct: BTreeSet<usize> = examples.iter().map(|(_, c)| *c).collect();
    if distinct.len() < 2 {
        return Err(Error::DegenerateTask(format!(
            "multiclass training needs at least 2 classes, found {}",
            distinct.len()
        )));
    }
    let classes = distinct.last().copied().unwrap_or(0) + 1;
    let dim = examples[0].0.len();
    if examples.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::Contract("examples differ in dimensionality".into()));
    }
    let width = dim + 1;
    let mut weights = vec![0.0; classes * width];
    let mut sum = vec![0.0; classes * width];
    let mut snapshots = 0usize;
    let inputs: Vec<Vec<f64>> = examples.iter().map(|(x, _)| with_bias(x)).collect();
    for epoch in 0..config.epochs {
        for i in visiting_order(examples.len(), epoch, config) {
            let x = &inputs[i];
            let gold = examples[i].1;
            let scores: Vec<f64> = (0..classes)
                .map(|c| dot(&weights[c * width..(c + 1) * width], x))
                .collect();
            let predicted = argmax(&scores);
            if predicted != gold {
                for (j, xj) in x.iter().enumerate() {
                    weights[gold * width + j] += xj;
                    weights[predicted * width + j] -= xj;
                }
            }
            for (s, w) in sum.iter_mut().zip(&weights) {
                *s += w;
            }
            snapshots += 1;
        }
    }
    let averaged = if snapshots == 0 {
        weights.clone()
    } else {
        sum.iter().map(|s| s / snapshots as f64).collect()
    };
    Ok(PerceptronModel {
        classes,
        width,
        weights,
        averaged,
        snapshots,
    })
}

/// Binary averaged perceptron; positive iff the averaged score is > 0.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryPerceptron {
    averaged: Vec<f64>,
}

impl BinaryPerceptron {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.averaged, &with_bias(x))
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.score(x) > 0.0
    }

    pub fn weights(&self) -> &[f64] {
        &self.averaged
    }
}

pub fn train_binary(examples: &[(&[f64], bool)], config: &PerceptronConfig) -> BinaryPerceptron {
    let width = examples.first().map_or(1, |(x, _)| x.len() + 1);
    let mut weights = vec![0.0; width];
    let mut sum = vec![0.0; width];
    let mut snapshots = 0usize;
    let inputs: Vec<Vec<f64>> = examples.iter().map(|(x, _)| with_bias(x)).collect();
    for epoch in 0..config.epochs {
        for i in visiting_order(examples.len(), epoch, config) {
            let x = &inputs[i];
            let gold = examples[i].1;
            if (dot(&weights, x) > 0.0) != gold {
                let sign = if gold { 1.0 } else { -1.0 };
                for (w, xj) in weights.iter_mut().zip(x) {
                    *w += sign * xj;
                }
            }
            for (s, w) in sum.iter_mut().zip(&weights) {
                *s += w;
            }
            snapshots += 1;
        }
    }
    let averaged = if snapshots == 0 {
        weights
    } else {
        sum.iter().map(|s| s / snapshots as f64).collect()
    };
    BinaryPerceptron { averaged }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelModel {
    pub models: BTreeMap<String, BinaryPerceptron>,
    /// Labels with no positive training example; they always predict negative.
    pub flagged: Vec<String>,
}

impl MultiLabelModel {
    pub fn predict(&self, x: &[f64]) -> BTreeSet<String> {
        self.models
            .iter()
            .filter(|(_, m)| m.predict(x))
            .map(|(l, _)| l.clone())
            .collect()
    }
}

/// One-vs-rest binary perceptrons. Each label's shuffling seed is derived
/// from the base seed and the label alone.
pub fn train_multilabel(
    examples: &[(Vec<f64>, BTreeSet<String>)],
    label_universe: &BTreeSet<String>,
    config: &PerceptronConfig,
) -> Result<MultiLabelModel> {
    if label_universe.is_empty() {
        return Err(Error::DegenerateTask("empty label universe".into()));
    }
    let dim = examples.first().map_or(0, |(x, _)| x.len());
    let mut models = BTreeMap::new();
    let mut flagged = Vec::new();
    for label in label_universe {
        let data: Vec<(&[f64], bool)> = examples
            .iter()
            .map(|(x, labels)| (x.as_slice(), labels.contains(label)))
            .collect();
        let model = if data.iter().any(|(_, y)| *y) {
            let per_label = PerceptronConfig {
                seed: config.seed ^ fnv1a(label.as_bytes()),
                ..*config
            };
            train_binary(&data, &per_label)
        } else {
            flagged.push(label.clone());
            BinaryPerceptron {
                averaged: vec![0.0; dim + 1],
            }
        };
        models.insert(label.clone(), model);
    }
    Ok(MultiLabelModel { models, flagged })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn f1(&self) -> f64 {
        let p = if self.tp + self.fp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        };
        let r = if self.tp + self.fn_ == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        };
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Contract(format!(
            "{a} predictions for {b} gold label sets"
        )));
    }
    Ok(())
}

/// F1 over all pooled (document, label) decisions; 0 when P + R = 0.
pub fn micro_f1(predictions: &[BTreeSet<String>], gold: &[BTreeSet<String>]) -> Result<f64> {
    check_lengths(predictions.len(), gold.len())?;
    let mut c = Counts::default();
    for (p, g) in predictions.iter().zip(gold) {
        c.tp += p.intersection(g).count();
        c.fp += p.difference(g).count();
        c.fn_ += g.difference(p).count();
    }
    Ok(c.f1())
}

/// Unweighted mean of per-label F1 over `labels`.
pub fn macro_f1(
    predictions: &[BTreeSet<String>],
    gold: &[BTreeSet<String>],
    labels: &BTreeSet<String>,
) -> Result<f64> {
    check_lengths(predictions.len(), gold.len())?;
    if labels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = labels
        .iter()
        .map(|label| {
            let mut c = Counts::default();
            for (p, g) in predictions.iter().zip(gold) {
                match (p.contains(label), g.contains(label)) {
                    (true, true) => c.tp += 1,
                    (true, false) => c.fp += 1,
                    (false, true) => c.fn_ += 1,
                    (false, false) => {}
                }
            }
            c.f1()
        })
        .sum();
    Ok(total / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Task {
    /// Exactly one label per document; reports accuracy.
    #[default]
    SingleLabel,
    /// Any number of labels; reports micro-F1 (and macro-F1 as an extra).
    MultiLabel,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "single-label" => Ok(Task::SingleLabel),
            "multi" | "multi-label" => Ok(Task::MultiLabel),
            other => Err(Error::Config(format!("unknown task {other:?} (single|multi)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReprConfig {
    pub kind: CompositionKind,
    pub level: RepresentationLevel,
    pub task: Task,
    pub perceptron: PerceptronConfig,
}

impl Default for ReprConfig {
    fn default() -> Self {
        ReprConfig {
            kind: CompositionKind::Add,
            level: RepresentationLevel::SentenceAverage,
            task: Task::SingleLabel,
            perceptron: PerceptronConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub train_lang: String,
    pub test_lang: String,
    pub metric: String,
    pub value: f64,
    pub support: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    /// Headline metric per (train, test) pair.
    pub rows: Vec<EvalRow>,
    /// Baselines and secondary metrics (majority class, macro-F1).
    pub extras: Vec<EvalRow>,
    /// Labels that had no positive training example.
    pub flagged_labels: Vec<String>,
}

pub const TSV_HEADER: &str = "train_lang\ttest_lang\tmetric\tvalue\tsupport";

fn rows_tsv(rows: &[EvalRow]) -> String {
    let mut out = format!("{TSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.train_lang,
            r.test_lang,
            r.metric,
            format_value(r.value),
            r.support
        ));
    }
    out
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        rows_tsv(&self.rows)
    }

    pub fn extras_tsv(&self) -> String {
        rows_tsv(&self.extras)
    }

    pub fn get(&self, train: &str, test: &str) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.train_lang == train && r.test_lang == test)
    }

    pub fn extra(&self, train: &str, test: &str, metric: &str) -> Option<&EvalRow> {
        self.extras
            .iter()
            .find(|r| r.train_lang == train && r.test_lang == test && r.metric == metric)
    }

    fn merge(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
        self.extras.extend(other.extras);
        for l in other.flagged_labels {
            if !self.flagged_labels.contains(&l) {
                self.flagged_labels.push(l);
            }
        }
    }
}

pub fn represent_all(
    docs: &[TextDocument],
    bundle: &ModelBundle,
    language: &str,
    repr: &ReprConfig,
) -> Result<Vec<DocVector>> {
    let lang = bundle.language(language)?;
    docs.iter()
        .map(|d| doc_representation(d, lang, repr.kind, repr.level))
        .collect()
}

fn single_label(doc: &DocVector) -> Result<&str> {
    match doc.labels.len() {
        1 => Ok(doc.labels.iter().next().expect("one label")),
        n => Err(Error::DegenerateTask(format!(
            "document {:?} has {n} labels; the single-label task needs exactly one",
            doc.doc_id
        ))),
    }
}

fn evaluate_vectors(
    train_lang: &str,
    train: &[DocVector],
    test_lang: &str,
    test: &[DocVector],
    repr: &ReprConfig,
) -> Result<EvalReport> {
    let row = |metric: &str, value: f64| EvalRow {
        train_lang: train_lang.to_string(),
        test_lang: test_lang.to_string(),
        metric: metric.to_string(),
        value,
        support: test.len(),
    };
    let mut report = EvalReport::default();
    match repr.task {
        Task::SingleLabel => {
            let mut classes: BTreeMap<&str, usize> = BTreeMap::new();
            for d in train {
                classes.insert(single_label(d)?, 0);
            }
            for (i, v) in classes.values_mut().enumerate() {
                *v = i;
            }
            let examples = train
                .iter()
                .map(|d| Ok((d.vector.clone(), classes[single_label(d)?])))
                .collect::<Result<Vec<_>>>()?;
            let model = train_multiclass(&examples, &repr.perceptron)?;

            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for d in train {
                *counts.entry(single_label(d)?).or_default() += 1;
            }
            let majority = counts
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(l, _)| *l)
                .unwrap_or_default();

            let mut correct = 0usize;
            let mut majority_hits = 0usize;
            for d in test {
                let gold = single_label(d)?;
                if classes.get(gold) == Some(&model.predict(&d.vector)) {
                    correct += 1;
                }
                if gold == majority {
                    majority_hits += 1;
                }
            }
            let n = test.len().max(1) as f64;
            report.rows.push(row("accuracy", correct as f64 / n));
            report.extras.push(row("majority", majority_hits as f64 / n));
        }
        Task::MultiLabel => {
            let universe: BTreeSet<String> = train.iter().flat_map(|d| d.labels.iter().cloned()).collect();
            let examples: Vec<(Vec<f64>, BTreeSet<String>)> =
                train.iter().map(|d| (d.vector.clone(), d.labels.clone())).collect();
            let model = train_multilabel(&examples, &universe, &repr.perceptron)?;
            let predictions: Vec<BTreeSet<String>> = test.iter().map(|d| model.predict(&d.vector)).collect();
            let gold: Vec<BTreeSet<String>> = test.iter().map(|d| d.labels.clone()).collect();
            report.rows.push(row("micro_f1", micro_f1(&predictions, &gold)?));
            report
                .extras
                .push(row("macro_f1", macro_f1(&predictions, &gold, &universe)?));
            report.flagged_labels = model.flagged;
        }
    }
    Ok(report)
}

fn pair_seed(seed: u64, train: &str, test: &str) -> u64 {
    seed ^ fnv1a(format!("{train}>{test}").as_bytes())
}

/// Trains on `train` documents, tests on `test` documents.
pub fn cldc_run(
    train: (&str, &[TextDocument]),
    test: (&str, &[TextDocument]),
    bundle: &ModelBundle,
    repr: &ReprConfig,
) -> Result<EvalReport> {
    let train_vecs = represent_all(train.1, bundle, train.0, repr)?;
    let test_vecs = represent_all(test.1, bundle, test.0, repr)?;
    evaluate_vectors(train.0, &train_vecs, test.0, &test_vecs, repr)
}

/// `cldc_run` for every ordered pair of distinct languages. Each language's
/// documents serve as its training set and as its test set. Classifier seeds
/// depend only on the language pair.
pub fn transfer_matrix(
    docs: &BTreeMap<String, Vec<TextDocument>>,
    bundle: &ModelBundle,
    repr: &ReprConfig,
) -> Result<EvalReport> {
    if docs.len() < 2 {
        return Err(Error::Config("transfer matrix needs at least 2 languages".into()));
    }
    let vectors = docs
        .iter()
        .map(|(lang, d)| Ok((lang.as_str(), represent_all(d, bundle, lang, repr)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let mut report = EvalReport::default();
    for (train_lang, train) in &vectors {
        for (test_lang, test) in &vectors {
            if train_lang == test_lang {
                continue;
            }
            let mut pair_repr = *repr;
            pair_repr.perceptron.seed = pair_seed(repr.perceptron.seed, train_lang, test_lang);
            report.merge(evaluate_vectors(train_lang, train, test_lang, test, &pair_repr)?);
        }
    }
    Ok(report)
}
