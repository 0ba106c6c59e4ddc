//! Synthetic multilingual data with a known answer.
//!
//! A latent vocabulary is split into topic blocks plus a block of common
//! words. Latent sentences draw most tokens from their topic's block. Each
//! language renders latent word `w` as its own surface form, so translations
//! are known exactly and documents can be generated in any language from the
//! same latent content.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{format_documents, ParallelCorpus, ParallelPair, Sentence, TextDocument};
use crate::embeddings::fnv1a;
use crate::error::{Error, Result};
use crate::vocab::{build_vocab, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub topics: usize,
    /// Latent words per topic block.
    pub topic_words: usize,
    pub common_words: usize,
    /// Probability that a token is drawn from the topic block.
    pub topic_prob: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub min_doc_sentences: usize,
    pub max_doc_sentences: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            topics: 4,
            topic_words: 40,
            common_words: 40,
            topic_prob: 0.75,
            min_len: 4,
            max_len: 10,
            min_doc_sentences: 3,
            max_doc_sentences: 6,
        }
    }
}

impl SynthConfig {
    pub fn latent_vocab(&self) -> usize {
        self.topics * self.topic_words + self.common_words
    }
}

/// Latent token ids.
pub type LatentSentence = Vec<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentDoc {
    pub topic: usize,
    pub sentences: Vec<LatentSentence>,
}

#[derive(Debug, Clone)]
pub struct Generator {
    config: SynthConfig,
    rng: ChaCha8Rng,
}

impl Generator {
    pub fn new(config: SynthConfig, seed: u64) -> Self {
        Generator {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    pub fn sentence(&mut self, topic: usize) -> LatentSentence {
        let c = self.config;
        let n = self.rng.random_range(c.min_len..=c.max_len);
        (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < c.topic_prob {
                    topic * c.topic_words + self.rng.random_range(0..c.topic_words)
                } else {
                    c.topics * c.topic_words + self.rng.random_range(0..c.common_words)
                }
            })
            .collect()
    }

    /// `n` sentences; sentence `i` has topic `i % topics`.
    pub fn corpus(&mut self, n: usize) -> Vec<LatentSentence> {
        let topics = self.config.topics;
        (0..n).map(|i| self.sentence(i % topics)).collect()
    }

    /// `n` documents; document `i` has topic `i % topics`.
    pub fn documents(&mut self, n: usize) -> Vec<LatentDoc> {
        let c = self.config;
        (0..n)
            .map(|i| {
                let topic = i % c.topics;
                let len = self.rng.random_range(c.min_doc_sentences..=c.max_doc_sentences);
                LatentDoc {
                    topic,
                    sentences: (0..len).map(|_| self.sentence(topic)).collect(),
                }
            })
            .collect()
    }
}

/// Surface forms of one language: latent word `w` is written as
/// `<lang><perm[w]>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    language: String,
    forms: Vec<String>,
}

impl Lexicon {
    pub fn new(language: &str, config: &SynthConfig, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..config.latent_vocab()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ fnv1a(language.as_bytes())));
        Lexicon {
            language: language.to_string(),
            forms: perm.iter().map(|p| format!("{language}{p:03}")).collect(),
        }
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn form(&self, latent: usize) -> &str {
        &self.forms[latent]
    }

    pub fn render(&self, sentence: &[usize]) -> Vec<String> {
        sentence.iter().map(|&w| self.forms[w].clone()).collect()
    }

    pub fn render_docs(&self, docs: &[LatentDoc], id_prefix: &str) -> Vec<TextDocument> {
        docs.iter()
            .enumerate()
            .map(|(i, d)| TextDocument {
                id: format!("{id_prefix}{i}"),
                language: self.language.clone(),
                labels: [format!("topic{}", d.topic)].into_iter().collect(),
                sentences: d.sentences.iter().map(|s| self.render(s)).collect(),
            })
            .collect()
    }
}

/// Sentence-aligned text for one language pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelText {
    pub source_lang: String,
    pub target_lang: String,
    pub source: Vec<Vec<String>>,
    pub target: Vec<Vec<String>>,
}

impl ParallelText {
    pub fn render(source: &Lexicon, target: &Lexicon, latent: &[LatentSentence]) -> Self {
        ParallelText {
            source_lang: source.language().to_string(),
            target_lang: target.language().to_string(),
            source: latent.iter().map(|s| source.render(s)).collect(),
            target: latent.iter().map(|s| target.render(s)).collect(),
        }
    }

    pub fn to_corpus(&self, source_vocab: &Vocabulary, target_vocab: &Vocabulary) -> Result<ParallelCorpus> {
        let mut pairs = Vec::with_capacity(self.source.len());
        for (s, t) in self.source.iter().zip(&self.target) {
            let (Some(source), Some(target)) = (
                Sentence::from_tokens(s, source_vocab),
                Sentence::from_tokens(t, target_vocab),
            ) else {
                return Err(Error::Alignment("synthetic sentence has no known token".into()));
            };
            pairs.push(ParallelPair {
                source,
                target,
                index: pairs.len(),
            });
        }
        Ok(ParallelCorpus::new(&self.source_lang, &self.target_lang, pairs))
    }

    /// Writes `<src>-<tgt>.<src>` and `<src>-<tgt>.<tgt>`, one sentence per
    /// line, and returns both paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        let stem = format!("{}-{}", self.source_lang, self.target_lang);
        let a = dir.join(format!("{stem}.{}", self.source_lang));
        let b = dir.join(format!("{stem}.{}", self.target_lang));
        write_lines(&a, &self.source)?;
        write_lines(&b, &self.target)?;
        Ok((a, b))
    }
}

fn write_lines(path: &Path, sentences: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    for s in sentences {
        text.push_str(&s.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_documents(path: &Path, docs: &[TextDocument]) -> Result<()> {
    fs::write(path, format_documents(docs)).map_err(|e| Error::io(path, e))
}

/// Vocabulary of every token on one side of the given texts, in
/// first-occurrence order.
pub fn vocab_of(sentences: &[Vec<String>]) -> Vocabulary {
    build_vocab(sentences)
}

/// Two languages sharing one parallel corpus, with labelled documents in both.
#[derive(Debug, Clone)]
pub struct TwinTask {
    pub parallel: ParallelText,
    pub train_docs: Vec<TextDocument>,
    pub test_docs: Vec<TextDocument>,
}

/// Parallel corpus of `sentences` pairs between `a` and `b`; training
/// documents in `a` and test documents in `b`, drawn independently.
pub fn twin_task(a: &str, b: &str, sentences: usize, docs: usize, seed: u64) -> TwinTask {
    let config = SynthConfig::default();
    let mut gen = Generator::new(config, seed);
    let la = Lexicon::new(a, &config, seed);
    let lb = Lexicon::new(b, &config, seed);
    let latent = gen.corpus(sentences);
    let train = gen.documents(docs);
    let test = gen.documents(docs);
    TwinTask {
        parallel: ParallelText::render(&la, &lb, &latent),
        train_docs: la.render_docs(&train, "train"),
        test_docs: lb.render_docs(&test, "test"),
    }
}

/// A pivot language paired separately with two others; the two non-pivot
/// languages never co-occur.
#[derive(Debug, Clone)]
pub struct PivotTask {
    pub pivot_pairs: Vec<ParallelText>,
    pub lexicons: Vec<Lexicon>,
    /// Documents in the first non-pivot language.
    pub train_docs: Vec<TextDocument>,
    /// Documents in the second non-pivot language.
    pub test_docs: Vec<TextDocument>,
}

/// `pivot`–`x` and `pivot`–`y` corpora built from disjoint latent sentences.
pub fn pivot_task(pivot: &str, x: &str, y: &str, sentences: usize, docs: usize, seed: u64) -> PivotTask {
    let config = SynthConfig::default();
    let mut gen = Generator::new(config, seed);
    let lp = Lexicon::new(pivot, &config, seed);
    let lx = Lexicon::new(x, &config, seed);
    let ly = Lexicon::new(y, &config, seed);
    let first = gen.corpus(sentences);
    let second = gen.corpus(sentences);
    let train = gen.documents(docs);
    let test = gen.documents(docs);
    PivotTask {
        pivot_pairs: vec![
            ParallelText::render(&lp, &lx, &first),
            ParallelText::render(&lp, &ly, &second),
        ],
        train_docs: lx.render_docs(&train, "train"),
        test_docs: ly.render_docs(&test, "test"),
        lexicons: vec![lp, lx, ly],
    }
}
