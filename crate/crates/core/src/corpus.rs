//! Corpus ingestion: tokenisation, aligned sentence pairs, labelled documents
//! and noise sampling for the contrastive objective.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// Separator between sentences inside a document line.
pub const SENTENCE_SEPARATOR: &str = " ||| ";

/// Lowercases (full Unicode case folding via `to_lowercase`) and splits on
/// whitespace runs. Punctuation is kept attached to words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Non-empty sequence of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence(Vec<TokenId>);

impl Sentence {
    /// `None` for an empty sequence.
    pub fn new(tokens: Vec<TokenId>) -> Option<Self> {
        (!tokens.is_empty()).then_some(Sentence(tokens))
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Maps tokens through `vocab`, skipping unknown ones.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Option<Self> {
        Sentence::new(tokens.iter().filter_map(|t| vocab.get(t.as_ref())).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelPair {
    pub source: Sentence,
    pub target: Sentence,
    pub index: usize,
}

/// Sentence pairs between a source and a target language, optionally grouped
/// into aligned documents (contiguous index ranges).
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    pub source_lang: String,
    pub target_lang: String,
    pub pairs: Vec<ParallelPair>,
    pub documents: Option<Vec<Range<usize>>>,
}

impl ParallelCorpus {
    pub fn new(source_lang: impl Into<String>, target_lang: impl Into<String>, pairs: Vec<ParallelPair>) -> Self {
        ParallelCorpus {
            source_lang: source_lang.into(),
            target_lang: target_lang.into(),
            pairs,
            documents: None,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Builds a sentence-aligned document corpus by pairing documents with the
    /// same id. Aligned documents must have equal sentence counts; documents
    /// present on only one side are ignored.
    pub fn from_documents(source: &[LabeledDocument], target: &[LabeledDocument]) -> Result<Self> {
        let source_lang = source.first().map(|d| d.language.clone()).unwrap_or_default();
        let target_lang = target.first().map(|d| d.language.clone()).unwrap_or_default();
        let by_id: BTreeMap<&str, &LabeledDocument> =
            target.iter().map(|d| (d.id.as_str(), d)).collect();
        let mut pairs = Vec::new();
        let mut documents = Vec::new();
        for doc in source {
            let Some(other) = by_id.get(doc.id.as_str()) else {
                continue;
            };
            if doc.sentences.len() != other.sentences.len() {
                return Err(Error::Alignment(format!(
                    "document {:?} has {} source and {} target sentences",
                    doc.id,
                    doc.sentences.len(),
                    other.sentences.len()
                )));
            }
            let start = pairs.len();
            for (s, t) in doc.sentences.iter().zip(&other.sentences) {
                pairs.push(ParallelPair {
                    source: s.clone(),
                    target: t.clone(),
                    index: pairs.len(),
                });
            }
            documents.push(start..pairs.len());
        }
        Ok(ParallelCorpus {
            source_lang,
            target_lang,
            pairs,
            documents: Some(documents),
        })
    }
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Aligns two texts line by line. Pairs where either side tokenises to nothing
/// (or to tokens unknown to its vocabulary) are dropped; survivors are
/// re-indexed `0..n`.
pub fn parse_parallel(
    text_a: &str,
    text_b: &str,
    vocab_a: &Vocabulary,
    vocab_b: &Vocabulary,
) -> Result<Vec<ParallelPair>> {
    let lines_a: Vec<&str> = text_a.lines().collect();
    let lines_b: Vec<&str> = text_b.lines().collect();
    if lines_a.len() != lines_b.len() {
        return Err(Error::Alignment(format!(
            "{} source lines vs {} target lines",
            lines_a.len(),
            lines_b.len()
        )));
    }
    let mut pairs = Vec::with_capacity(lines_a.len());
    for (a, b) in lines_a.iter().zip(&lines_b) {
        let sa = Sentence::from_tokens(&tokenize(a), vocab_a);
        let sb = Sentence::from_tokens(&tokenize(b), vocab_b);
        if let (Some(source), Some(target)) = (sa, sb) {
            pairs.push(ParallelPair {
                source,
                target,
                index: pairs.len(),
            });
        }
    }
    Ok(pairs)
}

pub fn load_parallel(
    path_a: impl AsRef<Path>,
    path_b: impl AsRef<Path>,
    vocab_a: &Vocabulary,
    vocab_b: &Vocabulary,
) -> Result<Vec<ParallelPair>> {
    let a = read_file(path_a.as_ref())?;
    let b = read_file(path_b.as_ref())?;
    parse_parallel(&a, &b, vocab_a, vocab_b)
}

/// Tokenised lines of a one-sentence-per-line file, empty lines removed.
pub fn read_sentences(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let text = read_file(path.as_ref())?;
    Ok(text.lines().map(tokenize).collect())
}

/// Anything carrying a label set.
pub trait Labeled {
    fn labels(&self) -> &BTreeSet<String>;
}

/// A document as read from disk: tokens are still strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextDocument {
    pub id: String,
    pub language: String,
    pub labels: BTreeSet<String>,
    pub sentences: Vec<Vec<String>>,
}

/// A document mapped to token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledDocument {
    pub id: String,
    pub language: String,
    pub labels: BTreeSet<String>,
    pub sentences: Vec<Sentence>,
}

impl Labeled for TextDocument {
    fn labels(&self) -> &BTreeSet<String> {
        &self.labels
    }
}

impl Labeled for LabeledDocument {
    fn labels(&self) -> &BTreeSet<String> {
        &self.labels
    }
}

impl TextDocument {
    /// Maps to ids; unknown tokens are skipped and sentences left empty are
    /// dropped. `None` when no sentence survives.
    pub fn to_ids(&self, vocab: &Vocabulary) -> Option<LabeledDocument> {
        let sentences: Vec<Sentence> = self
            .sentences
            .iter()
            .filter_map(|s| Sentence::from_tokens(s, vocab))
            .collect();
        (!sentences.is_empty()).then(|| LabeledDocument {
            id: self.id.clone(),
            language: self.language.clone(),
            labels: self.labels.clone(),
            sentences,
        })
    }
}

/// Parses the document line format:
/// `doc_id TAB lang TAB label,label TAB sentence ||| sentence`.
///
/// Blank lines are skipped. Sentences that tokenise to nothing are dropped, and
/// so are documents left without sentences.
pub fn parse_documents(text: &str) -> Result<Vec<TextDocument>> {
    let mut docs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                idx + 1,
                format!("expected 4 tab-separated fields, found {}", fields.len()),
            ));
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(Error::parse(idx + 1, "empty document id"));
        }
        let labels = fields[2]
            .split(',')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        let sentences: Vec<Vec<String>> = fields[3]
            .split(SENTENCE_SEPARATOR)
            .map(tokenize)
            .filter(|s| !s.is_empty())
            .collect();
        if sentences.is_empty() {
            continue;
        }
        docs.push(TextDocument {
            id: id.to_string(),
            language: fields[1].to_string(),
            labels,
            sentences,
        });
    }
    Ok(docs)
}

pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<TextDocument>> {
    parse_documents(&read_file(path.as_ref())?)
}

/// Loads documents and maps them through `vocab` (unknown tokens skipped).
pub fn load_documents(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<LabeledDocument>> {
    Ok(read_documents(path)?
        .iter()
        .filter_map(|d| d.to_ids(vocab))
        .collect())
}

/// Serialises documents back into the line format.
pub fn format_documents(docs: &[TextDocument]) -> String {
    let mut out = String::new();
    for doc in docs {
        let labels: Vec<&str> = doc.labels.iter().map(String::as_str).collect();
        let sentences: Vec<String> = doc.sentences.iter().map(|s| s.join(" ")).collect();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            doc.id,
            doc.language,
            labels.join(","),
            sentences.join(SENTENCE_SEPARATOR)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopLabels {
    pub labels: BTreeSet<String>,
    /// Fewer distinct labels existed than were requested.
    pub underfull: bool,
}

/// The `n` labels attached to the most documents, ties broken
/// lexicographically.
pub fn select_top_labels<D: Labeled>(docs: &[D], n: usize) -> Result<TopLabels> {
    if n == 0 {
        return Err(Error::Config("label count must be >= 1".into()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        for label in doc.labels() {
            *counts.entry(label.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let underfull = ranked.len() < n;
    Ok(TopLabels {
        labels: ranked.into_iter().take(n).map(|(l, _)| l.to_string()).collect(),
        underfull,
    })
}

/// Drops every label not in `keep`.
pub fn restrict_labels(docs: &mut [TextDocument], keep: &BTreeSet<String>) {
    for doc in docs {
        doc.labels.retain(|l| keep.contains(l));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSample<'a> {
    pub sentence: &'a Sentence,
    pub source_index: usize,
}

/// Uniform draw from `0..len` excluding `exclude`, resampling on collision.
pub fn draw_excluding<R: Rng + ?Sized>(rng: &mut R, len: usize, exclude: usize) -> Result<usize> {
    if len < 2 {
        return Err(Error::CannotSample(len));
    }
    loop {
        let i = rng.random_range(0..len);
        if i != exclude {
            return Ok(i);
        }
    }
}

/// Draws `k` target-side sentences uniformly with replacement from every
/// corpus position except `positive_index`.
pub fn sample_noise<'a, R: Rng + ?Sized>(
    corpus: &'a [ParallelPair],
    positive_index: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<NoiseSample<'a>>> {
    (0..k)
        .map(|_| {
            let i = draw_excluding(rng, corpus.len(), positive_index)?;
            Ok(NoiseSample {
                sentence: &corpus[i].target,
                source_index: i,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::build_vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Hello  World"), vec!["hello", "world"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Ich bin's"), vec!["ich", "bin's"]);
        assert_eq!(tokenize(" \tStraße\nÜBER "), vec!["straße", "über"]);
    }

    fn vocab_of(text: &str) -> Vocabulary {
        build_vocab(text.lines().map(tokenize))
    }

    #[test]
    fn empty_pairs_are_dropped() {
        let en = "the cat\nthe dog\na bird\n";
        let de = "die katze\n   \nein vogel\n";
        let pairs = parse_parallel(en, de, &vocab_of(en), &vocab_of(de)).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].index, 0);
        assert_eq!(pairs[1].index, 1);
        assert_eq!(pairs[1].source.len(), 2);
    }

    #[test]
    fn line_count_mismatch() {
        let a = "a\nb\nc\nd\ne\n";
        let b = "a\nb\nc\nd\n";
        let err = parse_parallel(a, b, &vocab_of(a), &vocab_of(b)).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }

    #[test]
    fn shared_vocab_identical_lines() {
        let v = vocab_of("a b");
        let pairs = parse_parallel("a b", "a b", &v, &v).unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].source, pairs[0].target);
    }

    #[test]
    fn load_parallel_reports_missing_file() {
        let v = Vocabulary::new();
        let err = load_parallel("/nonexistent/a", "/nonexistent/b", &v, &v).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn document_line_format() {
        let docs = parse_documents("d1\ten\tart,science\thello world ||| good day\n").unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].sentences.len(), 2);
        assert_eq!(docs[0].labels.len(), 2);
        assert_eq!(docs[0].language, "en");

        let err = parse_documents("ok\ten\ta\tx\nd1\ten\tx y\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));

        let docs = parse_documents("d2\tde\t\tguten tag").unwrap();
        assert!(docs[0].labels.is_empty());
    }

    #[test]
    fn empty_sentences_and_documents_dropped() {
        let docs = parse_documents("d1\ten\ta\t  ||| x\nd2\ten\ta\t   \n").unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].sentences, vec![vec!["x".to_string()]]);
    }

    #[test]
    fn documents_round_trip_through_format() {
        let text = "d1\ten\tart,science\thello world ||| good day\nd2\tde\t\tguten tag\n";
        let docs = parse_documents(text).unwrap();
        assert_eq!(format_documents(&docs), text);
    }

    fn labelled(sets: &[&[&str]]) -> Vec<TextDocument> {
        sets.iter()
            .enumerate()
            .map(|(i, labels)| TextDocument {
                id: format!("d{i}"),
                language: "en".into(),
                labels: labels.iter().map(|s| s.to_string()).collect(),
                sentences: vec![vec!["x".into()]],
            })
            .collect()
    }

    #[test]
    fn top_labels_by_frequency_then_name() {
        let docs = labelled(&[&["a", "b", "c"], &["a", "b"], &["a"]]);
        let top = select_top_labels(&docs, 2).unwrap();
        assert_eq!(top.labels, ["a", "b"].iter().map(|s| s.to_string()).collect());
        assert!(!top.underfull);

        let docs = labelled(&[&["b", "a"], &["a", "b"]]);
        let top = select_top_labels(&docs, 1).unwrap();
        assert_eq!(top.labels.into_iter().collect::<Vec<_>>(), vec!["a"]);

        let docs = labelled(&[&["a"]]);
        let top = select_top_labels(&docs, 15).unwrap();
        assert_eq!(top.labels.len(), 1);
        assert!(top.underfull);

        assert!(select_top_labels(&docs, 0).is_err());
    }

    fn toy_corpus(n: usize) -> Vec<ParallelPair> {
        (0..n)
            .map(|i| ParallelPair {
                source: Sentence::new(vec![i as u32]).unwrap(),
                target: Sentence::new(vec![i as u32]).unwrap(),
                index: i,
            })
            .collect()
    }

    #[test]
    fn noise_excludes_positive() {
        let corpus = toy_corpus(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let noise = sample_noise(&corpus, 2, 3, &mut rng).unwrap();
            assert_eq!(noise.len(), 3);
            assert!(noise.iter().all(|n| n.source_index != 2 && n.source_index < 5));
        }
    }

    #[test]
    fn noise_is_deterministic() {
        let corpus = toy_corpus(10);
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            sample_noise(&corpus, 0, 8, &mut rng)
                .unwrap()
                .iter()
                .map(|n| n.source_index)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn noise_needs_two_items() {
        let corpus = toy_corpus(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_noise(&corpus, 0, 1, &mut rng),
            Err(Error::CannotSample(1))
        ));
    }

    #[test]
    fn corpus_from_documents() {
        let v = vocab_of("a b c d");
        let src = parse_documents("x\ten\t\ta b ||| c\ny\ten\t\td\n").unwrap();
        let tgt = parse_documents("y\tde\t\tc\nx\tde\t\td ||| a\n").unwrap();
        let src: Vec<_> = src.iter().filter_map(|d| d.to_ids(&v)).collect();
        let tgt: Vec<_> = tgt.iter().filter_map(|d| d.to_ids(&v)).collect();
        let corpus = ParallelCorpus::from_documents(&src, &tgt).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.documents, Some(vec![0..2, 2..3]));
        assert_eq!(corpus.target_lang, "de");

        let bad = parse_documents("x\tde\t\td\n").unwrap();
        let bad: Vec<_> = bad.iter().filter_map(|d| d.to_ids(&v)).collect();
        assert!(matches!(
            ParallelCorpus::from_documents(&src, &bad),
            Err(Error::Alignment(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tokenize_is_idempotent(s in "\\PC{0,40}") {
                let once = tokenize(&s);
                prop_assert_eq!(tokenize(&once.join(" ")), once);
            }

            #[test]
            fn parallel_length_counts_nonempty_pairs(
                lines in proptest::collection::vec(("[a-c ]{0,6}", "[a-c ]{0,6}"), 0..20)
            ) {
                let a: String = lines.iter().map(|(x, _)| format!("{x}\n")).collect();
                let b: String = lines.iter().map(|(_, y)| format!("{y}\n")).collect();
                let va = vocab_of(&a);
                let vb = vocab_of(&b);
                let expected = lines
                    .iter()
                    .filter(|(x, y)| !x.trim().is_empty() && !y.trim().is_empty())
                    .count();
                prop_assert_eq!(parse_parallel(&a, &b, &va, &vb).unwrap().len(), expected);
            }

            #[test]
            fn top_labels_dominate_excluded(
                sets in proptest::collection::vec(proptest::collection::btree_set("[a-f]", 0..4), 1..30),
                n in 1usize..5,
            ) {
                let docs: Vec<TextDocument> = sets.iter().enumerate().map(|(i, s)| TextDocument {
                    id: i.to_string(),
                    language: "en".into(),
                    labels: s.clone(),
                    sentences: vec![vec!["x".into()]],
                }).collect();
                let top = select_top_labels(&docs, n).unwrap();
                let freq = |l: &str| sets.iter().filter(|s| s.contains(l)).count();
                let all: BTreeSet<&String> = sets.iter().flatten().collect();
                for kept in &top.labels {
                    for other in all.iter().filter(|l| !top.labels.contains(**l)) {
                        prop_assert!(freq(kept) >= freq(other));
                    }
                }
            }
        }
    }
}
