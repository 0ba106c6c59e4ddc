//! Per-language embedding tables, the bundle that groups them, and the plain
//! text embedding format (`V d` header followed by `word v1 .. vd` rows).
//!
//! Values are written with Rust's shortest round-trip `f64` formatting, so a
//! file read back and written again is byte-identical.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::composition::CompositionKind;
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

/// Variance of the Gaussian used to initialise every table entry.
pub const INIT_VARIANCE: f64 = 0.1;

/// A `rows x dim` row-major matrix of word vectors for one language.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    language: String,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(language: impl Into<String>, rows: usize, dim: usize) -> Self {
        EmbeddingTable {
            language: language.into(),
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    /// Wraps row-major data. Fails if the length is not a multiple of `dim`
    /// or any value is non-finite.
    pub fn from_rows(language: impl Into<String>, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Contract("embedding dimensionality must be >= 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Contract(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("embedding values must be finite".into()));
        }
        Ok(EmbeddingTable {
            language: language.into(),
            dim,
            data,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim.max(1)
    }

    pub fn row(&self, id: TokenId) -> &[f64] {
        let start = id as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn row_mut(&mut self, id: TokenId) -> &mut [f64] {
        let start = id as usize * self.dim;
        &mut self.data[start..start + self.dim]
    }

    pub fn get_row(&self, id: TokenId) -> Option<&[f64]> {
        ((id as usize) < self.rows()).then(|| self.row(id))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// Draws every entry i.i.d. from `Normal(0, 0.1)`.
///
/// Entries come from `rand_distr::Normal` (ziggurat sampling) fed by a
/// `ChaCha8Rng` seeded with `seed`, in row-major order.
pub fn init_table(language: impl Into<String>, rows: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_VARIANCE.sqrt()).expect("valid normal parameters");
    let data = (0..rows * dim).map(|_| normal.sample(&mut rng)).collect();
    EmbeddingTable {
        language: language.into(),
        dim,
        data,
    }
}

/// Stable per-language seed so adding a language does not reshuffle the others.
pub fn language_seed(seed: u64, language: &str) -> u64 {
    seed ^ fnv1a(language.as_bytes())
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Vocabulary and table for a single language.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageEmbeddings {
    pub vocab: Vocabulary,
    pub table: EmbeddingTable,
}

/// All per-language tables of one model. Every table shares `dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    dim: usize,
    kind: CompositionKind,
    languages: BTreeMap<String, LanguageEmbeddings>,
}

impl ModelBundle {
    pub fn new(dim: usize, kind: CompositionKind) -> Self {
        ModelBundle {
            dim,
            kind,
            languages: BTreeMap::new(),
        }
    }

    /// Adds (or replaces) a language. Its table must match the bundle
    /// dimensionality and have one row per vocabulary entry.
    pub fn insert(&mut self, vocab: Vocabulary, table: EmbeddingTable) -> Result<()> {
        if table.dim() != self.dim {
            return Err(Error::Config(format!(
                "table for {:?} has d={} but the bundle uses d={}",
                table.language(),
                table.dim(),
                self.dim
            )));
        }
        if table.rows() != vocab.len() {
            return Err(Error::Contract(format!(
                "table for {:?} has {} rows for {} vocabulary entries",
                table.language(),
                table.rows(),
                vocab.len()
            )));
        }
        self.languages
            .insert(table.language().to_string(), LanguageEmbeddings { vocab, table });
        Ok(())
    }

    /// Builds a bundle with freshly initialised tables for each vocabulary.
    pub fn initialise<'a, I>(dim: usize, kind: CompositionKind, vocabs: I, seed: u64) -> Self
    where
        I: IntoIterator<Item = (&'a str, Vocabulary)>,
    {
        let mut bundle = ModelBundle::new(dim, kind);
        for (language, vocab) in vocabs {
            let table = init_table(language, vocab.len(), dim, language_seed(seed, language));
            bundle
                .insert(vocab, table)
                .expect("freshly initialised table matches bundle");
        }
        bundle
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> CompositionKind {
        self.kind
    }

    pub fn set_kind(&mut self, kind: CompositionKind) {
        self.kind = kind;
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.languages.keys().map(String::as_str)
    }

    pub fn language(&self, code: &str) -> Result<&LanguageEmbeddings> {
        self.languages
            .get(code)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn language_mut(&mut self, code: &str) -> Result<&mut LanguageEmbeddings> {
        self.languages
            .get_mut(code)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn table(&self, code: &str) -> Result<&EmbeddingTable> {
        self.language(code).map(|l| &l.table)
    }

    pub fn table_mut(&mut self, code: &str) -> Result<&mut EmbeddingTable> {
        self.language_mut(code).map(|l| &mut l.table)
    }

    pub fn vocab(&self, code: &str) -> Result<&Vocabulary> {
        self.language(code).map(|l| &l.vocab)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LanguageEmbeddings)> {
        self.languages.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Looks up the vector of `token` in `language`.
    pub fn vector(&self, language: &str, token: &str) -> Result<&[f64]> {
        let lang = self.language(language)?;
        let id = lang.vocab.get(token).ok_or_else(|| Error::UnknownToken {
            language: language.to_string(),
            token: token.to_string(),
        })?;
        Ok(lang.table.row(id))
    }
}

/// Writes `table` in the text embedding format.
pub fn write_text<W: Write>(mut out: W, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    if vocab.len() != table.rows() {
        return Err(Error::Contract(format!(
            "vocabulary has {} entries but table has {} rows",
            vocab.len(),
            table.rows()
        )));
    }
    let mut buf = String::new();
    buf.push_str(&format!("{} {}\n", table.rows(), table.dim()));
    for (id, word) in vocab.words().enumerate() {
        if word.is_empty() || word.chars().any(char::is_whitespace) {
            return Err(Error::Contract(format!(
                "word {word:?} cannot be written in the text format"
            )));
        }
        buf.push_str(word);
        for v in table.row(id as TokenId) {
            buf.push(' ');
            buf.push_str(&format_value(*v));
        }
        buf.push('\n');
    }
    out.write_all(buf.as_bytes())
        .map_err(|e| Error::io("<embedding writer>", e))
}

/// Shortest decimal that parses back to exactly `v`.
pub fn format_value(v: f64) -> String {
    // `{}` is shortest round-trip; normalise negative zero so output is canonical.
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v}")
    }
}

/// Parses the text embedding format.
pub fn parse_text(text: &str, language: &str) -> Result<(Vocabulary, EmbeddingTable)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "missing `V d` header"))?;
    let mut fields = header.split(' ');
    let (rows, dim) = match (fields.next(), fields.next(), fields.next()) {
        (Some(v), Some(d), None) => {
            let rows: usize = v
                .parse()
                .map_err(|_| Error::parse(1, format!("bad row count {v:?}")))?;
            let dim: usize = d
                .parse()
                .map_err(|_| Error::parse(1, format!("bad dimensionality {d:?}")))?;
            (rows, dim)
        }
        _ => return Err(Error::parse(1, "header must be `V d`")),
    };
    if dim == 0 {
        return Err(Error::parse(1, "dimensionality must be >= 1"));
    }

    // The header is untrusted; cap preallocation.
    let mut vocab = Vocabulary::new();
    let mut data = Vec::with_capacity(rows.saturating_mul(dim).min(1 << 20));
    for (idx, line) in lines {
        let lineno = idx + 1;
        if vocab.len() == rows {
            if line.is_empty() {
                continue;
            }
            return Err(Error::parse(lineno, format!("more than {rows} rows")));
        }
        let mut parts = line.split(' ');
        let word = parts.next().unwrap_or_default();
        if word.is_empty() {
            return Err(Error::parse(lineno, "empty word"));
        }
        if vocab.get(word).is_some() {
            return Err(Error::parse(lineno, format!("duplicate word {word:?}")));
        }
        let before = data.len();
        for part in parts {
            let v: f64 = part
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad value {part:?}")))?;
            if !v.is_finite() {
                return Err(Error::parse(lineno, format!("non-finite value {part:?}")));
            }
            data.push(v);
        }
        let got = data.len() - before;
        if got != dim {
            return Err(Error::parse(
                lineno,
                format!("row has {got} values, header says {dim}"),
            ));
        }
        vocab.insert(word);
    }
    if vocab.len() != rows {
        return Err(Error::parse(
            vocab.len() + 2,
            format!("header announces {rows} rows, found {}", vocab.len()),
        ));
    }
    let table = EmbeddingTable {
        language: language.to_string(),
        dim,
        data,
    };
    Ok((vocab, table))
}

/// Reads the text embedding format from any reader.
pub fn read_text<R: Read>(mut input: R, language: &str) -> Result<(Vocabulary, EmbeddingTable)> {
    let mut text = String::new();
    input
        .read_to_string(&mut text)
        .map_err(|e| Error::io("<embedding reader>", e))?;
    parse_text(&text, language)
}

pub fn export_table(table: &EmbeddingTable, vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_text(&mut out, vocab, table).map_err(|e| relabel_io(e, path))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads a table; the language code is taken from the file stem (`de.vec` -> `de`).
pub fn import_table(path: impl AsRef<Path>) -> Result<(Vocabulary, EmbeddingTable)> {
    let path = path.as_ref();
    let language = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default()
        .to_string();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| Error::io(path, e))?;
    parse_text(&text, &language)
}

pub(crate) fn relabel_io(err: Error, path: &Path) -> Error {
    match err {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// Ranking metric for neighbour queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    #[default]
    Cosine,
    /// Negated Euclidean distance, so larger is closer.
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetLanguages {
    All,
    Only(String),
}

impl TargetLanguages {
    pub fn parse(s: &str) -> Self {
        if s == "all" {
            TargetLanguages::All
        } else {
            TargetLanguages::Only(s.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub language: String,
    pub token: String,
    pub score: f64,
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Top-`n` words closest to `(language, token)` among the target languages.
/// The query word itself is never returned. Ties are ordered by
/// `(language, token)`.
pub fn nearest_neighbors(
    bundle: &ModelBundle,
    language: &str,
    token: &str,
    n: usize,
    target: &TargetLanguages,
    metric: Similarity,
) -> Result<Vec<Neighbor>> {
    let query = bundle.vector(language, token)?;
    let mut scored: Vec<(f64, &str, &str)> = Vec::new();
    for (code, lang) in bundle.iter() {
        if let TargetLanguages::Only(want) = target {
            if want != code {
                continue;
            }
        }
        for (id, word) in lang.vocab.words().enumerate() {
            if code == language && word == token {
                continue;
            }
            let v = lang.table.row(id as TokenId);
            let score = match metric {
                Similarity::Cosine => cosine(query, v),
                Similarity::Euclidean => -euclidean(query, v),
            };
            scored.push((score, code, word));
        }
    }
    if let TargetLanguages::Only(want) = target {
        bundle.language(want)?;
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.1.cmp(b.1))
            .then_with(|| a.2.cmp(b.2))
    });
    Ok(scored
        .into_iter()
        .take(n)
        .map(|(score, code, word)| Neighbor {
            language: code.to_string(),
            token: word.to_string(),
            score,
        })
        .collect())
}
