//! Bilingual energy, margin hinge and the contrastive objective, with exact
//! sparse gradients for every embedding a training example touches.
//!
//! For a positive pair `(a, b)` and noise sentence `n` the per-noise loss is
//! `max(0, m + |f(a) - g(b)|² - |f(a) - g(n)|²)`. Gradients are with respect
//! to the loss (descent subtracts them). L2 regularisation is not part of the
//! loss here; the optimiser adds it for touched rows.

use std::collections::BTreeMap;

use crate::composition::{backprop, compose, compose_document, CompositionKind, CompositionResult};
use crate::corpus::{NoiseSample, ParallelPair, Sentence};
use crate::embeddings::{EmbeddingTable, ModelBundle};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Per-language map from token id to accumulated partial derivatives.
/// An absent key means a zero gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseGradient {
    rows: BTreeMap<String, BTreeMap<TokenId, Vec<f64>>>,
}

impl SparseGradient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.values().all(BTreeMap::is_empty)
    }

    /// Number of touched `(language, id)` rows.
    pub fn len(&self) -> usize {
        self.rows.values().map(BTreeMap::len).sum()
    }

    pub fn get(&self, language: &str, id: TokenId) -> Option<&[f64]> {
        self.rows.get(language)?.get(&id).map(Vec::as_slice)
    }

    pub fn add(&mut self, language: &str, id: TokenId, grad: &[f64]) {
        if !self.rows.contains_key(language) {
            self.rows.insert(language.to_string(), BTreeMap::new());
        }
        let lang = self.rows.get_mut(language).expect("inserted above");
        match lang.get_mut(&id) {
            Some(row) => {
                for (r, g) in row.iter_mut().zip(grad) {
                    *r += g;
                }
            }
            None => {
                lang.insert(id, grad.to_vec());
            }
        }
    }

    pub fn merge(&mut self, other: &SparseGradient) {
        for (language, id, grad) in other.iter() {
            self.add(language, id, grad);
        }
    }

    /// Rows in `(language, id)` order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, TokenId, &[f64])> {
        self.rows.iter().flat_map(|(lang, rows)| {
            rows.iter()
                .map(move |(id, g)| (lang.as_str(), *id, g.as_slice()))
        })
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|(_, _, g)| g.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub hinge_total: f64,
    pub active_noise_count: usize,
    /// Number of (positive, noise) comparisons evaluated.
    pub comparisons: usize,
    /// Always 0 here: regularisation is applied by the optimiser.
    pub regularizer: f64,
}

impl LossBreakdown {
    pub fn merge(&mut self, other: &LossBreakdown) {
        self.hinge_total += other.hinge_total;
        self.active_noise_count += other.active_noise_count;
        self.comparisons += other.comparisons;
        self.regularizer += other.regularizer;
    }

    pub fn total(&self) -> f64 {
        self.hinge_total + self.regularizer
    }
}

/// Squared Euclidean distance.
pub fn energy(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "energy of vectors with widths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(sq_dist(a, b))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn hinge(margin: f64, e_pos: f64, e_neg: f64) -> f64 {
    (margin + e_pos - e_neg).max(0.0)
}

/// An aligned document pair given as sentence lists.
#[derive(Debug, Clone, Copy)]
pub struct DocPair<'a> {
    pub source: &'a [Sentence],
    pub target: &'a [Sentence],
}

/// Fixed inputs of the objective: the parameters (read-only), the CVM
/// family, the margin and which languages play source and target.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub bundle: &'a ModelBundle,
    pub kind: CompositionKind,
    pub margin: f64,
    pub source_lang: &'a str,
    pub target_lang: &'a str,
}

struct ComposedSentence<'s> {
    sentence: &'s Sentence,
    result: CompositionResult,
}

struct ComposedDoc<'s> {
    sentences: Vec<ComposedSentence<'s>>,
    doc: CompositionResult,
}

fn gather<'t>(table: &'t EmbeddingTable, sentence: &Sentence) -> Result<Vec<&'t [f64]>> {
    sentence
        .tokens()
        .iter()
        .map(|&id| {
            table.get_row(id).ok_or_else(|| Error::UnknownId {
                language: table.language().to_string(),
                id,
                size: table.rows(),
            })
        })
        .collect()
}

/// `2 (x - y)`
fn twice_diff(x: &[f64], y: &[f64]) -> Vec<f64> {
    x.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect()
}

fn axpy(acc: &mut [f64], scale: f64, v: &[f64]) {
    for (a, x) in acc.iter_mut().zip(v) {
        *a += scale * x;
    }
}

impl<'a> Objective<'a> {
    fn compose_sentence<'s>(&self, language: &str, sentence: &'s Sentence) -> Result<ComposedSentence<'s>> {
        let table = self.bundle.table(language)?;
        let rows = gather(table, sentence)?;
        Ok(ComposedSentence {
            sentence,
            result: compose(self.kind, &rows)?,
        })
    }

    fn compose_doc<'s>(&self, language: &str, sentences: &'s [Sentence]) -> Result<ComposedDoc<'s>> {
        let sentences = sentences
            .iter()
            .map(|s| self.compose_sentence(language, s))
            .collect::<Result<Vec<_>>>()?;
        let vectors: Vec<&[f64]> = sentences.iter().map(|s| s.result.output.as_slice()).collect();
        let doc = compose_document(&vectors, self.kind)?;
        Ok(ComposedDoc { sentences, doc })
    }

    fn scatter_sentence(
        &self,
        grads: &mut SparseGradient,
        language: &str,
        composed: &ComposedSentence<'_>,
        grad_output: &[f64],
    ) -> Result<()> {
        let inputs = backprop(grad_output, &composed.result)?;
        for (&id, g) in composed.sentence.tokens().iter().zip(&inputs) {
            grads.add(language, id, g);
        }
        Ok(())
    }

    fn scatter_doc(
        &self,
        grads: &mut SparseGradient,
        language: &str,
        composed: &ComposedDoc<'_>,
        grad_output: &[f64],
    ) -> Result<()> {
        let per_sentence = backprop(grad_output, &composed.doc)?;
        for (s, g) in composed.sentences.iter().zip(&per_sentence) {
            self.scatter_sentence(grads, language, s, g)?;
        }
        Ok(())
    }

    /// Contrastive hinge loss of one aligned pair against its noise samples,
    /// with gradients through both compositions.
    pub fn pair_loss_and_grads(
        &self,
        pair: &ParallelPair,
        noise: &[NoiseSample<'_>],
    ) -> Result<(LossBreakdown, SparseGradient)> {
        let noise: Vec<&Sentence> = noise.iter().map(|n| n.sentence).collect();
        self.sentence_loss(&pair.source, &pair.target, &noise)
    }

    pub fn sentence_loss(
        &self,
        source: &Sentence,
        target: &Sentence,
        noise: &[&Sentence],
    ) -> Result<(LossBreakdown, SparseGradient)> {
        let fa = self.compose_sentence(self.source_lang, source)?;
        let gb = self.compose_sentence(self.target_lang, target)?;
        let noise = noise
            .iter()
            .map(|n| self.compose_sentence(self.target_lang, n))
            .collect::<Result<Vec<_>>>()?;

        let fa_out = &fa.result.output;
        let gb_out = &gb.result.output;
        let e_pos = energy(fa_out, gb_out)?;
        let pos_diff = twice_diff(fa_out, gb_out);
        let dim = fa_out.len();

        let mut loss = LossBreakdown {
            comparisons: noise.len(),
            ..LossBreakdown::default()
        };
        let mut grads = SparseGradient::new();
        let mut grad_fa = vec![0.0; dim];
        let mut grad_gb = vec![0.0; dim];
        for n in &noise {
            let gn_out = &n.result.output;
            let e_neg = energy(fa_out, gn_out)?;
            let h = self.margin + e_pos - e_neg;
            if h <= 0.0 {
                continue;
            }
            loss.hinge_total += h;
            loss.active_noise_count += 1;
            let neg_diff = twice_diff(fa_out, gn_out);
            // d/df(a) = 2(f(a)-g(b)) - 2(f(a)-g(n))
            axpy(&mut grad_fa, 1.0, &pos_diff);
            axpy(&mut grad_fa, -1.0, &neg_diff);
            // d/dg(b) = -2(f(a)-g(b))
            axpy(&mut grad_gb, -1.0, &pos_diff);
            // d/dg(n) = +2(f(a)-g(n))
            self.scatter_sentence(&mut grads, self.target_lang, n, &neg_diff)?;
        }
        if loss.active_noise_count > 0 {
            self.scatter_sentence(&mut grads, self.source_lang, &fa, &grad_fa)?;
            self.scatter_sentence(&mut grads, self.target_lang, &gb, &grad_gb)?;
        }
        Ok((loss, grads))
    }

    /// Document-level contrastive loss through both CVM stages. With
    /// `sentence_noise`, the aligned sentence pairs also contribute their own
    /// pair losses (one noise list per sentence pair), equally weighted.
    pub fn doc_loss_and_grads(
        &self,
        pair: DocPair<'_>,
        noise_docs: &[&[Sentence]],
        sentence_noise: Option<&[Vec<&Sentence>]>,
    ) -> Result<(LossBreakdown, SparseGradient)> {
        if let Some(sn) = sentence_noise {
            if pair.source.len() != pair.target.len() {
                return Err(Error::Alignment(format!(
                    "sentence signal needs aligned documents, got {} and {} sentences",
                    pair.source.len(),
                    pair.target.len()
                )));
            }
            if sn.len() != pair.source.len() {
                return Err(Error::Contract(format!(
                    "{} sentence noise lists for {} sentence pairs",
                    sn.len(),
                    pair.source.len()
                )));
            }
        }
        let fa = self.compose_doc(self.source_lang, pair.source)?;
        let gb = self.compose_doc(self.target_lang, pair.target)?;
        let noise = noise_docs
            .iter()
            .map(|d| self.compose_doc(self.target_lang, d))
            .collect::<Result<Vec<_>>>()?;

        let fa_out = &fa.doc.output;
        let gb_out = &gb.doc.output;
        let e_pos = energy(fa_out, gb_out)?;
        let pos_diff = twice_diff(fa_out, gb_out);
        let dim = fa_out.len();

        let mut loss = LossBreakdown {
            comparisons: noise.len(),
            ..LossBreakdown::default()
        };
        let mut grads = SparseGradient::new();
        let mut grad_fa = vec![0.0; dim];
        let mut grad_gb = vec![0.0; dim];
        for n in &noise {
            let gn_out = &n.doc.output;
            let e_neg = energy(fa_out, gn_out)?;
            let h = self.margin + e_pos - e_neg;
            if h <= 0.0 {
                continue;
            }
            loss.hinge_total += h;
            loss.active_noise_count += 1;
            let neg_diff = twice_diff(fa_out, gn_out);
            axpy(&mut grad_fa, 1.0, &pos_diff);
            axpy(&mut grad_fa, -1.0, &neg_diff);
            axpy(&mut grad_gb, -1.0, &pos_diff);
            self.scatter_doc(&mut grads, self.target_lang, n, &neg_diff)?;
        }
        if loss.active_noise_count > 0 {
            self.scatter_doc(&mut grads, self.source_lang, &fa, &grad_fa)?;
            self.scatter_doc(&mut grads, self.target_lang, &gb, &grad_gb)?;
        }

        if let Some(sentence_noise) = sentence_noise {
            for ((s, t), noise) in pair.source.iter().zip(pair.target).zip(sentence_noise) {
                let (l, g) = self.sentence_loss(s, t, noise)?;
                loss.merge(&l);
                grads.merge(&g);
            }
        }
        Ok((loss, grads))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::EmbeddingTable;
    use crate::vocab::Vocabulary;

    fn s(ids: &[u32]) -> Sentence {
        Sentence::new(ids.to_vec()).unwrap()
    }

    fn one_dim_bundle(en: &[f64], de: &[f64]) -> ModelBundle {
        let mut b = ModelBundle::new(1, CompositionKind::Add);
        let words = |n: usize, p: &str| Vocabulary::from_words((0..n).map(|i| format!("{p}{i}"))).unwrap();
        b.insert(words(en.len(), "e"), EmbeddingTable::from_rows("en", 1, en.to_vec()).unwrap())
            .unwrap();
        b.insert(words(de.len(), "d"), EmbeddingTable::from_rows("de", 1, de.to_vec()).unwrap())
            .unwrap();
        b
    }

    fn objective(bundle: &ModelBundle, kind: CompositionKind, margin: f64) -> Objective<'_> {
        Objective {
            bundle,
            kind,
            margin,
            source_lang: "en",
            target_lang: "de",
        }
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert_eq!(energy(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 0.0);
        assert!(matches!(energy(&[1.0], &[1.0, 2.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn hinge_examples() {
        assert_eq!(hinge(1.0, 0.5, 2.0), 0.0);
        assert_eq!(hinge(1.0, 0.5, 1.0), 0.5);
        assert_eq!(hinge(1.0, 0.0, 0.0), 1.0);
    }

    #[test]
    fn hand_computed_single_word_case() {
        // en: x=0 ; de: y=1 (id 0), z=0 (id 1)
        let b = one_dim_bundle(&[0.0], &[1.0, 0.0]);
        let obj = objective(&b, CompositionKind::Add, 1.0);
        let (a, t, n) = (s(&[0]), s(&[0]), s(&[1]));
        let (loss, grads) = obj.sentence_loss(&a, &t, &[&n]).unwrap();
        assert_eq!(loss.hinge_total, 2.0);
        assert_eq!(loss.active_noise_count, 1);
        assert_eq!(grads.get("en", 0), Some(&[-2.0][..]));
        assert_eq!(grads.get("de", 0), Some(&[2.0][..]));
        assert_eq!(grads.get("de", 1), Some(&[0.0][..]));
    }

    #[test]
    fn inactive_hinge_gives_empty_gradient() {
        let b = one_dim_bundle(&[0.0], &[0.0, 10.0]);
        let obj = objective(&b, CompositionKind::Add, 1.0);
        let (loss, grads) = obj.sentence_loss(&s(&[0]), &s(&[0]), &[&s(&[1])]).unwrap();
        assert_eq!(loss.hinge_total, 0.0);
        assert_eq!(loss.active_noise_count, 0);
        assert_eq!(loss.comparisons, 1);
        assert!(grads.is_empty());
    }

    #[test]
    fn unknown_id_is_reported() {
        let b = one_dim_bundle(&[0.0], &[0.0, 1.0]);
        let obj = objective(&b, CompositionKind::Add, 1.0);
        assert!(matches!(
            obj.sentence_loss(&s(&[3]), &s(&[0]), &[&s(&[1])]),
            Err(Error::UnknownId { .. })
        ));
    }

    #[test]
    fn doc_inactive_without_sentence_signal() {
        let b = one_dim_bundle(&[0.0, 0.0], &[0.0, 50.0]);
        let obj = objective(&b, CompositionKind::Add, 1.0);
        let src = [s(&[0]), s(&[1])];
        let tgt = [s(&[0]), s(&[0])];
        let noise = [s(&[1]), s(&[1])];
        let (loss, grads) = obj
            .doc_loss_and_grads(DocPair { source: &src, target: &tgt }, &[&noise], None)
            .unwrap();
        assert_eq!(loss.hinge_total, 0.0);
        assert!(grads.is_empty());
    }

    #[test]
    fn doc_sentence_signal_requires_alignment() {
        let b = one_dim_bundle(&[0.0, 0.0], &[0.0, 1.0]);
        let obj = objective(&b, CompositionKind::Add, 1.0);
        let src = [s(&[0]), s(&[1])];
        let tgt = [s(&[0])];
        let noise_lists: Vec<Vec<&Sentence>> = vec![vec![], vec![]];
        let err = obj
            .doc_loss_and_grads(DocPair { source: &src, target: &tgt }, &[], Some(&noise_lists))
            .unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }

    #[test]
    fn single_sentence_add_document_reduces_to_pair() {
        let b = one_dim_bundle(&[0.3, -0.7], &[1.1, 0.2, -0.4]);
        let obj = objective(&b, CompositionKind::Add, 2.0);
        let src = [s(&[0, 1])];
        let tgt = [s(&[0, 2])];
        let n1 = [s(&[1])];
        let n2 = [s(&[2, 2])];
        let (dl, dg) = obj
            .doc_loss_and_grads(DocPair { source: &src, target: &tgt }, &[&n1, &n2], None)
            .unwrap();
        let (pl, pg) = obj.sentence_loss(&src[0], &tgt[0], &[&n1[0], &n2[0]]).unwrap();
        assert!((dl.hinge_total - pl.hinge_total).abs() < 1e-12);
        assert_eq!(dl.active_noise_count, pl.active_noise_count);
        assert_eq!(dg.len(), pg.len());
        for (lang, id, g) in pg.iter() {
            let other = dg.get(lang, id).unwrap();
            for (x, y) in g.iter().zip(other) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_gradient_accumulates() {
        let mut g = SparseGradient::new();
        g.add("en", 3, &[1.0, 2.0]);
        g.add("en", 3, &[0.5, 0.5]);
        g.add("de", 1, &[1.0, 1.0]);
        assert_eq!(g.get("en", 3), Some(&[1.5, 2.5][..]));
        assert_eq!(g.len(), 2);
        let order: Vec<_> = g.iter().map(|(l, i, _)| (l.to_string(), i)).collect();
        assert_eq!(order, vec![("de".to_string(), 1), ("en".to_string(), 3)]);
        let mut h = SparseGradient::new();
        h.merge(&g);
        h.merge(&g);
        assert_eq!(h.get("de", 1), Some(&[2.0, 2.0][..]));
        assert!(h.is_finite());
    }
}
