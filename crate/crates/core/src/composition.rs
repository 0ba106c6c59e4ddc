//! Compositional vector models (CVMs).
//!
//! `Add` sums its inputs. `Bi` sums `tanh(x[i-1] + x[i])` over positions
//! `i = 1..=n`, where `x[0]` is a zero vector, so an n-input sequence always
//! yields n bigram terms. Both are used for words -> sentence and again for
//! sentences -> document.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CompositionKind {
    #[default]
    Add,
    Bi,
}

impl fmt::Display for CompositionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CompositionKind::Add => "add",
            CompositionKind::Bi => "bi",
        })
    }
}

impl FromStr for CompositionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "add" => Ok(CompositionKind::Add),
            "bi" => Ok(CompositionKind::Bi),
            other => Err(Error::Config(format!("unknown composition {other:?} (add|bi)"))),
        }
    }
}

/// Output of a forward pass plus what backprop needs.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositionResult {
    pub kind: CompositionKind,
    pub output: Vec<f64>,
    /// `Bi` only: the n tanh outputs, row-major `n x d`. Empty for `Add`.
    pub activations: Vec<f64>,
    pub n_inputs: usize,
}

fn check_inputs<V: AsRef<[f64]>>(inputs: &[V]) -> Result<usize> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Composition("cannot compose an empty sequence".into()))?;
    let dim = first.as_ref().len();
    if inputs.iter().any(|v| v.as_ref().len() != dim) {
        return Err(Error::Composition("inputs differ in dimensionality".into()));
    }
    Ok(dim)
}

pub fn compose_add<V: AsRef<[f64]>>(inputs: &[V]) -> Result<CompositionResult> {
    let dim = check_inputs(inputs)?;
    let mut output = vec![0.0; dim];
    for v in inputs {
        for (o, x) in output.iter_mut().zip(v.as_ref()) {
            *o += x;
        }
    }
    Ok(CompositionResult {
        kind: CompositionKind::Add,
        output,
        activations: Vec::new(),
        n_inputs: inputs.len(),
    })
}

pub fn compose_bi<V: AsRef<[f64]>>(inputs: &[V]) -> Result<CompositionResult> {
    let dim = check_inputs(inputs)?;
    let mut output = vec![0.0; dim];
    let mut activations = Vec::with_capacity(inputs.len() * dim);
    let zero = vec![0.0; dim];
    let mut prev: &[f64] = &zero;
    for v in inputs {
        let cur = v.as_ref();
        for j in 0..dim {
            let t = (prev[j] + cur[j]).tanh();
            activations.push(t);
            output[j] += t;
        }
        prev = cur;
    }
    Ok(CompositionResult {
        kind: CompositionKind::Bi,
        output,
        activations,
        n_inputs: inputs.len(),
    })
}

pub fn compose<V: AsRef<[f64]>>(kind: CompositionKind, inputs: &[V]) -> Result<CompositionResult> {
    match kind {
        CompositionKind::Add => compose_add(inputs),
        CompositionKind::Bi => compose_bi(inputs),
    }
}

/// Second-stage CVM over sentence vectors, same family as the first stage.
pub fn compose_document<V: AsRef<[f64]>>(
    sentence_vectors: &[V],
    kind: CompositionKind,
) -> Result<CompositionResult> {
    compose(kind, sentence_vectors)
}

/// Every input of a sum receives the output gradient unchanged.
pub fn backprop_add(grad_output: &[f64], n_inputs: usize) -> Vec<Vec<f64>> {
    vec![grad_output.to_vec(); n_inputs]
}

/// Input `x[j]` collects `grad ⊙ (1 - t²)` from bigram `j` (where it is the
/// right element) and bigram `j + 1` (where it is the left element).
pub fn backprop_bi(grad_output: &[f64], result: &CompositionResult, n_inputs: usize) -> Result<Vec<Vec<f64>>> {
    let dim = grad_output.len();
    if result.kind != CompositionKind::Bi
        || result.n_inputs != n_inputs
        || result.activations.len() != n_inputs * dim
    {
        return Err(Error::Contract(format!(
            "bigram backprop for {n_inputs} inputs of width {dim} does not match the saved forward pass"
        )));
    }
    // delta[i] = dL/d(pre-activation of bigram i)
    let delta: Vec<f64> = result
        .activations
        .iter()
        .enumerate()
        .map(|(idx, t)| grad_output[idx % dim] * (1.0 - t * t))
        .collect();
    let mut grads = Vec::with_capacity(n_inputs);
    for j in 0..n_inputs {
        let mut g = delta[j * dim..(j + 1) * dim].to_vec();
        if j + 1 < n_inputs {
            for (gi, d) in g.iter_mut().zip(&delta[(j + 1) * dim..(j + 2) * dim]) {
                *gi += d;
            }
        }
        grads.push(g);
    }
    Ok(grads)
}

/// Dispatches on `result.kind`.
pub fn backprop(grad_output: &[f64], result: &CompositionResult) -> Result<Vec<Vec<f64>>> {
    match result.kind {
        CompositionKind::Add => Ok(backprop_add(grad_output, result.n_inputs)),
        CompositionKind::Bi => backprop_bi(grad_output, result, result.n_inputs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_examples() {
        assert_eq!(compose_add(&[[1.0, 2.0], [3.0, 4.0]]).unwrap().output, vec![4.0, 6.0]);
        assert_eq!(compose_add(&[[0.0, 0.0]]).unwrap().output, vec![0.0, 0.0]);
        assert!(matches!(
            compose_add::<Vec<f64>>(&[]),
            Err(Error::Composition(_))
        ));
        assert!(compose_add(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn bi_examples() {
        assert_eq!(compose_bi(&[[0.0]]).unwrap().output, vec![0.0]);
        // tanh(0.5) and tanh(1.0) to 15 significant digits (mpmath, 50 digits)
        let r = compose_bi(&[[0.5]]).unwrap();
        assert!((r.output[0] - 0.462117157260010).abs() < 1e-14);
        let r = compose_bi(&[[1.0], [-1.0]]).unwrap();
        assert!((r.output[0] - 0.761594155955765).abs() < 1e-14);
        assert!(compose_bi::<[f64; 1]>(&[]).is_err());
    }

    #[test]
    fn bi_is_order_sensitive_add_is_not() {
        let ab = compose_bi(&[[1.0], [-1.0]]).unwrap().output[0];
        let ba = compose_bi(&[[-1.0], [1.0]]).unwrap().output[0];
        assert_ne!(ab, ba);
        let ab = compose_add(&[[1.0], [-1.0]]).unwrap().output;
        let ba = compose_add(&[[-1.0], [1.0]]).unwrap().output;
        assert_eq!(ab, ba);
    }

    #[test]
    fn add_backprop_copies_gradient() {
        assert_eq!(backprop_add(&[1.0, 1.0], 3), vec![vec![1.0, 1.0]; 3]);
        assert_eq!(backprop_add(&[0.0, 0.0], 2), vec![vec![0.0, 0.0]; 2]);
    }

    #[test]
    fn bi_backprop_examples() {
        let r = compose_bi(&[[0.0]]).unwrap();
        assert_eq!(backprop_bi(&[1.0], &r, 1).unwrap(), vec![vec![1.0]]);

        // 1 - tanh(1)^2 = 0.419974341614026 (mpmath)
        let r = compose_bi(&[[1.0], [-1.0]]).unwrap();
        let g = backprop_bi(&[1.0], &r, 2).unwrap();
        assert!((g[0][0] - 1.419974341614026).abs() < 1e-14);
        assert!((g[1][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bi_backprop_rejects_mismatch() {
        let r = compose_bi(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(backprop_bi(&[1.0], &r, 3), Err(Error::Contract(_))));
        let add = compose_add(&[[1.0], [2.0]]).unwrap();
        assert!(backprop_bi(&[1.0], &add, 2).is_err());
    }

    #[test]
    fn document_stage_uses_same_family() {
        let r = compose_document(&[[1.0, 1.0], [3.0, 3.0]], CompositionKind::Add).unwrap();
        assert_eq!(r.output, vec![4.0, 4.0]);
        let r = compose_document(&[[0.0]], CompositionKind::Bi).unwrap();
        assert_eq!(r.output, vec![0.0]);
    }

    #[test]
    fn kind_parses() {
        assert_eq!("add".parse::<CompositionKind>().unwrap(), CompositionKind::Add);
        assert_eq!("BI".parse::<CompositionKind>().unwrap(), CompositionKind::Bi);
        assert!("tree".parse::<CompositionKind>().is_err());
        assert_eq!(CompositionKind::Bi.to_string(), "bi");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn seq() -> impl Strategy<Value = Vec<Vec<f64>>> {
            (1usize..5).prop_flat_map(|d| {
                proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, d), 1..7)
            })
        }

        fn central_diff<F: Fn(&[Vec<f64>]) -> f64>(f: F, x: &[Vec<f64>], i: usize, j: usize) -> f64 {
            let h = 1e-5;
            let mut plus = x.to_vec();
            plus[i][j] += h;
            let mut minus = x.to_vec();
            minus[i][j] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        }

        fn rel_err(a: f64, b: f64) -> f64 {
            (a - b).abs() / a.abs().max(b.abs()).max(1.0)
        }

        proptest! {
            #[test]
            fn add_is_permutation_invariant(mut xs in seq()) {
                let before = compose_add(&xs).unwrap().output;
                xs.reverse();
                let after = compose_add(&xs).unwrap().output;
                for (a, b) in before.iter().zip(&after) {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                }
            }

            #[test]
            fn bi_output_strictly_bounded(xs in seq()) {
                let n = xs.len() as f64;
                for v in compose_bi(&xs).unwrap().output {
                    prop_assert!(v.abs() < n);
                }
            }

            #[test]
            fn analytic_matches_finite_differences(xs in seq(), w in proptest::collection::vec(-2.0f64..2.0, 5)) {
                for kind in [CompositionKind::Add, CompositionKind::Bi] {
                    let dim = xs[0].len();
                    let weights = &w[..dim];
                    // scalar probe: L = w · compose(x)
                    let loss = |x: &[Vec<f64>]| -> f64 {
                        compose(kind, x).unwrap().output.iter().zip(weights).map(|(o, w)| o * w).sum()
                    };
                    let r = compose(kind, &xs).unwrap();
                    let g = backprop(weights, &r).unwrap();
                    for (i, gi) in g.iter().enumerate() {
                        for (j, &gij) in gi.iter().enumerate() {
                            let fd = central_diff(loss, &xs, i, j);
                            prop_assert!(rel_err(gij, fd) < 1e-6, "{kind} {i} {j}: {gij} vs {fd}");
                        }
                    }
                }
            }
        }
    }
}
