//! Priors over unit-label sequences: a path grammar (the finite set of observed
//! sequences) or an add-k smoothed bigram model with start/end transitions.

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;
use ndarray::Array2;
use std::collections::BTreeSet;

pub const DEFAULT_SMOOTHING: f64 = 0.01;
pub const START_TOKEN: &str = "<s>";
pub const END_TOKEN: &str = "</s>";

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceModel<F> {
    PathGrammar(PathGrammar),
    Bigram(BigramModel<F>),
}

/// Prefix-tree node of a compiled path grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrammarNode {
    /// `(vocabulary index, child node)`, sorted by label.
    pub children: Vec<(usize, usize)>,
    /// A training sequence ends here.
    pub accepting: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathGrammar {
    vocab: Vec<String>,
    sequences: Vec<Vec<String>>,
    nodes: Vec<GrammarNode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BigramModel<F> {
    vocab: Vec<String>,
    /// Rows: `START, vocab...`; columns: `vocab..., END`.
    log_probs: Array2<F>,
}

fn clean_annotations<S: AsRef<str>>(annotations: &[Vec<S>]) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for seq in annotations {
        if seq.is_empty() {
            continue;
        }
        let mut owned = Vec::with_capacity(seq.len());
        for label in seq {
            let label = label.as_ref();
            if !crate::is_valid_label(label) {
                return invalid(format!("invalid unit label `{label}`"));
            }
            owned.push(label.to_string());
        }
        out.push(owned);
    }
    if out.is_empty() {
        return invalid("need at least one non-empty unit sequence");
    }
    Ok(out)
}

fn vocabulary(sequences: &[Vec<String>]) -> Vec<String> {
    let set: BTreeSet<&String> = sequences.iter().flatten().collect();
    set.into_iter().cloned().collect()
}

fn index_of(vocab: &[String], label: &str) -> Result<usize> {
    vocab
        .binary_search_by(|v| v.as_str().cmp(label))
        .map_err(|_| Error::OutOfVocabulary(label.to_string()))
}

/// Compiles the distinct observed sequences into a prefix tree.
pub fn build_path_grammar<S: AsRef<str>>(annotations: &[Vec<S>]) -> Result<PathGrammar> {
    let mut sequences = clean_annotations(annotations)?;
    sequences.sort();
    sequences.dedup();
    let vocab = vocabulary(&sequences);
    let mut nodes = vec![GrammarNode {
        children: Vec::new(),
        accepting: false,
    }];
    for seq in &sequences {
        let mut node = 0;
        for label in seq {
            let idx = index_of(&vocab, label)?;
            node = match nodes[node].children.binary_search_by_key(&idx, |c| c.0) {
                Ok(pos) => nodes[node].children[pos].1,
                Err(pos) => {
                    let child = nodes.len();
                    nodes.push(GrammarNode {
                        children: Vec::new(),
                        accepting: false,
                    });
                    nodes[node].children.insert(pos, (idx, child));
                    child
                }
            };
        }
        nodes[node].accepting = true;
    }
    Ok(PathGrammar {
        vocab,
        sequences,
        nodes,
    })
}

impl PathGrammar {
    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Distinct accepted sequences in lexicographic order.
    pub fn sequences(&self) -> &[Vec<String>] {
        &self.sequences
    }

    /// Node 0 is the root.
    pub fn nodes(&self) -> &[GrammarNode] {
        &self.nodes
    }

    pub fn accepts<S: AsRef<str>>(&self, seq: &[S]) -> bool {
        let mut node = 0;
        for label in seq {
            let Ok(idx) = index_of(&self.vocab, label.as_ref()) else {
                return false;
            };
            match self.nodes[node].children.binary_search_by_key(&idx, |c| c.0) {
                Ok(pos) => node = self.nodes[node].children[pos].1,
                Err(_) => return false,
            }
        }
        self.nodes[node].accepting
    }
}

/// Add-k smoothed bigram model over the closed vocabulary, with `START`/`END`.
pub fn build_bigram<F: Real, S: AsRef<str>>(annotations: &[Vec<S>], smoothing: f64) -> Result<BigramModel<F>> {
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return invalid("smoothing must be finite and non-negative");
    }
    let sequences = clean_annotations(annotations)?;
    let vocab = vocabulary(&sequences);
    let v = vocab.len();
    let mut counts = Array2::<f64>::zeros((v + 1, v + 1));
    for seq in &sequences {
        let mut prev_row = 0;
        for label in seq {
            let idx = index_of(&vocab, label)?;
            counts[[prev_row, idx]] += 1.0;
            prev_row = idx + 1;
        }
        counts[[prev_row, v]] += 1.0;
    }
    let mut log_probs = Array2::from_elem((v + 1, v + 1), F::neg_infinity());
    for r in 0..=v {
        let total: f64 = counts.row(r).sum() + smoothing * (v + 1) as f64;
        if total <= 0.0 {
            continue;
        }
        for c in 0..=v {
            let p = (counts[[r, c]] + smoothing) / total;
            log_probs[[r, c]] = F::lit(p.ln());
        }
    }
    BigramModel::from_log_probs(vocab, log_probs)
}

fn row_tolerance<F: Real>(len: usize) -> f64 {
    (F::epsilon().as_f64() * 16.0 * len as f64).max(1e-10)
}

impl<F: Real> BigramModel<F> {
    /// Validates that each row is a distribution (rows with no mass at all are allowed).
    pub fn from_log_probs(vocab: Vec<String>, log_probs: Array2<F>) -> Result<Self> {
        let v = vocab.len();
        if v == 0 {
            return invalid("bigram vocabulary is empty");
        }
        if log_probs.dim() != (v + 1, v + 1) {
            return invalid(format!("bigram table has shape {:?}, expected {:?}", log_probs.dim(), (v + 1, v + 1)));
        }
        if vocab.windows(2).any(|w| w[0] >= w[1]) || vocab.iter().any(|l| !crate::is_valid_label(l)) {
            return invalid("bigram vocabulary must be sorted, unique, valid labels");
        }
        for (r, row) in log_probs.rows().into_iter().enumerate() {
            if row.iter().any(|p| p.is_nan() || *p > F::zero()) {
                return invalid(format!("bigram row {r} has an invalid log-probability"));
            }
            let sum: f64 = row.iter().map(|p| p.exp().as_f64()).sum();
            if sum != 0.0 && (sum - 1.0).abs() > row_tolerance::<F>(row.len()) {
                return invalid(format!("bigram row {r} sums to {sum}"));
            }
        }
        Ok(Self { vocab, log_probs })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn log_probs(&self) -> &Array2<F> {
        &self.log_probs
    }

    /// `ln p(next | prev)`; `None` stands for `START` (as `prev`) or `END` (as `next`).
    pub fn log_prob(&self, prev: Option<&str>, next: Option<&str>) -> Result<F> {
        let row = match prev {
            None => 0,
            Some(l) => index_of(&self.vocab, l)? + 1,
        };
        let col = match next {
            None => self.vocab.len(),
            Some(l) => index_of(&self.vocab, l)?,
        };
        Ok(self.log_probs[[row, col]])
    }
}

impl<F: Real> SequenceModel<F> {
    pub fn vocab(&self) -> &[String] {
        match self {
            SequenceModel::PathGrammar(g) => g.vocab(),
            SequenceModel::Bigram(b) => b.vocab(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SequenceModel::PathGrammar(_) => "path",
            SequenceModel::Bigram(_) => "bigram",
        }
    }
}

/// Log prior of a label sequence: `0` / `-inf` for a path grammar, the summed
/// transition log-probabilities (including start and end) for a bigram.
pub fn sequence_log_prior<F: Real, S: AsRef<str>>(model: &SequenceModel<F>, seq: &[S]) -> Result<F> {
    let vocab = model.vocab();
    for label in seq {
        index_of(vocab, label.as_ref())?;
    }
    match model {
        SequenceModel::PathGrammar(g) => Ok(if g.accepts(seq) { F::zero() } else { F::neg_infinity() }),
        SequenceModel::Bigram(b) => {
            let mut total = F::zero();
            let mut prev = None;
            for label in seq {
                total += b.log_prob(prev, Some(label.as_ref()))?;
                prev = Some(label.as_ref());
            }
            Ok(total + b.log_prob(prev, None)?)
        }
    }
}
