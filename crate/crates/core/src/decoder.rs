//! Grammar-constrained Viterbi decoding over a composite graph of unit HMMs.
//!
//! The sequence model is compiled into a graph whose arcs each carry one unit
//! HMM. Tokens move through the states of every arc; a token leaving an arc
//! becomes a node token, which can enter any arc leaving that node after
//! paying the arc's sequence-model weight and the insertion penalty.

use crate::error::{invalid, Error, Result};
use crate::hmm::{viterbi_align, UnitHmm};
use crate::scalar::Real;
use crate::segmentation::{Segmentation, Span};
use crate::sequence_model::SequenceModel;
use ndarray::{s, Array2, ArrayView2};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Unit HMMs keyed by label.
pub type UnitModels<F> = BTreeMap<String, UnitHmm<F>>;

#[derive(Debug, Clone, Default)]
pub struct DecodeConfig {
    /// Cost subtracted from the log-score for every decoded unit.
    pub insertion_penalty: f64,
    /// Prune tokens more than this far below the frame's best score.
    pub beam: Option<f64>,
}

#[derive(Debug, Clone)]
struct GraphArc<F> {
    from: usize,
    to: usize,
    /// Index into the sequence-model vocabulary.
    unit: usize,
    weight: F,
}

#[derive(Debug, Clone)]
struct DecodingGraph<F> {
    n_nodes: usize,
    arcs: Vec<GraphArc<F>>,
    final_weight: Vec<F>,
}

impl<F: Real> DecodingGraph<F> {
    fn compile(model: &SequenceModel<F>) -> Self {
        match model {
            SequenceModel::PathGrammar(g) => {
                let mut arcs = Vec::new();
                for (n, node) in g.nodes().iter().enumerate() {
                    for &(unit, child) in &node.children {
                        arcs.push(GraphArc {
                            from: n,
                            to: child,
                            unit,
                            weight: F::zero(),
                        });
                    }
                }
                let final_weight = g
                    .nodes()
                    .iter()
                    .map(|n| if n.accepting { F::zero() } else { F::neg_infinity() })
                    .collect();
                Self {
                    n_nodes: g.nodes().len(),
                    arcs,
                    final_weight,
                }
            }
            SequenceModel::Bigram(b) => {
                // Node 0 is START; node i + 1 means "last unit was vocab[i]".
                let v = b.vocab().len();
                let table = b.log_probs();
                let mut arcs = Vec::new();
                for from in 0..=v {
                    for unit in 0..v {
                        let w = table[[from, unit]];
                        if w > F::neg_infinity() {
                            arcs.push(GraphArc {
                                from,
                                to: unit + 1,
                                unit,
                                weight: w,
                            });
                        }
                    }
                }
                let mut final_weight = vec![F::neg_infinity(); v + 1];
                for (node, fw) in final_weight.iter_mut().enumerate().skip(1) {
                    *fw = table[[node, v]];
                }
                Self {
                    n_nodes: v + 1,
                    arcs,
                    final_weight,
                }
            }
        }
    }

    /// Fewest frames any complete path needs, if any path exists.
    fn min_frames(&self, states: &[usize]) -> Option<usize> {
        let mut best = vec![usize::MAX; self.n_nodes];
        best[0] = 0;
        // Bellman-Ford; costs are positive so |nodes| rounds suffice.
        for _ in 0..self.n_nodes {
            let mut changed = false;
            for a in &self.arcs {
                if best[a.from] != usize::MAX {
                    let c = best[a.from] + states[a.unit];
                    if c < best[a.to] {
                        best[a.to] = c;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        (0..self.n_nodes)
            .filter(|&n| self.final_weight[n] > F::neg_infinity() && best[n] != usize::MAX)
            .map(|n| best[n])
            .min()
    }
}

const BP_SELF: u8 = 0;
const BP_ADVANCE: u8 = 1;
const BP_ENTER: u8 = 2;

/// Most probable grammar-valid unit sequence with frame boundaries.
///
/// Span scores cover emissions and in-unit transitions (including the exit);
/// the total adds sequence-model terms and subtracts the insertion penalty per span.
pub fn decode<F: Real>(
    seq: ArrayView2<F>,
    hmms: &UnitModels<F>,
    model: &SequenceModel<F>,
    config: &DecodeConfig,
) -> Result<Segmentation<F>> {
    let t_len = seq.nrows();
    if t_len == 0 {
        return invalid("cannot decode an empty sequence");
    }
    let vocab = model.vocab();
    let mut units: Vec<&UnitHmm<F>> = Vec::with_capacity(vocab.len());
    for label in vocab {
        let h = hmms
            .get(label)
            .ok_or_else(|| Error::InvalidInput(format!("no HMM for unit `{label}`")))?;
        if h.dim() != seq.ncols() {
            return invalid(format!(
                "sequence has dimension {}, unit `{label}` expects {}",
                seq.ncols(),
                h.dim()
            ));
        }
        units.push(h);
    }
    if seq.iter().any(|v| !v.is_finite()) {
        return invalid("sequence contains non-finite values");
    }
    let graph = DecodingGraph::compile(model);
    let state_counts: Vec<usize> = units.iter().map(|u| u.n_states()).collect();
    let min_frames = graph.min_frames(&state_counts);
    let no_path = |reason: &str| Error::NoPath {
        reason: reason.to_string(),
        min_frames: min_frames.unwrap_or(usize::MAX),
        frames: t_len,
    };
    match min_frames {
        None => return Err(no_path("sequence model has no complete path")),
        Some(m) if m > t_len => return Err(no_path("shortest grammar path does not fit")),
        _ => {}
    }

    let emissions: Vec<Array2<F>> = units.iter().map(|u| u.emissions_unchecked(seq)).collect();
    let mut offsets = Vec::with_capacity(graph.arcs.len());
    let mut n_states = 0;
    for a in &graph.arcs {
        offsets.push(n_states);
        n_states += state_counts[a.unit];
    }
    let penalty = F::lit(config.insertion_penalty);
    let beam = config.beam.map(F::lit);
    let neg_inf = F::neg_infinity();

    let mut prev = vec![neg_inf; n_states];
    let mut cur = vec![neg_inf; n_states];
    let mut bp = vec![BP_SELF; t_len * n_states];
    let mut node_bp = vec![u32::MAX; t_len * graph.n_nodes];
    let mut node_score = vec![neg_inf; graph.n_nodes];

    for t in 0..t_len {
        // Node tokens from frame t - 1 (at t = 0 only the start node is live).
        if t == 0 {
            node_score.fill(neg_inf);
            node_score[0] = F::zero();
        } else {
            node_score.fill(neg_inf);
            let row = &mut node_bp[(t - 1) * graph.n_nodes..t * graph.n_nodes];
            for (ai, a) in graph.arcs.iter().enumerate() {
                let last = offsets[ai] + state_counts[a.unit] - 1;
                let score = prev[last] + units[a.unit].log_exit();
                let best = node_score[a.to];
                let better = score > best
                    || (score == best
                        && score > neg_inf
                        && a.unit < graph.arcs[row[a.to] as usize].unit);
                if better {
                    node_score[a.to] = score;
                    row[a.to] = ai as u32;
                }
            }
        }
        let bp_row = &mut bp[t * n_states..(t + 1) * n_states];
        for (ai, a) in graph.arcs.iter().enumerate() {
            let u = units[a.unit];
            let em = &emissions[a.unit];
            let off = offsets[ai];
            for s in 0..state_counts[a.unit] {
                let st = &u.states()[s];
                let mut best = if t > 0 { prev[off + s] + st.log_self } else { neg_inf };
                let mut code = BP_SELF;
                if s > 0 && t > 0 {
                    let adv = prev[off + s - 1] + u.states()[s - 1].log_leave;
                    if adv > best {
                        best = adv;
                        code = BP_ADVANCE;
                    }
                }
                if s == 0 {
                    let enter = node_score[a.from] + a.weight - penalty;
                    if enter > best {
                        best = enter;
                        code = BP_ENTER;
                    }
                }
                cur[off + s] = best + em[[t, s]];
                bp_row[off + s] = code;
            }
        }
        if let Some(width) = beam {
            let top = cur.iter().copied().fold(neg_inf, F::max);
            let cut = top - width;
            for v in cur.iter_mut() {
                if *v < cut {
                    *v = neg_inf;
                }
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    // Final node tokens at T - 1.
    let mut best_total = neg_inf;
    let mut best_arc = usize::MAX;
    for (ai, a) in graph.arcs.iter().enumerate() {
        let fw = graph.final_weight[a.to];
        if fw == neg_inf {
            continue;
        }
        let last = offsets[ai] + state_counts[a.unit] - 1;
        let score = prev[last] + units[a.unit].log_exit() + fw;
        let better = score > best_total
            || (score == best_total && score > neg_inf && a.unit < graph.arcs[best_arc].unit);
        if better {
            best_total = score;
            best_arc = ai;
        }
    }
    if best_total == neg_inf {
        return Err(no_path("no grammar path has finite score"));
    }

    // Backtrace.
    let mut spans_rev: Vec<(usize, usize, usize)> = Vec::new();
    let mut arc = best_arc;
    let mut s = state_counts[graph.arcs[arc].unit] - 1;
    let mut end = t_len;
    let mut t = t_len - 1;
    loop {
        let code = bp[t * n_states + offsets[arc] + s];
        match code {
            BP_SELF => t -= 1,
            BP_ADVANCE => {
                s -= 1;
                t -= 1;
            }
            _ => {
                spans_rev.push((graph.arcs[arc].unit, t, end));
                if t == 0 {
                    break;
                }
                end = t;
                let node = graph.arcs[arc].from;
                arc = node_bp[(t - 1) * graph.n_nodes + node] as usize;
                s = state_counts[graph.arcs[arc].unit] - 1;
                t -= 1;
            }
        }
    }
    spans_rev.reverse();
    let mut spans = Vec::with_capacity(spans_rev.len());
    for (unit, start, end) in spans_rev {
        let frames = seq.slice(s![start..end, ..]);
        let align = viterbi_align(units[unit], frames)?;
        spans.push(Span {
            label: vocab[unit].clone(),
            start,
            end,
            log_score: align.log_score,
        });
    }
    Segmentation::new(spans, t_len, best_total)
}

/// Unit models and sequence prior for one activity class.
#[derive(Debug, Clone)]
pub struct ActivityBundle<F> {
    pub label: String,
    pub hmms: UnitModels<F>,
    pub model: SequenceModel<F>,
}

#[derive(Debug, Clone)]
pub struct Classification<F> {
    pub label: String,
    /// Total decode score per activity, in bundle order; `-inf` when no path fits.
    pub scores: Vec<(String, F)>,
    pub segmentation: Segmentation<F>,
}

/// Decodes under every activity and returns the best-scoring one (first on ties).
pub fn classify_activity<F: Real>(
    seq: ArrayView2<F>,
    bundles: &[ActivityBundle<F>],
    config: &DecodeConfig,
) -> Result<Classification<F>> {
    if bundles.is_empty() {
        return invalid("need at least one activity bundle");
    }
    let results: Vec<Result<Option<Segmentation<F>>>> = bundles
        .par_iter()
        .map(|b| match decode(seq, &b.hmms, &b.model, config) {
            Ok(s) => Ok(Some(s)),
            Err(Error::NoPath { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut scores = Vec::with_capacity(bundles.len());
    let mut winner: Option<(usize, Segmentation<F>)> = None;
    for (i, (b, r)) in bundles.iter().zip(results).enumerate() {
        let seg = r?;
        let score = seg.as_ref().map_or(F::neg_infinity(), |s| s.total_log_score);
        scores.push((b.label.clone(), score));
        if let Some(seg) = seg {
            let better = winner
                .as_ref()
                .is_none_or(|(_, w)| seg.total_log_score > w.total_log_score);
            if better {
                winner = Some((i, seg));
            }
        }
    }
    let (idx, segmentation) = winner.ok_or_else(|| Error::NoPath {
        reason: "no activity grammar fits the sequence".into(),
        min_frames: usize::MAX,
        frames: seq.nrows(),
    })?;
    Ok(Classification {
        label: bundles[idx].label.clone(),
        scores,
        segmentation,
    })
}
