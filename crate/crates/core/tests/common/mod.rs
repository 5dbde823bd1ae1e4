//! Independent oracles shared by the integration tests. Nothing here calls
//! the scoring code under test; densities are computed directly.
#![allow(dead_code)]

use genseg_core::gmm::DiagonalGmm;
use genseg_core::hmm::{HmmState, UnitHmm};
use genseg_core::rng;
use genseg_core::sequence_model::{build_path_grammar, BigramModel, SequenceModel};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::collections::BTreeMap;

/// `ln sum_k w_k N(x; mu_k, var_k)` by plain summation of densities.
pub fn naive_log_density(weights: &[f64], means: &Array2<f64>, vars: &Array2<f64>, x: ArrayView1<f64>) -> f64 {
    let mut logs = Vec::new();
    for k in 0..weights.len() {
        let mut l = weights[k].ln();
        for d in 0..x.len() {
            let v = vars[[k, d]];
            l += -0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * (x[d] - means[[k, d]]).powi(2) / v;
        }
        logs.push(l);
    }
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

pub fn gmm_log_density(g: &DiagonalGmm<f64>, x: ArrayView1<f64>) -> f64 {
    naive_log_density(g.weights().as_slice().unwrap(), g.means(), g.variances(), x)
}

pub fn random_gmm(r: &mut rng::Rng, k: usize, d: usize, spread: f64) -> DiagonalGmm<f64> {
    let w: Vec<f64> = (0..k).map(|_| r.random_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    let means = Array2::from_shape_fn((k, d), |_| r.random_range(-spread..spread));
    let vars = Array2::from_shape_fn((k, d), |_| r.random_range(0.3..2.0));
    DiagonalGmm::new(Array1::from_iter(w.iter().map(|x| x / s)), means, vars).unwrap()
}

pub fn random_unit(r: &mut rng::Rng, label: &str, states: usize, d: usize, mixtures: usize) -> UnitHmm<f64> {
    let st = (0..states)
        .map(|_| {
            let p: f64 = r.random_range(0.2..0.9);
            HmmState {
                log_self: p.ln(),
                log_leave: (1.0 - p).ln(),
                emission: random_gmm(r, mixtures, d, 2.0),
            }
        })
        .collect();
    UnitHmm::new(label, st).unwrap()
}

/// Draws one segment: start in state 0, emit, then stay or advance; leaving
/// the last state ends the segment.
pub fn sample_segment(hmm: &UnitHmm<f64>, r: &mut rng::Rng) -> Array2<f64> {
    let d = hmm.dim();
    let mut rows: Vec<f64> = Vec::new();
    let mut s = 0;
    loop {
        let g = &hmm.states()[s].emission;
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut k = g.n_components() - 1;
        for (i, w) in g.weights().iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        for j in 0..d {
            let z: f64 = StandardNormal.sample(r);
            rows.push(g.means()[[k, j]] + g.variances()[[k, j]].sqrt() * z);
        }
        if r.random::<f64>() >= hmm.states()[s].log_self.exp() {
            s += 1;
            if s == hmm.n_states() {
                break;
            }
        }
    }
    let t = rows.len() / d;
    Array2::from_shape_vec((t, d), rows).unwrap()
}

/// Compositions of `total` into `parts` positive integers, each at least `min[i]`.
fn compositions(total: usize, mins: &[usize], prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if prefix.len() == mins.len() {
        if total == 0 {
            out.push(prefix.clone());
        }
        return;
    }
    let rest_min: usize = mins[prefix.len() + 1..].iter().sum();
    let lo = mins[prefix.len()];
    if total < lo + rest_min {
        return;
    }
    for len in lo..=total - rest_min {
        prefix.push(len);
        compositions(total - len, mins, prefix, out);
        prefix.pop();
    }
}

/// Best score of `hmm` on `seq` by enumerating every state-duration split.
pub fn brute_force_unit_score(hmm: &UnitHmm<f64>, seq: ArrayView2<f64>) -> f64 {
    let s = hmm.n_states();
    let mut splits = Vec::new();
    compositions(seq.nrows(), &vec![1; s], &mut Vec::new(), &mut splits);
    let mut best = f64::NEG_INFINITY;
    for split in splits {
        let mut score = 0.0;
        let mut t = 0;
        for (i, &dur) in split.iter().enumerate() {
            let st = &hmm.states()[i];
            score += (dur - 1) as f64 * st.log_self + st.log_leave;
            for _ in 0..dur {
                score += gmm_log_density(&st.emission, seq.row(t));
                t += 1;
            }
        }
        best = best.max(score);
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteForceBest {
    pub labels: Vec<String>,
    /// Span ends, exclusive.
    pub ends: Vec<usize>,
    pub total: f64,
    /// Gap to the runner-up labeling (infinite when unique).
    pub margin: f64,
}

fn sequence_prior(model: &SequenceModel<f64>, seq: &[String]) -> Option<f64> {
    match model {
        SequenceModel::PathGrammar(g) => g.sequences().iter().any(|s| s == seq).then_some(0.0),
        SequenceModel::Bigram(b) => {
            let mut total = 0.0;
            let mut prev: Option<&str> = None;
            for u in seq {
                total += b.log_prob(prev, Some(u)).ok()?;
                prev = Some(u);
            }
            Some(total + b.log_prob(prev, None).ok()?)
        }
    }
}

/// All unit sequences the model allows whose minimum frame need fits in `frames`.
fn candidate_sequences(model: &SequenceModel<f64>, hmms: &BTreeMap<String, UnitHmm<f64>>, frames: usize) -> Vec<Vec<String>> {
    match model {
        SequenceModel::PathGrammar(g) => g.sequences().to_vec(),
        SequenceModel::Bigram(b) => {
            let mut out = Vec::new();
            let mut stack: Vec<(Vec<String>, usize)> = vec![(Vec::new(), 0)];
            while let Some((seq, used)) = stack.pop() {
                if !seq.is_empty() {
                    out.push(seq.clone());
                }
                for u in b.vocab() {
                    let need = hmms[u].n_states();
                    if used + need <= frames {
                        let mut next = seq.clone();
                        next.push(u.clone());
                        stack.push((next, used + need));
                    }
                }
            }
            out
        }
    }
}

/// Exhaustive search over unit sequences and span boundaries.
pub fn brute_force_decode(
    seq: ArrayView2<f64>,
    hmms: &BTreeMap<String, UnitHmm<f64>>,
    model: &SequenceModel<f64>,
    insertion_penalty: f64,
) -> Option<BruteForceBest> {
    let t = seq.nrows();
    let mut span_cache: BTreeMap<(String, usize, usize), f64> = BTreeMap::new();
    let mut scored: Vec<(f64, Vec<String>, Vec<usize>)> = Vec::new();
    for units in candidate_sequences(model, hmms, t) {
        let Some(prior) = sequence_prior(model, &units) else { continue };
        let mins: Vec<usize> = units.iter().map(|u| hmms[u].n_states()).collect();
        let mut splits = Vec::new();
        compositions(t, &mins, &mut Vec::new(), &mut splits);
        for split in splits {
            let mut total = prior - insertion_penalty * units.len() as f64;
            let mut start = 0;
            let mut ends = Vec::new();
            for (u, &len) in units.iter().zip(&split) {
                let key = (u.clone(), start, start + len);
                let s = *span_cache
                    .entry(key)
                    .or_insert_with(|| brute_force_unit_score(&hmms[u], seq.slice(ndarray::s![start..start + len, ..])));
                total += s;
                start += len;
                ends.push(start);
            }
            scored.push((total, units.clone(), ends));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let best = scored.first()?;
    Some(BruteForceBest {
        labels: best.1.clone(),
        ends: best.2.clone(),
        total: best.0,
        margin: scored.get(1).map_or(f64::INFINITY, |s| best.0 - s.0),
    })
}

pub struct DecoderInstance {
    pub seq: Array2<f64>,
    pub hmms: BTreeMap<String, UnitHmm<f64>>,
    pub model: SequenceModel<f64>,
    pub penalty: f64,
}

/// Random instance with `T <= 12`, at most three units of at most four
/// states. Bigram instances use at least two states per unit so the number
/// of candidate labelings stays small.
pub fn random_decoder_instance(seed: u64, bigram: bool) -> DecoderInstance {
    let mut r = rng::seeded(seed);
    loop {
        let n_units = r.random_range(1..=3);
        let d = r.random_range(1..=2);
        let labels: Vec<String> = ["a", "b", "c"][..n_units].iter().map(|s| s.to_string()).collect();
        let min_states = if bigram { 2 } else { 1 };
        let hmms: BTreeMap<String, UnitHmm<f64>> = labels
            .iter()
            .map(|l| {
                let s = r.random_range(min_states..=4);
                let m = r.random_range(1..=2);
                (l.clone(), random_unit(&mut r, l, s, d, m))
            })
            .collect();
        let model = if bigram {
            let v = n_units;
            let mut table = Array2::zeros((v + 1, v + 1));
            for row in 0..=v {
                let w: Vec<f64> = (0..=v).map(|c| if row == 0 && c == v { 0.0 } else { r.random_range(0.05..1.0) }).collect();
                let s: f64 = w.iter().sum();
                for c in 0..=v {
                    table[[row, c]] = (w[c] / s).ln();
                }
            }
            SequenceModel::Bigram(BigramModel::from_log_probs(labels.clone(), table).unwrap())
        } else {
            let n_paths = r.random_range(1..=4);
            let paths: Vec<Vec<String>> = (0..n_paths)
                .map(|_| {
                    let len = r.random_range(1..=3);
                    (0..len).map(|_| labels[r.random_range(0..n_units)].clone()).collect()
                })
                .collect();
            SequenceModel::PathGrammar(build_path_grammar(&paths).unwrap())
        };
        let shortest = match &model {
            SequenceModel::PathGrammar(g) => g
                .sequences()
                .iter()
                .map(|s| s.iter().map(|u| hmms[u].n_states()).sum::<usize>())
                .min()
                .unwrap(),
            SequenceModel::Bigram(_) => hmms.values().map(|h| h.n_states()).min().unwrap(),
        };
        if shortest > 12 {
            continue;
        }
        let t = r.random_range(shortest..=12);
        let seq = Array2::from_shape_fn((t, d), |_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut r));
        let penalty = if r.random_bool(0.5) { 0.0 } else { r.random_range(0.0..3.0) };
        return DecoderInstance {
            seq,
            hmms,
            model,
            penalty,
        };
    }
}

/// Mean per-frame log-likelihood `(1/T) sum_t ln p(x_t)` with explicit parameters.
pub fn mean_log_likelihood(weights: &[f64], means: &Array2<f64>, stds: &Array2<f64>, frames: ArrayView2<f64>) -> f64 {
    let vars = stds.mapv(|s| s * s);
    frames.rows().into_iter().map(|x| naive_log_density(weights, means, &vars, x)).sum::<f64>() / frames.nrows() as f64
}

/// Fisher vector from central finite differences of the mean log-likelihood,
/// scaled by `sigma / sqrt(w)` for means and `sigma / sqrt(2 w)` for standard deviations.
pub fn finite_difference_fv(g: &DiagonalGmm<f64>, frames: ArrayView2<f64>, step: f64) -> Array1<f64> {
    let (k, d) = (g.n_components(), g.dim());
    let w = g.weights().to_vec();
    let means = g.means().clone();
    let stds = g.variances().mapv(f64::sqrt);
    let mut out = Array1::zeros(2 * k * d);
    for c in 0..k {
        for j in 0..d {
            let mut plus = means.clone();
            let mut minus = means.clone();
            plus[[c, j]] += step;
            minus[[c, j]] -= step;
            let grad = (mean_log_likelihood(&w, &plus, &stds, frames) - mean_log_likelihood(&w, &minus, &stds, frames)) / (2.0 * step);
            out[c * d + j] = grad * stds[[c, j]] / w[c].sqrt();

            let mut plus = stds.clone();
            let mut minus = stds.clone();
            plus[[c, j]] += step;
            minus[[c, j]] -= step;
            let grad = (mean_log_likelihood(&w, &means, &plus, frames) - mean_log_likelihood(&w, &means, &minus, frames)) / (2.0 * step);
            out[k * d + c * d + j] = grad * stds[[c, j]] / (2.0 * w[c]).sqrt();
        }
    }
    out
}

/// Largest per-entry relative difference, with `floor` guarding the denominator
/// for entries that are essentially zero.
pub fn max_relative_error(a: &Array1<f64>, b: &Array1<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
