//! Left-to-right unit HMMs with Gaussian-mixture emissions.
//!
//! Every path enters at state 0 on the first frame and leaves from the final
//! state after the last frame. States only loop or advance by one.

use crate::error::{invalid, Error, Result};
use crate::gmm::{column_mean_var, fit_gmm_floored, variance_floor, DiagonalGmm, GmmConfig};
use crate::scalar::{log_add_exp, Real};
use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;

pub const DEFAULT_STATE_DIVISOR: usize = 10;
pub const INITIAL_SELF_PROB: f64 = 0.6;
pub const INITIAL_NEXT_PROB: f64 = 0.4;

/// Transition probabilities are kept inside `[floor, 1 - floor]`.
const TRANSITION_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmState<F> {
    pub log_self: F,
    /// Log-probability of advancing; for the final state, of exiting the unit.
    pub log_leave: F,
    pub emission: DiagonalGmm<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitHmm<F> {
    label: String,
    states: Vec<HmmState<F>>,
}

fn prob_tolerance<F: Real>() -> f64 {
    (16.0 * F::epsilon().as_f64()).max(1e-10)
}

impl<F: Real> UnitHmm<F> {
    pub fn new(label: impl Into<String>, states: Vec<HmmState<F>>) -> Result<Self> {
        let label = label.into();
        if !crate::is_valid_label(&label) {
            return invalid(format!("invalid unit label `{label}`"));
        }
        if states.is_empty() {
            return invalid("a unit HMM needs at least one state");
        }
        let dim = states[0].emission.dim();
        for (i, s) in states.iter().enumerate() {
            let total = s.log_self.exp().as_f64() + s.log_leave.exp().as_f64();
            if (total - 1.0).abs() > prob_tolerance::<F>() || s.log_self.is_nan() || s.log_leave.is_nan() {
                return invalid(format!("state {i} of `{label}`: transition probabilities sum to {total}"));
            }
            if s.emission.dim() != dim {
                return invalid(format!("state {i} of `{label}` has emission dimension {}", s.emission.dim()));
            }
        }
        Ok(Self { label, states })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states[0].emission.dim()
    }

    pub fn states(&self) -> &[HmmState<F>] {
        &self.states
    }

    /// Log-probability of leaving the unit from its final state.
    pub fn log_exit(&self) -> F {
        self.states[self.states.len() - 1].log_leave
    }

    fn check_seq(&self, seq: ArrayView2<F>) -> Result<()> {
        if seq.ncols() != self.dim() {
            return invalid(format!(
                "sequence has dimension {}, unit `{}` expects {}",
                seq.ncols(),
                self.label,
                self.dim()
            ));
        }
        Ok(())
    }

    /// `T × S` matrix of per-state emission log-likelihoods.
    pub fn emission_log_likelihoods(&self, seq: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_seq(seq)?;
        Ok(self.emissions_unchecked(seq))
    }

    pub(crate) fn emissions_unchecked(&self, seq: ArrayView2<F>) -> Array2<F> {
        let s_count = self.n_states();
        let max_k = self.states.iter().map(|s| s.emission.n_components()).max().unwrap_or(1);
        let mut out = Array2::zeros((seq.nrows(), s_count));
        let mut scratch = vec![F::zero(); max_k];
        for (t, x) in seq.axis_iter(Axis(0)).enumerate() {
            for (s, st) in self.states.iter().enumerate() {
                let k = st.emission.n_components();
                out[[t, s]] = st.emission.log_likelihood_with(x, &mut scratch[..k]);
            }
        }
        out
    }
}

fn log_pair<F: Real>(p_self: F) -> (F, F) {
    (p_self.ln(), (F::one() - p_self).ln())
}

#[derive(Debug, Clone)]
pub struct HmmInitConfig {
    /// States per unit: `max(1, round(mean segment length / divisor))`.
    pub divisor: usize,
    pub mixtures: usize,
    /// Relative variance floor, as in [`GmmConfig::variance_floor`].
    pub variance_floor: f64,
    pub seed: u64,
}

impl Default for HmmInitConfig {
    fn default() -> Self {
        Self {
            divisor: DEFAULT_STATE_DIVISOR,
            mixtures: 1,
            variance_floor: 1e-4,
            seed: 0,
        }
    }
}

/// State count for segments of the given lengths.
pub fn state_count(lengths: &[usize], divisor: usize) -> usize {
    let mean = lengths.iter().sum::<usize>() as f64 / lengths.len().max(1) as f64;
    ((mean / divisor.max(1) as f64).round() as usize).max(1)
}

/// Splits `len` frames into `states` contiguous chunks; remainder frames go to later states.
pub fn uniform_chunks(len: usize, states: usize) -> Vec<(usize, usize)> {
    let base = len / states;
    let extra = len % states;
    let mut out = Vec::with_capacity(states);
    let mut start = 0;
    for s in 0..states {
        let size = base + usize::from(s >= states - extra);
        out.push((start, start + size));
        start += size;
    }
    out
}

fn pooled<F: Real>(segments: &[ArrayView2<F>]) -> Array2<F> {
    concatenate(Axis(0), segments).expect("segments share a dimension")
}

fn check_segments<F: Real>(segments: &[ArrayView2<F>]) -> Result<usize> {
    if segments.is_empty() {
        return invalid("no training segments");
    }
    let dim = segments[0].ncols();
    for (i, s) in segments.iter().enumerate() {
        if s.nrows() == 0 {
            return invalid(format!("training segment {i} is empty"));
        }
        if s.ncols() != dim || dim == 0 {
            return invalid(format!("training segment {i} has dimension {}", s.ncols()));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return invalid(format!("training segment {i} contains non-finite values"));
        }
    }
    Ok(dim)
}

fn fit_state<F: Real>(
    frames: ArrayView2<F>,
    mixtures: usize,
    floor: &Array1<F>,
    seed: u64,
) -> Result<DiagonalGmm<F>> {
    let k = mixtures.min(frames.nrows()).max(1);
    if k == 1 {
        let (mean, var) = column_mean_var(frames);
        let var = Zip::from(&var).and(floor).map_collect(|&v, &f| v.max(f));
        return DiagonalGmm::single(mean, var);
    }
    let cfg = GmmConfig {
        seed,
        ..GmmConfig::default()
    };
    Ok(fit_gmm_floored(frames, k, &cfg, floor)?.gmm)
}

/// Builds a unit HMM from its training segments by even subdivision in time.
pub fn init_hmm<F: Real>(
    label: &str,
    segments: &[ArrayView2<F>],
    config: &HmmInitConfig,
) -> Result<UnitHmm<F>> {
    check_segments(segments)?;
    let lengths: Vec<usize> = segments.iter().map(|s| s.nrows()).collect();
    init_hmm_with_states(label, segments, state_count(&lengths, config.divisor), config)
}

/// [`init_hmm`] with an explicit state count.
pub fn init_hmm_with_states<F: Real>(
    label: &str,
    segments: &[ArrayView2<F>],
    s_count: usize,
    config: &HmmInitConfig,
) -> Result<UnitHmm<F>> {
    check_segments(segments)?;
    if s_count == 0 {
        return invalid("state count must be >= 1");
    }
    let all = pooled(segments);
    let floor = variance_floor(all.view(), config.variance_floor);

    let mut per_state: Vec<Vec<ArrayView2<F>>> = vec![Vec::new(); s_count];
    for seg in segments {
        for (s, (a, b)) in uniform_chunks(seg.nrows(), s_count).into_iter().enumerate() {
            if b > a {
                per_state[s].push(seg.slice(ndarray::s![a..b, ..]));
            }
        }
    }
    let mut emissions: Vec<Option<DiagonalGmm<F>>> = Vec::with_capacity(s_count);
    for (s, views) in per_state.iter().enumerate() {
        if views.is_empty() {
            emissions.push(None);
        } else {
            let frames = pooled(views);
            emissions.push(Some(fit_state(frames.view(), config.mixtures, &floor, config.seed ^ s as u64)?));
        }
    }
    // Unpopulated states borrow the nearest populated state's model.
    let populated: Vec<usize> = (0..s_count).filter(|&s| emissions[s].is_some()).collect();
    let (ls, ll) = log_pair(F::lit(INITIAL_SELF_PROB));
    let states = (0..s_count)
        .map(|s| {
            let src = *populated
                .iter()
                .min_by_key(|&&p| (p.abs_diff(s), p))
                .expect("at least one frame exists");
            HmmState {
                log_self: ls,
                log_leave: ll,
                emission: emissions[src].clone().expect("populated"),
            }
        })
        .collect();
    UnitHmm::new(label, states)
}

#[derive(Debug, Clone)]
pub struct BaumWelchConfig {
    pub max_iters: usize,
    /// Minimum gain in log-likelihood per training frame to keep iterating.
    pub tol: f64,
    pub variance_floor: f64,
}

impl Default for BaumWelchConfig {
    fn default() -> Self {
        Self {
            max_iters: 30,
            tol: 1e-5,
            variance_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaumWelchResult<F> {
    pub hmm: UnitHmm<F>,
    /// Total log-likelihood of the used segments before each re-estimation,
    /// plus the returned model's value.
    pub log_likelihood_trace: Vec<F>,
    pub iterations: usize,
    pub converged: bool,
    /// Segments shorter than the state count, left out of training.
    pub skipped: usize,
}

/// Expected sufficient statistics of one segment.
struct SegmentStats<F> {
    log_likelihood: F,
    self_count: Vec<F>,
    leave_count: Vec<F>,
    /// Per state, per mixture component: occupancy, first and second moments
    /// about the current component mean.
    occ: Vec<Vec<F>>,
    first: Vec<Vec<Array1<F>>>,
    second: Vec<Vec<Array1<F>>>,
}

impl<F: Real> SegmentStats<F> {
    fn zeros(hmm: &UnitHmm<F>) -> Self {
        let d = hmm.dim();
        let shape = |st: &HmmState<F>| st.emission.n_components();
        Self {
            log_likelihood: F::zero(),
            self_count: vec![F::zero(); hmm.n_states()],
            leave_count: vec![F::zero(); hmm.n_states()],
            occ: hmm.states.iter().map(|s| vec![F::zero(); shape(s)]).collect(),
            first: hmm.states.iter().map(|s| vec![Array1::zeros(d); shape(s)]).collect(),
            second: hmm.states.iter().map(|s| vec![Array1::zeros(d); shape(s)]).collect(),
        }
    }

    fn merge(&mut self, other: &Self) {
        self.log_likelihood += other.log_likelihood;
        for s in 0..self.self_count.len() {
            self.self_count[s] += other.self_count[s];
            self.leave_count[s] += other.leave_count[s];
            for m in 0..self.occ[s].len() {
                self.occ[s][m] += other.occ[s][m];
                self.first[s][m] += &other.first[s][m];
                self.second[s][m] += &other.second[s][m];
            }
        }
    }
}

/// Forward variables (log domain). Returns `alpha` and the total log-likelihood.
fn forward<F: Real>(hmm: &UnitHmm<F>, b: &Array2<F>) -> (Array2<F>, F) {
    let (t_len, s_count) = b.dim();
    let mut alpha = Array2::from_elem((t_len, s_count), F::neg_infinity());
    alpha[[0, 0]] = b[[0, 0]];
    for t in 1..t_len {
        for s in 0..s_count {
            let stay = alpha[[t - 1, s]] + hmm.states[s].log_self;
            let enter = if s > 0 {
                alpha[[t - 1, s - 1]] + hmm.states[s - 1].log_leave
            } else {
                F::neg_infinity()
            };
            alpha[[t, s]] = log_add_exp(stay, enter) + b[[t, s]];
        }
    }
    let ll = alpha[[t_len - 1, s_count - 1]] + hmm.log_exit();
    (alpha, ll)
}

fn backward<F: Real>(hmm: &UnitHmm<F>, b: &Array2<F>) -> Array2<F> {
    let (t_len, s_count) = b.dim();
    let mut beta = Array2::from_elem((t_len, s_count), F::neg_infinity());
    beta[[t_len - 1, s_count - 1]] = hmm.log_exit();
    for t in (0..t_len - 1).rev() {
        for s in 0..s_count {
            let stay = hmm.states[s].log_self + b[[t + 1, s]] + beta[[t + 1, s]];
            let advance = if s + 1 < s_count {
                hmm.states[s].log_leave + b[[t + 1, s + 1]] + beta[[t + 1, s + 1]]
            } else {
                F::neg_infinity()
            };
            beta[[t, s]] = log_add_exp(stay, advance);
        }
    }
    beta
}

/// Total log-likelihood of `seq` summed over all state paths.
pub fn forward_log_likelihood<F: Real>(hmm: &UnitHmm<F>, seq: ArrayView2<F>) -> Result<F> {
    hmm.check_seq(seq)?;
    if seq.nrows() < hmm.n_states() {
        return Err(no_path(hmm, seq.nrows()));
    }
    let b = hmm.emissions_unchecked(seq);
    Ok(forward(hmm, &b).1)
}

fn segment_stats<F: Real>(hmm: &UnitHmm<F>, seq: ArrayView2<F>) -> SegmentStats<F> {
    let b = hmm.emissions_unchecked(seq);
    let (alpha, ll) = forward(hmm, &b);
    let beta = backward(hmm, &b);
    let (t_len, s_count) = b.dim();
    let mut st = SegmentStats::zeros(hmm);
    st.log_likelihood = ll;
    for t in 0..t_len {
        for s in 0..s_count {
            let gamma = (alpha[[t, s]] + beta[[t, s]] - ll).exp();
            if t + 1 < t_len {
                st.self_count[s] +=
                    (alpha[[t, s]] + hmm.states[s].log_self + b[[t + 1, s]] + beta[[t + 1, s]] - ll).exp();
                if s + 1 < s_count {
                    st.leave_count[s] += (alpha[[t, s]]
                        + hmm.states[s].log_leave
                        + b[[t + 1, s + 1]]
                        + beta[[t + 1, s + 1]]
                        - ll)
                        .exp();
                }
            }
            if gamma == F::zero() {
                continue;
            }
            let em = &hmm.states[s].emission;
            let x = seq.row(t);
            let comp = if em.n_components() == 1 {
                vec![F::one()]
            } else {
                em.posteriors(x).expect("dimension checked").to_vec()
            };
            for (m, &c) in comp.iter().enumerate() {
                let w = gamma * c;
                if w == F::zero() {
                    continue;
                }
                st.occ[s][m] += w;
                let mean = em.means().row(m);
                let first = &mut st.first[s][m];
                let second = &mut st.second[s][m];
                for d in 0..x.len() {
                    let diff = x[d] - mean[d];
                    first[d] += w * diff;
                    second[d] += w * diff * diff;
                }
            }
        }
    }
    // Every path leaves from the last state exactly once.
    st.leave_count[s_count - 1] = F::one();
    st
}

fn reestimate<F: Real>(hmm: &UnitHmm<F>, stats: &SegmentStats<F>, floor: &Array1<F>) -> Result<UnitHmm<F>> {
    let lo = F::lit(TRANSITION_FLOOR);
    let hi = F::one() - lo;
    let mut states = Vec::with_capacity(hmm.n_states());
    for (s, old) in hmm.states.iter().enumerate() {
        let total = stats.self_count[s] + stats.leave_count[s];
        let (log_self, log_leave) = if total > F::zero() {
            log_pair((stats.self_count[s] / total).max(lo).min(hi))
        } else {
            (old.log_self, old.log_leave)
        };
        let occ_state: F = stats.occ[s].iter().copied().sum();
        let emission = if occ_state > F::zero() {
            let k = old.emission.n_components();
            let d = old.emission.dim();
            let mut weights = Array1::zeros(k);
            let mut means = Array2::zeros((k, d));
            let mut vars = Array2::zeros((k, d));
            let min_occ = F::lit(1e-10) * occ_state;
            for m in 0..k {
                let occ = stats.occ[s][m];
                if occ > min_occ {
                    weights[m] = occ / occ_state;
                    let shift = &stats.first[s][m] / occ;
                    let mean = &old.emission.means().row(m) + &shift;
                    let var = &stats.second[s][m] / occ - &shift.mapv(|v| v * v);
                    means.row_mut(m).assign(&mean);
                    Zip::from(vars.row_mut(m))
                        .and(&var)
                        .and(floor)
                        .for_each(|o, &v, &f| *o = v.max(f));
                } else {
                    weights[m] = min_occ / occ_state;
                    means.row_mut(m).assign(&old.emission.means().row(m));
                    vars.row_mut(m).assign(&old.emission.variances().row(m));
                }
            }
            let wsum = weights.sum();
            weights.mapv_inplace(|w| w / wsum);
            DiagonalGmm::new(weights, means, vars)?
        } else {
            old.emission.clone()
        };
        states.push(HmmState {
            log_self,
            log_leave,
            emission,
        });
    }
    UnitHmm::new(hmm.label.clone(), states)
}

/// Re-estimates transitions and emissions with forward-backward EM.
pub fn baum_welch<F: Real>(
    hmm: &UnitHmm<F>,
    segments: &[ArrayView2<F>],
    config: &BaumWelchConfig,
) -> Result<BaumWelchResult<F>> {
    check_segments(segments)?;
    if segments[0].ncols() != hmm.dim() {
        return invalid(format!(
            "segments have dimension {}, unit `{}` expects {}",
            segments[0].ncols(),
            hmm.label,
            hmm.dim()
        ));
    }
    let used: Vec<ArrayView2<F>> = segments
        .iter()
        .filter(|s| s.nrows() >= hmm.n_states())
        .cloned()
        .collect();
    let skipped = segments.len() - used.len();
    if used.is_empty() {
        return invalid(format!(
            "every segment of `{}` is shorter than its {} states",
            hmm.label,
            hmm.n_states()
        ));
    }
    let frames: usize = used.iter().map(|s| s.nrows()).sum();
    let floor = variance_floor(pooled(&used).view(), config.variance_floor);

    let mut current = hmm.clone();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let per_segment: Vec<SegmentStats<F>> = used
            .par_iter()
            .map(|seg| segment_stats(&current, *seg))
            .collect();
        // Merged in segment order for thread-count independence.
        let mut stats = SegmentStats::zeros(&current);
        for s in &per_segment {
            stats.merge(s);
        }
        let ll = stats.log_likelihood;
        let gain = trace.last().map(|&prev: &F| (ll - prev).as_f64() / frames as f64);
        trace.push(ll);
        if let Some(g) = gain {
            if g < config.tol {
                converged = true;
                break;
            }
        }
        if iterations >= config.max_iters {
            break;
        }
        current = reestimate(&current, &stats, &floor)?;
        iterations += 1;
    }
    Ok(BaumWelchResult {
        hmm: current,
        log_likelihood_trace: trace,
        iterations,
        converged,
        skipped,
    })
}

fn no_path<F: Real>(hmm: &UnitHmm<F>, frames: usize) -> Error {
    Error::NoPath {
        reason: format!("unit `{}` has {} states", hmm.label, hmm.n_states()),
        min_frames: hmm.n_states(),
        frames,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment<F> {
    pub states: Vec<usize>,
    pub log_score: F,
}

/// Most probable state path entering at state 0 and exiting from the last state.
/// On equal scores the path with the earlier state change is kept.
pub fn viterbi_align<F: Real>(hmm: &UnitHmm<F>, seq: ArrayView2<F>) -> Result<Alignment<F>> {
    hmm.check_seq(seq)?;
    let t_len = seq.nrows();
    let s_count = hmm.n_states();
    if t_len < s_count || t_len == 0 {
        return Err(no_path(hmm, t_len));
    }
    let b = hmm.emissions_unchecked(seq);
    let mut delta = Array2::from_elem((t_len, s_count), F::neg_infinity());
    let mut advanced = Array2::from_elem((t_len, s_count), false);
    delta[[0, 0]] = b[[0, 0]];
    for t in 1..t_len {
        for s in 0..s_count {
            let stay = delta[[t - 1, s]] + hmm.states[s].log_self;
            let enter = if s > 0 {
                delta[[t - 1, s - 1]] + hmm.states[s - 1].log_leave
            } else {
                F::neg_infinity()
            };
            let (best, adv) = if enter > stay { (enter, true) } else { (stay, false) };
            delta[[t, s]] = best + b[[t, s]];
            advanced[[t, s]] = adv;
        }
    }
    let log_score = delta[[t_len - 1, s_count - 1]] + hmm.log_exit();
    let mut states = vec![0; t_len];
    let mut s = s_count - 1;
    for t in (0..t_len).rev() {
        states[t] = s;
        if t > 0 && advanced[[t, s]] {
            s -= 1;
        }
    }
    Ok(Alignment { states, log_score })
}
