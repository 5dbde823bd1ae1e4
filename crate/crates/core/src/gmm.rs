//! Diagonal-covariance Gaussian mixture models.
//!
//! The same type serves as the Fisher-vector codebook and as the per-state
//! observation model of the unit HMMs.

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::scalar::{log_sum_exp, Real};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Components whose total responsibility falls below this are re-seeded.
const EMPTY_COMPONENT: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct DiagonalGmm<F> {
    weights: Array1<F>,
    means: Array2<F>,
    variances: Array2<F>,
    /// `ln w_k - 0.5 * sum_d ln(2 pi var_kd)`, cached per component.
    log_norm: Array1<F>,
}

impl<F: PartialEq> PartialEq for DiagonalGmm<F> {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.means == other.means
            && self.variances == other.variances
    }
}

fn weight_tolerance<F: Real>(k: usize) -> f64 {
    (64.0 * F::epsilon().as_f64() * k as f64).max(1e-10)
}

impl<F: Real> DiagonalGmm<F> {
    /// Builds a mixture from `weights` (K), `means` (K×D) and diagonal `variances` (K×D).
    pub fn new(weights: Array1<F>, means: Array2<F>, variances: Array2<F>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.ncols() == 0 {
            return invalid("mixture needs K >= 1 and D >= 1");
        }
        if means.nrows() != k || variances.dim() != means.dim() {
            return invalid(format!(
                "shape mismatch: {} weights, means {:?}, variances {:?}",
                k,
                means.dim(),
                variances.dim()
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > F::zero())) {
            return invalid("mixture weights must be finite and strictly positive");
        }
        let total = weights.sum().as_f64();
        if (total - 1.0).abs() > weight_tolerance::<F>(k) {
            return invalid(format!("mixture weights sum to {total}, expected 1"));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return invalid("means must be finite");
        }
        if variances.iter().any(|v| !(v.is_finite() && *v > F::zero())) {
            return invalid("variances must be finite and strictly positive");
        }
        let log_norm = compute_log_norm(&weights, &variances);
        Ok(Self {
            weights,
            means,
            variances,
            log_norm,
        })
    }

    /// Single-component model.
    pub fn single(mean: Array1<F>, variance: Array1<F>) -> Result<Self> {
        let d = mean.len();
        let means = mean.into_shape_with_order((1, d)).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let variances = variance
            .into_shape_with_order((1, d))
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
        Self::new(Array1::from_elem(1, F::one()), means, variances)
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &Array1<F> {
        &self.weights
    }

    pub fn means(&self) -> &Array2<F> {
        &self.means
    }

    pub fn variances(&self) -> &Array2<F> {
        &self.variances
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return invalid(format!("vector has dimension {len}, model expects {}", self.dim()));
        }
        Ok(())
    }

    /// `ln w_k + ln N(x; mu_k, var_k)` for every component, written into `out`.
    /// The caller guarantees `x.len() == self.dim()` and `out.len() == K`.
    pub(crate) fn weighted_log_densities_into(&self, x: ArrayView1<F>, out: &mut [F]) {
        let half = F::lit(0.5);
        for (k, o) in out.iter_mut().enumerate() {
            let mean = self.means.row(k);
            let var = self.variances.row(k);
            let mut quad = F::zero();
            for d in 0..x.len() {
                let diff = x[d] - mean[d];
                quad += diff * diff / var[d];
            }
            *o = self.log_norm[k] - half * quad;
        }
    }

    /// Weighted per-component log densities `ln w_k + ln N(x; mu_k, var_k)`.
    pub fn weighted_log_densities(&self, x: ArrayView1<F>) -> Result<Array1<F>> {
        self.check_dim(x.len())?;
        let mut out = Array1::zeros(self.n_components());
        self.weighted_log_densities_into(x, out.as_slice_mut().expect("contiguous"));
        Ok(out)
    }

    /// Responsibilities `gamma(k)`, computed in the log domain with max subtraction.
    pub fn posteriors(&self, x: ArrayView1<F>) -> Result<Array1<F>> {
        let mut logs = self.weighted_log_densities(x)?;
        let total = log_sum_exp(logs.as_slice().expect("contiguous"));
        logs.mapv_inplace(|l| (l - total).exp());
        Ok(logs)
    }

    /// `ln sum_k w_k N(x; mu_k, var_k)`.
    pub fn log_likelihood(&self, x: ArrayView1<F>) -> Result<F> {
        let logs = self.weighted_log_densities(x)?;
        Ok(log_sum_exp(logs.as_slice().expect("contiguous")))
    }

    /// Unchecked variant used on hot paths.
    pub(crate) fn log_likelihood_with(&self, x: ArrayView1<F>, scratch: &mut [F]) -> F {
        self.weighted_log_densities_into(x, scratch);
        log_sum_exp(scratch)
    }

    /// Draws `n` i.i.d. samples; the output depends only on `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Array2<F>> {
        if n == 0 {
            return invalid("sample count must be >= 1");
        }
        let mut rng = rng::seeded(seed);
        let cumulative: Vec<f64> = self
            .weights
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w.as_f64();
                Some(*acc)
            })
            .collect();
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for mut row in out.axis_iter_mut(Axis(0)) {
            let u: f64 = rng.random::<f64>() * cumulative[cumulative.len() - 1];
            let k = cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(cumulative.len() - 1);
            for j in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                row[j] = self.means[[k, j]] + self.variances[[k, j]].sqrt() * F::lit(z);
            }
        }
        Ok(out)
    }
}

fn compute_log_norm<F: Real>(weights: &Array1<F>, variances: &Array2<F>) -> Array1<F> {
    let half = F::lit(0.5);
    let ln_2pi = F::lit(LN_2PI);
    Array1::from_iter(variances.axis_iter(Axis(0)).zip(weights.iter()).map(|(var, &w)| {
        let log_det: F = var.iter().map(|&v| ln_2pi + v.ln()).sum();
        w.ln() - half * log_det
    }))
}

/// EM settings for [`fit_gmm`].
#[derive(Debug, Clone)]
pub struct GmmConfig {
    pub max_iters: usize,
    /// Minimum gain in mean per-sample log-likelihood to keep iterating.
    pub tol: f64,
    /// Variance floor, relative to the per-dimension variance of the training data.
    pub variance_floor: f64,
    pub seed: u64,
    pub kmeans_iters: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-5,
            variance_floor: 1e-4,
            seed: 0,
            kmeans_iters: 10,
        }
    }
}

/// Result of [`fit_gmm`].
#[derive(Debug, Clone)]
pub struct GmmFit<F> {
    pub gmm: DiagonalGmm<F>,
    /// Mean per-sample log-likelihood before each M-step, plus the final model's value.
    pub log_likelihood_trace: Vec<F>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of empty-component re-seeds; the trace is only guaranteed monotone when 0.
    pub reseeds: usize,
}

/// Per-dimension variance floor: `relative * var_d`, or `relative` itself
/// for dimensions with no spread at all.
pub fn variance_floor<F: Real>(samples: ArrayView2<F>, relative: f64) -> Array1<F> {
    let rel = F::lit(relative);
    let (_, var) = column_mean_var(samples);
    var.mapv(|v| if v > F::zero() { rel * v } else { rel })
}

/// Column means and population variances.
pub(crate) fn column_mean_var<F: Real>(samples: ArrayView2<F>) -> (Array1<F>, Array1<F>) {
    let n = F::from_usize_lossy(samples.nrows().max(1));
    let mean = samples.sum_axis(Axis(0)) / n;
    let mut var = Array1::zeros(samples.ncols());
    for row in samples.axis_iter(Axis(0)) {
        Zip::from(&mut var).and(&row).and(&mean).for_each(|v, &x, &m| {
            let d = x - m;
            *v += d * d;
        });
    }
    (mean, var / n)
}

fn check_samples<F: Real>(samples: ArrayView2<F>) -> Result<()> {
    if samples.ncols() == 0 {
        return invalid("samples must have at least one dimension");
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return invalid("samples contain non-finite values");
    }
    Ok(())
}

fn sq_dist<F: Real>(a: ArrayView1<F>, b: ArrayView1<F>) -> F {
    a.iter().zip(b.iter()).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

// k-means runs in f64 regardless of `F`; it only supplies a starting point.
fn nearest(centers: &Array2<f64>, x: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.axis_iter(Axis(0)).enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations. Returns centers and assignments.
fn kmeans(samples: &Array2<f64>, k: usize, iters: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let (n, d) = samples.dim();
    let mut rng = rng::seeded(seed);
    let mut centers = Array2::zeros((k, d));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&samples.row(first));
    let mut dist: Vec<f64> = samples
        .axis_iter(Axis(0))
        .map(|x| sq_dist(x, centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                acc += w;
                if u < acc {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&samples.row(pick));
        for (i, x) in samples.axis_iter(Axis(0)).enumerate() {
            dist[i] = dist[i].min(sq_dist(x, centers.row(c)));
        }
    }

    let mut assign = vec![0usize; n];
    let mut dists = vec![0.0f64; n];
    let reassign = |centers: &Array2<f64>, assign: &mut [usize], dists: &mut [f64]| {
        for (i, x) in samples.axis_iter(Axis(0)).enumerate() {
            let (a, dd) = nearest(centers, x);
            assign[i] = a;
            dists[i] = dd;
        }
    };
    reassign(&centers, &mut assign, &mut dists);
    for _ in 0..iters {
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, x) in samples.axis_iter(Axis(0)).enumerate() {
            let mut s = sums.row_mut(assign[i]);
            s += &x;
            counts[assign[i]] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = &sums.row(c) / counts[c] as f64;
                centers.row_mut(c).assign(&mean);
            } else {
                // Empty cluster: move it to the worst-served sample.
                let far = argmax(&dists);
                centers.row_mut(c).assign(&samples.row(far));
                dists[far] = 0.0;
            }
        }
        reassign(&centers, &mut assign, &mut dists);
    }
    (centers, assign)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fits a `k`-component diagonal GMM with EM, seeded by k-means++.
pub fn fit_gmm<F: Real>(samples: ArrayView2<F>, k: usize, config: &GmmConfig) -> Result<GmmFit<F>> {
    check_samples(samples)?;
    let floor = variance_floor(samples, config.variance_floor);
    fit_gmm_floored(samples, k, config, &floor)
}

/// [`fit_gmm`] with an explicit absolute per-dimension variance floor.
pub fn fit_gmm_floored<F: Real>(
    samples: ArrayView2<F>,
    k: usize,
    config: &GmmConfig,
    floor: &Array1<F>,
) -> Result<GmmFit<F>> {
    check_samples(samples)?;
    let (n, d) = samples.dim();
    if k == 0 {
        return invalid("component count must be >= 1");
    }
    if n < k {
        return invalid(format!("{n} samples cannot support {k} components"));
    }
    if floor.len() != d || floor.iter().any(|f| !(*f > F::zero())) {
        return invalid("variance floor must be positive with one entry per dimension");
    }
    let (_, global_var) = column_mean_var(samples);
    let global_var = Zip::from(&global_var).and(floor).map_collect(|&v, &f| v.max(f));

    let as_f64 = samples.mapv(|v| v.as_f64());
    let (centers, assign) = kmeans(&as_f64, k, config.kmeans_iters, config.seed);

    let mut counts = vec![0usize; k];
    let mut means = Array2::<F>::zeros((k, d));
    let mut variances = Array2::<F>::zeros((k, d));
    for (i, x) in samples.axis_iter(Axis(0)).enumerate() {
        counts[assign[i]] += 1;
        let mut m = means.row_mut(assign[i]);
        m += &x;
    }
    for c in 0..k {
        if counts[c] > 0 {
            let cnt = F::from_usize_lossy(counts[c]);
            means.row_mut(c).mapv_inplace(|v| v / cnt);
        } else {
            means.row_mut(c).assign(&centers.row(c).mapv(F::lit));
        }
    }
    for (i, x) in samples.axis_iter(Axis(0)).enumerate() {
        let c = assign[i];
        Zip::from(variances.row_mut(c))
            .and(&x)
            .and(means.row(c))
            .for_each(|v, &xv, &m| *v += (xv - m) * (xv - m));
    }
    for c in 0..k {
        let cnt = F::from_usize_lossy(counts[c].max(1));
        Zip::from(variances.row_mut(c))
            .and(floor)
            .and(&global_var)
            .for_each(|v, &f, &g| {
                *v = if counts[c] > 1 { (*v / cnt).max(f) } else { g };
            });
    }
    let total: usize = counts.iter().map(|&c| c.max(1)).sum();
    let weights = Array1::from_iter(
        counts
            .iter()
            .map(|&c| F::from_usize_lossy(c.max(1)) / F::from_usize_lossy(total)),
    );
    let mut gmm = DiagonalGmm::new(weights, means, variances)?;

    let mut trace = Vec::new();
    let mut resp = Array2::<F>::zeros((n, k));
    let mut converged = false;
    let mut reseeds = 0;
    let mut iterations = 0;
    loop {
        let ll = e_step(&gmm, samples, &mut resp);
        let improved = trace.last().map(|&prev: &F| (ll - prev).as_f64());
        trace.push(ll);
        if let Some(gain) = improved {
            if gain < config.tol {
                converged = true;
                break;
            }
        }
        if iterations >= config.max_iters {
            break;
        }
        let (next, reseeded) = m_step(&gmm, samples, &resp, floor, &global_var)?;
        reseeds += reseeded;
        gmm = next;
        iterations += 1;
    }
    Ok(GmmFit {
        gmm,
        log_likelihood_trace: trace,
        iterations,
        converged,
        reseeds,
    })
}

/// Fills `resp` with responsibilities; returns the mean per-sample log-likelihood.
fn e_step<F: Real>(gmm: &DiagonalGmm<F>, samples: ArrayView2<F>, resp: &mut Array2<F>) -> F {
    let k = gmm.n_components();
    let mut lls = vec![F::zero(); samples.nrows()];
    resp.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(samples.axis_iter(Axis(0)).into_par_iter())
        .zip(lls.par_iter_mut())
        .for_each_init(
            || vec![F::zero(); k],
            |scratch, ((mut r, x), ll)| {
                gmm.weighted_log_densities_into(x, scratch);
                let total = log_sum_exp(scratch);
                for (rv, &l) in r.iter_mut().zip(scratch.iter()) {
                    *rv = (l - total).exp();
                }
                *ll = total;
            },
        );
    // Summed in sample order so the value does not depend on thread count.
    let sum: F = lls.iter().copied().sum();
    sum / F::from_usize_lossy(samples.nrows())
}

fn m_step<F: Real>(
    gmm: &DiagonalGmm<F>,
    samples: ArrayView2<F>,
    resp: &Array2<F>,
    floor: &Array1<F>,
    global_var: &Array1<F>,
) -> Result<(DiagonalGmm<F>, usize)> {
    let (n, d) = samples.dim();
    let k = gmm.n_components();
    let stats: Vec<(F, Array1<F>, Array1<F>)> = (0..k)
        .into_par_iter()
        .map(|c| {
            let r = resp.column(c);
            let nk: F = r.iter().copied().sum();
            let mut mean = Array1::<F>::zeros(d);
            for (x, &w) in samples.axis_iter(Axis(0)).zip(r.iter()) {
                Zip::from(&mut mean).and(&x).for_each(|m, &xv| *m += w * xv);
            }
            if nk > F::zero() {
                mean.mapv_inplace(|m| m / nk);
            }
            let mut var = Array1::<F>::zeros(d);
            for (x, &w) in samples.axis_iter(Axis(0)).zip(r.iter()) {
                Zip::from(&mut var)
                    .and(&x)
                    .and(&mean)
                    .for_each(|v, &xv, &m| *v += w * (xv - m) * (xv - m));
            }
            if nk > F::zero() {
                var.mapv_inplace(|v| v / nk);
            }
            Zip::from(&mut var).and(floor).for_each(|v, &f| *v = v.max(f));
            (nk, mean, var)
        })
        .collect();

    let mut weights = Array1::<F>::zeros(k);
    let mut means = Array2::<F>::zeros((k, d));
    let mut variances = Array2::<F>::zeros((k, d));
    let mut reseeded = 0;
    let mut taken = vec![false; n];
    for (c, (nk, mean, var)) in stats.into_iter().enumerate() {
        if nk.as_f64() < EMPTY_COMPONENT {
            // Re-seed from the sample farthest from the mean of its dominant component.
            let mut best = (usize::MAX, F::neg_infinity());
            for (i, x) in samples.axis_iter(Axis(0)).enumerate() {
                if taken[i] {
                    continue;
                }
                let owner = argmax_row(resp.row(i));
                let dist = sq_dist(x, gmm.means.row(owner));
                if dist > best.1 {
                    best = (i, dist);
                }
            }
            let idx = if best.0 == usize::MAX { 0 } else { best.0 };
            taken[idx] = true;
            weights[c] = F::one() / F::from_usize_lossy(n);
            means.row_mut(c).assign(&samples.row(idx));
            variances.row_mut(c).assign(global_var);
            reseeded += 1;
        } else {
            weights[c] = nk / F::from_usize_lossy(n);
            means.row_mut(c).assign(&mean);
            variances.row_mut(c).assign(&var);
        }
    }
    let total = weights.sum();
    weights.mapv_inplace(|w| w / total);
    Ok((DiagonalGmm::new(weights, means, variances)?, reseeded))
}

fn argmax_row<F: Real>(row: ArrayView1<F>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};

    fn two_blobs(n_per: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng::seeded(seed);
        let mut out = Array2::zeros((2 * n_per, 2));
        for i in 0..2 * n_per {
            let c = if i < n_per { -5.0 } else { 5.0 };
            for j in 0..2 {
                let z: f64 = StandardNormal.sample(&mut rng);
                out[[i, j]] = c + z;
            }
        }
        out
    }

    fn random_gmm(k: usize, d: usize, seed: u64) -> DiagonalGmm<f64> {
        let mut rng = rng::seeded(seed);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let weights = Array::from_iter(raw.iter().map(|w| w / s));
        let means = Array2::from_shape_fn((k, d), |_| rng.random_range(-2.0..2.0));
        let vars = Array2::from_shape_fn((k, d), |_| rng.random_range(0.3..2.0));
        DiagonalGmm::new(weights, means, vars).unwrap()
    }

    fn naive_density(g: &DiagonalGmm<f64>, x: &[f64]) -> Vec<f64> {
        (0..g.n_components())
            .map(|k| {
                let mut p = g.weights()[k];
                for (d, &xd) in x.iter().enumerate() {
                    let m = g.means()[[k, d]];
                    let v = g.variances()[[k, d]];
                    p *= (-(xd - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
                }
                p
            })
            .collect()
    }

    #[test]
    fn rejects_bad_parameters() {
        let bad_w = DiagonalGmm::new(array![0.5, 0.4], Array2::zeros((2, 1)), Array2::ones((2, 1)));
        assert!(bad_w.is_err());
        let zero_var = DiagonalGmm::new(array![1.0], Array2::zeros((1, 1)), Array2::zeros((1, 1)));
        assert!(zero_var.is_err());
        let empty = DiagonalGmm::<f64>::new(Array1::zeros(0), Array2::zeros((0, 1)), Array2::zeros((0, 1)));
        assert!(empty.is_err());
    }

    #[test]
    fn standard_normal_peak() {
        let g = DiagonalGmm::<f64>::single(array![0.0], array![1.0]).unwrap();
        let ll = g.log_likelihood(array![0.0].view()).unwrap();
        assert!((ll + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert_eq!(g.posteriors(array![3.0].view()).unwrap(), array![1.0]);
    }

    #[test]
    fn identical_components_match_single() {
        let single = DiagonalGmm::<f64>::single(array![1.0, -2.0], array![0.5, 3.0]).unwrap();
        let double = DiagonalGmm::new(
            array![0.5, 0.5],
            array![[1.0, -2.0], [1.0, -2.0]],
            array![[0.5, 3.0], [0.5, 3.0]],
        )
        .unwrap();
        let x = array![0.3, 0.7];
        let a = single.log_likelihood(x.view()).unwrap();
        let b = double.log_likelihood(x.view()).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn dominant_component_posterior() {
        let g = DiagonalGmm::new(array![0.5, 0.5], array![[0.0], [20.0]], array![[1.0], [1.0]]).unwrap();
        let p = g.posteriors(array![0.0].view()).unwrap();
        assert!(p[0] > 1.0 - 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let g = random_gmm(2, 3, 1);
        assert!(g.posteriors(array![1.0].view()).is_err());
        assert!(g.log_likelihood(array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = rng::seeded(9);
        for s in 0..20 {
            let g = random_gmm(3, 4, s);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let dens = naive_density(&g, &x);
            let total: f64 = dens.iter().sum();
            let post = g.posteriors(ndarray::aview1(&x)).unwrap();
            for k in 0..3 {
                assert!((post[k] - dens[k] / total).abs() < 1e-12);
            }
            assert!((post.sum() - 1.0).abs() < 1e-12);
            let ll = g.log_likelihood(ndarray::aview1(&x)).unwrap();
            assert!((ll - total.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn single_component_fit_is_sample_moments() {
        let data = two_blobs(50, 3);
        let fit = fit_gmm(data.view(), 1, &GmmConfig::default()).unwrap();
        let (mean, var) = column_mean_var(data.view());
        for d in 0..2 {
            assert!((fit.gmm.means()[[0, d]] - mean[d]).abs() < 1e-12);
            assert!((fit.gmm.variances()[[0, d]] - var[d]).abs() < 1e-10);
        }
    }

    #[test]
    fn recovers_two_clusters() {
        let data = two_blobs(500, 11);
        let fit = fit_gmm(data.view(), 2, &GmmConfig::default()).unwrap();
        let mut firsts: Vec<f64> = (0..2).map(|k| fit.gmm.means()[[k, 0]]).collect();
        firsts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let order: Vec<usize> = if fit.gmm.means()[[0, 0]] < 0.0 { vec![0, 1] } else { vec![1, 0] };
        for (k, target) in order.into_iter().zip([-5.0, 5.0]) {
            for d in 0..2 {
                assert!((fit.gmm.means()[[k, d]] - target).abs() < 0.2, "{:?}", fit.gmm.means());
            }
        }
    }

    #[test]
    fn em_trace_monotone() {
        for s in 0..50u64 {
            let truth = random_gmm(3, 2, 100 + s);
            let data = truth.sample(300, s).unwrap();
            let cfg = GmmConfig { seed: s, ..Default::default() };
            let fit = fit_gmm(data.view(), 3, &cfg).unwrap();
            assert_eq!(fit.reseeds, 0);
            for w in fit.log_likelihood_trace.windows(2) {
                assert!(w[1] - w[0] >= -1e-8, "instance {s}: {:?}", fit.log_likelihood_trace);
            }
        }
    }

    #[test]
    fn fitted_variances_respect_floor() {
        // Duplicate points force a degenerate component.
        let mut data = Array2::zeros((40, 2));
        for i in 20..40 {
            data[[i, 0]] = 1.0;
            data[[i, 1]] = 3.0;
        }
        let fit = fit_gmm(data.view(), 2, &GmmConfig::default()).unwrap();
        let floor = variance_floor(data.view(), 1e-4);
        for k in 0..2 {
            for d in 0..2 {
                assert!(fit.gmm.variances()[[k, d]] >= floor[d]);
            }
        }
    }

    #[test]
    fn fit_errors() {
        let data = Array2::<f64>::zeros((2, 3));
        assert!(fit_gmm(data.view(), 3, &GmmConfig::default()).is_err());
        let mut bad = Array2::<f64>::zeros((5, 1));
        bad[[2, 0]] = f64::NAN;
        assert!(fit_gmm(bad.view(), 1, &GmmConfig::default()).is_err());
    }

    #[test]
    fn fit_is_deterministic() {
        let data = two_blobs(100, 5);
        let cfg = GmmConfig { seed: 42, ..Default::default() };
        let a = fit_gmm(data.view(), 3, &cfg).unwrap();
        let b = fit_gmm(data.view(), 3, &cfg).unwrap();
        assert_eq!(a.gmm, b.gmm);
    }

    #[test]
    fn sampling_moments_and_determinism() {
        let g = DiagonalGmm::<f64>::single(array![3.0], array![4.0]).unwrap();
        let s = g.sample(10_000, 8).unwrap();
        let (m, v) = column_mean_var(s.view());
        assert!((m[0] - 3.0).abs() < 0.1);
        assert!((v[0] - 4.0).abs() < 0.2);
        assert_eq!(s, g.sample(10_000, 8).unwrap());
        assert!(g.sample(0, 1).is_err());
    }

    #[test]
    fn sampling_component_frequencies() {
        let g = DiagonalGmm::new(
            array![0.2, 0.3, 0.5],
            array![[-100.0], [0.0], [100.0]],
            array![[1.0], [1.0], [1.0]],
        )
        .unwrap();
        let n = 5000;
        let s = g.sample(n, 77).unwrap();
        let mut counts = [0usize; 3];
        for x in s.column(0) {
            let k = if *x < -50.0 { 0 } else if *x > 50.0 { 2 } else { 1 };
            counts[k] += 1;
        }
        for (k, &w) in [0.2, 0.3, 0.5].iter().enumerate() {
            let expected = n as f64 * w;
            let sd = (n as f64 * w * (1.0 - w)).sqrt();
            assert!((counts[k] as f64 - expected).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn works_in_f32() {
        let g = DiagonalGmm::<f32>::single(array![0.0], array![1.0]).unwrap();
        let data = g.sample(200, 1).unwrap();
        let fit = fit_gmm(data.view(), 2, &GmmConfig::default()).unwrap();
        assert_eq!(fit.gmm.n_components(), 2);
    }
}
