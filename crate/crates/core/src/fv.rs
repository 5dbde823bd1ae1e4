//! Fisher-vector encoding of frame sets against a diagonal GMM codebook.
//!
//! Only the mean and standard-deviation gradients are kept, so a vector has
//! `2 * D * K` entries laid out as `[G_mu_1 .. G_mu_K, G_sigma_1 .. G_sigma_K]`,
//! each block `D` long.

use crate::error::{invalid, Result};
use crate::gmm::DiagonalGmm;
use crate::scalar::{log_sum_exp, Real};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, Axis};
use rayon::prelude::*;

/// Posteriors below this are treated as zero.
const POSTERIOR_CUTOFF: f64 = 1e-8;

/// Default sliding-window length in frames.
pub const DEFAULT_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct FisherVector<F> {
    pub values: Array1<F>,
    /// Frames `[start, end)` the vector was computed from.
    pub window: (usize, usize),
}

impl<F: Real> FisherVector<F> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Length of a Fisher vector for the given codebook.
pub fn fv_dim<F: Real>(gmm: &DiagonalGmm<F>) -> usize {
    2 * gmm.dim() * gmm.n_components()
}

fn check_features<F: Real>(gmm: &DiagonalGmm<F>, features: ArrayView2<F>) -> Result<()> {
    if features.nrows() == 0 {
        return invalid("cannot encode an empty frame set");
    }
    if features.ncols() != gmm.dim() {
        return invalid(format!(
            "features have dimension {}, codebook expects {}",
            features.ncols(),
            gmm.dim()
        ));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return invalid("features contain non-finite values");
    }
    Ok(())
}

/// Per-codebook constants reused across frames.
struct Codebook<'a, F> {
    gmm: &'a DiagonalGmm<F>,
    inv_std: Array2<F>,
    mu_scale: Array1<F>,
    sigma_scale: Array1<F>,
}

impl<'a, F: Real> Codebook<'a, F> {
    fn new(gmm: &'a DiagonalGmm<F>) -> Self {
        let two = F::lit(2.0);
        Self {
            gmm,
            inv_std: gmm.variances().mapv(|v| F::one() / v.sqrt()),
            mu_scale: gmm.weights().mapv(|w| F::one() / w.sqrt()),
            sigma_scale: gmm.weights().mapv(|w| F::one() / (two * w).sqrt()),
        }
    }

    /// Raw Fisher vector of `frames` written into `out` (length `2DK`).
    fn encode_into(&self, frames: ArrayView2<F>, mut out: ArrayViewMut1<F>) {
        let k_count = self.gmm.n_components();
        let d_count = self.gmm.dim();
        let half = k_count * d_count;
        let cutoff = F::lit(POSTERIOR_CUTOFF);
        out.fill(F::zero());
        let mut logs = vec![F::zero(); k_count];
        for x in frames.axis_iter(Axis(0)) {
            self.gmm.weighted_log_densities_into(x, &mut logs);
            let total = log_sum_exp(&logs);
            for k in 0..k_count {
                let gamma = (logs[k] - total).exp();
                if gamma < cutoff {
                    continue;
                }
                let mean = self.gmm.means().row(k);
                let inv_std = self.inv_std.row(k);
                for d in 0..d_count {
                    let z = (x[d] - mean[d]) * inv_std[d];
                    out[k * d_count + d] += gamma * z;
                    out[half + k * d_count + d] += gamma * (z * z - F::one());
                }
            }
        }
        let t = F::from_usize_lossy(frames.nrows());
        for k in 0..k_count {
            let mu = self.mu_scale[k] / t;
            let sigma = self.sigma_scale[k] / t;
            out.slice_mut(s![k * d_count..(k + 1) * d_count])
                .mapv_inplace(|v| v * mu);
            out.slice_mut(s![half + k * d_count..half + (k + 1) * d_count])
                .mapv_inplace(|v| v * sigma);
        }
    }
}

/// Raw (unnormalized) Fisher vector of a frame set.
pub fn encode_fv<F: Real>(gmm: &DiagonalGmm<F>, features: ArrayView2<F>) -> Result<FisherVector<F>> {
    check_features(gmm, features)?;
    let mut values = Array1::zeros(fv_dim(gmm));
    Codebook::new(gmm).encode_into(features, values.view_mut());
    Ok(FisherVector {
        values,
        window: (0, features.nrows()),
    })
}

/// Signed square root, element-wise.
pub fn power_normalize<F: Real>(v: ArrayView1<F>) -> Array1<F> {
    v.mapv(signed_sqrt)
}

#[inline]
fn signed_sqrt<F: Real>(x: F) -> F {
    if x < F::zero() {
        -(-x).sqrt()
    } else {
        x.sqrt()
    }
}

/// Scales to unit Euclidean norm; the zero vector is returned unchanged.
pub fn l2_normalize<F: Real>(v: ArrayView1<F>) -> Array1<F> {
    let mut out = v.to_owned();
    l2_normalize_inplace(out.view_mut());
    out
}

fn l2_normalize_inplace<F: Real>(mut v: ArrayViewMut1<F>) {
    let norm = v.iter().map(|&x| x * x).sum::<F>().sqrt();
    if norm > F::zero() {
        v.mapv_inplace(|x| x / norm);
    }
}

/// Frame range `[start, end)` of the window centred on frame `t`.
pub fn window_bounds(t: usize, len: usize, window: usize) -> (usize, usize) {
    let start = t.saturating_sub(window / 2);
    let end = (t + window.div_ceil(2)).min(len);
    (start, end.max(start + 1).min(len))
}

/// One power- and L2-normalized Fisher vector per frame, each computed over a
/// window centred on that frame and clamped to the sequence.
pub fn sliding_window_encode<F: Real>(
    gmm: &DiagonalGmm<F>,
    seq: ArrayView2<F>,
    window: usize,
) -> Result<Array2<F>> {
    check_features(gmm, seq)?;
    if window == 0 {
        return invalid("window must be >= 1");
    }
    let len = seq.nrows();
    let codebook = Codebook::new(gmm);
    let mut out = Array2::zeros((len, fv_dim(gmm)));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(t, mut row)| {
            let (start, end) = window_bounds(t, len, window);
            codebook.encode_into(seq.slice(s![start..end, ..]), row.view_mut());
            row.mapv_inplace(signed_sqrt);
            l2_normalize_inplace(row);
        });
    Ok(out)
}
