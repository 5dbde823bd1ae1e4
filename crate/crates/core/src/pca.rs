//! PCA with optional whitening, plus the per-clip, per-dimension L2 normalization
//! applied to reduced sequences.

use crate::error::{invalid, Error, Result};
use crate::linalg::{leading_eigenpairs, symmetric_eigen};
use crate::scalar::Real;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Floor added to eigenvalues inside the whitening square root.
pub const WHITEN_EPSILON: f64 = 1e-8;

/// Above this input dimension only the leading directions are computed, by
/// subspace iteration, instead of a full eigendecomposition.
pub const EXACT_EIGEN_MAX_DIM: usize = 384;
const SUBSPACE_TOL: f64 = 1e-10;
const SUBSPACE_MAX_ITERS: usize = 3000;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel<F> {
    pub mean: Array1<F>,
    /// `M × D'`, orthonormal columns ordered by decreasing eigenvalue.
    pub basis: Array2<F>,
    pub eigenvalues: Array1<F>,
    pub whiten: bool,
    pub epsilon: F,
}

impl<F: Real> PcaModel<F> {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn scales(&self) -> Array1<F> {
        if self.whiten {
            self.eigenvalues.mapv(|l| (l + self.epsilon).sqrt())
        } else {
            Array1::ones(self.output_dim())
        }
    }

    /// `basis^T (v - mean)`, divided by `sqrt(eigenvalue + epsilon)` when whitening.
    pub fn project(&self, v: ArrayView1<F>) -> Result<Array1<F>> {
        if v.len() != self.input_dim() {
            return invalid(format!(
                "vector has dimension {}, PCA expects {}",
                v.len(),
                self.input_dim()
            ));
        }
        let centered = &v - &self.mean;
        Ok(self.basis.t().dot(&centered) / &self.scales())
    }

    /// Projects every row of `rows`.
    pub fn project_rows(&self, rows: ArrayView2<F>) -> Result<Array2<F>> {
        if rows.ncols() != self.input_dim() {
            return invalid(format!(
                "rows have dimension {}, PCA expects {}",
                rows.ncols(),
                self.input_dim()
            ));
        }
        let centered = &rows - &self.mean.view().insert_axis(Axis(0));
        let mut out = centered.dot(&self.basis);
        let scales = self.scales();
        for mut row in out.axis_iter_mut(Axis(0)) {
            row /= &scales;
        }
        Ok(out)
    }

    /// Maps a reduced vector back into the input space.
    pub fn unproject(&self, y: ArrayView1<F>) -> Result<Array1<F>> {
        if y.len() != self.output_dim() {
            return invalid(format!(
                "vector has dimension {}, PCA output is {}",
                y.len(),
                self.output_dim()
            ));
        }
        let scaled = &y * &self.scales();
        Ok(self.basis.dot(&scaled) + &self.mean)
    }
}

/// Fits PCA on the rows of `samples`, keeping `out_dim` leading directions.
pub fn fit_pca<F: Real>(samples: ArrayView2<F>, out_dim: usize, whiten: bool) -> Result<PcaModel<F>> {
    let (n, m) = samples.dim();
    if n < 2 {
        return invalid("PCA needs at least two samples");
    }
    if out_dim == 0 || out_dim > (n - 1).min(m) {
        return invalid(format!(
            "output dimension {out_dim} must be in 1..={} for {n} samples of dimension {m}",
            (n - 1).min(m)
        ));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return invalid("samples contain non-finite values");
    }
    let mean = samples.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &samples - &mean.view().insert_axis(Axis(0));
    if centered.iter().all(|&v| v == F::zero()) {
        return Err(Error::Degenerate("input has zero variance in every dimension".into()));
    }
    let denom = F::from_usize_lossy(n - 1);
    let (values, vectors) = if m <= EXACT_EIGEN_MAX_DIM {
        let cov = centered.t().dot(&centered) / denom;
        let (values, vectors) = symmetric_eigen(&cov)?;
        (
            values.slice(s![..;-1]).to_owned(),
            vectors.slice(s![.., ..;-1]).to_owned(),
        )
    } else if n > m {
        let cov = centered.t().dot(&centered) / denom;
        let lead = leading_eigenpairs(m, out_dim, |q| cov.dot(q), 0, SUBSPACE_TOL, SUBSPACE_MAX_ITERS)?;
        (lead.values, lead.vectors)
    } else {
        let apply = |q: &Array2<F>| centered.t().dot(&centered.dot(q)) / denom;
        let lead = leading_eigenpairs(m, out_dim, apply, 0, SUBSPACE_TOL, SUBSPACE_MAX_ITERS)?;
        (lead.values, lead.vectors)
    };

    let mut basis = Array2::zeros((m, out_dim));
    let mut eigenvalues = Array1::zeros(out_dim);
    for j in 0..out_dim {
        eigenvalues[j] = values[j].max(F::zero());
        let mut col = vectors.column(j).to_owned();
        // Sign convention: largest-magnitude entry positive.
        let mut pivot = 0;
        for i in 1..m {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < F::zero() {
            col.mapv_inplace(|v| -v);
        }
        basis.column_mut(j).assign(&col);
    }
    Ok(PcaModel {
        mean,
        basis,
        eigenvalues,
        whiten,
        epsilon: F::lit(WHITEN_EPSILON),
    })
}

/// Divides each column by its Euclidean norm over the clip; zero columns are kept.
pub fn clip_l2_per_dimension<F: Real>(seq: ArrayView2<F>) -> Array2<F> {
    let mut out = seq.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let norm = col.iter().map(|&v| v * v).sum::<F>().sqrt();
        if norm > F::zero() {
            col.mapv_inplace(|v| v / norm);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::{array, s};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn correlated(n: usize, m: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::seeded(seed);
        let mix = Array2::from_shape_fn((m, m), |_| r.random_range(-1.0..1.0));
        let z = Array2::from_shape_fn((n, m), |_| {
            let v: f64 = StandardNormal.sample(&mut r);
            v
        });
        z.dot(&mix) + 3.0
    }

    #[test]
    fn line_y_equals_x() {
        let data = array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [-3.0, -3.0]];
        let p = fit_pca(data.view(), 1, false).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((p.basis[[0, 0]] - h).abs() < 1e-12);
        assert!((p.basis[[1, 0]] - h).abs() < 1e-12);
    }

    #[test]
    fn whitened_training_covariance_is_identity() {
        let data = correlated(400, 6, 2);
        let p = fit_pca(data.view(), 4, true).unwrap();
        let y = p.project_rows(data.view()).unwrap();
        let mean = y.mean_axis(Axis(0)).unwrap();
        let c = &y - &mean;
        let cov = c.t().dot(&c) / (y.nrows() - 1) as f64;
        for i in 0..4 {
            for j in 0..4 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((cov[[i, j]] - id).abs() < 1e-6, "{cov:?}");
            }
        }
        let gram = p.basis.t().dot(&p.basis);
        for i in 0..4 {
            for j in 0..4 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - id).abs() < 1e-8);
            }
        }
        for w in p.eigenvalues.windows(2) {
            assert!(w[0] >= w[1] && w[1] >= 0.0);
        }
    }

    #[test]
    fn project_mean_is_zero() {
        let data = correlated(50, 3, 3);
        let p = fit_pca(data.view(), 2, true).unwrap();
        let y = p.project(p.mean.view()).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-12));
        assert!(p.project(array![1.0].view()).is_err());
    }

    #[test]
    fn rank_deficient_roundtrip() {
        let mut r = rng::seeded(8);
        let basis: Array2<f64> = Array2::from_shape_fn((2, 5), |_| r.random_range(-1.0..1.0));
        let coeff = Array2::from_shape_fn((30, 2), |_| r.random_range(-2.0..2.0));
        let data = coeff.dot(&basis) + 1.5;
        for whiten in [false, true] {
            let p = fit_pca(data.view(), 2, whiten).unwrap();
            for row in data.axis_iter(Axis(0)) {
                let back = p.unproject(p.project(row).unwrap().view()).unwrap();
                for (a, b) in back.iter().zip(row.iter()) {
                    assert!((a - b).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn projection_is_affine() {
        let data = correlated(40, 4, 4);
        let p = fit_pca(data.view(), 3, false).unwrap();
        let u = data.row(0);
        let v = data.row(1);
        let alpha = 0.3;
        let mix = &u * alpha + &v * (1.0 - alpha);
        let lhs = p.project(mix.view()).unwrap();
        let rhs = p.project(u).unwrap() * alpha + p.project(v).unwrap() * (1.0 - alpha);
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn fit_errors() {
        let data = correlated(5, 3, 1);
        assert!(fit_pca(data.view(), 4, false).is_err());
        assert!(fit_pca(data.view(), 0, false).is_err());
        assert!(fit_pca(data.slice(s![..1, ..]), 1, false).is_err());
        let flat = Array2::<f64>::from_elem((10, 3), 2.0);
        assert!(matches!(fit_pca(flat.view(), 1, true), Err(Error::Degenerate(_))));
    }

    #[test]
    fn clip_normalization() {
        let seq: Array2<f64> = array![[3.0, 0.0, 1.0], [4.0, 0.0, -1.0]];
        let out = clip_l2_per_dimension(seq.view());
        assert_eq!(out.column(0), array![0.6, 0.8]);
        assert_eq!(out.column(1), array![0.0, 0.0]);
        let single = clip_l2_per_dimension(array![[2.0, -0.5, 0.0]].view());
        assert_eq!(single, array![[1.0, -1.0, 0.0]]);
        let mut scaled = seq.clone();
        scaled.column_mut(2).mapv_inplace(|v| v * 7.0);
        let out2 = clip_l2_per_dimension(scaled.view());
        for (a, b) in out.iter().zip(out2.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn check_whitened(n: usize, m: usize, k: usize) {
        let mut r = rng::seeded(n as u64);
        let latent: Array2<f64> = Array2::from_shape_fn((n, 12), |_| StandardNormal.sample(&mut r));
        let mix: Array2<f64> = Array2::from_shape_fn((12, m), |_| StandardNormal.sample(&mut r));
        let noise: Array2<f64> = Array2::from_shape_fn((n, m), |_| 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut r));
        let data = latent.dot(&mix) + noise;
        let pca = fit_pca(data.view(), k, true).unwrap();
        let y = pca.project_rows(data.view()).unwrap();
        let c = &y - &y.mean_axis(Axis(0)).unwrap();
        let cov = c.t().dot(&c) / (n - 1) as f64;
        let gram = pca.basis.t().dot(&pca.basis);
        for i in 0..k {
            for j in 0..k {
                let id = if i == j { 1.0 } else { 0.0 };
                assert!((cov[[i, j]] - id).abs() < 1e-6, "cov {i},{j} = {}", cov[[i, j]]);
                assert!((gram[[i, j]] - id).abs() < 1e-8);
            }
        }
        assert!(pca.eigenvalues.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn high_dimensional_inputs_use_leading_directions() {
        check_whitened(100, 500, 8);
        check_whitened(700, 450, 10);
    }
}
