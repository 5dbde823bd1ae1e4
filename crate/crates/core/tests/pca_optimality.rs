use genseg_core::linalg::symmetric_eigen;
use genseg_core::pca::fit_pca;
use genseg_core::rng;
use ndarray::{Array2, Axis};
use rand_distr::{Distribution, StandardNormal};

/// Variance captured by the columns of an orthonormal `basis`.
fn captured(centered: &Array2<f64>, basis: &Array2<f64>) -> f64 {
    let y = centered.dot(basis);
    y.iter().map(|v| v * v).sum::<f64>() / (centered.nrows() - 1) as f64
}

/// Orthonormal columns by Gram-Schmidt on a Gaussian matrix.
fn random_orthonormal(r: &mut rng::Rng, m: usize, k: usize) -> Array2<f64> {
    let mut q: Array2<f64> = Array2::from_shape_fn((m, k), |_| StandardNormal.sample(r));
    for j in 0..k {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-proj, &qi);
        }
        let n = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / n);
    }
    q
}

#[test]
fn pca_captures_more_variance_than_random_projections() {
    let mut r = rng::seeded(11);
    let (n, m, k) = (400, 12, 4);
    let scales: Vec<f64> = (0..m).map(|i| 3.0 / (1.0 + i as f64)).collect();
    let mix = random_orthonormal(&mut r, m, m);
    let data = Array2::from_shape_fn((n, m), |(_, j)| scales[j] * Distribution::<f64>::sample(&StandardNormal, &mut r)).dot(&mix.t());
    let pca = fit_pca(data.view(), k, false).unwrap();
    let centered = &data - &data.mean_axis(Axis(0)).unwrap();
    let best = captured(&centered, &pca.basis);
    assert!((best - pca.eigenvalues.sum()).abs() < 1e-9 * best);
    for _ in 0..100 {
        let q = random_orthonormal(&mut r, m, k);
        assert!(captured(&centered, &q) <= best + 1e-9);
    }
}

#[test]
fn eigensolver_reconstructs_random_symmetric_matrices() {
    let mut r = rng::seeded(12);
    for m in 1..15 {
        let a: Array2<f64> = Array2::from_shape_fn((m, m), |_| StandardNormal.sample(&mut r));
        let sym = &a + &a.t();
        let (vals, vecs) = symmetric_eigen(&sym).unwrap();
        let rebuilt = vecs.dot(&Array2::from_diag(&vals)).dot(&vecs.t());
        for (x, y) in rebuilt.iter().zip(sym.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
        assert!(vals.windows(2).into_iter().all(|w| w[0] <= w[1]));
    }
}
