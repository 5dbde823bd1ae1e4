//! Symmetric eigendecomposition: Householder tridiagonalization followed by
//! the implicit QL method (the classic EISPACK `tred2`/`tql2` pair).

use crate::error::{Error, Result};
use crate::scalar::Real;
use ndarray::{s, Array1, Array2, Axis, ShapeBuilder};
use rand_distr::{Distribution, StandardNormal};

/// Eigenvalues (ascending) and the matching unit eigenvectors as columns.
pub fn symmetric_eigen<F: Real>(a: &Array2<F>) -> Result<(Array1<F>, Array2<F>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::InvalidInput("matrix must be square".into()));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    // Column-major storage: the inner loops below walk down columns.
    let mut v = Array2::zeros((n, n).f());
    v.assign(a);
    let mut d = Array1::zeros(n);
    let mut e = Array1::zeros(n);
    tred2(&mut v, &mut d, &mut e);
    tql2(&mut v, &mut d, &mut e)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap_or(std::cmp::Ordering::Equal));
    let values = Array1::from_iter(order.iter().map(|&i| d[i]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok((values, vectors))
}

/// Leading `k` eigenpairs of a symmetric positive semi-definite `dim × dim`
/// operator, given only its action on a block of columns. Block subspace
/// iteration with a Rayleigh-Ritz step; stops when every kept residual
/// `|A v - theta v|` is below `tol * theta_max`. Eigenvalues come out
/// descending, and `V^T A V` is diagonal up to rounding whether or not the
/// iteration converged.
pub fn leading_eigenpairs<F: Real>(
    dim: usize,
    k: usize,
    apply: impl Fn(&Array2<F>) -> Array2<F>,
    seed: u64,
    tol: f64,
    max_iters: usize,
) -> Result<LeadingEigen<F>> {
    if k == 0 || k > dim {
        return Err(Error::InvalidInput(format!("cannot take {k} eigenpairs of a {dim}-dimensional operator")));
    }
    let block = dim.min(k + (k / 2).max(8));
    let mut r = crate::rng::seeded(seed);
    let mut q = Array2::from_shape_fn((dim, block), |_| F::lit(StandardNormal.sample(&mut r)));
    orthonormalize_columns(&mut q, &mut r);
    let mut iterations = 0;
    loop {
        iterations += 1;
        let z = apply(&q);
        let projected = q.t().dot(&z);
        let sym = (&projected + &projected.t()) * F::lit(0.5);
        let (theta, w) = symmetric_eigen(&sym)?;
        // Descending Ritz pairs.
        let w = w.slice(s![.., ..;-1]).to_owned();
        let theta: Array1<F> = theta.slice(s![..;-1]).to_owned();
        let vectors = q.dot(&w);
        let images = z.dot(&w);
        let scale = theta[0].abs().max(F::min_positive_value());
        let mut worst = F::zero();
        for j in 0..k {
            let res = &images.column(j) - &(&vectors.column(j) * theta[j]);
            worst = worst.max(res.dot(&res).sqrt() / scale);
        }
        let converged = worst.as_f64() <= tol;
        if converged || iterations >= max_iters {
            return Ok(LeadingEigen {
                values: theta.slice(s![..k]).to_owned(),
                vectors: vectors.slice(s![.., ..k]).to_owned(),
                iterations,
                converged,
            });
        }
        q = images;
        orthonormalize_columns(&mut q, &mut r);
    }
}

#[derive(Debug, Clone)]
pub struct LeadingEigen<F> {
    pub values: Array1<F>,
    /// Unit eigenvectors as columns.
    pub vectors: Array2<F>,
    pub iterations: usize,
    pub converged: bool,
}

/// Modified Gram-Schmidt with one re-orthogonalization pass. Columns that
/// vanish (rank deficiency) are replaced by fresh random directions.
fn orthonormalize_columns<F: Real>(q: &mut Array2<F>, r: &mut crate::rng::Rng) {
    let cols = q.ncols();
    let mut t = q.t().to_owned();
    for j in 0..cols {
        let mut attempts = 0;
        loop {
            let before = t.row(j).dot(&t.row(j)).sqrt();
            for _ in 0..2 {
                for i in 0..j {
                    let c = t.row(i).dot(&t.row(j));
                    let (done, mut rest) = t.view_mut().split_at(Axis(0), j);
                    rest.row_mut(0).scaled_add(-c, &done.row(i));
                }
            }
            let norm = t.row(j).dot(&t.row(j)).sqrt();
            if norm > F::lit(1e-10) * before && norm > F::zero() {
                t.row_mut(j).mapv_inplace(|v| v / norm);
                break;
            }
            attempts += 1;
            assert!(attempts < 100, "could not extend an orthonormal basis");
            t.row_mut(j).mapv_inplace(|_| F::lit(StandardNormal.sample(r)));
        }
    }
    q.assign(&t.t());
}

fn tred2<F: Real>(v: &mut Array2<F>, d: &mut Array1<F>, e: &mut Array1<F>) {
    let n = d.len();
    let zero = F::zero();
    for j in 0..n {
        d[j] = v[[n - 1, j]];
    }
    for i in (1..n).rev() {
        let mut scale = zero;
        let mut h = zero;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == zero {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[[i - 1, j]];
                v[[i, j]] = zero;
                v[[j, i]] = zero;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > zero {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for j in 0..i {
                e[j] = zero;
            }
            for j in 0..i {
                f = d[j];
                v[[j, i]] = f;
                g = e[j] + v[[j, j]] * f;
                for k in j + 1..i {
                    g += v[[k, j]] * d[k];
                    e[k] += v[[k, j]] * f;
                }
                e[j] = g;
            }
            f = zero;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    let upd = f * e[k] + g * d[k];
                    v[[k, j]] -= upd;
                }
                d[j] = v[[i - 1, j]];
                v[[i, j]] = zero;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[[n - 1, i]] = v[[i, i]];
        v[[i, i]] = F::one();
        let h = d[i + 1];
        if h != zero {
            for k in 0..=i {
                d[k] = v[[k, i + 1]] / h;
            }
            for j in 0..=i {
                let mut g = zero;
                for k in 0..=i {
                    g += v[[k, i + 1]] * v[[k, j]];
                }
                for k in 0..=i {
                    let upd = g * d[k];
                    v[[k, j]] -= upd;
                }
            }
        }
        for k in 0..=i {
            v[[k, i + 1]] = zero;
        }
    }
    for j in 0..n {
        d[j] = v[[n - 1, j]];
        v[[n - 1, j]] = zero;
    }
    v[[n - 1, n - 1]] = F::one();
    e[0] = zero;
}

fn tql2<F: Real>(v: &mut Array2<F>, d: &mut Array1<F>, e: &mut Array1<F>) -> Result<()> {
    let n = d.len();
    let zero = F::zero();
    let one = F::one();
    let two = F::lit(2.0);
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = zero;
    let mut f = zero;
    let mut tst1 = zero;
    let eps = F::epsilon();
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > 60 {
                    return Err(Error::Degenerate("eigen solver did not converge".into()));
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(one);
                if p < zero {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for i in l + 2..n {
                    d[i] -= h;
                }
                f += h;

                p = d[m];
                let mut c = one;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = zero;
                let mut s2 = zero;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for k in 0..n {
                        h = v[[k, i + 1]];
                        v[[k, i + 1]] = s * v[[k, i]] + c * h;
                        v[[k, i]] = c * v[[k, i]] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = zero;
    }
    Ok(())
}
