//! Per-dimension normality testing: Jarque-Bera and Lilliefors.
//!
//! Lilliefors p-values come from a Monte Carlo table of the null distribution
//! of the statistic, simulated per sample-size bucket and interpolated
//! linearly in `n` between buckets. Buckets are simulated lazily, kept in
//! memory, and optionally cached on disk.

use crate::error::{invalid, Error, Result};
use crate::rng;
use crate::scalar::Real;
use ndarray::ArrayView2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::erf::erfc;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, OnceLock};

/// Smallest sample size either test accepts.
pub const MIN_SAMPLES: usize = 8;
pub const DEFAULT_SIMULATIONS: usize = 10_000;
pub const DEFAULT_TABLE_SEED: u64 = 0x1_111E_F0A5;
/// Environment variable naming a directory for the on-disk table cache.
pub const CACHE_ENV: &str = "GENSEG_LILLIEFORS_CACHE";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    /// Fail-to-reject at the requested significance level.
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NormalityTest {
    Lilliefors,
    JarqueBera,
}

impl NormalityTest {
    pub fn name(self) -> &'static str {
        match self {
            NormalityTest::Lilliefors => "lilliefors",
            NormalityTest::JarqueBera => "jarque_bera",
        }
    }
}

fn to_f64<F: Real>(samples: &[F]) -> Result<Vec<f64>> {
    if samples.len() < MIN_SAMPLES {
        return invalid(format!(
            "normality tests need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        ));
    }
    let v: Vec<f64> = samples.iter().map(|x| x.as_f64()).collect();
    if v.iter().any(|x| !x.is_finite()) {
        return invalid("samples contain non-finite values");
    }
    Ok(v)
}

/// Sample skewness and (non-excess) kurtosis from central moments.
pub fn skewness_kurtosis(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 || m2 <= f64::EPSILON * mean.abs().powi(2) {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    Ok((m3 / m2.powf(1.5), m4 / (m2 * m2)))
}

/// `JB = n/6 * (S^2 + (K - 3)^2 / 4)`, p-value from chi-square with two degrees of freedom.
pub fn jarque_bera<F: Real>(samples: &[F], alpha: f64) -> Result<TestOutcome> {
    let x = to_f64(samples)?;
    let (s, k) = skewness_kurtosis(&x)?;
    let n = x.len() as f64;
    let statistic = n / 6.0 * (s * s + (k - 3.0).powi(2) / 4.0);
    let p_value = (-statistic / 2.0).exp();
    Ok(TestOutcome {
        statistic,
        p_value,
        pass: p_value > alpha,
    })
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Kolmogorov-Smirnov distance between the sample and a normal whose mean and
/// standard deviation are estimated from the same sample.
pub fn lilliefors_statistic<F: Real>(samples: &[F]) -> Result<f64> {
    let mut x = to_f64(samples)?;
    ks_against_fitted_normal(&mut x)
}

fn ks_against_fitted_normal(x: &mut [f64]) -> Result<f64> {
    let n = x.len();
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    if var <= 0.0 || var <= f64::EPSILON * mean * mean {
        return Err(Error::Degenerate("sample has zero variance".into()));
    }
    let sd = var.sqrt();
    x.sort_by(|a, b| a.total_cmp(b));
    let mut d = 0.0f64;
    for (i, &v) in x.iter().enumerate() {
        let cdf = normal_cdf((v - mean) / sd);
        let above = (i + 1) as f64 / nf - cdf;
        let below = cdf - i as f64 / nf;
        d = d.max(above).max(below);
    }
    Ok(d)
}

/// Lilliefors test using the process-wide Monte Carlo table.
pub fn lilliefors<F: Real>(samples: &[F], alpha: f64) -> Result<TestOutcome> {
    lilliefors_with(LillieforsTable::global(), samples, alpha)
}

pub fn lilliefors_with<F: Real>(table: &LillieforsTable, samples: &[F], alpha: f64) -> Result<TestOutcome> {
    let statistic = lilliefors_statistic(samples)?;
    let p_value = table.p_value(statistic, samples.len());
    Ok(TestOutcome {
        statistic,
        p_value,
        pass: p_value > alpha,
    })
}

/// Monte Carlo null distribution of the Lilliefors statistic.
#[derive(Debug)]
pub struct LillieforsTable {
    simulations: usize,
    seed: u64,
    cache_dir: Option<PathBuf>,
    buckets: Mutex<BTreeMap<usize, Arc<Vec<f64>>>>,
}

/// Bucket sample sizes: every `n` in `8..=50`, then geometric with ratio 1.25.
pub fn bucket_sizes() -> &'static [usize] {
    static SIZES: OnceLock<Vec<usize>> = OnceLock::new();
    SIZES.get_or_init(|| {
        let mut sizes: Vec<usize> = (MIN_SAMPLES..=50).collect();
        let mut x = 50.0f64;
        while *sizes.last().unwrap() < 20_000 {
            x *= 1.25;
            sizes.push(x.round() as usize);
        }
        sizes
    })
}

impl LillieforsTable {
    pub fn new(simulations: usize, seed: u64) -> Self {
        Self {
            simulations: simulations.max(1),
            seed,
            cache_dir: None,
            buckets: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.cache_dir = Some(dir.into());
        self
    }

    /// Shared table with [`DEFAULT_SIMULATIONS`] draws per bucket.
    pub fn global() -> &'static LillieforsTable {
        static TABLE: OnceLock<LillieforsTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            let table = LillieforsTable::new(DEFAULT_SIMULATIONS, DEFAULT_TABLE_SEED);
            match std::env::var_os(CACHE_ENV) {
                Some(dir) => table.with_cache_dir(dir),
                None => table,
            }
        })
    }

    pub fn simulations(&self) -> usize {
        self.simulations
    }

    /// Sorted simulated statistics for bucket size `n`.
    pub fn bucket(&self, n: usize) -> Arc<Vec<f64>> {
        if let Some(b) = self.buckets.lock().expect("table lock").get(&n) {
            return b.clone();
        }
        let values = Arc::new(self.load_or_simulate(n));
        self.buckets
            .lock()
            .expect("table lock")
            .entry(n)
            .or_insert(values)
            .clone()
    }

    fn cache_path(&self, n: usize) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|d| {
            d.join(format!(
                "lilliefors-n{n}-sims{}-seed{}.txt",
                self.simulations, self.seed
            ))
        })
    }

    fn load_or_simulate(&self, n: usize) -> Vec<f64> {
        if let Some(path) = self.cache_path(n) {
            if let Ok(text) = std::fs::read_to_string(&path) {
                let parsed: std::result::Result<Vec<f64>, _> =
                    text.lines().map(|l| l.trim().parse::<f64>()).collect();
                if let Ok(v) = parsed {
                    if v.len() == self.simulations {
                        return v;
                    }
                }
            }
        }
        let values = self.simulate(n);
        if let Some(path) = self.cache_path(n) {
            let mut text = String::with_capacity(values.len() * 24);
            for v in &values {
                let _ = writeln!(text, "{v:.17e}");
            }
            let _ = std::fs::create_dir_all(path.parent().expect("cache path has parent"));
            // Cache writes are best-effort: a failed write only costs a re-simulation.
            let _ = std::fs::write(&path, text);
        }
        values
    }

    fn simulate(&self, n: usize) -> Vec<f64> {
        let bucket_seed = self.seed ^ (n as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut stats: Vec<f64> = (0..self.simulations)
            .into_par_iter()
            .map_init(
                || vec![0.0f64; n],
                |buf, i| {
                    let mut r = rng::derived(bucket_seed, i as u64);
                    for v in buf.iter_mut() {
                        *v = StandardNormal.sample(&mut r);
                    }
                    ks_against_fitted_normal(buf).unwrap_or(0.0)
                },
            )
            .collect();
        stats.sort_by(|a, b| a.total_cmp(b));
        stats
    }

    fn tail_fraction(&self, n: usize, statistic: f64) -> f64 {
        let b = self.bucket(n);
        let below = b.partition_point(|&v| v < statistic);
        (b.len() - below) as f64 / b.len() as f64
    }

    /// `P(D >= statistic)` under the null for sample size `n`.
    pub fn p_value(&self, statistic: f64, n: usize) -> f64 {
        let sizes = bucket_sizes();
        let n = n.max(MIN_SAMPLES);
        let largest = *sizes.last().unwrap();
        if n >= largest {
            // sqrt(n) * D is asymptotically distribution-free.
            let scaled = statistic * (n as f64 / largest as f64).sqrt();
            return self.tail_fraction(largest, scaled);
        }
        let hi_idx = sizes.partition_point(|&s| s < n);
        let hi = sizes[hi_idx];
        if hi == n {
            return self.tail_fraction(n, statistic);
        }
        let lo = sizes[hi_idx - 1];
        let p_lo = self.tail_fraction(lo, statistic);
        let p_hi = self.tail_fraction(hi, statistic);
        let w = (n - lo) as f64 / (hi - lo) as f64;
        p_lo + (p_hi - p_lo) * w
    }
}

/// Pass fractions per test and significance level.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalityReport {
    pub samples_per_dim: usize,
    pub n_dims: usize,
    pub rows: Vec<ReportRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub test: NormalityTest,
    pub alpha: f64,
    pub fraction_pass: f64,
}

impl NormalityReport {
    pub fn fraction(&self, test: NormalityTest, alpha: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.test == test && r.alpha == alpha)
            .map(|r| r.fraction_pass)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("test,alpha,fraction_pass,n_dims,samples_per_dim\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.test.name(),
                r.alpha,
                r.fraction_pass,
                self.n_dims,
                self.samples_per_dim
            );
        }
        out
    }
}

/// Runs both tests on a random row subsample of every column.
pub fn dimension_pass_report<F: Real>(
    data: ArrayView2<F>,
    alphas: &[f64],
    samples_per_dim: usize,
    seed: u64,
) -> Result<NormalityReport> {
    dimension_pass_report_with(LillieforsTable::global(), data, alphas, samples_per_dim, seed)
}

pub fn dimension_pass_report_with<F: Real>(
    table: &LillieforsTable,
    data: ArrayView2<F>,
    alphas: &[f64],
    samples_per_dim: usize,
    seed: u64,
) -> Result<NormalityReport> {
    let (n, dims) = data.dim();
    if alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
        return invalid("significance levels must lie in (0, 1)");
    }
    if samples_per_dim > n {
        return invalid(format!("samples_per_dim {samples_per_dim} exceeds {n} rows"));
    }
    if samples_per_dim < MIN_SAMPLES {
        return invalid(format!("samples_per_dim must be >= {MIN_SAMPLES}"));
    }
    if dims == 0 {
        return invalid("data has no dimensions");
    }
    // p-values per dimension; None marks a degenerate dimension (always rejected).
    let p_values: Vec<(Option<f64>, Option<f64>)> = (0..dims)
        .into_par_iter()
        .map(|d| {
            let mut r = rng::derived(seed, d as u64);
            let mut idx = rand::seq::index::sample(&mut r, n, samples_per_dim).into_vec();
            idx.sort_unstable();
            let column = data.column(d);
            let sub: Vec<F> = idx.iter().map(|&i| column[i]).collect();
            let lil = lilliefors_with(table, &sub, 0.5).ok().map(|o| o.p_value);
            let jb = jarque_bera(&sub, 0.5).ok().map(|o| o.p_value);
            (lil, jb)
        })
        .collect();

    let mut rows = Vec::new();
    for test in [NormalityTest::Lilliefors, NormalityTest::JarqueBera] {
        for &alpha in alphas {
            let passed = p_values
                .iter()
                .filter(|(lil, jb)| {
                    let p = match test {
                        NormalityTest::Lilliefors => lil,
                        NormalityTest::JarqueBera => jb,
                    };
                    p.is_some_and(|p| p > alpha)
                })
                .count();
            rows.push(ReportRow {
                test,
                alpha,
                fraction_pass: passed as f64 / dims as f64,
            });
        }
    }
    Ok(NormalityReport {
        samples_per_dim,
        n_dims: dims,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
    }

    #[test]
    fn jb_zero_for_normal_moments() {
        // {-1, 0, 1} with P(+-1) = 1/6 each: skewness 0, kurtosis exactly 3.
        let mut x = vec![-1.0f64, 1.0];
        x.extend([0.0; 4]);
        let x = x.repeat(2);
        let (s, k) = skewness_kurtosis(&x).unwrap();
        assert!(s.abs() < 1e-15 && (k - 3.0).abs() < 1e-12);
        let out = jarque_bera(&x, 0.05).unwrap();
        assert!(out.statistic.abs() < 1e-12);
        assert!((out.p_value - 1.0).abs() < 1e-12);
        assert!(out.pass);
    }

    #[test]
    fn constant_and_short_samples() {
        assert!(matches!(jarque_bera(&[2.0f64; 20], 0.05), Err(Error::Degenerate(_))));
        assert!(matches!(lilliefors(&[2.0f64; 20], 0.05), Err(Error::Degenerate(_))));
        assert!(jarque_bera(&[1.0f64, 2.0, 3.0], 0.05).is_err());
    }

    #[test]
    fn statistic_matches_naive_double_loop() {
        let x = normals(50, 3);
        let d = lilliefors_statistic(&x).unwrap();
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mut naive = 0.0f64;
        for &a in &x {
            let at = x.iter().filter(|&&b| b <= a).count() as f64 / n;
            let left = x.iter().filter(|&&b| b < a).count() as f64 / n;
            let cdf = normal_cdf((a - mean) / sd);
            naive = naive.max((at - cdf).abs()).max((left - cdf).abs());
        }
        assert!((d - naive).abs() < 1e-15);
    }

    #[test]
    fn uniform_rejected_by_jb() {
        let mut r = rng::seeded(4);
        let x: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
        assert!(!jarque_bera(&x, 0.001).unwrap().pass);
    }

    #[test]
    fn exponential_rejected_by_lilliefors() {
        let mut r = rng::seeded(5);
        let x: Vec<f64> = (0..2000).map(|_| -(1.0 - r.random::<f64>()).ln()).collect();
        let out = lilliefors(&x, 0.01).unwrap();
        assert!(!out.pass, "{out:?}");
    }

    #[test]
    fn table_is_deterministic_and_cached() {
        let dir = std::env::temp_dir().join(format!("genseg-lil-{}", std::process::id()));
        let a = LillieforsTable::new(500, 7).with_cache_dir(&dir);
        let first = a.bucket(20);
        let b = LillieforsTable::new(500, 7).with_cache_dir(&dir);
        assert_eq!(*first, *b.bucket(20));
        assert_eq!(*first, *LillieforsTable::new(500, 7).bucket(20));
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn p_value_interpolates_between_buckets() {
        let t = LillieforsTable::new(2000, 1);
        let stat = 0.12;
        let lo = t.p_value(stat, 50);
        let hi = t.p_value(stat, 62);
        let mid = t.p_value(stat, 56);
        assert!(mid <= lo.max(hi) && mid >= lo.min(hi));
        assert!(hi <= lo);
    }

    #[test]
    fn report_on_normal_data() {
        let mut r = rng::seeded(9);
        let data = Array2::from_shape_fn((600, 10), |_| {
            let v: f64 = StandardNormal.sample(&mut r);
            v
        });
        let alphas = [0.5, 0.05, 0.001];
        let table = LillieforsTable::new(2000, 3);
        let rep = dimension_pass_report_with(&table, data.view(), &alphas, 400, 1).unwrap();
        assert_eq!(rep.rows.len(), 6);
        for test in [NormalityTest::Lilliefors, NormalityTest::JarqueBera] {
            let f: Vec<f64> = alphas.iter().map(|&a| rep.fraction(test, a).unwrap()).collect();
            assert!(f[0] <= f[1] && f[1] <= f[2]);
        }
        let csv = rep.to_csv();
        assert!(csv.starts_with("test,alpha,fraction_pass,n_dims,samples_per_dim\n"));
        assert_eq!(csv.lines().count(), 7);
        assert!(dimension_pass_report_with(&table, data.view(), &[1.5], 100, 1).is_err());
        assert!(dimension_pass_report_with(&table, data.view(), &[0.5], 700, 1).is_err());
    }
}
