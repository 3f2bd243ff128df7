//! Monte Carlo summaries, regression and goodness-of-fit tests.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::special;

/// Streaming mean and variance (Welford), mergeable across workers.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &RunningStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        self.mean += delta * other.n as f64 / n as f64;
        self.m2 += other.m2 + delta * delta * (self.n as f64) * (other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn sd(&self) -> f64 {
        libm::sqrt(self.variance())
    }

    pub fn se(&self) -> f64 {
        if self.n == 0 {
            return f64::INFINITY;
        }
        libm::sqrt(self.variance() / self.n as f64)
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// `(mean, standard error)` of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let s: RunningStats = xs.iter().copied().collect();
    (s.mean(), s.se())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: f64,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = libm::exp(-2.0 * k * k * lambda * lambda);
        sum += sign * term;
        if term < 1e-18 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let sq = libm::sqrt(n_eff);
    kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if sample.is_empty() {
        return Err(Error::Degenerate("KS test needs a nonempty sample".into()));
    }
    let mut v = sample.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n),
        n_effective: n,
    })
}

/// Two-sample Kolmogorov–Smirnov test. Ties are handled by advancing both
/// empirical CDFs past the common value before comparing.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate("KS test needs two nonempty samples".into()));
    }
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = if x[i] <= y[j] { x[i] } else { y[j] };
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_eff = (n as f64 * m as f64) / (n + m) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: ks_p_value(d, n_eff),
        n_effective: n_eff,
    })
}

/// Ordinary least squares `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub intercept_se: f64,
    pub r_squared: f64,
    pub n: usize,
}

impl LinearFit {
    /// Normal-approximation 95% interval for the slope.
    pub fn slope_ci95(&self) -> (f64, f64) {
        (self.slope - 1.96 * self.slope_se, self.slope + 1.96 * self.slope_se)
    }
}

pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    weighted_linear_regression(x, y, None)
}

/// Weighted least squares with weights `w_i` (typically `1/se_i²`). With
/// weights the slope SE is the model-based one, rescaled by the residual
/// variance when there are more than two points.
pub fn weighted_linear_regression(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    if let Some(w) = weights {
        if w.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: w.len() });
        }
    }
    if n < 2 {
        return Err(Error::Degenerate("regression needs at least two points".into()));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(w).sum();
    let mx = (0..n).map(|i| w(i) * x[i]).sum::<f64>() / sw;
    let my = (0..n).map(|i| w(i) * y[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| w(i) * (x[i] - mx) * (x[i] - mx)).sum();
    let sxy: f64 = (0..n).map(|i| w(i) * (x[i] - mx) * (y[i] - my)).sum();
    let syy: f64 = (0..n).map(|i| w(i) * (y[i] - my) * (y[i] - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Degenerate("regression abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = (0..n)
        .map(|i| {
            let r = y[i] - intercept - slope * x[i];
            w(i) * r * r
        })
        .sum();
    let sigma2 = if n > 2 { rss / (n - 2) as f64 } else { 0.0 };
    let sigma2 = match weights {
        // Unit residual scale, inflated when the scatter exceeds the weights.
        Some(_) => sigma2.max(1.0),
        None => sigma2,
    };
    let slope_se = libm::sqrt(sigma2 / sxx);
    let intercept_se = libm::sqrt(sigma2 * (1.0 / sw + mx * mx / sxx));
    let r_squared = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        intercept_se,
        r_squared,
        n,
    })
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = alloc::vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / libm::sqrt(sxx * syy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpearmanResult {
    pub rho: f64,
    /// One-sided p-value for the alternative "negative association".
    pub p_decreasing: f64,
    /// One-sided p-value for the alternative "positive association".
    pub p_increasing: f64,
    /// True when the p-values come from full permutation enumeration.
    pub exact: bool,
}

/// Spearman rank correlation. Up to 8 points the p-values are exact
/// (all permutations of the ranks); above that a t approximation is used.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<SpearmanResult> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    if n < 3 {
        return Err(Error::Degenerate("rank correlation needs at least three points".into()));
    }
    let rx = ranks(x);
    let ry = ranks(y);
    let rho = pearson(&rx, &ry);
    if n <= 8 {
        let mut perm = ry.clone();
        let mut le = 0u64;
        let mut ge = 0u64;
        let mut total = 0u64;
        let tol = 1e-12;
        heap_permutations(&mut perm, &mut |p| {
            let r = pearson(&rx, p);
            total += 1;
            if r <= rho + tol {
                le += 1;
            }
            if r >= rho - tol {
                ge += 1;
            }
        });
        return Ok(SpearmanResult {
            rho,
            p_decreasing: le as f64 / total as f64,
            p_increasing: ge as f64 / total as f64,
            exact: true,
        });
    }
    let df = (n - 2) as f64;
    let t = if rho.abs() >= 1.0 {
        rho.signum() * f64::INFINITY
    } else {
        rho * libm::sqrt(df / (1.0 - rho * rho))
    };
    Ok(SpearmanResult {
        rho,
        p_decreasing: 1.0 - special::student_t_sf(t, df),
        p_increasing: special::student_t_sf(t, df),
        exact: false,
    })
}

/// Visit every permutation of `v` (Heap's algorithm, iterative).
pub fn heap_permutations<T>(v: &mut [T], visit: &mut impl FnMut(&[T])) {
    let n = v.len();
    let mut c = alloc::vec![0usize; n];
    visit(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            visit(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// CDF of one coordinate of a uniform point on the unit sphere of ℝᵈ:
/// `(1+x)/2` is Beta((d-1)/2, (d-1)/2) distributed.
pub fn sphere_coordinate_cdf(d: usize, x: f64) -> f64 {
    if x <= -1.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (d as f64 - 1.0) / 2.0;
    special::incomplete_beta(a, a, (1.0 + x) / 2.0)
}
