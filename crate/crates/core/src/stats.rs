//! Moment accumulation and the distributional test statistics.
//!
//! The accumulator tracks central moments up to order four in one streaming
//! pass (Welford updates) and supports merging, so replication batches can be
//! aggregated in any order; merging is associative up to floating-point
//! rounding.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Streaming mean and central moments up to order 4.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentAccumulator {
    count: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.count as f64;
        self.count += 1;
        let n = self.count as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0)
            + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    /// Merges two accumulators (parallel reduction step).
    pub fn merge(a: &Self, b: &Self) -> Self {
        if a.count == 0 {
            return *b;
        }
        if b.count == 0 {
            return *a;
        }
        let na = a.count as f64;
        let nb = b.count as f64;
        let n = na + nb;
        let delta = b.mean - a.mean;
        let delta2 = delta * delta;
        let mean = a.mean + delta * nb / n;
        let m2 = a.m2 + b.m2 + delta2 * na * nb / n;
        let m3 = a.m3
            + b.m3
            + delta.powi(3) * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * b.m2 - nb * a.m2) / n;
        let m4 = a.m4
            + b.m4
            + delta2 * delta2 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * delta2 * (na * na * b.m2 + nb * nb * a.m2) / (n * n)
            + 4.0 * delta * (na * b.m3 - nb * a.m3) / n;
        Self {
            count: a.count + b.count,
            mean,
            m2,
            m3,
            m4,
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count as f64 - 1.0)
        }
    }

    /// Standard error of the mean, `sqrt(variance / count)`.
    pub fn standard_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    /// Approximate standard error of the sample variance,
    /// `sqrt((m4 − (n−3)/(n−1)·m2²) / n)` with `m_k` the central moments.
    pub fn variance_standard_error(&self) -> f64 {
        if self.count < 4 {
            return 0.0;
        }
        let n = self.count as f64;
        let m2 = self.m2 / n;
        let m4 = self.m4 / n;
        ((m4 - (n - 3.0) / (n - 1.0) * m2 * m2) / n).max(0.0).sqrt()
    }

    /// Population-style skewness `g1`.
    pub fn skewness(&self) -> f64 {
        if self.count < 2 || self.m2 == 0.0 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m3 / n) / (self.m2 / n).powf(1.5)
    }

    /// Population-style excess kurtosis `g2`.
    pub fn excess_kurtosis(&self) -> f64 {
        if self.count < 2 || self.m2 == 0.0 {
            return 0.0;
        }
        let n = self.count as f64;
        (self.m4 / n) / (self.m2 / n).powi(2) - 3.0
    }
}

impl FromIterator<f64> for MomentAccumulator {
    fn from_iter<T: IntoIterator<Item = f64>>(iter: T) -> Self {
        let mut acc = Self::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// Two-sided Kolmogorov–Smirnov statistic of `values` against a CDF.
pub fn ks_statistic(values: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in sample"));
    let n = values.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i as f64 + 1.0) / n - f);
    }
    d
}

/// KS statistic against a Gaussian with the given mean and standard deviation.
pub fn ks_against_normal(values: &mut [f64], mean: f64, sd: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("positive sd");
    ks_statistic(values, |x| normal.cdf(x))
}

/// Asymptotic two-sided KS critical value at level `alpha` for a fully
/// specified null distribution: `K_alpha / sqrt(n)`.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    // K_alpha solves the Kolmogorov distribution; the standard table values.
    let k = match alpha {
        a if (a - 0.10).abs() < 1e-12 => 1.224,
        a if (a - 0.05).abs() < 1e-12 => 1.358,
        a if (a - 0.01).abs() < 1e-12 => 1.628,
        a if (a - 0.001).abs() < 1e-12 => 1.949,
        _ => panic!("no tabulated KS constant for level {alpha}"),
    };
    k / (n as f64).sqrt()
}

/// Asymptotic Lilliefors critical value at level `alpha` when the Gaussian
/// mean and variance were fitted from the sample (Dallal–Wilkinson).
pub fn lilliefors_critical(alpha: f64, n: usize) -> f64 {
    let k = match alpha {
        a if (a - 0.05).abs() < 1e-12 => 0.886,
        a if (a - 0.01).abs() < 1e-12 => 1.035,
        _ => panic!("no tabulated Lilliefors constant for level {alpha}"),
    };
    k / (n as f64).sqrt()
}

/// Result of a chi-square goodness-of-fit test against a discrete pmf.
#[derive(Debug, Clone)]
pub struct ChiSquareFit {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub critical_value: f64,
    pub p_value: f64,
    pub bins: usize,
}

impl ChiSquareFit {
    pub fn passes(&self) -> bool {
        self.statistic <= self.critical_value
    }
}

/// Chi-square GOF of integer-valued observations against `pmf(k)`.
///
/// Cells are walked from `k = 0` upward and greedily merged until each
/// expected count reaches `min_expected`; remaining upper-tail mass forms the
/// final cell. The pmf is fully specified (no fitted parameters), so the
/// degrees of freedom are `bins − 1`.
pub fn chi_square_gof(
    observations: &[u64],
    pmf: impl Fn(u64) -> f64,
    min_expected: f64,
    alpha: f64,
) -> ChiSquareFit {
    let n = observations.len() as f64;
    let max_obs = observations.iter().copied().max().unwrap_or(0);

    let mut cells: Vec<(f64, f64)> = Vec::new(); // (expected, observed)
    let mut counts = vec![0u64; (max_obs + 1) as usize];
    for &x in observations {
        counts[x as usize] += 1;
    }

    let mut acc_exp = 0.0;
    let mut acc_obs = 0.0;
    let mut covered = 0.0;
    for k in 0..=max_obs {
        let p = pmf(k);
        covered += p;
        acc_exp += n * p;
        acc_obs += counts[k as usize] as f64;
        if acc_exp >= min_expected {
            cells.push((acc_exp, acc_obs));
            acc_exp = 0.0;
            acc_obs = 0.0;
        }
    }
    // Upper tail beyond the observed maximum.
    acc_exp += n * (1.0 - covered).max(0.0);
    if acc_exp > 0.0 || acc_obs > 0.0 {
        if let Some(last) = cells.last_mut() {
            if acc_exp < min_expected {
                last.0 += acc_exp;
                last.1 += acc_obs;
            } else {
                cells.push((acc_exp, acc_obs));
            }
        } else {
            cells.push((acc_exp, acc_obs));
        }
    }

    let statistic: f64 = cells
        .iter()
        .map(|(e, o)| {
            let d = o - e;
            d * d / e
        })
        .sum();
    let dof = cells.len().saturating_sub(1).max(1);
    let chi = ChiSquared::new(dof as f64).expect("positive dof");
    ChiSquareFit {
        statistic,
        degrees_of_freedom: dof,
        critical_value: chi.inverse_cdf(1.0 - alpha),
        p_value: 1.0 - chi.cdf(statistic),
        bins: cells.len(),
    }
}
