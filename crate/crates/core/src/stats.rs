//! Kolmogorov-Smirnov goodness-of-fit tests.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    /// Asymptotic p-value with the small-sample correction
    /// `lambda = (sqrt(n) + 0.12 + 0.11 / sqrt(n)) D`.
    pub p_value: f64,
    pub effective_n: f64,
}

impl KsResult {
    pub fn rejects_at(&self, significance: f64) -> bool {
        self.p_value < significance
    }
}

/// `Q(lambda) = 2 sum_{j >= 1} (-1)^{j-1} exp(-2 j^2 lambda^2)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-17 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn finish(statistic: f64, ne: f64) -> KsResult {
    let sq = ne.sqrt();
    KsResult {
        statistic,
        p_value: kolmogorov_q((sq + 0.12 + 0.11 / sq) * statistic),
        effective_n: ne,
    }
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.is_empty() {
        return Err(Error::InsufficientData("empty sample".into()));
    }
    if xs.iter().any(|x| x.is_nan()) {
        return Err(Error::InsufficientData("sample contains NaN".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// One-sample test of `xs` against a continuous c.d.f.
pub fn ks_one_sample<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> Result<KsResult> {
    let v = sorted(xs)?;
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(finish(d, n))
}

/// Two-sample test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let x = sorted(a)?;
    let y = sorted(b)?;
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = x[i].min(y[j]);
        while i < n && x[i] <= t {
            i += 1;
        }
        while j < m && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    Ok(finish(d, ne))
}
