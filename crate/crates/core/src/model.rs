//! The truncated triangular array `X_nj = Y_j 1(|Y_j| <= M_n)`, its row sums,
//! truncation schedules `n -> M_n`, and the growth-condition validators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{quantile_b_n, HeavyTailLaw};
use crate::error::{invalid, Result};
use crate::parallel::CompensatedSum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `alpha >= k`, `alpha > 1`.
    AlphaGeK,
    /// `0 < alpha < k / (k + 2)`.
    AlphaSmall,
}

/// Parametric truncation schedules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// `M_n = a n^b`.
    Power { a: f64, b: f64 },
    /// `M_n = a b_n n^c`.
    QuantilePower { a: f64, c: f64 },
}

impl Schedule {
    /// Exponent `e` with `M_n = n^{e + o(1)}` for a law of tail index `alpha`.
    pub fn growth_exponent(&self, alpha: f64) -> f64 {
        match *self {
            Schedule::Power { b, .. } => b,
            Schedule::QuantilePower { c, .. } => 1.0 / alpha + c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub law: HeavyTailLaw,
    pub k: u32,
    pub regime: Regime,
    pub schedule: Schedule,
    pub gamma: f64,
}

impl ModelConfig {
    pub fn new(
        law: HeavyTailLaw,
        k: u32,
        regime: Regime,
        schedule: Schedule,
        gamma: f64,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            law,
            k,
            regime,
            schedule,
            gamma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(s).map_err(|e| invalid("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.law.validate()?;
        if self.k == 0 {
            return Err(invalid("k", "must be positive"));
        }
        let alpha = self.law.alpha();
        let k = self.k as f64;
        match self.regime {
            Regime::AlphaGeK => {
                if !(alpha >= k && alpha > 1.0) {
                    return Err(invalid(
                        "regime",
                        format!("alpha >= k and alpha > 1 required, got alpha={alpha}, k={k}"),
                    ));
                }
            }
            Regime::AlphaSmall => {
                if !(alpha > 0.0 && alpha < k / (k + 2.0)) {
                    return Err(invalid(
                        "regime",
                        format!("0 < alpha < k/(k+2) required, got alpha={alpha}, k={k}"),
                    ));
                }
            }
        }
        match self.schedule {
            Schedule::Power { a, b } if !(a > 0.0 && b > 0.0) => {
                Err(invalid("schedule", "a n^b needs a > 0 and b > 0"))
            }
            Schedule::QuantilePower { a, c } if !(a > 0.0 && c >= 0.0) => {
                Err(invalid("schedule", "a b_n n^c needs a > 0 and c >= 0"))
            }
            _ => Ok(()),
        }
    }

    /// Truncation level for row `n`.
    pub fn m_n(&self, n: u64) -> f64 {
        match self.schedule {
            Schedule::Power { a, b } => a * (n as f64).powf(b),
            Schedule::QuantilePower { a, c } => {
                a * quantile_b_n(&self.law, n) * (n as f64).powf(c)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowSample {
    pub values: Vec<f64>,
    pub row_sum: f64,
    pub n_truncated: usize,
}

/// One row of the truncated array.
pub fn sample_row<R: Rng + ?Sized>(config: &ModelConfig, n: usize, rng: &mut R) -> RowSample {
    sample_row_at(&config.law, config.m_n(n as u64), n, rng)
}

/// One row with an explicit truncation level.
pub fn sample_row_at<R: Rng + ?Sized>(
    law: &HeavyTailLaw,
    m: f64,
    n: usize,
    rng: &mut R,
) -> RowSample {
    let mut values = Vec::with_capacity(n);
    let mut sum = CompensatedSum::default();
    let mut n_truncated = 0;
    for _ in 0..n {
        let y = law.sample(rng);
        let x = if y.abs() <= m {
            y
        } else {
            n_truncated += 1;
            0.0
        };
        sum.add(x);
        values.push(x);
    }
    RowSample {
        values,
        row_sum: sum.value(),
        n_truncated,
    }
}

/// Row sum without storing the row.
#[inline]
pub fn truncated_row_sum<R: Rng + ?Sized>(law: &HeavyTailLaw, m: f64, n: usize, rng: &mut R) -> f64 {
    let mut sum = CompensatedSum::default();
    for _ in 0..n {
        let y = law.sample(rng);
        if y.abs() <= m {
            sum.add(y);
        }
    }
    sum.value()
}

/// Which growth condition a schedule report certifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthCondition {
    /// `M_n / b_n -> inf`.
    AboveQuantile,
    /// `M_n / n^{1/2 + gamma} -> inf`.
    AboveDiffusive,
    /// `M_n^{1 - alpha(k+2)/k - gamma} / n^{1/alpha} -> inf`.
    SmallAlpha,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleReport {
    pub condition: GrowthCondition,
    pub n_values: Vec<u64>,
    pub m_values: Vec<f64>,
    /// Natural log of the certified ratio at each `n`.
    pub log_ratios: Vec<f64>,
    /// Limiting exponent of the ratio in `n`; positive means it grows.
    pub ratio_exponent: f64,
    pub exponent_ok: bool,
    pub monotone: bool,
    pub growth_factor: f64,
    pub growth_threshold: f64,
    /// `n P(Y > M_n)` at each `n`.
    pub n_tail: Vec<f64>,
    pub n_tail_decreasing: bool,
    pub passed: bool,
    pub failures: Vec<String>,
}

pub const DEFAULT_GROWTH_THRESHOLD: f64 = 10.0;

pub fn validate_schedule(config: &ModelConfig, n_range: &[u64]) -> Result<ScheduleReport> {
    validate_schedule_with(config, n_range, DEFAULT_GROWTH_THRESHOLD)
}

pub fn validate_schedule_with(
    config: &ModelConfig,
    n_range: &[u64],
    growth_threshold: f64,
) -> Result<ScheduleReport> {
    if n_range.is_empty() || n_range.windows(2).any(|w| w[1] <= w[0]) || n_range[0] == 0 {
        return Err(invalid("n_range", "must be nonempty, positive and increasing"));
    }
    config.validate()?;
    let alpha = config.law.alpha();
    let k = config.k as f64;
    let gamma = config.gamma;
    let e = config.schedule.growth_exponent(alpha);
    let (condition, ratio_exponent) = match config.regime {
        Regime::AlphaGeK if alpha < 2.0 => {
            if !(gamma >= 0.0) {
                return Err(invalid("gamma", "must be nonnegative"));
            }
            (GrowthCondition::AboveQuantile, e - 1.0 / alpha)
        }
        Regime::AlphaGeK => {
            if !(gamma > 0.0) {
                return Err(invalid("gamma", format!("need gamma > 0, got {gamma}")));
            }
            (GrowthCondition::AboveDiffusive, e - 0.5 - gamma)
        }
        Regime::AlphaSmall => {
            let top = 1.0 - alpha * (k + 2.0) / k;
            if !(gamma > 0.0 && gamma < top) {
                return Err(invalid(
                    "gamma",
                    format!("need 0 < gamma < {top}, got {gamma}"),
                ));
            }
            (GrowthCondition::SmallAlpha, e * (top - gamma) - 1.0 / alpha)
        }
    };
    let mut m_values = Vec::with_capacity(n_range.len());
    let mut log_ratios = Vec::with_capacity(n_range.len());
    let mut n_tail = Vec::with_capacity(n_range.len());
    for &n in n_range {
        let m = config.m_n(n);
        let ln_n = (n as f64).ln();
        let lr = match condition {
            GrowthCondition::AboveQuantile => {
                let b = quantile_b_n(&config.law, n);
                if b > 0.0 {
                    m.ln() - b.ln()
                } else {
                    f64::INFINITY
                }
            }
            GrowthCondition::AboveDiffusive => m.ln() - (0.5 + gamma) * ln_n,
            GrowthCondition::SmallAlpha => {
                (1.0 - alpha * (k + 2.0) / k - gamma) * m.ln() - ln_n / alpha
            }
        };
        m_values.push(m);
        log_ratios.push(lr);
        n_tail.push(n as f64 * config.law.tail(m));
    }
    let exponent_ok = ratio_exponent > 0.0;
    let monotone = log_ratios.windows(2).all(|w| w[1] > w[0]);
    let growth_factor = (log_ratios[log_ratios.len() - 1] - log_ratios[0]).exp();
    let n_tail_decreasing = n_tail.windows(2).all(|w| w[1] <= w[0])
        && (n_tail.len() < 2 || n_tail[n_tail.len() - 1] < n_tail[0] || n_tail[0] == 0.0);
    let mut failures = Vec::new();
    if !exponent_ok {
        failures.push(format!("ratio exponent {ratio_exponent} is not positive"));
    }
    if !monotone {
        failures.push("ratio is not strictly increasing over the range".to_string());
    }
    if !(growth_factor >= growth_threshold) {
        failures.push(format!(
            "ratio grows by {growth_factor:.4} end to end, below {growth_threshold}"
        ));
    }
    if !n_tail_decreasing {
        failures.push("n P(Y > M_n) is not decreasing".to_string());
    }
    Ok(ScheduleReport {
        condition,
        n_values: n_range.to_vec(),
        m_values,
        log_ratios,
        ratio_exponent,
        exponent_ok,
        monotone,
        growth_factor,
        growth_threshold,
        n_tail,
        n_tail_decreasing,
        passed: failures.is_empty(),
        failures,
    })
}
