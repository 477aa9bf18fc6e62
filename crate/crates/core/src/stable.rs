//! Limit laws of normalized row sums: an alpha-stable law for `alpha < 2` and
//! a centered normal otherwise, with positive-part moments `E[Z^k 1(Z > 0)]`.
//!
//! Stable laws use the `S_alpha(sigma, beta, 0)` parameterization whose
//! characteristic exponent is
//! `-sigma^alpha |u|^alpha (1 - i beta sign(u) tan(pi alpha / 2))`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::distributions::open_unit;
use crate::error::{invalid, Result};
use crate::estimators::Estimate;
use crate::parallel::{run_replications, Execution, DEFAULT_CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitLaw {
    Stable { alpha: f64, scale: f64, beta: f64 },
    Normal { variance: f64 },
}

/// `C_alpha = (1 - alpha) / (Gamma(2 - alpha) cos(pi alpha / 2))`, so that
/// `P(Z > x) ~ C_alpha (1 + beta)/2 sigma^alpha x^{-alpha}`.
pub fn stable_tail_constant(alpha: f64) -> f64 {
    (1.0 - alpha) / (gamma(2.0 - alpha) * (FRAC_PI_2 * alpha).cos())
}

/// Scale for which the right tail of the stable law is `~ x^{-alpha}`, the
/// limit of `n P(Y > b_n x)` when `b_n` is the upper `1/n` quantile.
pub fn tail_normalized_scale(alpha: f64, p: f64) -> f64 {
    (p * stable_tail_constant(alpha)).powf(-1.0 / alpha)
}

impl LimitLaw {
    /// Stable law with unit scale.
    pub fn unit_stable(alpha: f64, beta: f64) -> Result<Self> {
        LimitLaw::stable(alpha, 1.0, beta)
    }

    pub fn stable(alpha: f64, scale: f64, beta: f64) -> Result<Self> {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(invalid("alpha", format!("stable index must lie in (1, 2), got {alpha}")));
        }
        if !(-1.0..=1.0).contains(&beta) {
            return Err(invalid("beta", format!("skewness must lie in [-1, 1], got {beta}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("scale", "must be positive"));
        }
        Ok(LimitLaw::Stable { alpha, scale, beta })
    }

    pub fn normal(variance: f64) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(invalid("variance", "must be finite and nonnegative"));
        }
        Ok(LimitLaw::Normal { variance })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            LimitLaw::Normal { variance } => {
                let z: f64 = StandardNormal.sample(rng);
                variance.sqrt() * z
            }
            LimitLaw::Stable { alpha, scale, beta } => scale * cms_draw(alpha, beta, rng),
        }
    }
}

/// Limit law for a law with tail index `alpha`, balance `p` and variance
/// `var_y` (required when `alpha >= 2`).
pub fn limit_law_for(alpha: f64, p: f64, var_y: Option<f64>) -> Result<LimitLaw> {
    if !(alpha > 1.0) {
        return Err(invalid("alpha", format!("need alpha > 1, got {alpha}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid("p", format!("balance must lie in (0, 1], got {p}")));
    }
    if alpha < 2.0 {
        LimitLaw::stable(alpha, tail_normalized_scale(alpha, p), 2.0 * p - 1.0)
    } else {
        match var_y {
            Some(v) if v.is_finite() => LimitLaw::normal(v),
            _ => Err(invalid(
                "var_y",
                "alpha >= 2 needs a finite variance for the normal limit",
            )),
        }
    }
}

pub fn sample_limit<R: Rng + ?Sized>(law: &LimitLaw, rng: &mut R) -> f64 {
    law.sample(rng)
}

/// Chambers-Mallows-Stuck draw from `S_alpha(1, beta, 0)`, `alpha != 1`.
fn cms_draw<R: Rng + ?Sized>(alpha: f64, beta: f64, rng: &mut R) -> f64 {
    let v = PI * (open_unit(rng) - 0.5);
    let w: f64 = Exp1.sample(rng);
    let t = beta * (FRAC_PI_2 * alpha).tan();
    let b = t.atan() / alpha;
    let s = (1.0 + t * t).powf(0.5 / alpha);
    let arg = alpha * (v + b);
    s * arg.sin() / v.cos().powf(1.0 / alpha)
        * ((v - arg).cos() / w).powf((1.0 - alpha) / alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MomentMethod {
    ClosedForm,
    MonteCarlo { samples: u64, seed: u64 },
}

/// `E[Z^k 1(Z > 0)]` for a normal law with the given variance.
pub fn normal_positive_moment(variance: f64, k: u32) -> f64 {
    let kf = k as f64;
    variance.sqrt().powi(k as i32) * 2f64.powf((kf - 2.0) / 2.0) * gamma((kf + 1.0) / 2.0)
        / PI.sqrt()
}

/// Truncation point, in units of the scale, for the stable Monte Carlo
/// moment; the part above it is added analytically from the tail asymptote.
const STABLE_CUTOFF: f64 = 1e3;

pub fn positive_part_moment(law: &LimitLaw, k: u32, method: MomentMethod) -> Result<Estimate> {
    positive_part_moment_with(law, k, method, Execution::default())
}

pub fn positive_part_moment_with(
    law: &LimitLaw,
    k: u32,
    method: MomentMethod,
    exec: Execution,
) -> Result<Estimate> {
    if k == 0 {
        return Err(invalid("k", "order must be positive"));
    }
    if let LimitLaw::Stable { alpha, .. } = law {
        if k as f64 >= *alpha {
            return Err(invalid(
                "k",
                format!("E[Z^{k} 1(Z > 0)] is infinite for a stable law of index {alpha}"),
            ));
        }
    }
    match (method, *law) {
        (MomentMethod::ClosedForm, LimitLaw::Normal { variance }) => {
            Ok(Estimate::exact(normal_positive_moment(variance, k), "closed_form"))
        }
        (MomentMethod::ClosedForm, LimitLaw::Stable { .. }) => Err(invalid(
            "method",
            "no closed form for stable laws; use monte_carlo",
        )),
        (MomentMethod::MonteCarlo { samples, seed }, LimitLaw::Normal { .. }) => {
            if samples < 2 {
                return Err(invalid("samples", "need at least 2 samples"));
            }
            let acc = run_replications(samples, DEFAULT_CHUNK, seed, exec, |rng| {
                let z = law.sample(rng);
                if z > 0.0 {
                    z.powi(k as i32)
                } else {
                    0.0
                }
            });
            Ok(Estimate::from_accumulator(&acc, "monte_carlo", seed))
        }
        (MomentMethod::MonteCarlo { samples, seed }, LimitLaw::Stable { alpha, scale, beta }) => {
            if samples < 2 {
                return Err(invalid("samples", "need at least 2 samples"));
            }
            let cut = STABLE_CUTOFF * scale;
            let acc = run_replications(samples, DEFAULT_CHUNK, seed, exec, |rng| {
                let z = law.sample(rng);
                if z > 0.0 && z <= cut {
                    z.powi(k as i32)
                } else {
                    0.0
                }
            });
            // E[Z^k 1(Z > L)] ~ C alpha L^{k - alpha} / (alpha - k)
            let c = scale.powf(alpha) * stable_tail_constant(alpha) * (1.0 + beta) / 2.0;
            let kf = k as f64;
            let tail = c * alpha * cut.powf(kf - alpha) / (alpha - kf);
            let mut est = Estimate::from_accumulator(&acc, "monte_carlo", seed);
            est.value += tail;
            est.bias_note = Some(format!(
                "values above {cut:e} replaced by the tail asymptote ({tail:e})"
            ));
            // next term of the stable tail expansion is relatively O(L^{-alpha})
            est.bias_bound = tail * STABLE_CUTOFF.powf(-alpha);
            Ok(est)
        }
    }
}
