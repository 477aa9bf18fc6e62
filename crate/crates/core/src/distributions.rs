//! Heavy-tailed laws with closed-form tails and exact inverse-transform
//! samplers, the quantile sequence `b_n`, and a grid checker for the uniform
//! tail-increment condition.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature;

/// Uniform draw on the open interval (0, 1).
#[inline]
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// A finite discrete law. Points are kept sorted; `suffix[i]` is the mass of
/// `points[i..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LatticeLawSpec", into = "LatticeLawSpec")]
pub struct LatticeLaw {
    points: Vec<f64>,
    masses: Vec<f64>,
    suffix: Vec<f64>,
    declared_alpha: Option<f64>,
    declared_p: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LatticeLawSpec {
    points: Vec<f64>,
    masses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
}

impl TryFrom<LatticeLawSpec> for LatticeLaw {
    type Error = Error;
    fn try_from(s: LatticeLawSpec) -> Result<Self> {
        let mut law = LatticeLaw::new(s.points, s.masses)?;
        law.declared_alpha = s.alpha;
        law.declared_p = s.p;
        Ok(law)
    }
}

impl From<LatticeLaw> for LatticeLawSpec {
    fn from(l: LatticeLaw) -> Self {
        LatticeLawSpec {
            points: l.points,
            masses: l.masses,
            alpha: l.declared_alpha,
            p: l.declared_p,
        }
    }
}

impl LatticeLaw {
    pub fn new(points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != masses.len() {
            return Err(invalid("points", "need equally many points and masses"));
        }
        if masses.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return Err(invalid("masses", "masses must be finite and nonnegative"));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(invalid("points", "points must be finite"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("masses", format!("masses sum to {total}, not 1")));
        }
        let mut pairs: Vec<(f64, f64)> = points.into_iter().zip(masses).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // merge duplicates
        let mut pts: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut ms: Vec<f64> = Vec::with_capacity(pairs.len());
        for (x, m) in pairs {
            if pts.last() == Some(&x) {
                *ms.last_mut().unwrap() += m;
            } else {
                pts.push(x);
                ms.push(m);
            }
        }
        let mut suffix = vec![0.0; ms.len() + 1];
        for i in (0..ms.len()).rev() {
            suffix[i] = suffix[i + 1] + ms[i];
        }
        suffix.pop();
        Ok(LatticeLaw {
            points: pts,
            masses: ms,
            suffix,
            declared_alpha: None,
            declared_p: None,
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    fn first_above(&self, x: f64) -> usize {
        self.points.partition_point(|&p| p <= x)
    }

    fn first_at_or_above(&self, x: f64) -> usize {
        self.points.partition_point(|&p| p < x)
    }

    fn tail(&self, x: f64) -> f64 {
        let i = self.first_above(x);
        self.suffix.get(i).copied().unwrap_or(0.0)
    }

    fn tail_ge(&self, x: f64) -> f64 {
        let i = self.first_at_or_above(x);
        self.suffix.get(i).copied().unwrap_or(0.0)
    }

    fn quantile(&self, u: f64) -> f64 {
        // smallest point whose strict tail is <= u
        let n = self.points.len();
        let strict = |i: usize| if i + 1 < n { self.suffix[i + 1] } else { 0.0 };
        let (mut lo, mut hi) = (0usize, n - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if strict(mid) <= u {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        self.points[lo]
    }
}

/// One-dimensional law with an exact tail `P(Y > x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeavyTailLaw {
    /// Standard Pareto on `[1, inf)`: `P(Y > x) = x^{-alpha}`.
    Pareto { alpha: f64 },
    /// Standard Pareto minus its mean `alpha / (alpha - 1)`.
    ShiftedPareto { alpha: f64 },
    /// `S * P - shift` with an independent sign `S = +1` w.p. `p`.
    TwoSidedPareto {
        alpha: f64,
        p: f64,
        #[serde(default)]
        shift: f64,
    },
    /// Symmetric law with `P(Y > x) = min{1/2, x^{-alpha} (log x)^{-2}}`
    /// for `x > 1` and `1/2` on `[0, 1]`.
    Zygmund { alpha: f64 },
    /// `P(Y > x) = (1 + 1/floor(x)) x^{-alpha} / 2` for `x >= 1`.
    FloorCounterexample { alpha: f64 },
    Lattice(LatticeLaw),
}

impl HeavyTailLaw {
    pub fn pareto(alpha: f64) -> Self {
        HeavyTailLaw::Pareto { alpha }
    }

    pub fn shifted_pareto(alpha: f64) -> Self {
        HeavyTailLaw::ShiftedPareto { alpha }
    }

    pub fn two_sided(alpha: f64, p: f64) -> Self {
        HeavyTailLaw::TwoSidedPareto { alpha, p, shift: 0.0 }
    }

    /// Two-sided Pareto shifted to mean zero (needs `alpha > 1`).
    pub fn centered_two_sided(alpha: f64, p: f64) -> Self {
        HeavyTailLaw::TwoSidedPareto {
            alpha,
            p,
            shift: (2.0 * p - 1.0) * alpha / (alpha - 1.0),
        }
    }

    pub fn zygmund(alpha: f64) -> Self {
        HeavyTailLaw::Zygmund { alpha }
    }

    pub fn floor_counterexample(alpha: f64) -> Self {
        HeavyTailLaw::FloorCounterexample { alpha }
    }

    pub fn lattice(points: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        Ok(HeavyTailLaw::Lattice(LatticeLaw::new(points, masses)?))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let law: HeavyTailLaw = serde_json::from_str(s)
            .map_err(|e| invalid("descriptor", e.to_string()))?;
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.alpha();
        if !(a > 0.0) || !a.is_finite() && !matches!(self, HeavyTailLaw::Lattice(_)) {
            return Err(invalid("alpha", format!("tail index must be positive, got {a}")));
        }
        match self {
            HeavyTailLaw::ShiftedPareto { alpha } if *alpha <= 1.0 => Err(invalid(
                "alpha",
                "mean-centering needs alpha > 1",
            )),
            HeavyTailLaw::TwoSidedPareto { p, shift, .. } => {
                if !(*p > 0.0 && *p <= 1.0) {
                    Err(invalid("p", format!("balance must lie in (0, 1], got {p}")))
                } else if !shift.is_finite() {
                    Err(invalid("shift", "shift must be finite"))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Declared tail index.
    pub fn alpha(&self) -> f64 {
        match self {
            HeavyTailLaw::Pareto { alpha }
            | HeavyTailLaw::ShiftedPareto { alpha }
            | HeavyTailLaw::TwoSidedPareto { alpha, .. }
            | HeavyTailLaw::Zygmund { alpha }
            | HeavyTailLaw::FloorCounterexample { alpha } => *alpha,
            HeavyTailLaw::Lattice(l) => l.declared_alpha.unwrap_or(f64::INFINITY),
        }
    }

    /// `lim P(Y > x) / P(|Y| > x)`.
    pub fn balance_p(&self) -> f64 {
        match self {
            HeavyTailLaw::Pareto { .. }
            | HeavyTailLaw::ShiftedPareto { .. }
            | HeavyTailLaw::FloorCounterexample { .. } => 1.0,
            HeavyTailLaw::TwoSidedPareto { p, .. } => *p,
            HeavyTailLaw::Zygmund { .. } => 0.5,
            HeavyTailLaw::Lattice(l) => l.declared_p.unwrap_or(1.0),
        }
    }

    /// Closed interval containing the support.
    pub fn support(&self) -> (f64, f64) {
        match self {
            HeavyTailLaw::Pareto { .. } | HeavyTailLaw::FloorCounterexample { .. } => {
                (1.0, f64::INFINITY)
            }
            HeavyTailLaw::ShiftedPareto { alpha } => (1.0 - alpha / (alpha - 1.0), f64::INFINITY),
            HeavyTailLaw::TwoSidedPareto { p, shift, .. } => {
                if *p >= 1.0 {
                    (1.0 - shift, f64::INFINITY)
                } else {
                    (f64::NEG_INFINITY, f64::INFINITY)
                }
            }
            HeavyTailLaw::Zygmund { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            HeavyTailLaw::Lattice(l) => (l.points[0], *l.points.last().unwrap()),
        }
    }

    /// `P(Y > x)`.
    pub fn tail(&self, x: f64) -> f64 {
        match self {
            HeavyTailLaw::Pareto { alpha } => pareto_tail(x, *alpha),
            HeavyTailLaw::ShiftedPareto { alpha } => {
                two_sided_tail(x + alpha / (alpha - 1.0), *alpha, 1.0)
            }
            HeavyTailLaw::TwoSidedPareto { alpha, p, shift } => {
                two_sided_tail(x + shift, *alpha, *p)
            }
            HeavyTailLaw::Zygmund { alpha } => {
                if x >= 0.0 {
                    zygmund_half_tail(x, *alpha)
                } else {
                    1.0 - zygmund_half_tail(-x, *alpha)
                }
            }
            HeavyTailLaw::FloorCounterexample { alpha } => {
                if x < 1.0 {
                    1.0
                } else {
                    0.5 * (1.0 + 1.0 / x.floor()) * x.powf(-alpha)
                }
            }
            HeavyTailLaw::Lattice(l) => l.tail(x),
        }
    }

    /// `P(Y >= x)`, the left limit of the tail.
    pub fn tail_ge(&self, x: f64) -> f64 {
        match self {
            HeavyTailLaw::FloorCounterexample { alpha } => {
                if x <= 1.0 {
                    1.0
                } else if x.fract() == 0.0 {
                    0.5 * (1.0 + 1.0 / (x - 1.0)) * x.powf(-alpha)
                } else {
                    self.tail(x)
                }
            }
            HeavyTailLaw::Lattice(l) => l.tail_ge(x),
            _ => self.tail(x),
        }
    }

    /// `P(|Y| > x)` for `x >= 0`.
    pub fn abs_tail(&self, x: f64) -> f64 {
        (self.tail(x) + 1.0 - self.tail_ge(-x)).min(1.0)
    }

    /// Generalized inverse `inf{x : P(Y > x) <= u}` for `u` in `(0, 1)`;
    /// `-inf` for `u >= 1`.
    pub fn tail_quantile(&self, u: f64) -> f64 {
        if u >= 1.0 {
            return f64::NEG_INFINITY;
        }
        if u <= 0.0 {
            return self.support().1;
        }
        match self {
            HeavyTailLaw::Pareto { alpha } => u.powf(-1.0 / alpha),
            HeavyTailLaw::ShiftedPareto { alpha } => {
                two_sided_quantile(u, *alpha, 1.0) - alpha / (alpha - 1.0)
            }
            HeavyTailLaw::TwoSidedPareto { alpha, p, shift } => {
                two_sided_quantile(u, *alpha, *p) - shift
            }
            HeavyTailLaw::Zygmund { alpha } => {
                if u < 0.5 {
                    zygmund_inverse(u, *alpha)
                } else {
                    -zygmund_inverse(1.0 - u, *alpha)
                }
            }
            HeavyTailLaw::FloorCounterexample { alpha } => floor_quantile(u, *alpha),
            HeavyTailLaw::Lattice(l) => l.quantile(u),
        }
    }

    /// Exact inverse-transform draw.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.tail_quantile(open_unit(rng))
    }

    /// Draw from the law conditioned on `Y > floor`, given `P(Y > floor)`.
    #[inline]
    pub fn sample_above<R: Rng + ?Sized>(&self, tail_at_floor: f64, rng: &mut R) -> f64 {
        self.tail_quantile(tail_at_floor * open_unit(rng))
    }

    pub fn mean(&self) -> Option<f64> {
        let a = self.alpha();
        match self {
            HeavyTailLaw::Pareto { alpha } => (*alpha > 1.0).then(|| alpha / (alpha - 1.0)),
            HeavyTailLaw::ShiftedPareto { .. } => Some(0.0),
            HeavyTailLaw::TwoSidedPareto { alpha, p, shift } => {
                (*alpha > 1.0).then(|| (2.0 * p - 1.0) * alpha / (alpha - 1.0) - shift)
            }
            HeavyTailLaw::Zygmund { .. } => (a >= 1.0).then_some(0.0),
            HeavyTailLaw::FloorCounterexample { alpha } => {
                (*alpha > 1.0).then(|| 1.0 + floor_power_integral(0, *alpha, f64::INFINITY))
            }
            HeavyTailLaw::Lattice(l) => {
                Some(l.points.iter().zip(&l.masses).map(|(x, m)| x * m).sum())
            }
        }
    }

    /// Variance when finite.
    pub fn variance(&self) -> Option<f64> {
        match self {
            HeavyTailLaw::Pareto { alpha } => {
                (*alpha > 2.0).then(|| alpha / ((alpha - 1.0).powi(2) * (alpha - 2.0)))
            }
            HeavyTailLaw::ShiftedPareto { alpha } => {
                (*alpha > 2.0).then(|| alpha / ((alpha - 1.0).powi(2) * (alpha - 2.0)))
            }
            HeavyTailLaw::TwoSidedPareto { alpha, p, .. } => (*alpha > 2.0).then(|| {
                let m = (2.0 * p - 1.0) * alpha / (alpha - 1.0);
                alpha / (alpha - 2.0) - m * m
            }),
            HeavyTailLaw::Zygmund { alpha } => zygmund_second_moment(*alpha),
            HeavyTailLaw::FloorCounterexample { alpha } => (*alpha > 2.0).then(|| {
                let m = 1.0 + floor_power_integral(0, *alpha, f64::INFINITY);
                let m2 = 1.0 + 2.0 * floor_power_integral(1, *alpha, f64::INFINITY);
                m2 - m * m
            }),
            HeavyTailLaw::Lattice(l) => {
                let m: f64 = l.points.iter().zip(&l.masses).map(|(x, w)| x * w).sum();
                Some(
                    l.points
                        .iter()
                        .zip(&l.masses)
                        .map(|(x, w)| (x - m) * (x - m) * w)
                        .sum(),
                )
            }
        }
    }

    /// `E[Y 1(|Y| <= z)]`.
    pub fn truncated_first_moment(&self, z: f64) -> Result<f64> {
        if !(z > 0.0) {
            return Err(invalid("z", "truncation level must be positive"));
        }
        let a = self.alpha();
        if z.is_infinite() && a <= 1.0 && !matches!(self, HeavyTailLaw::Lattice(_)) {
            let ok_zyg = matches!(self, HeavyTailLaw::Zygmund { .. }) && a >= 1.0;
            if !ok_zyg {
                return Err(Error::Divergent(format!(
                    "E|Y| is infinite for tail index {a}"
                )));
            }
        }
        Ok(match self {
            HeavyTailLaw::Pareto { alpha } => two_sided_trunc_mean(*alpha, 1.0, 0.0, z),
            HeavyTailLaw::ShiftedPareto { alpha } => {
                two_sided_trunc_mean(*alpha, 1.0, alpha / (alpha - 1.0), z)
            }
            HeavyTailLaw::TwoSidedPareto { alpha, p, shift } => {
                two_sided_trunc_mean(*alpha, *p, *shift, z)
            }
            HeavyTailLaw::Zygmund { .. } => 0.0,
            HeavyTailLaw::FloorCounterexample { alpha } => {
                if z < 1.0 {
                    0.0
                } else if z.is_infinite() {
                    1.0 + floor_power_integral(0, *alpha, z)
                } else {
                    // int_0^z (P(Y > y) - P(Y > z)) dy
                    1.0 + floor_power_integral(0, *alpha, z) - z * self.tail(z)
                }
            }
            HeavyTailLaw::Lattice(l) => l
                .points
                .iter()
                .zip(&l.masses)
                .filter(|(x, _)| x.abs() <= z)
                .map(|(x, m)| x * m)
                .sum(),
        })
    }
}

#[inline]
fn pareto_tail(x: f64, alpha: f64) -> f64 {
    if x <= 1.0 {
        1.0
    } else {
        x.powf(-alpha)
    }
}

/// Tail of `S * P` (no shift).
#[inline]
fn two_sided_tail(z: f64, alpha: f64, p: f64) -> f64 {
    if z >= 1.0 {
        p * z.powf(-alpha)
    } else if z >= -1.0 {
        p
    } else {
        p + (1.0 - p) * (1.0 - (-z).powf(-alpha))
    }
}

#[inline]
fn two_sided_quantile(u: f64, alpha: f64, p: f64) -> f64 {
    if u < p {
        (p / u).powf(1.0 / alpha)
    } else {
        -((1.0 - p) / (1.0 - u)).powf(1.0 / alpha)
    }
}

/// `P(P in [a, b])` and `E[P 1(P in [a, b])]` for a standard Pareto `P`.
fn pareto_window(alpha: f64, a: f64, b: f64) -> (f64, f64) {
    let a = a.max(1.0);
    if !(b > a) {
        return (0.0, 0.0);
    }
    let m0 = a.powf(-alpha) - if b.is_finite() { b.powf(-alpha) } else { 0.0 };
    let m1 = if (alpha - 1.0).abs() < 1e-12 {
        alpha * (b / a).ln()
    } else {
        let bt = if b.is_finite() { b.powf(1.0 - alpha) } else { 0.0 };
        alpha / (alpha - 1.0) * (a.powf(1.0 - alpha) - bt)
    };
    (m0, m1)
}

fn two_sided_trunc_mean(alpha: f64, p: f64, shift: f64, z: f64) -> f64 {
    let (m0p, m1p) = pareto_window(alpha, shift - z, shift + z);
    let mut out = p * (m1p - shift * m0p);
    if p < 1.0 {
        let (m0n, m1n) = pareto_window(alpha, -shift - z, z - shift);
        out += (1.0 - p) * (-m1n - shift * m0n);
    }
    out
}

#[inline]
fn zygmund_half_tail(x: f64, alpha: f64) -> f64 {
    if x <= 1.0 {
        0.5
    } else {
        let l = x.ln();
        (x.powf(-alpha) / (l * l)).min(0.5)
    }
}

/// Solves `x^{-alpha} (log x)^{-2} = v` for `x > 1`, `v` in `(0, 1/2]`.
fn zygmund_inverse(v: f64, alpha: f64) -> f64 {
    let target = -v.ln();
    // phi(s) = alpha s + 2 ln s, increasing on s > 0
    let phi = |s: f64| alpha * s + 2.0 * s.ln();
    let mut lo = 1e-300_f64.max(1e-6);
    while phi(lo) > target {
        lo *= 0.5;
    }
    let mut hi = target / alpha + 1.0;
    while phi(hi) < target {
        hi *= 2.0;
    }
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = phi(s) - target;
        if f > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let step = f / (alpha + 2.0 / s);
        if f == 0.0 || step.abs() <= 4.0 * f64::EPSILON * s {
            s -= step;
            break;
        }
        let next = s - step;
        s = if next > lo && next < hi {
            next
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    s.exp()
}

/// `E[Y^2]` of the Zygmund law (`alpha >= 2`).
fn zygmund_second_moment(alpha: f64) -> Option<f64> {
    if alpha < 2.0 {
        return None;
    }
    let x_star = zygmund_inverse(0.5, alpha);
    let s_star = x_star.ln();
    // P(|Y| > y) = 1 on [0, x*), 2 g(y) beyond
    let tail_part = if alpha == 2.0 {
        4.0 / s_star
    } else {
        let k = alpha - 2.0;
        let upper = s_star + 80.0 / k;
        4.0 * quadrature::integrate(
            |s: f64| (-k * s).exp() / (s * s),
            s_star,
            upper,
            1e-15,
            1e-14,
            400,
        )
        .value
    };
    Some(x_star * x_star + tail_part)
}

#[inline]
fn floor_tail_at_int(m: f64, alpha: f64) -> f64 {
    0.5 * (1.0 + 1.0 / m) * m.powf(-alpha)
}

fn floor_quantile(u: f64, alpha: f64) -> f64 {
    let guess = (0.5 / u).powf(1.0 / alpha);
    if guess > 1e15 {
        // the floor correction is below double precision
        return guess;
    }
    let mut m = guess.floor().max(1.0);
    while floor_tail_at_int(m + 1.0, alpha) > u {
        m += 1.0;
    }
    while m > 1.0 && floor_tail_at_int(m, alpha) <= u {
        m -= 1.0;
    }
    // tail(m) > u >= tail(m + 1)
    let c = 0.5 * (1.0 + 1.0 / m);
    let x = (c / u).powf(1.0 / alpha);
    if x < m + 1.0 {
        x.max(m)
    } else {
        m + 1.0
    }
}

/// `int_1^z x^j P(Y > x) dx` for the floor counterexample.
fn floor_power_integral(j: i32, alpha: f64, z: f64) -> f64 {
    let beta = alpha - j as f64;
    let prim = |x: f64| -> f64 {
        if (beta - 1.0).abs() < 1e-14 {
            x.ln()
        } else {
            x.powf(1.0 - beta) / (1.0 - beta)
        }
    };
    let seg = |a: f64, b: f64| -> f64 {
        if b.is_infinite() {
            -prim(a)
        } else if (beta - 1.0).abs() < 1e-14 {
            ((b - a) / a).ln_1p()
        } else {
            // cancellation-free prim(b) - prim(a)
            let e = 1.0 - beta;
            a.powf(e) * (e * ((b - a) / a).ln_1p()).exp_m1() / e
        }
    };
    // (1/2) int_1^z x^{-beta} dx for the constant part of (1 + 1/floor x)/2
    let main = 0.5 * seg(1.0, z);
    // (1/2) sum_m (1/m) int_{[m, m+1) cap [1, z]} x^{-beta} dx
    let f = |m: f64| 0.5 / m * seg(m, m + 1.0);
    const EXACT: f64 = 1_000_000.0;
    let zf = if z.is_finite() { z.floor() } else { f64::INFINITY };
    let last_full = (zf - 1.0).min(EXACT);
    let mut s = 0.0;
    let mut m = last_full;
    while m >= 1.0 {
        s += f(m);
        m -= 1.0;
    }
    if zf - 1.0 > EXACT {
        // Euler-Maclaurin for sum_{m=N}^{K} f(m), N = EXACT + 1
        let n0 = EXACT + 1.0;
        let k = zf - 1.0;
        let fd = |x: f64| {
            let h = 1e-3 * x;
            (f(x + h) - f(x - h)) / (2.0 * h)
        };
        let integral = if k.is_infinite() {
            // x = n0 / t
            quadrature::integrate(
                |t: f64| if t <= 0.0 { 0.0 } else { f(n0 / t) * n0 / (t * t) },
                0.0,
                1.0,
                0.0,
                1e-13,
                400,
            )
            .value
        } else {
            quadrature::integrate(|x| f(x), n0, k, 0.0, 1e-13, 400).value
        };
        let (fk, fdk) = if k.is_infinite() {
            (0.0, 0.0)
        } else {
            (f(k), fd(k))
        };
        s += integral + 0.5 * (f(n0) + fk) + (fdk - fd(n0)) / 12.0;
    }
    if z.is_finite() && z > zf && zf >= 1.0 {
        s += 0.5 / zf * seg(zf, z);
    }
    main + s
}

/// `b_n = inf{x > 0 : P(Y > x) <= 1/n}`.
pub fn quantile_b_n(law: &HeavyTailLaw, n: u64) -> f64 {
    assert!(n >= 1, "n must be positive");
    let u = 1.0 / n as f64;
    let mut x = law.tail_quantile(u);
    if !(x > 0.0) {
        return 0.0;
    }
    // guard the closed-set property against rounding in the inversion
    let mut guard = 0;
    while law.tail(x) > u && guard < 64 {
        x = x.next_up();
        guard += 1;
    }
    x
}

/// Configuration of the uniform tail-increment check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub t_grid: Vec<f64>,
    pub u0: f64,
    pub delta: f64,
    /// Side length of the uniform `(a, b)` lattice on `[1 - u0, 1]^2`.
    pub lattice: usize,
    /// Extra `(a, b, T)` points evaluated in addition to the lattice.
    #[serde(default)]
    pub witnesses: Vec<(f64, f64, f64)>,
}

impl AssumptionCheck {
    pub fn new(t_grid: Vec<f64>, u0: f64, delta: f64) -> Self {
        AssumptionCheck {
            t_grid,
            u0,
            delta,
            lattice: 64,
            witnesses: Vec::new(),
        }
    }

    pub fn geometric(tmin: f64, tmax: f64, points: usize, u0: f64, delta: f64) -> Self {
        Self::new(geometric_grid(tmin, tmax, points), u0, delta)
    }
}

pub fn geometric_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points <= 1 {
        return vec![lo];
    }
    let r = (hi / lo).ln() / (points - 1) as f64;
    (0..points)
        .map(|i| {
            if i == points - 1 {
                hi
            } else {
                lo * (r * i as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub passed: bool,
    /// Discrepancy at the point where discrepancy / (b - a) is largest.
    pub worst_discrepancy: f64,
    pub worst_ratio: f64,
    pub worst_location: (f64, f64, f64),
    pub delta_used: f64,
    #[serde(rename = "T0_used")]
    pub t0_used: f64,
    pub u0_used: f64,
    pub points_tested: usize,
}

/// `|[P(Y > aT) - P(Y > bT)] / P(Y > T) - (a^{-alpha} - b^{-alpha})|`.
pub fn increment_discrepancy(law: &HeavyTailLaw, a: f64, b: f64, t: f64) -> f64 {
    let alpha = law.alpha();
    let base = law.tail(t);
    let lhs = (law.tail(a * t) - law.tail(b * t)) / base;
    (lhs - (a.powf(-alpha) - b.powf(-alpha))).abs()
}

pub fn check_tail_increment_uniformity(
    law: &HeavyTailLaw,
    t_grid: &[f64],
    u0: f64,
    delta: f64,
) -> Result<AssumptionReport> {
    check_assumption(law, &AssumptionCheck::new(t_grid.to_vec(), u0, delta))
}

pub fn check_assumption(law: &HeavyTailLaw, cfg: &AssumptionCheck) -> Result<AssumptionReport> {
    if !(cfg.u0 > 0.0 && cfg.u0 < 1.0) {
        return Err(invalid("u0", format!("must lie in (0, 1), got {}", cfg.u0)));
    }
    if !(cfg.delta > 0.0) {
        return Err(invalid("delta", "must be positive"));
    }
    if cfg.t_grid.is_empty() || cfg.t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("t_grid", "must be nonempty and increasing"));
    }
    if cfg.lattice < 2 {
        return Err(invalid("lattice", "need at least 2 points per side"));
    }
    let lo = 1.0 - cfg.u0;
    let side: Vec<f64> = (0..cfg.lattice)
        .map(|i| {
            if i == cfg.lattice - 1 {
                1.0
            } else {
                lo + cfg.u0 * i as f64 / (cfg.lattice - 1) as f64
            }
        })
        .collect();
    let mut report = AssumptionReport {
        passed: true,
        worst_discrepancy: 0.0,
        worst_ratio: 0.0,
        worst_location: (1.0, 1.0, cfg.t_grid[0]),
        delta_used: cfg.delta,
        t0_used: cfg.t_grid[0],
        u0_used: cfg.u0,
        points_tested: 0,
    };
    let mut visit = |a: f64, b: f64, t: f64| {
        let d = increment_discrepancy(law, a, b, t);
        report.points_tested += 1;
        let width = b - a;
        if d > cfg.delta * width {
            report.passed = false;
        }
        let ratio = if width > 0.0 {
            d / width
        } else if d > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        if ratio > report.worst_ratio || report.points_tested == 1 {
            report.worst_ratio = ratio;
            report.worst_discrepancy = d;
            report.worst_location = (a, b, t);
        }
    };
    for &t in &cfg.t_grid {
        for (i, &a) in side.iter().enumerate() {
            for &b in &side[i + 1..] {
                visit(a, b, t);
            }
        }
    }
    for &(a, b, t) in &cfg.witnesses {
        if !(lo <= a && a <= b && b <= 1.0) {
            return Err(invalid(
                "witnesses",
                format!("({a}, {b}) outside [1 - u0, 1]"),
            ));
        }
        visit(a, b, t);
    }
    Ok(report)
}
