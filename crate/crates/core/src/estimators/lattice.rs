//! Exponentially tilted lattice convolution.
//!
//! Masses are tilted by `e^{theta x}`, convolved by FFT repeated squaring in
//! the tilted domain where the mass near the threshold is O(1), and the tail
//! sum is un-tilted in log space.

use std::io::Write;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::distributions::HeavyTailLaw;
use crate::error::{invalid, Error, Result};
use crate::parallel::CompensatedSum;

use super::mc::ln_choose;

/// Masses on the points `origin + i * step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeDistribution {
    pub origin: f64,
    pub step: f64,
    pub masses: Vec<f64>,
}

/// Largest number of cells a discretization may produce.
const MAX_CELLS: usize = 1 << 26;

impl LatticeDistribution {
    pub fn new(origin: f64, step: f64, masses: Vec<f64>) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) || !origin.is_finite() {
            return Err(invalid("step", "need a finite positive step and finite origin"));
        }
        if masses.is_empty() {
            return Err(invalid("masses", "empty lattice"));
        }
        if masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(invalid("masses", "masses must be nonnegative"));
        }
        let mut total = CompensatedSum::default();
        masses.iter().for_each(|&m| total.add(m));
        if (total.value() - 1.0).abs() > 1e-12 {
            return Err(invalid(
                "masses",
                format!("masses sum to {}, not 1", total.value()),
            ));
        }
        Ok(LatticeDistribution {
            origin,
            step,
            masses,
        })
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.step
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn mean(&self) -> f64 {
        let mut s = CompensatedSum::default();
        for (i, &m) in self.masses.iter().enumerate() {
            s.add(m * self.point(i));
        }
        s.value()
    }

    /// The truncated law `Y 1(|Y| <= m)` of a finite lattice law whose points
    /// are integer multiples of `step`.
    pub fn from_truncated_lattice(law: &HeavyTailLaw, m: f64, step: f64) -> Result<Self> {
        let HeavyTailLaw::Lattice(l) = law else {
            return Err(invalid("law", "expected a lattice law"));
        };
        let idx = |x: f64| -> Result<i64> {
            let r = x / step;
            let i = r.round();
            if (r - i).abs() > 1e-9 * r.abs().max(1.0) {
                return Err(invalid("step", format!("point {x} is not a multiple of {step}")));
            }
            Ok(i as i64)
        };
        let kept: Vec<(i64, f64)> = l
            .points()
            .iter()
            .zip(l.masses())
            .map(|(&x, &w)| Ok((if x.abs() <= m { idx(x)? } else { 0 }, w)))
            .collect::<Result<_>>()?;
        let lo = kept.iter().map(|p| p.0).min().unwrap().min(0);
        let hi = kept.iter().map(|p| p.0).max().unwrap().max(0);
        let mut masses = vec![0.0; (hi - lo + 1) as usize];
        for (i, w) in kept {
            masses[(i - lo) as usize] += w;
        }
        LatticeDistribution::new(lo as f64 * step, step, masses)
    }

    /// Cell-centred discretization of `Y 1(|Y| <= m)` on the multiples of
    /// `step`: cell `i` is `((i - 1/2) step, (i + 1/2) step]` clipped to
    /// `[-m, m]`, carrying its exact probability; the truncated mass goes to 0.
    pub fn discretize(law: &HeavyTailLaw, m: f64, step: f64) -> Result<Self> {
        if !(m > 0.0 && step > 0.0) {
            return Err(invalid("step", "need positive truncation level and step"));
        }
        let (slo, shi) = law.support();
        let lo = slo.max(-m);
        let hi = shi.min(m);
        let cell = |x: f64| (x / step - 0.5).ceil() as i64;
        let i_lo = cell(lo).min(0);
        let i_hi = cell(hi).max(0);
        let count = (i_hi - i_lo + 1) as usize;
        if count > MAX_CELLS {
            return Err(invalid("step", format!("{count} cells exceed the lattice budget")));
        }
        let mut masses = vec![0.0; count];
        let mut total = CompensatedSum::default();
        let zero = (-i_lo) as usize;
        for (slot, i) in (i_lo..=i_hi).enumerate() {
            if slot == zero {
                continue;
            }
            let a = (i as f64 - 0.5) * step;
            let b = ((i as f64 + 0.5) * step).min(m);
            let upper = law.tail(b);
            let w = if a < -m {
                law.tail_ge(-m) - upper
            } else {
                law.tail(a) - upper
            };
            let w = w.max(0.0);
            masses[slot] = w;
            total.add(w);
        }
        // cell 0 also receives the truncated mass
        masses[zero] = (1.0 - total.value()).max(0.0);
        let mut lat = LatticeDistribution {
            origin: i_lo as f64 * step,
            step,
            masses,
        };
        lat.trim();
        Ok(lat)
    }

    /// Drops zero cells at both ends (the origin moves accordingly).
    fn trim(&mut self) {
        let first = self.masses.iter().position(|&w| w > 0.0).unwrap_or(0);
        let last = self
            .masses
            .iter()
            .rposition(|&w| w > 0.0)
            .unwrap_or(self.masses.len() - 1);
        if first > 0 || last + 1 < self.masses.len() {
            self.masses = self.masses[first..=last].to_vec();
            self.origin += first as f64 * self.step;
        }
    }

    /// Writes `(x, pmf, cdf)` rows.
    pub fn write_cdf_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,pmf,cdf")?;
        let mut cdf = CompensatedSum::default();
        for (i, &w) in self.masses.iter().enumerate() {
            cdf.add(w);
            writeln!(out, "{:.16e},{:.16e},{:.16e}", self.point(i), w, cdf.value())?;
        }
        Ok(())
    }

    /// `(log weights + theta x)` normalizer: returns `(log m(theta), tilted masses)`.
    fn tilted(&self, theta: f64) -> (f64, Vec<f64>) {
        if theta == 0.0 {
            return (0.0, self.masses.clone());
        }
        let logs: Vec<f64> = self
            .masses
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                if w > 0.0 {
                    w.ln() + theta * self.point(i)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = CompensatedSum::default();
        let mut ws: Vec<f64> = logs
            .iter()
            .map(|&l| {
                let e = (l - top).exp();
                z.add(e);
                e
            })
            .collect();
        let z = z.value();
        ws.iter_mut().for_each(|w| *w /= z);
        (top + z.ln(), ws)
    }

    fn tilted_mean(&self, theta: f64) -> f64 {
        let (_, ws) = self.tilted(theta);
        let mut s = CompensatedSum::default();
        for (i, w) in ws.iter().enumerate() {
            s.add(w * self.point(i));
        }
        s.value()
    }
}

/// How the tail sum treats the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TailMode {
    /// `P(S > t)` for a genuine lattice law.
    #[default]
    Strict,
    /// Linear interpolation of the c.d.f. between lattice points, for
    /// discretized continuous laws; a point lying on the threshold counts
    /// half.
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionTail {
    pub probability: f64,
    pub log_probability: f64,
    pub tilt: f64,
    /// Estimated relative rounding error of the tail sum.
    pub rel_accuracy: f64,
}

/// Tilt solving `d/dtheta log m(theta) = threshold / n` (0 when the
/// untilted mean already reaches it).
pub fn auto_tilt(lat: &LatticeDistribution, n: usize, threshold: f64) -> f64 {
    let target = threshold / n as f64;
    if lat.mean() >= target {
        return 0.0;
    }
    let top = lat.point(lat.len() - 1);
    if target >= top {
        // event (nearly) impossible; tilt hard toward the top point
        return 50.0 / lat.step;
    }
    let mut lo = 0.0;
    let mut hi = 1.0 / (top - lat.origin).max(lat.step);
    let mut guard = 0;
    while lat.tilted_mean(hi) < target && guard < 200 {
        lo = hi;
        hi *= 2.0;
        guard += 1;
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if lat.tilted_mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Linear convolution; FFT above a small size.
fn convolve(a: &[f64], b: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let len = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 32 || a.len() * b.len() <= 1 << 14 {
        let mut out = vec![0.0; len];
        for (i, &x) in a.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        return out;
    }
    let size = len.next_power_of_two();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fa.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut fa);
    if std::ptr::eq(a, b) {
        fa.iter_mut().for_each(|z| *z = *z * *z);
    } else {
        let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
        fb.resize(size, Complex::new(0.0, 0.0));
        fwd.process(&mut fb);
        fa.iter_mut().zip(&fb).for_each(|(x, y)| *x *= y);
    }
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    fa[..len].iter().map(|z| (z.re * scale).max(0.0)).collect()
}

fn power(base: &[f64], mut n: usize, planner: &mut FftPlanner<f64>, convs: &mut usize) -> Vec<f64> {
    let mut result: Option<Vec<f64>> = None;
    let mut b = base.to_vec();
    while n > 0 {
        if n & 1 == 1 {
            result = Some(match result {
                None => b.clone(),
                Some(r) => {
                    *convs += 1;
                    convolve(&r, &b, planner)
                }
            });
        }
        n >>= 1;
        if n > 0 {
            *convs += 1;
            b = convolve(&b, &b, planner);
        }
    }
    result.unwrap_or_else(|| vec![1.0])
}

/// Weight of lattice index `s` in the tail sum above `threshold`, for sums
/// whose lattice starts at `origin`.
fn tail_weights(origin: f64, step: f64, threshold: f64, mode: TailMode) -> impl Fn(usize) -> f64 {
    let r = (threshold - origin) / step;
    let snapped = r.round();
    let on_point = (r - snapped).abs() <= 1e-9 * r.abs().max(1.0);
    move |s: usize| {
        let s = s as f64;
        match mode {
            TailMode::Strict => {
                let above = if on_point { s > snapped } else { s > r };
                if above {
                    1.0
                } else {
                    0.0
                }
            }
            TailMode::Interpolated => {
                let d = if on_point { s - snapped } else { s - r };
                (d + 0.5).clamp(0.0, 1.0)
            }
        }
    }
}

/// Un-tilts `sum_s w(s) p~(s)` over the lattice `origin + s step`.
fn untilt(
    pmf: &[f64],
    origin: f64,
    step: f64,
    n: usize,
    log_mgf: f64,
    theta: f64,
    threshold: f64,
    mode: TailMode,
    convs: usize,
) -> Result<ConvolutionTail> {
    let w = tail_weights(origin, step, threshold, mode);
    let mut acc = CompensatedSum::default();
    let mut bins = 0usize;
    let max_mass = pmf.iter().copied().fold(0.0, f64::max);
    for (s, &p) in pmf.iter().enumerate() {
        let ws = w(s);
        if ws == 0.0 || p == 0.0 {
            continue;
        }
        let x = origin + s as f64 * step;
        acc.add(ws * p * (-theta * (x - threshold)).exp());
        bins += 1;
    }
    let tilted_tail = acc.value();
    let noise = f64::EPSILON * (pmf.len().max(2) as f64).log2() * (convs as f64 + 1.0)
        * max_mass
        * (bins.max(1) as f64).sqrt();
    if tilted_tail <= 0.0 {
        return Ok(ConvolutionTail {
            probability: 0.0,
            log_probability: f64::NEG_INFINITY,
            tilt: theta,
            rel_accuracy: 0.0,
        });
    }
    let log_p = n as f64 * log_mgf - theta * threshold + tilted_tail.ln();
    if log_p < -745.0 {
        return Err(Error::LossOfPrecision(format!(
            "log probability {log_p} is outside the double range"
        )));
    }
    Ok(ConvolutionTail {
        probability: log_p.exp().min(1.0),
        log_probability: log_p,
        tilt: theta,
        rel_accuracy: noise / tilted_tail,
    })
}

/// `P(S_n > threshold)` for `n` i.i.d. copies of the lattice law.
pub fn lattice_convolution_tail(
    lat: &LatticeDistribution,
    n: usize,
    threshold: f64,
    tilt: f64,
    mode: TailMode,
) -> Result<ConvolutionTail> {
    if n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    if !(tilt >= 0.0 && tilt.is_finite()) {
        return Err(invalid("tilt", "must be finite and nonnegative"));
    }
    let (log_mgf, ws) = lat.tilted(tilt);
    let mut planner = FftPlanner::new();
    let mut convs = 0;
    let pmf = power(&ws, n, &mut planner, &mut convs);
    untilt(
        &pmf,
        n as f64 * lat.origin,
        lat.step,
        n,
        log_mgf,
        tilt,
        threshold,
        mode,
        convs,
    )
}

/// `P(S_n > threshold, at least j entries exceed jump_floor)`.
#[allow(clippy::too_many_arguments)]
pub fn lattice_convolution_tail_restricted(
    lat: &LatticeDistribution,
    n: usize,
    threshold: f64,
    j: usize,
    jump_floor: f64,
    tilt: f64,
    mode: TailMode,
) -> Result<ConvolutionTail> {
    if j == 0 || j > n {
        return Err(invalid("j", "need 1 <= j <= n"));
    }
    let (log_mgf, ws) = lat.tilted(tilt);
    let mut jump = vec![0.0; ws.len()];
    let mut rest = vec![0.0; ws.len()];
    for (i, &w) in ws.iter().enumerate() {
        if lat.point(i) > jump_floor {
            jump[i] = w;
        } else {
            rest[i] = w;
        }
    }
    let mut planner = FftPlanner::new();
    let mut convs = 0;
    let mut jpow = vec![vec![1.0]];
    for m in 1..=n {
        let next = convolve(&jpow[m - 1], &jump, &mut planner);
        jpow.push(next);
        convs += 1;
    }
    let mut rpow = vec![vec![1.0]];
    for m in 1..=(n - j) {
        let next = convolve(&rpow[m - 1], &rest, &mut planner);
        rpow.push(next);
        convs += 1;
    }
    let mut total = vec![0.0; n * (ws.len() - 1) + 1];
    for m in j..=n {
        let c = ln_choose(n as u64, m as u64).exp();
        let term = convolve(&jpow[m], &rpow[n - m], &mut planner);
        for (t, v) in total.iter_mut().zip(&term) {
            *t += c * v;
        }
    }
    untilt(
        &total,
        n as f64 * lat.origin,
        lat.step,
        n,
        log_mgf,
        tilt,
        threshold,
        mode,
        convs + 1,
    )
}

/// The exact law of `S_n` on its lattice, without tilting.
pub fn convolution_pmf(lat: &LatticeDistribution, n: usize) -> Result<LatticeDistribution> {
    if n == 0 {
        return Err(invalid("n", "must be positive"));
    }
    let mut planner = FftPlanner::new();
    let mut convs = 0;
    let pmf = power(&lat.masses, n, &mut planner, &mut convs);
    let mut sum = CompensatedSum::default();
    pmf.iter().for_each(|&w| sum.add(w));
    let z = sum.value();
    Ok(LatticeDistribution {
        origin: n as f64 * lat.origin,
        step: lat.step,
        masses: pmf.into_iter().map(|w| w / z).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallSumTail {
    /// Richardson-extrapolated value.
    pub value: f64,
    pub coarse: f64,
    pub fine: f64,
    /// `|fine - coarse| / value`.
    pub refinement_change: f64,
    /// Step relative to `M`.
    pub step: f64,
    pub rel_accuracy: f64,
}

/// `P(X_1 + ... + X_k > x M)` with `X_i = Y_i 1(|Y_i| <= M)`.
///
/// `step` is the lattice spacing in units of `M`; the sum is computed at
/// `step` and `step / 2` and combined as `(4 P(h/2) - P(h)) / 3`.
pub fn small_sum_tail_exact(
    law: &HeavyTailLaw,
    k: usize,
    x: f64,
    m: f64,
    step: f64,
) -> Result<SmallSumTail> {
    if !(1..=4).contains(&k) {
        return Err(invalid("k", format!("supported for 1 <= k <= 4, got {k}")));
    }
    if !(m > 0.0) {
        return Err(invalid("m", "truncation level must be positive"));
    }
    if k == 1 {
        let t = x * m;
        let upper = law.tail(m);
        let mut p = if t >= m {
            0.0
        } else if t >= -m {
            law.tail(t) - upper
        } else {
            law.tail_ge(-m) - upper
        };
        if t < 0.0 {
            p += upper + 1.0 - law.tail_ge(-m);
        }
        return Ok(SmallSumTail {
            value: p,
            coarse: p,
            fine: p,
            refinement_change: 0.0,
            step,
            rel_accuracy: f64::EPSILON,
        });
    }
    if !(step > 0.0 && step < 1.0) {
        return Err(invalid("step", "relative step must lie in (0, 1)"));
    }
    let scaled = ScaledLaw { law, m };
    let run = |h: f64| -> Result<ConvolutionTail> {
        let lat = scaled.discretize(h)?;
        let theta = auto_tilt(&lat, k, x);
        lattice_convolution_tail(&lat, k, x, theta, TailMode::Interpolated)
    };
    let coarse = run(step)?;
    let fine = run(step / 2.0)?;
    let value = (4.0 * fine.probability - coarse.probability) / 3.0;
    let change = if value != 0.0 {
        (fine.probability - coarse.probability).abs() / value.abs()
    } else {
        0.0
    };
    Ok(SmallSumTail {
        value,
        coarse: coarse.probability,
        fine: fine.probability,
        refinement_change: change,
        step,
        rel_accuracy: fine.rel_accuracy.max(coarse.rel_accuracy),
    })
}

/// `Y / M` truncated to `[-1, 1]`.
struct ScaledLaw<'a> {
    law: &'a HeavyTailLaw,
    m: f64,
}

impl ScaledLaw<'_> {
    fn discretize(&self, h: f64) -> Result<LatticeDistribution> {
        let m = self.m;
        let (slo, shi) = self.law.support();
        let lo = (slo / m).max(-1.0);
        let hi = (shi / m).min(1.0);
        let cell = |x: f64| (x / h - 0.5).ceil() as i64;
        let i_lo = cell(lo).min(0);
        let i_hi = cell(hi).max(0);
        let count = (i_hi - i_lo + 1) as usize;
        if count > MAX_CELLS {
            return Err(invalid("step", format!("{count} cells exceed the lattice budget")));
        }
        let mut masses = vec![0.0; count];
        let mut total = CompensatedSum::default();
        let zero = (-i_lo) as usize;
        for (slot, i) in (i_lo..=i_hi).enumerate() {
            if slot == zero {
                continue;
            }
            let a = (i as f64 - 0.5) * h;
            let b = ((i as f64 + 0.5) * h).min(1.0);
            let upper = self.law.tail(b * m);
            let w = if a < -1.0 {
                self.law.tail_ge(-m) - upper
            } else {
                self.law.tail(a * m) - upper
            };
            let w = w.max(0.0);
            masses[slot] = w;
            total.add(w);
        }
        masses[zero] = (1.0 - total.value()).max(0.0);
        let mut lat = LatticeDistribution {
            origin: i_lo as f64 * h,
            step: h,
            masses,
        };
        lat.trim();
        Ok(lat)
    }
}
