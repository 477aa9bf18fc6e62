//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls the library's numerical code.

#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

/// Nested double-exponential (tanh-sinh) rule for `c_m`.
///
/// The argument is carried as `u = m - t` together with `1 - u`, so every
/// endpoint distance is exact. Each level is a composite trapezoidal rule in
/// the transformed variable; halving the step doubles the correct digits,
/// so the difference of two steps bounds the error of the finer one.
pub struct CkOracle {
    pub alpha: f64,
    nodes: Vec<(f64, f64, f64)>,
}

impl CkOracle {
    /// `step` is the trapezoid step in the transformed variable.
    pub fn new(alpha: f64, step: f64) -> Self {
        let range = 4.5;
        let count = (range / step).round() as i64;
        let mut nodes = Vec::new();
        for j in -count..=count {
            let s = j as f64 * step;
            let e = FRAC_PI_2 * s.sinh();
            // fraction of the interval to the nearer endpoint, and the weight
            let near = 1.0 / (1.0 + (2.0 * e.abs()).exp());
            let w = step * FRAC_PI_2 * s.cosh() / (2.0 * e.cosh().powi(2));
            nodes.push((s.signum(), near, w));
        }
        CkOracle { alpha, nodes }
    }

    /// `c_m(m - u)`, with `ubar = 1 - u`.
    pub fn value(&self, m: usize, u: f64, ubar: f64) -> f64 {
        let a = self.alpha;
        if m == 1 {
            // (1 - u)^{-alpha} - 1
            return if u < 0.5 {
                (-a * (-u).ln_1p()).exp_m1()
            } else {
                ubar.powf(-a) - 1.0
            };
        }
        if u <= 0.0 {
            return 0.0;
        }
        // z runs over [1 - u, 1]; inner argument u' = z - (1 - u)
        let mut sum = 0.0;
        for &(side, frac, w) in &self.nodes {
            let d = u * frac;
            let (z, u_in, ubar_in) = if side < 0.0 {
                (ubar + d, d, 1.0 - d)
            } else if side > 0.0 {
                (1.0 - d, u - d, ubar + d)
            } else {
                (ubar + 0.5 * u, 0.5 * u, ubar + 0.5 * u)
            };
            if z <= 0.0 || w == 0.0 {
                continue;
            }
            sum += w * u * self.value(m - 1, u_in, ubar_in) * z.powf(-a - 1.0);
        }
        a * sum
    }

    /// `c_k(t)` for `t in [k - 1, k]`.
    pub fn ck(&self, k: usize, t: f64) -> f64 {
        let u = k as f64 - t;
        self.value(k, u, 1.0 - u)
    }
}

/// `c_k(t)` from two step sizes: `(value, |difference|)`.
pub fn ck_oracle(k: usize, t: f64, alpha: f64) -> (f64, f64) {
    let coarse = CkOracle::new(alpha, 1.0 / 16.0).ck(k, t);
    let fine = CkOracle::new(alpha, 1.0 / 32.0).ck(k, t);
    (fine, (fine - coarse).abs())
}

/// `E[Z 1(Z > 0)]` for `Z ~ S_alpha(sigma, beta, 0)` with `1 < alpha < 2`.
///
/// `E Z = 0`, so the positive part is half of `E|Z|`, which equals
/// `(2/pi) int_0^inf (1 - Re phi(u)) u^{-2} du`. With
/// `phi(u) = exp(-A u^alpha)` for `u > 0` the integral is
/// `Gamma(1 - 1/alpha) Re A^{1/alpha}`.
pub fn stable_positive_mean(alpha: f64, sigma: f64, beta: f64) -> f64 {
    let re = sigma.powf(alpha);
    let im = -re * beta * (FRAC_PI_2 * alpha).tan();
    let (r, arg) = (re.hypot(im), im.atan2(re));
    let root = r.powf(1.0 / alpha) * (arg / alpha).cos();
    statrs::function::gamma::gamma(1.0 - 1.0 / alpha) * root / std::f64::consts::PI
}

/// Empirical probability with its binomial standard error.
pub fn frequency(hits: u64, total: u64) -> (f64, f64) {
    let p = hits as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

/// Writes straight to the process stdout so the line survives the test
/// harness's output capture.
pub fn pass_line(id: &str, ok: bool, detail: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{id} {} | {detail}", if ok { "PASS" } else { "FAIL" });
    let _ = out.flush();
}
