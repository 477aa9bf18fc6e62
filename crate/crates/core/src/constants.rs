//! The recursive constants `c_k` and the rate formulas built from them.
//!
//! `c_1(t) = t^{-alpha} - 1` on `[0, 1]` and
//! `c_{k+1}(t) = alpha * int_{t-k}^1 c_k(t - z) z^{-alpha-1} dz` on `[k, k+1]`.
//! Internally level `m` is stored as `g_m(w) = c_m(m - 1 + w)`, `w in [0, 1]`,
//! which turns the recursion into
//! `g_{m+1}(v) = alpha * int_v^1 g_m(w) (1 + v - w)^{-alpha-1} dw`.
//! Since `g_m(1) = 0`, differentiating under the integral gives the same
//! kernel applied to `g_m'`, so every table carries exact node derivatives
//! and is interpolated by cubic Hermite pieces.
//!
//! Tables share one grid: `w = 0`, a geometric run from `1e-10` to `1/2`
//! resolving the `w^{1-alpha}` behaviour at the left end, and a uniform run
//! to `1`. Level 2 is integrated from the closed form of `c_1`; each higher
//! level is integrated cell by cell against the previous interpolant. The
//! error bound of every node adds the quadrature error to the previous
//! level's interpolation error carried through the exact kernel mass.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::factorial;

use crate::distributions::{quantile_b_n, HeavyTailLaw};
use crate::error::{invalid, Error, Result};
use crate::estimators::Estimate;
use crate::model::{validate_schedule, ModelConfig, ScheduleReport};
use crate::parallel::{map_indices, CompensatedSum, Execution};
use crate::quadrature::{integrate, integrate_power_graded, Grading, QuadResult};
use crate::stable::{limit_law_for, positive_part_moment, LimitLaw, MomentMethod};

/// A value with an absolute error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounded {
    pub value: f64,
    pub error_bound: f64,
}

/// `c_1(t) = t^{-alpha} - 1`, with `c_1(0) = +inf`.
pub fn c1(t: f64, alpha: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfDomain {
            value: t,
            domain: "[0, 1]".into(),
        });
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid("alpha", "must be positive"));
    }
    Ok(g1(t, alpha))
}

#[inline]
fn g1(w: f64, alpha: f64) -> f64 {
    if w == 0.0 {
        f64::INFINITY
    } else {
        (-alpha * w.ln()).exp_m1()
    }
}

/// Smallest positive grid node.
const FIRST_NODE: f64 = 1e-10;
/// Share of the requested tolerance given to quadrature.
const QUAD_SHARE: f64 = 1e-2;
/// Safety factor on the midpoint interpolation check.
const MID_SAFETY: f64 = 1.5;

fn build_grid(tol: f64) -> Vec<f64> {
    let step = tol.powf(0.25).min(0.01);
    let ratio = 1.0 + (2.0 * step).min(0.05);
    let mut w = vec![0.0, FIRST_NODE];
    let mut x = FIRST_NODE;
    loop {
        x *= ratio;
        if x >= 0.5 {
            break;
        }
        w.push(x);
    }
    let cells = (0.5 / step).ceil() as usize;
    for i in 0..=cells {
        w.push(0.5 + 0.5 * i as f64 / cells as f64);
    }
    w.dedup();
    *w.last_mut().unwrap() = 1.0;
    w
}

/// One tabulated level `g_m` on the shared grid.
#[derive(Debug, Clone)]
struct Level {
    alpha: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
    node_error: Vec<f64>,
    /// Bound on `|g_m - H|` over each cell.
    cell_error: Vec<f64>,
}

#[inline]
fn hermite(w0: f64, w1: f64, y0: f64, y1: f64, d0: f64, d1: f64, w: f64) -> (f64, f64) {
    let h = w1 - w0;
    let s = (w - w0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let v = (2.0 * s3 - 3.0 * s2 + 1.0) * y0
        + (s3 - 2.0 * s2 + s) * h * d0
        + (3.0 * s2 - 2.0 * s3) * y1
        + (s3 - s2) * h * d1;
    let dv = (6.0 * s2 - 6.0 * s) * (y0 - y1) / h
        + (3.0 * s2 - 4.0 * s + 1.0) * d0
        + (3.0 * s2 - 2.0 * s) * d1;
    (v, dv)
}

/// On `[0, w1]` the leading behaviour is `a + b w^{1-alpha}`, which this
/// interpolates exactly.
#[inline]
fn first_cell(y0: f64, y1: f64, w1: f64, alpha: f64, w: f64) -> (f64, f64) {
    let e = 1.0 - alpha;
    let r = (w / w1).powf(e);
    let d = if w > 0.0 {
        (y1 - y0) * e * r / w
    } else {
        f64::NEG_INFINITY
    };
    (y0 + (y1 - y0) * r, d)
}

impl Level {
    /// Interpolant and its derivative on cell `i`.
    #[inline]
    fn eval(&self, grid: &[f64], i: usize, w: f64) -> (f64, f64) {
        let (w0, w1) = (grid[i], grid[i + 1]);
        if i == 0 {
            return first_cell(self.values[0], self.values[1], w1, self.alpha, w);
        }
        hermite(
            w0,
            w1,
            self.values[i],
            self.values[i + 1],
            self.slopes[i],
            self.slopes[i + 1],
            w,
        )
    }

    /// Limits slopes so that every Hermite piece stays monotone.
    fn fritsch_carlson(&mut self, grid: &[f64]) {
        for i in 1..grid.len() - 1 {
            let h = grid[i + 1] - grid[i];
            let delta = (self.values[i + 1] - self.values[i]) / h;
            if delta == 0.0 {
                self.slopes[i] = 0.0;
                self.slopes[i + 1] = 0.0;
                continue;
            }
            let mut a = self.slopes[i] / delta;
            let mut b = self.slopes[i + 1] / delta;
            if a < 0.0 {
                self.slopes[i] = 0.0;
                a = 0.0;
            }
            if b < 0.0 {
                self.slopes[i + 1] = 0.0;
                b = 0.0;
            }
            let r = a * a + b * b;
            if r > 9.0 {
                let tau = 3.0 / r.sqrt();
                self.slopes[i] = tau * a * delta;
                self.slopes[i + 1] = tau * b * delta;
            }
        }
    }
}

/// `int_a^b (1 + v - w)^{-alpha-1} dw`, exactly.
#[inline]
fn kernel_mass(v: f64, a: f64, b: f64, alpha: f64) -> f64 {
    (((1.0 - b) + v).powf(-alpha) - ((1.0 - a) + v).powf(-alpha)) / alpha
}

/// `int_v^hi f` through `w = v e^s`, for integrands with scale `v` at `w = v`.
fn lower_log<F: Fn(f64, f64) -> f64>(f: F, v: f64, hi: f64, tol: f64, panels: usize) -> QuadResult {
    integrate(
        |s: f64| {
            let w = v * s.exp();
            f(w, (1.0 - w) + v) * w
        },
        0.0,
        (hi / v).ln(),
        tol,
        1e-14,
        panels,
    )
}

/// `int_lo^1 f` through `1 + v - w = v e^s`, resolving the kernel peak of
/// width `v` at `w = 1`.
fn upper_log<F: Fn(f64, f64) -> f64>(f: F, v: f64, lo: f64, tol: f64, panels: usize) -> QuadResult {
    integrate(
        |s: f64| {
            let rho = v * s.exp();
            f((1.0 + v) - rho, rho) * rho
        },
        0.0,
        (((1.0 - lo) + v) / v).ln(),
        tol,
        1e-14,
        panels,
    )
}

/// `int_0^1 f` with `w = t^q / 2` on the lower half and `1 - w = t^q / 2` on
/// the upper half; `f(w, 1 - w)` receives the exact endpoint distance.
fn graded_unit<F: Fn(f64, f64) -> f64>(f: F, q: f64, tol: f64, panels: usize) -> QuadResult {
    let mut r = integrate(
        |t: f64| {
            let w = 0.5 * t.powf(q);
            if w == 0.0 {
                0.0
            } else {
                f(w, 1.0 - w) * 0.5 * q * t.powf(q - 1.0)
            }
        },
        0.0,
        1.0,
        0.5 * tol,
        1e-14,
        panels,
    );
    r.add(integrate(
        |t: f64| {
            let u = 0.5 * t.powf(q);
            if u == 0.0 {
                0.0
            } else {
                f(1.0 - u, u) * 0.5 * q * t.powf(q - 1.0)
            }
        },
        0.0,
        1.0,
        0.5 * tol,
        1e-14,
        panels,
    ));
    r
}

/// `c_1` at `w` given the distance `u = 1 - w`.
#[inline]
fn g1_near_one(w: f64, u: f64, alpha: f64) -> f64 {
    if u < 0.5 {
        (-alpha * (-u).ln_1p()).exp_m1()
    } else {
        g1(w, alpha)
    }
}

/// Evaluates the recursion for `c_k` at fixed `alpha` and tolerance, caching
/// the intermediate tables.
#[derive(Debug, Clone)]
pub struct CkSolver {
    alpha: f64,
    tol: f64,
    exec: Execution,
    grid: Vec<f64>,
    /// `levels[m - 2]` holds `g_m`.
    levels: Vec<Level>,
    max_panels: usize,
}

impl CkSolver {
    pub fn new(alpha: f64, tol: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(
                "alpha",
                format!("the recursion is only integrable for 0 < alpha < 1, got {alpha}"),
            ));
        }
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(invalid("tol", "must be positive"));
        }
        Ok(CkSolver {
            alpha,
            tol,
            exec: Execution::default(),
            grid: build_grid(tol),
            levels: Vec::new(),
            max_panels: 2000,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    /// Caps the panels of each adaptive integral.
    pub fn with_max_panels(mut self, max_panels: usize) -> Self {
        self.max_panels = max_panels.max(1);
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    fn quad_tol(&self) -> f64 {
        self.tol * QUAD_SHARE
    }

    /// `g_2(v)` and its quadrature error, straight from `c_1`.
    fn level2_value(&self, v: f64) -> QuadResult {
        let a = self.alpha;
        let tol = self.quad_tol() / a;
        // rho = 1 + v - w is the distance to the kernel pole
        let f = |w: f64, rho: f64| {
            if w > 0.0 && rho > 0.0 {
                g1_near_one(w, rho - v, a) * rho.powf(-a - 1.0)
            } else {
                0.0
            }
        };
        let mut r = if v >= 1.0 {
            QuadResult {
                converged: true,
                ..Default::default()
            }
        } else if v == 0.0 {
            graded_unit(f, 1.0 / (1.0 - a), tol, self.max_panels)
        } else {
            let mid = 0.5 * (1.0 + v);
            let mut r = lower_log(f, v, mid, 0.5 * tol, self.max_panels);
            r.add(upper_log(f, v, mid, 0.5 * tol, self.max_panels));
            r
        };
        r.value *= a;
        r.error *= a;
        r
    }

    /// `g_2'(v)` for `0 < v < 1`, with logarithmic maps at both ends.
    fn level2_slope(&self, v: f64) -> f64 {
        let a = self.alpha;
        if v >= 1.0 {
            return 0.0;
        }
        if v <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let mid = 0.5 * (1.0 + v);
        let f = |w: f64, rho: f64| -a * w.powf(-a - 1.0) * rho.powf(-a - 1.0);
        let lower = lower_log(f, v, mid, self.quad_tol(), self.max_panels);
        let upper = upper_log(f, v, mid, self.quad_tol(), self.max_panels);
        a * (lower.value + upper.value)
    }

    /// `g_{m+1}(v)` (or its slope) from the table of `g_m`: `(value,
    /// quadrature error, propagated interpolation error)`.
    fn next_level(&self, prev: &Level, v: f64, slope: bool) -> (f64, f64, f64) {
        let a = self.alpha;
        let grid = &self.grid;
        let cells = grid.len() - 1;
        if v >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let first = match grid.binary_search_by(|x| x.total_cmp(&v)) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let cell_tol = self.quad_tol() / (a * (cells - first) as f64);
        let mut value = CompensatedSum::default();
        let (mut qerr, mut perr) = (0.0, 0.0);
        for i in first..cells {
            let lo = grid[i].max(v);
            let hi = grid[i + 1];
            if lo >= hi {
                continue;
            }
            let f = |w: f64, rho: f64| {
                let (y, dy) = prev.eval(grid, i, w);
                (if slope { dy } else { y }) * rho.powf(-a - 1.0)
            };
            let g = |w: f64| f(w, (1.0 - w) + v);
            let r = if i + 1 == cells && v > 0.0 {
                upper_log(f, v, lo, cell_tol, self.max_panels)
            } else if i + 1 == cells {
                integrate_power_graded(
                    g,
                    lo,
                    hi,
                    1.0 / (1.0 - a),
                    Grading {
                        lower: false,
                        upper: true,
                    },
                    cell_tol,
                    self.max_panels,
                )
            } else {
                integrate(g, lo, hi, cell_tol, 0.0, self.max_panels)
            };
            value.add(r.value);
            qerr += r.error;
            if !slope {
                let eps = prev.cell_error[i];
                let mut bound = eps * kernel_mass(v, lo, hi, a);
                if i + 1 == cells {
                    // the error vanishes quadratically at w = 1
                    let h = hi - grid[i];
                    bound = bound.min(16.0 * eps * h.powf(-a) / (2.0 - a));
                }
                perr += bound;
            }
        }
        (a * value.value(), a * qerr, a * perr)
    }

    /// Value of `g_m(v)` with its error bound, computed directly from the
    /// table of `g_{m-1}` (or from `c_1` when `m = 2`).
    fn direct(&self, m: usize, v: f64) -> Bounded {
        if m == 2 {
            let r = self.level2_value(v);
            Bounded {
                value: r.value,
                error_bound: r.error,
            }
        } else {
            let (val, q, p) = self.next_level(&self.levels[m - 3], v, false);
            Bounded {
                value: val,
                error_bound: q + p,
            }
        }
    }

    fn slope(&self, m: usize, v: f64) -> f64 {
        if m == 2 {
            self.level2_slope(v)
        } else {
            self.next_level(&self.levels[m - 3], v, true).0
        }
    }

    /// Builds tables up to level `m`.
    fn ensure(&mut self, m: usize) {
        while self.levels.len() + 2 <= m {
            let level = self.levels.len() + 2;
            let built = self.build_level(level);
            self.levels.push(built);
        }
    }

    fn build_level(&self, m: usize) -> Level {
        let grid = &self.grid;
        let n = grid.len();
        let nodes: Vec<(Bounded, f64)> = map_indices(n as u64, self.exec, |j| {
            let v = grid[j as usize];
            if j as usize == n - 1 {
                // g_m(1) = g_m'(1) = 0 for m >= 2
                return (
                    Bounded {
                        value: 0.0,
                        error_bound: 0.0,
                    },
                    0.0,
                );
            }
            (self.direct(m, v), self.slope(m, v))
        });
        let mut level = Level {
            alpha: self.alpha,
            values: nodes.iter().map(|p| p.0.value).collect(),
            slopes: nodes.iter().map(|p| p.1).collect(),
            node_error: nodes.iter().map(|p| p.0.error_bound).collect(),
            cell_error: vec![0.0; n - 1],
        };
        level.fritsch_carlson(grid);
        let mids: Vec<Bounded> = map_indices((n - 1) as u64, self.exec, |i| {
            let i = i as usize;
            self.direct(m, 0.5 * (grid[i] + grid[i + 1]))
        });
        for i in 0..n - 1 {
            let mid = 0.5 * (grid[i] + grid[i + 1]);
            let (h, _) = level.eval(grid, i, mid);
            level.cell_error[i] = level.node_error[i].max(level.node_error[i + 1])
                + MID_SAFETY * (h - mids[i].value).abs()
                + mids[i].error_bound;
        }
        level
    }

    /// `c_k(t)` for `t in [k - 1, k]`.
    pub fn value(&mut self, k: usize, t: f64) -> Result<Bounded> {
        if k == 0 {
            return Err(invalid("k", "must be positive"));
        }
        let lo = (k - 1) as f64;
        let hi = k as f64;
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfDomain {
                value: t,
                domain: format!("[{lo}, {hi}]"),
            });
        }
        if k == 1 {
            return Ok(Bounded {
                value: g1(t, self.alpha),
                error_bound: 0.0,
            });
        }
        if t == hi {
            return Ok(Bounded {
                value: 0.0,
                error_bound: 0.0,
            });
        }
        self.ensure(k - 1);
        let r = self.direct(k, t - lo);
        self.certify(r)
    }

    fn certify(&self, r: Bounded) -> Result<Bounded> {
        if !(r.error_bound <= self.tol) || !r.value.is_finite() {
            return Err(Error::NonConvergence {
                achieved: r.error_bound,
                requested: self.tol,
            });
        }
        Ok(r)
    }

    /// The full table of `c_k` on `[k - 1, k]`.
    pub fn table(&mut self, k: usize) -> Result<CkTable> {
        if k == 0 {
            return Err(invalid("k", "must be positive"));
        }
        let offset = (k - 1) as f64;
        if k == 1 {
            let points = self
                .grid
                .iter()
                .map(|&w| CkPoint {
                    t: w,
                    value: g1(w, self.alpha),
                    error_bound: 0.0,
                })
                .collect();
            let slopes = self
                .grid
                .iter()
                .map(|&w| -self.alpha * w.powf(-self.alpha - 1.0))
                .collect();
            return Ok(CkTable {
                k,
                alpha: self.alpha,
                tol: self.tol,
                points,
                slopes,
                cell_error: vec![0.0; self.grid.len() - 1],
            });
        }
        self.ensure(k);
        let level = &self.levels[k - 2];
        let worst = level.cell_error.iter().copied().fold(0.0, f64::max);
        if !(worst <= self.tol) {
            return Err(Error::NonConvergence {
                achieved: worst,
                requested: self.tol,
            });
        }
        Ok(CkTable {
            k,
            alpha: self.alpha,
            tol: self.tol,
            points: self
                .grid
                .iter()
                .zip(&level.values)
                .zip(&level.node_error)
                .map(|((&w, &value), &error_bound)| CkPoint {
                    t: offset + w,
                    value,
                    error_bound,
                })
                .collect(),
            slopes: level.slopes.clone(),
            cell_error: level.cell_error.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CkPoint {
    pub t: f64,
    /// `+inf` at `t = 0` when `k = 1`.
    pub value: f64,
    pub error_bound: f64,
}

/// `c_k` tabulated on `[k - 1, k]`; immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CkTable {
    pub k: usize,
    pub alpha: f64,
    pub tol: f64,
    pub points: Vec<CkPoint>,
    slopes: Vec<f64>,
    cell_error: Vec<f64>,
}

impl CkTable {
    pub fn build(k: usize, alpha: f64, tol: f64) -> Result<Self> {
        CkSolver::new(alpha, tol)?.table(k)
    }

    pub fn grid(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.points.iter().map(|p| (p.t, p.value))
    }

    /// Interpolated `c_k(t)` with the error bound of its cell.
    pub fn eval(&self, t: f64) -> Result<Bounded> {
        let (lo, hi) = (self.points[0].t, self.points[self.points.len() - 1].t);
        if !(t >= lo && t <= hi) {
            return Err(Error::OutOfDomain {
                value: t,
                domain: format!("[{lo}, {hi}]"),
            });
        }
        if self.k == 1 {
            return Ok(Bounded {
                value: g1(t, self.alpha),
                error_bound: 0.0,
            });
        }
        let i = match self.points.binary_search_by(|p| p.t.total_cmp(&t)) {
            Ok(i) => {
                return Ok(Bounded {
                    value: self.points[i].value,
                    error_bound: self.points[i].error_bound,
                })
            }
            Err(i) => i - 1,
        };
        let (p0, p1) = (self.points[i], self.points[i + 1]);
        let value = if i == 0 {
            first_cell(p0.value, p1.value, p1.t - p0.t, self.alpha, t - p0.t).0
        } else {
            hermite(p0.t, p1.t, p0.value, p1.value, self.slopes[i], self.slopes[i + 1], t).0
        };
        Ok(Bounded {
            value,
            error_bound: self.cell_error[i],
        })
    }

    /// Writes `t,value,error_bound` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,value,error_bound")?;
        for p in &self.points {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", p.t, p.value, p.error_bound)?;
        }
        Ok(())
    }
}

/// `c_k(t)` with an error bound not above `tol`.
pub fn ck(k: usize, t: f64, alpha: f64, tol: f64) -> Result<Bounded> {
    CkSolver::new(alpha, tol)?.value(k, t)
}

/// `alpha^k / (k!)^2 * E[Z^k 1(Z > 0)]`.
pub fn theorem1_constant(
    k: u32,
    alpha: f64,
    limit_law: &LimitLaw,
    method: MomentMethod,
) -> Result<Estimate> {
    if k == 0 {
        return Err(invalid("k", "must be positive"));
    }
    if !(alpha > 1.0 && alpha >= k as f64) {
        return Err(invalid(
            "alpha",
            format!("need alpha > 1 and alpha >= k, got alpha={alpha}, k={k}"),
        ));
    }
    let moment = positive_part_moment(limit_law, k, method)?;
    let scale = alpha.powi(k as i32) / factorial(k as u64).powi(2);
    let mut est = moment;
    est.value *= scale;
    est.stderr *= scale;
    est.bias_bound *= scale;
    Ok(est)
}

fn check_theorem2_domain(k: usize, alpha: f64) -> Result<()> {
    if k == 0 {
        return Err(invalid("k", "must be positive"));
    }
    let limit = k as f64 / (k as f64 + 2.0);
    if !(alpha > 0.0 && alpha < limit) {
        return Err(invalid(
            "alpha",
            format!("need 0 < alpha < k/(k+2) = {limit}, got {alpha}"),
        ));
    }
    Ok(())
}

/// `c_{k+1}(k) / (k+1)!`.
pub fn theorem2_constant(k: usize, alpha: f64, tol: f64) -> Result<Bounded> {
    check_theorem2_domain(k, alpha)?;
    let f = factorial(k as u64 + 1);
    let c = ck(k + 1, k as f64, alpha, tol * f)?;
    Ok(Bounded {
        value: c.value / f,
        error_bound: c.error_bound / f,
    })
}

/// Factors of the first rate formula
/// `c_n^k n^k M_n^{-k} P(Y > M_n)^k * constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Rate {
    pub rate: f64,
    pub log_rate: f64,
    pub c_n: f64,
    pub c_n_power: f64,
    pub n_power: f64,
    pub m_power: f64,
    pub tail_power: f64,
    pub constant: Estimate,
    /// Set when the rate was computed despite a failed schedule check.
    pub forced: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleReport>,
}

impl Theorem1Rate {
    /// Standard error of `rate` inherited from the constant.
    pub fn rate_stderr(&self) -> f64 {
        if self.constant.value == 0.0 {
            0.0
        } else {
            self.rate * self.constant.stderr / self.constant.value
        }
    }
}

/// The first rate formula at a single `(n, M_n)`, without a schedule check.
pub fn theorem1_rate(
    k: u32,
    alpha: f64,
    law: &HeavyTailLaw,
    n: u64,
    m_n: f64,
    method: MomentMethod,
) -> Result<Theorem1Rate> {
    let limit = limit_law_for(alpha, law.balance_p(), law.variance())?;
    let constant = theorem1_constant(k, alpha, &limit, method)?;
    theorem1_rate_with(k, alpha, law, n, m_n, constant)
}

/// The first rate formula with a precomputed constant, so one Monte Carlo
/// moment can serve a whole sweep over `n`.
pub fn theorem1_rate_with(
    k: u32,
    alpha: f64,
    law: &HeavyTailLaw,
    n: u64,
    m_n: f64,
    constant: Estimate,
) -> Result<Theorem1Rate> {
    if n == 0 || !(m_n > 0.0) {
        return Err(invalid("n", "need n >= 1 and M_n > 0"));
    }
    let c_n = if alpha < 2.0 {
        quantile_b_n(law, n)
    } else {
        (n as f64).sqrt()
    };
    let kf = k as f64;
    let tail = law.tail(m_n);
    let c_n_power = c_n.powf(kf);
    let n_power = (n as f64).powf(kf);
    let m_power = m_n.powf(-kf);
    let tail_power = tail.powf(kf);
    let log_rate = kf * (c_n.ln() + (n as f64).ln() - m_n.ln() + tail.ln()) + constant.value.ln();
    Ok(Theorem1Rate {
        rate: c_n_power * n_power * m_power * tail_power * constant.value,
        log_rate,
        c_n,
        c_n_power,
        n_power,
        m_power,
        tail_power,
        constant,
        forced: false,
        schedule: None,
    })
}

/// The first rate formula after validating the configuration's schedule on
/// `n_range`; `force` computes it anyway and marks the result.
pub fn theorem1_rate_checked(
    config: &ModelConfig,
    n: u64,
    n_range: &[u64],
    method: MomentMethod,
    force: bool,
) -> Result<Theorem1Rate> {
    let report = validate_schedule(config, n_range)?;
    let forced = gate(&report, force)?;
    let mut r = theorem1_rate(
        config.k,
        config.law.alpha(),
        &config.law,
        n,
        config.m_n(n),
        method,
    )?;
    r.forced = forced;
    r.schedule = Some(report);
    Ok(r)
}

fn gate(report: &ScheduleReport, force: bool) -> Result<bool> {
    if report.passed {
        Ok(false)
    } else if force {
        Ok(true)
    } else {
        Err(Error::ScheduleRejected(report.failures.join("; ")))
    }
}

/// Factors of the second rate formula
/// `c_{k+1}(k)/(k+1)! * n^{k+1} P(Y > M_n)^{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Rate {
    pub rate: f64,
    pub log_rate: f64,
    pub n_power: f64,
    pub tail_power: f64,
    pub constant: Bounded,
    /// Bound on `|rate - exact formula|` from the constant.
    pub error_bound: f64,
    pub forced: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<ScheduleReport>,
}

pub fn theorem2_rate(
    k: usize,
    alpha: f64,
    law: &HeavyTailLaw,
    n: u64,
    m_n: f64,
    tol: f64,
) -> Result<Theorem2Rate> {
    let constant = theorem2_constant(k, alpha, tol)?;
    theorem2_rate_with(k, law, n, m_n, constant)
}

/// The second rate formula with a precomputed constant.
pub fn theorem2_rate_with(
    k: usize,
    law: &HeavyTailLaw,
    n: u64,
    m_n: f64,
    constant: Bounded,
) -> Result<Theorem2Rate> {
    if n == 0 || !(m_n > 0.0) {
        return Err(invalid("n", "need n >= 1 and M_n > 0"));
    }
    let p = (k + 1) as f64;
    let tail = law.tail(m_n);
    let n_power = (n as f64).powf(p);
    let tail_power = tail.powf(p);
    let factor = n_power * tail_power;
    Ok(Theorem2Rate {
        rate: constant.value * factor,
        log_rate: constant.value.ln() + p * ((n as f64).ln() + tail.ln()),
        n_power,
        tail_power,
        constant,
        error_bound: constant.error_bound * factor,
        forced: false,
        schedule: None,
    })
}

pub fn theorem2_rate_checked(
    config: &ModelConfig,
    n: u64,
    n_range: &[u64],
    tol: f64,
    force: bool,
) -> Result<Theorem2Rate> {
    let report = validate_schedule(config, n_range)?;
    let forced = gate(&report, force)?;
    let mut r = theorem2_rate(
        config.k as usize,
        config.law.alpha(),
        &config.law,
        n,
        config.m_n(n),
        tol,
    )?;
    r.forced = forced;
    r.schedule = Some(report);
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::function::gamma::gamma;

    /// `c_2(1) = 1 + alpha B(-alpha, 1 - alpha)`, continuing
    /// `int_0^1 z^{a-1}((1-z)^{b-1} - 1) dz = B(a, b) - 1/a` to `a = -alpha`.
    fn c2_at_1(alpha: f64) -> f64 {
        1.0 + alpha * gamma(-alpha) * gamma(1.0 - alpha) / gamma(1.0 - 2.0 * alpha)
    }

    #[test]
    fn c1_examples() {
        assert_eq!(c1(1.0, 0.7).unwrap(), 0.0);
        assert_eq!(c1(0.0, 0.7).unwrap(), f64::INFINITY);
        assert_relative_eq!(c1(0.5, 1.0).unwrap(), 1.0, max_relative = 1e-15);
        assert!(c1(1.5, 0.5).is_err());
        assert!(c1(-0.1, 0.5).is_err());
    }

    #[test]
    fn grid_is_increasing_and_closed() {
        for tol in [1e-6, 1e-8, 1e-10] {
            let g = build_grid(tol);
            assert_eq!(g[0], 0.0);
            assert_eq!(*g.last().unwrap(), 1.0);
            assert!(g.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn beta_function_values_of_c2_at_one() {
        for alpha in [0.1, 0.3, 0.5, 0.8] {
            let r = ck(2, 1.0, alpha, 1e-9).unwrap();
            assert!((r.value - c2_at_1(alpha)).abs() < 2e-9, "alpha={alpha}: {r:?}");
            assert!(r.error_bound <= 1e-9);
        }
    }

    #[test]
    fn right_endpoint_is_zero() {
        for k in 2..=4 {
            assert_eq!(ck(k, k as f64, 0.4, 1e-8).unwrap().value, 0.0);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(ck(2, 1.5, 1.0, 1e-8).is_err());
        assert!(ck(2, 1.5, 0.5, 0.0).is_err());
        assert!(matches!(
            ck(3, 1.5, 0.5, 1e-8),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(theorem2_constant(1, 1.0 / 3.0, 1e-8).is_err());
        assert!(theorem2_constant(2, 0.5, 1e-8).is_err());
    }

    #[test]
    fn tolerance_refinement_is_consistent() {
        let mut coarse = CkSolver::new(0.4, 1e-7).unwrap();
        let mut fine = CkSolver::new(0.4, 1e-8).unwrap();
        for (k, t) in [(2, 1.3), (3, 2.0), (3, 2.6)] {
            let a = coarse.value(k, t).unwrap();
            let b = fine.value(k, t).unwrap();
            assert!((a.value - b.value).abs() <= a.error_bound, "k={k} t={t}");
        }
    }

    #[test]
    fn tables_are_monotone_with_power_endpoint() {
        let mut s = CkSolver::new(0.4, 1e-8).unwrap();
        for k in 2..=3 {
            let tab = s.table(k).unwrap();
            assert!(tab.points.windows(2).all(|p| p[1].value <= p[0].value), "k={k}");
            assert_eq!(tab.points.last().unwrap().value, 0.0);
            let kk = k as f64;
            let ratios: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
                .iter()
                .map(|&u| tab.eval(kk - u).unwrap().value / u.powi(k as i32))
                .collect();
            assert!(ratios.iter().all(|r| r.is_finite() && *r > 0.0 && *r < 10.0), "{ratios:?}");
        }
    }

    #[test]
    fn table_interpolation_matches_direct_values() {
        let mut s = CkSolver::new(0.3, 1e-8).unwrap();
        let tab = s.table(3).unwrap();
        for t in [2.0, 2.000_1, 2.17, 2.5, 2.93] {
            let i = tab.eval(t).unwrap();
            let d = s.value(3, t).unwrap();
            assert!((i.value - d.value).abs() <= i.error_bound + d.error_bound, "t={t}");
        }
    }

    #[test]
    fn execution_modes_agree() {
        let a = CkSolver::new(0.4, 1e-7)
            .unwrap()
            .with_execution(Execution::Sequential)
            .value(3, 2.0)
            .unwrap();
        let b = CkSolver::new(0.4, 1e-7)
            .unwrap()
            .with_execution(Execution::Parallel)
            .value(3, 2.0)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_csv_has_header_and_rows() {
        let tab = CkTable::build(2, 0.5, 1e-6).unwrap();
        let mut buf = Vec::new();
        tab.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,value,error_bound\n"));
        assert_eq!(text.lines().count(), tab.points.len() + 1);
    }

    #[test]
    fn theorem1_constant_examples() {
        let n1 = LimitLaw::normal(1.0).unwrap();
        let c = theorem1_constant(2, 2.0, &n1, MomentMethod::ClosedForm).unwrap();
        assert_relative_eq!(c.value, 0.5, max_relative = 1e-14);
        let n = LimitLaw::normal(1.7).unwrap();
        let c = theorem1_constant(2, 3.0, &n, MomentMethod::ClosedForm).unwrap();
        assert_relative_eq!(c.value, 9.0 / 4.0 * 1.7 / 2.0, max_relative = 1e-14);
        // scales as sigma^k
        let n4 = LimitLaw::normal(4.0).unwrap();
        let c1v = theorem1_constant(3, 3.0, &n1, MomentMethod::ClosedForm).unwrap();
        let c4 = theorem1_constant(3, 3.0, &n4, MomentMethod::ClosedForm).unwrap();
        assert_relative_eq!(c4.value / c1v.value, 8.0, max_relative = 1e-14);
        assert!(theorem1_constant(2, 1.5, &n1, MomentMethod::ClosedForm).is_err());
    }

    #[test]
    fn theorem2_constant_k1() {
        let c = theorem2_constant(1, 0.3, 1e-9).unwrap();
        assert!((c.value - c2_at_1(0.3) / 2.0).abs() < 1e-9);
        // value grows toward the domain boundary
        let near = theorem2_constant(1, 0.333, 1e-8).unwrap();
        assert!(near.value.is_finite() && near.value > c.value);
    }

    #[test]
    fn theorem1_rate_factors() {
        let law = HeavyTailLaw::shifted_pareto(3.0);
        let r = theorem1_rate(2, 3.0, &law, 10_000, 1e4, MomentMethod::ClosedForm).unwrap();
        assert_relative_eq!(r.c_n, 100.0, max_relative = 1e-15);
        assert_relative_eq!(r.n_power, 1e8, max_relative = 1e-15);
        assert_relative_eq!(r.m_power, 1e-8, max_relative = 1e-15);
        assert_relative_eq!(r.tail_power, law.tail(1e4).powi(2), max_relative = 1e-14);
        let var = law.variance().unwrap();
        assert_relative_eq!(r.constant.value, 9.0 / 4.0 * var / 2.0, max_relative = 1e-14);
        let product = r.c_n_power * r.n_power * r.m_power * r.tail_power * r.constant.value;
        assert_relative_eq!(r.rate, product, max_relative = 1e-12);
    }

    #[test]
    fn theorem1_rate_uses_quantile_below_two() {
        let law = HeavyTailLaw::pareto(1.5);
        let method = MomentMethod::MonteCarlo {
            samples: 1000,
            seed: 1,
        };
        let r = theorem1_rate(1, 1.5, &law, 1_000_000, 1e6, method).unwrap();
        assert_relative_eq!(r.c_n, 1e4, max_relative = 1e-12);
    }

    #[test]
    fn zero_tail_gives_zero_rate() {
        let law = HeavyTailLaw::lattice(vec![-1.0, 2.0], vec![2.0 / 3.0, 1.0 / 3.0]).unwrap();
        let r = theorem1_rate(2, 3.0, &law, 100, 5.0, MomentMethod::ClosedForm).unwrap();
        assert_eq!(r.rate, 0.0);
        let r = theorem2_rate(1, 0.3, &HeavyTailLaw::pareto(0.3), 10, f64::INFINITY, 1e-8).unwrap();
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn theorem2_rate_powers() {
        let law = HeavyTailLaw::pareto(0.3);
        let m = 1e-8f64.powf(-1.0 / 0.3);
        let r = theorem2_rate(1, 0.3, &law, 100, m, 1e-9).unwrap();
        assert_relative_eq!(r.tail_power, 1e-16, max_relative = 1e-10);
        assert_relative_eq!(r.rate, c2_at_1(0.3) / 2.0 * 1e4 * 1e-16, max_relative = 1e-8);
    }

    #[test]
    fn checked_rate_refuses_flat_ratio() {
        use crate::model::{Regime, Schedule};
        // M_n = b_n for pure Pareto 1.5: the ratio M_n / b_n is constant
        let cfg = ModelConfig::new(
            HeavyTailLaw::pareto(1.5),
            1,
            Regime::AlphaGeK,
            Schedule::QuantilePower { a: 1.0, c: 0.0 },
            0.0,
        )
        .unwrap();
        let method = MomentMethod::MonteCarlo {
            samples: 1000,
            seed: 1,
        };
        let ns = [100, 1000, 10_000];
        assert!(matches!(
            theorem1_rate_checked(&cfg, 1000, &ns, method, false),
            Err(Error::ScheduleRejected(_))
        ));
        let r = theorem1_rate_checked(&cfg, 1000, &ns, method, true).unwrap();
        assert!(r.forced);
    }
}
