//! Globally adaptive Gauss–Kronrod (7/15) quadrature.
//!
//! The error estimate follows the QUADPACK rescaling of `|K15 - G7|`.
//! Integrands with algebraic endpoint singularities should be passed through
//! [`integrate_power_graded`], which applies `x = a + (b - a) w^q` near the
//! lower end and the mirrored map near the upper end.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Value and error estimate of an integral.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

impl QuadResult {
    pub fn add(&mut self, other: QuadResult) {
        self.value += other.value;
        self.error += other.error;
        self.evaluations += other.evaluations;
        self.converged &= other.converged;
    }
}

/// Single 15-point Kronrod panel: (value, error estimate).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[7];
    let mut res_g = fc * WG[3];
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = res_k * 0.5;
    let mut res_asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    let res_abs = res_abs * half.abs();
    let res_asc = res_asc * half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err)
}

#[derive(Debug)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Adaptive bisection of the panel with the largest error until the summed
/// error drops below `max(abs_tol, rel_tol * |value|)` or `max_panels` is hit.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> QuadResult {
    if a == b {
        return QuadResult {
            converged: true,
            ..Default::default()
        };
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Panel {
        a,
        b,
        value: v,
        error: e,
    });
    let mut total_v = v;
    let mut total_e = e;
    let mut evals = 15;
    let mut panels = 1;
    while total_e > abs_tol.max(rel_tol * total_v.abs()) && panels < max_panels {
        let worst = heap.pop().expect("heap never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // cannot split further in floating point
            heap.push(worst);
            break;
        }
        let (v1, e1) = gk15(&mut f, worst.a, mid);
        let (v2, e2) = gk15(&mut f, mid, worst.b);
        evals += 30;
        panels += 1;
        total_v += v1 + v2 - worst.value;
        total_e += e1 + e2 - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }
    // Resum to shed accumulated drift from the incremental updates.
    let (mut sv, mut se) = (0.0, 0.0);
    for p in heap.iter() {
        sv += p.value;
        se += p.error;
    }
    QuadResult {
        value: sv,
        error: se,
        evaluations: evals,
        converged: se <= abs_tol.max(rel_tol * sv.abs()),
    }
}

/// Which endpoints carry an algebraic singularity that the power map should
/// flatten.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grading {
    pub lower: bool,
    pub upper: bool,
}

/// Integrates over `[a, b]` with the substitution `x - a = h w^q` on the lower
/// half and `b - x = h v^q` on the upper half (applied where requested).
/// With `q = 1/(1 - s)` an endpoint factor `|x - end|^{-s}` becomes bounded.
pub fn integrate_power_graded<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    q: f64,
    grading: Grading,
    abs_tol: f64,
    max_panels: usize,
) -> QuadResult {
    if a >= b {
        return QuadResult {
            converged: true,
            ..Default::default()
        };
    }
    let mid = 0.5 * (a + b);
    let h = mid - a;
    let half_tol = 0.5 * abs_tol;
    let mut out = QuadResult {
        converged: true,
        ..Default::default()
    };
    if grading.lower {
        let r = integrate(
            |w: f64| {
                if w <= 0.0 {
                    return 0.0;
                }
                let x = a + h * w.powf(q);
                let jac = h * q * w.powf(q - 1.0);
                let y = f(x);
                if jac == 0.0 {
                    0.0
                } else {
                    y * jac
                }
            },
            0.0,
            1.0,
            half_tol,
            0.0,
            max_panels,
        );
        out.add(r);
    } else {
        out.add(integrate(&mut f, a, mid, half_tol, 0.0, max_panels));
    }
    if grading.upper {
        let r = integrate(
            |v: f64| {
                if v <= 0.0 {
                    return 0.0;
                }
                let x = b - h * v.powf(q);
                let jac = h * q * v.powf(q - 1.0);
                let y = f(x);
                if jac == 0.0 {
                    0.0
                } else {
                    y * jac
                }
            },
            0.0,
            1.0,
            half_tol,
            0.0,
            max_panels,
        );
        out.add(r);
    } else {
        out.add(integrate(&mut f, mid, b, half_tol, 0.0, max_panels));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| x.powi(5) - 3.0 * x * x, 0.0, 2.0, 1e-14, 0.0, 10);
        assert_abs_diff_eq!(r.value, 64.0 / 6.0 - 8.0, epsilon = 1e-12);
    }

    #[test]
    fn sqrt_singularity_with_grading() {
        // int_0^1 x^{-1/2} dx = 2
        let r = integrate_power_graded(
            |x| x.powf(-0.5),
            0.0,
            1.0,
            2.0,
            Grading {
                lower: true,
                upper: false,
            },
            1e-13,
            200,
        );
        assert!(r.converged);
        assert_abs_diff_eq!(r.value, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn both_endpoints_singular() {
        // int_0^1 x^{-0.3} (1-x)^{-0.3} dx = B(0.7, 0.7)
        let b = statrs::function::beta::beta(0.7, 0.7);
        let r = integrate_power_graded(
            |x| x.powf(-0.3) * (1.0 - x).powf(-0.3),
            0.0,
            1.0,
            1.0 / 0.7,
            Grading {
                lower: true,
                upper: true,
            },
            1e-12,
            500,
        );
        assert_abs_diff_eq!(r.value, b, epsilon = 1e-10);
    }

    #[test]
    fn adaptive_handles_log_singularity() {
        let r = integrate(|x: f64| -x.ln(), 0.0, 1.0, 1e-12, 0.0, 500);
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-10);
    }
}
