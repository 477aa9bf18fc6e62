use crate::distributions::HeavyTailLaw;
use crate::error::{invalid, Result};
use crate::model::ModelConfig;
use crate::parallel::{run_replications, CompensatedSum, Execution, DEFAULT_CHUNK};

use super::Estimate;

/// Relative-frequency estimate of `P(S_n > threshold)`.
pub fn crude_mc_tail(
    config: &ModelConfig,
    n: usize,
    threshold: f64,
    reps: u64,
    seed: u64,
) -> Result<Estimate> {
    crude_mc_tail_with(
        &config.law,
        config.m_n(n as u64),
        n,
        threshold,
        reps,
        seed,
        Execution::default(),
    )
}

pub fn crude_mc_tail_with(
    law: &HeavyTailLaw,
    m: f64,
    n: usize,
    threshold: f64,
    reps: u64,
    seed: u64,
    exec: Execution,
) -> Result<Estimate> {
    if reps == 0 {
        return Err(invalid("reps", "need at least one replication"));
    }
    if n == 0 {
        return Err(invalid("n", "row length must be positive"));
    }
    let acc = run_replications(reps, DEFAULT_CHUNK, seed, exec, |rng| {
        let s = crate::model::truncated_row_sum(law, m, n, rng);
        if s > threshold {
            1.0
        } else {
            0.0
        }
    });
    let mut est = Estimate::from_accumulator(&acc, "crude", seed);
    if acc.nonzero < 100 {
        est.warnings.push(format!(
            "only {} exceedances in {} replications; the estimate is unreliable",
            acc.nonzero, reps
        ));
    }
    Ok(est)
}

/// Forced-jump importance sampling for
/// `P(S_n > threshold, at least j entries exceed jump_floor)`.
pub fn forced_jump_is(
    config: &ModelConfig,
    n: usize,
    threshold: f64,
    j: usize,
    jump_floor: f64,
    reps: u64,
    seed: u64,
) -> Result<Estimate> {
    forced_jump_is_with(
        &config.law,
        config.m_n(n as u64),
        n,
        threshold,
        j,
        jump_floor,
        reps,
        seed,
        Execution::default(),
    )
}

/// The first `j` entries are drawn from the law restricted to
/// `(jump_floor, M]`; the rest are plain truncated draws. With `K` the number
/// of entries above the floor, the weight `C(n, j) q^j / C(K, j)` makes the
/// estimator exactly unbiased, where `q = P(jump_floor < Y <= M)`.
#[allow(clippy::too_many_arguments)]
pub fn forced_jump_is_with(
    law: &HeavyTailLaw,
    m: f64,
    n: usize,
    threshold: f64,
    j: usize,
    jump_floor: f64,
    reps: u64,
    seed: u64,
    exec: Execution,
) -> Result<Estimate> {
    if j == 0 || j > n {
        return Err(invalid("j", format!("need 1 <= j <= n, got j={j}, n={n}")));
    }
    if !(jump_floor > 0.0) {
        return Err(invalid("jump_floor", "must be positive"));
    }
    if jump_floor >= m {
        return Err(invalid(
            "jump_floor",
            format!("floor {jump_floor} must lie below the truncation level {m}"),
        ));
    }
    if reps == 0 {
        return Err(invalid("reps", "need at least one replication"));
    }
    let tail_m = law.tail(m);
    let q = law.tail(jump_floor) - tail_m;
    if !(q > 0.0) {
        let mut est = Estimate::exact(0.0, "forced_jump");
        est.seed = Some(seed);
        est.n_samples = reps;
        est.bias_note = Some("no mass in (jump_floor, M]".to_string());
        return Ok(est);
    }
    // ln [C(n, j) q^j] and 1 / C(K, j) for K = j..=n
    let ln_base = ln_choose(n as u64, j as u64) + j as f64 * q.ln();
    let inv_choose: Vec<f64> = (0..=n)
        .map(|kk| {
            if kk < j {
                0.0
            } else {
                (-ln_choose(kk as u64, j as u64)).exp()
            }
        })
        .collect();
    let base = ln_base.exp();
    let acc = run_replications(reps, DEFAULT_CHUNK, seed, exec, |rng| {
        let mut sum = CompensatedSum::default();
        let mut above = 0usize;
        for _ in 0..j {
            let y = law.tail_quantile(tail_m + q * crate::distributions::open_unit(rng));
            // y lies in (jump_floor, M] up to rounding
            sum.add(y.min(m));
            above += 1;
        }
        for _ in j..n {
            let y = law.sample(rng);
            if y.abs() <= m {
                sum.add(y);
                if y > jump_floor {
                    above += 1;
                }
            }
        }
        if sum.value() > threshold {
            base * inv_choose[above]
        } else {
            0.0
        }
    });
    let mut est = Estimate::from_accumulator(&acc, "forced_jump", seed);
    est.bias_note = Some(format!(
        "exact overlap weight 1/C(K, {j}) over the K entries above the floor; unbiased"
    ));
    if acc.nonzero < 100 {
        est.warnings.push(format!(
            "only {} nonzero weights in {} replications",
            acc.nonzero, reps
        ));
    }
    Ok(est)
}

pub(crate) fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    let mut s = 0.0;
    for i in 0..k {
        s += ((n - i) as f64).ln() - ((i + 1) as f64).ln();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crude_trivial_thresholds() {
        let law = HeavyTailLaw::pareto(1.0);
        let e = crude_mc_tail_with(&law, 10.0, 5, f64::NEG_INFINITY, 1000, 1, Execution::Sequential)
            .unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.stderr, 0.0);
        let e = crude_mc_tail_with(&law, 10.0, 5, 50.0, 1000, 1, Execution::Sequential).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(!e.warnings.is_empty());
    }

    #[test]
    fn crude_value_is_a_count() {
        let law = HeavyTailLaw::pareto(1.0);
        let e = crude_mc_tail_with(&law, 10.0, 3, 6.0, 12_345, 9, Execution::Parallel).unwrap();
        let c = e.value * e.n_samples as f64;
        assert!((c - c.round()).abs() < 1e-9);
    }

    #[test]
    fn all_forced_reduces_to_conditional() {
        // j = n: every entry forced, weight q^n whenever the sum exceeds
        let law = HeavyTailLaw::pareto(1.0);
        let e = forced_jump_is_with(&law, 100.0, 3, 0.0, 3, 10.0, 1000, 2, Execution::Sequential)
            .unwrap();
        let q: f64 = 0.1 - 0.01;
        assert!((e.value - q.powi(3)).abs() < 1e-15);
        assert!(e.stderr < 1e-12 * e.value);
    }

    #[test]
    fn single_entry_is_exact_below_floor() {
        let law = HeavyTailLaw::pareto(1.0);
        let e = forced_jump_is_with(&law, 100.0, 1, 5.0, 1, 10.0, 1000, 3, Execution::Sequential)
            .unwrap();
        assert!((e.value - (0.1 - 0.01)).abs() < 1e-15);
        assert!(e.stderr < 1e-12 * e.value);
    }

    #[test]
    fn rejects_floor_at_truncation() {
        let law = HeavyTailLaw::pareto(1.0);
        assert!(
            forced_jump_is_with(&law, 10.0, 4, 5.0, 1, 10.0, 10, 1, Execution::Sequential).is_err()
        );
        assert!(
            forced_jump_is_with(&law, 10.0, 4, 5.0, 5, 1.0, 10, 1, Execution::Sequential).is_err()
        );
    }

    #[test]
    fn ln_choose_small() {
        assert!((ln_choose(10, 3).exp() - 120.0).abs() < 1e-10);
        assert_eq!(ln_choose(5, 0), 0.0);
    }
}
