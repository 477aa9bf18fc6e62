mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use common::frequency;
use truncldp::constants::ck;
use truncldp::distributions::HeavyTailLaw;
use truncldp::model::{sample_row_at, truncated_row_sum};
use truncldp::parallel::{map_indices, replication_rng, Execution};
use truncldp::stable::{sample_limit, LimitLaw};
use truncldp::stats::{ks_one_sample, ks_two_sample};

#[test]
fn exceedances_match_tails_at_upper_quantiles() {
    let laws = [
        HeavyTailLaw::pareto(0.4),
        HeavyTailLaw::shifted_pareto(3.0),
        HeavyTailLaw::centered_two_sided(1.5, 0.75),
        HeavyTailLaw::zygmund(1.0),
        HeavyTailLaw::floor_counterexample(1.0),
    ];
    let n = 1_000_000u64;
    for (li, law) in laws.iter().enumerate() {
        let levels: Vec<f64> = [0.1, 0.01, 0.001].iter().map(|&u| law.tail_quantile(u)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + li as u64);
        let mut hits = [0u64; 3];
        for _ in 0..n {
            let y = law.sample(&mut rng);
            for (h, &x) in hits.iter_mut().zip(&levels) {
                *h += (y > x) as u64;
            }
        }
        for (h, &x) in hits.iter().zip(&levels) {
            let p = law.tail(x);
            let (f, _) = frequency(*h, n);
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() <= 4.0 * se, "{law:?} at {x}: {f} vs {p}");
        }
    }
}

#[test]
fn stable_sums_are_stable() {
    let (alpha, beta) = (1.5, 0.5);
    let law = LimitLaw::stable(alpha, 1.0, beta).unwrap();
    let n = 100_000u64;
    let draw = |seed: u64, pairs: bool| -> Vec<f64> {
        map_indices(n, Execution::Parallel, |i| {
            let mut rng = replication_rng(seed, i);
            if pairs {
                (sample_limit(&law, &mut rng) + sample_limit(&law, &mut rng)) / 2f64.powf(1.0 / alpha)
            } else {
                sample_limit(&law, &mut rng)
            }
        })
    };
    let r = ks_two_sample(&draw(1, false), &draw(2, true)).unwrap();
    assert!(!r.rejects_at(1e-3), "{r:?}");
}

#[test]
fn standardized_row_sums_look_normal() {
    // ShiftedPareto(3): Var Y = 3/4
    let law = HeavyTailLaw::shifted_pareto(3.0);
    let n = 10_000usize;
    let m = (n as f64).powf(0.7);
    let z: Vec<f64> = map_indices(10_000, Execution::Parallel, |i| {
        let mut rng = replication_rng(77, i);
        truncated_row_sum(&law, m, n, &mut rng) / (n as f64).sqrt()
    });
    let normal = Normal::new(0.0, 0.75f64.sqrt()).unwrap();
    let r = ks_one_sample(&z, |x| normal.cdf(x)).unwrap();
    assert!(!r.rejects_at(1e-3), "{r:?}");
}

#[test]
fn truncation_changes_a_row_no_more_often_than_the_union_bound() {
    let law = HeavyTailLaw::centered_two_sided(1.5, 0.75);
    let (n, m) = (200usize, 400.0);
    let reps = 50_000u64;
    let changed: u64 = map_indices(reps, Execution::Parallel, |i| {
        let mut rng = replication_rng(5, i);
        (sample_row_at(&law, m, n, &mut rng).n_truncated > 0) as u64
    })
    .iter()
    .sum();
    let (f, se) = frequency(changed, reps);
    let bound = n as f64 * law.abs_tail(m);
    assert!(f <= bound + 4.0 * se, "{f} > {bound}");
}

#[test]
fn endpoint_power_law_of_ck() {
    // c_k(k - u) = O(u^k)
    for (k, alpha) in [(2usize, 0.3), (3, 0.4)] {
        assert_eq!(ck(k, k as f64, alpha, 1e-8).unwrap().value, 0.0);
        let ratios: Vec<f64> = [1e-1, 1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&u| ck(k, k as f64 - u, alpha, 1e-8).unwrap().value / u.powi(k as i32))
            .collect();
        let (lo, hi) = ratios
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(lo > 0.0 && hi / lo < 2.0, "k={k}: {ratios:?}");
    }
}
