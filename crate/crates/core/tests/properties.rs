use proptest::prelude::*;

use truncldp::distributions::{quantile_b_n, HeavyTailLaw};
use truncldp::estimators::{
    convolution_pmf, lattice_convolution_tail, prokhorov_bound, LatticeDistribution, TailMode,
};
use truncldp::harness::ResultRow;
use truncldp::estimators::Estimate;
use truncldp::model::{ModelConfig, Regime, Schedule};
use truncldp::parallel::{run_replications, Execution, MeanAccumulator};

fn law_strategy() -> impl Strategy<Value = HeavyTailLaw> {
    prop_oneof![
        (0.2f64..3.5).prop_map(HeavyTailLaw::pareto),
        (1.1f64..3.5).prop_map(HeavyTailLaw::shifted_pareto),
        ((0.2f64..3.0), (0.05f64..1.0)).prop_map(|(a, p)| HeavyTailLaw::two_sided(a, p)),
        (0.3f64..3.0).prop_map(HeavyTailLaw::zygmund),
        (0.3f64..3.0).prop_map(HeavyTailLaw::floor_counterexample),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tails_are_nonincreasing_probabilities(law in law_strategy(), x in -50.0f64..1e4, dx in 0.0f64..1e3) {
        let (a, b) = (law.tail(x), law.tail(x + dx));
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
    }

    #[test]
    fn pareto_ratio_is_a_pure_power(alpha in 0.1f64..4.0, x in 1.0f64..1e6, lambda in 1.0f64..1e3) {
        let law = HeavyTailLaw::pareto(alpha);
        let r = law.tail(lambda * x) / law.tail(x);
        prop_assert!((r / lambda.powf(-alpha) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quantile_b_n_never_overshoots(law in law_strategy(), lg in 0.0f64..9.0) {
        let n = 10f64.powf(lg).round().max(1.0) as u64;
        let b = quantile_b_n(&law, n);
        prop_assert!(n as f64 * law.tail(b) <= 1.0 + 1e-12);
    }

    #[test]
    fn tail_quantile_inverts(alpha in 0.2f64..3.0, u in 1e-12f64..0.5) {
        let law = HeavyTailLaw::pareto(alpha);
        let x = law.tail_quantile(u);
        prop_assert!((law.tail(x) / u - 1.0).abs() < 1e-10);
    }

    #[test]
    fn accumulator_merge_matches_single_pass(xs in prop::collection::vec(-1e3f64..1e3, 2..200), cut in 0usize..200) {
        let cut = cut.min(xs.len());
        let mut whole = MeanAccumulator::default();
        xs.iter().for_each(|&x| whole.push(x));
        let (mut a, mut b) = (MeanAccumulator::default(), MeanAccumulator::default());
        xs[..cut].iter().for_each(|&x| a.push(x));
        xs[cut..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        prop_assert_eq!(a.count, whole.count);
        prop_assert!((a.mean() - whole.mean()).abs() <= 1e-9 * (1.0 + whole.mean().abs()));
        prop_assert!((a.stderr() - whole.stderr()).abs() <= 1e-9 * (1.0 + whole.stderr()));
    }

    #[test]
    fn replication_results_ignore_chunking(seed in any::<u64>(), chunk in 1usize..300) {
        let f = |rng: &mut rand_chacha::ChaCha8Rng| rand::Rng::random::<f64>(rng);
        let a = run_replications(777, chunk, seed, Execution::Parallel, f);
        let b = run_replications(777, 4096, seed, Execution::Sequential, f);
        prop_assert!((a.mean() - b.mean()).abs() < 1e-14);
    }

    #[test]
    fn convolution_conserves_mass(masses in prop::collection::vec(0.01f64..1.0, 1..6), n in 1usize..7) {
        let total: f64 = masses.iter().sum();
        let masses: Vec<f64> = masses.iter().map(|m| m / total).collect();
        let lat = LatticeDistribution::new(-1.0, 0.5, masses).unwrap();
        let pmf = convolution_pmf(&lat, n).unwrap();
        let s: f64 = pmf.masses.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!((pmf.mean() - n as f64 * lat.mean()).abs() < 1e-10);
    }

    #[test]
    fn convolution_tail_matches_enumeration(masses in prop::collection::vec(0.01f64..1.0, 2..5), n in 1usize..5, thr in -2.0f64..4.0) {
        let total: f64 = masses.iter().sum();
        let masses: Vec<f64> = masses.iter().map(|m| m / total).collect();
        let lat = LatticeDistribution::new(0.0, 1.0, masses.clone()).unwrap();
        // brute force over all index tuples
        let len = masses.len();
        let mut brute = 0.0;
        let mut idx = vec![0usize; n];
        loop {
            let s: usize = idx.iter().sum();
            if s as f64 > thr {
                brute += idx.iter().map(|&i| masses[i]).product::<f64>();
            }
            let mut pos = 0;
            while pos < n {
                idx[pos] += 1;
                if idx[pos] < len { break; }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == n { break; }
        }
        let r = lattice_convolution_tail(&lat, n, thr, 0.0, TailMode::Strict).unwrap();
        prop_assert!((r.probability - brute).abs() <= 1e-12 + 1e-10 * brute, "{} vs {}", r.probability, brute);
    }

    #[test]
    fn discretization_keeps_boundary_tails(alpha in 0.2f64..2.5, m in 10.0f64..1e4, rel in 1e-3f64..0.05) {
        let law = HeavyTailLaw::pareto(alpha);
        let lat = LatticeDistribution::discretize(&law, m, rel * m).unwrap();
        let s: f64 = lat.masses.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(lat.masses.iter().all(|&w| w >= 0.0));
    }

    #[test]
    fn prokhorov_decreases_in_lambda(c in 0.1f64..5.0, v in 0.1f64..100.0, l in 0.1f64..50.0, dl in 0.01f64..10.0) {
        let a = prokhorov_bound(l, c, v);
        let b = prokhorov_bound(l + dl, c, v);
        prop_assert!(b < a && a <= 1.0 && b > 0.0 || b == 0.0);
    }

    #[test]
    fn truncation_levels_increase(a in 0.1f64..10.0, b in 0.05f64..3.0, lg in 0.0f64..8.0) {
        let cfg = ModelConfig {
            law: HeavyTailLaw::pareto(0.3),
            k: 1,
            regime: Regime::AlphaSmall,
            schedule: Schedule::Power { a, b },
            gamma: 0.1,
        };
        let n = 10f64.powf(lg) as u64 + 1;
        prop_assert!(cfg.m_n(n) > 0.0);
        prop_assert!(cfg.m_n(2 * n) > cfg.m_n(n));
    }

    #[test]
    fn ratio_needs_positive_rate(v in 0.0f64..1.0, rate in -1.0f64..1.0) {
        let row = ResultRow::new(10, 5.0, 10.0, rate, 0.0, Some(Estimate::exact(v, "x")));
        prop_assert_eq!(row.ratio.is_some(), rate > 0.0);
        if let Some(r) = row.ratio {
            prop_assert!((r * rate - v).abs() <= 1e-15 * v.max(1.0));
        }
    }
}
