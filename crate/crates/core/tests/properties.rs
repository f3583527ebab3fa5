use nucleation_core::analysis::{ks_exponential, ks_two_sample, mm_infinity_laplace, MMInfParams};
use nucleation_core::branching::{offspring_mean_bound, BranchingParams};
use nucleation_core::seeds::seeded_rng;
use nucleation_core::state::enumerate_transitions;
use nucleation_core::sumtree::SumTree;
use nucleation_core::{
    run, FragmentationSpec, ModelParams, RunConfig, ScalingFunction, SimulationMode, Simulator, StopRule,
    SystemState, Transition,
};
use proptest::prelude::*;

fn frag_spec() -> impl Strategy<Value = FragmentationSpec> {
    prop_oneof![
        Just(FragmentationSpec::Uniform),
        (0.05f64..0.95).prop_map(|p| FragmentationSpec::Binomial { p }),
        prop::collection::vec(0.1f64..1.0, 2..5).prop_map(|w| {
            let s: f64 = w.iter().sum();
            FragmentationSpec::Multinomial { weights: w.iter().map(|x| x / s).collect() }
        }),
    ]
}

fn model() -> impl Strategy<Value = ModelParams> {
    (3usize..6, 0.3f64..1.0, frag_spec()).prop_flat_map(|(n_c, gamma, frag)| {
        (
            prop::collection::vec(0.2f64..3.0, n_c - 1),
            prop::collection::vec(0.2f64..3.0, n_c - 1),
            Just(n_c),
            Just(gamma),
            Just(frag),
        )
            .prop_map(|(lambda, mu, n_c, gamma, frag)| {
                ModelParams::new(n_c, lambda, mu, ScalingFunction::power(gamma), frag).unwrap()
            })
    })
}

/// Rate of every enabled transition summed by brute force.
fn enumerated_total(state: &SystemState, params: &ModelParams, mode: SimulationMode) -> f64 {
    enumerate_transitions(state, params)
        .into_iter()
        .filter(|(t, _)| match (mode, t) {
            (SimulationMode::Full, _) => true,
            (SimulationMode::Truncated, Transition::Growth(k) | Transition::Fragmentation(k)) => *k < params.n_c,
        })
        .map(|(_, r)| r)
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fragments_partition_the_polymer(spec in frag_spec(), k in 2usize..60, seed in any::<u64>()) {
        let mut rng = seeded_rng(seed);
        let c = spec.sample(k, &mut rng);
        prop_assert_eq!(c.mass(), k);
        prop_assert!(c.fragment_count() >= 2);
        prop_assert!(c.sizes().iter().all(|&s| s >= 1));
    }

    #[test]
    fn moments_conserve_mass(spec in frag_spec(), k in 2usize..40) {
        let weighted: f64 = (1..k).map(|p| p as f64 * spec.moment(k, p).unwrap()).sum();
        prop_assert!((weighted - k as f64).abs() < 1e-8 * k as f64, "sum p M_p = {} for k = {}", weighted, k);
    }

    #[test]
    fn sumtree_find_matches_linear_scan(
        weights in prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..10.0], 1..80),
        u in 0.0f64..1.0,
    ) {
        let mut tree = SumTree::new(4);
        for (i, &w) in weights.iter().enumerate() {
            tree.set(i, w);
        }
        let total: f64 = weights.iter().sum();
        prop_assert!((tree.total() - total).abs() <= 1e-9 * total.max(1.0));
        prop_assume!(total > 0.0);
        let target = u * total;
        let mut acc = 0.0;
        let mut expected = None;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if w > 0.0 && target < acc {
                expected = Some(i);
                break;
            }
        }
        let got = tree.find(target).unwrap();
        prop_assert!(weights[got] > 0.0);
        // Rounding may only move the answer across a boundary it sits on.
        if let Some(e) = expected {
            let lo: f64 = weights[..got].iter().sum();
            let hi = lo + weights[got];
            prop_assert!(got == e || (target - lo).abs() < 1e-9 || (target - hi).abs() < 1e-9);
        }
    }

    #[test]
    fn simulator_conserves_mass_and_matches_enumerated_rates(
        params in model(),
        n in 20u64..200,
        steps in 1usize..400,
        seed in any::<u64>(),
        truncated in any::<bool>(),
    ) {
        let mode = if truncated { SimulationMode::Truncated } else { SimulationMode::Full };
        let mut sim = Simulator::new(&params, mode, SystemState::pure_monomers(n)).unwrap();
        let mut rng = seeded_rng(seed);
        let mut cemetery = 0;
        for _ in 0..steps {
            let direct = enumerated_total(sim.state(), &params, mode);
            prop_assert!((sim.total_rate() - direct).abs() <= 1e-9 * direct.max(1.0));
            let Some((dt, t)) = sim.propose(&mut rng).unwrap() else { break };
            prop_assert!(dt > 0.0);
            sim.apply(t, &mut rng).unwrap();
            prop_assert_eq!(sim.state().total_mass(), n);
            prop_assert_eq!(sim.state().counted_mass(), n);
            if truncated {
                prop_assert!(sim.state().max_size() <= params.n_c);
                let c = sim.state().count(params.n_c);
                prop_assert!(c >= cemetery);
                cemetery = c;
            }
        }
    }

    #[test]
    fn runs_are_reproducible(params in model(), n in 20u64..120, seed in any::<u64>()) {
        let config = RunConfig::new(SimulationMode::Full, StopRule::EventBudget { events: 500 });
        let a = run(&params, n, &config, seed).unwrap();
        let b = run(&params, n, &config, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rho_bar_scales_with_common_rate_factor(params in model(), c in 0.1f64..10.0) {
        let mut scaled = params.clone();
        scaled.lambda.iter_mut().for_each(|l| *l *= c);
        scaled.mu.iter_mut().for_each(|m| *m *= c);
        let ratio = scaled.rho_bar() / params.rho_bar();
        prop_assert!((ratio - c).abs() < 1e-9 * c);
    }

    #[test]
    fn psi_times_n_is_phi_power(params in model(), n in 10u64..1_000_000) {
        let expected = params.phi(n).powi(params.n_c as i32 - 2);
        let got = params.psi(n) * n as f64;
        prop_assert!((got - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn ks_statistics_are_scale_equivariant(
        xs in prop::collection::vec(0.001f64..10.0, 20..80),
        ys in prop::collection::vec(0.001f64..10.0, 20..80),
        rate in 0.1f64..5.0,
        c in 0.1f64..10.0,
    ) {
        let a = ks_exponential(&xs, rate, 0.05).unwrap();
        let scaled: Vec<f64> = xs.iter().map(|x| x * c).collect();
        let b = ks_exponential(&scaled, rate / c, 0.05).unwrap();
        prop_assert!((a.statistic - b.statistic).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&a.statistic));
        let scaled_y: Vec<f64> = ys.iter().map(|y| y * c).collect();
        let two = ks_two_sample(&xs, &ys, 0.05).unwrap();
        let two_scaled = ks_two_sample(&scaled, &scaled_y, 0.05).unwrap();
        prop_assert!((two.statistic - two_scaled.statistic).abs() < 1e-12);
    }

    #[test]
    fn laplace_transform_is_a_decreasing_probability(
        arrival in 0.1f64..20.0,
        service in 0.1f64..5.0,
        level in 1u64..30,
        xi in 0.0f64..20.0,
        dxi in 0.01f64..5.0,
    ) {
        let p = MMInfParams::new(arrival, service, level);
        prop_assert!((mm_infinity_laplace(&p, 0.0).unwrap() - 1.0).abs() < 1e-12);
        let a = mm_infinity_laplace(&p, xi).unwrap();
        let b = mm_infinity_laplace(&p, xi + dxi).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0);
        prop_assert!(b <= a);
    }

    #[test]
    fn offspring_bound_increases_with_growth_rate(
        alpha in 0.1f64..10.0,
        d_alpha in 0.01f64..10.0,
        mu in 0.1f64..10.0,
        extra in 0usize..10,
    ) {
        let lo = BranchingParams::new(alpha, mu, 4, FragmentationSpec::Uniform, 4).unwrap();
        let hi = BranchingParams::new(alpha + d_alpha, mu, 4, FragmentationSpec::Uniform, 4).unwrap();
        prop_assert!(offspring_mean_bound(&hi, 0.1, 4 + extra) >= offspring_mean_bound(&lo, 0.1, 4 + extra));
    }
}
