use std::sync::Arc;

use stochastic_matching::decompose::decompose;
use stochastic_matching::harness::{exact_value_adaptive, exact_value_nonadaptive, simulate_with, InstanceModel, PolicySpec};
use stochastic_matching::instance::{generate_random_instance, Instance, RateMode};
use stochastic_matching::offline_stats::exact_f;
use stochastic_matching::policies::{build_partitions, DummyMode};

fn small(seed: u64) -> Instance {
    generate_random_instance(6, 4, 2, RateMode::Fractional, seed).unwrap()
}

#[test]
fn simulation_agrees_with_exact_values() {
    for seed in 0..4 {
        let inst = small(seed);
        let f = exact_f(&inst).unwrap();
        let model = InstanceModel::new(&inst);
        for mode in [DummyMode::AlwaysFull, DummyMode::AlwaysEmpty] {
            let parts = Arc::new(build_partitions(&inst, &f).unwrap());
            let exact = exact_value_adaptive(&inst, &parts, mode).unwrap();
            let sim = simulate_with(&model, &PolicySpec::Adaptive { parts, mode }, 20_000, seed, 0);
            let dev = (sim.estimate.mean_alg - exact).abs();
            assert!(dev <= 4.0 * sim.alg_stderr() + 1e-9, "adaptive {mode:?}: {dev}");
        }
        let mu = Arc::new(decompose(&inst, &f).unwrap());
        let exact = exact_value_nonadaptive(&inst, &mu);
        let spec = PolicySpec::NonAdaptive {
            mu,
            num_types: inst.num_types(),
        };
        let sim = simulate_with(&model, &spec, 20_000, seed, 0);
        let dev = (sim.estimate.mean_alg - exact).abs();
        assert!(dev <= 4.0 * sim.alg_stderr() + 1e-9, "nonadaptive: {dev}");
        // E[OPT] is the total offline mass
        let dev = (sim.estimate.mean_opt - f.total()).abs();
        assert!(dev < 0.05, "opt: {dev}");
    }
}

#[test]
fn bootstrap_interval_coverage() {
    let inst = small(11);
    let f = exact_f(&inst).unwrap();
    let parts = Arc::new(build_partitions(&inst, &f).unwrap());
    let truth = exact_value_adaptive(&inst, &parts, DummyMode::AlwaysFull).unwrap() / f.total();
    let model = InstanceModel::new(&inst);
    let spec = PolicySpec::Adaptive {
        parts,
        mode: DummyMode::AlwaysFull,
    };
    let runs = 500;
    let covered = (0..runs)
        .filter(|&r| {
            let e = simulate_with(&model, &spec, 300, 1000 + r, 1000).estimate;
            e.ci_low <= truth && truth <= e.ci_high
        })
        .count();
    assert!(covered * 100 >= 94 * runs as usize, "coverage {covered}/{runs}");
}

#[test]
fn interval_width_halves_with_four_times_the_trials() {
    let inst = small(5);
    let f = exact_f(&inst).unwrap();
    let model = InstanceModel::new(&inst);
    let spec = PolicySpec::Adaptive {
        parts: Arc::new(build_partitions(&inst, &f).unwrap()),
        mode: DummyMode::AlwaysFull,
    };
    let width = |trials: u64| {
        (0..8)
            .map(|s| {
                let e = simulate_with(&model, &spec, trials, 77 + s, 2000).estimate;
                e.ci_high - e.ci_low
            })
            .sum::<f64>()
    };
    let ratio = width(1000) / width(4000);
    assert!((ratio - 2.0).abs() <= 0.4, "width ratio {ratio}");
}

#[test]
fn same_seed_same_rows() {
    let inst = small(2);
    let model = InstanceModel::new(&inst);
    let a = simulate_with(&model, &PolicySpec::Greedy, 500, 9, 200);
    let b = simulate_with(&model, &PolicySpec::Greedy, 500, 9, 200);
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.estimate, b.estimate);
    let c = simulate_with(&model, &PolicySpec::Greedy, 500, 10, 200);
    assert_ne!(a.rows, c.rows);
}
