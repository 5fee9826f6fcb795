use stochastic_matching::bounds::{
    adaptive_ratio, min_adaptive_ratio, min_nonadaptive_ratio, min_nonadaptive_ratio_upto, nonadaptive_ratio,
    worst_edge_profile, QzMode,
};

#[test]
fn adaptive_ratio_increases_in_q() {
    for i in 1..=100 {
        let f = i as f64 / 100.0;
        let mut prev = f64::NEG_INFINITY;
        for j in 0..=100 {
            let v = adaptive_ratio(f, j as f64 / 100.0).unwrap();
            assert!(v > prev, "f_z {f}, q step {j}");
            prev = v;
        }
    }
}

#[test]
fn worst_profile_respects_subset_caps() {
    for i in 0..=200 {
        let fz = i as f64 / 200.0;
        let (mut p, s) = worst_edge_profile(fz).unwrap();
        assert!((p.iter().sum::<f64>() - fz).abs() < 1e-12);
        assert!((s - p.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-15);
        // the largest k entries are the binding subsets
        p.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let mut acc = 0.0;
        for (k, v) in p.iter().enumerate() {
            acc += v;
            assert!(acc <= 1.0 - (-(k as f64 + 1.0)).exp() + 1e-12);
        }
    }
}

#[test]
fn worst_profile_maximizes_sum_of_squares() {
    // any other feasible split of f_z = 1 into few edges has smaller Σf²
    let (_, best) = worst_edge_profile(1.0).unwrap();
    let cap = |k: f64| 1.0 - (-k).exp();
    for a in 1..100 {
        let x = a as f64 / 100.0 * cap(1.0);
        for b in 0..100 {
            let y = (b as f64 / 100.0 * x).min(cap(2.0) - x);
            let rest = 1.0 - x - y;
            if rest < 0.0 || x + y + rest.min(y) > cap(3.0) + 1e-12 {
                continue;
            }
            // remaining mass in tiny pieces contributes ~0 to Σf²
            assert!(x * x + y * y <= best + 1e-12);
        }
    }
}

#[test]
fn minimizers_stable_under_refinement() {
    let coarse = min_nonadaptive_ratio(1e-2).unwrap();
    let fine = min_nonadaptive_ratio(1e-3).unwrap();
    assert_eq!(coarse.minimizer, fine.minimizer);
    assert_eq!(fine.minimizer, 1.0);
    for mode in [QzMode::General, QzMode::Integral] {
        let c = min_adaptive_ratio(mode, 1e-2).unwrap();
        let f = min_adaptive_ratio(mode, 1e-3).unwrap();
        assert_eq!(c.minimizer, f.minimizer);
        assert_eq!(f.minimizer, 1.0);
    }
}

#[test]
fn restricted_nonadaptive_grid_is_higher() {
    let r = min_nonadaptive_ratio_upto(1e-3, 0.5).unwrap();
    assert!(r.minimum > 0.70, "{}", r.minimum);
    let (_, s) = worst_edge_profile(r.minimizer).unwrap();
    assert!((nonadaptive_ratio(r.minimizer, s).unwrap() - r.minimum).abs() < 1e-12);
}
