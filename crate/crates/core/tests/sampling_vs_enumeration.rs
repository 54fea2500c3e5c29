mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use mgw::oracle::{enumerate_truncated, exact_expectation, horizon_state};
use mgw::moments::xi_table;
use mgw::penalty::{girsanov_weight, Regime, WeightTables};
use mgw::sampler::{sample_degenerate, sample_mgw, sample_spine_tree, sample_tau_ell, RngStream, SpineMode};
use mgw::MarkedTree;

/// Per-tree features a random functional is built from.
fn features(t: &MarkedTree) -> [f64; 8] {
    let z = t.generation_sizes();
    let m = t.mark_counts();
    let leaves = t.nodes().filter(|(w, i)| w.depth() < t.height() && i.out_degree == 0).count();
    let root_marked = t.nodes().next().map(|(_, i)| i.mark as f64).unwrap_or(0.0);
    [z[1] as f64, z[2] as f64, z[3] as f64, m[1] as f64, m[2] as f64, m[3] as f64, leaves as f64, root_marked]
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn monte_carlo_matches_enumeration_on_random_functionals() {
    let law = law_g();
    let measure = enumerate_truncated(&law, 3).unwrap();
    let mut rng = RngStream::new(99);
    let samples: Vec<[f64; 8]> = (0..100_000).map(|_| features(&sample_mgw(&law, 3, &mut rng).unwrap())).collect();
    let mut coef_rng = RngStream::new(5);
    for i in 0..20 {
        let coefs: [f64; 8] = std::array::from_fn(|_| coef_rng.random_range(-1.0..1.0));
        // squares make some functionals nonlinear in the features
        let square = i % 2 == 1;
        let eval = |f: &[f64; 8]| {
            let lin: f64 = f.iter().zip(&coefs).map(|(a, b)| a * b).sum();
            if square { lin * lin } else { lin }
        };
        let exact = exact_expectation(&measure, |t| eval(&features(t)));
        let (mc, se) = mean_and_se(&samples.iter().map(eval).collect::<Vec<_>>());
        assert!((mc - exact).abs() < 4.0 * se, "functional {i}: Monte Carlo {mc} ± {se} vs exact {exact}");
    }
}

#[test]
fn girsanov_weights_have_unit_mean_under_sampling() {
    let law = law_a();
    let regimes = [Regime::PolySub { ell: 2 }, Regime::ExpoPositive { s: 0.5, ell: 1 }, Regime::ExpoZero { ell: 0 }];
    for regime in regimes {
        let tables = WeightTables::build(&law, regime).unwrap();
        let mut rng = RngStream::new(3);
        let ws: Vec<f64> = (0..100_000)
            .map(|_| girsanov_weight(&tables, horizon_state(&sample_mgw(&law, 3, &mut rng).unwrap())).unwrap().value())
            .collect();
        let (mean, se) = mean_and_se(&ws);
        assert!((mean - 1.0).abs() < 3.0 * se, "{regime}: {mean} ± {se}");
    }
}

#[test]
fn same_seed_gives_identical_trees() {
    let law = law_a();
    let xi = xi_table::<f64>(&law, 2).unwrap();
    let run = |seed| {
        let mut rng = RngStream::new(seed);
        (0..50)
            .map(|_| sample_tau_ell(&law, &xi, 2, 4, &mut rng).unwrap().to_text())
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(run(17), run(17));
    assert_ne!(run(17), run(18));
}

#[test]
fn first_generation_mean_matches_mu_squared() {
    let law = law_a();
    let mut rng = RngStream::new(21);
    let z2: Vec<f64> = (0..100_000).map(|_| sample_mgw(&law, 2, &mut rng).unwrap().generation_sizes()[2] as f64).collect();
    let (mean, se) = mean_and_se(&z2);
    assert!((mean - 0.64).abs() < 3.0 * se, "{mean} ± {se}");
}

#[test]
fn zero_mark_spine_trees_carry_no_marks() {
    let law = law_g();
    let mut rng = RngStream::new(4);
    for _ in 0..2_000 {
        let t = sample_spine_tree(&law, SpineMode::ZeroMark, 5, &mut rng).unwrap();
        assert!(t.tree.mark_counts().iter().all(|m| *m == 0));
        assert!(t.tree.generation_sizes().iter().all(|z| *z >= 1));
    }
}

#[test]
fn degenerate_tree_is_regular_with_one_third_marks() {
    let law = law_f();
    let mut rng = RngStream::new(8);
    let mut marks = 0usize;
    let mut internal = 0usize;
    for _ in 0..5_000 {
        let t = sample_degenerate(&law, 0.5, 4, &mut rng).unwrap();
        assert_eq!(t.generation_sizes(), vec![1, 2, 4, 8, 16]);
        marks += t.mark_counts()[4];
        internal += 15;
    }
    let freq = marks as f64 / internal as f64;
    let se = (1.0 / 3.0 * 2.0 / 3.0 / internal as f64).sqrt();
    assert!((freq - 1.0 / 3.0).abs() < 4.0 * se, "{freq}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn typed_trees_keep_type_sums(seed in any::<u64>(), ell in 1usize..=3) {
        let law = law_a();
        let xi = xi_table::<f64>(&law, ell).unwrap();
        let t = sample_tau_ell(&law, &xi, ell, 5, &mut RngStream::new(seed)).unwrap();
        let sizes = t.tree.generation_sizes();
        for n in 0..=t.tree.height() {
            if sizes[n] > 0 {
                prop_assert_eq!(t.generation_types(n).iter().sum::<u32>() as usize, ell);
            }
        }
        // a typed tree never dies out before carrying a mark
        let dead = sizes.iter().position(|z| *z == 0);
        if let Some(n) = dead {
            prop_assert!(t.tree.mark_counts()[n] > 0);
        }
    }

    #[test]
    fn spine_has_one_special_node_per_generation(seed in any::<u64>()) {
        let t = sample_spine_tree(&law_a(), SpineMode::Marked { s: 0.5 }, 5, &mut RngStream::new(seed)).unwrap();
        for n in 0..=t.tree.height() {
            prop_assert_eq!(t.generation_types(n).iter().filter(|x| **x == 1).count(), 1);
        }
    }
}
