use naht_core::poam::checks::{gradient_checks, invariant_checks};

#[test]
fn composite_loss_gradients_match_finite_differences() {
    for seed in [1, 2] {
        for r in gradient_checks(120, seed, 1e-4).unwrap() {
            assert!(r.passed, "seed {seed}: {} relative error {:e}", r.name, r.value);
        }
    }
}

#[test]
fn flow_and_mask_invariants_hold() {
    for seed in 0..5 {
        let results = invariant_checks(seed).unwrap();
        assert_eq!(results.len(), 4);
        for r in results {
            assert!(r.passed, "seed {seed}: {}", r.name);
        }
    }
}
