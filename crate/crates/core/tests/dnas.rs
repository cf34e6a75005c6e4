mod common;

use common::consistency::{mixture_gradient_error, single_path_error};

#[test]
fn single_path_matches_standalone_child() {
    for seed in 0..5 {
        let err = single_path_error(seed).unwrap();
        assert!(err <= 1e-10, "seed {seed}: {err:.2e}");
    }
}

#[test]
fn full_k_gradient_matches_mixture_oracle() {
    for seed in 0..5 {
        let (err, scale) = mixture_gradient_error(seed).unwrap();
        assert!(scale > 1e-6, "seed {seed}: vanishing gradient");
        assert!(err <= 1e-8, "seed {seed}: {err:.2e}");
    }
}
