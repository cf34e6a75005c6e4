mod common;

use common::consistency::{hard_frequency_error, soft_sum_error};
use proptest::prelude::*;

#[test]
fn hard_samples_follow_softmax_probabilities() {
    for seed in 0..5 {
        let err = hard_frequency_error(seed);
        assert!(err <= 0.02, "seed {seed}: frequency off by {err:.4}");
    }
}

proptest! {
    #[test]
    fn soft_weights_sum_to_one(
        logits in prop::collection::vec(-30.0f64..30.0, 1..8),
        tau in 0.01f64..10.0,
        seed in any::<u64>(),
    ) {
        prop_assert!(soft_sum_error(&logits, tau, seed) <= 1e-9);
    }
}
