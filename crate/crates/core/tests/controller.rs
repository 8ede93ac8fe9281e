mod common;

use common::{flipper_cohort, kl_factor_oracle, rng, zpd_oracle, COHORT, FLIPPERS};
use proptest::prelude::*;
use rand::Rng as _;
use shiftkt_core::controller::{
    fine_grained_change, score_window, select, zpd, zpd_with, ControllerVariant, ValueScore, ZpdDivisor,
};
use shiftkt_core::Error;

#[test]
fn kl_factor_matches_direct_sum() {
    let mut g = rng(1);
    for _ in 0..100 {
        let n = g.random_range(1..=20);
        let draw = |g: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..n)
                .map(|_| if g.random_bool(0.1) { 0.0 } else { g.random_range(0.0..1.0) })
                .collect()
        };
        let (half, full) = (draw(&mut g), draw(&mut g));
        let got = fine_grained_change(&half, &full).unwrap();
        assert!((got - kl_factor_oracle(&full, &half)).abs() < 1e-12);
        assert!(got >= 1.0 - 1e-15);
    }
    assert!((fine_grained_change(&[0.5, 0.5], &[0.8, 0.2]).unwrap() - 1.192_744_9).abs() < 1e-6);
    assert_eq!(fine_grained_change(&[0.3, 0.6], &[0.3, 0.6]).unwrap(), 1.0);
    assert!(matches!(fine_grained_change(&[0.1], &[0.1, 0.2]), Err(Error::Dimension { .. })));
}

#[test]
fn zpd_matches_direct_evaluation() {
    let mut g = rng(2);
    for _ in 0..100 {
        let k = g.random_range(1..=20);
        let len = g.random_range(1..=k);
        let r: Vec<u8> = (0..k).map(|i| if i < len { g.random_range(0..2) } else { 0 }).collect();
        assert_eq!(zpd(&r, k, len).unwrap(), zpd_oracle(&r, k, len));
    }
    let r = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
    assert_eq!(zpd(&r, 10, 10).unwrap(), 3.5);
    assert_eq!(zpd_with(&r, 10, 10, ZpdDivisor::Capacity, false).unwrap(), 1.25);
    assert_eq!(zpd(&[1; 8], 8, 8).unwrap(), 1.0);
    assert_eq!(zpd(&[0; 8], 8, 8).unwrap(), 1.0);
    let padded = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
    assert!(zpd(&padded, 10, 10).unwrap() > zpd(&padded, 10, 5).unwrap());
    assert!(matches!(zpd(&[], 4, 0), Err(Error::Degenerate(_))));
}

fn vs(scores: &[f64]) -> Vec<ValueScore> {
    scores
        .iter()
        .enumerate()
        .map(|(i, &s)| ValueScore {
            learner: i as u64,
            kl_factor: 1.0,
            zpd_factor: s,
            score: s,
        })
        .collect()
}

#[test]
fn selection_hand_case() {
    let picked = select(&vs(&[4.2, 1.0, 4.2, 2.0]), 0.5).unwrap();
    assert_eq!(picked.into_iter().collect::<Vec<_>>(), vec![0, 2]);
    assert!(select(&vs(&[1.0; 3]), 0.0).unwrap().is_empty());
    assert_eq!(select(&vs(&[1.0; 3]), 1.0).unwrap().len(), 3);
    assert!(matches!(select(&vs(&[1.0]), 1.5), Err(Error::Contract(_))));
}

proptest! {
    #[test]
    fn selection_ignores_positive_rescaling(
        scores in prop::collection::vec(1.0f64..10.0, 1..40),
        factor in 0.01f64..100.0,
        freq in 0.0f64..=1.0,
    ) {
        let scaled: Vec<f64> = scores.iter().map(|s| s * factor).collect();
        prop_assert_eq!(select(&vs(&scores), freq).unwrap(), select(&vs(&scaled), freq).unwrap());
    }
}

/// Whether the flippers hold the top two scores under a variant.
fn flippers_on_top(seed: u64, variant: ControllerVariant) -> bool {
    let (model, cohort) = flipper_cohort(seed);
    let config = variant.config();
    let scores: Vec<ValueScore> = cohort.iter().map(|w| score_window(&model, w, &config).unwrap()).collect();
    assert_eq!(scores.len(), COHORT);
    assert!(scores.iter().all(|s| s.score >= 1.0));
    let picked = select(&scores, FLIPPERS as f64 / COHORT as f64).unwrap();
    picked == (0..FLIPPERS as u64).collect()
}

#[test]
fn flipping_learners_rank_first() {
    for seed in 0..5 {
        assert!(flippers_on_top(seed, ControllerVariant::Full), "seed {seed}");
    }
    let without_zpd = (0..5).filter(|&s| flippers_on_top(s, ControllerVariant::NoZpd)).count();
    assert!(without_zpd < 5, "dropping the rate factor never hurt the ranking");
}
