mod common;

use common::pair_count_ari;
use dgd::metrics::{adjusted_rand_index, mean_sem};
use proptest::prelude::*;

fn labeling(n: usize, k: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..k, n)
}

#[test]
fn identical_partitions_score_one() {
    let a = [0, 0, 1, 1, 2, 2];
    assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
    assert_eq!(adjusted_rand_index(&a, &[5, 5, 3, 3, 4, 4]).unwrap(), 1.0);
}

#[test]
fn small_example_by_hand() {
    // 1 agreeing pair, 2 and 2 pairs per side, 15 pairs in total.
    let ari = adjusted_rand_index(&[0, 0, 0, 1, 1, 1], &[0, 0, 1, 1, 2, 2]).unwrap();
    let expected = (2.0 - 6.0 * 3.0 / 15.0) / (0.5 * (6.0 + 3.0) - 6.0 * 3.0 / 15.0);
    assert!((ari - expected).abs() < 1e-15);
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    assert!(adjusted_rand_index(&[0], &[0]).is_err());
}

#[test]
fn mean_and_standard_error() {
    let (m, se) = mean_sem(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn agrees_with_pair_counting(
        (a, b) in (2usize..60).prop_flat_map(|n| (labeling(n, 5), labeling(n, 4)))
    ) {
        let fast = adjusted_rand_index(&a, &b).unwrap();
        prop_assert!((fast - pair_count_ari(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_label_free(
        (a, b) in (2usize..60).prop_flat_map(|n| (labeling(n, 4), labeling(n, 4))),
        relabel in Just((0..4).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let ab = adjusted_rand_index(&a, &b).unwrap();
        prop_assert_eq!(ab, adjusted_rand_index(&b, &a).unwrap());
        let renamed: Vec<usize> = b.iter().map(|&c| relabel[c] + 10).collect();
        prop_assert!((ab - adjusted_rand_index(&a, &renamed).unwrap()).abs() < 1e-15);
        prop_assert!(ab <= 1.0 + 1e-15);
    }
}
