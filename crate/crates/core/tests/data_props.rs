use std::collections::HashSet;

use proptest::prelude::*;
use rarecast_core::data::{load_csv, rebalance_indices, write_csv};
use rarecast_core::{rebalance, Dataset, RebalanceSpec};

fn dataset(n_pos: usize, n_neg: usize) -> Dataset<f64> {
    let n = n_pos + n_neg;
    let rows = (0..n)
        .map(|i| vec![i as f64, (i * 7 % 11) as f64])
        .collect();
    let labels = (0..n)
        .map(|i| u8::from(i % (n / n_pos) == 0 && i / (n / n_pos) < n_pos))
        .collect();
    Dataset::new(rows, labels, vec!["a".into(), "b".into()], "fixture").unwrap()
}

#[test]
fn ratio_one_fifth_on_a_hundred_positives() {
    let d = dataset(100, 2400);
    assert_eq!(d.labels().iter().filter(|&&y| y == 1).count(), 100);
    let spec = RebalanceSpec::new(0.2, 42).unwrap();
    let idx = rebalance_indices(&d, &spec).unwrap();
    let out = rebalance(&d, &spec).unwrap();
    assert_eq!(out.labels().iter().filter(|&&y| y == 1).count(), 100);
    assert_eq!(out.labels().iter().filter(|&&y| y == 0).count(), 500);

    let positives: Vec<usize> = (0..d.n_rows()).filter(|&i| d.label(i) == 1).collect();
    assert_eq!(&idx[..100], &positives[..]);
    let distinct: HashSet<usize> = idx.iter().copied().collect();
    assert_eq!(distinct.len(), idx.len());
}

#[test]
fn ratio_one_balances_the_classes() {
    let d = dataset(40, 960);
    let out = rebalance(&d, &RebalanceSpec::new(1.0, 3).unwrap()).unwrap();
    let pos = out.labels().iter().filter(|&&y| y == 1).count();
    assert_eq!(pos, 40);
    assert_eq!(out.n_rows(), 80);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn csv_round_trip_is_lossless(
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 3..60),
        labels in prop::collection::vec(0u8..=1, 20),
    ) {
        let n = values.len() / 3;
        let d = Dataset::from_flat(
            values[..3 * n].to_vec(),
            labels[..n].to_vec(),
            vec!["p".into(), "q".into(), "r".into()],
            "prop",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&d, &path).unwrap();
        let back: Dataset<f64> = load_csv(&path).unwrap();
        prop_assert_eq!(back.column_names(), d.column_names());
        prop_assert_eq!(back.labels(), d.labels());
        for i in 0..n {
            prop_assert_eq!(back.row(i), d.row(i));
        }
    }

    #[test]
    fn rebalance_keeps_positives_and_never_repeats(
        n_pos in 1usize..30, n_neg in 0usize..300, ratio in 0.05..=1.0f64, seed in any::<u64>(),
    ) {
        let n = n_pos + n_neg;
        let rows = (0..n).map(|i| vec![i as f64]).collect();
        let labels = (0..n).map(|i| u8::from(i < n_pos)).collect();
        let d = Dataset::new(rows, labels, vec!["i".into()], "prop").unwrap();
        let spec = RebalanceSpec::new(ratio, seed).unwrap();
        let idx = rebalance_indices(&d, &spec).unwrap();
        let expected_neg = ((n_pos as f64 / ratio).round() as usize).min(n_neg);
        prop_assert_eq!(idx.len(), n_pos + expected_neg);
        prop_assert_eq!(&idx[..n_pos], &(0..n_pos).collect::<Vec<_>>()[..]);
        let distinct: HashSet<usize> = idx.iter().copied().collect();
        prop_assert_eq!(distinct.len(), idx.len());
        prop_assert_eq!(idx, rebalance_indices(&d, &spec).unwrap());
    }
}
