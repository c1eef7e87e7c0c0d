use itertools::Itertools;
use proptest::prelude::*;
use rarecast_core::analysis::{
    histogram_triptych, kde, kendall_paired, rescale_phi, tsfar_compare, RescaleParams,
};
use rarecast_core::metrics::sweep;

fn concordance(a: &[f64], b: &[f64]) -> i64 {
    let mut s = 0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            s += ((a[i] - a[j]).signum() * (b[i] - b[j]).signum()) as i64;
        }
    }
    s
}

#[test]
fn exact_kendall_matches_permutation_enumeration() {
    let a = [0.1, 0.4, 0.35, 0.8, 0.2, 0.9];
    let b = [1.0, 3.0, 4.0, 6.0, 2.0, 5.0];
    let s = concordance(&a, &b);
    let extreme = (0..6)
        .permutations(6)
        .filter(|perm| {
            let pb: Vec<f64> = perm.iter().map(|&k| b[k]).collect();
            concordance(&a, &pb).abs() >= s.abs()
        })
        .count();
    let r = kendall_paired(&a, &b).unwrap();
    assert_eq!(r.tau, s as f64 / 15.0);
    assert_eq!(r.p_value, extreme as f64 / 720.0);
}

#[test]
fn perfect_agreement_has_the_smallest_exact_p_value() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let r = kendall_paired(&a, &a).unwrap();
    assert_eq!(r.tau, 1.0);
    assert!((r.p_value - 2.0 / 720.0).abs() < 1e-15);
}

#[test]
fn large_sample_p_value_is_tiny_for_strong_agreement() {
    let a: Vec<f64> = (0..200).map(|i| f64::from(i) / 200.0).collect();
    let b: Vec<f64> = a.iter().map(|x| x * x).collect();
    let r = kendall_paired(&a, &b).unwrap();
    assert_eq!(r.tau, 1.0);
    assert!(r.p_value < 1e-15);
}

#[test]
fn self_comparison_has_coincident_curves() {
    let probs: Vec<f64> = (0..300).map(|i| ((i * 37) % 300) as f64 / 300.0).collect();
    let labels: Vec<u8> = (0..300).map(|i| u8::from(i % 5 == 0)).collect();
    let s = sweep(&probs, &labels, 500).unwrap();
    let c = tsfar_compare(&s, &s, 0.5).unwrap();
    assert!(c.warnings.is_empty());
    assert!(c
        .rows
        .iter()
        .all(|r| r.far_a == r.far_b && r.ts_a == r.ts_b));
    assert_eq!(c.marked_a, c.marked_b);
}

proptest! {
    #[test]
    fn phi_is_strictly_increasing(x in 0.0..1.0f64, dx in 1e-9..0.1f64) {
        let p = RescaleParams::default();
        let y = (x + dx).min(1.0);
        prop_assume!(y > x);
        prop_assert!(rescale_phi(y, &p).unwrap() > rescale_phi(x, &p).unwrap());
    }

    #[test]
    fn kde_ignores_sample_order(mut values in prop::collection::vec(0.0..1.0f64, 3..60)) {
        prop_assume!(values.iter().any(|v| *v != values[0]));
        let a = kde(&values, 128).unwrap();
        values.reverse();
        let b = kde(&values, 128).unwrap();
        for (u, v) in a.grid.iter().zip(&b.grid).chain(a.values.iter().zip(&b.values)) {
            prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
        }
        prop_assert!((a.integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn every_probability_lands_in_one_bin(
        probs in prop::collection::vec(0.0..=1.0f64, 2..100),
        flips in prop::collection::vec(0u8..=1, 100),
    ) {
        let mut labels = flips[..probs.len()].to_vec();
        labels[0] = 0;
        labels[1] = 1;
        let h = histogram_triptych(&probs, &labels).unwrap();
        let total: usize = h.positive.iter().chain(&h.negative).sum();
        prop_assert_eq!(total, probs.len());
    }

    #[test]
    fn kendall_tau_is_symmetric(pairs in prop::collection::vec((0u8..10, 0u8..10), 9..40)) {
        let (a, b): (Vec<f64>, Vec<f64>) =
            pairs.iter().map(|&(x, y)| (f64::from(x), f64::from(y))).unzip();
        prop_assume!(a.iter().any(|v| *v != a[0]) && b.iter().any(|v| *v != b[0]));
        let ab = kendall_paired(&a, &b).unwrap();
        let ba = kendall_paired(&b, &a).unwrap();
        prop_assert_eq!(ab.tau, ba.tau);
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab.tau));
    }
}
