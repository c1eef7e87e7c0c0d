use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rarecast_core::glm::{aic, fit_irls, stepwise_select, LogisticModel};
use rarecast_core::{synth_generate, Dataset, SynthSpec};

fn synth(n: usize, coefs: &[f64], prevalence: f64, seed: u64) -> Dataset<f64> {
    synth_generate(&SynthSpec {
        n,
        p: coefs.len(),
        true_coefficients: coefs.to_vec(),
        target_prevalence: prevalence,
        mislabel_rate: 0.0,
        seed,
    })
    .unwrap()
}

fn names(d: &Dataset<f64>, cols: &[usize]) -> Vec<String> {
    cols.iter().map(|&j| d.column_names()[j].clone()).collect()
}

#[test]
fn intercept_only_matches_closed_form() {
    let labels: Vec<u8> = (0..1000).map(|i| u8::from(i % 10 < 3)).collect();
    let rows = (0..1000).map(|i| vec![(i % 13) as f64]).collect();
    let d = Dataset::new(rows, labels, vec!["z".into()], "prev30").unwrap();
    let (m, r) = fit_irls::<f64, &str>(&d, &[]).unwrap();
    assert!((m.intercept - (3.0_f64 / 7.0).ln()).abs() < 1e-6);
    assert!(r.converged);
    assert_eq!(r.n_parameters, 1);
}

#[test]
fn recovers_generating_coefficients() {
    let beta = [1.0, -0.5, 0.75, 0.0];
    let d = synth(20_000, &beta, 0.3, 11);
    let all = names(&d, &[0, 1, 2, 3]);
    let (m, r) = fit_irls(&d, &all).unwrap();
    assert!(r.converged);
    for (name, b) in all.iter().zip(beta) {
        let est = m.coefficients[name];
        assert!((est - b).abs() < 0.1, "{name}: {est} vs {b}");
    }

    let (g0, g) = m.gradient(&d).unwrap();
    let worst = g.values().fold(g0.abs(), |acc, v| acc.max(v.abs()));
    assert!(worst < 1e-6, "gradient at optimum {worst}");
}

#[test]
fn gradient_matches_central_differences() {
    let d = synth(500, &[0.8, -0.4, 0.3], 0.25, 5);
    let cols = names(&d, &[0, 1, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let h = 1e-5;
    for _ in 0..10 {
        let intercept = rng.random_range(-2.0..1.0);
        let coefs: BTreeMap<String, f64> = cols
            .iter()
            .map(|c| (c.clone(), rng.random_range(-1.5..1.5)))
            .collect();
        let m = LogisticModel::new(intercept, coefs.clone());
        let (g0, g) = m.gradient(&d).unwrap();

        let ll = |m: &LogisticModel<f64>| m.log_likelihood(&d).unwrap();
        let close = |analytic: f64, numeric: f64| {
            (analytic - numeric).abs() <= 1e-4 * numeric.abs().max(1.0)
        };

        let up = LogisticModel::new(intercept + h, coefs.clone());
        let down = LogisticModel::new(intercept - h, coefs.clone());
        let fd = (ll(&up) - ll(&down)) / (2.0 * h);
        assert!(close(g0, fd), "intercept: {g0} vs {fd}");

        for c in &cols {
            let mut plus = coefs.clone();
            *plus.get_mut(c).unwrap() += h;
            let mut minus = coefs.clone();
            *minus.get_mut(c).unwrap() -= h;
            let fd = (ll(&LogisticModel::new(intercept, plus))
                - ll(&LogisticModel::new(intercept, minus)))
                / (2.0 * h);
            assert!(close(g[c], fd), "{c}: {} vs {fd}", g[c]);
        }
    }
}

fn subset_aic(d: &Dataset<f64>, features: &[String]) -> f64 {
    let (_, r) = fit_irls(d, features).unwrap();
    aic(&r)
}

#[test]
fn stepwise_ends_at_a_neighbourhood_optimum() {
    for seed in [1, 2, 3] {
        let d = synth(800, &[1.2, 0.0, -0.9, 0.0, 0.4, 0.0], 0.3, seed);
        let (model, report, trace) = stepwise_select(&d).unwrap();
        assert!(trace.windows(2).all(|w| w[1].aic < w[0].aic));

        let chosen: Vec<String> = model.features().map(String::from).collect();
        for name in d.column_names() {
            let neighbour: Vec<String> = if chosen.contains(name) {
                chosen.iter().filter(|c| *c != name).cloned().collect()
            } else {
                chosen.iter().cloned().chain([name.clone()]).collect()
            };
            let a = subset_aic(&d, &neighbour);
            assert!(
                a >= report.aic - 1e-9,
                "seed {seed}: {name} gives {a} < {}",
                report.aic
            );
        }
    }
}

#[test]
fn stepwise_agrees_with_exhaustive_subset_search() {
    let mut beta = vec![1.5, -1.0, 0.8];
    beta.extend([0.0; 7]);
    let d = synth(1500, &beta, 0.3, 21);
    let (model, report, _) = stepwise_select(&d).unwrap();

    let p = d.n_features();
    let mut best = (f64::INFINITY, Vec::new());
    for mask in 0u32..(1 << p) {
        let subset: Vec<String> = (0..p)
            .filter(|j| mask >> j & 1 == 1)
            .map(|j| d.column_names()[j].clone())
            .collect();
        let a = subset_aic(&d, &subset);
        if a < best.0 {
            best = (a, subset);
        }
    }
    let mut chosen: Vec<String> = model.features().map(String::from).collect();
    chosen.sort();
    best.1.sort();
    assert_eq!(chosen, best.1);
    assert!((report.aic - best.0).abs() < 1e-9);
    for informative in ["x1", "x2", "x3"] {
        assert!(chosen.iter().any(|c| c == informative));
    }
}

#[test]
fn single_precision_fit_tracks_double() {
    let d = synth(2000, &[1.0, -0.7], 0.3, 8);
    let cols = names(&d, &[0, 1]);
    let (m64, _) = fit_irls(&d, &cols).unwrap();

    let flat: Vec<f32> = d.rows().flat_map(|r| r.iter().map(|&v| v as f32)).collect();
    let d32 =
        Dataset::from_flat(flat, d.labels().to_vec(), d.column_names().to_vec(), "f32").unwrap();
    let (m32, r32) = fit_irls(&d32, &cols).unwrap();
    assert!(r32.converged);
    assert!((f64::from(m32.intercept) - m64.intercept).abs() < 1e-4);
    for c in &cols {
        assert!((f64::from(m32.coefficients[c]) - m64.coefficients[c]).abs() < 1e-4);
    }
}

#[test]
fn fits_do_not_depend_on_row_order() {
    use rand::seq::SliceRandom;
    use rarecast_core::metrics::roc;

    let d = synth(1200, &[1.0, 0.0, -0.7, 0.3], 0.2, 14);
    let mut order: Vec<usize> = (0..d.n_rows()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(6));
    let shuffled = d.select_rows(&order).unwrap();

    let (a, ra, _) = stepwise_select(&d).unwrap();
    let (b, rb, _) = stepwise_select(&shuffled).unwrap();
    assert_eq!(
        a.features().collect::<Vec<_>>(),
        b.features().collect::<Vec<_>>()
    );
    assert!((ra.aic - rb.aic).abs() < 1e-8);
    assert!((a.intercept - b.intercept).abs() < 1e-9);
    for (name, v) in &a.coefficients {
        assert!((v - b.coefficients[name]).abs() < 1e-9, "{name}");
    }
    let auc_a = roc(&a.predict_proba(&d).unwrap(), d.labels()).unwrap().auc;
    let auc_b = roc(&b.predict_proba(&shuffled).unwrap(), shuffled.labels())
        .unwrap()
        .auc;
    assert!((auc_a - auc_b).abs() < 1e-12);
}
