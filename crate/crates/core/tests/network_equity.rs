use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sysrisk_core::equity::{fit_log_regression, impute_all, RegressionFit};
use sysrisk_core::{compute_margins, NetworkBuilder};

fn edge_list() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
    (2usize..12).prop_flat_map(|n| {
        let edges = prop::collection::vec((0..n, 0..n, 0.01f64..1e4), 0..3 * n)
            .prop_map(|es| es.into_iter().filter(|(i, j, _)| i != j).collect::<Vec<_>>());
        (Just(n), edges)
    })
}

fn build(n: usize, edges: &[(usize, usize, f64)]) -> sysrisk_core::InterbankNetwork {
    let mut b = NetworkBuilder::new();
    for i in 0..n {
        b.add_bank(&format!("{i:02}"));
    }
    for &(i, j, w) in edges {
        b.add_exposure(&format!("{i:02}"), &format!("{j:02}"), w).unwrap();
    }
    b.build()
}

proptest! {
    #[test]
    fn margins_are_row_and_column_sums((n, edges) in edge_list()) {
        let net = build(n, &edges);
        let mut dense = vec![vec![0.0; n]; n];
        for &(i, j, w) in &edges {
            dense[i][j] += w;
        }
        let m = compute_margins(&net);
        for i in 0..n {
            let row: f64 = dense[i].iter().sum();
            let col: f64 = dense.iter().map(|r| r[i]).sum();
            prop_assert!((m.s_out[i] - row).abs() <= 1e-12 * row.max(1.0));
            prop_assert!((m.s_in[i] - col).abs() <= 1e-12 * col.max(1.0));
            prop_assert_eq!(m.k_out[i], dense[i].iter().filter(|&&w| w > 0.0).count());
            prop_assert_eq!(m.k_in[i], dense.iter().filter(|r| r[i] > 0.0).count());
        }
        prop_assert_eq!(m.k_out.iter().sum::<usize>(), net.link_count());
        prop_assert_eq!(m.k_in.iter().sum::<usize>(), net.link_count());
    }

    #[test]
    fn insertion_order_does_not_matter((n, edges) in edge_list(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        // distinct pairs, so summation order cannot move the last bit
        let mut seen = std::collections::BTreeSet::new();
        let edges: Vec<_> = edges.into_iter().filter(|&(i, j, _)| seen.insert((i, j))).collect();
        let mut shuffled = edges.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (a, b) = (build(n, &edges), build(n, &shuffled));
        prop_assert_eq!(compute_margins(&a), compute_margins(&b));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn noiseless_power_law_round_trips(
        a in -3.0f64..3.0,
        b in 0.2f64..1.5,
        xs in prop::collection::vec(0.01f64..1e6, 3..40),
    ) {
        prop_assume!(xs.iter().any(|&x| (x.ln() - xs[0].ln()).abs() > 1e-3));
        let pairs: Vec<(f64, f64)> = xs.iter().map(|&x| (x, (a + b * x.ln()).exp())).collect();
        let fit = fit_log_regression(&pairs).unwrap();
        prop_assert!((fit.intercept - a).abs() <= 1e-9);
        prop_assert!((fit.slope - b).abs() <= 1e-9);
        for &(x, y) in &pairs {
            prop_assert!((fit.predict(x) - y).abs() <= 1e-8 * y);
        }
    }
}

#[test]
fn noiseless_recovery_is_exact() {
    let (a, b) = (1.7, 0.83);
    let pairs: Vec<(f64, f64)> = (0..60)
        .map(|k| {
            let x = 2f64.powf(k as f64 / 3.0);
            (x, (a + b * x.ln()).exp())
        })
        .collect();
    let fit = fit_log_regression(&pairs).unwrap();
    assert!((fit.intercept - a).abs() <= 1e-12);
    assert!((fit.slope - b).abs() <= 1e-12);
}

#[test]
fn noisy_power_law_recovers_the_slope() {
    let (n, slope, r2) = (2366, 0.83, 0.88f64);
    let log_x = Normal::new(4.0, 1.5).unwrap();
    // residual spread that makes the explained share equal r2
    let noise_sd = slope * 1.5 * ((1.0 - r2) / r2).sqrt();
    let noise = Normal::new(0.0, noise_sd).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2366);
    let pairs: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let lx: f64 = log_x.sample(&mut rng);
            (lx.exp(), (0.5 + slope * lx + noise.sample(&mut rng)).exp())
        })
        .collect();
    let fit = fit_log_regression(&pairs).unwrap();
    assert!((fit.slope - slope).abs() <= 0.05, "slope {}", fit.slope);
    assert!((fit.r_squared - r2).abs() <= 0.02, "R^2 {}", fit.r_squared);
    assert!((fit.pearson_r - r2.sqrt()).abs() <= 0.02);
}

#[test]
fn imputation_follows_the_fit() {
    let net = build(3, &[(0, 1, 8.0), (1, 2, 2.0), (2, 0, 4.0)]);
    let fit = RegressionFit::from_coefficients(0.3, 0.83);
    let e = impute_all(&fit, &net.margins()).unwrap();
    // average positions 6, 5, 3
    for (got, pos) in e.iter().zip([6.0f64, 5.0, 3.0]) {
        assert!((got - 0.3f64.exp() * pos.powf(0.83)).abs() <= 1e-12 * got);
    }
}
