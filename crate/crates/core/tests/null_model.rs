use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sysrisk_core::sdecm::{fit, fit_binary, fit_weights, logistic_probability, SdecmParams};
use sysrisk_core::{FitTargets, NetworkBuilder};

const N: usize = 4;

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("b{i}")).collect()
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).collect()
}

/// Expected degrees by summing over every adjacency matrix with weight
/// `exp(-sum of a_ij (alpha_out_i + alpha_in_j))`, normalised by the total.
fn enumerate_degrees(alpha_out: &[f64], alpha_in: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = alpha_out.len();
    let pairs = pairs(n);
    let (mut k_out, mut k_in) = (vec![0.0; n], vec![0.0; n]);
    let mut z = 0.0;
    for mask in 0u32..1 << pairs.len() {
        let mut energy = 0.0;
        for (b, &(i, j)) in pairs.iter().enumerate() {
            if mask >> b & 1 == 1 {
                energy += alpha_out[i] + alpha_in[j];
            }
        }
        let w = (-energy).exp();
        z += w;
        for (b, &(i, j)) in pairs.iter().enumerate() {
            if mask >> b & 1 == 1 {
                k_out[i] += w;
                k_in[j] += w;
            }
        }
    }
    (k_out.iter().map(|k| k / z).collect(), k_in.iter().map(|k| k / z).collect())
}

/// Targets produced by a model with the given multipliers.
fn targets_from(alpha_out: &[f64], alpha_in: &[f64], beta_out: &[f64], beta_in: &[f64]) -> FitTargets {
    let n = alpha_out.len();
    let (mut ko, mut ki, mut so, mut si) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (i, j) in pairs(n) {
        let p = 1.0 / (1.0 + (alpha_out[i] + alpha_in[j]).exp());
        let w = p / (beta_out[i] + beta_in[j]);
        ko[i] += p;
        ki[j] += p;
        so[i] += w;
        si[j] += w;
    }
    FitTargets::new(labels(n), ko, ki, so, si).unwrap()
}

fn ring_targets() -> FitTargets {
    let mut b = NetworkBuilder::new();
    for (l, r, w) in [
        ("b0", "b1", 2.0),
        ("b1", "b2", 3.0),
        ("b2", "b3", 1.5),
        ("b3", "b0", 4.0),
        ("b0", "b2", 1.0),
        ("b1", "b3", 2.5),
    ] {
        b.add_exposure(l, r, w).unwrap();
    }
    FitTargets::from_network(&b.build()).unwrap()
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn enumeration_matches_closed_form_on_a_ring() {
    let t = ring_targets();
    let params = fit(&t).unwrap();
    let m = params.analytic_margins();
    let (k_out, k_in) = enumerate_degrees(&params.alpha_out, &params.alpha_in);
    assert!(max_gap(&k_out, &m.k_out) <= 1e-10);
    assert!(max_gap(&k_in, &m.k_in) <= 1e-10);
    assert!(max_gap(&m.k_out, t.k_out()) <= 1e-8);
    assert!(max_gap(&m.k_in, t.k_in()) <= 1e-8);
    assert!(max_gap(&m.s_out, t.s_out()) <= 1e-8 * t.s_out().iter().cloned().fold(1.0, f64::max));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn enumeration_oracle(
        ao in prop::collection::vec(-2.0f64..2.0, N),
        ai in prop::collection::vec(-2.0f64..2.0, N),
        bo in prop::collection::vec(0.1f64..2.0, N),
        bi in prop::collection::vec(0.1f64..2.0, N),
    ) {
        let t = targets_from(&ao, &ai, &bo, &bi);
        let params = fit(&t).unwrap();
        let m = params.analytic_margins();
        let (k_out, k_in) = enumerate_degrees(&params.alpha_out, &params.alpha_in);
        prop_assert!(max_gap(&k_out, &m.k_out) <= 1e-10);
        prop_assert!(max_gap(&k_in, &m.k_in) <= 1e-10);
        prop_assert!(max_gap(&m.k_out, t.k_out()) <= 1e-8);
        prop_assert!(max_gap(&m.k_in, t.k_in()) <= 1e-8);
        for (got, want) in m.s_out.iter().chain(&m.s_in).zip(t.s_out().iter().chain(t.s_in())) {
            prop_assert!((got - want).abs() <= 1e-8 * want.max(1.0));
        }
    }

    #[test]
    fn binary_fit_ignores_strengths(
        ao in prop::collection::vec(-2.0f64..2.0, 6),
        ai in prop::collection::vec(-2.0f64..2.0, 6),
        bo in prop::collection::vec(0.1f64..2.0, 6),
        bi in prop::collection::vec(0.1f64..2.0, 6),
        scale in prop::collection::vec(0.2f64..5.0, 6),
    ) {
        let t = targets_from(&ao, &ai, &bo, &bi);
        // same degrees, different strengths
        let bo2: Vec<f64> = bo.iter().zip(&scale).map(|(b, s)| b * s).collect();
        let t2 = targets_from(&ao, &ai, &bo2, &bi);
        prop_assert_eq!(t.k_out(), t2.k_out());
        let (a, b) = (fit(&t).unwrap(), fit(&t2).unwrap());
        prop_assert_eq!(&a.alpha_out, &b.alpha_out);
        prop_assert_eq!(&a.alpha_in, &b.alpha_in);
        let binary = fit_binary(&t).unwrap();
        prop_assert_eq!(&binary.alpha_out, &a.alpha_out);
        fit_weights(&t2, &binary).unwrap();
        prop_assert_eq!(&binary.alpha_out, &b.alpha_out);
    }

    #[test]
    fn multipliers_have_a_translation_gauge(
        ao in prop::collection::vec(-2.0f64..2.0, 5),
        ai in prop::collection::vec(-2.0f64..2.0, 5),
        bo in prop::collection::vec(0.5f64..2.0, 5),
        bi in prop::collection::vec(0.5f64..2.0, 5),
        c in -0.4f64..0.4,
    ) {
        let params = fit(&targets_from(&ao, &ai, &bo, &bi)).unwrap();
        let mut shifted = params.clone();
        shifted.alpha_out.iter_mut().for_each(|a| *a += c);
        shifted.alpha_in.iter_mut().for_each(|a| *a -= c);
        shifted.beta_out.iter_mut().for_each(|b| *b += c);
        shifted.beta_in.iter_mut().for_each(|b| *b -= c);
        shifted.validate().unwrap();
        for (i, j) in pairs(5) {
            let (p, q) = (params.link_probability(i, j).unwrap(), shifted.link_probability(i, j).unwrap());
            prop_assert!((p - q).abs() <= 1e-12);
            let (w, v) = (params.expected_weight(i, j).unwrap(), shifted.expected_weight(i, j).unwrap());
            prop_assert!((w - v).abs() <= 1e-12 * w);
        }
    }
}

#[test]
fn logistic_link_law() {
    assert_eq!(logistic_probability(0.0, 0.0), 0.5);
    assert!((logistic_probability(1.0, -0.3) - 1.0 / (1.0 + 0.7f64.exp())).abs() < 1e-15);
    assert_eq!(logistic_probability(f64::INFINITY, -3.0), 0.0);
    assert_eq!(logistic_probability(-f64::INFINITY, 3.0), 1.0);
}

/// Sample mean and standard error.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

#[test]
fn monte_carlo_reproduces_strengths() {
    let t = ring_targets();
    let params = fit(&t).unwrap();
    let sampler = params.sampler();
    let draws = 1_000_000;
    let mut s_out: Vec<Vec<f64>> = (0..N).map(|_| Vec::with_capacity(draws)).collect();
    let mut s_in: Vec<Vec<f64>> = (0..N).map(|_| Vec::with_capacity(draws)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..draws {
        let m = sampler.sample_with(&mut rng).margins();
        for i in 0..N {
            s_out[i].push(m.s_out[i]);
            s_in[i].push(m.s_in[i]);
        }
    }
    for i in 0..N {
        for (xs, want) in [(&s_out[i], t.s_out()[i]), (&s_in[i], t.s_in()[i])] {
            let (mean, se) = mean_se(xs);
            assert!((mean - want).abs() <= 3.0 * se, "bank {i}: {mean} vs {want} (se {se})");
        }
    }
}

#[test]
fn link_frequencies_and_weights() {
    let params = fit(&ring_targets()).unwrap();
    let sampler = params.sampler();
    let draws = 100_000;
    let mut hits = [0usize; N * N];
    let mut weights: Vec<Vec<f64>> = vec![Vec::new(); N * N];
    for k in 0..draws {
        for (i, j, w) in sampler.sample(5, k as u64).edges() {
            hits[i * N + j] += 1;
            weights[i * N + j].push(w);
        }
    }
    for (i, j) in pairs(N) {
        let p = params.link_probability(i, j).unwrap();
        let freq = hits[i * N + j] as f64 / draws as f64;
        assert!((freq - p).abs() <= 4.0 * (p * (1.0 - p) / draws as f64).sqrt(), "({i},{j}): {freq} vs {p}");
        if p > 0.0 {
            let (mean, se) = mean_se(&weights[i * N + j]);
            let want = params.expected_weight(i, j).unwrap();
            assert!((mean - want).abs() <= 3.0 * se, "({i},{j}): {mean} vs {want}");
        }
    }
}

#[test]
fn impossible_links_never_appear() {
    // b3 never lends, b0 never borrows
    let mut b = NetworkBuilder::new();
    for (l, r, w) in [("b0", "b1", 1.0), ("b1", "b2", 2.0), ("b2", "b3", 1.0), ("b0", "b3", 3.0), ("b1", "b3", 1.0)] {
        b.add_exposure(l, r, w).unwrap();
    }
    let params = fit(&FitTargets::from_network(&b.build()).unwrap()).unwrap();
    let sampler = params.sampler();
    for k in 0..2000 {
        let net = sampler.sample(3, k);
        assert!(net.out_edges(3).0.is_empty());
        assert!(net.edges().all(|(_, j, _)| j != 0));
    }
}

#[test]
fn sampling_is_a_function_of_seed_and_index() {
    let params = fit(&ring_targets()).unwrap();
    let forward: Vec<_> = (0..20).map(|k| params.sample_network(11, k)).collect();
    let backward: Vec<_> = (0..20).rev().map(|k| params.sample_network(11, k)).collect();
    for (k, net) in forward.iter().enumerate() {
        assert_eq!(net, &backward[19 - k]);
        assert_eq!(net, &params.sampler().sample(11, k as u64));
    }
    assert_ne!(forward[0], params.sample_network(12, 0));
}

#[test]
fn params_survive_json() {
    let params = fit(&ring_targets()).unwrap();
    let text = serde_json::to_string(&params).unwrap();
    let back: SdecmParams = serde_json::from_str(&text).unwrap();
    assert_eq!(back, params);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let k = rng.random_range(0..1000);
    assert_eq!(back.sample_network(4, k), params.sample_network(4, k));
}
