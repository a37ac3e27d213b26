use super::*;

fn uniform_dist(nx: usize, ny: usize) -> Vec<Vec<f64>> {
    vec![vec![1.0 / (nx * ny) as f64; ny]; nx]
}

fn random_dist(seed: u64, nx: usize, ny: usize) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let flat = random_simplex(&mut rng, nx * ny);
    flat.chunks(ny).map(|c| c.to_vec()).collect()
}

/// Explicit enumeration over every `(x, y, y')` tuple.
fn brute_risk(p: &ClassicalProtocol, dist: &[Vec<f64>], a: usize) -> f64 {
    let mut risk = 0.0;
    for x in 0..p.contexts() {
        let xs = digits(x, p.nx, p.n);
        for y in 0..p.outcomes() {
            let ys = digits(y, p.ny, p.n);
            for yp in 0..p.outcomes() {
                let yps = digits(yp, p.ny, p.n);
                let weight: f64 = (0..p.n).map(|i| dist[xs[i]][yps[i]]).product();
                let loss = (0..p.n).filter(|&i| ys[i] != yps[i]).count() as f64 / p.n as f64;
                risk += loss * weight * p.prob(a, &xs, &ys);
            }
        }
    }
    risk
}

/// `Π_i q(y_i | x_i)` with the same `q` for every `a`.
fn product_protocol(q: &[Vec<f64>], na: usize, n: usize) -> ClassicalProtocol {
    let (nx, ny) = (q.len(), q[0].len());
    let mut probs = Vec::new();
    for _ in 0..na {
        for x in 0..nx.pow(n as u32) {
            let xs = digits(x, nx, n);
            for y in 0..ny.pow(n as u32) {
                let ys = digits(y, ny, n);
                probs.push((0..n).map(|i| q[xs[i]][ys[i]]).product());
            }
        }
    }
    ClassicalProtocol::new(nx, ny, na, n, probs).unwrap()
}

/// Binary, n = 2: `y_1 = x_2`, `y_2 = 0`.
fn copy_neighbour() -> ClassicalProtocol {
    let mut probs = vec![0.0; 16];
    for x in 0..4 {
        let x2 = x % 2;
        probs[x * 4 + x2 * 2] = 1.0;
    }
    ClassicalProtocol::new(2, 2, 1, 2, probs).unwrap()
}

#[test]
fn product_protocol_does_not_signal() {
    let q = vec![vec![0.3, 0.7], vec![0.9, 0.1]];
    let p = product_protocol(&q, 2, 3);
    assert!(is_nonsignalling_classical(&p).max() < 1e-15);
}

#[test]
fn copy_neighbour_signals() {
    let report = is_nonsignalling_classical(&copy_neighbour());
    assert!((report.per_i_deviation[0] - 1.0).abs() < 1e-15);
    assert_eq!(report.per_i_deviation[1], 0.0);
}

#[test]
fn symmetrization_examples() {
    let q = vec![vec![0.3, 0.7], vec![0.9, 0.1]];
    let p = product_protocol(&q, 1, 2);
    let s = symmetrize_classical(&p).unwrap();
    for (a, b) in p.probs.iter().zip(&s.probs) {
        assert!((a - b).abs() < 1e-15);
    }

    // Two permutations of n = 2: P̄(y1 y2 | x1 x2) = ½[P(y1 y2 | x1 x2) + P(y2 y1 | x2 x1)].
    let p = copy_neighbour();
    let s = symmetrize_classical(&p).unwrap();
    for x in 0..4 {
        let xs = digits(x, 2, 2);
        for y in 0..4 {
            let ys = digits(y, 2, 2);
            let expected = 0.5 * (p.prob(0, &xs, &ys) + p.prob(0, &[xs[1], xs[0]], &[ys[1], ys[0]]));
            assert!((s.prob(0, &xs, &ys) - expected).abs() < 1e-15);
        }
    }
    let twice = symmetrize_classical(&s).unwrap();
    assert_eq!(twice.probs, s.probs);
}

#[test]
fn symmetrization_keeps_nonsignalling_and_risk() {
    for seed in 0..10 {
        let p = random_nonsignalling_classical(2, 2, 2, 3, seed).unwrap();
        assert!(is_nonsignalling_classical(&p).passes(1e-12));
        let s = symmetrize_classical(&p).unwrap();
        assert!(is_nonsignalling_classical(&s).passes(1e-12));
        let dist = random_dist(seed + 50, 2, 2);
        for a in 0..2 {
            let before = classical_expected_risk(&p, &dist, a).unwrap();
            let after = classical_expected_risk(&s, &dist, a).unwrap();
            assert!((before - after).abs() < 1e-12);
        }
    }
}

#[test]
fn decomposition_examples() {
    let det = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let mix = decompose_classifier_mixture(&det).unwrap();
    let nonzero: Vec<_> = mix.functions.iter().zip(&mix.weights).filter(|(_, w)| **w > 0.0).collect();
    assert_eq!(nonzero.len(), 1);
    assert_eq!(nonzero[0].0, &vec![1, 0]);
    assert_eq!(*nonzero[0].1, 1.0);

    let q = vec![vec![0.7, 0.3], vec![0.2, 0.8]];
    let mix = decompose_classifier_mixture(&q).unwrap();
    assert_eq!(mix.functions, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
    for (w, e) in mix.weights.iter().zip([0.14, 0.56, 0.06, 0.24]) {
        assert!((w - e).abs() < 1e-15);
    }
    let back = mix.reconstruct();
    for (row, orig) in back.iter().zip(&q) {
        for (a, b) in row.iter().zip(orig) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    let uniform = vec![vec![1.0 / 3.0; 3]; 2];
    let mix = decompose_classifier_mixture(&uniform).unwrap();
    assert_eq!(mix.weights.len(), 9);
    assert!(mix.weights.iter().all(|w| (w - 1.0 / 9.0).abs() < 1e-15));
    assert!((mix.total_weight() - 1.0).abs() < 1e-15);
}

#[test]
fn decomposition_rejects_large_alphabets() {
    let q = vec![vec![0.25; 4]; 11];
    assert!(matches!(decompose_classifier_mixture(&q), Err(Error::AlphabetTooLarge(_))));
    assert!(decompose_classifier_mixture(&[vec![0.5, 0.6]]).is_err());
}

#[test]
fn risk_examples() {
    // Perfect classifier y = x on deterministic P_XY(x, y') = ½ δ_{x y'}.
    let dist = vec![vec![0.5, 0.0], vec![0.0, 0.5]];
    let ident = product_protocol(&[vec![1.0, 0.0], vec![0.0, 1.0]], 1, 2);
    assert!(classical_expected_risk(&ident, &dist, 0).unwrap().abs() < 1e-15);

    let coin = product_protocol(&[vec![0.5, 0.5], vec![0.5, 0.5]], 1, 2);
    assert!((classical_expected_risk(&coin, &random_dist(1, 2, 2), 0).unwrap() - 0.5).abs() < 1e-15);

    for seed in 0..5 {
        let p = random_nonsignalling_classical(2, 3, 1, 2, seed).unwrap();
        let dist = random_dist(seed + 7, 2, 3);
        let fast = classical_expected_risk(&p, &dist, 0).unwrap();
        assert!((fast - brute_risk(&p, &dist, 0)).abs() < 1e-14);
        assert!((0.0..=1.0).contains(&fast));
    }
    assert!(classical_expected_risk(&coin, &uniform_dist(2, 2), 3).is_err());
}

#[test]
fn mixture_reduction_preserves_risk() {
    for n in [2, 3] {
        for seed in 0..20 {
            let p = random_nonsignalling_classical(2, 2, 2, n, seed).unwrap();
            let out = mixture_reduction(&p).unwrap();
            assert!(out.marginal_variation < 1e-12);
            assert_eq!(is_nonsignalling_classical(&out.reconstructed).max(), 0.0);
            let dist = random_dist(seed + 1000, 2, 2);
            for a in 0..2 {
                let original = classical_expected_risk(&p, &dist, a).unwrap();
                let rebuilt = classical_expected_risk(&out.reconstructed, &dist, a).unwrap();
                assert!((original - rebuilt).abs() < 1e-12, "seed {seed}, a {a}");
            }
        }
    }
}

#[test]
fn deterministic_source_recovered() {
    let p = product_protocol(&[vec![0.0, 1.0], vec![1.0, 0.0]], 1, 2);
    let out = mixture_reduction(&p).unwrap();
    assert_eq!(out.reconstructed.probs, p.probs);
}

#[test]
fn validation_and_json() {
    assert!(ClassicalProtocol::new(2, 2, 1, 1, vec![0.5, 0.5, 0.2, 0.7]).is_err());
    assert!(ClassicalProtocol::new(2, 2, 1, 1, vec![0.5, 0.5]).is_err());
    assert!(ClassicalProtocol::new(2, 2, 1, 5, vec![]).is_err());
    let p = random_nonsignalling_classical(2, 2, 2, 2, 3).unwrap();
    let text = p.to_json().unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["nx", "ny", "na", "n", "probs"] {
        assert!(value.get(key).is_some());
    }
    assert_eq!(ClassicalProtocol::from_json(&text).unwrap(), p);
    assert!(ClassicalProtocol::from_json(r#"{"nx":2,"ny":2,"na":1,"n":1,"probs":[1,0,1]}"#).is_err());
}
