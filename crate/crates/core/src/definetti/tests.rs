use super::*;
use crate::rng::{haar_vector, random_density, seeded};
use crate::tensor::{binomial, vector_power};

fn qubit_site() -> Factorization {
    Factorization::single("B", 2)
}

fn ket0() -> Vector {
    Vector::from_vec(vec![c(1.0), c(0.0)])
}

fn no_reduce() -> ExtensionOptions {
    ExtensionOptions { reduce_support: false }
}

fn projector(v: &Vector) -> Matrix {
    v * v.adjoint()
}

fn random_symmetric_state(seed: u64, d_a: usize, d: usize, n: usize) -> Operator {
    let mut rng = seeded(seed);
    let dim = d_a * d.pow(n as u32);
    let shape = extension_shape(d_a, &Factorization::single("B", d), n);
    let raw = Operator::new(random_density(&mut rng, dim, dim), shape).unwrap();
    symmetrize_state(&raw, &Factorization::single("B", d), n).unwrap()
}

#[test]
fn pure_symmetric_vector_kept() {
    let mut rng = seeded(1);
    let phi = haar_vector(&mut rng, 2);
    let psi = vector_power(&phi, 3);
    let ext = purify_extension(&projector(&psi), 1, &qubit_site(), 3, no_reduce()).unwrap();
    assert!(!ext.purified());
    assert_eq!(ext.d_eff(), 2);
    let back = ext.reduced_state(3).unwrap();
    assert!((back.matrix() - projector(&psi)).norm() < 1e-12);
}

#[test]
fn maximally_mixed_purifies_to_pairwise_product() {
    let n = 2;
    let omega = Matrix::identity(4, 4) / c(4.0);
    let ext = purify_extension(&omega, 1, &qubit_site(), n, ExtensionOptions::default()).unwrap();
    assert!(ext.purified());
    // each (B, B̄) pair is a fixed maximally entangled vector
    assert_eq!(ext.d_eff(), 1);
    assert!((ext.reduced_state(n).unwrap().matrix() - &omega).norm() < 1e-10);
    let full = purify_extension(&omega, 1, &qubit_site(), n, no_reduce()).unwrap();
    assert_eq!(full.d_eff(), 4);
    assert!((full.reduced_state(n).unwrap().matrix() - &omega).norm() < 1e-10);
}

#[test]
fn random_symmetric_state_purification_round_trip() {
    let omega = random_symmetric_state(3, 2, 2, 2);
    let ext = purify_extension(omega.matrix(), 2, &qubit_site(), 2, ExtensionOptions::default()).unwrap();
    assert!(ext.purified());
    let back = ext.reduced_state(2).unwrap();
    assert!((back.matrix() - omega.matrix()).norm() < 1e-10);
    let one = ext.reduced_state(1).unwrap();
    assert!((one.matrix() - omega.trace_out(&["B2"]).unwrap().matrix()).norm() < 1e-10);
}

#[test]
fn mixture_inside_symmetric_subspace_is_not_purified() {
    let mut rng = seeded(4);
    let (a, b) = (haar_vector(&mut rng, 2), haar_vector(&mut rng, 2));
    let omega = projector(&vector_power(&a, 2)) * c(0.3) + projector(&vector_power(&b, 2)) * c(0.7);
    let ext = purify_extension(&omega, 1, &qubit_site(), 2, no_reduce()).unwrap();
    assert!(!ext.purified());
    assert!((ext.reduced_state(2).unwrap().matrix() - &omega).norm() < 1e-12);
}

#[test]
fn asymmetric_input_rejected() {
    let omega = Matrix::from_diagonal(&Vector::from_vec(vec![c(1.0), c(0.0), c(0.0), c(0.0)]));
    let asym = Matrix::from_diagonal(&Vector::from_vec(vec![c(0.0), c(1.0), c(0.0), c(0.0)]));
    assert!(purify_extension(&omega, 1, &qubit_site(), 2, no_reduce()).is_ok());
    assert!(matches!(
        purify_extension(&asym, 1, &qubit_site(), 2, no_reduce()),
        Err(Error::AsymmetricInput(_))
    ));
}

#[test]
fn octahedron_resolves_identity() {
    let grid = build_grid(2, 1, &GridSpec::Design).unwrap();
    assert_eq!(grid.len(), 6);
    let sum = grid.points().iter().zip(grid.weights()).fold(Matrix::zeros(2, 2), |acc, (p, w)| {
        acc + projector(p) * c(2.0 * w)
    });
    assert!((sum - Matrix::identity(2, 2)).norm() < 1e-15);
    assert!(grid.resolution_residual() < 1e-12);
}

#[test]
fn designs_are_exact_up_to_five_copies() {
    for n in 1..=5 {
        let grid = build_grid(2, n, &GridSpec::Design).unwrap();
        assert!(grid.resolution_residual() <= 1e-9, "n = {n}: {}", grid.resolution_residual());
        assert!((grid.weights().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
    assert!(matches!(build_grid(2, 6, &GridSpec::Design), Err(Error::DesignUnavailable { d: 2, n: 6 })));
    assert!(matches!(build_grid(3, 1, &GridSpec::Design), Err(Error::DesignUnavailable { .. })));
    assert_eq!(build_grid(1, 9, &GridSpec::Design).unwrap().len(), 1);
}

#[test]
fn octahedron_is_not_a_four_design() {
    // the icosahedron is needed from four copies on
    let pts = design_points(2, 3).unwrap();
    let w = vec![1.0 / 6.0; 6];
    assert!(resolution_residual(&pts, &w, 4) > 1e-3);
}

#[test]
fn haar_residual_decreases_with_count() {
    let small = build_grid(2, 3, &GridSpec::Haar { seed: 9, count: 500 }).unwrap();
    let large = build_grid(2, 3, &GridSpec::Haar { seed: 9, count: 5000 }).unwrap();
    assert!(large.resolution_residual() < small.resolution_residual());
    assert!((large.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(matches!(
        build_grid(2, 3, &GridSpec::Haar { seed: 9, count: 3 }),
        Err(Error::GridTooSmall { count: 3, needed: 4 })
    ));
}

#[test]
fn frobenius_certificate_dominates_exact_residual() {
    let grid = build_grid(3, 3, &GridSpec::Haar { seed: 2, count: 200 }).unwrap();
    let dim = sym_dim(3, 3) as f64;
    let gram: f64 = grid
        .points()
        .iter()
        .flat_map(|p| grid.points().iter().map(move |q| p.dotc(q).norm_sqr().powi(3)))
        .sum::<f64>()
        / (200.0 * 200.0);
    let bound = dim.sqrt() * (dim * dim * gram - dim).sqrt();
    assert!(grid.resolution_residual() <= bound + 1e-9);
}

#[test]
fn pure_product_weights_follow_overlaps() {
    let mut rng = seeded(5);
    let sigma = random_density(&mut rng, 2, 2);
    let n = 3;
    let omega = sigma.kronecker(&projector(&vector_power(&ket0(), n)));
    let ext = purify_extension(&omega, 2, &qubit_site(), n, no_reduce()).unwrap();
    let grid = build_grid(2, n, &GridSpec::Design).unwrap();
    let approx = extract_measure(&ext, &grid).unwrap();
    let dim = sym_dim(n, 2) as f64;
    for (item, (p, w)) in approx.items.iter().zip(grid.points().iter().zip(grid.weights())) {
        let expected = &sigma * c(w * dim * p[0].norm_sqr().powi(n as i32));
        assert!((item.m.matrix() - expected).norm() < 1e-12);
        assert!((item.phi.matrix() - projector(p)).norm() < 1e-12);
    }
    let total = approx.total_measure();
    assert!(trace_norm_matrix(&(total - &sigma)) <= grid.resolution_residual() + 1e-8);
}

#[test]
fn scalar_measure_without_training_register() {
    let omega = random_symmetric_state(6, 1, 2, 2);
    let ext = purify_extension(omega.matrix(), 1, &qubit_site(), 2, ExtensionOptions::default()).unwrap();
    let grid = build_grid(ext.d_eff(), 2, &GridSpec::Haar { seed: 1, count: 4000 }).unwrap();
    let approx = extract_measure(&ext, &grid).unwrap();
    for it in &approx.items {
        assert_eq!(it.m.dim(), 1);
        assert!(it.m.matrix()[(0, 0)].re >= 0.0);
        assert!((it.phi.trace().re - 1.0).abs() < 1e-12);
    }
    let total = approx.total_measure()[(0, 0)].re;
    assert!((total - 1.0).abs() <= grid.resolution_residual() + 1e-8);
}

#[test]
fn zero_copy_marginal_matches_training_state() {
    let omega = random_symmetric_state(7, 2, 2, 2);
    let ext = purify_extension(omega.matrix(), 2, &qubit_site(), 2, ExtensionOptions::default()).unwrap();
    let grid = build_grid(ext.d_eff(), 2, &GridSpec::Haar { seed: 3, count: 3000 }).unwrap();
    let approx = extract_measure(&ext, &grid).unwrap();
    let omega_a = omega.partial_trace(&["A"]).unwrap();
    let delta0 = approx_error(&omega_a, &approx, 0).unwrap();
    assert!(delta0 <= grid.resolution_residual() + 1e-8, "{delta0} vs {}", grid.resolution_residual());
    for k in 0..=2 {
        let omega_k = ext.reduced_state(k).unwrap();
        assert!(approx_error(&omega_k, &approx, k).unwrap() <= 2.0 + grid.resolution_residual());
    }
}

#[test]
fn contraction_matches_dense_povm() {
    let n = 2;
    let omega = random_symmetric_state(8, 2, 2, n);
    let mut rng = seeded(9);
    // a pure symmetric state with a training register: (𝟙 ⊗ P_sym) applied to a random vector
    let v = Vector::from_iterator(8, (0..8).map(|_| crate::rng::complex_normal(&mut rng)));
    let psym = crate::tensor::symmetric_projector(n, 2).unwrap();
    let w = Matrix::identity(2, 2).kronecker(psym.matrix()) * v;
    let psi = &w / c(w.norm());
    let ext = purify_extension(&projector(&psi), 2, &qubit_site(), n, no_reduce()).unwrap();
    assert!(!ext.purified());
    let grid = build_grid(2, n, &GridSpec::Haar { seed: 10, count: 20 }).unwrap();
    let approx = extract_measure(&ext, &grid).unwrap();
    let dim = sym_dim(n, 2) as f64;
    let rho = Operator::new(projector(&psi), omega.shape().clone()).unwrap();
    for (item, (p, wt)) in approx.items.iter().zip(grid.points().iter().zip(grid.weights())) {
        let e = projector(&vector_power(p, n)) * c(wt * dim);
        let lifted = Operator::new(Matrix::identity(2, 2).kronecker(&e), omega.shape().clone()).unwrap();
        let dense = (&lifted * &rho).partial_trace(&["A"]).unwrap();
        assert!((item.m.matrix() - dense.matrix()).norm() < 1e-12);
    }
}

#[test]
fn grid_order_does_not_matter() {
    let omega = random_symmetric_state(11, 2, 2, 2);
    let ext = purify_extension(omega.matrix(), 2, &qubit_site(), 2, ExtensionOptions::default()).unwrap();
    let grid = build_grid(ext.d_eff(), 2, &GridSpec::Haar { seed: 12, count: 300 }).unwrap();
    let order: Vec<usize> = (0..grid.len()).rev().collect();
    let a = extract_measure(&ext, &grid).unwrap().reconstruct(1).unwrap();
    let b = extract_measure(&ext, &grid.permuted(&order)).unwrap().reconstruct(1).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn single_preparation_is_reconstructed_exactly() {
    let mut rng = seeded(13);
    let sigma = random_density(&mut rng, 2, 2);
    let phi = haar_vector(&mut rng, 2);
    let n = 4;
    let omega = sigma.kronecker(&projector(&vector_power(&phi, n)));
    let ext = purify_extension(&omega, 2, &qubit_site(), n, ExtensionOptions::default()).unwrap();
    assert_eq!(ext.d_eff(), 1);
    let grid = build_grid(1, n, &GridSpec::Design).unwrap();
    let approx = extract_measure(&ext, &grid).unwrap();
    let delta1 = approx_error(&ext.reduced_state(1).unwrap(), &approx, 1).unwrap();
    assert!(delta1 <= grid.resolution_residual() + 1e-6);
}

#[test]
fn product_ensemble_agrees_with_dense_path() {
    let mut rng = seeded(14);
    let n = 3;
    let (p, q) = (haar_vector(&mut rng, 2), haar_vector(&mut rng, 2));
    let (a1, a2) = (random_density(&mut rng, 2, 2) * c(0.4), random_density(&mut rng, 2, 2) * c(0.6));
    let dense = a1.kronecker(&projector(&vector_power(&p, n))) + a2.kronecker(&projector(&vector_power(&q, n)));
    let site = qubit_site();
    let terms = vec![
        (a1.clone(), Operator::new(projector(&p), site.clone()).unwrap()),
        (a2.clone(), Operator::new(projector(&q), site.clone()).unwrap()),
    ];
    let prod = product_extension(&terms, n, no_reduce()).unwrap();
    let vecs = purify_extension(&dense, 2, &site, n, no_reduce()).unwrap();
    assert!(prod.is_product_ensemble() && !vecs.is_product_ensemble());
    assert!((prod.reduced_state(n).unwrap().matrix() - &dense).norm() < 1e-12);
    let grid = build_grid(2, n, &GridSpec::Design).unwrap();
    let x = extract_measure(&prod, &grid).unwrap();
    let y = extract_measure(&vecs, &grid).unwrap();
    for (u, v) in x.items.iter().zip(&y.items) {
        assert!(u.m.max_abs_diff(&v.m) < 1e-12);
        assert!(u.phi.max_abs_diff(&v.phi) < 1e-12);
    }
}

#[test]
fn mixed_product_ensemble_is_purified_per_term() {
    let mut rng = seeded(15);
    let site = qubit_site();
    let phi = Operator::new(random_density(&mut rng, 2, 2), site.clone()).unwrap();
    let terms = vec![(Matrix::identity(1, 1), phi.clone())];
    let ext = product_extension(&terms, 3, ExtensionOptions::default()).unwrap();
    assert!(ext.purified());
    assert_eq!(ext.d_eff(), 1);
    let expected = phi.matrix().kronecker(phi.matrix()).kronecker(phi.matrix());
    assert!((ext.reduced_state(3).unwrap().matrix() - expected).norm() < 1e-12);
    let grid = build_grid(1, 3, &GridSpec::Design).unwrap();
    let approx = extract_measure(&ext, &grid).unwrap();
    assert!(approx.items[0].phi.max_abs_diff(&phi) < 1e-12);
}

#[test]
fn pure_product_error_decreases_with_n() {
    let mut last = f64::INFINITY;
    for n in 1..=5 {
        let omega = projector(&vector_power(&ket0(), n));
        let ext = purify_extension(&omega, 1, &qubit_site(), n, no_reduce()).unwrap();
        let grid = build_grid(2, n, &GridSpec::Design).unwrap();
        let approx = extract_measure(&ext, &grid).unwrap();
        let delta = approx_error(&ext.reduced_state(1).unwrap(), &approx, 1).unwrap();
        assert!(delta <= last + 1e-12, "n = {n}: {delta} > {last}");
        assert!(delta <= definetti_bound(2, 1, n));
        last = delta;
    }
}

#[test]
fn bound_values() {
    assert!((definetti_bound(2, 1, 64) - 0.25).abs() < 1e-15);
    assert!((definetti_bound(2, 3, 16) - 3.0).abs() < 1e-15);
}

#[test]
fn symmetric_dimension_ratio_bound() {
    for d in 1..=4 {
        for n in 1..=12 {
            for k in 0..=n {
                let ratio = binomial(n - k + d - 1, n - k) as f64 / binomial(n + d - 1, n) as f64;
                assert!(ratio >= 1.0 - (d * k) as f64 / n as f64 - 1e-12, "d={d} n={n} k={k}");
            }
        }
    }
}

#[test]
fn grid_spec_parsing() {
    assert_eq!("design".parse::<GridSpec>().unwrap(), GridSpec::Design);
    assert_eq!("haar:7:500".parse::<GridSpec>().unwrap(), GridSpec::Haar { seed: 7, count: 500 });
    assert_eq!(GridSpec::Haar { seed: 7, count: 500 }.to_string(), "haar:7:500");
    assert!(matches!("haar:x:1".parse::<GridSpec>(), Err(Error::Config(_))));
    assert!(matches!("sobol".parse::<GridSpec>(), Err(Error::Config(_))));
}

#[test]
fn grid_json_round_trip() {
    let grid = build_grid(2, 2, &GridSpec::Haar { seed: 4, count: 10 }).unwrap();
    let v = serde_json::to_value(&grid).unwrap();
    assert_eq!(v["mode"], "haar");
    assert_eq!(v["seed"], 4);
    assert_eq!(v["count"], 10);
    let back: MeasureGrid = serde_json::from_value(v).unwrap();
    assert_eq!(back.spec(), grid.spec());
    assert_eq!(back.resolution_residual(), grid.resolution_residual());
    for (a, b) in back.points().iter().zip(grid.points()) {
        assert_eq!(a, b);
    }
}
