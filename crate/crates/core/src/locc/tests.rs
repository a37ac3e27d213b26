use super::*;
use crate::channels::{identity_channel, is_cptp, random_nonsignalling_choi, DykstraParams};
use crate::definetti::ApproxItem;
use crate::rng::{random_density, random_hermitian, seeded};
use rand::Rng;

fn xy(d_x: usize, d_y: usize) -> Factorization {
    Factorization::new([("X", d_x), ("Y", d_y)]).unwrap()
}

fn state(m: Matrix, d_x: usize, d_y: usize) -> Operator {
    Operator::new(m, xy(d_x, d_y)).unwrap()
}

fn diag(vals: &[f64]) -> Matrix {
    Matrix::from_diagonal(&crate::tensor::Vector::from_iterator(vals.len(), vals.iter().map(|&v| c(v))))
}

fn omega_state(d: usize) -> Operator {
    Operator::new(identity_channel(d).omega().matrix().clone(), xy(d, d)).unwrap()
}

#[test]
fn marginal_input_examples() {
    let tau = marginal_input(&omega_state(3)).unwrap();
    assert!((tau.matrix() - Matrix::identity(3, 3) / c(3.0)).norm() < 1e-12);

    let sigma = diag(&[0.7, 0.3]);
    let rho = diag(&[0.2, 0.5, 0.3]);
    let tau = marginal_input(&state(sigma.kronecker(&rho), 2, 3)).unwrap();
    assert!((tau.matrix() - &sigma).norm() < 1e-12);

    let mut rng = seeded(3);
    for _ in 0..10 {
        let tau = marginal_input(&state(random_density(&mut rng, 6, 6), 3, 2)).unwrap();
        assert!((tau.trace().re - 1.0).abs() < 1e-12);
    }
}

#[test]
fn repair_fixed_point_and_product_closed_form() {
    let phi = omega_state(2);
    let fixed = tp_repair(&phi, DEFAULT_CUTOFF).unwrap();
    assert!(fixed.max_abs_diff(&phi) < 1e-12);

    let sigma = diag(&[0.8, 0.2]);
    let rho = diag(&[0.1, 0.9]);
    let fixed = tp_repair(&state(sigma.kronecker(&rho), 2, 2), DEFAULT_CUTOFF).unwrap();
    let expected = (Matrix::identity(2, 2) / c(2.0)).kronecker(&rho);
    assert!((fixed.matrix() - expected).norm() < 1e-12);
}

#[test]
fn repair_is_trace_preserving_and_psd() {
    let mut rng = seeded(11);
    for (d_x, d_y) in [(2, 2), (2, 3), (3, 2)] {
        for _ in 0..10 {
            let phi = state(random_density(&mut rng, d_x * d_y, 2), d_x, d_y);
            let fixed = tp_repair(&phi, DEFAULT_CUTOFF).unwrap();
            let tau = marginal_input(&fixed).unwrap();
            assert!((tau.matrix() - Matrix::identity(d_x, d_x) / c(d_x as f64)).norm() < 1e-10);
            assert!(min_eigenvalue(&fixed).unwrap() > -1e-12);
        }
    }
}

#[test]
fn singular_marginal_is_reported() {
    let rho = diag(&[1.0, 0.0]);
    let phi = state(rho.kronecker(&rho), 2, 2);
    assert!(matches!(tp_repair(&phi, DEFAULT_CUTOFF), Err(Error::Singular(_))));
}

#[test]
fn repair_bound_zero_for_tp_input() {
    let b = repair_distance_bound(&omega_state(2)).unwrap();
    assert!(b.lhs < 1e-12 && b.rhs < 1e-7);
}

#[test]
fn classical_state_violates_stated_bound_but_not_fvdg() {
    // φ = 0.9|0><0|⊗ρ_0 + 0.1|1><1|⊗ρ_1: φ̃ halves both blocks, so lhs = 0.4 + 0.4.
    let phi = state(diag(&[0.9 * 0.5, 0.9 * 0.5, 0.1 * 0.25, 0.1 * 0.75]), 2, 2);
    let b = repair_distance_bound(&phi).unwrap();
    let f = (0.9f64.sqrt() + 0.1f64.sqrt()).powi(2) / 2.0;
    assert!((b.rhs - (1.0 - f).sqrt()).abs() < 1e-12);
    assert!((b.lhs - 0.8).abs() < 1e-12);
    assert!((b.fidelity - f).abs() < 1e-10);
    assert!(!b.holds(1e-9));
    assert!(b.holds_fvdg(1e-9));
}

#[test]
fn fvdg_bound_on_random_states() {
    let mut rng = seeded(5);
    for (d_x, d_y) in [(2usize, 2usize), (2, 3), (3, 2), (3, 3)] {
        for _ in 0..25 {
            let rank = rng.gen_range(d_x.div_ceil(d_y)..=d_x * d_y);
            let phi = state(random_density(&mut rng, d_x * d_y, rank), d_x, d_y);
            let b = repair_distance_bound(&phi).unwrap();
            assert!(b.holds_fvdg(1e-9), "lhs {} rhs {}", b.lhs, b.rhs);
            assert!((b.fidelity - (1.0 - b.rhs * b.rhs)).abs() < 1e-8);
        }
    }
}

#[test]
fn trace_distance_subadditive_under_powers() {
    let mut rng = seeded(8);
    for _ in 0..10 {
        let rho = random_density(&mut rng, 2, 2);
        let sigma = random_density(&mut rng, 2, 2);
        let base = trace_norm_matrix(&(&rho - &sigma));
        let (mut a, mut b) = (rho.clone(), sigma.clone());
        for k in 2..=4 {
            a = a.kronecker(&rho);
            b = b.kronecker(&sigma);
            assert!(trace_norm_matrix(&(&a - &b)) <= k as f64 * base + 1e-10);
        }
    }
}

#[test]
fn chebyshev_examples() {
    let det = operator_chebyshev(&[(diag(&[0.3, 0.7]), 1.0)], 0.1).unwrap();
    assert_eq!(det.empirical_prob, 0.0);
    assert!(det.bound.abs() < 1e-15);

    let (p0, p1) = (diag(&[1.0, 0.0]), diag(&[0.0, 1.0]));
    let check = operator_chebyshev(&[(p0.clone(), 0.5), (p1.clone(), 0.5)], 0.4).unwrap();
    assert_eq!(check.empirical_prob, 1.0);
    let mu = Matrix::identity(2, 2) * c(0.5);
    let second = (p0.kronecker(&p0) + p1.kronecker(&p1)) * c(0.5);
    let expected = 4.0 / 0.16 * op_norm_matrix(&(second - mu.kronecker(&mu)));
    assert!((check.bound - expected).abs() < 1e-12);
    assert!(check.empirical_prob <= check.bound);

    // d = 1: classical Chebyshev Var/ε².
    let pts = [(-1.0, 0.25), (0.0, 0.5), (2.0, 0.25)];
    let samples: Vec<(Matrix, f64)> = pts.iter().map(|&(x, p)| (Matrix::from_element(1, 1, c(x)), p)).collect();
    let mean: f64 = pts.iter().map(|(x, p)| x * p).sum();
    let var: f64 = pts.iter().map(|(x, p)| (x - mean).powi(2) * p).sum();
    let check = operator_chebyshev(&samples, 1.0).unwrap();
    assert!((check.bound - var).abs() < 1e-12);
    assert!((check.empirical_prob - 0.5).abs() < 1e-15);
}

#[test]
fn chebyshev_on_random_ensembles() {
    let mut rng = seeded(21);
    for _ in 0..100 {
        let d = rng.gen_range(1..=3);
        let atoms = rng.gen_range(1..=10);
        let raw: Vec<f64> = (0..atoms).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let samples: Vec<(Matrix, f64)> =
            raw.iter().map(|p| (random_hermitian(&mut rng, d), p / total)).collect();
        let eps = rng.gen_range(0.05..2.0);
        let check = operator_chebyshev(&samples, eps).unwrap();
        assert!(check.empirical_prob <= check.bound + 1e-9);
    }
}

#[test]
fn chebyshev_rejects_bad_distribution() {
    let samples = vec![(diag(&[1.0]), 0.4), (diag(&[0.0]), 0.4)];
    assert!(matches!(operator_chebyshev(&samples, 0.1), Err(Error::InvalidDistribution(_))));
}

fn single_item_approx(phi: Operator) -> DeFinettiApprox {
    DeFinettiApprox {
        items: vec![ApproxItem { m: Operator::on("A", Matrix::identity(1, 1)).unwrap(), phi }],
        source_n: 4,
        d_eff: 1,
        grid_residual: 0.0,
    }
}

#[test]
fn concentration_trivial_cases() {
    let approx = single_item_approx(omega_state(2));
    let report = concentration_report(&approx, 0.1, 0.5).unwrap();
    assert!((report.e1.matrix() - Matrix::identity(2, 2) / c(2.0)).norm() < 1e-12);
    assert!(report.ek_norm_residuals.iter().all(|(_, r)| *r < 1e-12));
    assert_eq!(report.complement_mass, 0.0);
    assert!(report.statement1_holds() && report.statement2_holds());

    let mut rng = seeded(2);
    let mut items = Vec::new();
    for w in [0.3, 0.7] {
        items.push(ApproxItem {
            m: Operator::on("A", Matrix::identity(1, 1) * c(w)).unwrap(),
            phi: state(random_density(&mut rng, 4, 4), 2, 2),
        });
    }
    let approx = DeFinettiApprox { items, source_n: 2, d_eff: 4, grid_residual: 0.0 };
    let report = concentration_report(&approx, 10.0, 0.1).unwrap();
    assert_eq!(report.complement_mass, 0.0);
    assert!((report.r_eps_mass - 1.0).abs() < 1e-12);
}

fn random_ns(seed: u64, d_a: usize, n: usize) -> ChoiChannel {
    random_nonsignalling_choi(d_a, 2, 2, n, seed, DykstraParams::default()).unwrap()
}

fn rescaling() -> LoccOptions {
    LoccOptions { slack: SlackPolicy::Rescale, epsilon: EpsilonRule::Fixed(0.2), ..LoccOptions::default() }
}

#[test]
fn pipeline_on_random_channel() {
    let q = random_ns(4, 2, 2);
    let grid = GridSpec::Haar { seed: 9, count: 3000 };
    let proto = build_locc_protocol(&q, &grid, &rescaling()).unwrap();
    let p = &proto.provenance;
    assert_eq!(p.repaired_count + p.fallback_count, p.grid_size);
    assert_eq!(proto.povm.len(), p.grid_size + 1);
    assert_eq!(proto.channels.len(), proto.povm.len());
    assert!(proto.completeness_defect() < POVM_TOL);
    for m in &proto.povm {
        assert!(min_eigenvalue(m).unwrap() > -1e-10);
    }
    for ch in &proto.channels {
        let tau = ch.omega().partial_trace(&["X1"]).unwrap();
        assert!((tau.matrix() - Matrix::identity(2, 2) / c(2.0)).norm() < 1e-9);
    }
    let rebuilt = proto.to_choi(2).unwrap();
    assert!(is_cptp(&rebuilt).unwrap().passes(1e-8));
    assert!(is_nonsignalling(&rebuilt).unwrap().passes(1e-8));

    // Statement-1 residuals grow with k.
    let site = Factorization::new([("X", 2), ("Y", 2)]).unwrap();
    let sym = symmetrize_channel(&q).unwrap();
    let ext = purify_extension(sym.omega().matrix(), 2, &site, 2, ExtensionOptions::default()).unwrap();
    let g = build_grid(ext.d_eff(), 2, &grid).unwrap();
    let approx = extract_measure(&ext, &g).unwrap();
    let report = concentration_report(&approx, 0.2, p.delta).unwrap();
    assert!(report.ek_norm_residuals[0].1 <= report.ek_norm_residuals[1].1 + 1e-10);
    assert!(report.statement1_holds());
    assert!(report.statement2_holds());
}

#[test]
fn identity_channel_reconstructed_exactly() {
    let q = identity_channel(2);
    let proto = build_locc_protocol(&q, &GridSpec::Design, &LoccOptions::default()).unwrap();
    assert_eq!(proto.provenance.d_eff, 1);
    assert_eq!(proto.provenance.repaired_count, 1);
    assert!(proto.povm[0].max_abs_diff(&Operator::on("A", Matrix::identity(1, 1)).unwrap()) < 1e-10);
    assert!(proto.channels[0].omega().max_abs_diff(q.omega()) < 1e-10);
    assert!(proto.provenance.slack_mass < 1e-10);
}

#[test]
fn signalling_input_rejected() {
    let swap = Matrix::from_fn(4, 4, |i, j| if (i % 2) * 2 + i / 2 == j { c(1.0) } else { c(0.0) });
    let q = crate::channels::choi_of_kraus_multi(&[swap], 1, 2, 2, 2).unwrap();
    let err = build_locc_protocol(&q, &GridSpec::Design, &LoccOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Signalling(_)));
}

#[test]
fn risk_gap_bound_values() {
    let v = risk_gap_bound(2, 2, 2, 64, 1.0);
    assert!((v - 4f64.powf(1.0 / 6.0) * 2f64.powf(13.0 / 6.0)).abs() < 1e-12);
    assert!(risk_gap_bound(2, 2, 2, 65, 1.0) < v);
    assert!((risk_gap_bound(2, 2, 2, 64, 3.0) - 3.0 * v).abs() < 1e-12);
}

#[test]
fn epsilon_rule_parsing() {
    assert_eq!("cbrt".parse::<EpsilonRule>().unwrap(), EpsilonRule::CubeRootDelta);
    assert_eq!("0.2".parse::<EpsilonRule>().unwrap(), EpsilonRule::Fixed(0.2));
    assert!("-1".parse::<EpsilonRule>().is_err());
    assert!((EpsilonRule::CubeRootDelta.epsilon(8.0) - 2.0).abs() < 1e-12);
}

#[test]
fn protocol_json_round_trip() {
    let proto = build_locc_protocol(&identity_channel(2), &GridSpec::Design, &LoccOptions::default()).unwrap();
    let text = serde_json::to_string(&proto).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["povm", "channels", "provenance"] {
        assert!(value.get(key).is_some());
    }
    let back: LoccProtocol = serde_json::from_str(&text).unwrap();
    assert_eq!(back.povm.len(), proto.povm.len());
    assert!(back.channels[0].omega().max_abs_diff(proto.channels[0].omega()) == 0.0);
}
