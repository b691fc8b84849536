//! Matrix-free operations against explicitly assembled matrices.

use nalgebra::{DMatrix, DVector};
use nmg::checks::{error_propagation_matrix, galerkin_check, spectral_check};
use nmg::dense::{assemble, exact_solve, exact_spectral_radius, DenseOperator};
use nmg::loss::{loss, rademacher_field, LossConfig};
use nmg::{conv_down, conv_up, GridField, Kernel, MgNetwork, ModelKind, ProblemSpec, StrideSpec, PROBLEM_NAMES};

fn p5() -> ProblemSpec {
    ProblemSpec::by_name("p5").unwrap()
}

fn fine_operator(problem: &ProblemSpec, j: u32) -> DenseOperator {
    let n = nmg::grid_side(j);
    assemble(|x| problem.apply(x).unwrap(), (n, n)).unwrap()
}

fn random(n: usize, seed: u64) -> GridField {
    let z = rademacher_field((n, n), seed, 0);
    let w = rademacher_field((n, n), seed, 1);
    GridField::axpy(0.75, &z, 0.25, &w).unwrap()
}

fn max_diff(a: &GridField, b: &GridField) -> f64 {
    GridField::axpy(1.0, a, -1.0, b).unwrap().max_abs()
}

#[test]
fn spectral_estimate_agrees_with_exact_radius() {
    let cfg = LossConfig::default().with_seed(1234);
    for name in PROBLEM_NAMES {
        for j in [2, 3] {
            let s = spectral_check(&ProblemSpec::by_name(name).unwrap(), j, &cfg, 20).unwrap();
            assert!(s.gap() <= 0.03, "{name} J={j}: rho1 {} exact {}", s.rho1, s.rho_exact);
        }
    }
}

#[test]
fn galerkin_relation_holds_at_every_level() {
    for name in PROBLEM_NAMES {
        let net = MgNetwork::build(ModelKind::Lmg, 4, &ProblemSpec::by_name(name).unwrap()).unwrap();
        for level in 2..=3 {
            let diff = galerkin_check(&net, level).unwrap();
            assert!(diff <= 1e-12, "{name} level {level}: {diff}");
        }
    }
}

#[test]
fn prolongation_after_restriction_is_not_identity() {
    let w = nmg::network::linear_interpolation_kernel();
    let p = assemble(|x| conv_down(x, &w, StrideSpec::COARSEN).unwrap(), (7, 7)).unwrap();
    let pt = assemble(|y| conv_up(y, &w, StrideSpec::COARSEN, 7, 7).unwrap(), (3, 3)).unwrap();
    assert!(pt.max_abs_diff(&p.transpose()) < 1e-15);
    let ptp = pt.matrix() * p.matrix();
    let dev = (&ptp - DMatrix::<f64>::identity(49, 49)).amax();
    assert!(dev > 0.1, "{dev}");
    let x = random(7, 3);
    let round = conv_up(&conv_down(&x, &w, StrideSpec::COARSEN).unwrap(), &w, StrideSpec::COARSEN, 7, 7).unwrap();
    assert!(max_diff(&round, &x) > 1e-3);
}

#[test]
fn mixed_operator_matches_dense_product() {
    let problem = ProblemSpec::by_name("mixed34").unwrap();
    let a = fine_operator(&problem, 3);
    assert!(a.asymmetry() < 1e-15);
    let x = random(7, 11);
    assert!(max_diff(&problem.apply(&x).unwrap(), &a.apply(&x).unwrap()) < 1e-14);
}

#[test]
fn degree_one_smoother_is_a_matrix_polynomial() {
    let (a0, a1) = (0.6, -0.15);
    let mut net = MgNetwork::build(ModelKind::Fmg, 3, &p5()).unwrap();
    net.set_polynomial_smoother(1, vec![Kernel::delta(3, a0), Kernel::delta(3, a1)]).unwrap();
    let a = fine_operator(&p5(), 3);
    let x = random(7, 5);
    let b = random(7, 6);
    let got = net.smooth(1, &x, &b, 1).unwrap();
    let r = GridField::axpy(1.0, &b, -1.0, &a.apply(&x).unwrap()).unwrap();
    let poly = GridField::axpy(a0, &r, a1, &a.apply(&r).unwrap()).unwrap();
    let want = GridField::axpy(1.0, &x, 1.0, &poly).unwrap();
    assert!(max_diff(&got, &want) < 1e-13);
    assert!(net.set_polynomial_smoother(1, Vec::new()).is_err());
    assert!(net.set_polynomial_smoother(9, vec![Kernel::delta(3, 1.0)]).is_err());
}

#[test]
fn exact_solution_is_a_fixed_point() {
    for kind in [ModelKind::Lmg, ModelKind::S1mgS, ModelKind::S3mgS, ModelKind::Fmg] {
        let net = MgNetwork::build(kind, 3, &p5()).unwrap();
        let a = fine_operator(&p5(), 3);
        let b = random(7, 8);
        let x = exact_solve(&a, &b).unwrap();
        let out = net.vcycle(1, &x, &b).unwrap();
        assert!(max_diff(&out, &x) <= 1e-10, "{kind:?}");
    }
}

#[test]
fn lmg_inverse_approximation_is_invertible() {
    let net = MgNetwork::build(ModelKind::Lmg, 3, &p5()).unwrap();
    let n = assemble(|r| net.apply_n(r).unwrap(), (7, 7)).unwrap();
    let det = n.matrix().determinant();
    assert!(det.abs() > 1e-30, "{det}");
    assert_eq!(n.matrix().rank(1e-10), 49);
    assert!(n.asymmetry() < 1e-12);
}

#[test]
fn error_propagation_matches_dense_formula() {
    for kind in ModelKind::ALL {
        let net = MgNetwork::build(kind, 3, &p5()).unwrap();
        let a = fine_operator(&p5(), 3);
        let nm = assemble(|r| net.apply_n(r).unwrap(), (7, 7)).unwrap();
        let e = DMatrix::<f64>::identity(49, 49) - nm.matrix() * a.matrix();
        let z = random(7, 9);
        let got = net.apply_error_propagation(&z).unwrap();
        let want = &e * DVector::from_column_slice(z.values());
        let diff = got.values().iter().zip(want.iter()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{kind:?}: {diff}");
        let assembled = error_propagation_matrix(&net).unwrap();
        assert!((assembled.matrix() - &e).amax() < 1e-12);
    }
}

#[test]
fn diagonal_scaling_matches_dense_galerkin_diagonal() {
    let net = MgNetwork::build(ModelKind::Lmg, 3, &p5()).unwrap();
    let a2 = assemble(|x| net.apply_level_operator(2, x).unwrap(), (3, 3)).unwrap();
    let scale = net.levels()[1].diag_scale.as_ref().unwrap();
    for i in 0..9 {
        assert!((scale.values()[i] - 1.0 / a2.get(i, i)).abs() < 1e-14);
    }
}

#[test]
fn initial_smoother_model_converges_at_j5() {
    // The exact radius is well below one. The unnormalized estimate carries
    // a factor of up to n^(1/2k) on top of it, so only finiteness is
    // required of the estimate itself.
    let net = MgNetwork::build(ModelKind::S1mgS, 5, &p5()).unwrap();
    let rho1 = loss(&net, &LossConfig::default()).unwrap();
    assert!(rho1.is_finite());
    let small = MgNetwork::build(ModelKind::S1mgS, 4, &p5()).unwrap();
    let exact = exact_spectral_radius(&error_propagation_matrix(&small).unwrap()).unwrap();
    assert!(exact < 1.0, "{exact}");
}

#[test]
fn green_function_is_symmetric() {
    let a = fine_operator(&p5(), 3);
    let mut g = DMatrix::<f64>::zeros(49, 49);
    for col in 0..49 {
        let b = GridField::impulse(7, 7, col / 7, col % 7);
        let x = exact_solve(&a, &b).unwrap();
        for (row, v) in x.values().iter().enumerate() {
            g[(row, col)] = *v;
        }
    }
    assert!((&g - g.transpose()).amax() < 1e-12);
    assert!(g.iter().all(|&v| v >= 0.0));
}
