use super::*;
use crate::field::{conv_down, conv_up};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn p5() -> ProblemSpec {
    ProblemSpec::by_name("p5").unwrap()
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> GridField {
    GridField::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0))
}

/// Columns of a linear map on `n x n` fields, as a dense matrix.
fn dense(n: usize, f: impl Fn(&GridField) -> GridField) -> Vec<Vec<f64>> {
    (0..n * n).map(|c| f(&GridField::impulse(n, n, c / n, c % n)).into_values()).collect()
}

#[test]
fn layer_counts_follow_kind() {
    let p = p5();
    for j in 2..=8 {
        for kind in [ModelKind::Lmg, ModelKind::S1mgRs, ModelKind::S1mgS, ModelKind::S3mgS] {
            let net = MgNetwork::build(kind, j, &p).unwrap();
            assert_eq!(net.levels().len(), j as usize - 1);
            assert_eq!(net.level_side(net.levels().len() + 1), 1);
        }
        let unet = MgNetwork::build(ModelKind::Unet, j, &p).unwrap();
        assert_eq!(unet.levels().len(), (j as usize - 1).min(4));
        assert_eq!(unet.pre_sweeps(), 0);
        let fmg = MgNetwork::build(ModelKind::Fmg, j, &p).unwrap();
        assert_eq!(fmg.levels().len(), (j as usize - 1).min(4));
        assert_eq!(fmg.kernels().len(), 10);
    }
    assert!(MgNetwork::build(ModelKind::Lmg, 1, &p).is_err());
}

#[test]
fn s3_assigns_smoothers_cyclically() {
    let net = MgNetwork::build(ModelKind::S3mgS, 7, &p5()).unwrap();
    let names: Vec<&str> = net.levels().iter().map(|lv| net.kernel_names()[lv.smoothers[0]].as_str()).collect();
    assert_eq!(names, ["w_tilde_1", "w_tilde_2", "w_tilde_3", "w_tilde_1", "w_tilde_2", "w_tilde_3"]);
}

#[test]
fn level_operator_matches_dense_galerkin_product() {
    let net = MgNetwork::build(ModelKind::Lmg, 3, &p5()).unwrap();
    let w = &net.kernels()[0];
    // Level 2 is 3x3: A_2 = P A_1 P^T.
    let a2 = dense(3, |e| {
        let up = conv_up(e, w, StrideSpec::COARSEN, 7, 7).unwrap();
        conv_down(&net.problem().apply(&up).unwrap(), w, StrideSpec::COARSEN).unwrap()
    });
    let op = dense(3, |e| net.apply_level_operator(2, e).unwrap());
    for (a, b) in a2.iter().flatten().zip(op.iter().flatten()) {
        assert!((a - b).abs() < 1e-14);
    }
    // symmetric
    #[allow(clippy::needless_range_loop)]
    for i in 0..9 {
        for j in 0..9 {
            assert!((op[i][j] - op[j][i]).abs() < 1e-14);
        }
    }
}

#[test]
fn galerkin_stencils_reproduce_recursive_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for name in crate::problems::PROBLEM_NAMES {
        let net = MgNetwork::build(ModelKind::Lmg, 5, &ProblemSpec::by_name(name).unwrap()).unwrap();
        let stencils = GalerkinStencils::new(&net).unwrap();
        let fast = Cycle::new(&net, OperatorRoute::Stencil(&stencils));
        for level in 1..=5 {
            let n = net.level_side(level);
            let x = random_field(&mut rng, n);
            let mut ev = Eval::new(net.kernels());
            let a = net.cycle().level_op(&mut ev, level - 1, &x);
            let b = fast.level_op(&mut ev, level - 1, &x);
            let diff = GridField::axpy(1.0, &a, -1.0, &b).unwrap().max_abs();
            assert!(diff < 1e-13, "{name} level {level}: {diff}");
        }
    }
}

#[test]
fn coarse_stencil_of_five_point_laplacian_is_nine_point() {
    let s = coarse_stencil(&p5().stencil, &linear_interpolation_kernel(), StrideSpec::COARSEN).unwrap();
    assert_eq!(s.size(), 3);
    assert!((s.center() - 0.1875).abs() < 1e-15, "{s:?}");
    assert!(s.sum().abs() < 1e-15);
    assert_eq!(s, s.rotated_180());
}

#[test]
fn coarse_stencil_rejects_wide_restriction() {
    let wide = Kernel::delta(5, 1.0);
    assert!(coarse_stencil(&p5().stencil, &wide, StrideSpec::COARSEN).is_err());
}

#[test]
fn comb_probing_matches_exhaustive_diagonal() {
    let p9 = ProblemSpec::by_name("p9").unwrap();
    let net = MgNetwork::build(ModelKind::S1mgS, 4, &p9).unwrap();
    for level in 1..=4 {
        let inv = compute_diag_scale(&net, level).unwrap();
        let n = net.level_side(level);
        for i in 0..n {
            for j in 0..n {
                let y = net.apply_level_operator(level, &GridField::impulse(n, n, i, j)).unwrap();
                assert!((inv.get(i, j) * y.get(i, j) - 1.0).abs() < 1e-13);
            }
        }
    }
    assert!(compute_diag_scale(&net, 5).is_err());
}

#[test]
fn negative_diagonal_is_reported() {
    let mut net = MgNetwork::build(ModelKind::Lmg, 3, &p5()).unwrap();
    let err = net.set_kernel(0, Kernel::zeros(3)).unwrap_err();
    assert!(matches!(err, Error::NonPositiveDiagonal { level: 2, .. }), "{err}");
}

#[test]
fn lmg_smoothing_is_damped_jacobi() {
    let net = MgNetwork::build(ModelKind::Lmg, 4, &p5()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_field(&mut rng, 15);
    let b = random_field(&mut rng, 15);
    let got = net.smooth(1, &x, &b, 1).unwrap();
    let ax = net.problem().apply(&x).unwrap();
    // diag(A_1) = 1 for the preconditioned operator
    let want = GridField::from_fn(15, 15, |i, j| x.get(i, j) + 0.8 * (b.get(i, j) - ax.get(i, j)));
    assert!(GridField::axpy(1.0, &got, -1.0, &want).unwrap().max_abs() < 1e-14);

    let level2 = net.smooth(2, &GridField::square(7), &GridField::constant(7, 7, 1.0), 1).unwrap();
    let d = 1.0 / net.levels()[1].diag_scale.as_ref().unwrap().get(3, 3);
    assert!((level2.get(3, 3) - 0.8 / d).abs() < 1e-14);
}

#[test]
fn exact_solution_is_a_fixed_point() {
    let net = MgNetwork::build(ModelKind::Lmg, 4, &p5()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u = random_field(&mut rng, 15);
    let b = net.problem().apply(&u).unwrap();
    let v = net.vcycle(1, &u, &b).unwrap();
    assert!(GridField::axpy(1.0, &u, -1.0, &v).unwrap().max_abs() < 1e-12);
}

#[test]
fn two_level_network_coarse_solve_is_exact() {
    // J=2: one 3x3 level over a 1x1 coarse grid. Without smoothing the
    // coarse correction alone makes I - N A a projection.
    let mut net = MgNetwork::build(ModelKind::Lmg, 2, &p5()).unwrap();
    net.pre_sweeps = 0;
    net.post_sweeps = 0;
    let e = GridField::constant(3, 3, 1.0);
    let once = net.apply_error_propagation(&e).unwrap();
    let twice = net.apply_error_propagation(&once).unwrap();
    assert!(GridField::axpy(1.0, &once, -1.0, &twice).unwrap().max_abs() < 1e-14);
}

#[test]
fn vcycle_reduces_error() {
    let net = MgNetwork::build(ModelKind::Lmg, 6, &p5()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut z = random_field(&mut rng, 63);
    let start = z.norm2();
    for _ in 0..5 {
        z = net.apply_error_propagation(&z).unwrap();
    }
    assert!(z.norm2() < 0.01 * start);
}

#[test]
fn compiled_cycle_matches_generic_cycle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (kind, name) in [
        (ModelKind::Lmg, "p5"),
        (ModelKind::Lmg, "pm"),
        (ModelKind::S1mgRs, "p9"),
        (ModelKind::S1mgS, "aniso10"),
        (ModelKind::S3mgS, "mixed34"),
        (ModelKind::Fmg, "p5"),
    ] {
        let mut net = MgNetwork::build(kind, 6, &ProblemSpec::by_name(name).unwrap()).unwrap();
        for id in net.trainable_ids() {
            let k = net.kernels()[id].clone();
            let w: Vec<f64> = k.weights().iter().map(|v| v * rng.random_range(0.8..1.2)).collect();
            net.set_kernel(id, Kernel::new(k.size(), w).unwrap()).unwrap();
        }
        let mut compiled = net.compile().unwrap();
        let z = random_field(&mut rng, 63);
        let generic = net.apply_error_propagation(&z).unwrap();
        let mut fast = z.clone();
        compiled.error_propagation_in_place(&mut fast).unwrap();
        let diff = GridField::axpy(1.0, &generic, -1.0, &fast).unwrap().max_abs();
        assert!(diff < 1e-12 * generic.max_abs().max(1.0), "{kind}/{name}: {diff}");
        let n_generic = net.apply_n(&z).unwrap();
        let n_fast = compiled.apply_n(&z).unwrap();
        assert!(GridField::axpy(1.0, &n_generic, -1.0, &n_fast).unwrap().max_abs() < 1e-12 * n_generic.max_abs());
    }
    let unet = MgNetwork::build(ModelKind::Unet, 5, &p5()).unwrap();
    assert!(unet.compile().is_err());
}

#[test]
fn serialization_reuses_kernels() {
    let mut net = MgNetwork::build(ModelKind::S1mgS, 5, &p5()).unwrap();
    let id = net.kernel_id("w_tilde").unwrap();
    net.set_kernel(id, Kernel::delta(3, 0.7)).unwrap();
    let deep = net.serialize_to_depth(9).unwrap();
    assert_eq!(deep.levels().len(), 8);
    assert!(deep.levels().iter().all(|lv| lv.smoothers == vec![id]));
    assert_eq!(deep.kernels()[id], Kernel::delta(3, 0.7));
    assert!(net.serialize_to_depth(4).is_err());
    let unet = MgNetwork::build(ModelKind::Unet, 5, &p5()).unwrap();
    assert!(unet.serialize_to_depth(7).is_err());
    assert_eq!(unet.at_depth(7).unwrap().levels().len(), 4);
}

#[test]
fn unet_initialization_is_plain_skip_sum() {
    // With identity smoothers, each block adds its inner result to the skip.
    let net = MgNetwork::build(ModelKind::Unet, 2, &p5()).unwrap();
    let x = GridField::impulse(3, 3, 1, 1);
    let y = net.apply_n(&x).unwrap();
    // bottom: 0.5 -> 0.5 + 0.5; up: 1.0 * w; plus skip.
    assert!((y.get(1, 1) - (1.0 + 0.5 * 1.0)).abs() < 1e-15);
    assert!((y.get(0, 0) - 0.125).abs() < 1e-15);
}

#[test]
fn set_kernel_validates_size() {
    let mut net = MgNetwork::build(ModelKind::S1mgS, 3, &p5()).unwrap();
    assert!(net.set_kernel(1, Kernel::delta(5, 1.0)).is_err());
    assert!(net.set_kernel(99, Kernel::delta(3, 1.0)).is_err());
}
