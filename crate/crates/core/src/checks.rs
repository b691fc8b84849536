//! Cross-checks against finite differences and dense linear algebra.

use crate::dense::{assemble, exact_spectral_radius, DenseOperator};
use crate::error::Result;
use crate::field::{conv_down, conv_up, Kernel};
use crate::loss::{loss, loss_median, LossConfig};
use crate::network::{MgNetwork, ModelKind};
use crate::problems::ProblemSpec;
use crate::train::gradient;

/// Denominator floor for relative errors of vanishing entries.
pub const RELATIVE_FLOOR: f64 = 1e-8;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradcheckResult {
    pub kind: ModelKind,
    pub problem: String,
    pub entries: usize,
    pub max_rel_err: f64,
    /// Kernel name and entry index of the worst agreement.
    pub worst: Option<(String, usize)>,
}

/// Compares the reverse-mode gradient with fourth-order central differences
/// of step `h`.
pub fn gradcheck(net: &MgNetwork, cfg: &LossConfig, h: f64) -> Result<GradcheckResult> {
    let g = gradient(net, cfg)?;
    let mut result = GradcheckResult {
        kind: net.kind(),
        problem: net.problem().name().to_string(),
        entries: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for (name, gk) in &g.kernels {
        let id = net.kernel_id(name).expect("gradient names come from the table");
        let base = net.kernels()[id].clone();
        for e in 0..base.weights().len() {
            let shifted = |delta: f64| -> Result<f64> {
                let mut w = base.weights().to_vec();
                w[e] += delta;
                let mut probe = net.clone();
                probe.set_kernel(id, Kernel::new(base.size(), w)?)?;
                loss(&probe, cfg)
            };
            let fd = (8.0 * (shifted(h)? - shifted(-h)?) - (shifted(2.0 * h)? - shifted(-2.0 * h)?)) / (12.0 * h);
            let err = relative_error(gk.weights()[e], fd);
            result.entries += 1;
            if err > result.max_rel_err || result.worst.is_none() {
                result.max_rel_err = result.max_rel_err.max(err);
                result.worst = Some((name.clone(), e));
            }
        }
    }
    Ok(result)
}

/// Dense `I - N A` on the network's fine grid.
pub fn error_propagation_matrix(net: &MgNetwork) -> Result<DenseOperator> {
    let n = net.fine_side();
    assemble(|z| net.apply_error_propagation(z).expect("shape"), (n, n))
}

#[derive(Clone, Debug)]
pub struct SpectralCheck {
    pub problem: String,
    pub j: u32,
    pub rho1: f64,
    pub rho_exact: f64,
}

impl SpectralCheck {
    pub fn gap(&self) -> f64 {
        (self.rho1 - self.rho_exact).abs()
    }
}

/// Median estimate over `seeds` seeds against the exact spectral radius,
/// for the baseline model.
pub fn spectral_check(problem: &ProblemSpec, j: u32, cfg: &LossConfig, seeds: usize) -> Result<SpectralCheck> {
    let net = MgNetwork::build(ModelKind::Lmg, j, problem)?;
    let rho_exact = exact_spectral_radius(&error_propagation_matrix(&net)?)?;
    Ok(SpectralCheck { problem: problem.name().to_string(), j, rho1: loss_median(&net, cfg, seeds)?, rho_exact })
}

/// Largest entry of `A_level - P A_{level-1} P^T`, all factors assembled
/// densely from the matrix-free operations.
pub fn galerkin_check(net: &MgNetwork, level: usize) -> Result<f64> {
    assert!(level >= 2, "the Galerkin relation starts at level 2");
    let fine = net.level_side(level - 1);
    let coarse = net.level_side(level);
    let lv = &net.levels()[level - 2];
    let w = &net.kernels()[lv.restriction];
    let a_fine = assemble(|x| net.apply_level_operator(level - 1, x).expect("shape"), (fine, fine))?;
    let p = assemble(|x| conv_down(x, w, lv.stride).expect("shape"), (fine, fine))?;
    let pt = assemble(|y| conv_up(y, w, lv.stride, fine, fine).expect("shape"), (coarse, coarse))?;
    let a_coarse = assemble(|x| net.apply_level_operator(level, x).expect("shape"), (coarse, coarse))?;
    let product = p.matrix() * a_fine.matrix() * pt.matrix();
    Ok((a_coarse.matrix() - product).amax())
}
