//! Level operators as explicit stencils, and their diagonals.
//!
//! With a restriction of radius at most `stride - 1`, prolongation from a
//! coarse grid only samples fine points inside the domain, so
//! `P A P^T` of a truncated translation-invariant operator is again a
//! truncated translation-invariant operator. Its stencil can be read off by
//! probing a small grid with one impulse.

use crate::error::{Error, Result};
use crate::exec::Eval;
use crate::field::{conv_down, conv_same, conv_up, GridField, Kernel, StrideSpec};
use crate::network::{Cycle, MgNetwork, OperatorRoute};

/// Stencils of `A_1 .. A_{L+1}`, index 0 being the fine operator.
#[derive(Clone, Debug, PartialEq)]
pub struct GalerkinStencils {
    stencils: Vec<Kernel>,
}

impl GalerkinStencils {
    pub fn new(net: &MgNetwork) -> Result<Self> {
        let mut stencils = vec![net.problem().stencil.clone()];
        for lv in net.levels() {
            let next =
                coarse_stencil(stencils.last().expect("fine stencil"), &net.kernels()[lv.restriction], lv.stride)?;
            stencils.push(next);
        }
        Ok(Self { stencils })
    }

    /// Stencil of the operator at 0-based level `idx`.
    pub fn level(&self, idx: usize) -> &Kernel {
        &self.stencils[idx]
    }

    pub fn as_slice(&self) -> &[Kernel] {
        &self.stencils
    }
}

/// Stencil of `P A P^T` for the operator with stencil `fine` and the
/// restriction `P = conv_down(., restriction, stride)`.
pub fn coarse_stencil(fine: &Kernel, restriction: &Kernel, stride: StrideSpec) -> Result<Kernel> {
    if stride.rows != stride.cols {
        return Err(Error::InvalidModel("Galerkin stencils need equal strides".into()));
    }
    let s = stride.rows;
    let rw = restriction.radius();
    if rw + 1 > s {
        return Err(Error::InvalidModel(format!(
            "restriction of radius {rw} with stride {s} gives a coarse operator that is not translation invariant"
        )));
    }
    let rc = (fine.radius() + 2 * rw) / s;
    let m = 2 * rc + 1;
    let n = s * m + s - 1;
    let e = GridField::impulse(m, m, rc, rc);
    let up = conv_up(&e, restriction, stride, n, n)?;
    let y = conv_down(&conv_same(&up, fine), restriction, stride)?;
    Ok(Kernel::new(m, y.into_values())?.rotated_180())
}

/// Radius of the level operator at 1-based `level`.
fn operator_radius(net: &MgNetwork, level: usize) -> usize {
    let mut r = net.problem().stencil.radius();
    for lv in &net.levels()[..level - 1] {
        r = (r + 2 * net.kernels()[lv.restriction].radius()) / lv.stride.rows.min(lv.stride.cols);
    }
    r
}

/// Inverse diagonal of `A_level`, computed matrix-free by probing with
/// interleaved combs.
pub fn compute_diag_scale(net: &MgNetwork, level: usize) -> Result<GridField> {
    compute_diag_scale_with(net, level, OperatorRoute::Recursive)
}

pub fn compute_diag_scale_with(net: &MgNetwork, level: usize, route: OperatorRoute<'_>) -> Result<GridField> {
    let levels = net.levels().len() + 1;
    if level == 0 || level > levels {
        return Err(Error::LevelOutOfRange { level, levels });
    }
    let n = net.level_side(level);
    // Probes further apart than the operator's reach never interact.
    let step = (2 * operator_radius(net, level) + 1).min(n);
    let cycle = Cycle::new(net, route);
    let mut ev = Eval::new(net.kernels());
    let mut diag = GridField::zeros(n, n);
    for oi in 0..step {
        for oj in 0..step {
            let comb = GridField::from_fn(n, n, |i, j| if i % step == oi && j % step == oj { 1.0 } else { 0.0 });
            let y = cycle.level_op(&mut ev, level - 1, &comb);
            for i in (oi..n).step_by(step) {
                for j in (oj..n).step_by(step) {
                    diag.set(i, j, y.get(i, j));
                }
            }
        }
    }
    let mut inv = diag;
    for v in inv.values_mut() {
        if v.is_nan() || *v <= 0.0 {
            return Err(Error::NonPositiveDiagonal { level, value: *v });
        }
        *v = 1.0 / *v;
    }
    Ok(inv)
}
