use crate::exec::{Exec, KernelRef};
use crate::field::{GridField, StrideSpec};
use crate::network::{CoarseSolver, GalerkinStencils, MgNetwork, ModelKind};

/// How `A_k x` is evaluated.
#[derive(Clone, Copy, Debug)]
pub enum OperatorRoute<'a> {
    /// Transposed convolutions up to the fine grid, the fine operator, and
    /// strided convolutions back down. Differentiable in the restrictions.
    Recursive,
    /// One convolution with the precomputed Galerkin stencil of the level.
    /// Exact, but constant with respect to the restriction kernels.
    Stencil(&'a GalerkinStencils),
}

/// The network's data flow, generic over the execution backend. Level
/// indices here are 0-based (0 is the fine grid).
pub struct Cycle<'a> {
    net: &'a MgNetwork,
    route: OperatorRoute<'a>,
}

impl<'a> Cycle<'a> {
    pub fn new(net: &'a MgNetwork, route: OperatorRoute<'a>) -> Self {
        Self { net, route }
    }

    pub fn network(&self) -> &'a MgNetwork {
        self.net
    }

    fn shape(&self, idx: usize) -> (usize, usize) {
        let n = self.net.level_side(idx + 1);
        (n, n)
    }

    /// `A_{idx+1} x`.
    pub fn level_op<E: Exec<'a>>(&self, ex: &mut E, idx: usize, x: &E::Field) -> E::Field {
        match self.route {
            OperatorRoute::Stencil(st) => ex.conv(x, KernelRef::Fixed(st.level(idx)), StrideSpec::UNIT),
            OperatorRoute::Recursive => {
                let levels = &self.net.levels;
                let mut v = x.clone();
                for l in (0..idx).rev() {
                    v = ex.conv_up(&v, KernelRef::Param(levels[l].restriction), levels[l].stride, self.shape(l));
                }
                let mut y = ex.conv(&v, KernelRef::Fixed(&self.net.problem.stencil), StrideSpec::UNIT);
                for lv in &levels[..idx] {
                    y = ex.conv(&y, KernelRef::Param(lv.restriction), lv.stride);
                }
                y
            }
        }
    }

    /// Polynomial smoothing; `None` stands for a zero iterate.
    pub fn smooth<E: Exec<'a>>(
        &self,
        ex: &mut E,
        idx: usize,
        x: Option<E::Field>,
        b: &E::Field,
        sweeps: usize,
    ) -> Option<E::Field> {
        let lv = &self.net.levels[idx];
        let mut x = x;
        for _ in 0..sweeps {
            let mut r = match &x {
                Some(x) => {
                    let ax = self.level_op(ex, idx, x);
                    ex.lincomb(1.0, b, -1.0, &ax)
                }
                None => b.clone(),
            };
            for (i, &s) in lv.smoothers.iter().enumerate() {
                let mut c = ex.conv(&r, KernelRef::Param(s), StrideSpec::UNIT);
                if let Some(d) = &lv.diag_scale {
                    c = ex.mul_fixed(&c, d);
                }
                x = Some(match x {
                    Some(x) => ex.lincomb(1.0, &x, 1.0, &c),
                    None => c,
                });
                // The last power of A would go unused.
                if i + 1 < lv.smoothers.len() {
                    r = self.level_op(ex, idx, &r);
                }
            }
        }
        x
    }

    /// The coarsest operator as a 1x1 field, for the exact coarse solve.
    pub fn coarse_scalar<E: Exec<'a>>(&self, ex: &mut E) -> Option<E::Field> {
        match self.net.coarse {
            CoarseSolver::ExactScalar => {
                let last = self.net.levels.len();
                let (n, m) = self.shape(last);
                let unit = ex.leaf(GridField::constant(n, m, 1.0));
                Some(self.level_op(ex, last, &unit))
            }
            CoarseSolver::ConvPair { .. } => None,
        }
    }

    fn coarse_solve<E: Exec<'a>>(&self, ex: &mut E, r: &E::Field, scalar: Option<&E::Field>) -> E::Field {
        match self.net.coarse {
            CoarseSolver::ExactScalar => ex.div(r, scalar.expect("coarse scalar")),
            CoarseSolver::ConvPair { first, second } => {
                let y = ex.conv(r, KernelRef::Param(first), StrideSpec::UNIT);
                ex.conv(&y, KernelRef::Param(second), StrideSpec::UNIT)
            }
        }
    }

    /// Smoothing, coarse-grid correction (recursively), smoothing.
    pub fn vcycle<E: Exec<'a>>(
        &self,
        ex: &mut E,
        idx: usize,
        x: Option<E::Field>,
        b: &E::Field,
        scalar: Option<&E::Field>,
    ) -> E::Field {
        let lv = &self.net.levels[idx];
        let x = self.smooth(ex, idx, x, b, self.net.pre_sweeps);
        let r = match &x {
            Some(x) => {
                let ax = self.level_op(ex, idx, x);
                ex.lincomb(1.0, b, -1.0, &ax)
            }
            None => b.clone(),
        };
        let rc = ex.conv(&r, KernelRef::Param(lv.restriction), lv.stride);
        let ec = if idx + 1 < self.net.levels.len() {
            self.vcycle(ex, idx + 1, None, &rc, scalar)
        } else {
            self.coarse_solve(ex, &rc, scalar)
        };
        let correction = ex.conv_up(&ec, KernelRef::Param(lv.restriction), lv.stride, self.shape(idx));
        let x = match x {
            Some(x) => ex.lincomb(1.0, &x, 1.0, &correction),
            None => correction,
        };
        self.smooth(ex, idx, Some(x), b, self.net.post_sweeps).expect("iterate")
    }

    /// U-Net block at `idx`: smoothing conv, down, inner block, up, smoothing
    /// conv, plus the skip connection from the block input.
    fn unet<E: Exec<'a>>(&self, ex: &mut E, idx: usize, x: &E::Field) -> E::Field {
        let levels = &self.net.levels;
        if idx == levels.len() {
            let CoarseSolver::ConvPair { first, second } = self.net.coarse else {
                unreachable!("U-Net bottom is a convolution pair")
            };
            let y = ex.conv(x, KernelRef::Param(first), StrideSpec::UNIT);
            let y = ex.conv(&y, KernelRef::Param(second), StrideSpec::UNIT);
            return ex.lincomb(1.0, &y, 1.0, x);
        }
        let lv = &levels[idx];
        let smoother = KernelRef::Param(lv.smoothers[0]);
        let transfer = KernelRef::Param(lv.restriction);
        let y = ex.conv(x, smoother, StrideSpec::UNIT);
        let c = ex.conv(&y, transfer, lv.stride);
        let c = self.unet(ex, idx + 1, &c);
        let u = ex.conv_up(&c, transfer, lv.stride, self.shape(idx));
        let u = ex.conv(&u, smoother, StrideSpec::UNIT);
        ex.lincomb(1.0, &u, 1.0, x)
    }

    /// `N r`: a V-cycle from a zero initial guess, or the U-Net itself.
    pub fn apply_n<E: Exec<'a>>(&self, ex: &mut E, r: &E::Field) -> E::Field {
        if self.net.kind == ModelKind::Unet {
            return self.unet(ex, 0, r);
        }
        let scalar = self.coarse_scalar(ex);
        self.vcycle(ex, 0, None, r, scalar.as_ref())
    }

    /// `z - N A z`.
    pub fn error_propagation<E: Exec<'a>>(&self, ex: &mut E, z: &E::Field) -> E::Field {
        let az = ex.conv(z, KernelRef::Fixed(&self.net.problem.stencil), StrideSpec::UNIT);
        let naz = self.apply_n(ex, &az);
        ex.lincomb(1.0, z, -1.0, &naz)
    }
}
