//! Allocation-free V-cycle for repeated application on large grids.
//!
//! Level operators are single convolutions with their Galerkin stencils and
//! every intermediate lives in per-level buffers allocated once. The result
//! agrees with [`Cycle`](super::Cycle) up to rounding.

use crate::error::{Error, Result};
use crate::field::{conv_down_acc, conv_same_acc, conv_up_acc, GridField, Kernel, StrideSpec};
use crate::network::{CoarseSolver, GalerkinStencils, MgNetwork, ModelKind};

#[derive(Clone, Debug)]
enum Diag {
    None,
    Uniform(f64),
    Field(GridField),
}

#[derive(Clone, Debug)]
struct Level {
    op: Kernel,
    restriction: Kernel,
    stride: StrideSpec,
    smoothers: Vec<Kernel>,
    diag: Diag,
}

#[derive(Clone, Debug)]
enum Coarse {
    Scalar(f64),
    Pair(Kernel, Kernel),
}

#[derive(Clone, Debug)]
struct Buffers {
    x: GridField,
    b: GridField,
    r: GridField,
    t: GridField,
}

impl Buffers {
    fn new(n: usize) -> Self {
        Self { x: GridField::square(n), b: GridField::square(n), r: GridField::square(n), t: GridField::square(n) }
    }
}

#[derive(Clone, Debug)]
pub struct CompiledCycle {
    fine_op: Kernel,
    levels: Vec<Level>,
    coarse: Coarse,
    pre: usize,
    post: usize,
    bufs: Vec<Buffers>,
}

impl CompiledCycle {
    pub fn new(net: &MgNetwork) -> Result<Self> {
        if net.kind() == ModelKind::Unet {
            return Err(Error::InvalidModel("U-Net has no compiled form".into()));
        }
        let stencils = GalerkinStencils::new(net)?;
        let k = net.kernels();
        let levels = net
            .levels()
            .iter()
            .enumerate()
            .map(|(idx, lv)| {
                let diag = match &lv.diag_scale {
                    None => Diag::None,
                    Some(d) => {
                        let first = d.values()[0];
                        if d.values().iter().all(|&v| v == first) {
                            Diag::Uniform(first)
                        } else {
                            Diag::Field(d.clone())
                        }
                    }
                };
                Level {
                    op: stencils.level(idx).clone(),
                    restriction: k[lv.restriction].clone(),
                    stride: lv.stride,
                    smoothers: lv.smoothers.iter().map(|&s| k[s].clone()).collect(),
                    diag,
                }
            })
            .collect::<Vec<_>>();
        let coarse = match net.coarse() {
            CoarseSolver::ExactScalar => {
                let last = net.levels().len();
                if net.level_side(last + 1) != 1 {
                    return Err(Error::InvalidModel("exact coarse solve needs a 1x1 coarsest grid".into()));
                }
                Coarse::Scalar(stencils.level(last).center())
            }
            CoarseSolver::ConvPair { first, second } => Coarse::Pair(k[first].clone(), k[second].clone()),
        };
        let bufs = (1..=levels.len() + 1).map(|l| Buffers::new(net.level_side(l))).collect();
        Ok(Self {
            fine_op: net.problem().stencil.clone(),
            levels,
            coarse,
            pre: net.pre_sweeps(),
            post: net.post_sweeps(),
            bufs,
        })
    }

    pub fn fine_side(&self) -> usize {
        self.bufs[0].x.rows()
    }

    /// `N r`.
    pub fn apply_n(&mut self, r: &GridField) -> Result<GridField> {
        self.bufs[0].b.copy_from(r)?;
        self.cycle(0);
        Ok(self.bufs[0].x.clone())
    }

    /// Overwrites `z` with `(I - N A) z`.
    pub fn error_propagation_in_place(&mut self, z: &mut GridField) -> Result<()> {
        z.check_shape(&self.bufs[0].b)?;
        let b = &mut self.bufs[0].b;
        b.fill(0.0);
        conv_same_acc(z, &self.fine_op, 1.0, b)?;
        self.cycle(0);
        z.add_scaled(-1.0, &self.bufs[0].x)
    }

    fn cycle(&mut self, idx: usize) {
        if idx == self.levels.len() {
            let buf = &mut self.bufs[idx];
            match &self.coarse {
                Coarse::Scalar(a) => {
                    for (x, b) in buf.x.values_mut().iter_mut().zip(buf.b.values()) {
                        *x = b / a;
                    }
                }
                Coarse::Pair(k1, k2) => {
                    buf.t.fill(0.0);
                    conv_same_acc(&buf.b, k1, 1.0, &mut buf.t).expect("shape");
                    buf.x.fill(0.0);
                    conv_same_acc(&buf.t, k2, 1.0, &mut buf.x).expect("shape");
                }
            }
            return;
        }
        {
            let lv = &self.levels[idx];
            let (head, tail) = self.bufs.split_at_mut(idx + 1);
            let cur = &mut head[idx];
            cur.x.fill(0.0);
            smooth(lv, cur, self.pre, true);
            residual(lv, cur, self.pre == 0);
            let next = &mut tail[0];
            next.b.fill(0.0);
            conv_down_acc(&cur.r, &lv.restriction, lv.stride, 1.0, &mut next.b).expect("shape");
        }
        self.cycle(idx + 1);
        let lv = &self.levels[idx];
        let (head, tail) = self.bufs.split_at_mut(idx + 1);
        let cur = &mut head[idx];
        conv_up_acc(&tail[0].x, &lv.restriction, lv.stride, 1.0, &mut cur.x).expect("shape");
        smooth(lv, cur, self.post, false);
    }
}

/// `r = b - A x`.
fn residual(lv: &Level, buf: &mut Buffers, x_is_zero: bool) {
    buf.r.copy_from(&buf.b).expect("shape");
    if !x_is_zero {
        conv_same_acc(&buf.x, &lv.op, -1.0, &mut buf.r).expect("shape");
    }
}

fn smooth(lv: &Level, buf: &mut Buffers, sweeps: usize, x_is_zero: bool) {
    for sweep in 0..sweeps {
        residual(lv, buf, x_is_zero && sweep == 0);
        for (i, w) in lv.smoothers.iter().enumerate() {
            match &lv.diag {
                Diag::None => conv_same_acc(&buf.r, w, 1.0, &mut buf.x).expect("shape"),
                Diag::Uniform(d) => conv_same_acc(&buf.r, w, *d, &mut buf.x).expect("shape"),
                Diag::Field(d) => {
                    buf.t.fill(0.0);
                    conv_same_acc(&buf.r, w, 1.0, &mut buf.t).expect("shape");
                    for ((x, t), s) in buf.x.values_mut().iter_mut().zip(buf.t.values()).zip(d.values()) {
                        *x += t * s;
                    }
                }
            }
            if i + 1 < lv.smoothers.len() {
                buf.t.fill(0.0);
                conv_same_acc(&buf.r, &lv.op, 1.0, &mut buf.t).expect("shape");
                std::mem::swap(&mut buf.r, &mut buf.t);
            }
        }
    }
}
