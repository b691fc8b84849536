//! Execution backends for the network's linear data flow.
//!
//! The cycle code is written once against [`Exec`]. [`Eval`] computes values
//! directly; [`Tape`] records every operation so that kernel gradients and
//! input cotangents can be recovered with one reverse sweep. Every recorded
//! operation is linear in its field inputs, so the tape needs no
//! linearization points beyond the stored forward values.

use crate::field::{self, adjoint, GridField, Kernel, StrideSpec};

/// Index into a network's kernel table.
pub type KernelId = usize;

#[derive(Clone, Copy, Debug)]
pub enum KernelRef<'a> {
    /// A table entry; gradients are reported for these.
    Param(KernelId),
    /// A constant kernel such as the problem stencil.
    Fixed(&'a Kernel),
}

pub trait Exec<'a> {
    type Field: Clone;

    /// Introduces a constant field.
    fn leaf(&mut self, f: GridField) -> Self::Field;
    fn value<'s>(&'s self, f: &'s Self::Field) -> &'s GridField;
    /// Strided (or, with a unit stride, size-preserving) convolution.
    fn conv(&mut self, f: &Self::Field, k: KernelRef<'a>, s: StrideSpec) -> Self::Field;
    /// Transposed convolution onto a grid of the given shape.
    fn conv_up(&mut self, y: &Self::Field, k: KernelRef<'a>, s: StrideSpec, shape: (usize, usize)) -> Self::Field;
    /// `a * f + b * g`
    fn lincomb(&mut self, a: f64, f: &Self::Field, b: f64, g: &Self::Field) -> Self::Field;
    /// Elementwise product with a constant field.
    fn mul_fixed(&mut self, f: &Self::Field, d: &'a GridField) -> Self::Field;
    /// Elementwise quotient `f / g`.
    fn div(&mut self, f: &Self::Field, g: &Self::Field) -> Self::Field;

    fn shape(&self, f: &Self::Field) -> (usize, usize) {
        self.value(f).shape()
    }
}

/// Plain evaluation.
pub struct Eval<'a> {
    params: &'a [Kernel],
}

impl<'a> Eval<'a> {
    pub fn new(params: &'a [Kernel]) -> Self {
        Self { params }
    }

    fn kernel(&self, k: KernelRef<'a>) -> &'a Kernel {
        match k {
            KernelRef::Param(id) => &self.params[id],
            KernelRef::Fixed(k) => k,
        }
    }
}

impl<'a> Exec<'a> for Eval<'a> {
    type Field = GridField;

    fn leaf(&mut self, f: GridField) -> GridField {
        f
    }

    fn value<'s>(&'s self, f: &'s GridField) -> &'s GridField {
        f
    }

    fn conv(&mut self, f: &GridField, k: KernelRef<'a>, s: StrideSpec) -> GridField {
        field::conv_down(f, self.kernel(k), s).expect("conv shape")
    }

    fn conv_up(&mut self, y: &GridField, k: KernelRef<'a>, s: StrideSpec, shape: (usize, usize)) -> GridField {
        field::conv_up(y, self.kernel(k), s, shape.0, shape.1).expect("conv_up shape")
    }

    fn lincomb(&mut self, a: f64, f: &GridField, b: f64, g: &GridField) -> GridField {
        GridField::axpy(a, f, b, g).expect("lincomb shape")
    }

    fn mul_fixed(&mut self, f: &GridField, d: &'a GridField) -> GridField {
        f.hadamard(d).expect("mul_fixed shape")
    }

    fn div(&mut self, f: &GridField, g: &GridField) -> GridField {
        let mut out = f.clone();
        for (o, d) in out.values_mut().iter_mut().zip(g.values()) {
            *o /= d;
        }
        out
    }
}

/// Handle to a recorded value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<'a> {
    Leaf,
    Conv { src: usize, k: KernelRef<'a>, s: StrideSpec },
    ConvUp { src: usize, k: KernelRef<'a>, s: StrideSpec },
    Lincomb { a: f64, f: usize, b: f64, g: usize },
    MulFixed { src: usize, d: &'a GridField },
    Div { num: usize, den: usize },
}

struct Node<'a> {
    value: GridField,
    op: Op<'a>,
}

/// Recording executor.
pub struct Tape<'a> {
    params: &'a [Kernel],
    nodes: Vec<Node<'a>>,
}

/// Result of a reverse sweep.
pub struct Adjoints {
    bars: Vec<Option<GridField>>,
    /// Gradient per kernel-table entry; `None` where the entry was unused.
    pub kernels: Vec<Option<Kernel>>,
}

impl Adjoints {
    /// Cotangent of a recorded value, zero if it did not influence the seed.
    pub fn cotangent(&self, v: Var) -> Option<&GridField> {
        self.bars[v.0].as_ref()
    }
}

fn accumulate(slot: &mut Option<GridField>, contribution: GridField, alpha: f64) {
    match slot {
        Some(acc) => acc.add_scaled(alpha, &contribution).expect("cotangent shape"),
        None => {
            *slot = Some(if alpha == 1.0 { contribution } else { contribution.scaled(alpha) });
        }
    }
}

fn accumulate_kernel(slot: &mut Option<Kernel>, g: Kernel) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.weights_mut().iter_mut().zip(g.weights()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a [Kernel]) -> Self {
        Self { params, nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn kernel(&self, k: KernelRef<'a>) -> &'a Kernel {
        match k {
            KernelRef::Param(id) => &self.params[id],
            KernelRef::Fixed(k) => k,
        }
    }

    fn push(&mut self, value: GridField, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Propagates `seed` (the cotangent of `output`) back through the tape.
    pub fn backward(&self, output: Var, seed: GridField) -> Adjoints {
        let mut bars: Vec<Option<GridField>> = vec![None; self.nodes.len()];
        let mut kernels: Vec<Option<Kernel>> = vec![None; self.params.len()];
        assert_eq!(self.nodes[output.0].value.shape(), seed.shape(), "seed shape");
        bars[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let Some(bar) = bars[idx].take() else { continue };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => {}
                Op::Conv { src, k, s } => {
                    let input = &self.nodes[src].value;
                    let kernel = self.kernel(k);
                    let (rows, cols) = input.shape();
                    let back = adjoint::conv_down_field(&bar, kernel, s, rows, cols).expect("adjoint shape");
                    accumulate(&mut bars[src], back, 1.0);
                    if let KernelRef::Param(id) = k {
                        let g = adjoint::conv_down_kernel(&bar, input, s, kernel.size()).expect("kernel adjoint");
                        accumulate_kernel(&mut kernels[id], g);
                    }
                }
                Op::ConvUp { src, k, s } => {
                    let input = &self.nodes[src].value;
                    let kernel = self.kernel(k);
                    let back = adjoint::conv_up_field(&bar, kernel, s).expect("adjoint shape");
                    accumulate(&mut bars[src], back, 1.0);
                    if let KernelRef::Param(id) = k {
                        let g = adjoint::conv_up_kernel(&bar, input, s, kernel.size()).expect("kernel adjoint");
                        accumulate_kernel(&mut kernels[id], g);
                    }
                }
                Op::Lincomb { a, f, b, g } => {
                    if a != 0.0 {
                        accumulate(&mut bars[f], bar.clone(), a);
                    }
                    if b != 0.0 {
                        accumulate(&mut bars[g], bar.clone(), b);
                    }
                }
                Op::MulFixed { src, d } => {
                    accumulate(&mut bars[src], bar.hadamard(d).expect("diag shape"), 1.0);
                }
                Op::Div { num, den } => {
                    let n = &self.nodes[num].value;
                    let d = &self.nodes[den].value;
                    let mut num_bar = bar.clone();
                    let mut den_bar = bar.clone();
                    for i in 0..bar.len() {
                        let (y, nv, dv) = (bar.values()[i], n.values()[i], d.values()[i]);
                        num_bar.values_mut()[i] = y / dv;
                        den_bar.values_mut()[i] = -y * nv / (dv * dv);
                    }
                    accumulate(&mut bars[num], num_bar, 1.0);
                    accumulate(&mut bars[den], den_bar, 1.0);
                }
            }
            bars[idx] = Some(bar);
        }
        Adjoints { bars, kernels }
    }
}

impl<'a> Exec<'a> for Tape<'a> {
    type Field = Var;

    fn leaf(&mut self, f: GridField) -> Var {
        self.push(f, Op::Leaf)
    }

    fn value<'s>(&'s self, f: &'s Var) -> &'s GridField {
        &self.nodes[f.0].value
    }

    fn conv(&mut self, f: &Var, k: KernelRef<'a>, s: StrideSpec) -> Var {
        let value = field::conv_down(&self.nodes[f.0].value, self.kernel(k), s).expect("conv shape");
        self.push(value, Op::Conv { src: f.0, k, s })
    }

    fn conv_up(&mut self, y: &Var, k: KernelRef<'a>, s: StrideSpec, shape: (usize, usize)) -> Var {
        let value = field::conv_up(&self.nodes[y.0].value, self.kernel(k), s, shape.0, shape.1).expect("conv_up shape");
        self.push(value, Op::ConvUp { src: y.0, k, s })
    }

    fn lincomb(&mut self, a: f64, f: &Var, b: f64, g: &Var) -> Var {
        let value = GridField::axpy(a, &self.nodes[f.0].value, b, &self.nodes[g.0].value).expect("lincomb shape");
        self.push(value, Op::Lincomb { a, f: f.0, b, g: g.0 })
    }

    fn mul_fixed(&mut self, f: &Var, d: &'a GridField) -> Var {
        let value = self.nodes[f.0].value.hadamard(d).expect("mul_fixed shape");
        self.push(value, Op::MulFixed { src: f.0, d })
    }

    fn div(&mut self, f: &Var, g: &Var) -> Var {
        let mut value = self.nodes[f.0].value.clone();
        for (o, d) in value.values_mut().iter_mut().zip(self.nodes[g.0].value.values()) {
            *o /= d;
        }
        self.push(value, Op::Div { num: f.0, den: g.0 })
    }
}
