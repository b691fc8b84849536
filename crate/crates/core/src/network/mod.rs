//! Multigrid solvers expressed as linear convolutional networks.
//!
//! A network owns a table of kernels. Levels refer to table entries by index,
//! so serialized models reuse one trained kernel on every level instead of
//! copying it. Levels are numbered from 1 (the fine grid, side `2^J - 1`)
//! downwards; level `k` has side `2^(J-k+1) - 1`.

mod compiled;
mod cycle;
mod galerkin;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::exec::{Eval, KernelId};
use crate::field::{grid_side, GridField, Kernel, StrideSpec};
use crate::problems::ProblemSpec;

pub use compiled::CompiledCycle;
pub use cycle::{Cycle, OperatorRoute};
pub use galerkin::{coarse_stencil, compute_diag_scale, compute_diag_scale_with, GalerkinStencils};

/// Restriction kernel of linear interpolation with stride 2.
pub fn linear_interpolation_kernel() -> Kernel {
    Kernel::from_rows([[0.125, 0.25, 0.125], [0.25, 0.5, 0.25], [0.125, 0.25, 0.125]])
}

/// Damping of the baseline Jacobi smoother.
pub const JACOBI_OMEGA: f64 = 0.8;

/// Number of layers of the fixed-size models (U-Net, fMG), counting the
/// coarsest block.
pub const FIXED_LAYERS: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelKind {
    Lmg,
    S1mgRs,
    S1mgS,
    S3mgS,
    Unet,
    Fmg,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] =
        [ModelKind::Lmg, ModelKind::S1mgRs, ModelKind::S1mgS, ModelKind::S3mgS, ModelKind::Unet, ModelKind::Fmg];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lmg => "lmg",
            ModelKind::S1mgRs => "s1mg_rs",
            ModelKind::S1mgS => "s1mg_s",
            ModelKind::S3mgS => "s3mg_s",
            ModelKind::Unet => "unet",
            ModelKind::Fmg => "fmg",
        }
    }

    /// Column label used in tables.
    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Lmg => "LMG",
            ModelKind::S1mgRs => "s1MG(rs)",
            ModelKind::S1mgS => "s1MG(s)",
            ModelKind::S3mgS => "s3MG(s)",
            ModelKind::Unet => "U-Net",
            ModelKind::Fmg => "fMG",
        }
    }

    pub fn is_trainable(self) -> bool {
        self != ModelKind::Lmg
    }

    /// Whether deeper grids get more layers by reusing trained kernels.
    pub fn is_serialized(self) -> bool {
        matches!(self, ModelKind::Lmg | ModelKind::S1mgRs | ModelKind::S1mgS | ModelKind::S3mgS)
    }

    /// Whether each smoothing step is rescaled by the inverse diagonal of the
    /// level operator.
    pub fn uses_diag_scale(self) -> bool {
        matches!(self, ModelKind::Lmg | ModelKind::S1mgS | ModelKind::S3mgS)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        ModelKind::ALL.into_iter().find(|k| k.name() == lower || k.label().to_ascii_lowercase() == lower).ok_or_else(
            || {
                Error::InvalidModel(format!(
                    "unknown model '{s}', expected one of {}",
                    ModelKind::ALL.map(|k| k.name()).join(", ")
                ))
            },
        )
    }
}

/// Per-level parameters of one two-grid layer.
#[derive(Clone, Debug)]
pub struct LevelParams {
    pub restriction: KernelId,
    /// Polynomial smoother kernels; degree is `smoothers.len() - 1`.
    pub smoothers: Vec<KernelId>,
    pub stride: StrideSpec,
    /// Inverse diagonal of the level operator.
    pub diag_scale: Option<GridField>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoarseSolver {
    /// Division by the 1x1 coarsest operator.
    ExactScalar,
    /// Two stride-1 convolutions.
    ConvPair { first: KernelId, second: KernelId },
}

#[derive(Clone, Debug)]
pub struct MgNetwork {
    kind: ModelKind,
    problem: ProblemSpec,
    depth: u32,
    kernels: Vec<Kernel>,
    names: Vec<String>,
    trainable: Vec<bool>,
    levels: Vec<LevelParams>,
    coarse: CoarseSolver,
    pre_sweeps: usize,
    post_sweeps: usize,
}

struct TableBuilder {
    kernels: Vec<Kernel>,
    names: Vec<String>,
    trainable: Vec<bool>,
}

impl TableBuilder {
    fn new() -> Self {
        Self { kernels: Vec::new(), names: Vec::new(), trainable: Vec::new() }
    }

    fn add(&mut self, name: impl Into<String>, kernel: Kernel, trainable: bool) -> KernelId {
        self.kernels.push(kernel);
        self.names.push(name.into());
        self.trainable.push(trainable);
        self.kernels.len() - 1
    }
}

fn initial_table(kind: ModelKind) -> TableBuilder {
    let mut t = TableBuilder::new();
    let lin = linear_interpolation_kernel();
    match kind {
        ModelKind::Lmg => {
            t.add("w", lin, false);
            t.add("w_tilde", Kernel::delta(3, JACOBI_OMEGA), false);
        }
        ModelKind::S1mgRs => {
            t.add("w", lin.clone(), true);
            t.add("w_tilde", lin, true);
        }
        ModelKind::S1mgS => {
            t.add("w", lin.clone(), false);
            t.add("w_tilde", lin, true);
        }
        ModelKind::S3mgS => {
            t.add("w", lin.clone(), false);
            for i in 1..=3 {
                t.add(format!("w_tilde_{i}"), lin.clone(), true);
            }
        }
        ModelKind::Unet => {
            for i in 1..FIXED_LAYERS {
                t.add(format!("w_{i}"), lin.clone(), true);
            }
            for i in 1..=FIXED_LAYERS {
                t.add(format!("w_tilde_{i}"), Kernel::delta(3, 1.0), true);
            }
        }
        ModelKind::Fmg => {
            for i in 1..FIXED_LAYERS {
                t.add(format!("w_{i}"), lin.clone(), true);
            }
            for i in 1..FIXED_LAYERS {
                t.add(format!("w_tilde_{i}"), lin.clone(), true);
            }
            t.add("coarse_1", lin.clone(), true);
            t.add("coarse_2", lin, true);
        }
    }
    t
}

impl MgNetwork {
    /// Builds an untrained model of the given kind for a `(2^J - 1)^2` grid.
    pub fn build(kind: ModelKind, depth: u32, problem: &ProblemSpec) -> Result<Self> {
        if depth < 2 {
            return Err(Error::InvalidModel(format!("depth J must be at least 2, got {depth}")));
        }
        if depth > 20 {
            return Err(Error::InvalidModel(format!("depth J = {depth} is out of range")));
        }
        let t = initial_table(kind);
        let mut net = MgNetwork {
            kind,
            problem: problem.clone(),
            depth,
            kernels: t.kernels,
            names: t.names,
            trainable: t.trainable,
            levels: Vec::new(),
            coarse: CoarseSolver::ExactScalar,
            pre_sweeps: 0,
            post_sweeps: 0,
        };
        net.lay_out(depth)?;
        Ok(net)
    }

    /// Arranges levels for `depth` following the kind's sharing rule and
    /// recomputes diagonal scalings.
    fn lay_out(&mut self, depth: u32) -> Result<()> {
        self.depth = depth;
        let d = depth as usize;
        let id = |name: &str| self.names.iter().position(|n| n == name).expect("kernel name");
        let level = |restriction, smoothers| LevelParams {
            restriction,
            smoothers,
            stride: StrideSpec::COARSEN,
            diag_scale: None,
        };
        let (levels, coarse, sweeps) = match self.kind {
            ModelKind::Lmg | ModelKind::S1mgRs | ModelKind::S1mgS => {
                let w = id("w");
                let s = id("w_tilde");
                ((0..d - 1).map(|_| level(w, vec![s])).collect(), CoarseSolver::ExactScalar, 2)
            }
            ModelKind::S3mgS => {
                let w = id("w");
                let cyc = [id("w_tilde_1"), id("w_tilde_2"), id("w_tilde_3")];
                ((0..d - 1).map(|l| level(w, vec![cyc[l % 3]])).collect(), CoarseSolver::ExactScalar, 2)
            }
            ModelKind::Unet => {
                let n = (d - 1).min(FIXED_LAYERS - 1);
                let levels = (1..=n).map(|l| level(id(&format!("w_{l}")), vec![id(&format!("w_tilde_{l}"))])).collect();
                let bottom = id(&format!("w_tilde_{FIXED_LAYERS}"));
                (levels, CoarseSolver::ConvPair { first: bottom, second: bottom }, 0)
            }
            ModelKind::Fmg => {
                let n = (d - 1).min(FIXED_LAYERS - 1);
                let levels = (1..=n).map(|l| level(id(&format!("w_{l}")), vec![id(&format!("w_tilde_{l}"))])).collect();
                (levels, CoarseSolver::ConvPair { first: id("coarse_1"), second: id("coarse_2") }, 2)
            }
        };
        self.levels = levels;
        self.coarse = coarse;
        self.pre_sweeps = sweeps;
        self.post_sweeps = sweeps;
        self.refresh_diag_scale()
    }

    /// Recomputes the per-level inverse diagonals for kinds that use them.
    pub fn refresh_diag_scale(&mut self) -> Result<()> {
        for lv in &mut self.levels {
            lv.diag_scale = None;
        }
        if !self.kind.uses_diag_scale() {
            return Ok(());
        }
        let stencils = GalerkinStencils::new(self)?;
        let scales = (1..=self.levels.len())
            .map(|level| compute_diag_scale_with(self, level, OperatorRoute::Stencil(&stencils)))
            .collect::<Result<Vec<_>>>()?;
        for (lv, s) in self.levels.iter_mut().zip(scales) {
            lv.diag_scale = Some(s);
        }
        Ok(())
    }

    /// Extends a serialized model to a deeper grid. Trained kernels are
    /// reused as they are.
    pub fn serialize_to_depth(&self, depth: u32) -> Result<Self> {
        if !self.kind.is_serialized() {
            return Err(Error::InvalidModel(format!(
                "{} has a fixed number of layers and cannot be serialized",
                self.kind.label()
            )));
        }
        if depth < self.depth {
            return Err(Error::InvalidModel(format!("cannot serialize from J = {} down to J = {depth}", self.depth)));
        }
        self.at_depth(depth)
    }

    /// Same kernels arranged for another grid depth. For fixed-size kinds
    /// the layers stay the same and only the grid changes.
    pub fn at_depth(&self, depth: u32) -> Result<Self> {
        if depth < 2 {
            return Err(Error::InvalidModel(format!("depth J must be at least 2, got {depth}")));
        }
        let mut net = self.clone();
        net.lay_out(depth)?;
        Ok(net)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn problem(&self) -> &ProblemSpec {
        &self.problem
    }

    /// The `J` of the fine grid.
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn fine_side(&self) -> usize {
        grid_side(self.depth)
    }

    /// Side of the grid at 1-based `level`; `levels().len() + 1` is the
    /// coarsest grid.
    pub fn level_side(&self, level: usize) -> usize {
        grid_side(self.depth + 1 - level as u32)
    }

    pub fn levels(&self) -> &[LevelParams] {
        &self.levels
    }

    pub fn coarse(&self) -> CoarseSolver {
        self.coarse
    }

    pub fn pre_sweeps(&self) -> usize {
        self.pre_sweeps
    }

    pub fn post_sweeps(&self) -> usize {
        self.post_sweeps
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn kernel_names(&self) -> &[String] {
        &self.names
    }

    pub fn kernel_id(&self, name: &str) -> Option<KernelId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn is_trainable(&self, id: KernelId) -> bool {
        self.trainable[id]
    }

    pub fn trainable_ids(&self) -> Vec<KernelId> {
        (0..self.kernels.len()).filter(|&i| self.trainable[i]).collect()
    }

    /// Whether any restriction kernel is trainable; the Galerkin operators
    /// then depend on trainable parameters.
    pub fn restriction_trainable(&self) -> bool {
        self.levels.iter().any(|lv| self.trainable[lv.restriction])
    }

    /// Replaces a table entry. Diagonal scalings are refreshed when a
    /// restriction changes.
    pub fn set_kernel(&mut self, id: KernelId, kernel: Kernel) -> Result<()> {
        let old = self.kernels.get(id).ok_or_else(|| Error::InvalidModel(format!("no kernel with id {id}")))?;
        if old.size() != kernel.size() {
            return Err(Error::InvalidKernel(format!(
                "kernel '{}' must be {n}x{n}, got {m}x{m}",
                self.names[id],
                n = old.size(),
                m = kernel.size()
            )));
        }
        self.kernels[id] = kernel;
        if self.levels.iter().any(|lv| lv.restriction == id) && self.kind.uses_diag_scale() {
            self.refresh_diag_scale()?;
        }
        Ok(())
    }

    /// Replaces the smoother of `level` (1 = finest) by the polynomial
    /// `x += D (k_0 + k_1 A + ... + k_d A^d) (b - A x)`. The kernels are
    /// appended to the table as fixed entries. [`MgNetwork::at_depth`]
    /// restores the kind's own smoothers.
    pub fn set_polynomial_smoother(&mut self, level: usize, kernels: Vec<Kernel>) -> Result<()> {
        self.check_level(level, self.levels.len())?;
        if kernels.is_empty() {
            return Err(Error::InvalidModel("a polynomial smoother needs at least one kernel".into()));
        }
        let mut ids = Vec::with_capacity(kernels.len());
        for (i, k) in kernels.into_iter().enumerate() {
            self.kernels.push(k);
            self.names.push(format!("poly_{level}_{i}"));
            self.trainable.push(false);
            ids.push(self.kernels.len() - 1);
        }
        self.levels[level - 1].smoothers = ids;
        Ok(())
    }

    /// Updates trainable kernels in place without refreshing diagonals;
    /// for the optimizer, whose models never train a diagonally scaled
    /// restriction.
    pub(crate) fn kernels_mut(&mut self) -> &mut [Kernel] {
        &mut self.kernels
    }

    pub fn cycle(&self) -> Cycle<'_> {
        Cycle::new(self, OperatorRoute::Recursive)
    }

    fn check_fine(&self, f: &GridField) -> Result<()> {
        let n = self.fine_side();
        if f.shape() != (n, n) {
            return Err(Error::ShapeMismatch { expected: (n, n), found: f.shape() });
        }
        Ok(())
    }

    fn check_level(&self, level: usize, max: usize) -> Result<usize> {
        if level == 0 || level > max {
            return Err(Error::LevelOutOfRange { level, levels: max });
        }
        Ok(self.level_side(level))
    }

    /// `A_k x` through the chain of transposed convolutions, the fine
    /// operator and the chain of strided convolutions.
    pub fn apply_level_operator(&self, level: usize, x: &GridField) -> Result<GridField> {
        let n = self.check_level(level, self.levels.len() + 1)?;
        if x.shape() != (n, n) {
            return Err(Error::ShapeMismatch { expected: (n, n), found: x.shape() });
        }
        let mut ev = Eval::new(&self.kernels);
        Ok(self.cycle().level_op(&mut ev, level - 1, x))
    }

    /// `sweeps` rounds of polynomial smoothing at `level`.
    pub fn smooth(&self, level: usize, x: &GridField, b: &GridField, sweeps: usize) -> Result<GridField> {
        let n = self.check_level(level, self.levels.len())?;
        for f in [x, b] {
            if f.shape() != (n, n) {
                return Err(Error::ShapeMismatch { expected: (n, n), found: f.shape() });
            }
        }
        let mut ev = Eval::new(&self.kernels);
        Ok(self.cycle().smooth(&mut ev, level - 1, Some(x.clone()), b, sweeps).unwrap_or_else(|| x.clone()))
    }

    /// One V-cycle at `level` starting from `x`.
    pub fn vcycle(&self, level: usize, x: &GridField, b: &GridField) -> Result<GridField> {
        let n = self.check_level(level, self.levels.len())?;
        for f in [x, b] {
            if f.shape() != (n, n) {
                return Err(Error::ShapeMismatch { expected: (n, n), found: f.shape() });
            }
        }
        let mut ev = Eval::new(&self.kernels);
        let cycle = self.cycle();
        let coarse = cycle.coarse_scalar(&mut ev);
        Ok(cycle.vcycle(&mut ev, level - 1, Some(x.clone()), b, coarse.as_ref()))
    }

    /// The approximate inverse `N` applied to `r`.
    pub fn apply_n(&self, r: &GridField) -> Result<GridField> {
        self.check_fine(r)?;
        let mut ev = Eval::new(&self.kernels);
        Ok(self.cycle().apply_n(&mut ev, r))
    }

    /// `(I - N A) z`.
    pub fn apply_error_propagation(&self, z: &GridField) -> Result<GridField> {
        self.check_fine(z)?;
        let mut ev = Eval::new(&self.kernels);
        Ok(self.cycle().error_propagation(&mut ev, z))
    }

    /// In-place evaluator for repeated application on large grids, when the
    /// model admits one.
    pub fn compile(&self) -> Result<CompiledCycle> {
        CompiledCycle::new(self)
    }
}

/// Free-function form of [`MgNetwork::build`].
pub fn build_model(kind: ModelKind, depth: u32, problem: &ProblemSpec) -> Result<MgNetwork> {
    MgNetwork::build(kind, depth, problem)
}

#[cfg(test)]
mod tests;
