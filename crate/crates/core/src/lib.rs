//! Matrix-free multigrid solvers built from convolutions with trainable
//! kernels, for stencil discretizations on square grids of side `2^J - 1`.

pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod dense;
pub mod error;
pub mod exec;
pub mod field;
pub mod loss;
pub mod network;
pub mod problems;
pub mod report;
pub mod train;

pub use error::{Error, Result};
pub use field::{conv_down, conv_same, conv_up, grid_side, GridField, Kernel, StrideSpec};
pub use network::{build_model, CompiledCycle, MgNetwork, ModelKind};
pub use problems::{ProblemFamily, ProblemSpec, PROBLEM_NAMES};
