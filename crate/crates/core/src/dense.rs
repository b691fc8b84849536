//! Brute-force linear algebra on small grids.
//!
//! Linear maps are assembled column by column from unit vectors. Sizes are
//! capped so that nothing here is ever used on a production grid.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::GridField;

/// Largest dimension accepted: a `(2^4 - 1)^2` grid.
pub const ORACLE_CAP: usize = 225;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    input_shape: (usize, usize),
    output_shape: (usize, usize),
    matrix: DMatrix<f64>,
}

fn check_cap(n: usize) -> Result<()> {
    if n > ORACLE_CAP {
        return Err(Error::OracleCap { cap: ORACLE_CAP, requested: n });
    }
    Ok(())
}

/// Matrix of a linear map on fields of `shape`. Column `j` is the image of
/// the `j`-th unit vector in row-major order.
pub fn assemble(apply: impl Fn(&GridField) -> GridField, shape: (usize, usize)) -> Result<DenseOperator> {
    let (rows, cols) = shape;
    let n = rows * cols;
    check_cap(n)?;
    let mut columns = Vec::with_capacity(n);
    let mut output_shape = (0, 0);
    for j in 0..n {
        let y = apply(&GridField::impulse(rows, cols, j / cols, j % cols));
        check_cap(y.len())?;
        if j == 0 {
            output_shape = y.shape();
        } else if y.shape() != output_shape {
            return Err(Error::ShapeMismatch { expected: output_shape, found: y.shape() });
        }
        columns.push(DVector::from_vec(y.into_values()));
    }
    Ok(DenseOperator { input_shape: shape, output_shape, matrix: DMatrix::from_columns(&columns) })
}

impl DenseOperator {
    /// Wraps a square matrix acting on vectors viewed as `1 x n` fields.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        check_cap(matrix.nrows().max(matrix.ncols()))?;
        Ok(Self { input_shape: (1, matrix.ncols()), output_shape: (1, matrix.nrows()), matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.output_shape
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[(i, j)]
    }

    pub fn apply(&self, x: &GridField) -> Result<GridField> {
        if x.shape() != self.input_shape {
            return Err(Error::ShapeMismatch { expected: self.input_shape, found: x.shape() });
        }
        let y = &self.matrix * DVector::from_column_slice(x.values());
        GridField::new(self.output_shape.0, self.output_shape.1, y.as_slice().to_vec())
    }

    pub fn transpose(&self) -> DenseOperator {
        DenseOperator {
            input_shape: self.output_shape,
            output_shape: self.input_shape,
            matrix: self.matrix.transpose(),
        }
    }

    /// Largest absolute entry of `self - other`.
    pub fn max_abs_diff(&self, other: &DenseOperator) -> f64 {
        (&self.matrix - &other.matrix).amax()
    }

    /// Largest absolute entry of `self - self^T`.
    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }

    fn require_square(&self) -> Result<()> {
        if self.matrix.nrows() != self.matrix.ncols() {
            return Err(Error::ShapeMismatch {
                expected: (self.matrix.ncols(), self.matrix.ncols()),
                found: (self.matrix.nrows(), self.matrix.ncols()),
            });
        }
        Ok(())
    }
}

/// Eigenvalue moduli, largest first, via Hessenberg reduction and shifted QR.
pub fn eigenvalue_moduli(op: &DenseOperator) -> Result<Vec<f64>> {
    op.require_square()?;
    let schur = Schur::try_new(op.matrix.clone(), 1e-15, 100_000).ok_or(Error::NoConvergence)?;
    let mut moduli: Vec<f64> = schur.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    Ok(moduli)
}

/// `max |lambda|` over the spectrum.
pub fn exact_spectral_radius(op: &DenseOperator) -> Result<f64> {
    Ok(eigenvalue_moduli(op)?.first().copied().unwrap_or(0.0))
}

/// Solves `A x = b` with partial pivoting.
pub fn exact_solve(op: &DenseOperator, b: &GridField) -> Result<GridField> {
    op.require_square()?;
    if b.shape() != op.output_shape {
        return Err(Error::ShapeMismatch { expected: op.output_shape, found: b.shape() });
    }
    let rhs = DVector::from_column_slice(b.values());
    let x = op.matrix.clone().lu().solve(&rhs).ok_or(Error::Singular)?;
    let residual = (&op.matrix * &x - &rhs).norm();
    if (residual.is_nan() || residual > 1e-10 * rhs.norm().max(f64::MIN_POSITIVE)) && rhs.norm() > 0.0 {
        return Err(Error::Singular);
    }
    GridField::new(op.input_shape.0, op.input_shape.1, x.as_slice().to_vec())
}
