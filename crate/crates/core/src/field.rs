//! Structured-grid fields, square stencil kernels and the convolution
//! primitives everything else is built from.
//!
//! Fields hold interior grid points only. Every convolution pads with zeros,
//! which realizes homogeneous Dirichlet data on the eliminated boundary.
//!
//! All three convolutions are cross-correlations:
//!
//! ```text
//! out(I, J) = sum_{p,q} k(p, q) * f(c(I) + p - r, c(J) + q - r)
//! ```
//!
//! where `r = (size - 1) / 2` and `c(I) = s * I + s - 1` for stride `s`. With
//! `s = 1` this is the size-preserving convolution; with `s = 2` coarse point
//! `I` sits on fine point `2I + 1`, so a side of `2^J - 1` maps to
//! `2^(J-1) - 1`. The upward convolution is the exact transpose of the
//! strided one.

use crate::error::{Error, Result};

/// Number of interior points along one side of the grid at depth `j`.
pub fn grid_side(j: u32) -> usize {
    (1usize << j) - 1
}

/// Real-valued function on a rectangular grid of interior points, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidField(format!("empty shape {rows}x{cols}")));
        }
        if values.len() != rows * cols {
            return Err(Error::InvalidField(format!("{} values for a {rows}x{cols} field", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite value".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, values: vec![0.0; rows * cols] }
    }

    pub fn square(side: usize) -> Self {
        Self::zeros(side, side)
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, values: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        Self { rows, cols, values }
    }

    /// Unit impulse at `(i, j)`.
    pub fn impulse(rows: usize, cols: usize, i: usize, j: usize) -> Self {
        let mut f = Self::zeros(rows, cols);
        f.values[i * cols + j] = 1.0;
        f
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.values[i * self.cols + j] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, other: &GridField) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch { expected: self.shape(), found: other.shape() });
        }
        Ok(())
    }

    /// `alpha * f + beta * g`.
    pub fn axpy(alpha: f64, f: &GridField, beta: f64, g: &GridField) -> Result<GridField> {
        f.check_shape(g)?;
        let values = f.values.iter().zip(&g.values).map(|(a, b)| alpha * a + beta * b).collect();
        Ok(GridField { rows: f.rows, cols: f.cols, values })
    }

    pub fn dot(&self, other: &GridField) -> Result<f64> {
        self.check_shape(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm2(&self) -> f64 {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> GridField {
        GridField { rows: self.rows, cols: self.cols, values: self.values.iter().map(|v| alpha * v).collect() }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: f64, other: &GridField) -> Result<()> {
        self.check_shape(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &GridField) -> Result<GridField> {
        self.check_shape(other)?;
        Ok(GridField {
            rows: self.rows,
            cols: self.cols,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn fill(&mut self, value: f64) {
        self.values.fill(value);
    }

    pub fn copy_from(&mut self, other: &GridField) -> Result<()> {
        self.check_shape(other)?;
        self.values.copy_from_slice(&other.values);
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Odd-sized square kernel, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || size % 2 == 0 {
            return Err(Error::InvalidKernel(format!("size {size} is not odd")));
        }
        if weights.len() != size * size {
            return Err(Error::InvalidKernel(format!("{} weights for a {size}x{size} kernel", weights.len())));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidKernel("non-finite weight".into()));
        }
        Ok(Self { size, weights })
    }

    /// Builds a kernel from literal rows. Panics on malformed input.
    pub fn from_rows<const N: usize>(rows: [[f64; N]; N]) -> Self {
        Self::new(N, rows.iter().flatten().copied().collect()).expect("literal kernel rows")
    }

    pub fn zeros(size: usize) -> Self {
        assert!(size % 2 == 1, "kernel size must be odd");
        Self { size, weights: vec![0.0; size * size] }
    }

    /// `scale` at the center, zero elsewhere.
    pub fn delta(size: usize, scale: f64) -> Self {
        let mut k = Self::zeros(size);
        let c = size / 2;
        k.weights[c * size + c] = scale;
        k
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.weights[p * self.size + q]
    }

    pub fn center(&self) -> f64 {
        let c = self.radius();
        self.get(c, c)
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, alpha: f64) -> Kernel {
        Kernel { size: self.size, weights: self.weights.iter().map(|w| alpha * w).collect() }
    }

    pub fn rotated_180(&self) -> Kernel {
        let mut weights = self.weights.clone();
        weights.reverse();
        Kernel { size: self.size, weights }
    }

    /// Zero-pads a smaller kernel to `size`. Panics if `size` is smaller.
    pub fn padded_to(&self, size: usize) -> Kernel {
        assert!(size >= self.size && size % 2 == 1);
        let off = (size - self.size) / 2;
        let mut out = Kernel::zeros(size);
        for p in 0..self.size {
            for q in 0..self.size {
                out.weights[(p + off) * size + q + off] = self.get(p, q);
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Kernel) -> f64 {
        assert_eq!(self.size, other.size);
        self.weights.iter().zip(&other.weights).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrideSpec {
    pub rows: usize,
    pub cols: usize,
}

impl StrideSpec {
    pub const UNIT: StrideSpec = StrideSpec { rows: 1, cols: 1 };
    pub const COARSEN: StrideSpec = StrideSpec { rows: 2, cols: 2 };

    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidKernel("stride must be positive".into()));
        }
        Ok(Self { rows, cols })
    }

    /// Shape produced by a strided convolution of a `rows x cols` field.
    pub fn coarse_shape(&self, rows: usize, cols: usize) -> (usize, usize) {
        (rows / self.rows, cols / self.cols)
    }
}

/// Range of output indices `o` for which `s * o + off` lies in `[0, n)`,
/// clipped to `[0, out_len)`.
#[inline]
fn valid_range(n: usize, s: usize, off: isize, out_len: usize) -> (usize, usize) {
    let s = s as isize;
    let lo = if off < 0 { (-off + s - 1) / s } else { 0 };
    let last = n as isize - 1 - off;
    if last < 0 {
        return (0, 0);
    }
    let hi = ((last / s) + 1).min(out_len as isize);
    let lo = lo.min(hi);
    (lo as usize, hi as usize)
}

/// `dst += alpha * correlate(src, k)` sampled at stride `s`.
fn correlate_acc(src: &GridField, k: &Kernel, s: StrideSpec, alpha: f64, dst: &mut GridField) {
    if k.size == 3 && s.rows == 1 && s.cols == 1 {
        return correlate3_acc(src, k, alpha, dst);
    }
    let (sr, sc) = (s.rows, s.cols);
    let size = k.size;
    let r = k.radius() as isize;
    let (frows, fcols) = src.shape();
    let dcols = dst.cols;
    for oi in 0..dst.rows {
        let ci = (sr * oi + sr - 1) as isize;
        let drow = &mut dst.values[oi * dcols..(oi + 1) * dcols];
        for p in 0..size {
            let fi = ci + p as isize - r;
            if fi < 0 || fi >= frows as isize {
                continue;
            }
            let fi = fi as usize;
            let srow = &src.values[fi * fcols..(fi + 1) * fcols];
            for q in 0..size {
                let w = alpha * k.weights[p * size + q];
                if w == 0.0 {
                    continue;
                }
                let off = (sc - 1) as isize + q as isize - r;
                let (lo, hi) = valid_range(fcols, sc, off, dcols);
                if lo >= hi {
                    continue;
                }
                if sc == 1 {
                    let start = (lo as isize + off) as usize;
                    let src_slice = &srow[start..start + (hi - lo)];
                    for (d, v) in drow[lo..hi].iter_mut().zip(src_slice) {
                        *d += w * v;
                    }
                } else {
                    for (oj, d) in drow[lo..hi].iter_mut().enumerate() {
                        let fj = (sc * (oj + lo)) as isize + off;
                        *d += w * srow[fj as usize];
                    }
                }
            }
        }
    }
}

/// Fused 3x3, stride 1 case of [`correlate_acc`]; `src` and `dst` share a shape.
fn correlate3_acc(src: &GridField, k: &Kernel, alpha: f64, dst: &mut GridField) {
    let (rows, cols) = src.shape();
    debug_assert_eq!(dst.shape(), (rows, cols));
    let w: [f64; 9] = std::array::from_fn(|i| alpha * k.weights[i]);
    let zero = vec![0.0; cols];
    for i in 0..rows {
        let up = if i > 0 { &src.values[(i - 1) * cols..i * cols] } else { &zero[..] };
        let mid = &src.values[i * cols..(i + 1) * cols];
        let down = if i + 1 < rows { &src.values[(i + 1) * cols..(i + 2) * cols] } else { &zero[..] };
        let d = &mut dst.values[i * cols..(i + 1) * cols];
        let at = |row: &[f64], j: usize, q: usize| -> f64 {
            let c = j as isize + q as isize - 1;
            if c < 0 || c >= cols as isize {
                0.0
            } else {
                row[c as usize]
            }
        };
        let edge = |j: usize| -> f64 {
            (0..3).map(|q| w[q] * at(up, j, q) + w[3 + q] * at(mid, j, q) + w[6 + q] * at(down, j, q)).sum()
        };
        if cols < 3 {
            for (j, dj) in d.iter_mut().enumerate() {
                *dj += edge(j);
            }
            continue;
        }
        d[0] += edge(0);
        d[cols - 1] += edge(cols - 1);
        let inner = cols - 2;
        let (u0, u1, u2) = (&up[..inner], &up[1..inner + 1], &up[2..]);
        let (m0, m1, m2) = (&mid[..inner], &mid[1..inner + 1], &mid[2..]);
        let (d0, d1, d2) = (&down[..inner], &down[1..inner + 1], &down[2..]);
        for (j, out) in d[1..cols - 1].iter_mut().enumerate() {
            *out += w[0] * u0[j]
                + w[1] * u1[j]
                + w[2] * u2[j]
                + w[3] * m0[j]
                + w[4] * m1[j]
                + w[5] * m2[j]
                + w[6] * d0[j]
                + w[7] * d1[j]
                + w[8] * d2[j];
        }
    }
}

/// `dst += alpha * correlate^T(src, k)`: scatters each coarse value through
/// the kernel onto the fine grid `dst`.
fn transpose_acc(src: &GridField, k: &Kernel, s: StrideSpec, alpha: f64, dst: &mut GridField) {
    let (sr, sc) = (s.rows, s.cols);
    let size = k.size;
    let r = k.radius() as isize;
    let (crows, ccols) = src.shape();
    let fcols = dst.cols;
    for fi in 0..dst.rows {
        let frow = &mut dst.values[fi * fcols..(fi + 1) * fcols];
        for p in 0..size {
            // fi = sr * oi + sr - 1 + p - r
            let t = fi as isize - (sr as isize - 1) - p as isize + r;
            if t < 0 || t % sr as isize != 0 {
                continue;
            }
            let oi = (t / sr as isize) as usize;
            if oi >= crows {
                continue;
            }
            let crow = &src.values[oi * ccols..(oi + 1) * ccols];
            for q in 0..size {
                let w = alpha * k.weights[p * size + q];
                if w == 0.0 {
                    continue;
                }
                let off = (sc - 1) as isize + q as isize - r;
                let (lo, hi) = valid_range(fcols, sc, off, ccols);
                if lo >= hi {
                    continue;
                }
                if sc == 1 {
                    let start = (lo as isize + off) as usize;
                    for (d, v) in frow[start..start + (hi - lo)].iter_mut().zip(&crow[lo..hi]) {
                        *d += w * v;
                    }
                } else {
                    for (oj, v) in crow.iter().enumerate().take(hi).skip(lo) {
                        let fj = ((sc * oj) as isize + off) as usize;
                        frow[fj] += w * v;
                    }
                }
            }
        }
    }
}

/// `g(p, q) = sum_{I,J} coarse(I, J) * fine(c(I) + p - r, c(J) + q - r)`.
fn kernel_correlation(fine: &GridField, coarse: &GridField, s: StrideSpec, size: usize) -> Kernel {
    let (sr, sc) = (s.rows, s.cols);
    let r = (size / 2) as isize;
    let (frows, fcols) = fine.shape();
    let ccols = coarse.cols;
    let mut g = Kernel::zeros(size);
    for oi in 0..coarse.rows {
        let ci = (sr * oi + sr - 1) as isize;
        let crow = &coarse.values[oi * ccols..(oi + 1) * ccols];
        for p in 0..size {
            let fi = ci + p as isize - r;
            if fi < 0 || fi >= frows as isize {
                continue;
            }
            let fi = fi as usize;
            let frow = &fine.values[fi * fcols..(fi + 1) * fcols];
            for q in 0..size {
                let off = (sc - 1) as isize + q as isize - r;
                let (lo, hi) = valid_range(fcols, sc, off, ccols);
                let mut acc = 0.0;
                if sc == 1 {
                    let start = (lo as isize + off) as usize;
                    for (a, b) in crow[lo..hi].iter().zip(&frow[start..start + (hi - lo)]) {
                        acc += a * b;
                    }
                } else {
                    for oj in lo..hi {
                        acc += crow[oj] * frow[((sc * oj) as isize + off) as usize];
                    }
                }
                g.weights[p * size + q] += acc;
            }
        }
    }
    g
}

fn strided_shape(f: &GridField, s: StrideSpec) -> Result<(usize, usize)> {
    let (rows, cols) = s.coarse_shape(f.rows, f.cols);
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyOutput { rows: f.rows, cols: f.cols, stride: (s.rows, s.cols) });
    }
    Ok((rows, cols))
}

/// Size-preserving convolution with zero padding of width `radius`.
pub fn conv_same(f: &GridField, k: &Kernel) -> GridField {
    let mut out = GridField::zeros(f.rows, f.cols);
    correlate_acc(f, k, StrideSpec::UNIT, 1.0, &mut out);
    out
}

/// `dst += alpha * conv_same(f, k)`.
pub fn conv_same_acc(f: &GridField, k: &Kernel, alpha: f64, dst: &mut GridField) -> Result<()> {
    f.check_shape(dst)?;
    correlate_acc(f, k, StrideSpec::UNIT, alpha, dst);
    Ok(())
}

/// Strided convolution; with stride 2 this is the restriction `P`.
pub fn conv_down(f: &GridField, k: &Kernel, s: StrideSpec) -> Result<GridField> {
    let (rows, cols) = strided_shape(f, s)?;
    let mut out = GridField::zeros(rows, cols);
    correlate_acc(f, k, s, 1.0, &mut out);
    Ok(out)
}

/// `dst += alpha * conv_down(f, k, s)`.
pub fn conv_down_acc(f: &GridField, k: &Kernel, s: StrideSpec, alpha: f64, dst: &mut GridField) -> Result<()> {
    let shape = strided_shape(f, s)?;
    if dst.shape() != shape {
        return Err(Error::ShapeMismatch { expected: shape, found: dst.shape() });
    }
    correlate_acc(f, k, s, alpha, dst);
    Ok(())
}

/// Transposed strided convolution onto a `rows x cols` grid; the
/// prolongation `P^T` when the stride is 2.
pub fn conv_up(y: &GridField, k: &Kernel, s: StrideSpec, rows: usize, cols: usize) -> Result<GridField> {
    let mut out = GridField::zeros(rows, cols);
    conv_up_acc(y, k, s, 1.0, &mut out)?;
    Ok(out)
}

/// `dst += alpha * conv_up(y, k, s, dst.shape())`.
pub fn conv_up_acc(y: &GridField, k: &Kernel, s: StrideSpec, alpha: f64, dst: &mut GridField) -> Result<()> {
    let expected = s.coarse_shape(dst.rows, dst.cols);
    if expected != y.shape() || expected.0 == 0 || expected.1 == 0 {
        return Err(Error::ShapeMismatch { expected, found: y.shape() });
    }
    transpose_acc(y, k, s, alpha, dst);
    Ok(())
}

/// Reverse-mode maps of the three convolutions.
///
/// For `y = conv_down(f, k, s)` and output cotangent `ybar`:
/// `<y, ybar> = <f, conv_down_field(ybar, k, s, f.shape)> = <k, conv_down_kernel(ybar, f, s, size)>`.
pub mod adjoint {
    use super::*;

    pub fn conv_same_field(ybar: &GridField, k: &Kernel) -> GridField {
        let mut out = GridField::zeros(ybar.rows, ybar.cols);
        transpose_acc(ybar, k, StrideSpec::UNIT, 1.0, &mut out);
        out
    }

    pub fn conv_same_kernel(ybar: &GridField, f: &GridField, size: usize) -> Result<Kernel> {
        f.check_shape(ybar)?;
        Ok(kernel_correlation(f, ybar, StrideSpec::UNIT, size))
    }

    pub fn conv_down_field(ybar: &GridField, k: &Kernel, s: StrideSpec, rows: usize, cols: usize) -> Result<GridField> {
        conv_up(ybar, k, s, rows, cols)
    }

    pub fn conv_down_kernel(ybar: &GridField, f: &GridField, s: StrideSpec, size: usize) -> Result<Kernel> {
        let expected = strided_shape(f, s)?;
        if expected != ybar.shape() {
            return Err(Error::ShapeMismatch { expected, found: ybar.shape() });
        }
        Ok(kernel_correlation(f, ybar, s, size))
    }

    /// Cotangent of the coarse input of `conv_up`.
    pub fn conv_up_field(xbar: &GridField, k: &Kernel, s: StrideSpec) -> Result<GridField> {
        conv_down(xbar, k, s)
    }

    /// Cotangent of the kernel of `x = conv_up(y, k, s, ..)` given `xbar`.
    pub fn conv_up_kernel(xbar: &GridField, y: &GridField, s: StrideSpec, size: usize) -> Result<Kernel> {
        conv_down_kernel(y, xbar, s, size)
    }
}
