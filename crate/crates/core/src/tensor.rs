//! Dense order-ℓ tensor fields on a planar grid and their pointwise algebra.
//!
//! A field stores `height * width * 2^order` reals. Pixels are row-major and
//! each pixel owns a contiguous block of `2^order` components ordered
//! lexicographically over the multi-index `(i_1, .., i_ℓ)`, `i_k ∈ {0, 1}`,
//! with `i_1` the most significant. Index value `0` is the x (column)
//! direction, `1` the y (row) direction.
//!
//! Integrals over the grid use the rectangle rule: `spacing² · Σ`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, TdvError};

/// Spatial dimension. Fixed: planar images only.
pub const DIM: usize = 2;

/// Rectangular pixel grid with uniform spacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    spacing: f64,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        Self::with_spacing(height, width, 1.0)
    }

    pub fn with_spacing(height: usize, width: usize, spacing: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(TdvError::Parameter(format!(
                "grid must be non-empty, got {height}x{width}"
            )));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(TdvError::Parameter(format!(
                "grid spacing must be positive and finite, got {spacing}"
            )));
        }
        Ok(Grid {
            height,
            width,
            spacing,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Area element `spacing²` of the discrete integral.
    pub fn cell_area(&self) -> f64 {
        self.spacing * self.spacing
    }

    #[inline]
    pub fn pixel_index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }
}

/// Number of components of an order-`order` tensor in two dimensions.
#[inline]
pub const fn components(order: usize) -> usize {
    1 << order
}

/// Flat position of a multi-index in the lexicographic layout.
pub fn flat_index(multi: &[usize]) -> usize {
    multi.iter().fold(0, |acc, &i| {
        debug_assert!(i < DIM);
        (acc << 1) | i
    })
}

/// Inverse of [`flat_index`].
pub fn multi_index(flat: usize, order: usize) -> Vec<usize> {
    (0..order).map(|k| (flat >> (order - 1 - k)) & 1).collect()
}

/// A grid of order-ℓ tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Grid,
    order: usize,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: Grid, order: usize) -> Self {
        TensorField {
            grid,
            order,
            data: vec![0.0; grid.pixels() * components(order)],
        }
    }

    /// Every pixel carries the same tensor `block` (length `2^order`).
    pub fn constant(grid: Grid, order: usize, block: &[f64]) -> Result<Self> {
        if block.len() != components(order) {
            return Err(TdvError::Dimension(format!(
                "order-{order} block needs {} components, got {}",
                components(order),
                block.len()
            )));
        }
        let mut data = Vec::with_capacity(grid.pixels() * block.len());
        for _ in 0..grid.pixels() {
            data.extend_from_slice(block);
        }
        Self::from_data(grid, order, data)
    }

    pub fn from_data(grid: Grid, order: usize, data: Vec<f64>) -> Result<Self> {
        let expected = grid.pixels() * components(order);
        if data.len() != expected {
            return Err(TdvError::Dimension(format!(
                "expected {expected} entries for a {}x{} order-{order} field, got {}",
                grid.height,
                grid.width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(TdvError::Parameter(format!(
                "non-finite entry {} at position {pos}",
                data[pos]
            )));
        }
        Ok(TensorField { grid, order, data })
    }

    /// Builds a field from `f(row, col, flat_component)`.
    pub fn from_fn(grid: Grid, order: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let n = components(order);
        let mut data = Vec::with_capacity(grid.pixels() * n);
        for row in 0..grid.height {
            for col in 0..grid.width {
                for c in 0..n {
                    data.push(f(row, col, c));
                }
            }
        }
        TensorField { grid, order, data }
    }

    /// Scalar image from `f(row, col)`.
    pub fn scalar_fn(grid: Grid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        Self::from_fn(grid, 0, |r, c, _| f(r, c))
    }

    /// Independent standard-normal entries.
    pub fn random<R: Rng + ?Sized>(grid: Grid, order: usize, rng: &mut R) -> Self {
        let n = grid.pixels() * components(order);
        let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        TensorField { grid, order, data }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn components(&self) -> usize {
        components(self.order)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Tensor stored at pixel `(row, col)`.
    pub fn block(&self, row: usize, col: usize) -> &[f64] {
        let n = self.components();
        let p = self.grid.pixel_index(row, col);
        &self.data[p * n..(p + 1) * n]
    }

    pub fn block_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let n = self.components();
        let p = self.grid.pixel_index(row, col);
        &mut self.data[p * n..(p + 1) * n]
    }

    pub fn get(&self, row: usize, col: usize, multi: &[usize]) -> f64 {
        assert_eq!(multi.len(), self.order, "multi-index length must equal the order");
        self.block(row, col)[flat_index(multi)]
    }

    pub fn same_shape(&self, other: &TensorField) -> bool {
        self.grid == other.grid && self.order == other.order
    }

    pub(crate) fn check_same_shape(&self, other: &TensorField, what: &str) -> Result<()> {
        if self.grid != other.grid {
            return Err(TdvError::Dimension(format!(
                "{what}: grids differ ({}x{} vs {}x{})",
                self.grid.height, self.grid.width, other.grid.height, other.grid.width
            )));
        }
        if self.order != other.order {
            return Err(TdvError::Dimension(format!(
                "{what}: orders differ ({} vs {})",
                self.order, other.order
            )));
        }
        Ok(())
    }

    /// `self += a * other`. Panics on shape mismatch.
    pub fn axpy(&mut self, a: f64, other: &TensorField) {
        assert!(self.same_shape(other), "axpy on fields of different shape");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn scaled(&self, a: f64) -> TensorField {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &TensorField, b: f64) -> TensorField {
        assert!(self.same_shape(other), "lincomb on fields of different shape");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        TensorField {
            grid: self.grid,
            order: self.order,
            data,
        }
    }

    pub fn add(&self, other: &TensorField) -> TensorField {
        self.lincomb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &TensorField) -> TensorField {
        self.lincomb(1.0, other, -1.0)
    }

    /// Plain Euclidean norm of the coefficient vector (no area factor).
    pub fn coefficient_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest pointwise Frobenius norm.
    pub fn sup_norm(&self) -> f64 {
        self.data
            .chunks_exact(self.components())
            .map(block_norm)
            .fold(0.0, f64::max)
    }

    /// Rescales every pixel whose Frobenius norm exceeds `radius` back onto
    /// the ball of that radius.
    pub fn project_pointwise(&mut self, radius: f64) {
        let n = self.components();
        for block in self.data.chunks_exact_mut(n) {
            let norm = block_norm(block);
            if norm > radius {
                let s = radius / norm;
                block.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
}

#[inline]
pub(crate) fn block_norm(block: &[f64]) -> f64 {
    block.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_grid(a: &TensorField, b: &TensorField, what: &str) -> Result<()> {
    if a.grid != b.grid {
        return Err(TdvError::Dimension(format!("{what}: grids differ")));
    }
    Ok(())
}

/// Pointwise tensor product, `(a⊗b)(i.., j..) = a(i..)·b(j..)`.
pub fn tensor_product(a: &TensorField, b: &TensorField) -> Result<TensorField> {
    check_grid(a, b, "tensor_product")?;
    let (na, nb) = (a.components(), b.components());
    let mut data = Vec::with_capacity(a.grid.pixels() * na * nb);
    for (ba, bb) in a.data.chunks_exact(na).zip(b.data.chunks_exact(nb)) {
        for x in ba {
            data.extend(bb.iter().map(|y| x * y));
        }
    }
    Ok(TensorField {
        grid: a.grid,
        order: a.order + b.order,
        data,
    })
}

/// Contraction of the first and last slots:
/// `tr(x)(a..) = Σ_i x(e_i, a.., e_i)`.
pub fn trace(x: &TensorField) -> Result<TensorField> {
    let l = x.order;
    if l < 2 {
        return Err(TdvError::Rank(format!("trace needs order >= 2, got {l}")));
    }
    let n_in = x.components();
    let n_out = components(l - 2);
    let mut data = Vec::with_capacity(x.grid.pixels() * n_out);
    for block in x.data.chunks_exact(n_in) {
        for mid in 0..n_out {
            let s: f64 = (0..DIM)
                .map(|i| block[(i << (l - 1)) | (mid << 1) | i])
                .sum();
            data.push(s);
        }
    }
    Ok(TensorField {
        grid: x.grid,
        order: l - 2,
        data,
    })
}

/// Cyclic shift moving the last slot to the front:
/// `x~(a_1, .., a_ℓ) = x(a_ℓ, a_1, .., a_{ℓ-1})`.
pub fn tilde(x: &TensorField) -> TensorField {
    let l = x.order;
    if l < 2 {
        return x.clone();
    }
    permute(x, |r| ((r & 1) << (l - 1)) | (r >> 1))
}

/// Full reversal of the index order.
pub fn bar(x: &TensorField) -> TensorField {
    let l = x.order;
    if l < 2 {
        return x.clone();
    }
    permute(x, |r| r.reverse_bits() >> (usize::BITS as usize - l))
}

/// `out[r] = x[source(r)]` blockwise.
fn permute(x: &TensorField, source: impl Fn(usize) -> usize) -> TensorField {
    let n = x.components();
    let map: Vec<usize> = (0..n).map(source).collect();
    let mut data = Vec::with_capacity(x.data.len());
    for block in x.data.chunks_exact(n) {
        data.extend(map.iter().map(|&s| block[s]));
    }
    TensorField {
        grid: x.grid,
        order: x.order,
        data,
    }
}

/// Discrete L² scalar product `spacing² · Σ_pixels Σ_multi a·b`.
pub fn inner(a: &TensorField, b: &TensorField) -> Result<f64> {
    a.check_same_shape(b, "inner")?;
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
    Ok(a.grid.cell_area() * s)
}

/// `sqrt(inner(x, x))`.
pub fn l2_norm(x: &TensorField) -> f64 {
    x.grid.spacing * x.coefficient_norm()
}

/// Per-pixel Frobenius norm `|ξ| = sqrt(ξ·ξ)` as an order-0 field.
pub fn frobenius_pointwise(x: &TensorField) -> TensorField {
    let data = x.data.chunks_exact(x.components()).map(block_norm).collect();
    TensorField {
        grid: x.grid,
        order: 0,
        data,
    }
}

/// Discrete Radon norm: `spacing² · Σ_pixels |x(pixel)|`.
pub fn radon_norm(x: &TensorField) -> f64 {
    let s: f64 = x.data.chunks_exact(x.components()).map(block_norm).sum();
    x.grid.cell_area() * s
}
