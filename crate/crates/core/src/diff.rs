//! Finite-difference gradients and weighted divergences.
//!
//! Gradients are forward differences with a zero difference across the far
//! border (Neumann closure). The weighted divergence is defined as the exact
//! negative adjoint of the weighted gradient under [`inner`], which makes the
//! discrete integration-by-parts identity hold with no boundary term:
//!
//! ```text
//! <M∇⊗a, Ψ> = -<a, div_M Ψ>
//! ```
//!
//! The derivative index always occupies the first tensor slot.
//!
//! The x-derivative in the last column and the y-derivative in the last row
//! have no neighbour to difference against. [`grad`] stores zero there, and
//! the regulariser does not penalise those slots: [`residual_norm`] measures a
//! residual after [`project_dual_boundary`] removes them. This keeps affine
//! fields in the kernel of the second-order cascade.
//!
//! [`inner`]: crate::tensor::inner

use rayon::prelude::*;

use crate::anisotropy::{WeightCollection, WeightField};
use crate::error::{Result, TdvError};
use crate::tensor::{self, components, Grid, TensorField};

/// Pixel count above which pixel loops run on the rayon pool.
const PARALLEL_PIXELS: usize = 1 << 14;

/// How fields are continued past the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BoundaryRule {
    /// Primal gradients take a zero difference across the far border; dual
    /// fields are zero-extended, so divergences truncate their stencils and
    /// dual variables vanish on the out-of-grid derivative slots (see
    /// [`project_dual_boundary`]).
    #[default]
    ZeroExtension,
}

/// Runs `f(row, out_row)` for every image row, in parallel on large grids.
fn for_each_row(grid: Grid, out: &mut [f64], f: impl Fn(usize, &mut [f64]) + Sync + Send) {
    let row_len = out.len() / grid.height();
    if grid.pixels() >= PARALLEL_PIXELS {
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(r, chunk)| f(r, chunk));
    } else {
        out.chunks_mut(row_len)
            .enumerate()
            .for_each(|(r, chunk)| f(r, chunk));
    }
}

fn check_grid(m: &WeightField, x: &TensorField, what: &str) -> Result<()> {
    if m.grid() != x.grid() {
        return Err(TdvError::Dimension(format!(
            "{what}: weight field and tensor field live on different grids"
        )));
    }
    Ok(())
}

/// Forward-difference gradient, order `ℓ -> ℓ+1`.
pub fn grad(x: &TensorField) -> TensorField {
    let mut out = TensorField::zeros(x.grid(), x.order() + 1);
    weighted_grad_into(None, x, out.data_mut());
    out
}

/// Backward-difference gradient with zero extension before the first
/// row/column. Only used by the composite divergence reference.
pub fn grad_backward(x: &TensorField) -> TensorField {
    let grid = x.grid();
    let (w, n) = (grid.width(), x.components());
    let inv_h = 1.0 / grid.spacing();
    let src = x.data();
    let mut out = TensorField::zeros(grid, x.order() + 1);
    for_each_row(grid, out.data_mut(), |r, row| {
        for c in 0..w {
            let here = &src[(r * w + c) * n..(r * w + c + 1) * n];
            let o = &mut row[c * 2 * n..(c + 1) * 2 * n];
            for m in 0..n {
                let left = if c > 0 { src[(r * w + c - 1) * n + m] } else { 0.0 };
                let up = if r > 0 { src[((r - 1) * w + c) * n + m] } else { 0.0 };
                o[m] = (here[m] - left) * inv_h;
                o[n + m] = (here[m] - up) * inv_h;
            }
        }
    });
    out
}

/// `(M∇⊗x)_{j,i..} = Σ_k M_{jk} ∂_k x_{i..}`.
pub fn weighted_grad(m: &WeightField, x: &TensorField) -> Result<TensorField> {
    check_grid(m, x, "weighted_grad")?;
    let mut out = TensorField::zeros(x.grid(), x.order() + 1);
    weighted_grad_into(Some(m), x, out.data_mut());
    Ok(out)
}

/// Writes `M∇⊗x` (or `∇⊗x` when `m` is `None`) into `out`.
pub(crate) fn weighted_grad_into(m: Option<&WeightField>, x: &TensorField, out: &mut [f64]) {
    let grid = x.grid();
    let (h, w, n) = (grid.height(), grid.width(), x.components());
    debug_assert_eq!(out.len(), grid.pixels() * 2 * n);
    let inv_h = 1.0 / grid.spacing();
    let src = x.data();
    for_each_row(grid, out, |r, row| {
        for c in 0..w {
            let p = r * w + c;
            let here = &src[p * n..(p + 1) * n];
            let o = &mut row[c * 2 * n..(c + 1) * 2 * n];
            for k in 0..n {
                let dx = if c + 1 < w { (src[(p + 1) * n + k] - here[k]) * inv_h } else { 0.0 };
                let dy = if r + 1 < h { (src[(p + w) * n + k] - here[k]) * inv_h } else { 0.0 };
                match m {
                    None => {
                        o[k] = dx;
                        o[n + k] = dy;
                    }
                    Some(m) => {
                        let a = m.at(p);
                        o[k] = a[0] * dx + a[1] * dy;
                        o[n + k] = a[2] * dx + a[3] * dy;
                    }
                }
            }
        }
    });
}

/// Weighted divergence, order `ℓ+1 -> ℓ`: the negative adjoint of
/// [`weighted_grad`].
pub fn weighted_div(m: &WeightField, psi: &TensorField) -> Result<TensorField> {
    check_grid(m, psi, "weighted_div")?;
    if psi.order() == 0 {
        return Err(TdvError::Rank("divergence needs order >= 1".into()));
    }
    let mut out = TensorField::zeros(psi.grid(), psi.order() - 1);
    weighted_div_into(Some(m), psi, out.data_mut());
    Ok(out)
}

/// Unweighted divergence, the negative adjoint of [`grad`].
pub fn div(psi: &TensorField) -> Result<TensorField> {
    if psi.order() == 0 {
        return Err(TdvError::Rank("divergence needs order >= 1".into()));
    }
    let mut out = TensorField::zeros(psi.grid(), psi.order() - 1);
    weighted_div_into(None, psi, out.data_mut());
    Ok(out)
}

/// Writes `div_M ψ` into `out`. With `φ = Mᵀψ` on the first slot:
/// `div φ = D_x⁻ φ_x + D_y⁻ φ_y` where `D⁻` is the backward difference whose
/// stencil is truncated at both borders.
pub(crate) fn weighted_div_into(m: Option<&WeightField>, psi: &TensorField, out: &mut [f64]) {
    let grid = psi.grid();
    let (h, w) = (grid.height(), grid.width());
    let n = components(psi.order() - 1);
    debug_assert_eq!(out.len(), grid.pixels() * n);
    let inv_h = 1.0 / grid.spacing();
    let src = psi.data();
    // φ_x and φ_y components at pixel q, index k.
    let phi = |q: usize, k: usize| -> (f64, f64) {
        let px = src[q * 2 * n + k];
        let py = src[q * 2 * n + n + k];
        match m {
            None => (px, py),
            Some(m) => {
                let a = m.at(q);
                (a[0] * px + a[2] * py, a[1] * px + a[3] * py)
            }
        }
    };
    for_each_row(grid, out, |r, row| {
        for c in 0..w {
            let p = r * w + c;
            let o = &mut row[c * n..(c + 1) * n];
            for (k, ok) in o.iter_mut().enumerate() {
                let (fx, fy) = phi(p, k);
                let mut s = 0.0;
                if c + 1 < w {
                    s += fx;
                }
                if c > 0 {
                    s -= phi(p - 1, k).0;
                }
                if r + 1 < h {
                    s += fy;
                }
                if r > 0 {
                    s -= phi(p - w, k).1;
                }
                *ok = s * inv_h;
            }
        }
    });
}

/// Projects a dual field (derivative index in the first slot) onto the
/// subspace of fields that vanish on out-of-grid derivative slots after the
/// weight transfer: `(Mᵀw)_x = 0` in the last column and `(Mᵀw)_y = 0` in
/// the last row. Only boundary pixels change.
///
/// For a residual `r`, the pointwise norm of the projection equals the
/// smallest norm `r` can reach when the out-of-grid derivatives are left
/// free, which is how residual norms are measured.
pub fn project_dual_boundary(m: &WeightField, w: &mut TensorField) {
    let grid = w.grid();
    assert_eq!(m.grid(), grid, "weight and dual field grids differ");
    assert!(w.order() >= 1, "dual fields have order >= 1");
    let (h, wd) = (grid.height(), grid.width());
    let n = components(w.order() - 1);
    let data = w.data_mut();
    let mut fix = |p: usize, last_col: bool, last_row: bool| {
        let a = m.at(p);
        let block = &mut data[p * 2 * n..(p + 1) * 2 * n];
        if last_col && last_row {
            block.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        // Constraint normal: first (x) or second (y) column of M.
        let (c0, c1) = if last_col { (a[0], a[2]) } else { (a[1], a[3]) };
        let nn = c0 * c0 + c1 * c1;
        for k in 0..n {
            let t = (c0 * block[k] + c1 * block[n + k]) / nn;
            block[k] -= t * c0;
            block[n + k] -= t * c1;
        }
    };
    for r in 0..h {
        fix(r * wd + wd - 1, true, r + 1 == h);
    }
    for c in 0..wd.saturating_sub(1) {
        fix((h - 1) * wd + c, false, true);
    }
}

/// Discrete Radon norm of a level residual under the boundary rule:
/// `spacing² Σ |P r|` with `P` from [`project_dual_boundary`].
pub fn residual_norm(m: &WeightField, r: &TensorField) -> f64 {
    let mut p = r.clone();
    project_dual_boundary(m, &mut p);
    tensor::radon_norm(&p)
}

/// `tr(M⊗Ψ~)`: moves the weight off the gradient, so that
/// `⟨M∇⊗a, Ψ⟩ = ⟨∇⊗a, tr(M⊗Ψ~)⟩`.
pub fn transfer_weight(m: &WeightField, psi: &TensorField) -> Result<TensorField> {
    check_grid(m, psi, "transfer_weight")?;
    if psi.order() == 0 {
        return Err(TdvError::Rank("transfer needs order >= 1".into()));
    }
    tensor::trace(&tensor::tensor_product(&m.to_tensor_field(), &tensor::tilde(psi))?)
}

/// Unit constraint normals of the boundary rule at every border pixel, in a
/// fixed order: `(pixel, normal)`.
fn boundary_normals(m: &WeightField) -> Vec<(usize, [f64; 2])> {
    let grid = m.grid();
    let (h, wd) = (grid.height(), grid.width());
    let unit = |c0: f64, c1: f64| {
        let n = c0.hypot(c1);
        [c0 / n, c1 / n]
    };
    let mut out = Vec::with_capacity(h + wd);
    for r in 0..h {
        let p = r * wd + wd - 1;
        let a = m.at(p);
        out.push((p, unit(a[0], a[2])));
        if r + 1 == h {
            out.push((p, unit(a[1], a[3])));
        }
    }
    for c in 0..wd.saturating_sub(1) {
        let p = (h - 1) * wd + c;
        let a = m.at(p);
        out.push((p, unit(a[1], a[3])));
    }
    out
}

/// The linear functionals that [`project_dual_boundary`] annihilates,
/// evaluated on `w`. `w` satisfies the boundary rule iff all are zero.
pub(crate) fn boundary_constraints(m: &WeightField, w: &TensorField) -> Vec<f64> {
    let n = components(w.order() - 1);
    let data = w.data();
    let mut out = Vec::new();
    for (p, u) in boundary_normals(m) {
        let block = &data[p * 2 * n..(p + 1) * 2 * n];
        out.extend((0..n).map(|k| u[0] * block[k] + u[1] * block[n + k]));
    }
    out
}

/// Adjoint of [`boundary_constraints`], accumulated into `w`.
pub(crate) fn boundary_constraints_adjoint_add(m: &WeightField, values: &[f64], w: &mut TensorField) {
    let n = components(w.order() - 1);
    let data = w.data_mut();
    for (i, (p, u)) in boundary_normals(m).into_iter().enumerate() {
        let block = &mut data[p * 2 * n..(p + 1) * 2 * n];
        for k in 0..n {
            let v = values[i * n + k];
            block[k] += u[0] * v;
            block[n + k] += u[1] * v;
        }
    }
}

/// Reference divergence following the tensor-calculus formula
/// `tr(∇⊗[tr(M⊗ψ~)]~)` with [`grad_backward`] as the derivative. Agrees with
/// [`weighted_div`] away from the last row and column.
pub fn weighted_div_composite(m: &WeightField, psi: &TensorField) -> Result<TensorField> {
    check_grid(m, psi, "weighted_div_composite")?;
    if psi.order() == 0 {
        return Err(TdvError::Rank("divergence needs order >= 1".into()));
    }
    let transferred = transfer_weight(m, psi)?;
    tensor::trace(&grad_backward(&tensor::tilde(&transferred)))
}

/// `M_Q∇⊗ ⋯ ⊗M_1∇⊗x`, order `ℓ -> ℓ+Q`.
pub fn weighted_grad_order(weights: &WeightCollection, x: &TensorField) -> Result<TensorField> {
    let mut cur = x.clone();
    for m in weights.levels() {
        cur = weighted_grad(m, &cur)?;
    }
    Ok(cur)
}

/// `div^j` of the recursion: applies `M_Q` first, then `M_{Q-1}`, down to
/// `M_{Q-j+1}`. `j = 0` returns `psi`.
pub fn weighted_div_order(j: usize, weights: &WeightCollection, psi: &TensorField) -> Result<TensorField> {
    let q = weights.order();
    if j > q {
        return Err(TdvError::Parameter(format!(
            "divergence order {j} exceeds regularisation order {q}"
        )));
    }
    if psi.order() < j {
        return Err(TdvError::Rank(format!(
            "order-{} field cannot take {j} divergences",
            psi.order()
        )));
    }
    let mut cur = psi.clone();
    for level in (q - j + 1..=q).rev() {
        cur = weighted_div(weights.level(level), &cur)?;
    }
    Ok(cur)
}
