//! Weighting matrix fields `M_j` and the collection `(M_1, .., M_Q)`.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Result, TdvError};
use crate::tensor::{Grid, TensorField};

/// Default lower bound on the smallest singular value of every `M(x)`.
pub const DEFAULT_EPS_PD: f64 = 1e-8;

/// Row-major 2×2 matrix `[m00, m01, m10, m11]`.
pub type Mat2 = [f64; 4];

pub const IDENTITY: Mat2 = [1.0, 0.0, 0.0, 1.0];

/// Singular values `(σ_max, σ_min)` of a 2×2 matrix.
pub fn singular_values(m: &Mat2) -> (f64, f64) {
    let fro2 = m.iter().map(|v| v * v).sum::<f64>();
    let det = m[0] * m[3] - m[1] * m[2];
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
    let s_max = ((fro2 + disc) / 2.0).sqrt();
    // σ_min from |det| / σ_max avoids cancellation for well-conditioned input.
    let s_min = if s_max > 0.0 { det.abs() / s_max } else { 0.0 };
    (s_max, s_min)
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

/// Counter-clockwise rotation `R_θ`.
pub fn rotation(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    [c, -s, s, c]
}

/// `Λ_a R_θᵀ` with `Λ_a = diag(1, a)`: full weight along `θ`, weight `a`
/// across it.
pub fn rotation_contraction(theta: f64, a: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    [c, s, -a * s, a * c]
}

fn check_contraction(a: f64) -> Result<()> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(TdvError::Parameter(format!(
            "contraction factor must lie in (0, 1], got {a}"
        )));
    }
    Ok(())
}

/// A grid of invertible 2×2 matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    grid: Grid,
    entries: Vec<Mat2>,
}

impl WeightField {
    /// Validates that every matrix has smallest singular value `>= eps_pd`.
    pub fn new(grid: Grid, entries: Vec<Mat2>, eps_pd: f64) -> Result<Self> {
        if entries.len() != grid.pixels() {
            return Err(TdvError::Dimension(format!(
                "weight field needs {} matrices, got {}",
                grid.pixels(),
                entries.len()
            )));
        }
        for (p, m) in entries.iter().enumerate() {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(TdvError::Parameter(format!("non-finite weight at pixel {p}")));
            }
            let (_, s_min) = singular_values(m);
            if s_min < eps_pd {
                return Err(TdvError::Parameter(format!(
                    "weight at pixel {p} is not uniformly invertible (smallest singular value {s_min:.3e} < {eps_pd:.1e})"
                )));
            }
        }
        Ok(WeightField { grid, entries })
    }

    pub fn uniform(grid: Grid, m: Mat2) -> Result<Self> {
        Self::new(grid, vec![m; grid.pixels()], DEFAULT_EPS_PD)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn entries(&self) -> &[Mat2] {
        &self.entries
    }

    #[inline]
    pub fn at(&self, pixel: usize) -> &Mat2 {
        &self.entries[pixel]
    }

    pub fn is_identity(&self) -> bool {
        self.entries.iter().all(|m| *m == IDENTITY)
    }

    pub fn min_singular_value(&self) -> f64 {
        self.entries
            .iter()
            .map(|m| singular_values(m).1)
            .fold(f64::INFINITY, f64::min)
    }

    /// Order-2 tensor field view; the row-major matrix layout coincides with
    /// the lexicographic order-2 layout.
    pub fn to_tensor_field(&self) -> TensorField {
        let data = self.entries.iter().flat_map(|m| m.iter().copied()).collect();
        TensorField::from_data(self.grid, 2, data).expect("weight entries are finite")
    }

    pub fn from_tensor_field(field: &TensorField, eps_pd: f64) -> Result<Self> {
        if field.order() != 2 {
            return Err(TdvError::Rank(format!(
                "weight fields are order-2 tensors, got order {}",
                field.order()
            )));
        }
        let entries = field
            .data()
            .chunks_exact(4)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        Self::new(field.grid(), entries, eps_pd)
    }
}

/// Ordered weighting fields `(M_1, .., M_Q)` sharing one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCollection {
    levels: Vec<WeightField>,
}

impl WeightCollection {
    pub fn new(levels: Vec<WeightField>) -> Result<Self> {
        let Some(first) = levels.first() else {
            return Err(TdvError::Parameter("weight collection needs at least one level".into()));
        };
        let grid = first.grid;
        if levels.iter().any(|m| m.grid != grid) {
            return Err(TdvError::Dimension("weight levels live on different grids".into()));
        }
        Ok(WeightCollection { levels })
    }

    /// The same field at each of `order` levels.
    pub fn repeated(field: WeightField, order: usize) -> Result<Self> {
        Self::new(vec![field; order])
    }

    pub fn identity(grid: Grid, order: usize) -> Result<Self> {
        Self::repeated(identity_field(grid), order)
    }

    /// Regularisation order `Q`.
    pub fn order(&self) -> usize {
        self.levels.len()
    }

    pub fn grid(&self) -> Grid {
        self.levels[0].grid
    }

    pub fn levels(&self) -> &[WeightField] {
        &self.levels
    }

    /// `M_j` for `j` in `1..=Q`.
    pub fn level(&self, j: usize) -> &WeightField {
        assert!(j >= 1 && j <= self.levels.len(), "level index {j} out of 1..={}", self.levels.len());
        &self.levels[j - 1]
    }
}

pub fn identity_field(grid: Grid) -> WeightField {
    WeightField {
        grid,
        entries: vec![IDENTITY; grid.pixels()],
    }
}

/// Constant field `Λ_a R_θᵀ`.
pub fn rotation_contraction_field(grid: Grid, theta: f64, a: f64) -> Result<WeightField> {
    check_contraction(a)?;
    if !theta.is_finite() {
        return Err(TdvError::Parameter(format!("angle must be finite, got {theta}")));
    }
    WeightField::new(
        grid,
        vec![rotation_contraction(theta, a); grid.pixels()],
        DEFAULT_EPS_PD.min(a),
    )
}

/// Random symmetric positive-definite field `R diag(s1, s2) Rᵀ` with
/// `s1, s2 ∈ [0.3, 2]` and uniform angles, one matrix per pixel.
pub fn random_spd_field<R: rand::Rng + ?Sized>(grid: Grid, rng: &mut R) -> WeightField {
    let entries = (0..grid.pixels())
        .map(|_| {
            let t: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let s1: f64 = rng.random_range(0.3..2.0);
            let s2: f64 = rng.random_range(0.3..2.0);
            let (sn, cs) = t.sin_cos();
            let off = cs * sn * (s1 - s2);
            [cs * cs * s1 + sn * sn * s2, off, off, sn * sn * s1 + cs * cs * s2]
        })
        .collect();
    WeightField { grid, entries }
}

/// Parameters of the structure-tensor construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureTensorParams {
    /// Pre-smoothing scale applied to the image.
    pub sigma: f64,
    /// Integration scale applied to the gradient outer products.
    pub rho: f64,
    /// Contraction applied across the local edge direction.
    pub contraction: f64,
    /// Pixels whose eigenvalue gap is below `eps_gap · mean(trace J)` are
    /// treated as isotropic.
    pub eps_gap: f64,
}

impl StructureTensorParams {
    pub fn new(sigma: f64, rho: f64, contraction: f64) -> Self {
        StructureTensorParams {
            sigma,
            rho,
            contraction,
            eps_gap: 1e-6,
        }
    }
}

/// Local orientation estimated from the structure tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Orientation {
    /// Angle in `(-π/2, π/2]` of the dominant eigenvector (gradient direction).
    pub angle: Vec<f64>,
    /// `λ_1 - λ_2 >= 0`.
    pub gap: Vec<f64>,
}

/// Dominant-eigenvector angle and eigenvalue gap of the smoothed structure
/// tensor at every pixel.
pub fn structure_orientation(image: &TensorField, sigma: f64, rho: f64) -> Result<Orientation> {
    if image.order() != 0 {
        return Err(TdvError::Rank(format!(
            "structure tensor needs a scalar image, got order {}",
            image.order()
        )));
    }
    if !(sigma >= 0.0 && rho >= 0.0) {
        return Err(TdvError::Parameter(format!(
            "smoothing scales must be non-negative, got sigma={sigma}, rho={rho}"
        )));
    }
    let grid = image.grid();
    let smooth = gaussian_smooth(image.data(), grid, sigma);
    let (dx, dy) = central_gradient(&smooth, grid);
    let jxx: Vec<f64> = dx.iter().map(|g| g * g).collect();
    let jxy: Vec<f64> = dx.iter().zip(&dy).map(|(a, b)| a * b).collect();
    let jyy: Vec<f64> = dy.iter().map(|g| g * g).collect();
    let jxx = gaussian_smooth(&jxx, grid, rho);
    let jxy = gaussian_smooth(&jxy, grid, rho);
    let jyy = gaussian_smooth(&jyy, grid, rho);

    let mut angle = Vec::with_capacity(grid.pixels());
    let mut gap = Vec::with_capacity(grid.pixels());
    for p in 0..grid.pixels() {
        let (a, b, c) = (jxx[p], jxy[p], jyy[p]);
        gap.push(2.0 * (0.25 * (a - c) * (a - c) + b * b).sqrt());
        angle.push(0.5 * (2.0 * b).atan2(a - c));
    }
    Ok(Orientation { angle, gap })
}

/// Image-adaptive weights: `Λ_a R_{θ+π/2}ᵀ` where `θ(x)` is the dominant
/// structure-tensor direction, so derivatives along edges get full weight and
/// derivatives across them are contracted by `a`. Near-isotropic pixels get
/// the identity.
pub fn structure_tensor_field(image: &TensorField, params: StructureTensorParams) -> Result<WeightField> {
    check_contraction(params.contraction)?;
    let orient = structure_orientation(image, params.sigma, params.rho)?;
    let grid = image.grid();
    // The eigenvalue sum equals the trace; the gap is at most the trace.
    let mean_scale = orient.gap.iter().sum::<f64>() / grid.pixels() as f64;
    let threshold = params.eps_gap * mean_scale;
    let entries = orient
        .angle
        .iter()
        .zip(&orient.gap)
        .map(|(&theta, &gap)| {
            if mean_scale == 0.0 || gap < threshold {
                IDENTITY
            } else {
                rotation_contraction(theta + FRAC_PI_2, params.contraction)
            }
        })
        .collect();
    WeightField::new(grid, entries, DEFAULT_EPS_PD.min(params.contraction))
}

/// Separable Gaussian blur with a truncated kernel of radius `⌈3σ⌉` and
/// mirrored borders. `sigma == 0` returns the input.
pub fn gaussian_smooth(values: &[f64], grid: Grid, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = (grid.height() as isize, grid.width() as isize);
    let mut tmp = vec![0.0; values.len()];
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            for (t, k) in (-radius..=radius).zip(&kernel) {
                s += k * values[(r * w + mirror(c + t, w)) as usize];
            }
            tmp[(r * w + c) as usize] = s;
        }
    }
    let mut out = vec![0.0; values.len()];
    for r in 0..h {
        for c in 0..w {
            let mut s = 0.0;
            for (t, k) in (-radius..=radius).zip(&kernel) {
                s += k * tmp[(mirror(r + t, h) * w + c) as usize];
            }
            out[(r * w + c) as usize] = s;
        }
    }
    out
}

/// Half-sample symmetric index reflection into `0..n`.
fn mirror(i: isize, n: isize) -> isize {
    if n == 1 {
        return 0;
    }
    let period = 2 * n;
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - 1 - j;
    }
    j
}

/// Central differences inside, one-sided at the border.
fn central_gradient(values: &[f64], grid: Grid) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = (grid.height(), grid.width());
    let hs = grid.spacing();
    let at = |r: usize, c: usize| values[r * w + c];
    let mut dx = vec![0.0; values.len()];
    let mut dy = vec![0.0; values.len()];
    for r in 0..h {
        for c in 0..w {
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
            if cr > cl {
                dx[r * w + c] = (at(r, cr) - at(r, cl)) / ((cr - cl) as f64 * hs);
            }
            if rd > ru {
                dy[r * w + c] = (at(rd, c) - at(ru, c)) / ((rd - ru) as f64 * hs);
            }
        }
    }
    (dx, dy)
}
