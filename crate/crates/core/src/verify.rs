//! Self-checks of the discrete identities the regulariser rests on.
//!
//! [`run_identity_suite`] draws random fields and weights from a seeded
//! generator and reports, per identity, the worst normalised defect against
//! its tolerance.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anisotropy::{random_spd_field, WeightCollection};
use crate::diff;
use crate::error::{Result, TdvError};
use crate::tdv::{self, AlphaVector, CascadeVariables};
use crate::tensor::{self, Grid, TensorField};

/// Tolerance on `tdv_value` used by the homogeneity and kernel checks.
pub const TDV_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyConfig {
    pub grid: Grid,
    pub trials: usize,
    pub seed: u64,
}

/// Outcome of one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub name: &'static str,
    pub cases: usize,
    /// Largest normalised defect over all cases.
    pub worst: f64,
    pub tolerance: f64,
}

impl IdentityCheck {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

pub fn run_identity_suite(cfg: &VerifyConfig) -> Result<Vec<IdentityCheck>> {
    if cfg.trials == 0 {
        return Err(TdvError::Parameter("at least one trial is needed".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(vec![
        adjointness(cfg, &mut rng)?,
        transfer(cfg, &mut rng)?,
        homogeneity(cfg, &mut rng)?,
        kernel(cfg)?,
        reduction(cfg, &mut rng)?,
    ])
}

/// `|⟨K a, Ψ⟩ - (-1)^Q ⟨a, div^Q Ψ⟩| / (‖a‖‖Ψ‖)` for `ℓ ∈ {0, 1}`, `Q ∈ {1, 2}`.
pub fn adjointness(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<IdentityCheck> {
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for ell in 0..2 {
        for q in 1..=2 {
            for _ in 0..cfg.trials {
                let w = WeightCollection::new((0..q).map(|_| random_spd_field(cfg.grid, rng)).collect())?;
                let a = TensorField::random(cfg.grid, ell, rng);
                let psi = TensorField::random(cfg.grid, ell + q, rng);
                let lhs = tensor::inner(&diff::weighted_grad_order(&w, &a)?, &psi)?;
                let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
                let rhs = sign * tensor::inner(&a, &diff::weighted_div_order(q, &w, &psi)?)?;
                let scale = tensor::l2_norm(&a) * tensor::l2_norm(&psi);
                worst = worst.max((lhs - rhs).abs() / scale);
                cases += 1;
            }
        }
    }
    Ok(IdentityCheck {
        name: "adjointness",
        cases,
        worst,
        tolerance: 1e-10,
    })
}

/// `⟨M∇⊗a, Ψ⟩ = ⟨∇⊗a, tr(M⊗Ψ~)⟩`, relative to `‖M∇⊗a‖‖Ψ‖`.
pub fn transfer(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<IdentityCheck> {
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for ell in 0..2 {
        for _ in 0..cfg.trials {
            let m = random_spd_field(cfg.grid, rng);
            let a = TensorField::random(cfg.grid, ell, rng);
            let psi = TensorField::random(cfg.grid, ell + 1, rng);
            let mg = diff::weighted_grad(&m, &a)?;
            let lhs = tensor::inner(&mg, &psi)?;
            let rhs = tensor::inner(&diff::grad(&a), &diff::transfer_weight(&m, &psi)?)?;
            let scale = tensor::l2_norm(&mg) * tensor::l2_norm(&psi);
            worst = worst.max((lhs - rhs).abs() / scale);
            cases += 1;
        }
    }
    Ok(IdentityCheck {
        name: "transfer",
        cases,
        worst,
        tolerance: 1e-12,
    })
}

/// `|TDV(λu) - |λ| TDV(u)|` for `λ ∈ {-2, 0.5, 3}`, second order.
pub fn homogeneity(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<IdentityCheck> {
    let w = WeightCollection::repeated(random_spd_field(cfg.grid, rng), 2)?;
    let alpha = AlphaVector::new(vec![1.0, 1.0])?;
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for _ in 0..cfg.trials.min(3) {
        let u = TensorField::random(cfg.grid, 0, rng);
        let base = tdv::tdv_value(&u, &w, &alpha, TDV_TOL)?;
        for lambda in [-2.0, 0.5, 3.0] {
            let v = tdv::tdv_value(&u.scaled(lambda), &w, &alpha, TDV_TOL)?;
            // gap tolerances are relative to max(1, value)
            let slack = base.abs().max(1.0) * lambda.abs().max(1.0);
            worst = worst.max((v - lambda.abs() * base).abs() / slack);
            cases += 1;
        }
    }
    Ok(IdentityCheck {
        name: "homogeneity",
        cases,
        worst,
        tolerance: 2.0 * TDV_TOL,
    })
}

/// Constants for `Q ∈ {1, 2}` and an affine ramp for `Q = 2`.
pub fn kernel(cfg: &VerifyConfig) -> Result<IdentityCheck> {
    let g = cfg.grid;
    let constant = TensorField::constant(g, 0, &[0.7])?;
    let ramp = TensorField::scalar_fn(g, |r, c| 0.25 * c as f64 - 0.4 * r as f64 + 1.0);
    let mut worst = 0.0_f64;
    for (u, q) in [(&constant, 1), (&constant, 2), (&ramp, 2)] {
        let w = WeightCollection::identity(g, q)?;
        let alpha = AlphaVector::new(vec![1.0; q])?;
        worst = worst.max(tdv::tdv_value(u, &w, &alpha, TDV_TOL)?);
    }
    Ok(IdentityCheck {
        name: "kernel",
        cases: 3,
        worst,
        tolerance: TDV_TOL,
    })
}

/// With identity weights the second-order cascade equals the non-symmetric
/// TGV functional, coded here from plain differences.
pub fn reduction(cfg: &VerifyConfig, rng: &mut ChaCha8Rng) -> Result<IdentityCheck> {
    let g = cfg.grid;
    let w = WeightCollection::identity(g, 2)?;
    let alpha = AlphaVector::new(vec![0.7, 1.3])?;
    let mut worst = 0.0_f64;
    for _ in 0..cfg.trials {
        let u = TensorField::random(g, 0, rng);
        let z = TensorField::random(g, 1, rng);
        let ours = tdv::cascade_value(&u, &CascadeVariables::new(vec![z.clone()])?, &w, &alpha)?;
        let reference = plain_tgv(&u, &z, 0.7, 1.3);
        worst = worst.max((ours - reference).abs() / reference.abs().max(1e-300));
    }
    Ok(IdentityCheck {
        name: "reduction",
        cases: cfg.trials,
        worst,
        tolerance: 1e-12,
    })
}

/// `α_1 Σ|∇u - z| + α_0 Σ|∇z|` with forward differences, the slots that
/// would reach past the last row or column left out.
fn plain_tgv(u: &TensorField, z: &TensorField, alpha0: f64, alpha1: f64) -> f64 {
    let g = u.grid();
    let (h, wd) = (g.height(), g.width());
    let uv = |r: usize, c: usize| u.data()[r * wd + c];
    let zv = |r: usize, c: usize, k: usize| z.data()[(r * wd + c) * 2 + k];
    let mut first = 0.0;
    let mut second = 0.0;
    for r in 0..h {
        for c in 0..wd {
            let dx = (c + 1 < wd).then(|| uv(r, c + 1) - uv(r, c));
            let dy = (r + 1 < h).then(|| uv(r + 1, c) - uv(r, c));
            let mut s = 0.0;
            if let Some(d) = dx {
                s += (d - zv(r, c, 0)).powi(2);
            }
            if let Some(d) = dy {
                s += (d - zv(r, c, 1)).powi(2);
            }
            first += s.sqrt();
            let mut t = 0.0;
            for k in 0..2 {
                if c + 1 < wd {
                    t += (zv(r, c + 1, k) - zv(r, c, k)).powi(2);
                }
                if r + 1 < h {
                    t += (zv(r + 1, c, k) - zv(r, c, k)).powi(2);
                }
            }
            second += t.sqrt();
        }
    }
    g.cell_area() * (alpha1 * first + alpha0 * second)
}

/// Fixed-width pass/fail table.
pub fn render_table(checks: &[IdentityCheck]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>6} {:>12} {:>10}  result", "identity", "cases", "worst", "tolerance");
    for c in checks {
        let _ = writeln!(
            out,
            "{:<12} {:>6} {:>12.3e} {:>10.1e}  {}",
            c.name,
            c.cases,
            c.worst,
            c.tolerance,
            if c.passed() { "pass" } else { "FAIL" }
        );
    }
    out
}
