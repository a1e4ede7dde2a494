//! First-order primal-dual solver for `min_u TDV(u) + F(u)`.
//!
//! The regulariser enters through its cascade form: the primal unknowns are
//! `(u, z_1, .., z_{Q-1})`, the linear map is
//! `K(u, z)_j = M_j∇z_{j-1} - z_j` and the dual fields `w_j` live in the
//! pointwise Frobenius balls of radius `α_{Q-j}`, restricted on the last row
//! and column by the boundary rule of [`crate::diff::project_dual_boundary`].
//! `F(u) = λ/2 ‖S u - f‖²`
//! with `S` the identity or a binary mask.
//!
//! Internally all sums are taken without the `spacing²` area factor, which
//! scales every term of the objective alike; reported energies include it.

use log::{debug, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anisotropy::WeightCollection;
use crate::diff::{project_dual_boundary, weighted_div_into, weighted_grad_into};
use crate::error::{Result, TdvError};
use crate::tdv::{self, AlphaVector, CascadeVariables};
use crate::tensor::{self, Grid, TensorField};

/// Iterations between duality-gap evaluations.
pub const GAP_INTERVAL: usize = 10;
/// Iteration cap of the power method.
pub const POWER_ITERS: usize = 50;
const POWER_RTOL: f64 = 1e-6;

/// Linear forward operator of the fidelity term.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardOp {
    Identity,
    /// Per-pixel 0/1 mask; 1 marks an observed pixel.
    Mask(TensorField),
}

/// `min_u TDV^{Q,ℓ}_α[u, M] + λ/2 ‖S u - f‖²`.
#[derive(Debug, Clone)]
pub struct Problem {
    data: TensorField,
    forward: ForwardOp,
    weights: WeightCollection,
    alpha: AlphaVector,
    fidelity_weight: f64,
}

impl Problem {
    pub fn new(
        data: TensorField,
        forward: ForwardOp,
        weights: WeightCollection,
        alpha: AlphaVector,
        fidelity_weight: f64,
    ) -> Result<Self> {
        tdv::check_setup(&data, &weights, &alpha)?;
        if !(fidelity_weight > 0.0 && fidelity_weight.is_finite()) {
            return Err(TdvError::Parameter(format!(
                "fidelity weight must be positive, got {fidelity_weight}"
            )));
        }
        if let ForwardOp::Mask(mask) = &forward {
            if mask.grid() != data.grid() || mask.order() != 0 {
                return Err(TdvError::Dimension("mask must be a scalar field on the data grid".into()));
            }
            if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(TdvError::Parameter("mask entries must be 0 or 1".into()));
            }
        }
        Ok(Problem {
            data,
            forward,
            weights,
            alpha,
            fidelity_weight,
        })
    }

    /// Denoising problem (`S = I`).
    pub fn denoise(data: TensorField, weights: WeightCollection, alpha: AlphaVector, lambda: f64) -> Result<Self> {
        Self::new(data, ForwardOp::Identity, weights, alpha, lambda)
    }

    pub fn data(&self) -> &TensorField {
        &self.data
    }

    pub fn forward(&self) -> &ForwardOp {
        &self.forward
    }

    pub fn weights(&self) -> &WeightCollection {
        &self.weights
    }

    pub fn alpha(&self) -> &AlphaVector {
        &self.alpha
    }

    pub fn fidelity_weight(&self) -> f64 {
        self.fidelity_weight
    }

    pub fn order(&self) -> usize {
        self.weights.order()
    }

    fn mask(&self) -> Option<&[f64]> {
        match &self.forward {
            ForwardOp::Identity => None,
            ForwardOp::Mask(m) => Some(m.data()),
        }
    }

    /// `λ/2 ‖S u - f‖²` without the area factor.
    fn fidelity_sum(&self, u: &TensorField) -> f64 {
        let n = u.components();
        let mask = self.mask();
        let s: f64 = u
            .data()
            .iter()
            .zip(self.data.data())
            .enumerate()
            .filter(|(i, _)| mask.is_none_or(|m| m[i / n] != 0.0))
            .map(|(_, (a, b))| (a - b) * (a - b))
            .sum();
        0.5 * self.fidelity_weight * s
    }
}

/// `TDV`-cascade value plus fidelity, for given auxiliary fields.
pub fn energy(problem: &Problem, u: &TensorField, z: &CascadeVariables) -> Result<f64> {
    problem.data.check_same_shape(u, "energy")?;
    let reg = tdv::cascade_value(u, z, &problem.weights, &problem.alpha)?;
    Ok(reg + u.grid().cell_area() * problem.fidelity_sum(u))
}

/// Data term seen by the primal-dual engine.
#[derive(Debug, Clone)]
enum DataTerm<'a> {
    /// `u` is pinned; only the auxiliary fields move.
    Fixed(&'a TensorField),
    Quadratic(&'a Problem),
}

/// The saddle problem behind both [`solve`] and TDV evaluation.
#[derive(Debug, Clone)]
pub struct CascadeProblem<'a> {
    weights: &'a WeightCollection,
    alpha: &'a AlphaVector,
    data: DataTerm<'a>,
    image: &'a TensorField,
}

impl<'a> CascadeProblem<'a> {
    /// Minimise the cascade over `z` with `u` held fixed.
    pub fn fixed(u: &'a TensorField, weights: &'a WeightCollection, alpha: &'a AlphaVector) -> Self {
        CascadeProblem {
            weights,
            alpha,
            data: DataTerm::Fixed(u),
            image: u,
        }
    }

    pub fn regularised(problem: &'a Problem) -> Self {
        CascadeProblem {
            weights: &problem.weights,
            alpha: &problem.alpha,
            data: DataTerm::Quadratic(problem),
            image: &problem.data,
        }
    }
}

/// Primal energy, a certified dual lower bound, and their normalised gap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEstimate {
    pub primal: f64,
    pub dual: f64,
    /// `(primal - dual) / max(1, |primal|)`.
    pub gap: f64,
}

pub fn normalised_gap(primal: f64, dual: f64) -> f64 {
    (primal - dual).max(0.0) / primal.abs().max(1.0)
}

/// Largest singular value of `x ↦ apply(x)` by power iteration on
/// `applyᵀ ∘ apply`, with a fixed seed.
pub fn power_iteration(
    n: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    apply_t: impl Fn(&[f64]) -> Vec<f64>,
    max_iters: usize,
) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(0x7d5);
    let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let normalise = |v: &mut Vec<f64>| {
        let nrm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nrm > 0.0 {
            v.iter_mut().for_each(|a| *a /= nrm);
        }
        nrm
    };
    normalise(&mut x);
    let mut estimate = 0.0;
    for _ in 0..max_iters {
        let y = apply(&x);
        let mut xt = apply_t(&y);
        let lambda = normalise(&mut xt);
        x = xt;
        let next = lambda.sqrt();
        let done = estimate > 0.0 && ((next - estimate) / next).abs() < POWER_RTOL;
        estimate = next;
        if done || lambda == 0.0 {
            break;
        }
    }
    estimate
}

/// Norm bound `L` of the stacked map `(u, z) ↦ (M_j∇z_{j-1} - z_j)_j`, inflated
/// by 1%.
pub fn estimate_operator_norm(weights: &WeightCollection, grid: Grid, order: usize) -> f64 {
    let q = weights.order();
    let primal_orders: Vec<usize> = (0..q).map(|j| order + j).collect();
    let dual_orders: Vec<usize> = (1..=q).map(|j| order + j).collect();
    let split = |v: &[f64], orders: &[usize]| -> Vec<TensorField> {
        let mut off = 0;
        orders
            .iter()
            .map(|&o| {
                let n = grid.pixels() * tensor::components(o);
                let f = TensorField::from_data(grid, o, v[off..off + n].to_vec()).expect("finite");
                off += n;
                f
            })
            .collect()
    };
    let n: usize = primal_orders.iter().map(|&o| grid.pixels() * tensor::components(o)).sum();
    let est = power_iteration(
        n,
        |x| {
            let xs = split(x, &primal_orders);
            let mut out = Vec::new();
            for j in 1..=q {
                let mut r = TensorField::zeros(grid, order + j);
                weighted_grad_into(Some(weights.level(j)), &xs[j - 1], r.data_mut());
                if j < q {
                    r.axpy(-1.0, &xs[j]);
                }
                out.extend(r.into_data());
            }
            out
        },
        |y| {
            let ws = split(y, &dual_orders);
            let mut out = Vec::new();
            for j in 0..q {
                // adjoint on x_j: -div_{M_{j+1}} w_{j+1} - w_j (w_0 absent)
                let mut r = TensorField::zeros(grid, order + j);
                weighted_div_into(Some(weights.level(j + 1)), &ws[j], r.data_mut());
                r.scale(-1.0);
                if j > 0 {
                    r.axpy(-1.0, &ws[j - 1]);
                }
                out.extend(r.into_data());
            }
            out
        },
        POWER_ITERS,
    );
    est * 1.01
}

/// One entry of the convergence log.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub primal_energy: f64,
    pub gap: f64,
}

/// Iterates, step sizes and the convergence log of a solve.
#[derive(Debug, Clone)]
pub struct SolveState {
    pub u: TensorField,
    pub z: CascadeVariables,
    pub dual: Vec<TensorField>,
    pub tau: f64,
    pub sigma: f64,
    pub operator_norm: f64,
    pub history: Vec<HistoryEntry>,
    pub iterations: usize,
    pub converged: bool,
    /// Number of logged energy increases beyond `1e-10` relative after
    /// burn-in.
    pub energy_increases: usize,
}

impl SolveState {
    pub fn final_energy(&self) -> Option<f64> {
        self.history.last().map(|h| h.primal_energy)
    }

    pub fn final_gap(&self) -> Option<f64> {
        self.history.last().map(|h| h.gap)
    }
}

/// Chambolle-Pock iteration on the cascade saddle problem.
pub struct PrimalDual<'a> {
    problem: CascadeProblem<'a>,
    grid: Grid,
    order: usize,
    /// `x[0] = u`, `x[j] = z_j`.
    x: Vec<TensorField>,
    x_bar: Vec<TensorField>,
    w: Vec<TensorField>,
    tau: f64,
    sigma: f64,
    norm: f64,
    iterations: usize,
}

impl<'a> PrimalDual<'a> {
    /// Zero dual, `z = 0`, `u = f`; steps `τ = σ = 1/L`.
    pub fn new(problem: CascadeProblem<'a>) -> Result<Self> {
        let grid = problem.image.grid();
        let order = problem.image.order();
        let q = problem.weights.order();
        let norm = estimate_operator_norm(problem.weights, grid, order);
        let mut x = vec![problem.image.clone()];
        x.extend((1..q).map(|j| TensorField::zeros(grid, order + j)));
        let w = (1..=q).map(|j| TensorField::zeros(grid, order + j)).collect();
        let step = 1.0 / norm;
        Ok(PrimalDual {
            problem,
            grid,
            order,
            x_bar: x.clone(),
            x,
            w,
            tau: step,
            sigma: step,
            norm,
            iterations: 0,
        })
    }

    /// Continues from a previous state of the same problem.
    pub fn resume(problem: CascadeProblem<'a>, state: &SolveState) -> Result<Self> {
        let mut pd = Self::new(problem)?;
        if !state.u.same_shape(&pd.x[0]) || state.z.len() + 1 != pd.x.len() || state.dual.len() != pd.w.len() {
            return Err(TdvError::Dimension("state does not match the problem".into()));
        }
        pd.x[0] = state.u.clone();
        for (dst, src) in pd.x[1..].iter_mut().zip(state.z.fields()) {
            *dst = src.clone();
        }
        pd.x_bar = pd.x.clone();
        pd.w = state.dual.clone();
        pd.tau = state.tau;
        pd.sigma = state.sigma;
        pd.iterations = state.iterations;
        Ok(pd)
    }

    pub fn u(&self) -> &TensorField {
        &self.x[0]
    }

    pub fn cascade(&self) -> &[TensorField] {
        &self.x[1..]
    }

    pub fn dual(&self) -> &[TensorField] {
        &self.w
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn steps(&self) -> (f64, f64) {
        (self.tau, self.sigma)
    }

    pub fn operator_norm(&self) -> f64 {
        self.norm
    }

    fn q(&self) -> usize {
        self.w.len()
    }

    /// `K(x)_j = M_j∇x_{j-1} - x_j` for `j = 1..=Q` (1-based).
    fn residual(&self, x: &[TensorField], j: usize) -> TensorField {
        let mut r = TensorField::zeros(self.grid, self.order + j);
        weighted_grad_into(Some(self.problem.weights.level(j)), &x[j - 1], r.data_mut());
        if j < self.q() {
            r.axpy(-1.0, &x[j]);
        }
        r
    }

    /// One primal-dual iteration.
    pub fn step(&mut self) {
        let q = self.q();
        for j in 1..=q {
            let r = self.residual(&self.x_bar, j);
            let w = &mut self.w[j - 1];
            w.axpy(self.sigma, &r);
            project_dual_boundary(self.problem.weights.level(j), w);
            w.project_pointwise(self.problem.alpha.level_weight(j));
        }

        let old = self.x.clone();
        let mut scratch = Vec::new();
        for j in 0..q {
            // x_j ← x_j - τ(Kᵀw)_j with (Kᵀw)_j = -div_{M_{j+1}} w_{j+1} - w_j.
            scratch.clear();
            scratch.resize(self.x[j].data().len(), 0.0);
            weighted_div_into(Some(self.problem.weights.level(j + 1)), &self.w[j], &mut scratch);
            let xj = self.x[j].data_mut();
            for (v, d) in xj.iter_mut().zip(&scratch) {
                *v += self.tau * d;
            }
            if j > 0 {
                self.x[j].axpy(self.tau, &self.w[j - 1]);
            }
        }
        self.prox_data();
        for j in 0..q {
            self.x_bar[j] = self.x[j].lincomb(2.0, &old[j], -1.0);
        }
        self.iterations += 1;
    }

    fn prox_data(&mut self) {
        match self.problem.data {
            DataTerm::Fixed(u0) => self.x[0] = u0.clone(),
            DataTerm::Quadratic(p) => {
                let tl = self.tau * p.fidelity_weight;
                let n = self.x[0].components();
                let mask = p.mask();
                let f = p.data.data();
                for (i, v) in self.x[0].data_mut().iter_mut().enumerate() {
                    if mask.is_none_or(|m| m[i / n] != 0.0) {
                        *v += tl / (1.0 + tl) * (f[i] - *v);
                    }
                }
            }
        }
    }

    /// Unscaled primal objective at the current iterate.
    fn primal_sum(&self) -> f64 {
        let mut total = 0.0;
        for j in 1..=self.q() {
            let mut r = self.residual(&self.x, j);
            project_dual_boundary(self.problem.weights.level(j), &mut r);
            let s: f64 = r.data().chunks_exact(r.components()).map(tensor::block_norm).sum();
            total += self.problem.alpha.level_weight(j) * s;
        }
        if let DataTerm::Quadratic(p) = self.problem.data {
            total += p.fidelity_sum(&self.x[0]);
        }
        total
    }

    /// Unscaled dual lower bound.
    ///
    /// The top dual field generates the chain `v_j = P_j(-div_{M_{j+1}} v_{j+1})`
    /// with `P_j` the boundary projection of level `j`. Away from the border
    /// it annihilates the `z` block of `Kᵀ`; the remaining discrepancy is
    /// charged against the box `|z_j| <= R_j`, `R_j = 2 max(1, ‖z_j‖_∞)`. The
    /// chain is then scaled by the best factor inside the balls.
    fn dual_sum(&self) -> f64 {
        let q = self.q();
        let weights = self.problem.weights;
        let mut top = self.w[q - 1].clone();
        project_dual_boundary(weights.level(q), &mut top);
        let mut chain = vec![top];
        let mut penalty = 0.0;
        for j in (1..q).rev() {
            let mut v = TensorField::zeros(self.grid, self.order + j);
            weighted_div_into(Some(weights.level(j + 1)), &chain[0], v.data_mut());
            v.scale(-1.0);
            let raw = v.clone();
            project_dual_boundary(weights.level(j), &mut v);
            let d = raw.sub(&v);
            let radius = 2.0 * self.x[j].sup_norm().max(1.0);
            penalty += radius * d.data().chunks_exact(d.components()).map(tensor::block_norm).sum::<f64>();
            chain.insert(0, v);
        }
        let mut s_max = f64::INFINITY;
        for (jm1, v) in chain.iter().enumerate() {
            let sup = v.sup_norm();
            if sup > 0.0 {
                s_max = s_max.min(self.problem.alpha.level_weight(jm1 + 1) / sup);
            }
        }
        if !s_max.is_finite() {
            // Every chain field vanishes: D(0) = 0.
            return 0.0;
        }
        // g = (Kᵀv)_u = -div_{M_1} v_1
        let mut g = TensorField::zeros(self.grid, self.order);
        weighted_div_into(Some(weights.level(1)), &chain[0], g.data_mut());
        g.scale(-1.0);
        // D(s) = s·A - s²·B + (box terms) - |s|·penalty over |s| <= s_max.
        let (a, b, c_pos, c_neg) = match self.problem.data {
            DataTerm::Fixed(u0) => {
                let lin: f64 = g.data().iter().zip(u0.data()).map(|(a, b)| a * b).sum();
                (lin, 0.0, 0.0, 0.0)
            }
            DataTerm::Quadratic(p) => {
                let n = g.components();
                let mask = p.mask();
                let f = p.data.data();
                let (lo, hi) = self.unobserved_box(p);
                let (mut a, mut b, mut c_neg, mut c_pos) = (0.0, 0.0, 0.0, 0.0);
                for (i, gi) in g.data().iter().enumerate() {
                    if mask.is_none_or(|m| m[i / n] != 0.0) {
                        a += gi * f[i];
                        b += gi * gi / (2.0 * p.fidelity_weight);
                    } else {
                        // min over u ∈ [lo, hi] of s·g·u, for s > 0 and s < 0
                        c_pos += (gi * lo).min(gi * hi);
                        c_neg += (-gi * lo).min(-gi * hi);
                    }
                }
                (a, b, c_pos, c_neg)
            }
        };
        let best_on = |sign: f64| {
            let lin = if sign > 0.0 { a + c_pos } else { -a + c_neg } - penalty;
            let t = if b > 0.0 {
                (lin / (2.0 * b)).clamp(0.0, s_max)
            } else if lin > 0.0 {
                s_max
            } else {
                0.0
            };
            t * lin - t * t * b
        };
        best_on(1.0).max(best_on(-1.0))
    }

    /// Bounds for unobserved pixels used by the restricted dual of masked
    /// problems.
    fn unobserved_box(&self, p: &Problem) -> (f64, f64) {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in p.data.data().iter().chain(self.x[0].data()) {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        let span = (hi - lo).max(1e-12);
        (lo - span, hi + span)
    }

    /// Primal energy and dual bound including the area factor.
    pub fn gap_estimate(&self) -> GapEstimate {
        let area = self.grid.cell_area();
        let primal = area * self.primal_sum();
        let dual = area * self.dual_sum();
        GapEstimate {
            primal,
            dual,
            gap: normalised_gap(primal, dual),
        }
    }

    fn into_state(self, history: Vec<HistoryEntry>, converged: bool, energy_increases: usize) -> SolveState {
        let mut x = self.x.into_iter();
        let u = x.next().expect("u present");
        SolveState {
            u,
            z: CascadeVariables::new(x.collect()).expect("orders ascend"),
            dual: self.w,
            tau: self.tau,
            sigma: self.sigma,
            operator_norm: self.norm,
            history,
            iterations: self.iterations,
            converged,
            energy_increases,
        }
    }
}

fn check_run_args(max_iters: usize, gap_tol: f64) -> Result<()> {
    if max_iters == 0 {
        return Err(TdvError::Parameter("iteration cap must be at least 1".into()));
    }
    if !(gap_tol > 0.0) {
        return Err(TdvError::Parameter(format!("gap tolerance must be positive, got {gap_tol}")));
    }
    Ok(())
}

/// Solves the problem from `u = f`, `z = 0`, zero dual.
///
/// Stops once the gap estimate (evaluated every [`GAP_INTERVAL`] iterations)
/// drops to `gap_tol`, or after `max_iters`; in the latter case the result is
/// returned with `converged == false`.
pub fn solve(problem: &Problem, max_iters: usize, gap_tol: f64) -> Result<(TensorField, SolveState)> {
    check_run_args(max_iters, gap_tol)?;
    let pd = PrimalDual::new(CascadeProblem::regularised(problem))?;
    run(pd, max_iters, gap_tol)
}

/// Continues a previous solve for up to `max_iters` further iterations.
pub fn solve_from(
    problem: &Problem,
    state: &SolveState,
    max_iters: usize,
    gap_tol: f64,
) -> Result<(TensorField, SolveState)> {
    check_run_args(max_iters, gap_tol)?;
    let pd = PrimalDual::resume(CascadeProblem::regularised(problem), state)?;
    let (u, mut next) = run(pd, max_iters, gap_tol)?;
    let mut history = state.history.clone();
    history.append(&mut next.history);
    next.history = history;
    Ok((u, next))
}

fn run(mut pd: PrimalDual<'_>, max_iters: usize, gap_tol: f64) -> Result<(TensorField, SolveState)> {
    let start = pd.iterations();
    let burn_in = start + (max_iters / 10).max(5 * GAP_INTERVAL);
    let mut history: Vec<HistoryEntry> = Vec::new();
    let mut converged = false;
    let mut increases = 0;
    for k in 1..=max_iters {
        pd.step();
        if k % GAP_INTERVAL == 0 || k == max_iters {
            let est = pd.gap_estimate();
            if let Some(prev) = history.last() {
                let rise = est.primal - prev.primal_energy;
                if pd.iterations() > burn_in && rise > 1e-10 * prev.primal_energy.abs().max(1.0) {
                    increases += 1;
                }
            }
            history.push(HistoryEntry {
                iteration: pd.iterations(),
                primal_energy: est.primal,
                gap: est.gap,
            });
            if est.gap <= gap_tol {
                converged = true;
                break;
            }
        }
    }
    if increases > 0 {
        warn!("primal energy rose {increases} time(s) after burn-in");
    }
    if let Some(last) = history.last() {
        debug!(
            "solve stopped at iteration {} with energy {:.6e} and gap {:.3e}",
            last.iteration, last.primal_energy, last.gap
        );
    }
    let state = pd.into_state(history, converged, increases);
    Ok((state.u.clone(), state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anisotropy::{rotation_contraction_field, WeightField};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(h: usize, w: usize) -> Grid {
        Grid::new(h, w).unwrap()
    }

    fn alpha(v: &[f64]) -> AlphaVector {
        AlphaVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn problem_validation() {
        let g = grid(3, 3);
        let f = TensorField::zeros(g, 0);
        let w = WeightCollection::identity(g, 2).unwrap();
        assert!(Problem::denoise(f.clone(), w.clone(), alpha(&[1.0]), 1.0).is_err());
        assert!(Problem::denoise(f.clone(), w.clone(), alpha(&[1.0, 1.0]), 0.0).is_err());
        let bad_mask = TensorField::constant(g, 0, &[0.5]).unwrap();
        assert!(Problem::new(f.clone(), ForwardOp::Mask(bad_mask), w.clone(), alpha(&[1.0, 1.0]), 1.0).is_err());
        let p = Problem::denoise(f, w, alpha(&[1.0, 1.0]), 1.0).unwrap();
        assert!(solve(&p, 0, 1e-3).is_err());
        assert!(solve(&p, 10, 0.0).is_err());
    }

    #[test]
    fn norm_bound_first_order_one_dimensional() {
        let g = grid(1, 32);
        let l = estimate_operator_norm(&WeightCollection::identity(g, 1).unwrap(), g, 0);
        assert!(l <= 2.0 * 1.01 + 1e-12, "{l}");
        assert!(l > 1.9);
    }

    #[test]
    fn norm_scales_with_weight() {
        let g = grid(6, 6);
        let l1 = estimate_operator_norm(&WeightCollection::identity(g, 1).unwrap(), g, 0);
        let two = WeightField::uniform(g, [2.0, 0.0, 0.0, 2.0]).unwrap();
        let l2 = estimate_operator_norm(&WeightCollection::repeated(two, 1).unwrap(), g, 0);
        approx::assert_relative_eq!(l2, 2.0 * l1, max_relative = 1e-3);
    }

    #[test]
    fn energy_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let g = Grid::with_spacing(4, 5, 0.5).unwrap();
        let f = TensorField::random(g, 0, &mut rng);
        let u = TensorField::random(g, 0, &mut rng);
        let m = rotation_contraction_field(g, 0.4, 0.5).unwrap();
        let w = WeightCollection::repeated(m.clone(), 1).unwrap();
        let p = Problem::denoise(f.clone(), w, alpha(&[0.3]), 2.0).unwrap();
        let e = energy(&p, &u, &CascadeVariables::zeros(g, 0, 1)).unwrap();
        let reg = 0.3 * crate::diff::residual_norm(&m, &crate::diff::weighted_grad(&m, &u).unwrap());
        let diff = u.sub(&f);
        let fid = 0.5 * 2.0 * tensor::inner(&diff, &diff).unwrap();
        approx::assert_relative_eq!(e, reg + fid, max_relative = 1e-13);
        let zero = TensorField::zeros(g, 0);
        let p0 = Problem::denoise(zero.clone(), WeightCollection::identity(g, 1).unwrap(), alpha(&[1.0]), 1.0).unwrap();
        assert_eq!(energy(&p0, &zero, &CascadeVariables::zeros(g, 0, 1)).unwrap(), 0.0);
    }

    #[test]
    fn constant_data_is_returned() {
        let g = grid(6, 7);
        let f = TensorField::constant(g, 0, &[0.42]).unwrap();
        let w = WeightCollection::repeated(rotation_contraction_field(g, 0.3, 0.5).unwrap(), 2).unwrap();
        let p = Problem::denoise(f.clone(), w, alpha(&[1.0, 2.0]), 1.0).unwrap();
        let (u, state) = solve(&p, 100, 1e-8).unwrap();
        assert!(state.converged);
        assert_eq!(u, f);
    }

    #[test]
    fn large_fidelity_weight_reproduces_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = grid(8, 8);
        let f = TensorField::random(g, 0, &mut rng);
        let p = Problem::denoise(f.clone(), WeightCollection::identity(g, 1).unwrap(), alpha(&[1.0]), 1e6).unwrap();
        let (u, _) = solve(&p, 2000, 1e-9).unwrap();
        let rel = tensor::l2_norm(&u.sub(&f)) / tensor::l2_norm(&f);
        assert!(rel <= 1e-3, "{rel}");
    }

    #[test]
    fn gap_bounds_bracket_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let g = grid(6, 6);
        let f = TensorField::random(g, 0, &mut rng);
        let w = WeightCollection::identity(g, 2).unwrap();
        let p = Problem::denoise(f.clone(), w, alpha(&[0.5, 0.3]), 1.0).unwrap();
        let mut pd = PrimalDual::new(CascadeProblem::regularised(&p)).unwrap();
        for _ in 0..500 {
            pd.step();
        }
        let est = pd.gap_estimate();
        assert!(est.dual <= est.primal);
        let (_, state) = solve(&p, 20000, 1e-7).unwrap();
        assert!(state.converged);
        let e = state.final_energy().unwrap();
        assert!(est.dual <= e + 1e-9 && e <= est.primal + 1e-9);
    }

    #[test]
    fn history_is_strictly_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let g = grid(5, 5);
        let f = TensorField::random(g, 0, &mut rng);
        let p = Problem::denoise(f, WeightCollection::identity(g, 2).unwrap(), alpha(&[1.0, 1.0]), 1.0).unwrap();
        let (_, state) = solve(&p, 95, 1e-14).unwrap();
        assert!(!state.converged);
        assert_eq!(state.iterations, 95);
        assert!(state.history.windows(2).all(|h| h[0].iteration < h[1].iteration));
        assert_eq!(state.history.last().unwrap().iteration, 95);
        assert!(state.tau * state.sigma * state.operator_norm.powi(2) <= 1.0 + 1e-12);
    }

    #[test]
    fn inpainting_keeps_observed_pixels() {
        let g = grid(8, 8);
        let f = TensorField::scalar_fn(g, |r, c| 0.1 * c as f64 + 0.05 * r as f64);
        let mask = TensorField::scalar_fn(g, |r, c| if (r + 2 * c) % 3 == 0 { 0.0 } else { 1.0 });
        let p = Problem::new(
            f.clone(),
            ForwardOp::Mask(mask.clone()),
            WeightCollection::identity(g, 2).unwrap(),
            alpha(&[1.0, 1.0]),
            1e4,
        )
        .unwrap();
        let (u, _) = solve(&p, 20000, 1e-8).unwrap();
        for (i, m) in mask.data().iter().enumerate() {
            let tol = if *m == 1.0 { 1e-4 } else { 1e-2 };
            assert!((u.data()[i] - f.data()[i]).abs() <= tol, "pixel {i}");
        }
    }
}
