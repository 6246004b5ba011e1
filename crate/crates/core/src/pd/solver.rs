use nalgebra::DVector;

use super::{
    energy_with_rotations, global_rhs, gradient_with_rotations, project_all, ConstraintBlocks, EnergyHessian,
    GlobalOperator, HessianMode, QuadRotations,
};
use crate::error::{Error, Result};
use crate::linalg::pcg;

/// Relative residual the global solve must reach.
pub const GLOBAL_RESIDUAL_TOL: f64 = 1e-10;
/// Absolute slack allowed when checking energy monotonicity.
pub const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Dimensionless tolerance; the solve stops once
    /// `‖∇E‖_∞ < tol · h · mean(ω)`.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iters: 200,
        }
    }
}

impl SolveOptions {
    pub fn threshold(&self, blocks: &ConstraintBlocks) -> f64 {
        self.tol * blocks.h * blocks.mean_weight()
    }
}

/// Energies around one local/global sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub iteration: usize,
    /// `E(u_k)` after projecting rotations at `u_k`.
    pub after_local: f64,
    /// Surrogate energy after the global solve with those rotations.
    pub after_global: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub u: DVector<f64>,
    pub converged: bool,
    /// `‖∇E‖_∞` at `u`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub energy: f64,
    pub trace: Vec<SweepRecord>,
}

impl SimState {
    /// Largest energy increase over any local or global half-step.
    pub fn max_energy_increase(&self) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (i, r) in self.trace.iter().enumerate() {
            worst = worst.max(r.after_global - r.after_local);
            if i > 0 {
                worst = worst.max(r.after_local - self.trace[i - 1].after_global);
            }
        }
        if let Some(last) = self.trace.last() {
            worst = worst.max(self.energy - last.after_global);
        }
        worst
    }

    pub fn is_monotone(&self) -> bool {
        self.max_energy_increase() <= MONOTONE_SLACK
    }
}

/// Local step: optimal rotations at `u` for every shape-target block. Bone
/// targets are fixed inputs and need no projection.
pub fn local_step(blocks: &ConstraintBlocks, u: &DVector<f64>) -> Result<Vec<QuadRotations>> {
    project_all(blocks, u)
}

/// Global step: solves `K u = Σ ω GᵀB y`.
pub fn global_step(k: &GlobalOperator, blocks: &ConstraintBlocks, rotations: &[QuadRotations]) -> Result<DVector<f64>> {
    let rhs = global_rhs(blocks, rotations)?;
    let mut u = k.solve(&rhs);
    let scale = rhs.norm().max(f64::MIN_POSITIVE);
    let mut residual = &rhs - k.apply(&u);
    for _ in 0..2 {
        if residual.norm() / scale < GLOBAL_RESIDUAL_TOL {
            break;
        }
        u += k.solve(&residual);
        residual = &rhs - k.apply(&u);
    }
    let rel = residual.norm() / scale;
    if !(rel < GLOBAL_RESIDUAL_TOL) && rhs.norm() > 0.0 {
        return Err(Error::Solver(format!("global solve residual {rel:e}")));
    }
    Ok(u)
}

/// Alternates local and global steps until `‖∇E‖_∞` falls below the scaled
/// tolerance or the iteration budget runs out.
pub fn solve_quasistatic(
    u0: &DVector<f64>,
    blocks: &ConstraintBlocks,
    k: &GlobalOperator,
    opts: &SolveOptions,
) -> Result<SimState> {
    if u0.len() != blocks.dof() {
        return Err(Error::SizeMismatch {
            expected: blocks.dof(),
            got: u0.len(),
        });
    }
    if u0.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("initial positions".into()));
    }
    let threshold = opts.threshold(blocks);
    let mut u = u0.clone();
    let mut trace = Vec::new();
    let mut iteration = 0;
    loop {
        iteration += 1;
        let rotations = local_step(blocks, &u)?;
        let e = energy_with_rotations(blocks, &u, &rotations)?;
        if !e.is_finite() {
            return Err(Error::NanEnergy { iteration });
        }
        let grad_norm = gradient_with_rotations(blocks, &u, &rotations).amax();
        log::debug!("{iteration},{e:.12e},{grad_norm:.6e}");
        if let Some(prev) = trace.last().map(|r: &SweepRecord| r.after_global) {
            if e > prev + MONOTONE_SLACK {
                log::warn!("local step raised energy by {:e} at sweep {iteration}", e - prev);
            }
        }
        if grad_norm < threshold || iteration > opts.max_iters {
            return Ok(SimState {
                u,
                converged: grad_norm < threshold,
                grad_norm,
                iterations: iteration - 1,
                energy: e,
                trace,
            });
        }
        let next = global_step(k, blocks, &rotations)?;
        let after = energy_with_rotations(blocks, &next, &rotations)?;
        if after > e + MONOTONE_SLACK {
            log::warn!("global step raised energy by {:e} at sweep {iteration}", after - e);
        }
        trace.push(SweepRecord {
            iteration,
            after_local: e,
            after_global: after,
            grad_norm,
        });
        u = next;
    }
}

/// Newton iterations with the exact energy Hessian, used to drive a PD
/// solution to a much tighter gradient tolerance (absolute, `‖∇E‖_∞`).
///
/// Falls back to the PD direction `−K⁻¹∇E` whenever the Newton system is
/// indefinite or the direction fails to descend.
pub fn newton_refine(
    state: SimState,
    blocks: &ConstraintBlocks,
    k: &GlobalOperator,
    grad_tol: f64,
    max_iters: usize,
) -> Result<SimState> {
    let mut u = state.u;
    let mut trace = state.trace;
    let mut iterations = state.iterations;
    let mut rotations = project_all(blocks, &u)?;
    let mut e = energy_with_rotations(blocks, &u, &rotations)?;
    let mut g = gradient_with_rotations(blocks, &u, &rotations);
    for _ in 0..max_iters {
        if g.amax() < grad_tol {
            break;
        }
        iterations += 1;
        let hess = EnergyHessian::new(blocks, k, &u, HessianMode::Exact)?;
        let rhs = -&g;
        let newton = pcg(|v| hess.apply(v), |r| k.solve(r), &rhs, None, 1e-10, 500)
            .ok()
            .map(|(d, _)| d)
            .filter(|d| d.dot(&g) < 0.0);
        let direction = newton.unwrap_or_else(|| k.solve(&rhs));
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-10 {
            let trial = &u + &direction * alpha;
            let rs = project_all(blocks, &trial)?;
            let et = energy_with_rotations(blocks, &trial, &rs)?;
            if !et.is_finite() {
                return Err(Error::NanEnergy { iteration: iterations });
            }
            if et <= e + 1e-4 * alpha * direction.dot(&g) || (et <= e && alpha < 1e-3) {
                u = trial;
                rotations = rs;
                e = et;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        g = gradient_with_rotations(blocks, &u, &rotations);
        log::debug!("{iterations},{e:.12e},{:.6e}", g.amax());
        if !accepted {
            break;
        }
    }
    let grad_norm = g.amax();
    Ok(SimState {
        converged: grad_norm < grad_tol,
        u,
        grad_norm,
        iterations,
        energy: e,
        trace: std::mem::take(&mut trace),
    })
}
