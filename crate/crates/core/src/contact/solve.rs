use std::fmt;

use nalgebra::DVector;

use super::assemble::{assemble_barrier, barrier_energy, BarrierAssembly};
use super::ccd::ccd_max_step;
use super::friction::{friction_assembly, LaggedFriction};
use super::proxy::{collect_pairs, min_pair_distance, ContactProxy};
use crate::error::{Error, Result};
use crate::linalg::pcg;
use crate::pd::{
    energy, energy_with_rotations, global_rhs, global_step, gradient_with_rotations, local_step, ConstraintBlocks,
    EnergyHessian, GlobalOperator, HessianMode, QuadRotations, SimState, SolveOptions, SweepRecord,
};

/// Smallest step the line search may try before giving up.
pub const MIN_ALPHA: f64 = 1e-8;
/// Absolute slack on objective decrease, absorbing rounding.
const DECREASE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactParams {
    /// Activation distance `d̂`.
    pub dhat: f64,
    /// Barrier stiffness multiplying every pair potential.
    pub kappa: f64,
}

impl ContactParams {
    /// `d̂ = 0.001 l` for scene diameter `l`, unit stiffness.
    pub fn for_diameter(l: f64) -> Self {
        Self {
            dhat: 1e-3 * l,
            kappa: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContactOptions {
    pub solve: SolveOptions,
    pub params: ContactParams,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub friction: Option<LaggedFriction>,
    /// Audit every accepted iterate with an exhaustive all-pairs distance.
    pub exhaustive_audit: bool,
}

impl ContactOptions {
    pub fn new(params: ContactParams) -> Self {
        Self {
            solve: SolveOptions::default(),
            params,
            cg_tol: 1e-8,
            cg_max_iters: 2000,
            friction: None,
            exhaustive_audit: false,
        }
    }
}

/// One accepted iterate of the contact solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditRecord {
    pub sweep: usize,
    /// Smallest pair distance at the accepted iterate (infinite when no
    /// pair is within reach of the audit).
    pub min_distance: f64,
    pub pair_count: usize,
    /// CG iterations of the step's linear solve (0 for a direct solve).
    pub cg_iterations: usize,
    pub alpha: f64,
    pub energy: f64,
    pub barrier: f64,
}

impl AuditRecord {
    pub const HEADER: &'static str = "sweep,min_distance,pair_count,alpha,E,B";
}

impl fmt::Display for AuditRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{:.9e},{},{:.6e},{:.12e},{:.12e}",
            self.sweep, self.min_distance, self.pair_count, self.alpha, self.energy, self.barrier
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactState {
    pub sim: SimState,
    pub barrier: f64,
    pub friction: f64,
    pub audit: Vec<AuditRecord>,
}

impl ContactState {
    pub fn objective(&self) -> f64 {
        self.sim.energy + self.barrier + self.friction
    }

    pub fn audit_csv(&self) -> String {
        let mut s = String::from(AuditRecord::HEADER);
        s.push('\n');
        for r in &self.audit {
            s.push_str(&r.to_string());
            s.push('\n');
        }
        s
    }
}

/// Solves `(∇²B + K) u = ∇²B û − ∇B + Σ ω GᵀB y` by PCG preconditioned with
/// the factorized `K`. Without active terms this is exactly the PD global step.
pub fn solve_contact_global(
    k: &GlobalOperator,
    blocks: &ConstraintBlocks,
    rotations: &[QuadRotations],
    proxy: &ContactProxy,
    barrier: &BarrierAssembly,
    u_hat: &DVector<f64>,
    cg_tol: f64,
    cg_max_iters: usize,
) -> Result<DVector<f64>> {
    Ok(contact_global_with_stats(k, blocks, rotations, proxy, barrier, u_hat, cg_tol, cg_max_iters)?.0)
}

/// [`solve_contact_global`] plus the CG iteration count.
#[allow(clippy::too_many_arguments)]
fn contact_global_with_stats(
    k: &GlobalOperator,
    blocks: &ConstraintBlocks,
    rotations: &[QuadRotations],
    proxy: &ContactProxy,
    barrier: &BarrierAssembly,
    u_hat: &DVector<f64>,
    cg_tol: f64,
    cg_max_iters: usize,
) -> Result<(DVector<f64>, usize)> {
    if barrier.hessian.is_empty() && barrier.gradient.iter().all(|&g| g == 0.0) {
        return Ok((global_step(k, blocks, rotations)?, 0));
    }
    let hb = |v: &DVector<f64>| barrier.hessian.apply(proxy, v);
    let rhs = hb(u_hat) - &barrier.gradient + global_rhs(blocks, rotations)?;
    let (u, stats) = pcg(
        |v| k.apply(v) + hb(v),
        |r| k.solve(r),
        &rhs,
        Some(u_hat.clone()),
        cg_tol,
        cg_max_iters,
    )?;
    Ok((u, stats.iterations))
}

/// Barrier plus optional friction terms at `u`.
fn assemble_terms(
    proxy: &ContactProxy,
    u: &DVector<f64>,
    opts: &ContactOptions,
) -> Result<(BarrierAssembly, f64, f64, f64)> {
    let p = proxy.positions(u);
    let set = collect_pairs(proxy, &p, opts.params.dhat)?;
    let mut terms = assemble_barrier(&set, proxy, &p, u.len(), opts.params.kappa)?;
    let barrier = terms.value;
    let mut friction = 0.0;
    if let Some(lagged) = &opts.friction {
        let fa = friction_assembly(lagged, proxy, u);
        friction = fa.value;
        terms.gradient += &fa.gradient;
        terms.hessian.extend(fa.hessian.clone());
        terms.exact_hessian.extend(fa.hessian);
    }
    Ok((terms, barrier, friction, set.min_distance()))
}

/// `E + B + D` at `u`, or `None` when `u` penetrates.
fn objective(blocks: &ConstraintBlocks, proxy: &ContactProxy, u: &DVector<f64>, opts: &ContactOptions) -> Result<Option<(f64, f64, f64)>> {
    let p = proxy.positions(u);
    let b = match barrier_energy(proxy, &p, opts.params.dhat, opts.params.kappa) {
        Ok(b) => b,
        Err(Error::Penetration(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let d = opts.friction.as_ref().map_or(0.0, |l| friction_assembly(l, proxy, u).value);
    Ok(Some((energy(blocks, u)?, b, d)))
}

/// Local step, barrier re-expansion at `û`, contact global solve, CCD step
/// cap and backtracking on `E + B (+ D)`, repeated until the total gradient
/// is below the scaled tolerance.
pub fn solve_quasistatic_contact(
    u0: &DVector<f64>,
    blocks: &ConstraintBlocks,
    k: &GlobalOperator,
    proxy: &ContactProxy,
    opts: &ContactOptions,
) -> Result<ContactState> {
    if u0.len() != blocks.dof() {
        return Err(Error::SizeMismatch {
            expected: blocks.dof(),
            got: u0.len(),
        });
    }
    let threshold = opts.solve.threshold(blocks);
    let mut u = u0.clone();
    let mut trace = Vec::new();
    let mut audit = Vec::new();
    let mut sweep = 0;
    loop {
        sweep += 1;
        let rotations = local_step(blocks, &u)?;
        let e = energy_with_rotations(blocks, &u, &rotations)?;
        if !e.is_finite() {
            return Err(Error::NanEnergy { iteration: sweep });
        }
        let (terms, b, d, _) = assemble_terms(proxy, &u, opts)?;
        let grad = gradient_with_rotations(blocks, &u, &rotations) + &terms.gradient;
        let grad_norm = grad.amax();
        log::debug!("{sweep},{:.12e},{grad_norm:.6e}", e + b + d);
        if grad_norm < threshold || sweep > opts.solve.max_iters {
            return Ok(ContactState {
                sim: SimState {
                    u,
                    converged: grad_norm < threshold,
                    grad_norm,
                    iterations: sweep - 1,
                    energy: e,
                    trace,
                },
                barrier: b,
                friction: d,
                audit,
            });
        }
        let current = e + b + d;
        let (target, cg_iterations) =
            contact_global_with_stats(k, blocks, &rotations, proxy, &terms, &u, opts.cg_tol, opts.cg_max_iters)?;
        let step = &target - &u;
        let p0 = proxy.positions(&u);
        let mut alpha = ccd_max_step(proxy, &p0, &proxy.positions(&target))?;
        let accepted = loop {
            if alpha < MIN_ALPHA {
                return Err(Error::LineSearch { sweep, alpha });
            }
            let trial = &u + &step * alpha;
            if let Some((et, bt, dt)) = objective(blocks, proxy, &trial, opts)? {
                if et + bt + dt <= current + DECREASE_SLACK {
                    break (trial, et, bt, dt);
                }
            }
            alpha *= 0.5;
        };
        let (next, et, bt, dt) = accepted;
        let p_next = proxy.positions(&next);
        let min_distance = if opts.exhaustive_audit {
            min_pair_distance(proxy, &p_next)?
        } else {
            collect_pairs(proxy, &p_next, opts.params.dhat)?.min_distance()
        };
        let record = AuditRecord {
            sweep,
            min_distance,
            pair_count: terms.pair_count,
            cg_iterations,
            alpha,
            energy: et,
            barrier: bt,
        };
        log::debug!("{record}");
        audit.push(record);
        trace.push(SweepRecord {
            iteration: sweep,
            after_local: current,
            after_global: et + bt + dt,
            grad_norm,
        });
        u = next;
    }
}

/// Newton polish of a contact solve on `E + B (+ D)`.
///
/// The direction solves `(∇²E + ∇²B) d = −∇` with exact Hessians, retrying
/// with the projected barrier Hessian and then `(K + ∇²B)` when CG meets
/// negative curvature. Steps are capped by CCD and backtracked to sufficient
/// decrease, so every accepted iterate stays penetration-free.
pub fn newton_refine_contact(
    state: ContactState,
    blocks: &ConstraintBlocks,
    k: &GlobalOperator,
    proxy: &ContactProxy,
    opts: &ContactOptions,
    grad_tol: f64,
    max_iters: usize,
) -> Result<ContactState> {
    let ContactState { sim, mut audit, .. } = state;
    let mut u = sim.u;
    let mut iterations = sim.iterations;
    let mut rotations = local_step(blocks, &u)?;
    let mut e = energy_with_rotations(blocks, &u, &rotations)?;
    let (mut terms, mut b, mut d, _) = assemble_terms(proxy, &u, opts)?;
    let mut g = gradient_with_rotations(blocks, &u, &rotations) + &terms.gradient;
    for _ in 0..max_iters {
        if g.amax() < grad_tol {
            break;
        }
        iterations += 1;
        let hess = EnergyHessian::new(blocks, k, &u, HessianMode::Exact)?;
        let hb = |v: &DVector<f64>| terms.hessian.apply(proxy, v);
        let hb_exact = |v: &DVector<f64>| terms.exact_hessian.apply(proxy, v);
        let rhs = -&g;
        let newton = |apply: &dyn Fn(&DVector<f64>) -> DVector<f64>| {
            pcg(apply, |r| k.solve(r), &rhs, None, 1e-10, opts.cg_max_iters)
                .ok()
                .filter(|(x, _)| x.dot(&g) < 0.0)
        };
        let (direction, cg) = match newton(&|v| hess.apply(v) + hb_exact(v)).or_else(|| newton(&|v| hess.apply(v) + hb(v))) {
            Some(x) => x,
            None => pcg(|v| k.apply(v) + hb(v), |r| k.solve(r), &rhs, None, opts.cg_tol, opts.cg_max_iters)?,
        };
        log::trace!("newton {iterations}: |g| {:.3e}", g.amax());
        let p0 = proxy.positions(&u);
        let mut alpha = ccd_max_step(proxy, &p0, &proxy.positions(&(&u + &direction)))?;
        let slope = direction.dot(&g);
        let current = e + b + d;
        let mut accepted = None;
        while alpha >= MIN_ALPHA {
            let trial = &u + &direction * alpha;
            if let Some((et, bt, dt)) = objective(blocks, proxy, &trial, opts)? {
                let total = et + bt + dt;
                if total <= current + 1e-4 * alpha * slope || (total <= current + DECREASE_SLACK && alpha < 1e-3) {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else { break };
        u = next;
        rotations = local_step(blocks, &u)?;
        e = energy_with_rotations(blocks, &u, &rotations)?;
        let (t, bt, dt, _) = assemble_terms(proxy, &u, opts)?;
        (terms, b, d) = (t, bt, dt);
        g = gradient_with_rotations(blocks, &u, &rotations) + &terms.gradient;
        let p = proxy.positions(&u);
        let min_distance = if opts.exhaustive_audit {
            min_pair_distance(proxy, &p)?
        } else {
            collect_pairs(proxy, &p, opts.params.dhat)?.min_distance()
        };
        let record = AuditRecord {
            sweep: iterations,
            min_distance,
            pair_count: terms.pair_count,
            cg_iterations: cg.iterations,
            alpha,
            energy: e,
            barrier: b,
        };
        log::debug!("{record}");
        audit.push(record);
    }
    let grad_norm = g.amax();
    Ok(ContactState {
        sim: SimState {
            u,
            converged: grad_norm < grad_tol,
            grad_norm,
            iterations,
            energy: e,
            trace: sim.trace,
        },
        barrier: b,
        friction: d,
        audit,
    })
}
