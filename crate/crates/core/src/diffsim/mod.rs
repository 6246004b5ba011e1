//! Adjoint differentiation of converged quasistatic states.
//!
//! At an equilibrium `∇_u E(u, θ) (+ ∇B(u)) = 0` the loss gradient is
//! `dL/dθ = −λᵀ ∂(∇_u E)/∂θ` with `H λ = dL/du`, where `H` is the Hessian of
//! the total objective. Only actuation tensors and bone targets enter `E`
//! explicitly; the barrier and lagged friction depend on `u` alone.

use nalgebra::{DVector, Matrix3, Vector3};
use rayon::prelude::*;

use crate::contact::{assemble_barrier, collect_pairs, friction_assembly, ContactOptions, ContactProxy, ProxyHessian};
use crate::error::{Error, Result};
use crate::geom::QUADRATURE_POINTS;
use crate::linalg::pcg;
use crate::math::{symmetrize, PolarSvd};
use crate::pd::{ConstraintBlocks, EnergyHessian, GlobalOperator, HessianMode, SimState};

mod gradcheck;

pub use gradcheck::{
    actuation_param_id, bone_param_id, gradcheck, GradcheckConfig, GradcheckEntry, GradcheckReport, Loss,
    VertexTargetLoss,
};

/// Required relative residual of the adjoint system.
pub const ADJOINT_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointOptions {
    pub mode: HessianMode,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self {
            mode: HessianMode::Exact,
            cg_tol: 1e-10,
            cg_max_iters: 5000,
        }
    }
}

/// Contact terms to include in the adjoint system.
#[derive(Debug, Clone, Copy)]
pub struct ContactTerms<'a> {
    pub proxy: &'a ContactProxy,
    pub opts: &'a ContactOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    pub lambda: DVector<f64>,
    pub dl_du: DVector<f64>,
    pub include_contact: bool,
    /// Achieved `‖H λ − dL/du‖ / ‖dL/du‖`.
    pub residual: f64,
}

/// Barrier (unprojected) and friction Hessians at `u`.
fn contact_hessian(terms: &ContactTerms<'_>, u: &DVector<f64>) -> Result<ProxyHessian> {
    let p = terms.proxy.positions(u);
    let set = collect_pairs(terms.proxy, &p, terms.opts.params.dhat)?;
    let mut h = assemble_barrier(&set, terms.proxy, &p, u.len(), terms.opts.params.kappa)?.exact_hessian;
    if let Some(lagged) = &terms.opts.friction {
        h.extend(friction_assembly(lagged, terms.proxy, u).hessian);
    }
    Ok(h)
}

/// Solves `(∇²E + [∇²B]) λ = dL/du` by CG preconditioned with the factorized
/// `K`, the forward solve's preconditioner.
pub fn adjoint_solve(
    state: &SimState,
    blocks: &ConstraintBlocks,
    k: &GlobalOperator,
    contact: Option<ContactTerms<'_>>,
    dl_du: &DVector<f64>,
    opts: &AdjointOptions,
) -> Result<AdjointState> {
    if !state.converged {
        return Err(Error::NotConverged(state.grad_norm));
    }
    if dl_du.len() != blocks.dof() {
        return Err(Error::SizeMismatch {
            expected: blocks.dof(),
            got: dl_du.len(),
        });
    }
    let include_contact = contact.is_some();
    let norm = dl_du.norm();
    if norm == 0.0 {
        return Ok(AdjointState {
            lambda: DVector::zeros(dl_du.len()),
            dl_du: dl_du.clone(),
            include_contact,
            residual: 0.0,
        });
    }
    let hess = EnergyHessian::new(blocks, k, &state.u, opts.mode)?;
    let hb = match &contact {
        Some(terms) => contact_hessian(terms, &state.u)?,
        None => ProxyHessian::default(),
    };
    let apply = |v: &DVector<f64>| match &contact {
        Some(terms) if !hb.is_empty() => hess.apply(v) + hb.apply(terms.proxy, v),
        _ => hess.apply(v),
    };
    let (lambda, _) = pcg(apply, |r| k.solve(r), dl_du, None, opts.cg_tol, opts.cg_max_iters)?;
    let residual = (apply(&lambda) - dl_du).norm() / norm;
    if residual >= ADJOINT_RESIDUAL_TOL {
        return Err(Error::CgNotConverged {
            iterations: opts.cg_max_iters,
            residual,
        });
    }
    Ok(AdjointState {
        lambda,
        dl_du: dl_du.clone(),
        include_contact,
        residual,
    })
}

/// `dL/dA_e = Σ_q ω w_q sym(R_qᵀ Λ_q + F_qᵀ dR*(Λ_q A_e))` with `Λ_q = G_q λ`,
/// the contraction of `−λᵀ ∂(∇_u E)/∂A_e`.
pub fn grad_wrt_actuation(adjoint: &AdjointState, blocks: &ConstraintBlocks, u: &DVector<f64>) -> Result<Vec<Matrix3<f64>>> {
    let stencils = blocks.stencils();
    blocks
        .shape
        .par_iter()
        .map(|b| {
            let fs = blocks.gradients(b, u);
            let ls = blocks.gradients(b, &adjoint.lambda);
            let mut g = Matrix3::zeros();
            for q in 0..QUADRATURE_POINTS {
                let svd = PolarSvd::new(&(fs[q] * b.actuation))?;
                let lam = ls[q];
                g += (svd.rotation.transpose() * lam
                    + fs[q].transpose() * svd.rotation_differential_adjoint(&(lam * b.actuation)))
                    * (b.weight * stencils[q].1);
            }
            Ok(symmetrize(&g))
        })
        .collect()
}

/// `dL/dy_b = ω_b W_b λ`.
pub fn grad_wrt_bone_targets(adjoint: &AdjointState, blocks: &ConstraintBlocks) -> Vec<Vector3<f64>> {
    blocks
        .bone
        .iter()
        .map(|b| b.position(&adjoint.lambda) * b.weight)
        .collect()
}
