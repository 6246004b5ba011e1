//! Central finite differences through full nonlinear re-solves, compared
//! against the adjoint gradients.

use std::fmt::Write as _;

use nalgebra::{DVector, Vector3};
use rayon::prelude::*;

use super::{adjoint_solve, grad_wrt_actuation, grad_wrt_bone_targets, AdjointOptions, ContactTerms};
use crate::contact::{newton_refine_contact, ContactOptions};
use crate::error::Result;
use crate::pd::{newton_refine, ActuationField, SimState, SolveOptions};
use crate::scenes::Scene;

/// Differentiable scalar objective of the simulated positions.
pub trait Loss: Sync {
    /// Value and gradient with respect to `u`.
    fn eval(&self, u: &DVector<f64>) -> (f64, DVector<f64>);
}

/// Squared distance of one simulation vertex to a target point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VertexTargetLoss {
    pub vertex: usize,
    pub target: Vector3<f64>,
}

impl Loss for VertexTargetLoss {
    fn eval(&self, u: &DVector<f64>) -> (f64, DVector<f64>) {
        let i = 3 * self.vertex;
        let r = Vector3::new(u[i], u[i + 1], u[i + 2]) - self.target;
        let mut g = DVector::zeros(u.len());
        for a in 0..3 {
            g[i + a] = 2.0 * r[a];
        }
        (r.norm_squared(), g)
    }
}

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    /// Central-difference step on actuation entries; bone targets use
    /// `step · h`.
    pub step: f64,
    /// Scaled gradient tolerance of the polished solves.
    pub solve_tol: f64,
    pub contact: Option<ContactOptions>,
    pub adjoint: AdjointOptions,
    pub actuation: bool,
    pub bones: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            solve_tol: 1e-10,
            contact: None,
            adjoint: AdjointOptions::default(),
            actuation: true,
            bones: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    pub param_id: String,
    pub analytic: f64,
    pub fd: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub loss: f64,
}

impl GradcheckReport {
    pub const HEADER: &'static str = "param_id,analytic,fd,rel_err";

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_err).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for e in &self.entries {
            let _ = writeln!(s, "{},{:.12e},{:.12e},{:.6e}", e.param_id, e.analytic, e.fd, e.rel_err);
        }
        s
    }
}

pub fn actuation_param_id(element: usize, i: usize, j: usize) -> String {
    format!("A{element}_{i}{j}")
}

pub fn bone_param_id(point: usize, axis: usize) -> String {
    format!("y{point}_{}", ["x", "y", "z"][axis])
}

/// Upper-triangle entries of a symmetric 3×3 tensor.
const SYM_ENTRIES: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Forward solve polished by Newton to `solve_tol`, warm-started at `u0`.
fn solve_tight(scene: &Scene, u0: &DVector<f64>, cfg: &GradcheckConfig) -> Result<SimState> {
    let tol = SolveOptions {
        tol: cfg.solve_tol,
        ..SolveOptions::default()
    }
    .threshold(&scene.blocks);
    match &cfg.contact {
        None => {
            let s = scene.solve_from(u0, &SolveOptions::default())?;
            newton_refine(s, &scene.blocks, &scene.operator, tol, 100)
        }
        Some(opts) => {
            let s = scene.solve_contact_from(u0, opts)?;
            Ok(newton_refine_contact(s, &scene.blocks, &scene.operator, &scene.proxy, opts, tol, 100)?.sim)
        }
    }
}

/// Compares adjoint gradients of `loss` at the scene's equilibrium with
/// central differences, one full re-solve per perturbed parameter.
pub fn gradcheck(scene: &Scene, loss: &dyn Loss, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let base = solve_tight(scene, &scene.rest, cfg)?;
    let (value, dl_du) = loss.eval(&base.u);
    let contact = cfg.contact.as_ref().map(|opts| ContactTerms {
        proxy: &scene.proxy,
        opts,
    });
    let adj = adjoint_solve(&base, &scene.blocks, &scene.operator, contact, &dl_du, &cfg.adjoint)?;

    enum Param {
        Actuation(usize, usize, usize),
        Bone(usize, usize),
    }
    let mut params = Vec::new();
    let mut analytic = Vec::new();
    if cfg.actuation {
        let ga = grad_wrt_actuation(&adj, &scene.blocks, &base.u)?;
        for (e, g) in ga.iter().enumerate() {
            for &(i, j) in &SYM_ENTRIES {
                params.push(Param::Actuation(e, i, j));
                // a symmetric perturbation moves both mirrored entries
                analytic.push(if i == j { g[(i, j)] } else { 2.0 * g[(i, j)] });
            }
        }
    }
    if cfg.bones {
        for (b, g) in grad_wrt_bone_targets(&adj, &scene.blocks).iter().enumerate() {
            for a in 0..3 {
                params.push(Param::Bone(b, a));
                analytic.push(g[a]);
            }
        }
    }

    let field = scene.blocks.actuation();
    let targets = scene.blocks.bone_targets();
    let fd: Vec<f64> = params
        .par_iter()
        .map(|p| {
            let eval = |sign: f64| -> Result<f64> {
                let mut s = scene.clone();
                match *p {
                    Param::Actuation(e, i, j) => {
                        let mut t = field.tensors().to_vec();
                        t[e][(i, j)] += sign * cfg.step;
                        if i != j {
                            t[e][(j, i)] += sign * cfg.step;
                        }
                        s.blocks.set_actuation(&ActuationField::new(t)?)?;
                    }
                    Param::Bone(b, a) => {
                        let mut y = targets.clone();
                        y[b][a] += sign * cfg.step * scene.blocks.h;
                        s.blocks.set_bone_targets(&y)?;
                    }
                }
                Ok(loss.eval(&solve_tight(&s, &base.u, cfg)?.u).0)
            };
            let h = match p {
                Param::Actuation(..) => cfg.step,
                Param::Bone(..) => cfg.step * scene.blocks.h,
            };
            Ok((eval(1.0)? - eval(-1.0)?) / (2.0 * h))
        })
        .collect::<Result<_>>()?;

    // entries far below the gradient scale are compared against that scale
    let floor = 1e-6 * analytic.iter().fold(0.0f64, |m, a| m.max(a.abs())).max(1e-300);
    let entries = params
        .iter()
        .zip(analytic.iter().zip(&fd))
        .map(|(p, (&a, &f))| GradcheckEntry {
            param_id: match *p {
                Param::Actuation(e, i, j) => actuation_param_id(e, i, j),
                Param::Bone(b, ax) => bone_param_id(b, ax),
            },
            analytic: a,
            fd: f,
            rel_err: (a - f).abs() / a.abs().max(f.abs()).max(floor),
        })
        .collect();
    Ok(GradcheckReport { entries, loss: value })
}
