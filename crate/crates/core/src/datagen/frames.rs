use nalgebra::{DVector, Matrix3, Vector3};
use rayon::prelude::*;

use super::identity::{StyleParams, SyntheticIdentity};
use super::muscles::{canonical_actuation, jaw_transform, muscle_set};
use crate::canonical::WarpCache;
use crate::contact::{ContactOptions, ContactParams};
use crate::error::{Error, Result};
use crate::geom::vertex_normals;
use crate::math::RigidTransform;
use crate::pd::{ActuationField, SolveOptions};

/// Solver tolerance for ground-truth frames; tight enough that a re-solve
/// reproduces the stored surface far below 1e-6 of the scene size.
pub const GROUND_TRUTH_TOL: f64 = 1e-10;
const GROUND_TRUTH_ITERS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthFrame {
    /// Index of the expression in the dataset's code list.
    pub code: usize,
    pub expr: DVector<f64>,
    /// Warped (material-frame) actuation per element.
    pub actuation: ActuationField,
    pub jaw: RigidTransform,
    pub surface: Vec<Vector3<f64>>,
    pub contact: bool,
}

impl GroundTruthFrame {
    pub fn normals(&self, triangles: &[[usize; 3]]) -> Vec<Vector3<f64>> {
        vertex_normals(&self.surface, triangles)
    }
}

/// Options shared by every frame of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Contact parameters for frames simulated with contact; `None` uses
    /// the scene default.
    pub contact: Option<ContactParams>,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self {
            tol: GROUND_TRUTH_TOL,
            max_iters: GROUND_TRUTH_ITERS,
            contact: None,
        }
    }
}

/// Canonical (unwarped) ground-truth tensors at the cache's canonical points.
pub fn canonical_field(id: &SyntheticIdentity, style: &StyleParams, expr: &DVector<f64>, warp: &WarpCache) -> Vec<Matrix3<f64>> {
    let muscles = muscle_set(&id.template);
    warp.canonical.iter().map(|x| canonical_actuation(&muscles, style, expr, x)).collect()
}

/// Simulates `expr` on `id`'s geometry with the given style (the identity's
/// own style for ordinary frames, another identity's for cross-combination
/// ground truth).
pub fn make_ground_truth_with_style(
    id: &SyntheticIdentity,
    warp: &WarpCache,
    style: &StyleParams,
    code: usize,
    expr: &DVector<f64>,
    contact: bool,
    opts: &FrameOptions,
) -> Result<GroundTruthFrame> {
    let muscles = muscle_set(&id.template).len();
    if expr.len() != muscles + 1 {
        return Err(Error::SizeMismatch {
            expected: muscles + 1,
            got: expr.len(),
        });
    }
    let field = warp.warp(&canonical_field(id, style, expr, warp))?;
    let jaw = jaw_transform(muscles, style, expr);
    let surface = simulate_surface(id, &field, &jaw, contact, opts)?;
    Ok(GroundTruthFrame {
        code,
        expr: expr.clone(),
        actuation: field,
        jaw,
        surface,
        contact,
    })
}

pub fn make_ground_truth(
    id: &SyntheticIdentity,
    warp: &WarpCache,
    code: usize,
    expr: &DVector<f64>,
    contact: bool,
    opts: &FrameOptions,
) -> Result<GroundTruthFrame> {
    make_ground_truth_with_style(id, warp, &id.style, code, expr, contact, opts)
}

/// Forward solve of stored constraints; returns the embedded surface.
pub fn simulate_surface(
    id: &SyntheticIdentity,
    field: &ActuationField,
    jaw: &RigidTransform,
    contact: bool,
    opts: &FrameOptions,
) -> Result<Vec<Vector3<f64>>> {
    let mut scene = id.scene.clone();
    scene.set_actuation(field)?;
    scene.set_jaw(jaw)?;
    let solve = SolveOptions {
        tol: opts.tol,
        max_iters: opts.max_iters,
    };
    let u = if contact {
        let mut co = ContactOptions::new(opts.contact.unwrap_or_else(|| scene.contact_params()));
        co.solve = solve;
        let s = scene.solve_contact(&co)?;
        if !s.sim.converged {
            return Err(Error::NotConverged(s.sim.grad_norm));
        }
        s.sim.u
    } else {
        let s = scene.solve(&solve)?;
        if !s.converged {
            return Err(Error::NotConverged(s.grad_norm));
        }
        s.u
    };
    Ok(scene.proxy.embedding.apply_flat(&u))
}

/// Frames for every code, in code order; frames are independent and solved
/// in parallel.
pub fn make_frames(
    id: &SyntheticIdentity,
    codes: &[DVector<f64>],
    contact_codes: &[usize],
    opts: &FrameOptions,
) -> Result<Vec<GroundTruthFrame>> {
    let warp = id.exact_warp()?;
    codes
        .par_iter()
        .enumerate()
        .map(|(i, e)| make_ground_truth(id, &warp, i, e, contact_codes.contains(&i), opts))
        .collect()
}

/// Rest positions of the surface, for displacement statistics.
pub fn rest_positions(id: &SyntheticIdentity) -> Vec<Vector3<f64>> {
    id.scene.proxy.embedding.apply_flat(&id.scene.rest)
}
