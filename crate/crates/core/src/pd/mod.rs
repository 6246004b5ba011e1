//! Shape-targeting and bone-attachment constraints, their energy and
//! derivatives, and the Projective Dynamics local/global quasistatic solver.
//!
//! The total energy is
//! `E(u) = Σ_e Σ_q ω_e w_q / 2 ‖F_eq(u) − R_eq A_e‖²_F + Σ_b ω_b / 2 ‖W_b u − y_b‖²`
//! where `R_eq` minimizes each term. Positions are flat `3n` vectors.

mod solver;

pub use solver::{
    global_step, local_step, newton_refine, solve_quasistatic, SimState, SolveOptions, SweepRecord,
};

use nalgebra::{DVector, Matrix3, SMatrix, Vector3};
use nalgebra_sparse::CooMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{quadrature_stencils, Embedding, GradientStencil, HexMesh, QUADRATURE_POINTS};
use crate::linalg::FactoredLaplacian;
use crate::math::{PolarSvd, RigidTransform};

/// Symmetry tolerance for actuation tensors.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Rigidity tolerance for jaw transforms.
pub const RIGIDITY_TOL: f64 = 1e-8;

pub type QuadRotations = [Matrix3<f64>; QUADRATURE_POINTS];

/// Per-element symmetric actuation tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuationField {
    tensors: Vec<Matrix3<f64>>,
}

impl ActuationField {
    pub fn identity(elements: usize) -> Self {
        Self {
            tensors: vec![Matrix3::identity(); elements],
        }
    }

    pub fn new(tensors: Vec<Matrix3<f64>>) -> Result<Self> {
        for (e, a) in tensors.iter().enumerate() {
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("actuation tensor of element {e}")));
            }
            if (a - a.transpose()).norm() >= SYMMETRY_TOL {
                return Err(Error::InvalidArgument(format!(
                    "actuation tensor of element {e} is not symmetric"
                )));
            }
        }
        Ok(Self { tensors })
    }

    /// Builds a field from arbitrary matrices by taking their symmetric part.
    pub fn from_symmetrized(tensors: Vec<Matrix3<f64>>) -> Result<Self> {
        Self::new(tensors.iter().map(crate::math::symmetrize).collect())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Matrix3<f64>] {
        &self.tensors
    }

    pub fn get(&self, e: usize) -> &Matrix3<f64> {
        &self.tensors[e]
    }

    /// `‖A_e − I‖_F` per element, the usual visualization of actuation strength.
    pub fn frobenius_from_identity(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .map(|a| (a - Matrix3::identity()).norm())
            .collect()
    }
}

/// One shape-targeting block per element. Its measure map is the stack of
/// the eight Gauss-point gradient operators, each weighted by `w_q = 1/8`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTargetBlock {
    pub element: usize,
    pub vertices: [usize; 8],
    pub weight: f64,
    pub actuation: Matrix3<f64>,
}

/// Attachment of one embedded bone point to its target position.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneBlock {
    pub point: usize,
    pub entries: [(usize, f64); 8],
    pub weight: f64,
    pub target: Vector3<f64>,
}

impl BoneBlock {
    pub fn position(&self, u: &DVector<f64>) -> Vector3<f64> {
        self.entries.iter().fold(Vector3::zeros(), |acc, &(v, w)| {
            acc + Vector3::new(u[3 * v], u[3 * v + 1], u[3 * v + 2]) * w
        })
    }

    fn scatter(&self, g: &Vector3<f64>, out: &mut DVector<f64>) {
        for &(v, w) in &self.entries {
            for a in 0..3 {
                out[3 * v + a] += w * g[a];
            }
        }
    }
}

/// Bone points embedded in the simulation mesh, split into skull and jaw.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneAttachments {
    pub embedding: Embedding,
    pub rest: Vec<Vector3<f64>>,
    pub is_jaw: Vec<bool>,
    /// Maps the shared jaw frame into this identity's material space.
    pub jaw_frame: RigidTransform,
}

impl BoneAttachments {
    pub fn jaw_point_count(&self) -> usize {
        self.is_jaw.iter().filter(|&&j| j).count()
    }

    /// Reshapes the jaw strip: jaw rest points are scaled by `scale` about
    /// their centroid and shifted by `offset`. The embedding is unchanged, so
    /// the attached tissue is pulled onto the new bone.
    pub fn reshape_jaw(&mut self, scale: f64, offset: &Vector3<f64>) -> Result<()> {
        if !(scale > 0.0) || !offset.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidArgument(format!("jaw reshape needs scale > 0 and a finite offset (scale {scale})")));
        }
        let jaw: Vec<usize> = (0..self.rest.len()).filter(|&i| self.is_jaw[i]).collect();
        if jaw.is_empty() {
            return Ok(());
        }
        let centroid = jaw.iter().fold(Vector3::zeros(), |a, &i| a + self.rest[i]) / jaw.len() as f64;
        for i in jaw {
            self.rest[i] = centroid + (self.rest[i] - centroid) * scale + offset;
        }
        Ok(())
    }

    /// Target positions for a jaw transform expressed in the shared jaw frame.
    pub fn targets(&self, jaw: &RigidTransform) -> Result<Vec<Vector3<f64>>> {
        jaw.ensure_rigid(RIGIDITY_TOL)?;
        let local = self.jaw_frame.compose(jaw).compose(&self.jaw_frame.inverse());
        Ok(self
            .rest
            .iter()
            .zip(&self.is_jaw)
            .map(|(x, &j)| if j { local.apply(x) } else { *x })
            .collect())
    }
}

/// Constraint weights; defaults are `ω_st = h³` and `ω_bone = 10³ h³`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub shape_target: f64,
    pub bone: f64,
}

impl Weights {
    pub fn for_element_size(h: f64) -> Self {
        let v = h * h * h;
        Self {
            shape_target: v,
            bone: 1e3 * v,
        }
    }
}

/// All constraint blocks of one scene.
#[derive(Debug, Clone)]
pub struct ConstraintBlocks {
    pub shape: Vec<ShapeTargetBlock>,
    pub bone: Vec<BoneBlock>,
    pub h: f64,
    pub vertex_count: usize,
    stencils: [(GradientStencil, f64); QUADRATURE_POINTS],
}

impl ConstraintBlocks {
    pub fn new(mesh: &HexMesh, shape: Vec<ShapeTargetBlock>, bone: Vec<BoneBlock>) -> Self {
        Self {
            shape,
            bone,
            h: mesh.element_size,
            vertex_count: mesh.vertex_count(),
            stencils: quadrature_stencils(mesh.element_size),
        }
    }

    pub fn stencils(&self) -> &[(GradientStencil, f64); QUADRATURE_POINTS] {
        &self.stencils
    }

    pub fn dof(&self) -> usize {
        3 * self.vertex_count
    }

    /// Mean shape-target weight, the scale of the convergence threshold.
    pub fn mean_weight(&self) -> f64 {
        if self.shape.is_empty() {
            return self.bone.iter().map(|b| b.weight).sum::<f64>() / self.bone.len().max(1) as f64;
        }
        self.shape.iter().map(|b| b.weight).sum::<f64>() / self.shape.len() as f64
    }

    pub fn set_actuation(&mut self, field: &ActuationField) -> Result<()> {
        if field.len() != self.shape.len() {
            return Err(Error::SizeMismatch {
                expected: self.shape.len(),
                got: field.len(),
            });
        }
        for (b, a) in self.shape.iter_mut().zip(field.tensors()) {
            b.actuation = *a;
        }
        Ok(())
    }

    pub fn actuation(&self) -> ActuationField {
        ActuationField {
            tensors: self.shape.iter().map(|b| b.actuation).collect(),
        }
    }

    pub fn set_bone_targets(&mut self, targets: &[Vector3<f64>]) -> Result<()> {
        if targets.len() != self.bone.len() {
            return Err(Error::SizeMismatch {
                expected: self.bone.len(),
                got: targets.len(),
            });
        }
        for (b, t) in self.bone.iter_mut().zip(targets) {
            b.target = *t;
        }
        Ok(())
    }

    pub fn bone_targets(&self) -> Vec<Vector3<f64>> {
        self.bone.iter().map(|b| b.target).collect()
    }

    pub(crate) fn corners(&self, block: &ShapeTargetBlock, u: &DVector<f64>) -> [Vector3<f64>; 8] {
        block
            .vertices
            .map(|v| Vector3::new(u[3 * v], u[3 * v + 1], u[3 * v + 2]))
    }

    /// Deformation gradients of one element at its Gauss points.
    pub fn gradients(&self, block: &ShapeTargetBlock, u: &DVector<f64>) -> [Matrix3<f64>; QUADRATURE_POINTS] {
        let x = self.corners(block, u);
        std::array::from_fn(|q| self.stencils[q].0.apply(&x))
    }

    /// Accumulates `Σ_q c_q G_qᵀ P_q` of one element into `out`.
    pub(crate) fn scatter_element(
        &self,
        block: &ShapeTargetBlock,
        p: &[Matrix3<f64>; QUADRATURE_POINTS],
        out: &mut DVector<f64>,
    ) {
        for (q, (stencil, wq)) in self.stencils.iter().enumerate() {
            let forces = stencil.apply_transpose(&p[q]);
            for (c, f) in forces.iter().enumerate() {
                let v = block.vertices[c];
                for a in 0..3 {
                    out[3 * v + a] += wq * f[a];
                }
            }
        }
    }
}

/// `R* = argmin_R ‖F − R A‖²_F` over SO(3) and the attained energy.
pub fn shape_target_project(f: &Matrix3<f64>, a: &Matrix3<f64>) -> Result<(Matrix3<f64>, f64)> {
    if f.iter().chain(a.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("shape-target projection input".into()));
    }
    let r = PolarSvd::new(&(f * a))?.rotation;
    Ok((r, (f - r * a).norm_squared()))
}

/// One block per element with the element's actuation tensor.
///
/// `operators` are the center gradient maps of the mesh and are only used to
/// validate the element count; the energy itself is integrated at Gauss points.
pub fn build_shape_target_blocks(
    mesh: &HexMesh,
    operators: &[SMatrix<f64, 9, 24>],
    actuation: &ActuationField,
    weight: f64,
) -> Result<Vec<ShapeTargetBlock>> {
    let n = mesh.element_count();
    for got in [operators.len(), actuation.len()] {
        if got != n {
            return Err(Error::SizeMismatch { expected: n, got });
        }
    }
    if !(weight > 0.0) {
        return Err(Error::InvalidArgument(format!("shape-target weight {weight} must be positive")));
    }
    Ok((0..n)
        .map(|e| ShapeTargetBlock {
            element: e,
            vertices: mesh.elements[e],
            weight,
            actuation: *actuation.get(e),
        })
        .collect())
}

/// Bone attachment blocks targeting the rest skull and the transformed jaw.
pub fn build_bone_blocks(bones: &BoneAttachments, jaw: &RigidTransform, weight: f64) -> Result<Vec<BoneBlock>> {
    if bones.rest.len() != bones.embedding.point_count() || bones.is_jaw.len() != bones.rest.len() {
        return Err(Error::SizeMismatch {
            expected: bones.embedding.point_count(),
            got: bones.rest.len(),
        });
    }
    if !(weight > 0.0) {
        return Err(Error::InvalidArgument(format!("bone weight {weight} must be positive")));
    }
    let targets = bones.targets(jaw)?;
    Ok(bones
        .embedding
        .rows
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (row, target))| BoneBlock {
            point: i,
            entries: row.entries,
            weight,
            target,
        })
        .collect())
}

/// The prefactorized system matrix `K = Σ ω SᵀGᵀGS`, stored as its scalar
/// vertex Laplacian.
#[derive(Debug, Clone)]
pub struct GlobalOperator {
    laplacian: FactoredLaplacian,
}

impl GlobalOperator {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.laplacian.apply(x)
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.laplacian.solve(b)
    }

    pub fn laplacian(&self) -> &FactoredLaplacian {
        &self.laplacian
    }
}

pub fn assemble_global(blocks: &ConstraintBlocks) -> Result<GlobalOperator> {
    let n = blocks.vertex_count;
    let mut coo = CooMatrix::new(n, n);
    let mut local = [[0.0; 8]; 8];
    for (stencil, wq) in blocks.stencils() {
        for c in 0..8 {
            for d in 0..8 {
                local[c][d] += wq * stencil.grads[c].dot(&stencil.grads[d]);
            }
        }
    }
    for b in &blocks.shape {
        for c in 0..8 {
            for d in 0..8 {
                coo.push(b.vertices[c], b.vertices[d], b.weight * local[c][d]);
            }
        }
    }
    for b in &blocks.bone {
        for &(v, wv) in &b.entries {
            for &(w, ww) in &b.entries {
                if wv != 0.0 && ww != 0.0 {
                    coo.push(v, w, b.weight * wv * ww);
                }
            }
        }
    }
    Ok(GlobalOperator {
        laplacian: FactoredLaplacian::factor(&coo)?,
    })
}

/// Right-hand side `Σ ω GᵀB y` for given rotations and the bone targets.
pub fn global_rhs(blocks: &ConstraintBlocks, rotations: &[QuadRotations]) -> Result<DVector<f64>> {
    if rotations.len() != blocks.shape.len() {
        return Err(Error::SizeMismatch {
            expected: blocks.shape.len(),
            got: rotations.len(),
        });
    }
    let mut rhs = DVector::zeros(blocks.dof());
    for (b, rs) in blocks.shape.iter().zip(rotations) {
        let p = rs.map(|r| r * b.actuation * b.weight);
        blocks.scatter_element(b, &p, &mut rhs);
    }
    for b in &blocks.bone {
        b.scatter(&(b.target * b.weight), &mut rhs);
    }
    Ok(rhs)
}

fn check_len(blocks: &ConstraintBlocks, u: &DVector<f64>) -> Result<()> {
    if u.len() != blocks.dof() {
        return Err(Error::SizeMismatch {
            expected: blocks.dof(),
            got: u.len(),
        });
    }
    Ok(())
}

fn bone_energy(blocks: &ConstraintBlocks, u: &DVector<f64>) -> f64 {
    blocks
        .bone
        .iter()
        .map(|b| 0.5 * b.weight * (b.position(u) - b.target).norm_squared())
        .sum()
}

/// Energy with the rotations held fixed (the PD surrogate).
pub fn energy_with_rotations(blocks: &ConstraintBlocks, u: &DVector<f64>, rotations: &[QuadRotations]) -> Result<f64> {
    check_len(blocks, u)?;
    let shape: f64 = blocks
        .shape
        .par_iter()
        .zip(rotations)
        .map(|(b, rs)| {
            let fs = blocks.gradients(b, u);
            (0..QUADRATURE_POINTS)
                .map(|q| 0.5 * b.weight * blocks.stencils()[q].1 * (fs[q] - rs[q] * b.actuation).norm_squared())
                .sum::<f64>()
        })
        .sum();
    Ok(shape + bone_energy(blocks, u))
}

/// Optimal rotations at `u` for every element and Gauss point.
pub fn project_all(blocks: &ConstraintBlocks, u: &DVector<f64>) -> Result<Vec<QuadRotations>> {
    check_len(blocks, u)?;
    blocks
        .shape
        .par_iter()
        .map(|b| {
            let fs = blocks.gradients(b, u);
            let mut rs = [Matrix3::identity(); QUADRATURE_POINTS];
            for q in 0..QUADRATURE_POINTS {
                rs[q] = shape_target_project(&fs[q], &b.actuation)?.0;
            }
            Ok(rs)
        })
        .collect()
}

/// Total energy `E(u)` with optimal rotations.
pub fn energy(blocks: &ConstraintBlocks, u: &DVector<f64>) -> Result<f64> {
    let rs = project_all(blocks, u)?;
    energy_with_rotations(blocks, u, &rs)
}

/// `∇E(u) = K u − rhs(R*(u))`, evaluated blockwise.
pub fn gradient(blocks: &ConstraintBlocks, u: &DVector<f64>) -> Result<DVector<f64>> {
    let rs = project_all(blocks, u)?;
    Ok(gradient_with_rotations(blocks, u, &rs))
}

pub fn gradient_with_rotations(blocks: &ConstraintBlocks, u: &DVector<f64>, rotations: &[QuadRotations]) -> DVector<f64> {
    let mut g = DVector::zeros(blocks.dof());
    for (b, rs) in blocks.shape.iter().zip(rotations) {
        let fs = blocks.gradients(b, u);
        let p = std::array::from_fn(|q| (fs[q] - rs[q] * b.actuation) * b.weight);
        blocks.scatter_element(b, &p, &mut g);
    }
    for b in &blocks.bone {
        b.scatter(&((b.position(u) - b.target) * b.weight), &mut g);
    }
    g
}

/// Which second-derivative model to use for `∇²E`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HessianMode {
    /// Includes the derivative of the optimal rotations.
    #[default]
    Exact,
    /// Drops the rotation derivative, i.e. `∇²E ≈ K`.
    GaussNewton,
}

/// Energy Hessian at a fixed state, applied matrix-free.
#[derive(Debug, Clone)]
pub struct EnergyHessian<'a> {
    blocks: &'a ConstraintBlocks,
    k: &'a GlobalOperator,
    svds: Vec<[PolarSvd; QUADRATURE_POINTS]>,
    mode: HessianMode,
}

impl<'a> EnergyHessian<'a> {
    pub fn new(blocks: &'a ConstraintBlocks, k: &'a GlobalOperator, u: &DVector<f64>, mode: HessianMode) -> Result<Self> {
        check_len(blocks, u)?;
        let svds = match mode {
            HessianMode::GaussNewton => Vec::new(),
            HessianMode::Exact => blocks
                .shape
                .par_iter()
                .map(|b| {
                    let fs = blocks.gradients(b, u);
                    let mut out = [PolarSvd::new(&Matrix3::identity())?; QUADRATURE_POINTS];
                    for q in 0..QUADRATURE_POINTS {
                        out[q] = PolarSvd::new(&(fs[q] * b.actuation))?;
                    }
                    Ok(out)
                })
                .collect::<Result<_>>()?,
        };
        Ok(Self { blocks, k, svds, mode })
    }

    pub fn mode(&self) -> HessianMode {
        self.mode
    }

    pub fn svds(&self) -> &[[PolarSvd; QUADRATURE_POINTS]] {
        &self.svds
    }

    /// `∇²E v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.k.apply(v);
        if self.mode == HessianMode::GaussNewton {
            return out;
        }
        // K already holds Σ ω GᵀG; subtract the rotation-derivative part.
        let contributions: Vec<_> = self
            .blocks
            .shape
            .par_iter()
            .zip(&self.svds)
            .map(|(b, svds)| {
                let dfs = self.blocks.gradients(b, v);
                std::array::from_fn::<_, QUADRATURE_POINTS, _>(|q| {
                    -(svds[q].rotation_differential(&(dfs[q] * b.actuation)) * b.actuation) * b.weight
                })
            })
            .collect();
        for (b, p) in self.blocks.shape.iter().zip(&contributions) {
            self.blocks.scatter_element(b, p, &mut out);
        }
        out
    }
}

#[cfg(test)]
mod tests;
