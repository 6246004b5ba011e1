//! Regular hexahedral lattices, per-element deformation-gradient operators,
//! trilinear embedding of surface/bone points and triangle surfaces.

mod embedding;
mod lattice;
mod operator;
mod surface;

pub use embedding::{apply_embedding, embed_points, embed_points_with_parts, Embedding, EmbeddingRow};
pub use lattice::{build_hex_lattice, read_lattice, write_lattice, Domain, HexMesh, LatticeDomain};
pub use operator::{
    corner_offset, deformation_gradient, deformation_gradient_operator, element_states, quadrature_stencils,
    trilinear_weights, ElementState, GradientStencil, CENTER, QUADRATURE_POINTS,
};
pub use surface::{format_sig9, read_obj, vertex_normals, write_obj, TriSurface};

use nalgebra::{DVector, Vector3};

/// Packs positions into the flat `[x0, y0, z0, x1, ...]` layout used by the solvers.
pub fn to_flat(points: &[Vector3<f64>]) -> DVector<f64> {
    DVector::from_iterator(points.len() * 3, points.iter().flat_map(|p| [p.x, p.y, p.z]))
}

pub fn from_flat(flat: &DVector<f64>) -> Vec<Vector3<f64>> {
    flat.as_slice()
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect()
}

#[inline]
pub fn vertex(flat: &DVector<f64>, i: usize) -> Vector3<f64> {
    Vector3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2])
}

#[inline]
pub fn add_vertex(flat: &mut DVector<f64>, i: usize, v: &Vector3<f64>) {
    flat[3 * i] += v.x;
    flat[3 * i + 1] += v.y;
    flat[3 * i + 2] += v.z;
}

/// Diagonal of the axis-aligned bounding box of `points`.
pub fn diameter(points: &[Vector3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (hi - lo).norm()
}
