use nalgebra::{Matrix3, SMatrix, Vector3};

use super::HexMesh;
use crate::error::{Error, Result};

/// Parametric coordinates of the element center.
pub const CENTER: [f64; 3] = [0.5, 0.5, 0.5];

/// Number of Gauss points used by the shape-targeting energy.
pub const QUADRATURE_POINTS: usize = 8;

/// Corner offset `(i, j, k) ∈ {0,1}³` of local corner `c`.
#[inline]
pub fn corner_offset(c: usize) -> Vector3<f64> {
    Vector3::new((c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64)
}

/// Trilinear shape-function values at parametric point `xi ∈ [0,1]³`.
pub fn trilinear_weights(xi: &Vector3<f64>) -> [f64; 8] {
    let mut w = [0.0; 8];
    for (c, wc) in w.iter_mut().enumerate() {
        let o = corner_offset(c);
        *wc = (0..3)
            .map(|a| if o[a] > 0.5 { xi[a] } else { 1.0 - xi[a] })
            .product();
    }
    w
}

/// Spatial gradients of the eight trilinear shape functions at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientStencil {
    pub grads: [Vector3<f64>; 8],
}

impl GradientStencil {
    pub fn at(h: f64, xi: &Vector3<f64>) -> Self {
        let mut grads = [Vector3::zeros(); 8];
        for (c, g) in grads.iter_mut().enumerate() {
            let o = corner_offset(c);
            let f = |a: usize| if o[a] > 0.5 { xi[a] } else { 1.0 - xi[a] };
            let df = |a: usize| if o[a] > 0.5 { 1.0 } else { -1.0 };
            *g = Vector3::new(df(0) * f(1) * f(2), f(0) * df(1) * f(2), f(0) * f(1) * df(2)) / h;
        }
        Self { grads }
    }

    /// `F = Σ_c x_c ⊗ ∇N_c`.
    pub fn apply(&self, corners: &[Vector3<f64>; 8]) -> Matrix3<f64> {
        let mut f = Matrix3::zeros();
        for (x, g) in corners.iter().zip(&self.grads) {
            f += x * g.transpose();
        }
        f
    }

    /// Transpose action: corner forces of a stress-like matrix `P`,
    /// i.e. `∂<P, F>/∂x_c = P ∇N_c`.
    pub fn apply_transpose(&self, p: &Matrix3<f64>) -> [Vector3<f64>; 8] {
        self.grads.map(|g| p * g)
    }

    /// Dense 9×24 matrix mapping stacked corner positions to column-major `vec(F)`.
    pub fn matrix(&self) -> SMatrix<f64, 9, 24> {
        let mut m = SMatrix::<f64, 9, 24>::zeros();
        for c in 0..8 {
            for a in 0..3 {
                for b in 0..3 {
                    // F[(a, b)] sits at column-major index a + 3b
                    m[(a + 3 * b, 3 * c + a)] = self.grads[c][b];
                }
            }
        }
        m
    }
}

/// 2×2×2 Gauss points with their volume fractions (all 1/8).
pub fn quadrature_stencils(h: f64) -> [(GradientStencil, f64); QUADRATURE_POINTS] {
    let g = 0.5 / 3f64.sqrt();
    std::array::from_fn(|q| {
        let o = corner_offset(q);
        let xi = Vector3::new(0.5, 0.5, 0.5) + (o * 2.0 - Vector3::repeat(1.0)) * g;
        (GradientStencil::at(h, &xi), 1.0 / QUADRATURE_POINTS as f64)
    })
}

/// Per-element 9×24 operator from corner positions to `vec(F)`, evaluated at
/// the element center.
pub fn deformation_gradient_operator(mesh: &HexMesh) -> Result<Vec<SMatrix<f64, 9, 24>>> {
    let h = mesh.element_size;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::DegenerateElement {
            element: 0,
            reason: format!("zero volume (h = {h})"),
        });
    }
    let m = GradientStencil::at(h, &Vector3::from(CENTER)).matrix();
    Ok(vec![m; mesh.element_count()])
}

pub fn element_corners(mesh: &HexMesh, positions: &[Vector3<f64>], e: usize) -> [Vector3<f64>; 8] {
    mesh.elements[e].map(|v| positions[v])
}

/// Center deformation gradient of element `e`.
pub fn deformation_gradient(mesh: &HexMesh, positions: &[Vector3<f64>], e: usize) -> Matrix3<f64> {
    GradientStencil::at(mesh.element_size, &Vector3::from(CENTER)).apply(&element_corners(mesh, positions, e))
}

/// Deformation state of a single element at its center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementState {
    pub element: usize,
    pub deformation_gradient: Matrix3<f64>,
}

pub fn element_states(mesh: &HexMesh, positions: &[Vector3<f64>]) -> Vec<ElementState> {
    (0..mesh.element_count())
        .map(|e| ElementState {
            element: e,
            deformation_gradient: deformation_gradient(mesh, positions, e),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{build_hex_lattice, Domain};
    use crate::math::random_rotation;
    use nalgebra::SVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mesh() -> HexMesh {
        build_hex_lattice(
            &Domain::Box {
                min: Vector3::new(0.3, -0.2, 1.0),
                max: Vector3::new(2.3, 0.8, 2.0),
            },
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn rest_gives_identity() {
        let m = mesh();
        for s in element_states(&m, &m.vertices) {
            assert!((s.deformation_gradient - Matrix3::identity()).norm() < 1e-12);
        }
    }

    #[test]
    fn scaling_gives_scaled_identity() {
        let m = mesh();
        let p: Vec<_> = m.vertices.iter().map(|v| v * 2.0).collect();
        for s in element_states(&m, &p) {
            assert!((s.deformation_gradient - Matrix3::identity() * 2.0).norm() < 1e-12);
        }
    }

    #[test]
    fn rotation_is_recovered() {
        let m = mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_rotation(&mut rng);
        let p: Vec<_> = m.vertices.iter().map(|v| q * v).collect();
        for s in element_states(&m, &p) {
            assert!((s.deformation_gradient - q).norm() < 1e-12);
        }
    }

    #[test]
    fn affine_maps_everywhere_including_gauss_points() {
        let m = mesh();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let t = Vector3::new(0.1, 2.0, -3.0);
        let p: Vec<_> = m.vertices.iter().map(|v| a * v + t).collect();
        let quad = quadrature_stencils(m.h());
        for e in 0..m.element_count() {
            let corners = element_corners(&m, &p, e);
            for (st, _) in &quad {
                assert!((st.apply(&corners) - a).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_operator_agrees_with_stencil() {
        let m = mesh();
        let ops = deformation_gradient_operator(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: Vec<_> = m
            .vertices
            .iter()
            .map(|v| v + Vector3::from_fn(|_, _| rng.gen_range(-0.1..0.1)))
            .collect();
        for e in 0..m.element_count() {
            let corners = element_corners(&m, &p, e);
            let x = SVector::<f64, 24>::from_fn(|i, _| corners[i / 3][i % 3]);
            let f = ops[e] * x;
            let expect = deformation_gradient(&m, &p, e);
            assert!((f - SVector::<f64, 9>::from_column_slice(expect.as_slice())).norm() < 1e-12);
        }
    }

    #[test]
    fn transpose_is_adjoint() {
        let st = GradientStencil::at(0.7, &Vector3::new(0.2, 0.9, 0.4));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: [Vector3<f64>; 8] = std::array::from_fn(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
        let p = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let lhs = p.dot(&st.apply(&x));
        let rhs: f64 = st.apply_transpose(&p).iter().zip(&x).map(|(a, b)| a.dot(b)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn zero_size_is_degenerate() {
        let mut m = mesh();
        m.element_size = 0.0;
        assert!(deformation_gradient_operator(&m).is_err());
    }
}
