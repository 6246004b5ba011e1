//! 6D rotation representation: two raw 3-vectors orthonormalized by
//! Gram-Schmidt, the third column their cross product.

use nalgebra::{Matrix3, Vector3};

use crate::math::RigidTransform;

/// Width of the jaw head: 6D rotation residual plus translation.
pub const JAW_OUTPUTS: usize = 9;

/// Values kept for the backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SixD {
    a1: Vector3<f64>,
    a2: Vector3<f64>,
    b1: Vector3<f64>,
    b2: Vector3<f64>,
    u2_norm: f64,
}

/// Rotation from head outputs `o`; `a₁ = eₓ + o[0..3]`, `a₂ = e_y + o[3..6]`,
/// so a zero head gives the identity.
pub fn six_d_rotation(o: &[f64]) -> (Matrix3<f64>, SixD) {
    let a1 = Vector3::new(1.0 + o[0], o[1], o[2]);
    let a2 = Vector3::new(o[3], 1.0 + o[4], o[5]);
    let b1 = a1.normalize();
    let u2 = a2 - b1 * b1.dot(&a2);
    let u2_norm = u2.norm();
    let b2 = u2 / u2_norm;
    let b3 = b1.cross(&b2);
    (Matrix3::from_columns(&[b1, b2, b3]), SixD { a1, a2, b1, b2, u2_norm })
}

/// Pulls `dL/dR` back to the six raw outputs.
pub fn six_d_backward(c: &SixD, d_r: &Matrix3<f64>) -> [f64; 6] {
    let (b1, b2) = (c.b1, c.b2);
    let mut g1: Vector3<f64> = d_r.column(0).into();
    let mut g2: Vector3<f64> = d_r.column(1).into();
    let g3: Vector3<f64> = d_r.column(2).into();
    // b₃ = b₁ × b₂
    g1 += b2.cross(&g3);
    g2 += g3.cross(&b1);
    // b₂ = u₂/‖u₂‖
    let gu2 = (g2 - b2 * b2.dot(&g2)) / c.u2_norm;
    // u₂ = a₂ − (b₁·a₂) b₁
    let ga2 = gu2 - b1 * b1.dot(&gu2);
    g1 -= gu2 * b1.dot(&c.a2) + c.a2 * b1.dot(&gu2);
    // b₁ = a₁/‖a₁‖
    let ga1 = (g1 - b1 * b1.dot(&g1)) / c.a1.norm();
    [ga1[0], ga1[1], ga1[2], ga2[0], ga2[1], ga2[2]]
}

/// Jaw transform from the full head output.
pub fn jaw_from_outputs(o: &[f64]) -> (RigidTransform, SixD) {
    let (r, cache) = six_d_rotation(o);
    (RigidTransform::new(r, Vector3::new(o[6], o[7], o[8])), cache)
}

/// Gradient of a loss with respect to a canonical jaw transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JawGrad {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl JawGrad {
    pub fn zero() -> Self {
        Self {
            rotation: Matrix3::zeros(),
            translation: Vector3::zeros(),
        }
    }

    /// Accumulates bone-target gradients `g` at jaw rest points `x` of an
    /// identity with jaw frame `frame`. Targets are `F T F⁻¹ x`, so with
    /// `p = F⁻¹ x`, `dL/dR_T = Σ F_Rᵀ g pᵀ` and `dL/dt_T = Σ F_Rᵀ g`.
    pub fn from_bone_targets<'a>(
        frame: &RigidTransform,
        points: impl IntoIterator<Item = (&'a Vector3<f64>, &'a Vector3<f64>)>,
    ) -> Self {
        let inv = frame.inverse();
        let mut out = Self::zero();
        for (x, g) in points {
            let p = inv.apply(x);
            let gl = frame.rotation.transpose() * g;
            out.rotation += gl * p.transpose();
            out.translation += gl;
        }
        out
    }

    /// Raw head gradient.
    pub fn to_outputs(&self, cache: &SixD) -> [f64; JAW_OUTPUTS] {
        let r = six_d_backward(cache, &self.rotation);
        let mut out = [0.0; JAW_OUTPUTS];
        out[..6].copy_from_slice(&r);
        out[6..].copy_from_slice(self.translation.as_slice());
        out
    }
}
