//! Procedural actuation: Gaussian contraction bundles in canonical space,
//! gated by expression weights and scaled by per-identity style gains, plus
//! a jaw rotation about the hinge.

use nalgebra::{DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::identity::{StyleParams, TemplateConfig};
use crate::math::{rotation_about, RigidTransform};

/// Peak contraction of a fully activated muscle at unit style gain.
pub const PEAK_CONTRACTION: f64 = 0.3;
/// Jaw opening angle at full activation and unit style gain, radians.
pub const JAW_OPEN_ANGLE: f64 = 0.12;
/// Transverse bulge relative to the fiber contraction.
const BULGE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Muscle {
    pub center: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub radius: f64,
}

/// Muscles of the template, in template coordinates. The two lip
/// compressors contract across the skin and bulge the lips into the slot.
pub fn muscle_set(t: &TemplateConfig) -> Vec<Muscle> {
    let ext = t.extent();
    let (w, s, top) = (ext.x, t.slot_y, ext.z);
    let m = |c: [f64; 3], d: [f64; 3], r: f64| Muscle {
        center: Vector3::from(c),
        direction: Vector3::from(d).normalize(),
        radius: r * t.h,
    };
    vec![
        m([0.5 * w, s - 1.0 * t.h, top - 0.8 * t.h], [0.0, 0.0, 1.0], 1.5),
        m([0.5 * w, s + 1.0 * t.h, top - 0.8 * t.h], [0.0, 0.0, 1.0], 1.5),
        m([0.25 * w, s + 1.5 * t.h, top - 1.0 * t.h], [1.0, 1.0, 0.0], 1.6),
        m([0.75 * w, s + 1.5 * t.h, top - 1.0 * t.h], [-1.0, 1.0, 0.0], 1.6),
        m([0.5 * w, ext.y - 1.0 * t.h, top - 1.0 * t.h], [0.0, 1.0, 0.0], 1.8),
        m([0.5 * w, 1.5 * t.h, top - 1.0 * t.h], [0.0, 1.0, 0.2], 1.6),
        m([0.15 * w, s, top - 1.0 * t.h], [1.0, 0.0, 0.0], 1.4),
    ]
}

/// Expression dimension: one weight per muscle plus jaw opening.
pub fn expression_dim(t: &TemplateConfig) -> usize {
    muscle_set(t).len() + 1
}

/// Canonical actuation tensor at template point `x`.
pub fn canonical_actuation(muscles: &[Muscle], style: &StyleParams, expr: &DVector<f64>, x: &Vector3<f64>) -> Matrix3<f64> {
    let tilt = rotation_about(&Vector3::z(), style.tilt);
    let mut a = Matrix3::identity();
    for (k, m) in muscles.iter().enumerate() {
        let e = expr.get(k).copied().unwrap_or(0.0);
        if e == 0.0 {
            continue;
        }
        let d = tilt * m.direction;
        let w = (-(x - m.center).norm_squared() / (2.0 * m.radius * m.radius)).exp();
        let c = PEAK_CONTRACTION * style.gains[k] * e * w;
        let ddt = d * d.transpose();
        a += c * (-ddt + BULGE * (Matrix3::identity() - ddt));
    }
    a
}

/// Jaw transform in the jaw frame for an expression.
pub fn jaw_transform(muscles: usize, style: &StyleParams, expr: &DVector<f64>) -> RigidTransform {
    let open = expr.get(muscles).copied().unwrap_or(0.0);
    RigidTransform::new(rotation_about(&Vector3::x(), JAW_OPEN_ANGLE * style.jaw_gain * open), Vector3::zeros())
}

/// Sparse random expressions in `[0, 1]`: each coordinate is active with
/// probability `density`.
pub fn sample_expressions(n: usize, dim: usize, density: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            DVector::from_fn(dim, |_, _| {
                if rng.gen_bool(density) {
                    rng.gen_range(0.2..1.0)
                } else {
                    0.0
                }
            })
        })
        .collect()
}
