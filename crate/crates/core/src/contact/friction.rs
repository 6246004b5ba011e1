//! Smoothed static friction with lagged normal forces and sliding bases.
//!
//! For each contact pair active at the start of a frame, the tangential
//! relative displacement `ũ = Tᵀ Σ cᵢ (pᵢ − pᵢ_prev)` is penalized by
//! `μ λ f₀(‖ũ‖)`, where `f₀` is the C¹ smoothing of `|y|` below `ε`.

use nalgebra::{Matrix2, Matrix3x2, SMatrix, Vector2, Vector3};

use super::assemble::{gather, scatter, PairBlock, ProxyHessian};
use super::barrier::barrier_1d;
use super::distance::closest_point_coefficients;
use super::jet::Vec12;
use super::proxy::{ContactProxy, ContactSet};
use crate::error::Result;
use nalgebra::DVector;

/// Smoothed magnitude: `−y³/(3ε²) + y²/ε + ε/3` below `ε`, `y` above.
pub fn f0(y: f64, eps: f64) -> f64 {
    if y < eps {
        -y * y * y / (3.0 * eps * eps) + y * y / eps + eps / 3.0
    } else {
        y
    }
}

/// `f₀′`: `−y²/ε² + 2y/ε` below `ε`, 1 above.
pub fn f1(y: f64, eps: f64) -> f64 {
    if y < eps {
        -y * y / (eps * eps) + 2.0 * y / eps
    } else {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrictionPair {
    pub vertices: [usize; 4],
    pub coefficients: [f64; 4],
    pub basis: Matrix3x2<f64>,
    pub normal_force: f64,
}

impl FrictionPair {
    /// 2×12 map from pair coordinates to tangential displacement.
    fn jacobian(&self) -> SMatrix<f64, 2, 12> {
        let mut j = SMatrix::<f64, 2, 12>::zeros();
        let bt = self.basis.transpose();
        for s in 0..4 {
            j.fixed_view_mut::<2, 3>(0, 3 * s).copy_from(&(bt * self.coefficients[s]));
        }
        j
    }
}

/// Friction state frozen at the start of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedFriction {
    pub pairs: Vec<FrictionPair>,
    /// Proxy positions at the start of the frame.
    pub reference: Vec<Vector3<f64>>,
    pub mu: f64,
    pub eps: f64,
}

impl LaggedFriction {
    /// Per-pair tangential slip `‖ũ‖` of proxy positions `p` against the
    /// frame-start reference.
    pub fn slips(&self, p: &[Vector3<f64>]) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|pair| {
                let bt = pair.basis.transpose();
                let d = (0..4).fold(Vector3::zeros(), |acc, s| {
                    let v = pair.vertices[s];
                    acc + (p[v] - self.reference[v]) * pair.coefficients[s]
                });
                (bt * d).norm()
            })
            .collect()
    }
}

/// Two unit vectors orthogonal to `n` and to each other.
fn tangent_basis(n: &Vector3<f64>) -> Matrix3x2<f64> {
    let n = n.normalize();
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    Matrix3x2::from_columns(&[t1, t2])
}

/// Freezes normal forces `λ = −κ b′(d)`, closest-point coefficients and
/// tangent bases from the contact set at `p_prev`.
pub fn lag_friction(set: &ContactSet, p_prev: &[Vector3<f64>], kappa: f64, mu: f64, eps: f64) -> Result<LaggedFriction> {
    let mut pairs = Vec::with_capacity(set.pairs.len());
    for pair in &set.pairs {
        let x = pair.points(p_prev);
        let c = closest_point_coefficients(pair.subcase, &x);
        let n = (0..4).fold(Vector3::zeros(), |acc, i| acc + x[i] * c[i]);
        let (_, db, _) = barrier_1d(pair.distance, set.dhat)?;
        pairs.push(FrictionPair {
            vertices: pair.vertices,
            coefficients: c,
            basis: tangent_basis(&n),
            normal_force: -kappa * db,
        });
    }
    Ok(LaggedFriction {
        pairs,
        reference: p_prev.to_vec(),
        mu,
        eps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrictionAssembly {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: ProxyHessian,
}

/// Friction energy, gradient and (PSD) Hessian in simulation coordinates.
pub fn friction_assembly(lagged: &LaggedFriction, proxy: &ContactProxy, u: &DVector<f64>) -> FrictionAssembly {
    let mut out = FrictionAssembly {
        value: 0.0,
        gradient: DVector::zeros(u.len()),
        hessian: ProxyHessian::default(),
    };
    if lagged.mu == 0.0 {
        return out;
    }
    let eps = lagged.eps;
    for pair in &lagged.pairs {
        let scale = lagged.mu * pair.normal_force;
        if scale == 0.0 {
            continue;
        }
        let j = pair.jacobian();
        let mut reference = Vec12::zeros();
        for (s, &v) in pair.vertices.iter().enumerate() {
            reference.fixed_rows_mut::<3>(3 * s).copy_from(&lagged.reference[v]);
        }
        let ut: Vector2<f64> = j * (gather(proxy, &pair.vertices, u) - reference);
        let y = ut.norm();
        out.value += scale * f0(y, eps);
        let (ratio, m) = if y < eps {
            let ratio = 2.0 / eps - y / (eps * eps);
            let m = if y > 0.0 {
                Matrix2::identity() * ratio - ut * ut.transpose() / (eps * eps * y)
            } else {
                Matrix2::identity() * ratio
            };
            (ratio, m)
        } else {
            let uh = ut / y;
            (1.0 / y, (Matrix2::identity() - uh * uh.transpose()) / y)
        };
        let g: Vec12 = j.transpose() * (ut * (scale * ratio));
        scatter(proxy, &pair.vertices, &g, &mut out.gradient);
        out.hessian.blocks.push(PairBlock {
            vertices: pair.vertices,
            matrix: j.transpose() * m * j * scale,
        });
    }
    out
}
