use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geom::vertex_normals;

/// Geometry loss and its gradient with respect to the surface vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoLoss {
    /// Mean squared vertex distance.
    pub position: f64,
    /// Mean of `1 − n·n*`.
    pub normal: f64,
    pub grad: Vec<Vector3<f64>>,
}

impl GeoLoss {
    pub fn value(&self) -> f64 {
        self.position + self.normal
    }
}

/// `L_geo = mean‖sᵢ − s*ᵢ‖² + mean(1 − nᵢ·n*ᵢ)` with area-weighted unit
/// vertex normals of the embedded surface, differentiated through the
/// normal computation.
pub fn loss_geo(
    surface: &[Vector3<f64>],
    triangles: &[[usize; 3]],
    target: &[Vector3<f64>],
    target_normals: &[Vector3<f64>],
) -> Result<GeoLoss> {
    let n = surface.len();
    if target.len() != n || target_normals.len() != n {
        return Err(Error::SizeMismatch {
            expected: n,
            got: target.len().min(target_normals.len()),
        });
    }
    if n == 0 {
        return Err(Error::InvalidArgument("empty surface".into()));
    }
    let inv = 1.0 / n as f64;
    let mut grad: Vec<Vector3<f64>> = surface.iter().zip(target).map(|(s, t)| (s - t) * (2.0 * inv)).collect();
    let position = surface.iter().zip(target).map(|(s, t)| (s - t).norm_squared()).sum::<f64>() * inv;

    // unnormalized area-weighted normals mᵢ = Σ (p₁ − p₀) × (p₂ − p₀)
    let mut m = vec![Vector3::zeros(); n];
    for t in triangles {
        let c = (surface[t[1]] - surface[t[0]]).cross(&(surface[t[2]] - surface[t[0]]));
        for &i in t {
            m[i] += c;
        }
    }
    let mut normal = 0.0;
    let mut dm = vec![Vector3::zeros(); n];
    for i in 0..n {
        let len = m[i].norm();
        if len == 0.0 {
            // isolated vertex: zero normal, no gradient
            normal += 1.0;
            continue;
        }
        let ni = m[i] / len;
        normal += 1.0 - ni.dot(&target_normals[i]);
        let dn = -target_normals[i] * inv;
        dm[i] = (dn - ni * ni.dot(&dn)) / len;
    }
    for t in triangles {
        let g = dm[t[0]] + dm[t[1]] + dm[t[2]];
        let a = surface[t[1]] - surface[t[0]];
        let b = surface[t[2]] - surface[t[0]];
        let ga = b.cross(&g);
        let gb = g.cross(&a);
        grad[t[1]] += ga;
        grad[t[2]] += gb;
        grad[t[0]] -= ga + gb;
    }
    Ok(GeoLoss {
        position,
        normal: normal * inv,
        grad,
    })
}

/// Target normals in the form `loss_geo` expects.
pub fn target_normals(target: &[Vector3<f64>], triangles: &[[usize; 3]]) -> Vec<Vector3<f64>> {
    vertex_normals(target, triangles)
}

/// `L_act = (1/N) Σ ‖Aᵢ − I‖²_F` and its gradient `2(Aᵢ − I)/N`.
pub fn loss_act(tensors: &[Matrix3<f64>]) -> (f64, Vec<Matrix3<f64>>) {
    if tensors.is_empty() {
        return (0.0, Vec::new());
    }
    let inv = 1.0 / tensors.len() as f64;
    let mut value = 0.0;
    let grad = tensors
        .iter()
        .map(|a| {
            let d = a - Matrix3::identity();
            value += d.norm_squared();
            d * (2.0 * inv)
        })
        .collect();
    (value * inv, grad)
}

/// Weights of the regularizers in the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_act: f64,
    pub lambda_lip: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_act: 1e-3,
            lambda_lip: 1e-6,
        }
    }
}

/// `L_geo + λ_act L_act + λ_lip L_lip`.
pub fn loss_total(geo: f64, act: f64, lip: f64, w: &LossWeights) -> f64 {
    geo + w.lambda_act * act + w.lambda_lip * lip
}
