//! Small dense linear-algebra helpers shared by the solver, contact and
//! learning code: polar decomposition and its differential, rigid
//! transforms, rotation sampling and PSD projection.

use nalgebra::{allocator::Allocator, DefaultAllocator, Dim, Matrix3, OMatrix, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

/// SVD-based polar decomposition `M = R S` with `det R = +1`.
///
/// The factors are kept so the differential of `R` can be evaluated later:
/// `M = U diag(sigma) Vᵀ`, `R = U Vᵀ`, where the smallest singular value
/// carries the sign flip when `det M < 0`.
#[derive(Debug, Clone, Copy)]
pub struct PolarSvd {
    pub u: Matrix3<f64>,
    pub sigma: Vector3<f64>,
    pub v: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
}

impl PolarSvd {
    pub fn new(m: &Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("polar decomposition input".into()));
        }
        let svd = m.svd(true, true);
        let mut u = svd.u.expect("u requested");
        let mut v = svd.v_t.expect("v requested").transpose();
        let mut sigma = svd.singular_values;

        // Sort descending so the sign fix always lands on the smallest value.
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
        if order != [0, 1, 2] {
            let (u0, v0, s0) = (u, v, sigma);
            for (dst, &src) in order.iter().enumerate() {
                u.set_column(dst, &u0.column(src));
                v.set_column(dst, &v0.column(src));
                sigma[dst] = s0[src];
            }
        }

        if u.determinant() * v.determinant() < 0.0 {
            u.column_mut(2).neg_mut();
            sigma[2] = -sigma[2];
        }
        let rotation = u * v.transpose();
        Ok(Self {
            u,
            sigma,
            v,
            rotation,
        })
    }

    /// Differential of the rotation factor for a perturbation `dm` of `M`.
    pub fn rotation_differential(&self, dm: &Matrix3<f64>) -> Matrix3<f64> {
        let x = self.u.transpose() * dm * self.v;
        let omega = self.skew_coefficients(&x);
        self.u * omega * self.v.transpose()
    }

    /// Pullback of the rotation differential: returns `G` such that
    /// `<P, dR(dM)> = <G, dM>` for all `dM`.
    pub fn rotation_differential_adjoint(&self, p: &Matrix3<f64>) -> Matrix3<f64> {
        let q = self.u.transpose() * p * self.v;
        let c = self.skew_coefficients(&q);
        self.u * c * self.v.transpose()
    }

    fn skew_coefficients(&self, x: &Matrix3<f64>) -> Matrix3<f64> {
        let floor = 1e-12 * self.sigma.amax().max(1e-300);
        let mut omega = Matrix3::zeros();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let mut denom = self.sigma[i] + self.sigma[j];
            if denom.abs() < floor {
                denom = floor.copysign(denom);
            }
            let w = (x[(i, j)] - x[(j, i)]) / denom;
            omega[(i, j)] = w;
            omega[(j, i)] = -w;
        }
        omega
    }
}

/// Rotation part of the polar decomposition of `m`.
pub fn polar_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    Ok(PolarSvd::new(m)?.rotation)
}

pub fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    (r.transpose() * r - Matrix3::identity()).norm() < tol && (r.determinant() - 1.0).abs() < tol
}

/// Uniformly distributed rotation (Shoemake's subgroup algorithm).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = nalgebra::Quaternion::new(
        b * (tau * u3).cos(),
        a * (tau * u2).sin(),
        a * (tau * u2).cos(),
        b * (tau * u3).sin(),
    );
    nalgebra::UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner()
}

pub fn rotation_about(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(*axis), angle).into_inner()
}

/// Rigid motion `x ↦ R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    /// Rotation by `angle` about the axis through `pivot`.
    pub fn about_axis(pivot: &Vector3<f64>, axis: &Vector3<f64>, angle: f64) -> Self {
        let r = rotation_about(axis, angle);
        Self::new(r, pivot - r * pivot)
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    pub fn compose(&self, inner: &RigidTransform) -> RigidTransform {
        RigidTransform::new(
            self.rotation * inner.rotation,
            self.rotation * inner.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform::new(rt, -(rt * self.translation))
    }

    /// Error `‖RᵀR − I‖_F`, plus a reflection penalty.
    pub fn rigidity_error(&self) -> f64 {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).norm();
        if self.rotation.determinant() < 0.0 {
            ortho.max(1.0)
        } else {
            ortho
        }
    }

    pub fn ensure_rigid(&self, tol: f64) -> Result<()> {
        let err = self.rigidity_error();
        if !err.is_finite() || err > tol {
            return Err(Error::NonRigid(err));
        }
        Ok(())
    }
}

/// Projects a symmetric matrix onto the PSD cone by clamping negative
/// eigenvalues to zero.
pub fn project_psd<D: Dim>(m: &OMatrix<f64, D, D>) -> OMatrix<f64, D, D>
where
    DefaultAllocator: Allocator<D, D> + Allocator<D> + Allocator<<D as nalgebra::DimSub<nalgebra::U1>>::Output>,
    D: nalgebra::DimSub<nalgebra::U1>,
{
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return m.clone();
    }
    let mut vals = eig.eigenvalues.clone();
    for l in vals.iter_mut() {
        *l = l.max(0.0);
    }
    let q = &eig.eigenvectors;
    q * OMatrix::<f64, D, D>::from_diagonal(&vals) * q.transpose()
}

/// Numerically stable `ln(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn polar_of_rotation_is_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let q = random_rotation(&mut rng);
            let r = polar_rotation(&q).unwrap();
            assert!((r - q).norm() < 1e-12);
        }
    }

    #[test]
    fn polar_handles_reflection() {
        let m = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, -0.5));
        let p = PolarSvd::new(&m).unwrap();
        assert!((p.rotation.determinant() - 1.0).abs() < 1e-12);
        let recon = p.u * Matrix3::from_diagonal(&p.sigma) * p.v.transpose();
        assert!((recon - m).norm() < 1e-12);
    }

    #[test]
    fn rotation_differential_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0)) + Matrix3::identity() * 1.5;
        let dm = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let p = PolarSvd::new(&m).unwrap();
        let analytic = p.rotation_differential(&dm);
        let eps = 1e-6;
        let fd = (polar_rotation(&(m + dm * eps)).unwrap() - polar_rotation(&(m - dm * eps)).unwrap())
            / (2.0 * eps);
        assert!((analytic - fd).norm() < 1e-7 * fd.norm().max(1.0));

        // adjoint consistency
        let probe = Matrix3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let lhs = probe.dot(&analytic);
        let rhs = p.rotation_differential_adjoint(&probe).dot(&dm);
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn psd_projection_clamps() {
        let m = nalgebra::Matrix2::new(1.0, 2.0, 2.0, 1.0);
        let p = project_psd(&m);
        let eig = p.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&l| l > -1e-12));
        assert!((p - nalgebra::Matrix2::new(1.5, 1.5, 1.5, 1.5)).norm() < 1e-12);
    }

    #[test]
    fn rigid_inverse_round_trips() {
        let t = RigidTransform::about_axis(&Vector3::new(1.0, 2.0, 0.0), &Vector3::x(), 0.3);
        let x = Vector3::new(0.2, -1.0, 4.0);
        assert!((t.inverse().apply(&t.apply(&x)) - x).norm() < 1e-12);
        assert!(t.ensure_rigid(1e-8).is_ok());
        let bad = RigidTransform::new(Matrix3::identity() * 1.1, Vector3::zeros());
        assert!(bad.ensure_rigid(1e-8).is_err());
    }
}
