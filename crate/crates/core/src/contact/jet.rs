//! Second-order forward-mode scalars over the 12 coordinates of a contact
//! pair (four points). Used to differentiate squared distances exactly.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{SMatrix, SVector, Vector3};

pub type Vec12 = SVector<f64, 12>;
pub type Mat12 = SMatrix<f64, 12, 12>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub g: Vec12,
    pub h: Mat12,
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Self {
            v,
            g: Vec12::zeros(),
            h: Mat12::zeros(),
        }
    }

    pub fn variable(v: f64, i: usize) -> Self {
        let mut g = Vec12::zeros();
        g[i] = 1.0;
        Self { v, g, h: Mat12::zeros() }
    }

    pub fn recip(self) -> Self {
        let inv = 1.0 / self.v;
        let inv2 = inv * inv;
        Self {
            v: inv,
            g: self.g * -inv2,
            h: self.h * -inv2 + self.g * self.g.transpose() * (2.0 * inv2 * inv),
        }
    }

    pub fn scale(self, s: f64) -> Self {
        Self {
            v: self.v * s,
            g: self.g * s,
            h: self.h * s,
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet {
            v: self.v + o.v,
            g: self.g + o.g,
            h: self.h + o.h,
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet {
            v: self.v - o.v,
            g: self.g - o.g,
            h: self.h - o.h,
        }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let cross = self.g * o.g.transpose();
        Jet {
            v: self.v * o.v,
            g: self.g * o.v + o.g * self.v,
            h: self.h * o.v + o.h * self.v + cross + cross.transpose(),
        }
    }
}

/// 3-vector of jets.
#[derive(Debug, Clone, Copy)]
pub struct JetVec(pub [Jet; 3]);

impl JetVec {
    /// Point `slot ∈ 0..4` of the pair as independent variables.
    pub fn point(x: &Vector3<f64>, slot: usize) -> Self {
        JetVec(std::array::from_fn(|a| Jet::variable(x[a], 3 * slot + a)))
    }

    pub fn sub(&self, o: &JetVec) -> JetVec {
        JetVec(std::array::from_fn(|a| self.0[a] - o.0[a]))
    }

    pub fn dot(&self, o: &JetVec) -> Jet {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(&self, o: &JetVec) -> JetVec {
        let [a0, a1, a2] = self.0;
        let [b0, b1, b2] = o.0;
        JetVec([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])
    }

    pub fn norm_squared(&self) -> Jet {
        self.dot(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_reciprocal_derivatives() {
        // f(x0, x1) = x0² / x1 at (3, 2)
        let x0 = Jet::variable(3.0, 0);
        let x1 = Jet::variable(2.0, 1);
        let f = x0 * x0 * x1.recip();
        assert!((f.v - 4.5).abs() < 1e-15);
        assert!((f.g[0] - 3.0).abs() < 1e-15);
        assert!((f.g[1] + 2.25).abs() < 1e-15);
        assert!((f.h[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((f.h[(0, 1)] + 1.5).abs() < 1e-15);
        assert!((f.h[(1, 0)] + 1.5).abs() < 1e-15);
        assert!((f.h[(1, 1)] - 2.25).abs() < 1e-15);
    }

    #[test]
    fn cross_product_squared_norm() {
        let a = JetVec::point(&Vector3::new(1.0, 0.0, 0.0), 0);
        let b = JetVec::point(&Vector3::new(0.0, 2.0, 0.0), 1);
        let n = a.cross(&b).norm_squared();
        assert!((n.v - 4.0).abs() < 1e-15);
        // ∂|a×b|²/∂a = 2 |b|² a − 2 (a·b) b, and symmetrically for b
        assert!((n.g[0] - 8.0).abs() < 1e-15);
        assert!((n.g[4] - 4.0).abs() < 1e-15);
        assert!([1, 2, 3, 5].iter().all(|&i| n.g[i].abs() < 1e-15));
        assert!((n.h - n.h.transpose()).norm() < 1e-14);
    }
}
