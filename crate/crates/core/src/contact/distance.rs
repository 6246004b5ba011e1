//! Unsigned distances between vertex-triangle and edge-edge pairs with
//! subcase classification and exact first and second derivatives.
//!
//! A pair is four points in fixed slots: `[p, t0, t1, t2]` for a
//! vertex-triangle pair and `[a0, a1, b0, b1]` for an edge-edge pair.

use nalgebra::Vector3;

use super::jet::{Jet, JetVec, Mat12, Vec12};
use crate::error::{Error, Result};

/// Primitive length/area below which a pair is rejected.
pub const DEGENERATE_TOL: f64 = 1e-12;
/// `sin²` of the angle below which two edges are treated as parallel.
const PARALLEL_SIN2: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PairKind {
    VertexTriangle,
    EdgeEdge,
}

/// Which pieces of the two primitives realize the minimum distance. Indices
/// are pair slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcase {
    PointPoint([usize; 2]),
    /// Point slot, then the two edge slots.
    PointEdge([usize; 3]),
    PointTriangle,
    EdgeEdge,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDistance {
    pub distance: f64,
    pub subcase: Subcase,
    pub gradient: Vec12,
    pub hessian: Mat12,
}

fn point_segment(x: &[Vector3<f64>; 4], p: usize, a: usize, b: usize) -> (Subcase, f64) {
    let e = x[b] - x[a];
    let t = (x[p] - x[a]).dot(&e) / e.norm_squared();
    if t <= 0.0 {
        (Subcase::PointPoint([p, a]), (x[p] - x[a]).norm_squared())
    } else if t >= 1.0 {
        (Subcase::PointPoint([p, b]), (x[p] - x[b]).norm_squared())
    } else {
        (Subcase::PointEdge([p, a, b]), (x[p] - x[a] - e * t).norm_squared())
    }
}

fn closest<I: IntoIterator<Item = (Subcase, f64)>>(candidates: I) -> (Subcase, f64) {
    candidates
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("non-empty candidate list")
}

fn check_edge(x: &[Vector3<f64>; 4], a: usize, b: usize) -> Result<()> {
    if (x[b] - x[a]).norm() < DEGENERATE_TOL {
        return Err(Error::DegeneratePrimitive(format!("zero-length edge between slots {a} and {b}")));
    }
    Ok(())
}

/// Active subcase and squared distance.
pub fn classify(kind: PairKind, x: &[Vector3<f64>; 4]) -> Result<(Subcase, f64)> {
    match kind {
        PairKind::VertexTriangle => {
            let e1 = x[2] - x[1];
            let e2 = x[3] - x[1];
            let n = e1.cross(&e2);
            if 0.5 * n.norm() < DEGENERATE_TOL {
                return Err(Error::DegeneratePrimitive("zero-area triangle".into()));
            }
            let r = x[0] - x[1];
            let (a, b, c) = (e1.dot(&e1), e1.dot(&e2), e2.dot(&e2));
            let (d, e) = (e1.dot(&r), e2.dot(&r));
            let det = a * c - b * b;
            let b1 = (c * d - b * e) / det;
            let b2 = (a * e - b * d) / det;
            if b1 >= 0.0 && b2 >= 0.0 && b1 + b2 <= 1.0 {
                let h = r.dot(&n);
                return Ok((Subcase::PointTriangle, h * h / n.norm_squared()));
            }
            Ok(closest([point_segment(x, 0, 1, 2), point_segment(x, 0, 2, 3), point_segment(x, 0, 3, 1)]))
        }
        PairKind::EdgeEdge => {
            check_edge(x, 0, 1)?;
            check_edge(x, 2, 3)?;
            let e0 = x[1] - x[0];
            let e1 = x[3] - x[2];
            let n = e0.cross(&e1);
            let boundary = || {
                closest([
                    point_segment(x, 0, 2, 3),
                    point_segment(x, 1, 2, 3),
                    point_segment(x, 2, 0, 1),
                    point_segment(x, 3, 0, 1),
                ])
            };
            let (a, b, c) = (e0.dot(&e0), e0.dot(&e1), e1.dot(&e1));
            if n.norm_squared() <= PARALLEL_SIN2 * a * c {
                return Ok(boundary());
            }
            let r = x[0] - x[2];
            let (d, e) = (e0.dot(&r), e1.dot(&r));
            let det = a * c - b * b;
            let s = (b * e - c * d) / det;
            let t = (a * e - b * d) / det;
            if s > 0.0 && s < 1.0 && t > 0.0 && t < 1.0 {
                let h = (x[2] - x[0]).dot(&n);
                return Ok((Subcase::EdgeEdge, h * h / n.norm_squared()));
            }
            Ok(boundary())
        }
    }
}

/// Squared distance of the given subcase as a jet over the 12 coordinates.
pub fn squared_distance_jet(subcase: Subcase, x: &[Vector3<f64>; 4]) -> Jet {
    let p: [JetVec; 4] = std::array::from_fn(|i| JetVec::point(&x[i], i));
    match subcase {
        Subcase::PointPoint([i, j]) => p[i].sub(&p[j]).norm_squared(),
        Subcase::PointEdge([q, a, b]) => {
            let e = p[b].sub(&p[a]);
            p[q].sub(&p[a]).cross(&e).norm_squared() * e.norm_squared().recip()
        }
        Subcase::PointTriangle => {
            let n = p[2].sub(&p[1]).cross(&p[3].sub(&p[1]));
            let h = p[0].sub(&p[1]).dot(&n);
            h * h * n.norm_squared().recip()
        }
        Subcase::EdgeEdge => {
            let n = p[1].sub(&p[0]).cross(&p[3].sub(&p[2]));
            let h = p[2].sub(&p[0]).dot(&n);
            h * h * n.norm_squared().recip()
        }
    }
}

/// Distance with gradient and Hessian with respect to the 12 pair coordinates.
pub fn pair_distance(kind: PairKind, x: &[Vector3<f64>; 4]) -> Result<PairDistance> {
    let (subcase, d2) = classify(kind, x)?;
    if !(d2 > 0.0) {
        return Err(Error::Penetration(format!("{kind:?} pair at zero distance")));
    }
    let s = squared_distance_jet(subcase, x);
    let d = s.v.max(0.0).sqrt();
    let gradient = s.g / (2.0 * d);
    let hessian = s.h / (2.0 * d) - s.g * s.g.transpose() / (4.0 * d * d * d);
    Ok(PairDistance {
        distance: d,
        subcase,
        gradient,
        hessian,
    })
}

/// Coefficients `c` with `Σ cᵢ xᵢ = q_A − q_B`, the vector between the two
/// closest points of the pair.
pub fn closest_point_coefficients(subcase: Subcase, x: &[Vector3<f64>; 4]) -> [f64; 4] {
    let mut c = [0.0; 4];
    match subcase {
        Subcase::PointPoint([i, j]) => {
            c[i] = 1.0;
            c[j] = -1.0;
        }
        Subcase::PointEdge([p, a, b]) => {
            let e = x[b] - x[a];
            let t = ((x[p] - x[a]).dot(&e) / e.norm_squared()).clamp(0.0, 1.0);
            c[p] = 1.0;
            c[a] = -(1.0 - t);
            c[b] = -t;
        }
        Subcase::PointTriangle => {
            let e1 = x[2] - x[1];
            let e2 = x[3] - x[1];
            let r = x[0] - x[1];
            let (a, b, cc) = (e1.dot(&e1), e1.dot(&e2), e2.dot(&e2));
            let (d, e) = (e1.dot(&r), e2.dot(&r));
            let det = a * cc - b * b;
            let b1 = (cc * d - b * e) / det;
            let b2 = (a * e - b * d) / det;
            c = [1.0, -(1.0 - b1 - b2), -b1, -b2];
        }
        Subcase::EdgeEdge => {
            let e0 = x[1] - x[0];
            let e1 = x[3] - x[2];
            let r = x[0] - x[2];
            let (a, b, cc) = (e0.dot(&e0), e0.dot(&e1), e1.dot(&e1));
            let (d, e) = (e0.dot(&r), e1.dot(&r));
            let det = a * cc - b * b;
            let s = (b * e - cc * d) / det;
            let t = (a * e - b * d) / det;
            c = [1.0 - s, s, -(1.0 - t), -t];
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri(p: Vector3<f64>) -> [Vector3<f64>; 4] {
        [p, Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)]
    }

    fn sampled_vt(x: &[Vector3<f64>; 4]) -> f64 {
        let n = 140;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            for j in 0..=(n - i) {
                let (b1, b2) = (i as f64 / n as f64, j as f64 / n as f64);
                let q = x[1] + (x[2] - x[1]) * b1 + (x[3] - x[1]) * b2;
                best = best.min((x[0] - q).norm());
            }
        }
        best
    }

    fn sampled_ee(x: &[Vector3<f64>; 4]) -> f64 {
        let n = 400;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            for j in 0..=n {
                let (s, t) = (i as f64 / n as f64, j as f64 / n as f64);
                let a = x[0] + (x[1] - x[0]) * s;
                let b = x[2] + (x[3] - x[2]) * t;
                best = best.min((a - b).norm());
            }
        }
        best
    }

    #[test]
    fn vertex_above_interior() {
        let d = pair_distance(PairKind::VertexTriangle, &tri(Vector3::new(0.2, 0.2, 0.37))).unwrap();
        assert_eq!(d.subcase, Subcase::PointTriangle);
        assert!((d.distance - 0.37).abs() < 1e-15);
    }

    #[test]
    fn vertex_beyond_edge_matches_sampling() {
        let x = tri(Vector3::new(0.8, 0.8, 0.1));
        let d = pair_distance(PairKind::VertexTriangle, &x).unwrap();
        assert_eq!(d.subcase, Subcase::PointEdge([0, 2, 3]));
        let expect = ((0.6f64 / 2f64.sqrt()).powi(2) + 0.01).sqrt();
        assert!((d.distance - expect).abs() < 1e-14);
        let sampled = sampled_vt(&x);
        assert!(sampled >= d.distance - 1e-12 && sampled - d.distance < 1e-4);
    }

    #[test]
    fn vertex_beyond_corner() {
        let x = tri(Vector3::new(-0.5, -0.5, 0.0));
        let d = pair_distance(PairKind::VertexTriangle, &x).unwrap();
        assert_eq!(d.subcase, Subcase::PointPoint([0, 1]));
        assert!((d.distance - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn parallel_overlapping_edges_use_line_distance() {
        let x = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.5, 0.0, 0.3),
            Vector3::new(1.5, 0.0, 0.3),
        ];
        let d = pair_distance(PairKind::EdgeEdge, &x).unwrap();
        assert!((d.distance - 0.3).abs() < 1e-15);
        assert!((sampled_ee(&x) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn crossing_edges_interior() {
        let x = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.5, -0.5, 0.2),
            Vector3::new(0.5, 0.5, 0.2),
        ];
        let d = pair_distance(PairKind::EdgeEdge, &x).unwrap();
        assert_eq!(d.subcase, Subcase::EdgeEdge);
        assert!((d.distance - 0.2).abs() < 1e-15);
    }

    #[test]
    fn degenerate_primitives_are_rejected() {
        let x = [Vector3::zeros(), Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)];
        assert!(matches!(pair_distance(PairKind::VertexTriangle, &[Vector3::z(), x[1], x[2], x[3]]), Err(Error::DegeneratePrimitive(_))));
        assert!(matches!(pair_distance(PairKind::EdgeEdge, &x), Err(Error::DegeneratePrimitive(_))));
    }

    #[test]
    fn random_pairs_match_sampling_and_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..40 {
            let kind = if trial % 2 == 0 { PairKind::VertexTriangle } else { PairKind::EdgeEdge };
            let x: [Vector3<f64>; 4] = std::array::from_fn(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
            let d = pair_distance(kind, &x).unwrap();
            let sampled = if kind == PairKind::EdgeEdge { sampled_ee(&x) } else { sampled_vt(&x) };
            assert!(sampled >= d.distance - 1e-12, "{trial}: {} > {sampled}", d.distance);
            assert!(sampled - d.distance < 2e-2, "{trial}: {} vs {sampled}", d.distance);

            // derivatives against central differences within the same subcase
            let eps = 1e-6;
            for i in 0..12 {
                let mut xp = x;
                let mut xm = x;
                xp[i / 3][i % 3] += eps;
                xm[i / 3][i % 3] -= eps;
                let (sp, _) = classify(kind, &xp).unwrap();
                let (sm, _) = classify(kind, &xm).unwrap();
                if sp != d.subcase || sm != d.subcase {
                    continue;
                }
                let dp = pair_distance(kind, &xp).unwrap();
                let dm = pair_distance(kind, &xm).unwrap();
                let g = (dp.distance - dm.distance) / (2.0 * eps);
                assert!((g - d.gradient[i]).abs() < 1e-6, "{trial}/{i}");
                let hcol = (dp.gradient - dm.gradient) / (2.0 * eps);
                assert!((hcol - d.hessian.column(i)).amax() < 1e-4 * (1.0 + d.hessian.amax()), "{trial}/{i}");
            }
        }
    }

    #[test]
    fn closest_point_coefficients_reproduce_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..40 {
            let kind = if trial % 2 == 0 { PairKind::VertexTriangle } else { PairKind::EdgeEdge };
            let x: [Vector3<f64>; 4] = std::array::from_fn(|_| Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0)));
            let (sub, d2) = classify(kind, &x).unwrap();
            let c = closest_point_coefficients(sub, &x);
            let v = (0..4).fold(Vector3::zeros(), |acc, i| acc + x[i] * c[i]);
            assert!((v.norm_squared() - d2).abs() < 1e-12);
            assert!(c.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
