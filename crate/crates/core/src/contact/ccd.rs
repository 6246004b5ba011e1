//! Continuous collision detection along linear trajectories
//! `x(t) = x₀ + t (x₁ − x₀)`, `t ∈ [0, 1]`.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use super::distance::{classify, PairKind};
use super::proxy::{candidate_pairs, ContactProxy};
use crate::error::{Error, Result};

/// Fraction of the earliest impact time that is returned as the safe step.
pub const CCD_SCALE: f64 = 0.9;
/// Relative distance below which a coplanar configuration counts as contact.
const HIT_TOL: f64 = 1e-9;
const MAX_ADVANCE_STEPS: usize = 10_000;

fn det(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    Matrix3::from_columns(&[*a, *b, *c]).determinant()
}

fn lerp(x0: &[Vector3<f64>; 4], x1: &[Vector3<f64>; 4], t: f64) -> [Vector3<f64>; 4] {
    std::array::from_fn(|i| x0[i] + (x1[i] - x0[i]) * t)
}

fn distance_at(kind: PairKind, x: &[Vector3<f64>; 4]) -> f64 {
    // a primitive collapsing mid-step is treated as touching
    classify(kind, x).map(|(_, d2)| d2.sqrt()).unwrap_or(0.0)
}

/// Real roots of `c0 + c1 t + c2 t² + c3 t³` in `[0, 1]`, ascending, plus
/// near-touching critical points.
fn cubic_roots_unit(c: [f64; 4], touch_tol: f64) -> Vec<f64> {
    let f = |t: f64| ((c[3] * t + c[2]) * t + c[1]) * t + c[0];
    let mut breaks = vec![0.0];
    // critical points: 3c3 t² + 2c2 t + c1 = 0
    let (a, b, cc) = (3.0 * c[3], 2.0 * c[2], c[1]);
    let mut crit = Vec::new();
    if a.abs() > 1e-300 {
        let disc = b * b - 4.0 * a * cc;
        if disc >= 0.0 {
            let s = disc.sqrt();
            let q = -0.5 * (b + b.signum() * s);
            for t in [q / a, if q != 0.0 { cc / q } else { f64::NAN }] {
                if t > 0.0 && t < 1.0 {
                    crit.push(t);
                }
            }
        }
    } else if b.abs() > 1e-300 {
        let t = -cc / b;
        if t > 0.0 && t < 1.0 {
            crit.push(t);
        }
    }
    crit.sort_by(f64::total_cmp);
    breaks.extend(&crit);
    breaks.push(1.0);

    let mut roots = Vec::new();
    for w in breaks.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (flo, fhi) = (f(lo), f(hi));
        if flo == 0.0 {
            roots.push(lo);
            continue;
        }
        if flo * fhi > 0.0 {
            continue;
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) * flo > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        roots.push(lo);
    }
    for &t in &crit {
        if f(t).abs() <= touch_tol {
            roots.push(t);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

/// Conservative advancement: steps by a fraction of the current distance
/// over the bound on its rate of change.
fn advance(kind: PairKind, x0: &[Vector3<f64>; 4], x1: &[Vector3<f64>; 4], scale: f64) -> Option<f64> {
    let speed = |ids: [usize; 2]| ids.iter().map(|&i| (x1[i] - x0[i]).norm()).fold(0.0, f64::max);
    let rate = match kind {
        PairKind::VertexTriangle => (x1[0] - x0[0]).norm() + (1..4).map(|i| (x1[i] - x0[i]).norm()).fold(0.0, f64::max),
        PairKind::EdgeEdge => speed([0, 1]) + speed([2, 3]),
    };
    if rate == 0.0 {
        return None;
    }
    let mut t = 0.0;
    for _ in 0..MAX_ADVANCE_STEPS {
        let d = distance_at(kind, &lerp(x0, x1, t));
        if d <= HIT_TOL * scale {
            return Some(t);
        }
        t += CCD_SCALE * d / rate;
        if t >= 1.0 {
            return None;
        }
    }
    Some(t)
}

/// Earliest `t ∈ [0, 1]` at which the pair touches, if any.
pub fn time_of_impact(kind: PairKind, x0: &[Vector3<f64>; 4], x1: &[Vector3<f64>; 4]) -> Result<Option<f64>> {
    let scale = x0
        .iter()
        .chain(x1.iter())
        .flat_map(|p| x0.iter().map(move |q| (p - q).norm()))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let d0 = distance_at(kind, x0);
    if d0 <= 0.0 {
        return Err(Error::Penetration(format!("{kind:?} pair intersects at the start of the step")));
    }
    let v: [Vector3<f64>; 3] = std::array::from_fn(|k| x0[k + 1] - x0[0]);
    let w: [Vector3<f64>; 3] = std::array::from_fn(|k| (x1[k + 1] - x1[0]) - v[k]);
    if w.iter().all(|x| x.norm() == 0.0) {
        return Ok(None);
    }
    let c = [
        det(&v[0], &v[1], &v[2]),
        det(&w[0], &v[1], &v[2]) + det(&v[0], &w[1], &v[2]) + det(&v[0], &v[1], &w[2]),
        det(&w[0], &w[1], &v[2]) + det(&w[0], &v[1], &w[2]) + det(&v[0], &w[1], &w[2]),
        det(&w[0], &w[1], &w[2]),
    ];
    let cubic_scale = scale * scale * scale;
    if c.iter().all(|x| x.abs() <= 1e-14 * cubic_scale) {
        // coplanar throughout: the cubic carries no information
        return Ok(advance(kind, x0, x1, scale));
    }
    for t in cubic_roots_unit(c, 1e-14 * cubic_scale) {
        if distance_at(kind, &lerp(x0, x1, t)) <= HIT_TOL * scale {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Largest safe step `α ∈ (0, 1]` from `p_start` toward `p_end`: `0.9×` the
/// earliest impact over all masked pairs, or 1 without impacts.
pub fn ccd_max_step(proxy: &ContactProxy, p_start: &[Vector3<f64>], p_end: &[Vector3<f64>]) -> Result<f64> {
    let candidates = candidate_pairs(proxy, p_start, Some(p_end), 0.0);
    let tmin = candidates
        .par_iter()
        .map(|&(kind, a, b)| {
            let ids = proxy.pair_vertices(kind, a, b);
            time_of_impact(kind, &ids.map(|i| p_start[i]), &ids.map(|i| p_end[i]))
        })
        .try_fold(|| f64::INFINITY, |acc, t| Ok::<_, Error>(acc.min(t?.unwrap_or(f64::INFINITY))))
        .try_reduce(|| f64::INFINITY, |a, b| Ok(a.min(b)))?;
    Ok(if tmin.is_finite() { CCD_SCALE * tmin } else { 1.0 })
}
