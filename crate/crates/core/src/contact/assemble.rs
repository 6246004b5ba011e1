use nalgebra::{DMatrix, DVector, Vector3};
use rayon::prelude::*;

use super::barrier::barrier_1d;
use super::distance::pair_distance;
use super::jet::{Mat12, Vec12};
use super::proxy::{collect_pairs, ContactProxy, ContactSet};
use crate::error::Result;
use crate::math::project_psd;

/// 12×12 block acting on the stacked coordinates of four proxy vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBlock {
    pub vertices: [usize; 4],
    pub matrix: Mat12,
}

/// Sum of per-pair blocks, applied in simulation space as `Wᵀ H W`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProxyHessian {
    pub blocks: Vec<PairBlock>,
}

impl ProxyHessian {
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn extend(&mut self, other: ProxyHessian) {
        self.blocks.extend(other.blocks);
    }

    pub fn apply(&self, proxy: &ContactProxy, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for b in &self.blocks {
            let local = gather(proxy, &b.vertices, v);
            scatter(proxy, &b.vertices, &(b.matrix * local), &mut out);
        }
        out
    }

    /// Dense `Wᵀ H W` over `dof` simulation coordinates.
    pub fn to_dense(&self, proxy: &ContactProxy, dof: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(dof, dof);
        for j in 0..dof {
            let mut e = DVector::zeros(dof);
            e[j] = 1.0;
            m.set_column(j, &self.apply(proxy, &e));
        }
        m
    }
}

/// `W` restricted to four proxy vertices.
pub(crate) fn gather(proxy: &ContactProxy, vertices: &[usize; 4], u: &DVector<f64>) -> Vec12 {
    let mut out = Vec12::zeros();
    for (s, &v) in vertices.iter().enumerate() {
        let p = proxy.embedding.point_flat(v, u);
        out.fixed_rows_mut::<3>(3 * s).copy_from(&p);
    }
    out
}

/// Accumulates `Wᵀ g` for a 12-vector over four proxy vertices.
pub(crate) fn scatter(proxy: &ContactProxy, vertices: &[usize; 4], g: &Vec12, out: &mut DVector<f64>) {
    for (s, &v) in vertices.iter().enumerate() {
        let gs = Vector3::new(g[3 * s], g[3 * s + 1], g[3 * s + 2]);
        proxy.embedding.scatter(v, &gs, out);
    }
}

/// Barrier value, gradient and Hessians in simulation coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierAssembly {
    pub value: f64,
    pub gradient: DVector<f64>,
    /// Per-pair PSD-projected Hessian, used by the forward solve.
    pub hessian: ProxyHessian,
    /// Unprojected Hessian, used where the exact second derivative matters.
    pub exact_hessian: ProxyHessian,
    pub pair_count: usize,
}

impl BarrierAssembly {
    pub fn empty(dof: usize) -> Self {
        Self {
            value: 0.0,
            gradient: DVector::zeros(dof),
            hessian: ProxyHessian::default(),
            exact_hessian: ProxyHessian::default(),
            pair_count: 0,
        }
    }
}

/// Chain rule through `κ·barrier_1d ∘ pair_distance`, pulled back through `W`.
pub fn assemble_barrier(
    set: &ContactSet,
    proxy: &ContactProxy,
    p: &[Vector3<f64>],
    dof: usize,
    kappa: f64,
) -> Result<BarrierAssembly> {
    let terms: Vec<(f64, Vec12, Mat12)> = set
        .pairs
        .par_iter()
        .map(|pair| {
            let d = pair_distance(pair.kind, &pair.points(p))?;
            let (b, db, ddb) = barrier_1d(d.distance, set.dhat)?;
            let g = d.gradient * (kappa * db);
            let h = (d.gradient * d.gradient.transpose() * ddb + d.hessian * db) * kappa;
            Ok((kappa * b, g, h))
        })
        .collect::<Result<_>>()?;
    let mut out = BarrierAssembly::empty(dof);
    out.pair_count = set.pairs.len();
    for (pair, (b, g, h)) in set.pairs.iter().zip(terms) {
        out.value += b;
        scatter(proxy, &pair.vertices, &g, &mut out.gradient);
        out.hessian.blocks.push(PairBlock {
            vertices: pair.vertices,
            matrix: project_psd(&h),
        });
        out.exact_hessian.blocks.push(PairBlock {
            vertices: pair.vertices,
            matrix: h,
        });
    }
    Ok(out)
}

/// `B(u)` alone; errors when any pair is at zero distance.
pub fn barrier_energy(proxy: &ContactProxy, p: &[Vector3<f64>], dhat: f64, kappa: f64) -> Result<f64> {
    let set = collect_pairs(proxy, p, dhat)?;
    let mut total = 0.0;
    for pair in &set.pairs {
        if !(pair.distance > 0.0) {
            return Err(crate::Error::Penetration(format!(
                "{:?} pair ({}, {}) at zero distance",
                pair.kind, pair.a, pair.b
            )));
        }
        total += kappa * barrier_1d(pair.distance, dhat)?.0;
    }
    Ok(total)
}
