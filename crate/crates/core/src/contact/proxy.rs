use std::collections::HashMap;

use nalgebra::{DVector, Vector3};

use super::distance::{classify, PairKind, Subcase};
use crate::error::{Error, Result};
use crate::geom::{Embedding, TriSurface};

/// Collision surface embedded in the simulation lattice, `p = W u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactProxy {
    pub surface: TriSurface,
    pub embedding: Embedding,
    pub edges: Vec<[usize; 2]>,
    pub triangle_mask: Vec<bool>,
    masked_vertices: Vec<usize>,
    masked_edges: Vec<usize>,
    masked_triangles: Vec<usize>,
}

impl ContactProxy {
    /// Primitives touching a masked triangle take part in contact; all
    /// others are ignored.
    pub fn new(surface: TriSurface, embedding: Embedding, triangle_mask: Vec<bool>) -> Result<Self> {
        if embedding.point_count() != surface.vertices.len() {
            return Err(Error::SizeMismatch {
                expected: surface.vertices.len(),
                got: embedding.point_count(),
            });
        }
        if triangle_mask.len() != surface.triangles.len() {
            return Err(Error::SizeMismatch {
                expected: surface.triangles.len(),
                got: triangle_mask.len(),
            });
        }
        let edges = surface.edges();
        let mut vmask = vec![false; surface.vertices.len()];
        let mut emask_pairs = Vec::new();
        for (t, tri) in surface.triangles.iter().enumerate() {
            if triangle_mask[t] {
                for k in 0..3 {
                    vmask[tri[k]] = true;
                    let (a, b) = (tri[k], tri[(k + 1) % 3]);
                    emask_pairs.push([a.min(b), a.max(b)]);
                }
            }
        }
        emask_pairs.sort_unstable();
        emask_pairs.dedup();
        let masked_edges = edges
            .iter()
            .enumerate()
            .filter(|(_, e)| emask_pairs.binary_search(e).is_ok())
            .map(|(i, _)| i)
            .collect();
        Ok(Self {
            masked_vertices: (0..vmask.len()).filter(|&v| vmask[v]).collect(),
            masked_triangles: (0..triangle_mask.len()).filter(|&t| triangle_mask[t]).collect(),
            masked_edges,
            edges,
            surface,
            embedding,
            triangle_mask,
        })
    }

    pub fn with_full_mask(surface: TriSurface, embedding: Embedding) -> Result<Self> {
        let mask = vec![true; surface.triangles.len()];
        Self::new(surface, embedding, mask)
    }

    pub fn vertex_count(&self) -> usize {
        self.surface.vertices.len()
    }

    pub fn masked_vertices(&self) -> &[usize] {
        &self.masked_vertices
    }

    pub fn masked_edges(&self) -> &[usize] {
        &self.masked_edges
    }

    pub fn masked_triangles(&self) -> &[usize] {
        &self.masked_triangles
    }

    pub fn is_empty(&self) -> bool {
        self.masked_triangles.is_empty()
    }

    /// Proxy positions `p = W u`.
    pub fn positions(&self, u: &DVector<f64>) -> Vec<Vector3<f64>> {
        self.embedding.apply_flat(u)
    }

    /// Proxy vertex ids occupying the four slots of a pair.
    pub fn pair_vertices(&self, kind: PairKind, a: usize, b: usize) -> [usize; 4] {
        match kind {
            PairKind::VertexTriangle => {
                let t = self.surface.triangles[b];
                [a, t[0], t[1], t[2]]
            }
            PairKind::EdgeEdge => {
                let (e, f) = (self.edges[a], self.edges[b]);
                [e[0], e[1], f[0], f[1]]
            }
        }
    }

    fn shares_vertex(&self, kind: PairKind, a: usize, b: usize) -> bool {
        match kind {
            PairKind::VertexTriangle => self.surface.triangles[b].contains(&a),
            PairKind::EdgeEdge => {
                let (e, f) = (self.edges[a], self.edges[b]);
                e.iter().any(|v| f.contains(v))
            }
        }
    }
}

/// One candidate or active pair; `a`/`b` are (vertex, triangle) or
/// (edge, edge) ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactPair {
    pub kind: PairKind,
    pub a: usize,
    pub b: usize,
    pub vertices: [usize; 4],
    pub distance: f64,
    pub subcase: Subcase,
}

impl ContactPair {
    pub fn points(&self, p: &[Vector3<f64>]) -> [Vector3<f64>; 4] {
        self.vertices.map(|v| p[v])
    }
}

/// Active pairs at one configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactSet {
    pub pairs: Vec<ContactPair>,
    pub dhat: f64,
}

impl ContactSet {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn min_distance(&self) -> f64 {
        self.pairs.iter().map(|p| p.distance).fold(f64::INFINITY, f64::min)
    }
}

type Aabb = (Vector3<f64>, Vector3<f64>);

/// Uniform-grid spatial hash over axis-aligned boxes.
struct SpatialHash {
    cell: f64,
    map: HashMap<[i64; 3], Vec<usize>>,
}

impl SpatialHash {
    fn new(cell: f64) -> Self {
        Self {
            cell,
            map: HashMap::new(),
        }
    }

    fn cells(&self, b: &Aabb) -> impl Iterator<Item = [i64; 3]> {
        let lo = b.0.map(|x| (x / self.cell).floor() as i64);
        let hi = b.1.map(|x| (x / self.cell).floor() as i64);
        (lo[0]..=hi[0]).flat_map(move |i| (lo[1]..=hi[1]).flat_map(move |j| (lo[2]..=hi[2]).map(move |k| [i, j, k])))
    }

    fn insert(&mut self, id: usize, b: &Aabb) {
        let cells: Vec<_> = self.cells(b).collect();
        for c in cells {
            self.map.entry(c).or_default().push(id);
        }
    }

    fn query(&self, b: &Aabb, out: &mut Vec<usize>) {
        out.clear();
        for c in self.cells(b) {
            if let Some(ids) = self.map.get(&c) {
                out.extend_from_slice(ids);
            }
        }
        out.sort_unstable();
        out.dedup();
    }
}

fn aabb<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>, pad: f64) -> Aabb {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo.add_scalar(-pad), hi.add_scalar(pad))
}

fn overlaps(a: &Aabb, b: &Aabb) -> bool {
    (0..3).all(|k| a.0[k] <= b.1[k] && b.0[k] <= a.1[k])
}

/// Masked, non-adjacent primitive pairs whose boxes (over `p0` and, if
/// given, `p1`) come within `pad` of each other.
pub(crate) fn candidate_pairs(
    proxy: &ContactProxy,
    p0: &[Vector3<f64>],
    p1: Option<&[Vector3<f64>]>,
    pad: f64,
) -> Vec<(PairKind, usize, usize)> {
    let pts = |ids: &[usize]| -> Aabb {
        match p1 {
            Some(p1) => aabb(ids.iter().map(|&i| &p0[i]).chain(ids.iter().map(|&i| &p1[i])), 0.0),
            None => aabb(ids.iter().map(|&i| &p0[i]), 0.0),
        }
    };
    let tri_boxes: Vec<Aabb> = proxy.masked_triangles.iter().map(|&t| pts(&proxy.surface.triangles[t])).collect();
    let edge_boxes: Vec<Aabb> = proxy.masked_edges.iter().map(|&e| pts(&proxy.edges[e])).collect();
    let mut out = Vec::new();
    if tri_boxes.is_empty() {
        return out;
    }
    let mean_extent = edge_boxes.iter().map(|b| (b.1 - b.0).amax()).sum::<f64>() / edge_boxes.len().max(1) as f64;
    let cell = mean_extent.max(pad).max(1e-9);
    let inflate = |b: &Aabb| (b.0.add_scalar(-pad), b.1.add_scalar(pad));

    let mut tri_hash = SpatialHash::new(cell);
    for (i, b) in tri_boxes.iter().enumerate() {
        tri_hash.insert(i, b);
    }
    let mut hits = Vec::new();
    for &v in &proxy.masked_vertices {
        let vb = inflate(&pts(&[v]));
        tri_hash.query(&vb, &mut hits);
        for &i in &hits {
            let t = proxy.masked_triangles[i];
            if overlaps(&vb, &tri_boxes[i]) && !proxy.shares_vertex(PairKind::VertexTriangle, v, t) {
                out.push((PairKind::VertexTriangle, v, t));
            }
        }
    }

    let mut edge_hash = SpatialHash::new(cell);
    for (i, b) in edge_boxes.iter().enumerate() {
        edge_hash.insert(i, b);
    }
    for (i, &e) in proxy.masked_edges.iter().enumerate() {
        let eb = inflate(&edge_boxes[i]);
        edge_hash.query(&eb, &mut hits);
        for &j in &hits {
            let f = proxy.masked_edges[j];
            if f > e && overlaps(&eb, &edge_boxes[j]) && !proxy.shares_vertex(PairKind::EdgeEdge, e, f) {
                out.push((PairKind::EdgeEdge, e, f));
            }
        }
    }
    out
}

fn make_pair(proxy: &ContactProxy, p: &[Vector3<f64>], kind: PairKind, a: usize, b: usize) -> Result<ContactPair> {
    let vertices = proxy.pair_vertices(kind, a, b);
    let (subcase, d2) = classify(kind, &vertices.map(|v| p[v]))?;
    Ok(ContactPair {
        kind,
        a,
        b,
        vertices,
        distance: d2.sqrt(),
        subcase,
    })
}

fn check_positions(proxy: &ContactProxy, p: &[Vector3<f64>]) -> Result<()> {
    if p.len() != proxy.vertex_count() {
        return Err(Error::SizeMismatch {
            expected: proxy.vertex_count(),
            got: p.len(),
        });
    }
    Ok(())
}

/// All masked pairs closer than `d̂`, found through a spatial hash.
pub fn collect_pairs(proxy: &ContactProxy, p: &[Vector3<f64>], dhat: f64) -> Result<ContactSet> {
    check_positions(proxy, p)?;
    let mut pairs = Vec::new();
    for (kind, a, b) in candidate_pairs(proxy, p, None, dhat) {
        let pair = make_pair(proxy, p, kind, a, b)?;
        if pair.distance < dhat {
            pairs.push(pair);
        }
    }
    pairs.sort_by_key(|q| (q.kind, q.a, q.b));
    Ok(ContactSet { pairs, dhat })
}

/// Every masked, non-adjacent pair with its distance (quadratic cost).
pub fn all_pairs(proxy: &ContactProxy, p: &[Vector3<f64>]) -> Result<Vec<ContactPair>> {
    check_positions(proxy, p)?;
    let mut pairs = Vec::new();
    for &v in &proxy.masked_vertices {
        for &t in &proxy.masked_triangles {
            if !proxy.shares_vertex(PairKind::VertexTriangle, v, t) {
                pairs.push(make_pair(proxy, p, PairKind::VertexTriangle, v, t)?);
            }
        }
    }
    for (i, &e) in proxy.masked_edges.iter().enumerate() {
        for &f in &proxy.masked_edges[i + 1..] {
            if !proxy.shares_vertex(PairKind::EdgeEdge, e, f) {
                pairs.push(make_pair(proxy, p, PairKind::EdgeEdge, e.min(f), e.max(f))?);
            }
        }
    }
    Ok(pairs)
}

/// Reference implementation of [`collect_pairs`] by exhaustive enumeration.
pub fn collect_pairs_brute_force(proxy: &ContactProxy, p: &[Vector3<f64>], dhat: f64) -> Result<ContactSet> {
    let mut pairs: Vec<_> = all_pairs(proxy, p)?.into_iter().filter(|q| q.distance < dhat).collect();
    pairs.sort_by_key(|q| (q.kind, q.a, q.b));
    Ok(ContactSet { pairs, dhat })
}

/// Smallest distance over every masked pair; infinite without pairs.
pub fn min_pair_distance(proxy: &ContactProxy, p: &[Vector3<f64>]) -> Result<f64> {
    Ok(all_pairs(proxy, p)?.iter().map(|q| q.distance).fold(f64::INFINITY, f64::min))
}
