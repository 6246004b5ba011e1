use nalgebra::{DVector, Vector3};

use super::operator::trilinear_weights;
use super::HexMesh;
use crate::error::{Error, Result};

/// Points closer than this (in units of `h`) to an occupied element are snapped in.
const SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub element: usize,
    /// Parametric coordinates inside the element.
    pub xi: Vector3<f64>,
    pub entries: [(usize, f64); 8],
}

/// Sparse trilinear interpolation matrix `W` (one row per embedded point).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Embedding {
    pub rows: Vec<EmbeddingRow>,
    pub vertex_count: usize,
}

impl Embedding {
    pub fn point_count(&self) -> usize {
        self.rows.len()
    }

    pub fn point(&self, i: usize, u: &[Vector3<f64>]) -> Vector3<f64> {
        self.rows[i]
            .entries
            .iter()
            .fold(Vector3::zeros(), |acc, &(v, w)| acc + u[v] * w)
    }

    /// Embedded point `i` from flat simulation coordinates.
    pub fn point_flat(&self, i: usize, u: &DVector<f64>) -> Vector3<f64> {
        self.rows[i]
            .entries
            .iter()
            .fold(Vector3::zeros(), |acc, &(v, w)| acc + super::vertex(u, v) * w)
    }

    pub fn apply_flat(&self, u: &DVector<f64>) -> Vec<Vector3<f64>> {
        (0..self.rows.len()).map(|i| self.point_flat(i, u)).collect()
    }

    /// Accumulates `Wᵢᵀ g` into a flat simulation-space vector.
    pub fn scatter(&self, i: usize, g: &Vector3<f64>, out: &mut DVector<f64>) {
        for &(v, w) in &self.rows[i].entries {
            super::add_vertex(out, v, &(g * w));
        }
    }

    /// `Wᵀ g` for a full set of per-point vectors.
    pub fn transpose_apply(&self, g: &[Vector3<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(3 * self.vertex_count);
        for (i, gi) in g.iter().enumerate() {
            self.scatter(i, gi, &mut out);
        }
        out
    }

    pub fn subset(&self, indices: &[usize]) -> Embedding {
        Embedding {
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            vertex_count: self.vertex_count,
        }
    }
}

fn locate(mesh: &HexMesh, p: &Vector3<f64>, part: Option<u8>) -> Option<(usize, Vector3<f64>)> {
    let h = mesh.element_size;
    let d = &mesh.domain;
    let c = (p - d.origin) / h;
    let mut candidates: [Vec<usize>; 3] = Default::default();
    for a in 0..3 {
        let n = d.dims[a] as i64;
        let base = c[a].floor() as i64;
        let frac = c[a] - base as f64;
        let mut opts = vec![base];
        if frac < SNAP_TOL {
            opts.push(base - 1);
        }
        if frac > 1.0 - SNAP_TOL {
            opts.push(base + 1);
        }
        candidates[a] = opts
            .into_iter()
            .filter(|&i| (0..n).contains(&i))
            .map(|i| i as usize)
            .collect();
    }
    for &k in &candidates[2] {
        for &j in &candidates[1] {
            for &i in &candidates[0] {
                let local = c - Vector3::new(i as f64, j as f64, k as f64);
                if local.iter().any(|&x| !(-SNAP_TOL..=1.0 + SNAP_TOL).contains(&x)) {
                    continue;
                }
                let found = mesh
                    .elements_in_cell([i, j, k])
                    .iter()
                    .copied()
                    .find(|&e| part.is_none_or(|pt| mesh.element_parts[e] & (1 << pt) != 0));
                if let Some(e) = found {
                    return Some((e, local.map(|x| x.clamp(0.0, 1.0))));
                }
            }
        }
    }
    None
}

fn embed(mesh: &HexMesh, points: &[Vector3<f64>], parts: Option<&[u8]>) -> Result<Embedding> {
    if let Some(parts) = parts {
        if parts.len() != points.len() {
            return Err(Error::SizeMismatch {
                expected: points.len(),
                got: parts.len(),
            });
        }
    }
    let mut rows = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let (element, xi) =
            locate(mesh, p, parts.map(|ps| ps[i])).ok_or(Error::PointOutside { index: i })?;
        let w = trilinear_weights(&xi);
        let verts = mesh.elements[element];
        rows.push(EmbeddingRow {
            element,
            xi,
            entries: std::array::from_fn(|c| (verts[c], w[c])),
        });
    }
    Ok(Embedding {
        rows,
        vertex_count: mesh.vertex_count(),
    })
}

/// Trilinear embedding of `points` into the lattice.
pub fn embed_points(mesh: &HexMesh, points: &[Vector3<f64>]) -> Result<Embedding> {
    embed(mesh, points, None)
}

/// Like [`embed_points`], restricted to element copies holding each point's part.
pub fn embed_points_with_parts(mesh: &HexMesh, points: &[Vector3<f64>], parts: &[u8]) -> Result<Embedding> {
    embed(mesh, points, Some(parts))
}

/// `p = W u`.
pub fn apply_embedding(emb: &Embedding, u: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    if u.len() != emb.vertex_count {
        return Err(Error::SizeMismatch {
            expected: emb.vertex_count,
            got: u.len(),
        });
    }
    Ok((0..emb.rows.len()).map(|i| emb.point(i, u)).collect())
}
