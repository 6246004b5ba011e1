use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Indexed triangle surface.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriSurface {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriSurface {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Self {
        Self { vertices, triangles }
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut set = BTreeSet::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                set.insert([a.min(b), a.max(b)]);
            }
        }
        set.into_iter().collect()
    }

    pub fn with_vertices(&self, vertices: Vec<Vector3<f64>>) -> TriSurface {
        TriSurface {
            vertices,
            triangles: self.triangles.clone(),
        }
    }

    /// Area-weighted vertex normals (unit length; zero for isolated vertices).
    pub fn vertex_normals(&self) -> Vec<Vector3<f64>> {
        vertex_normals(&self.vertices, &self.triangles)
    }

    /// Order-independent digest of the connectivity.
    pub fn topology_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.vertices.len() as u64).to_le_bytes());
        for t in &self.triangles {
            for &i in t {
                hasher.update((i as u64).to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}

pub fn vertex_normals(vertices: &[Vector3<f64>], triangles: &[[usize; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for t in triangles {
        let n = (vertices[t[1]] - vertices[t[0]]).cross(&(vertices[t[2]] - vertices[t[0]]));
        for &i in t {
            acc[i] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                n
            }
        })
        .collect()
}

/// Formats like C's `%.9g`.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if !(-5..9).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mant}e{sign}{:02}", exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// ASCII OBJ with 9 significant digits and 1-indexed faces.
pub fn write_obj(surface: &TriSurface) -> String {
    let mut s = String::new();
    for v in &surface.vertices {
        let _ = writeln!(s, "v {} {} {}", format_sig9(v.x), format_sig9(v.y), format_sig9(v.z));
    }
    for t in &surface.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

pub fn read_obj(text: &str) -> Result<TriSurface> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut toks = line.split_whitespace();
        let err = |m: &str| Error::format(format!("obj line {}", lineno + 1), m);
        match toks.next() {
            Some("v") => {
                let xyz: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| err("bad coordinate")))
                    .collect::<Result<_>>()?;
                if xyz.len() != 3 {
                    return Err(err("vertex needs three coordinates"));
                }
                vertices.push(Vector3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = toks
                    .map(|t| {
                        t.split('/')
                            .next()
                            .and_then(|i| i.parse::<usize>().ok())
                            .filter(|&i| i >= 1)
                            .map(|i| i - 1)
                            .ok_or_else(|| err("bad face index"))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs three vertices"));
                }
                // fan-triangulate polygons
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if triangles.iter().flatten().any(|&i| i >= vertices.len()) {
        return Err(Error::format("obj", "face index out of range"));
    }
    Ok(TriSurface { vertices, triangles })
}

impl TriSurface {
    pub fn save_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, write_obj(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load_obj(path: &Path) -> Result<TriSurface> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        read_obj(&text)
    }
}
