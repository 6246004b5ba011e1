use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::operator::corner_offset;
use crate::error::{Error, Result};

const LATTICE_MAGIC: &str = "facesim-lattice";
const LATTICE_VERSION: u32 = 1;

/// Occupancy description of a lattice: every cell carries a bitmask of the
/// material parts it contains (0 = empty).
///
/// Parts listed in `separated` never share lattice vertices; a cell holding
/// two separated parts is instantiated once per part. This keeps thin gaps
/// narrower than one cell (a mouth slit, say) from being glued shut.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeDomain {
    pub origin: Vector3<f64>,
    pub dims: [usize; 3],
    pub cells: Vec<u8>,
    pub separated: Vec<(u8, u8)>,
}

impl LatticeDomain {
    pub fn new(origin: Vector3<f64>, dims: [usize; 3]) -> Self {
        Self {
            origin,
            dims,
            cells: vec![0; dims[0] * dims[1] * dims[2]],
            separated: Vec::new(),
        }
    }

    pub fn cell_index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    pub fn cell_coords(&self, index: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    pub fn mark(&mut self, c: [usize; 3], part: u8) {
        let idx = self.cell_index(c);
        self.cells[idx] |= 1 << part;
    }

    fn glued(&self, a: u8, b: u8) -> bool {
        !self
            .separated
            .iter()
            .any(|&(x, y)| (x == a && y == b) || (x == b && y == a))
    }

    /// Groups the parts in `mask` into glued components (bitmasks).
    fn components(&self, mask: u8) -> Vec<u8> {
        let parts: Vec<u8> = (0..8).filter(|p| mask & (1 << p) != 0).collect();
        let mut comp: Vec<usize> = (0..parts.len()).collect();
        fn find(c: &mut [usize], i: usize) -> usize {
            let mut r = i;
            while c[r] != r {
                r = c[r];
            }
            c[i] = r;
            r
        }
        for a in 0..parts.len() {
            for b in a + 1..parts.len() {
                if self.glued(parts[a], parts[b]) {
                    let ra = find(&mut comp, a);
                    let rb = find(&mut comp, b);
                    comp[ra] = rb;
                }
            }
        }
        let mut groups: Vec<(usize, u8)> = Vec::new();
        for (i, &p) in parts.iter().enumerate() {
            let r = find(&mut comp, i);
            match groups.iter_mut().find(|(root, _)| *root == r) {
                Some((_, m)) => *m |= 1 << p,
                None => groups.push((r, 1 << p)),
            }
        }
        groups.into_iter().map(|(_, m)| m).collect()
    }
}

/// Input region for [`build_hex_lattice`].
#[derive(Debug, Clone)]
pub enum Domain {
    /// Axis-aligned box; extents are rounded up to whole cells.
    Box { min: Vector3<f64>, max: Vector3<f64> },
    Occupancy(LatticeDomain),
}

/// Regular hexahedral simulation lattice.
///
/// Element corners follow the bit order `c = i + 2j + 4k` with `(i, j, k)`
/// the corner offset along x, y, z.
#[derive(Debug, Clone)]
pub struct HexMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub elements: Vec<[usize; 8]>,
    pub element_size: f64,
    /// Lattice cell of every element.
    pub element_cells: Vec<[usize; 3]>,
    /// Part mask of every element copy.
    pub element_parts: Vec<u8>,
    pub domain: LatticeDomain,
    cell_lookup: HashMap<usize, Vec<usize>>,
}

impl HexMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn element_count(&self) -> usize {
        self.elements.len()
    }

    pub fn h(&self) -> f64 {
        self.element_size
    }

    pub fn element_volume(&self) -> f64 {
        self.element_size.powi(3)
    }

    pub fn element_center(&self, e: usize) -> Vector3<f64> {
        let c = self.element_cells[e];
        self.domain.origin
            + Vector3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * self.element_size
    }

    pub fn element_centers(&self) -> Vec<Vector3<f64>> {
        (0..self.element_count()).map(|e| self.element_center(e)).collect()
    }

    /// Element copies living in lattice cell `c`.
    pub fn elements_in_cell(&self, c: [usize; 3]) -> &[usize] {
        self.cell_lookup
            .get(&self.domain.cell_index(c))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn diameter(&self) -> f64 {
        super::diameter(&self.vertices)
    }

    /// Checks the structural invariants; used by tests and after parsing.
    pub fn validate(&self) -> Result<()> {
        let h = self.element_size;
        if !(h > 0.0) {
            return Err(Error::InvalidArgument(format!("element size {h} must be positive")));
        }
        for (e, el) in self.elements.iter().enumerate() {
            let mut sorted = *el;
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) || sorted[7] >= self.vertices.len() {
                return Err(Error::DegenerateElement {
                    element: e,
                    reason: "repeated or out-of-range vertex index".into(),
                });
            }
            let base = self.vertices[el[0]];
            for (c, &v) in el.iter().enumerate() {
                let expect = base + corner_offset(c) * h;
                if (self.vertices[v] - expect).norm() > 1e-9 * h {
                    return Err(Error::DegenerateElement {
                        element: e,
                        reason: "corners do not form an axis-aligned cube".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Builds the hexahedral lattice covering every occupied cell of `domain`.
pub fn build_hex_lattice(domain: &Domain, h: f64) -> Result<HexMesh> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("element size {h} must be positive")));
    }
    let lattice = match domain {
        Domain::Box { min, max } => {
            let ext = max - min;
            if ext.iter().any(|&e| !(e > 0.0)) {
                return Err(Error::EmptyDomain);
            }
            let dims = [0, 1, 2].map(|a| ((ext[a] / h) - 1e-9).ceil().max(1.0) as usize);
            let mut d = LatticeDomain::new(*min, dims);
            d.cells.iter_mut().for_each(|c| *c = 1);
            d
        }
        Domain::Occupancy(d) => {
            if d.cells.len() != d.dims.iter().product::<usize>() {
                return Err(Error::SizeMismatch {
                    expected: d.dims.iter().product(),
                    got: d.cells.len(),
                });
            }
            d.clone()
        }
    };
    if lattice.cells.iter().all(|&c| c == 0) {
        return Err(Error::EmptyDomain);
    }

    // element copies: (cell index, part mask)
    let mut copies: Vec<(usize, u8)> = Vec::new();
    for (idx, &mask) in lattice.cells.iter().enumerate() {
        if mask != 0 {
            for group in lattice.components(mask) {
                copies.push((idx, group));
            }
        }
    }

    let [nx, ny, _] = lattice.dims;
    let node_index = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);

    // parts present at every node
    let mut node_parts: HashMap<usize, u8> = HashMap::new();
    for &(cell, mask) in &copies {
        let [ci, cj, ck] = lattice.cell_coords(cell);
        for c in 0..8 {
            let o = corner_offset(c);
            let n = node_index(ci + o.x as usize, cj + o.y as usize, ck + o.z as usize);
            *node_parts.entry(n).or_insert(0) |= mask;
        }
    }
    let mut nodes: Vec<usize> = node_parts.keys().copied().collect();
    nodes.sort_unstable();

    let mut vertices = Vec::new();
    let mut node_copies: HashMap<usize, Vec<(u8, usize)>> = HashMap::new();
    for n in nodes {
        let i = n % (nx + 1);
        let j = (n / (nx + 1)) % (ny + 1);
        let k = n / ((nx + 1) * (ny + 1));
        let pos = lattice.origin + Vector3::new(i as f64, j as f64, k as f64) * h;
        let groups = lattice.components(node_parts[&n]);
        let entry = node_copies.entry(n).or_default();
        for g in groups {
            entry.push((g, vertices.len()));
            vertices.push(pos);
        }
    }

    let mut elements = Vec::with_capacity(copies.len());
    let mut element_cells = Vec::with_capacity(copies.len());
    let mut element_parts = Vec::with_capacity(copies.len());
    let mut cell_lookup: HashMap<usize, Vec<usize>> = HashMap::new();
    for &(cell, mask) in &copies {
        let [ci, cj, ck] = lattice.cell_coords(cell);
        let mut el = [0usize; 8];
        for (c, slot) in el.iter_mut().enumerate() {
            let o = corner_offset(c);
            let n = node_index(ci + o.x as usize, cj + o.y as usize, ck + o.z as usize);
            *slot = node_copies[&n]
                .iter()
                .find(|(g, _)| g & mask != 0)
                .map(|&(_, v)| v)
                .expect("node copy exists for every incident part");
        }
        cell_lookup.entry(cell).or_default().push(elements.len());
        elements.push(el);
        element_cells.push([ci, cj, ck]);
        element_parts.push(mask);
    }

    Ok(HexMesh {
        vertices,
        elements,
        element_size: h,
        element_cells,
        element_parts,
        domain: lattice,
        cell_lookup,
    })
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

/// Writes the versioned structured-text lattice format.
pub fn write_lattice(mesh: &HexMesh) -> String {
    let d = &mesh.domain;
    let mut s = String::new();
    let _ = writeln!(s, "{LATTICE_MAGIC}");
    let _ = writeln!(s, "version {LATTICE_VERSION}");
    let _ = writeln!(s, "h {}", fmt_f64(mesh.element_size));
    let _ = writeln!(s, "dims {} {} {}", d.dims[0], d.dims[1], d.dims[2]);
    let _ = writeln!(
        s,
        "origin {} {} {}",
        fmt_f64(d.origin.x),
        fmt_f64(d.origin.y),
        fmt_f64(d.origin.z)
    );
    let sep: Vec<String> = d.separated.iter().map(|(a, b)| format!("{a}-{b}")).collect();
    let _ = writeln!(s, "separate {}", if sep.is_empty() { "none".to_string() } else { sep.join(" ") });
    let _ = writeln!(s, "cells");
    for row in d.cells.chunks(d.dims[0]) {
        let line: String = row.iter().map(|m| format!("{m:02x}")).collect();
        let _ = writeln!(s, "{line}");
    }
    let _ = writeln!(s, "vertices {}", mesh.vertices.len());
    for v in &mesh.vertices {
        let _ = writeln!(s, "{} {} {}", fmt_f64(v.x), fmt_f64(v.y), fmt_f64(v.z));
    }
    s
}

/// Parses a lattice file and rebuilds the mesh, checking the stored
/// vertex coordinates against the reconstruction.
pub fn read_lattice(text: &str) -> Result<HexMesh> {
    let ctx = "lattice";
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::format(ctx, format!("missing {what}")));

    if next("magic")? != LATTICE_MAGIC {
        return Err(Error::format(ctx, "bad magic"));
    }
    let version: u32 = field(next("version")?, "version")?;
    if version != LATTICE_VERSION {
        return Err(Error::format(ctx, format!("unsupported version {version}")));
    }
    let h: f64 = field(next("h")?, "h")?;
    let dims = vec_field::<usize>(next("dims")?, "dims")?;
    let origin = vec_field::<f64>(next("origin")?, "origin")?;
    if dims.len() != 3 || origin.len() != 3 {
        return Err(Error::format(ctx, "dims/origin need three values"));
    }
    let sep_line = next("separate")?;
    let sep_rest = sep_line
        .strip_prefix("separate")
        .ok_or_else(|| Error::format(ctx, "expected `separate`"))?
        .trim();
    let mut separated = Vec::new();
    if sep_rest != "none" {
        for tok in sep_rest.split_whitespace() {
            let (a, b) = tok
                .split_once('-')
                .ok_or_else(|| Error::format(ctx, format!("bad separation `{tok}`")))?;
            let a = a.parse().map_err(|_| Error::format(ctx, "bad part"))?;
            let b = b.parse().map_err(|_| Error::format(ctx, "bad part"))?;
            separated.push((a, b));
        }
    }
    if next("cells")? != "cells" {
        return Err(Error::format(ctx, "expected `cells`"));
    }
    let mut domain = LatticeDomain::new(Vector3::new(origin[0], origin[1], origin[2]), [dims[0], dims[1], dims[2]]);
    domain.separated = separated;
    let rows = dims[1] * dims[2];
    let mut cells = Vec::with_capacity(domain.cells.len());
    for _ in 0..rows {
        let row = next("cell row")?;
        if row.len() != 2 * dims[0] {
            return Err(Error::format(ctx, "cell row has wrong length"));
        }
        for i in 0..dims[0] {
            let m = u8::from_str_radix(&row[2 * i..2 * i + 2], 16).map_err(|_| Error::format(ctx, "bad cell mask"))?;
            cells.push(m);
        }
    }
    domain.cells = cells;
    let count: usize = field(next("vertices")?, "vertices")?;
    let mesh = build_hex_lattice(&Domain::Occupancy(domain), h)?;
    if count != mesh.vertices.len() {
        return Err(Error::format(ctx, "vertex count disagrees with occupancy"));
    }
    for v in &mesh.vertices {
        let xyz = vec_field_raw::<f64>(next("vertex")?)?;
        if xyz.len() != 3 || (Vector3::new(xyz[0], xyz[1], xyz[2]) - v).norm() > 1e-9 * h {
            return Err(Error::format(ctx, "vertex coordinates disagree with occupancy"));
        }
    }
    Ok(mesh)
}

fn field<T: std::str::FromStr>(line: &str, name: &str) -> Result<T> {
    let rest = line
        .strip_prefix(name)
        .ok_or_else(|| Error::format("lattice", format!("expected `{name}`")))?;
    rest.trim()
        .parse()
        .map_err(|_| Error::format("lattice", format!("bad value for `{name}`")))
}

fn vec_field<T: std::str::FromStr>(line: &str, name: &str) -> Result<Vec<T>> {
    let rest = line
        .strip_prefix(name)
        .ok_or_else(|| Error::format("lattice", format!("expected `{name}`")))?;
    vec_field_raw(rest)
}

fn vec_field_raw<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format("lattice", format!("bad number `{t}`"))))
        .collect()
}

impl HexMesh {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, write_lattice(self)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<HexMesh> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        read_lattice(&text)
    }
}
