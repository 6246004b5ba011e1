//! Dataset bundles on disk: a TOML manifest, one directory per identity with
//! its lattice, rest surface, per-frame OBJ targets and a binary payload of
//! per-frame constraints, plus the shared expression codes.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::frames::{make_frames, FrameOptions, GroundTruthFrame};
use super::identity::{make_identity, SyntheticIdentity, TemplateConfig};
use super::muscles::{expression_dim, muscle_set, sample_expressions};
use crate::error::{Error, Result};
use crate::geom::{write_lattice, write_obj};
use crate::math::RigidTransform;
use crate::pd::ActuationField;

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.toml";
const CODES_FILE: &str = "codes.bin";
const FRAMES_MAGIC: &[u8; 4] = b"FSFR";
const CODES_MAGIC: &[u8; 4] = b"FSEC";
const PAYLOAD_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatagenConfig {
    pub seed: u64,
    /// Identity seeds; seed 0 is the canonical template.
    pub identities: Vec<u64>,
    pub frames: usize,
    /// Probability that an expression coordinate is active.
    pub density: f64,
    /// Codes simulated with contact.
    #[serde(default)]
    pub contact_codes: Vec<usize>,
    #[serde(default)]
    pub template: TemplateConfig,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            identities: vec![0, 1],
            frames: 40,
            density: 0.35,
            contact_codes: Vec::new(),
            template: TemplateConfig::default(),
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identities.is_empty() {
            return Err(Error::InvalidArgument("dataset needs at least one identity".into()));
        }
        let mut seen = self.identities.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.identities.len() {
            return Err(Error::InvalidArgument("identity seeds must be distinct".into()));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::InvalidArgument(format!("density {} outside [0, 1]", self.density)));
        }
        if let Some(&c) = self.contact_codes.iter().find(|&&c| c >= self.frames) {
            return Err(Error::InvalidArgument(format!("contact code {c} beyond frame count {}", self.frames)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatagenConfig,
    pub codes: Vec<DVector<f64>>,
    pub identities: Vec<SyntheticIdentity>,
    /// `frames[i]` belongs to `identities[i]`, in code order.
    pub frames: Vec<Vec<GroundTruthFrame>>,
}

impl Dataset {
    pub fn expr_dim(&self) -> usize {
        expression_dim(&self.config.template)
    }

    pub fn identity_index(&self, name: &str) -> Result<usize> {
        self.identities
            .iter()
            .position(|i| i.name == name)
            .ok_or_else(|| Error::UnknownIdentity(name.to_string()))
    }
}

pub fn generate(cfg: &DatagenConfig, opts: &FrameOptions) -> Result<Dataset> {
    cfg.validate()?;
    let dim = expression_dim(&cfg.template);
    let codes = sample_expressions(cfg.frames, dim, cfg.density, cfg.seed);
    let identities: Vec<SyntheticIdentity> = cfg
        .identities
        .iter()
        .map(|&s| make_identity(s, &cfg.template, muscle_set(&cfg.template).len()))
        .collect::<Result<_>>()?;
    let frames = identities
        .iter()
        .map(|id| make_frames(id, &codes, &cfg.contact_codes, opts))
        .collect::<Result<_>>()?;
    Ok(Dataset {
        config: cfg.clone(),
        codes,
        identities,
        frames,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    schema_version: u32,
    expr_dim: usize,
    codes: String,
    config: DatagenConfig,
    identity: Vec<IdentityEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentityEntry {
    name: String,
    seed: u64,
    lattice: String,
    rest_surface: String,
    frames: String,
    frame_count: usize,
    topology: String,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn fmt_err(ctx: &str) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::format(ctx, e.to_string())
}

fn write_vec3<W: Write>(w: &mut W, v: &Vector3<f64>) -> std::io::Result<()> {
    for x in v.iter() {
        w.write_f64::<LE>(*x)?;
    }
    Ok(())
}

fn read_vec3<R: Read>(r: &mut R) -> std::io::Result<Vector3<f64>> {
    Ok(Vector3::new(r.read_f64::<LE>()?, r.read_f64::<LE>()?, r.read_f64::<LE>()?))
}

fn write_frames<W: Write>(w: &mut W, frames: &[GroundTruthFrame], dim: usize, elements: usize, verts: usize) -> std::io::Result<()> {
    w.write_all(FRAMES_MAGIC)?;
    w.write_u32::<LE>(PAYLOAD_VERSION)?;
    for n in [frames.len(), dim, elements, verts] {
        w.write_u32::<LE>(n as u32)?;
    }
    for f in frames {
        w.write_u32::<LE>(f.code as u32)?;
        w.write_u8(u8::from(f.contact))?;
        for x in f.expr.iter() {
            w.write_f64::<LE>(*x)?;
        }
        for i in 0..3 {
            for j in 0..3 {
                w.write_f64::<LE>(f.jaw.rotation[(i, j)])?;
            }
        }
        write_vec3(w, &f.jaw.translation)?;
        for a in f.actuation.tensors() {
            for (i, j) in [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)] {
                w.write_f64::<LE>(a[(i, j)])?;
            }
        }
        for p in &f.surface {
            write_vec3(w, p)?;
        }
    }
    Ok(())
}

fn read_frames<R: Read>(r: &mut R, dim: usize, elements: usize, verts: usize) -> Result<Vec<GroundTruthFrame>> {
    let ctx = "frame payload";
    let e = fmt_err(ctx);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(&e)?;
    if &magic != FRAMES_MAGIC {
        return Err(Error::format(ctx, "bad magic"));
    }
    let version = r.read_u32::<LE>().map_err(&e)?;
    if version != PAYLOAD_VERSION {
        return Err(Error::format(ctx, format!("unsupported version {version}")));
    }
    let mut header = [0usize; 4];
    for h in &mut header {
        *h = r.read_u32::<LE>().map_err(&e)? as usize;
    }
    let [count, d, el, nv] = header;
    if (d, el, nv) != (dim, elements, verts) {
        return Err(Error::format(ctx, format!("shape ({d}, {el}, {nv}) does not match identity ({dim}, {elements}, {verts})")));
    }
    let mut frames = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let code = r.read_u32::<LE>().map_err(&e)? as usize;
        let contact = r.read_u8().map_err(&e)? != 0;
        let mut expr = vec![0.0; dim];
        r.read_f64_into::<LE>(&mut expr).map_err(&e)?;
        let mut rot = [0.0; 9];
        r.read_f64_into::<LE>(&mut rot).map_err(&e)?;
        let t = read_vec3(r).map_err(&e)?;
        let mut tensors = Vec::with_capacity(elements);
        for _ in 0..elements {
            let mut s = [0.0; 6];
            r.read_f64_into::<LE>(&mut s).map_err(&e)?;
            tensors.push(Matrix3::new(s[0], s[3], s[4], s[3], s[1], s[5], s[4], s[5], s[2]));
        }
        let surface = (0..verts).map(|_| read_vec3(r)).collect::<std::io::Result<Vec<_>>>().map_err(&e)?;
        frames.push(GroundTruthFrame {
            code,
            expr: DVector::from_vec(expr),
            actuation: ActuationField::new(tensors)?,
            jaw: RigidTransform::new(Matrix3::from_row_slice(&rot), t),
            surface,
            contact,
        });
    }
    Ok(frames)
}

/// Writes `ds` under `dir` (created if missing).
pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let dim = ds.expr_dim();
    let mut codes = Vec::new();
    codes.extend_from_slice(CODES_MAGIC);
    codes.write_u32::<LE>(PAYLOAD_VERSION).map_err(fmt_err("codes"))?;
    codes.write_u32::<LE>(ds.codes.len() as u32).map_err(fmt_err("codes"))?;
    codes.write_u32::<LE>(dim as u32).map_err(fmt_err("codes"))?;
    for c in &ds.codes {
        for x in c.iter() {
            codes.write_f64::<LE>(*x).map_err(fmt_err("codes"))?;
        }
    }
    let path = dir.join(CODES_FILE);
    std::fs::write(&path, codes).map_err(io(&path))?;

    let mut entries = Vec::new();
    for (id, frames) in ds.identities.iter().zip(&ds.frames) {
        let sub = dir.join(&id.name);
        let frame_dir = sub.join("frames");
        std::fs::create_dir_all(&frame_dir).map_err(io(&frame_dir))?;
        let lattice = sub.join("lattice.txt");
        std::fs::write(&lattice, write_lattice(id.mesh())).map_err(io(&lattice))?;
        let surface = id.rest_surface();
        surface.save_obj(&sub.join("rest.obj"))?;
        for f in frames {
            surface
                .with_vertices(f.surface.clone())
                .save_obj(&frame_dir.join(format!("f{:04}.obj", f.code)))?;
        }
        let mut payload = Vec::new();
        write_frames(&mut payload, frames, dim, id.mesh().element_count(), surface.vertices.len()).map_err(fmt_err("frame payload"))?;
        let fpath = sub.join("frames.bin");
        std::fs::write(&fpath, payload).map_err(io(&fpath))?;
        entries.push(IdentityEntry {
            name: id.name.clone(),
            seed: id.seed,
            lattice: format!("{}/lattice.txt", id.name),
            rest_surface: format!("{}/rest.obj", id.name),
            frames: format!("{}/frames.bin", id.name),
            frame_count: frames.len(),
            topology: surface.topology_hash(),
        });
    }
    let manifest = Manifest {
        schema_version: BUNDLE_SCHEMA_VERSION,
        expr_dim: dim,
        codes: CODES_FILE.into(),
        config: ds.config.clone(),
        identity: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::format("manifest", e.to_string()))?;
    let mpath = dir.join(MANIFEST);
    std::fs::write(&mpath, text).map_err(io(&mpath))
}

fn read_codes(path: &Path) -> Result<Vec<DVector<f64>>> {
    let bytes = std::fs::read(path).map_err(io(path))?;
    let mut r = bytes.as_slice();
    let e = fmt_err("codes");
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(&e)?;
    if &magic != CODES_MAGIC || r.read_u32::<LE>().map_err(&e)? != PAYLOAD_VERSION {
        return Err(Error::format("codes", "bad header"));
    }
    let n = r.read_u32::<LE>().map_err(&e)? as usize;
    let dim = r.read_u32::<LE>().map_err(&e)? as usize;
    (0..n)
        .map(|_| {
            let mut v = vec![0.0; dim];
            r.read_f64_into::<LE>(&mut v).map_err(&e)?;
            Ok(DVector::from_vec(v))
        })
        .collect()
}

/// Loads a bundle. Identities are regenerated from their seeds and checked
/// against the stored lattice and rest surface.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&mpath).map_err(io(&mpath))?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))?;
    if manifest.schema_version != BUNDLE_SCHEMA_VERSION {
        return Err(Error::format("manifest", format!("unsupported schema version {}", manifest.schema_version)));
    }
    let cfg = manifest.config;
    cfg.validate()?;
    let dim = expression_dim(&cfg.template);
    if manifest.expr_dim != dim {
        return Err(Error::format("manifest", format!("expr_dim {} but template has {dim}", manifest.expr_dim)));
    }
    let codes = read_codes(&dir.join(&manifest.codes))?;
    if codes.iter().any(|c| c.len() != dim) {
        return Err(Error::format("codes", "code dimension mismatch"));
    }
    let muscles = muscle_set(&cfg.template).len();
    let mut identities = Vec::new();
    let mut frames = Vec::new();
    for entry in &manifest.identity {
        let id = make_identity(entry.seed, &cfg.template, muscles)?;
        let lpath = dir.join(&entry.lattice);
        let stored = std::fs::read_to_string(&lpath).map_err(io(&lpath))?;
        if stored != write_lattice(id.mesh()) || id.name != entry.name {
            return Err(Error::format("bundle", format!("identity {} does not match its generator", entry.name)));
        }
        if id.rest_surface().topology_hash() != entry.topology {
            return Err(Error::format("bundle", format!("identity {} surface topology changed", entry.name)));
        }
        let fpath = dir.join(&entry.frames);
        let bytes = std::fs::read(&fpath).map_err(io(&fpath))?;
        let f = read_frames(&mut bytes.as_slice(), dim, id.mesh().element_count(), id.rest_surface().vertices.len())?;
        if f.len() != entry.frame_count {
            return Err(Error::format("bundle", format!("identity {} lists {} frames, payload has {}", entry.name, entry.frame_count, f.len())));
        }
        identities.push(id);
        frames.push(f);
    }
    Ok(Dataset {
        config: cfg,
        codes,
        identities,
        frames,
    })
}

/// SHA-256 over every file of the bundle, in sorted path order.
pub fn bundle_hash(dir: &Path) -> Result<String> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let p = entry.map_err(|e| Error::io(dir, e))?.path();
            if p.is_dir() {
                walk(&p, out)?;
            } else {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    files.sort();
    let mut hasher = Sha256::new();
    for f in files {
        let rel = f.strip_prefix(dir).unwrap_or(&f);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update(std::fs::read(&f).map_err(|e| Error::io(&f, e))?);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// OBJ text of a frame's target surface.
pub fn frame_obj(id: &SyntheticIdentity, frame: &GroundTruthFrame) -> String {
    write_obj(&id.rest_surface().with_vertices(frame.surface.clone()))
}
