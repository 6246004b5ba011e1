//! Rotation extraction from mapping Jacobians and rotational warping of
//! actuation tensors, with a per-element cache of warp data.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::HexMesh;
use crate::math::{PolarSvd, RigidTransform};
use crate::pd::ActuationField;

/// A map from one identity's material space into canonical space.
pub trait Mapping: Sync {
    /// `φ(x)` and its Jacobian `∇φ(x)`.
    fn map(&self, x: &Vector3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>)>;
}

/// Exact rigid mapping `φ(x) = Qx + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidMap(pub RigidTransform);

impl Mapping for RigidMap {
    fn map(&self, x: &Vector3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>)> {
        Ok((self.0.apply(x), self.0.rotation))
    }
}

/// The identity map, for the identity that defines canonical space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IdentityMap;

impl Mapping for IdentityMap {
    fn map(&self, x: &Vector3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>)> {
        Ok((*x, Matrix3::identity()))
    }
}

/// Polar rotation of a mapping Jacobian; errors when `det J ≤ 0`.
pub fn rotation_extract(j: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let det = j.determinant();
    if !(det > 0.0) {
        return Err(Error::InvertedJacobian(det));
    }
    Ok(PolarSvd::new(j)?.rotation)
}

/// `Ã = Rᵀ A R`.
pub fn warp_actuation(a: &Matrix3<f64>, r: &Matrix3<f64>) -> Matrix3<f64> {
    r.transpose() * a * r
}

/// Pullback of the warp: `dL/dA = R (dL/dÃ) Rᵀ`.
pub fn warp_actuation_backward(d_warped: &Matrix3<f64>, r: &Matrix3<f64>) -> Matrix3<f64> {
    r * d_warped * r.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpSample {
    pub material: Vector3<f64>,
    pub canonical: Vector3<f64>,
    pub jacobian: Matrix3<f64>,
    pub rotation: Matrix3<f64>,
}

pub fn warp_sample(map: &dyn Mapping, x: &Vector3<f64>) -> Result<WarpSample> {
    let (canonical, jacobian) = map.map(x)?;
    Ok(WarpSample {
        material: *x,
        canonical,
        jacobian,
        rotation: rotation_extract(&jacobian)?,
    })
}

/// Per-element canonical positions and warp rotations, computed once per
/// identity after its mapping is trained.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpCache {
    pub identity: String,
    pub canonical: Vec<Vector3<f64>>,
    pub rotations: Vec<Matrix3<f64>>,
}

const MAGIC: &[u8; 4] = b"FSWC";
const VERSION: u32 = 1;
const CTX: &str = "warp cache";

fn io_err(e: std::io::Error) -> Error {
    Error::format(CTX, e.to_string())
}

impl WarpCache {
    /// Samples the mapping at every element center.
    pub fn build(identity: &str, map: &dyn Mapping, mesh: &HexMesh) -> Result<Self> {
        let samples: Vec<WarpSample> = mesh
            .element_centers()
            .par_iter()
            .map(|c| warp_sample(map, c))
            .collect::<Result<_>>()?;
        Ok(Self {
            identity: identity.to_string(),
            canonical: samples.iter().map(|s| s.canonical).collect(),
            rotations: samples.iter().map(|s| s.rotation).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.canonical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    /// Warps canonical tensors sampled at [`WarpCache::canonical`] into the
    /// identity's material frame.
    pub fn warp(&self, canonical_tensors: &[Matrix3<f64>]) -> Result<ActuationField> {
        if canonical_tensors.len() != self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                got: canonical_tensors.len(),
            });
        }
        ActuationField::from_symmetrized(
            canonical_tensors
                .iter()
                .zip(&self.rotations)
                .map(|(a, r)| warp_actuation(a, r))
                .collect(),
        )
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_u32::<LE>(VERSION).map_err(io_err)?;
        let id = self.identity.as_bytes();
        w.write_u32::<LE>(id.len() as u32).map_err(io_err)?;
        w.write_all(id).map_err(io_err)?;
        w.write_u32::<LE>(self.len() as u32).map_err(io_err)?;
        for (x, r) in self.canonical.iter().zip(&self.rotations) {
            for v in x.iter() {
                w.write_f64::<LE>(*v).map_err(io_err)?;
            }
            for i in 0..3 {
                for j in 0..3 {
                    w.write_f64::<LE>(r[(i, j)]).map_err(io_err)?;
                }
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(Error::format(CTX, "bad magic"));
        }
        let version = r.read_u32::<LE>().map_err(io_err)?;
        if version != VERSION {
            return Err(Error::format(CTX, format!("unsupported version {version}")));
        }
        let n = r.read_u32::<LE>().map_err(io_err)? as usize;
        if n > 1 << 16 {
            return Err(Error::format(CTX, "identity tag too long"));
        }
        let mut id = vec![0u8; n];
        r.read_exact(&mut id).map_err(io_err)?;
        let identity = String::from_utf8(id).map_err(|_| Error::format(CTX, "identity tag is not UTF-8"))?;
        let count = r.read_u32::<LE>().map_err(io_err)? as usize;
        let mut canonical = Vec::with_capacity(count.min(1 << 20));
        let mut rotations = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let mut buf = [0.0; 12];
            r.read_f64_into::<LE>(&mut buf).map_err(io_err)?;
            canonical.push(Vector3::new(buf[0], buf[1], buf[2]));
            rotations.push(Matrix3::from_row_slice(&buf[3..]));
        }
        Ok(Self {
            identity,
            canonical,
            rotations,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut bytes.as_slice())
    }
}
