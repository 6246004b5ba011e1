//! Model checkpoints: magic `FSAM`, version (u32), the configuration as
//! TOML (u32 length + UTF-8), input center and scale (4 f64), the five
//! network stacks in the nn format, then the identity registry: count (u32)
//! and per identity its name (u32 length + UTF-8) and style code (u32
//! length + f64 values). All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DVector, Vector3};

use super::config::ModelConfig;
use super::model::ActuationModel;
use crate::error::{Error, Result};
use crate::nn::checkpoint::{read_stack, write_stack};

pub const MAGIC: &[u8; 4] = b"FSAM";
pub const VERSION: u32 = 1;

const CTX: &str = "model checkpoint";
const MAX_STRING: usize = 1 << 20;

fn io_err(e: std::io::Error) -> Error {
    Error::format(CTX, e.to_string())
}

fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LE>(s.len() as u32).map_err(io_err)?;
    w.write_all(s.as_bytes()).map_err(io_err)
}

fn read_string<R: Read>(r: &mut R) -> Result<String> {
    let n = r.read_u32::<LE>().map_err(io_err)? as usize;
    if n > MAX_STRING {
        return Err(Error::format(CTX, "string too long"));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(io_err)?;
    String::from_utf8(buf).map_err(|e| Error::format(CTX, e.to_string()))
}

impl ActuationModel {
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_u32::<LE>(VERSION).map_err(io_err)?;
        let cfg = toml::to_string(&self.config).map_err(|e| Error::format(CTX, e.to_string()))?;
        write_string(w, &cfg)?;
        for x in self.center.iter().chain(std::iter::once(&self.scale)) {
            w.write_f64::<LE>(*x).map_err(io_err)?;
        }
        for s in [&self.expr_encoder, &self.style_encoder, &self.modulation, &self.actuation, &self.jaw] {
            write_stack(w, s)?;
        }
        w.write_u32::<LE>(self.styles.len() as u32).map_err(io_err)?;
        for (name, code) in &self.styles {
            write_string(w, name)?;
            w.write_u32::<LE>(code.len() as u32).map_err(io_err)?;
            for x in code.iter() {
                w.write_f64::<LE>(*x).map_err(io_err)?;
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
        let config: ModelConfig = toml::from_str(&read_string(r)?).map_err(|e| Error::format(CTX, e.to_string()))?;
        config.validate()?;
        let mut v = [0.0; 4];
        r.read_f64_into::<LE>(&mut v).map_err(io_err)?;
        let expr_encoder = read_stack(r)?;
        let style_encoder = read_stack(r)?;
        let modulation = read_stack(r)?;
        let actuation = read_stack(r)?;
        let jaw = read_stack(r)?;
        let count = r.read_u32::<LE>().map_err(io_err)? as usize;
        let mut styles = std::collections::BTreeMap::new();
        for _ in 0..count {
            let name = read_string(r)?;
            let n = r.read_u32::<LE>().map_err(io_err)? as usize;
            if n != config.style_dim {
                return Err(Error::format(CTX, format!("style code of `{name}` has length {n}")));
            }
            let mut code = vec![0.0; n];
            r.read_f64_into::<LE>(&mut code).map_err(io_err)?;
            styles.insert(name, DVector::from_vec(code));
        }
        let model = Self {
            config,
            center: Vector3::new(v[0], v[1], v[2]),
            scale: v[3],
            expr_encoder,
            style_encoder,
            modulation,
            actuation,
            jaw,
            styles,
        };
        model.check_shapes()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
        if let Ok(l) = self.check_lipschitz() {
            log::info!("saved {}: L_lip {l:.6e}, certified bound {:.6e}", path.display(), self.lipschitz_bound());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut bytes.as_slice())
    }

    /// Network shapes agree with the configuration.
    fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let expect = [
            (self.expr_encoder.inputs(), c.expr_dim),
            (self.expr_encoder.outputs(), c.expr_latent),
            (self.style_encoder.inputs(), c.style_dim),
            (self.style_encoder.outputs(), c.style_latent),
            (self.modulation.inputs(), c.latent_dim()),
            (self.modulation.outputs(), c.width),
            (self.actuation.inputs(), 3),
            (self.actuation.layers.len(), c.depth + 2),
            (self.jaw.inputs(), c.latent_dim()),
        ];
        for (got, expected) in expect {
            if got != expected {
                return Err(Error::format(CTX, format!("network shape {got} does not match configuration {expected}")));
            }
        }
        if !(self.scale > 0.0) {
            return Err(Error::format(CTX, "input scale must be positive"));
        }
        Ok(())
    }
}
