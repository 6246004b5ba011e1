//! Versioned little-endian binary checkpoints of layer stacks.
//!
//! Layout: magic `FSNN`, version (u32), layer count (u32), then per layer
//! the activation tag (u8), ω₀ (f64, sine layers only), rows and columns
//! (u32), row-major weights, biases, a `c` flag (u8) and `c` (f64) if set.

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use super::activation::Activation;
use super::layer::DenseLayer;
use super::stack::NetworkStack;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"FSNN";
pub const VERSION: u32 = 1;

const CTX: &str = "network checkpoint";

fn io_err(e: std::io::Error) -> Error {
    Error::format(CTX, e.to_string())
}

pub fn write_stack<W: Write>(w: &mut W, stack: &NetworkStack) -> Result<()> {
    w.write_all(MAGIC).map_err(io_err)?;
    w.write_u32::<LE>(VERSION).map_err(io_err)?;
    w.write_u32::<LE>(stack.layers.len() as u32).map_err(io_err)?;
    for l in &stack.layers {
        w.write_u8(l.activation.tag()).map_err(io_err)?;
        if let Activation::Sine { omega0 } = l.activation {
            w.write_f64::<LE>(omega0).map_err(io_err)?;
        }
        w.write_u32::<LE>(l.w.nrows() as u32).map_err(io_err)?;
        w.write_u32::<LE>(l.w.ncols() as u32).map_err(io_err)?;
        for i in 0..l.w.nrows() {
            for j in 0..l.w.ncols() {
                w.write_f64::<LE>(l.w[(i, j)]).map_err(io_err)?;
            }
        }
        for &b in l.b.iter() {
            w.write_f64::<LE>(b).map_err(io_err)?;
        }
        match l.lipschitz {
            Some(c) => {
                w.write_u8(1).map_err(io_err)?;
                w.write_f64::<LE>(c).map_err(io_err)?;
            }
            None => w.write_u8(0).map_err(io_err)?,
        }
    }
    Ok(())
}

pub fn read_stack<R: Read>(r: &mut R) -> Result<NetworkStack> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(Error::format(CTX, "bad magic"));
    }
    let version = r.read_u32::<LE>().map_err(io_err)?;
    if version != VERSION {
        return Err(Error::format(CTX, format!("unsupported version {version}")));
    }
    let count = r.read_u32::<LE>().map_err(io_err)? as usize;
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let activation = match r.read_u8().map_err(io_err)? {
            0 => Activation::Linear,
            1 => Activation::Sine {
                omega0: r.read_f64::<LE>().map_err(io_err)?,
            },
            2 => Activation::Gelu,
            3 => Activation::Tanh,
            t => return Err(Error::format(CTX, format!("unknown activation tag {t}"))),
        };
        let rows = r.read_u32::<LE>().map_err(io_err)? as usize;
        let cols = r.read_u32::<LE>().map_err(io_err)? as usize;
        if rows.saturating_mul(cols) > 1 << 28 {
            return Err(Error::format(CTX, "layer too large"));
        }
        let mut data = vec![0.0; rows * cols];
        r.read_f64_into::<LE>(&mut data).map_err(io_err)?;
        let w = DMatrix::from_row_slice(rows, cols, &data);
        let mut b = vec![0.0; rows];
        r.read_f64_into::<LE>(&mut b).map_err(io_err)?;
        let lipschitz = match r.read_u8().map_err(io_err)? {
            0 => None,
            1 => Some(r.read_f64::<LE>().map_err(io_err)?),
            f => return Err(Error::format(CTX, format!("bad bound flag {f}"))),
        };
        layers.push(DenseLayer::new(w, DVector::from_vec(b), activation, lipschitz)?);
    }
    NetworkStack::new(layers)
}
