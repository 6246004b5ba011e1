//! Per-identity mapping networks from material space into canonical space.
//!
//! `φ(x) = x + s·N((x − c)/s)` where `N` is a sine stack with a final linear
//! layer. The linear layer starts at zero, so an untrained mapping is the
//! identity and its Jacobian `J = I + ∂N/∂x̂` comes straight from the
//! network's input tangents.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::warp::Mapping;
use crate::error::{Error, Result};
use crate::geom::HexMesh;
use crate::math::polar_rotation;
use crate::nn::{Activation, Adam, DenseLayer, NetworkStack, MAPPING_OMEGA0};

pub const DEFAULT_HIDDEN: usize = 32;
const SINE_LAYERS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct MappingFunction {
    pub identity: String,
    pub net: NetworkStack,
    /// Normalization applied before the network.
    pub center: Vector3<f64>,
    pub scale: f64,
}

fn unit_tangents(batch: usize) -> Vec<DMatrix<f64>> {
    (0..3).map(|k| DMatrix::from_fn(3, batch, |i, _| f64::from(u8::from(i == k)))).collect()
}

fn to_columns(points: &[Vector3<f64>], center: &Vector3<f64>, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(3, points.len(), |i, j| (points[j][i] - center[i]) / scale)
}

impl MappingFunction {
    /// Identity mapping with randomly initialized sine layers. `center` and
    /// `scale` should cover the material domain (e.g. its bounding box).
    pub fn new(identity: &str, hidden: usize, center: Vector3<f64>, scale: f64, seed: u64) -> Result<Self> {
        if !(scale > 0.0) || hidden == 0 {
            return Err(Error::InvalidArgument(format!("mapping needs scale > 0 and hidden > 0 (scale {scale}, hidden {hidden})")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sine = Activation::Sine { omega0: MAPPING_OMEGA0 };
        let mut layers = Vec::with_capacity(SINE_LAYERS + 1);
        for i in 0..SINE_LAYERS {
            let inputs = if i == 0 { 3 } else { hidden };
            layers.push(DenseLayer::init(inputs, hidden, sine, i == 0, false, &mut rng));
        }
        let mut head = DenseLayer::init(hidden, 3, Activation::Linear, false, false, &mut rng);
        head.w.fill(0.0);
        head.b.fill(0.0);
        layers.push(head);
        Ok(Self {
            identity: identity.to_string(),
            net: NetworkStack::new(layers)?,
            center,
            scale,
        })
    }

    /// Identity mapping normalized to the bounding box of `points`.
    pub fn fitted_to(identity: &str, points: &[Vector3<f64>], hidden: usize, seed: u64) -> Result<Self> {
        let (lo, hi) = bounds(points)?;
        let scale = 0.5 * (hi - lo).amax().max(1e-12);
        Self::new(identity, hidden, 0.5 * (lo + hi), scale, seed)
    }

    /// Batched `φ(x)` and `∇φ(x)`.
    pub fn map_batch(&self, points: &[Vector3<f64>]) -> Result<(Vec<Vector3<f64>>, Vec<Matrix3<f64>>)> {
        let x = to_columns(points, &self.center, self.scale);
        let f = self.net.forward_full(&x, &unit_tangents(points.len()), &[])?;
        let mut mapped = Vec::with_capacity(points.len());
        let mut jac = Vec::with_capacity(points.len());
        for (j, p) in points.iter().enumerate() {
            mapped.push(p + self.scale * Vector3::new(f.y[(0, j)], f.y[(1, j)], f.y[(2, j)]));
            jac.push(jacobian_column(&f.tangents, j));
        }
        Ok((mapped, jac))
    }

    pub fn apply(&self, points: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        let x = to_columns(points, &self.center, self.scale);
        let y = self.net.forward(&x)?;
        Ok(points
            .iter()
            .enumerate()
            .map(|(j, p)| p + self.scale * Vector3::new(y[(0, j)], y[(1, j)], y[(2, j)]))
            .collect())
    }
}

fn jacobian_column(tangents: &[DMatrix<f64>], j: usize) -> Matrix3<f64> {
    let mut m = Matrix3::identity();
    for (k, t) in tangents.iter().enumerate() {
        for i in 0..3 {
            m[(i, k)] += t[(i, j)];
        }
    }
    m
}

impl Mapping for MappingFunction {
    fn map(&self, x: &Vector3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>)> {
        let (p, j) = self.map_batch(std::slice::from_ref(x))?;
        Ok((p[0], j[0]))
    }
}

fn bounds(points: &[Vector3<f64>]) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let first = points.first().ok_or_else(|| Error::InvalidArgument("no points to fit a mapping to".into()))?;
    Ok(points.iter().fold((*first, *first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
}

/// Simulation vertices plus one uniformly random point inside every element.
pub fn regularization_points(mesh: &HexMesh, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = mesh.h();
    let mut pts = mesh.vertices.clone();
    for c in mesh.element_centers() {
        let d = Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        pts.push(c + h * d);
    }
    pts
}

#[derive(Debug, Clone, PartialEq)]
pub struct MappingTrainConfig {
    pub lambda_e: f64,
    pub steps: usize,
    pub lr: f64,
    /// Step after which the learning rate decays linearly to zero.
    pub decay_start: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for MappingTrainConfig {
    fn default() -> Self {
        Self {
            lambda_e: 10.0,
            steps: 2000,
            lr: 1e-4,
            decay_start: 1000,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl MappingTrainConfig {
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.decay_start || self.steps <= self.decay_start {
            self.lr
        } else {
            self.lr * (self.steps - step.min(self.steps)) as f64 / (self.steps - self.decay_start) as f64
        }
    }
}

/// Loss terms of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MappingLoss {
    /// Mean squared correspondence distance.
    pub surface: f64,
    /// Mean squared Frobenius distance of `J` to its polar rotation.
    pub elastic: f64,
    pub total: f64,
}

/// Loss and flat parameter gradient of a mapping.
pub fn mapping_loss(
    map: &MappingFunction,
    material: &[Vector3<f64>],
    canonical: &[Vector3<f64>],
    reg_points: &[Vector3<f64>],
    lambda_e: f64,
) -> Result<(MappingLoss, Vec<f64>)> {
    if material.len() != canonical.len() {
        return Err(Error::SizeMismatch {
            expected: material.len(),
            got: canonical.len(),
        });
    }
    if material.is_empty() {
        return Err(Error::InvalidArgument("mapping needs at least one correspondence".into()));
    }
    if lambda_e < 0.0 {
        return Err(Error::InvalidArgument(format!("negative elastic weight {lambda_e}")));
    }
    let net = &map.net;
    let m = material.len() as f64;

    let xs = to_columns(material, &map.center, map.scale);
    let fs = net.forward_full(&xs, &[], &[])?;
    let mut dy = DMatrix::zeros(3, material.len());
    let mut surface = 0.0;
    for j in 0..material.len() {
        let out = Vector3::new(fs.y[(0, j)], fs.y[(1, j)], fs.y[(2, j)]);
        let r = material[j] + map.scale * out - canonical[j];
        surface += r.norm_squared() / m;
        dy.set_column(j, &(r * (2.0 * map.scale / m)));
    }
    let mut grads = net.backward(&fs.cache, &dy, &[])?.grads;

    let mut elastic = 0.0;
    if lambda_e > 0.0 && !reg_points.is_empty() {
        let n = reg_points.len() as f64;
        let xr = to_columns(reg_points, &map.center, map.scale);
        let fr = net.forward_full(&xr, &unit_tangents(reg_points.len()), &[])?;
        let mut dt = vec![DMatrix::zeros(3, reg_points.len()); 3];
        for j in 0..reg_points.len() {
            let jac = jacobian_column(&fr.tangents, j);
            // the minimizing rotation is the polar factor; the envelope
            // theorem makes 2(J − R) the gradient
            let diff = jac - polar_rotation(&jac)?;
            elastic += diff.norm_squared() / n;
            for k in 0..3 {
                for i in 0..3 {
                    dt[k][(i, j)] = 2.0 * lambda_e * diff[(i, k)] / n;
                }
            }
        }
        let back = net.backward(&fr.cache, &DMatrix::zeros(3, reg_points.len()), &dt)?;
        for (g, e) in grads.iter_mut().zip(&back.grads) {
            g.add_assign(e);
        }
    }
    let loss = MappingLoss {
        surface,
        elastic,
        total: surface + lambda_e * elastic,
    };
    Ok((loss, net.flatten_grads(&grads)))
}

/// Trains a mapping sending `material[i]` to `canonical[i]`, regularized at
/// `reg_points`. Returns the mapping and the loss history (one entry per step).
pub fn train_mapping(
    identity: &str,
    material: &[Vector3<f64>],
    canonical: &[Vector3<f64>],
    reg_points: &[Vector3<f64>],
    cfg: &MappingTrainConfig,
) -> Result<(MappingFunction, Vec<MappingLoss>)> {
    if material.len() != canonical.len() {
        return Err(Error::SizeMismatch {
            expected: material.len(),
            got: canonical.len(),
        });
    }
    let all: Vec<Vector3<f64>> = material.iter().chain(reg_points).copied().collect();
    let mut map = MappingFunction::fitted_to(identity, &all, cfg.hidden, cfg.seed)?;
    let mut adam = Adam::new(map.net.param_count(), cfg.lr);
    let mut history = Vec::with_capacity(cfg.steps);
    let mut params = map.net.params();
    for step in 0..cfg.steps {
        let (loss, grad) = mapping_loss(&map, material, canonical, reg_points, cfg.lambda_e)?;
        history.push(loss);
        adam.lr = cfg.lr_at(step);
        adam.step(&mut params, &grad)?;
        map.net.set_params(&params)?;
        if step % 200 == 0 {
            log::debug!("mapping {identity} step {step}: surface {:.3e} elastic {:.3e}", loss.surface, loss.elastic);
        }
    }
    Ok((map, history))
}

pub const MAPPING_MAGIC: &[u8; 4] = b"FSMP";
pub const MAPPING_VERSION: u32 = 1;

const CTX: &str = "mapping checkpoint";

fn io_err(e: std::io::Error) -> Error {
    Error::format(CTX, e.to_string())
}

/// Mapping checkpoints: magic `FSMP`, version (u32), identity name (u32
/// length + UTF-8), center and scale (4 f64), then the network in the nn
/// format. Little-endian throughout.
impl MappingFunction {
    pub fn write<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        use byteorder::{LittleEndian as LE, WriteBytesExt};
        w.write_all(MAPPING_MAGIC).map_err(io_err)?;
        w.write_u32::<LE>(MAPPING_VERSION).map_err(io_err)?;
        w.write_u32::<LE>(self.identity.len() as u32).map_err(io_err)?;
        w.write_all(self.identity.as_bytes()).map_err(io_err)?;
        for x in self.center.iter().chain(std::iter::once(&self.scale)) {
            w.write_f64::<LE>(*x).map_err(io_err)?;
        }
        crate::nn::checkpoint::write_stack(w, &self.net)
    }

    pub fn read<R: std::io::Read>(r: &mut R) -> Result<Self> {
        use byteorder::{LittleEndian as LE, ReadBytesExt};
        let bad = |m: String| Error::format(CTX, m);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAPPING_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = r.read_u32::<LE>().map_err(io_err)?;
        if version != MAPPING_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n = r.read_u32::<LE>().map_err(io_err)? as usize;
        if n > 1 << 16 {
            return Err(bad("identity name too long".into()));
        }
        let mut name = vec![0u8; n];
        r.read_exact(&mut name).map_err(io_err)?;
        let identity = String::from_utf8(name).map_err(|e| bad(e.to_string()))?;
        let mut v = [0.0; 4];
        r.read_f64_into::<LE>(&mut v).map_err(io_err)?;
        let net = crate::nn::checkpoint::read_stack(r)?;
        if net.inputs() != 3 || net.outputs() != 3 {
            return Err(bad(format!("network maps {} → {}, expected 3 → 3", net.inputs(), net.outputs())));
        }
        if !(v[3] > 0.0) {
            return Err(bad("scale must be positive".into()));
        }
        Ok(Self {
            identity,
            net,
            center: Vector3::new(v[0], v[1], v[2]),
            scale: v[3],
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::read(&mut bytes.as_slice())
    }
}
