//! Expression/style encoders, the modulation MLP, the gated actuation
//! backbone and the jaw network, with a single flat parameter vector.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::jaw::{jaw_from_outputs, JawGrad, SixD, JAW_OUTPUTS};
use crate::canonical::{warp_actuation_backward, WarpCache};
use crate::error::{Error, Result};
use crate::math::RigidTransform;
use crate::nn::{max_row_l1, softplus_inverse, Activation, DenseLayer, LayerGrad, NetworkStack, StackCache};
use crate::pd::ActuationField;

/// Entries of the symmetric residual: three diagonal, then (0,1), (0,2), (1,2).
pub const RESIDUAL_OUTPUTS: usize = 6;
const OFF_DIAGONAL: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
/// `‖A₁ − A₂‖_F ≤ 3 ‖r₁ − r₂‖_∞` for the residual assembly.
const HEAD_SCALE: f64 = 3.0;
/// Spread of the initial style codes.
const STYLE_INIT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ActuationModel {
    pub config: ModelConfig,
    /// Canonical inputs are fed as `(X − center) / scale`.
    pub center: Vector3<f64>,
    pub scale: f64,
    pub expr_encoder: NetworkStack,
    pub style_encoder: NetworkStack,
    pub modulation: NetworkStack,
    pub actuation: NetworkStack,
    pub jaw: NetworkStack,
    /// Style codes of the training identities, by name.
    pub styles: BTreeMap<String, DVector<f64>>,
}

/// Everything the backward pass needs from one frame.
#[derive(Debug, Clone)]
pub struct FrameForward {
    pub z: DVector<f64>,
    pub m: DVector<f64>,
    /// Canonical tensors at the queried points.
    pub canonical: Vec<Matrix3<f64>>,
    pub jaw: RigidTransform,
    identity: Option<String>,
    expr_cache: StackCache,
    style_cache: StackCache,
    mod_cache: StackCache,
    act_cache: StackCache,
    jaw_cache: StackCache,
    six_d: SixD,
}

/// A model evaluation on an identity's geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub canonical: Vec<Matrix3<f64>>,
    pub field: ActuationField,
    pub jaw: RigidTransform,
    /// Elements whose predicted tensor has `det A ≤ 0`.
    pub inverted: usize,
}

fn mlp<R: Rng>(dims: &[usize], acts: &[Activation], rng: &mut R) -> Result<NetworkStack> {
    let layers = dims
        .windows(2)
        .zip(acts)
        .enumerate()
        .map(|(i, (d, &a))| DenseLayer::init(d[0], d[1], a, i == 0, false, rng))
        .collect();
    NetworkStack::new(layers)
}

fn zero_layer(inputs: usize, outputs: usize, lipschitz: Option<f64>) -> DenseLayer {
    DenseLayer {
        w: DMatrix::zeros(outputs, inputs),
        b: DVector::zeros(outputs),
        activation: Activation::Linear,
        lipschitz,
    }
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// `I + sym(r)` for one residual column.
fn assemble(r: &[f64]) -> Matrix3<f64> {
    let mut a = Matrix3::identity();
    for k in 0..3 {
        a[(k, k)] += r[k];
    }
    for (k, &(i, j)) in OFF_DIAGONAL.iter().enumerate() {
        a[(i, j)] += r[3 + k];
        a[(j, i)] += r[3 + k];
    }
    a
}

fn assemble_backward(d: &Matrix3<f64>) -> [f64; RESIDUAL_OUTPUTS] {
    let mut out = [0.0; RESIDUAL_OUTPUTS];
    for k in 0..3 {
        out[k] = d[(k, k)];
    }
    for (k, &(i, j)) in OFF_DIAGONAL.iter().enumerate() {
        out[3 + k] = d[(i, j)] + d[(j, i)];
    }
    out
}

impl ActuationModel {
    /// Fresh model: zeroed actuation and jaw heads, so every identity starts
    /// at `A = I` and the rest jaw. `bounds` is the canonical bounding box.
    pub fn new(config: ModelConfig, identities: &[&str], bounds: (Vector3<f64>, Vector3<f64>)) -> Result<Self> {
        config.validate()?;
        let (lo, hi) = bounds;
        let half = (hi - lo) * 0.5;
        if !(half.min() > 0.0) {
            return Err(Error::InvalidArgument("canonical bounds must have positive extent".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = &config;
        let expr_encoder = mlp(&[c.expr_dim, c.expr_hidden, c.expr_latent], &[Activation::Gelu, Activation::Linear], &mut rng)?;
        let style_encoder = mlp(&[c.style_dim, c.style_hidden, c.style_latent], &[Activation::Gelu, Activation::Linear], &mut rng)?;
        let modulation = mlp(&[c.latent_dim(), c.modulation_hidden, c.width], &[Activation::Gelu, Activation::Tanh], &mut rng)?;

        let sine = Activation::Sine { omega0: c.omega0 };
        let mut layers = vec![DenseLayer::init(3, c.width, sine, true, false, &mut rng)];
        for _ in 0..c.depth {
            layers.push(DenseLayer::init(c.width, c.width, Activation::Gelu, false, true, &mut rng));
        }
        layers.push(zero_layer(c.width, RESIDUAL_OUTPUTS, Some(softplus_inverse(1.0))));
        let actuation = NetworkStack::new(layers)?;

        let jaw = NetworkStack::new(vec![
            DenseLayer::init(c.latent_dim(), c.jaw_hidden, Activation::Gelu, true, false, &mut rng),
            zero_layer(c.jaw_hidden, JAW_OUTPUTS, None),
        ])?;

        let mut model = Self {
            config,
            center: (lo + hi) * 0.5,
            scale: half.max(),
            expr_encoder,
            style_encoder,
            modulation,
            actuation,
            jaw,
            styles: BTreeMap::new(),
        };
        for name in identities {
            model.register_identity(name, &mut rng)?;
        }
        Ok(model)
    }

    /// Adds an identity with a small random style code.
    pub fn register_identity<R: Rng + ?Sized>(&mut self, name: &str, rng: &mut R) -> Result<()> {
        if self.styles.contains_key(name) {
            return Err(Error::InvalidArgument(format!("identity `{name}` already registered")));
        }
        let code = DVector::from_fn(self.config.style_dim, |_, _| rng.gen_range(-STYLE_INIT..STYLE_INIT));
        self.styles.insert(name.to_string(), code);
        Ok(())
    }

    pub fn style(&self, name: &str) -> Result<&DVector<f64>> {
        self.styles.get(name).ok_or_else(|| Error::UnknownIdentity(name.to_string()))
    }

    fn check_expr(&self, expr: &DVector<f64>) -> Result<()> {
        if expr.len() != self.config.expr_dim {
            return Err(Error::SizeMismatch {
                expected: self.config.expr_dim,
                got: expr.len(),
            });
        }
        if expr.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("expression code".into()));
        }
        Ok(())
    }

    fn check_style(&self, style: &DVector<f64>) -> Result<()> {
        if style.len() != self.config.style_dim {
            return Err(Error::SizeMismatch {
                expected: self.config.style_dim,
                got: style.len(),
            });
        }
        Ok(())
    }

    /// Activation code `z` of a registered identity.
    pub fn encode(&self, expr: &DVector<f64>, identity: &str) -> Result<DVector<f64>> {
        self.encode_with_style(expr, self.style(identity)?)
    }

    /// Activation code for an explicit style code.
    pub fn encode_with_style(&self, expr: &DVector<f64>, style: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_expr(expr)?;
        self.check_style(style)?;
        let ze = self.expr_encoder.forward(&column(expr))?;
        let zs = self.style_encoder.forward(&column(style))?;
        Ok(DVector::from_iterator(ze.len() + zs.len(), ze.iter().chain(zs.iter()).copied()))
    }

    pub fn modulation_code(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.modulation.forward(&column(z))?.column(0).into())
    }

    fn normalized(&self, points: &[Vector3<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(3, points.len(), |i, j| (points[j][i] - self.center[i]) / self.scale)
    }

    fn gates<'a>(&self, m: &'a DVector<f64>) -> Vec<Option<&'a DVector<f64>>> {
        let mut g = vec![None];
        g.extend(std::iter::repeat_n(Some(m), self.config.depth));
        g.push(None);
        g
    }

    /// Canonical actuation tensors at `points` under modulation `m`.
    pub fn actuation_query(&self, points: &[Vector3<f64>], m: &DVector<f64>) -> Result<Vec<Matrix3<f64>>> {
        if m.len() != self.config.width {
            return Err(Error::SizeMismatch {
                expected: self.config.width,
                got: m.len(),
            });
        }
        let y = self.actuation.forward_full(&self.normalized(points), &[], &self.gates(m))?.y;
        Ok(y.column_iter().map(|c| assemble(c.as_slice())).collect())
    }

    /// Jaw transform in the canonical jaw frame.
    pub fn jaw_query(&self, z: &DVector<f64>) -> Result<RigidTransform> {
        let o = self.jaw.forward(&column(z))?;
        Ok(jaw_from_outputs(o.as_slice()).0)
    }

    /// Forward pass with caches; `identity` selects the trainable style code
    /// unless `style` overrides it.
    pub fn forward_frame(
        &self,
        expr: &DVector<f64>,
        identity: &str,
        style: Option<&DVector<f64>>,
        points: &[Vector3<f64>],
    ) -> Result<FrameForward> {
        self.check_expr(expr)?;
        let (code, trainable) = match style {
            Some(s) => (s, None),
            None => (self.style(identity)?, Some(identity.to_string())),
        };
        self.check_style(code)?;
        let fe = self.expr_encoder.forward_full(&column(expr), &[], &[])?;
        let fs = self.style_encoder.forward_full(&column(code), &[], &[])?;
        let z = DVector::from_iterator(fe.y.len() + fs.y.len(), fe.y.iter().chain(fs.y.iter()).copied());
        let fm = self.modulation.forward_full(&column(&z), &[], &[])?;
        let m: DVector<f64> = fm.y.column(0).into();
        let fa = self.actuation.forward_full(&self.normalized(points), &[], &self.gates(&m))?;
        let canonical = fa.y.column_iter().map(|c| assemble(c.as_slice())).collect();
        let fj = self.jaw.forward_full(&column(&z), &[], &[])?;
        let (jaw, six_d) = jaw_from_outputs(fj.y.as_slice());
        Ok(FrameForward {
            z,
            m,
            canonical,
            jaw,
            identity: trainable,
            expr_cache: fe.cache,
            style_cache: fs.cache,
            mod_cache: fm.cache,
            act_cache: fa.cache,
            jaw_cache: fj.cache,
            six_d,
        })
    }

    /// Flat parameter gradient from `dL/dA` at the queried canonical points
    /// and `dL/d(jaw)`. Style-code entries are filled for the frame's
    /// registered identity only.
    pub fn backward(&self, fwd: &FrameForward, d_canonical: &[Matrix3<f64>], d_jaw: &JawGrad) -> Result<Vec<f64>> {
        if d_canonical.len() != fwd.canonical.len() {
            return Err(Error::SizeMismatch {
                expected: fwd.canonical.len(),
                got: d_canonical.len(),
            });
        }
        let mut dy = DMatrix::zeros(RESIDUAL_OUTPUTS, d_canonical.len());
        for (j, d) in d_canonical.iter().enumerate() {
            dy.column_mut(j).copy_from_slice(&assemble_backward(d));
        }
        let ab = self.actuation.backward(&fwd.act_cache, &dy, &[])?;
        let mut dm = DVector::zeros(self.config.width);
        for g in ab.d_gates.iter().flatten() {
            dm += g;
        }
        let d_out = d_jaw.to_outputs(&fwd.six_d);
        let jb = self.jaw.backward(&fwd.jaw_cache, &DMatrix::from_column_slice(JAW_OUTPUTS, 1, &d_out), &[])?;
        let mb = self.modulation.backward(&fwd.mod_cache, &column(&dm), &[])?;
        let dz = &jb.dx + &mb.dx;
        let ne = self.config.expr_latent;
        let eb = self.expr_encoder.backward(&fwd.expr_cache, &dz.rows(0, ne).into_owned(), &[])?;
        let sb = self.style_encoder.backward(&fwd.style_cache, &dz.rows(ne, self.config.style_latent).into_owned(), &[])?;

        let mut flat = Vec::with_capacity(self.param_count());
        flat.extend(self.expr_encoder.flatten_grads(&eb.grads));
        flat.extend(self.style_encoder.flatten_grads(&sb.grads));
        flat.extend(self.modulation.flatten_grads(&mb.grads));
        flat.extend(self.actuation.flatten_grads(&ab.grads));
        flat.extend(self.jaw.flatten_grads(&jb.grads));
        for (name, code) in &self.styles {
            if fwd.identity.as_deref() == Some(name.as_str()) {
                flat.extend(sb.dx.iter());
            } else {
                flat.extend(std::iter::repeat_n(0.0, code.len()));
            }
        }
        Ok(flat)
    }

    /// Tensors on an identity's elements: canonical query, then warp.
    pub fn predict(&self, expr: &DVector<f64>, identity: &str, style: Option<&DVector<f64>>, warp: &WarpCache) -> Result<Prediction> {
        let code = match style {
            Some(s) => s.clone(),
            None => self.style(identity)?.clone(),
        };
        let z = self.encode_with_style(expr, &code)?;
        let m = self.modulation_code(&z)?;
        let canonical = self.actuation_query(&warp.canonical, &m)?;
        let field = warp.warp(&canonical)?;
        let inverted = canonical.iter().filter(|a| !(a.determinant() > 0.0)).count();
        Ok(Prediction {
            canonical,
            field,
            jaw: self.jaw_query(&z)?,
            inverted,
        })
    }

    fn stacks(&self) -> [&NetworkStack; 5] {
        [&self.expr_encoder, &self.style_encoder, &self.modulation, &self.actuation, &self.jaw]
    }

    fn stacks_mut(&mut self) -> [&mut NetworkStack; 5] {
        [&mut self.expr_encoder, &mut self.style_encoder, &mut self.modulation, &mut self.actuation, &mut self.jaw]
    }

    pub fn param_count(&self) -> usize {
        self.stacks().iter().map(|s| s.param_count()).sum::<usize>() + self.styles.values().map(|c| c.len()).sum::<usize>()
    }

    /// Flat view: the five networks in declaration order, then style codes
    /// in name order.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for s in self.stacks() {
            out.extend(s.params());
        }
        for c in self.styles.values() {
            out.extend(c.iter());
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::SizeMismatch {
                expected: self.param_count(),
                got: p.len(),
            });
        }
        if p.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        let mut k = 0;
        for s in self.stacks_mut() {
            let n = s.param_count();
            s.set_params(&p[k..k + n])?;
            k += n;
        }
        for c in self.styles.values_mut() {
            let n = c.len();
            c.copy_from_slice(&p[k..k + n]);
            k += n;
        }
        Ok(())
    }

    /// Offset of the actuation network in the flat layout.
    fn actuation_offset(&self) -> usize {
        self.stacks()[..3].iter().map(|s| s.param_count()).sum()
    }

    /// `L_lip = ∏ softplus(cᵢ)` over the actuation network and its flat
    /// gradient.
    pub fn lipschitz_loss(&self) -> Result<(f64, Vec<f64>)> {
        let (value, dc) = self.actuation.lipschitz_loss()?;
        let grads: Vec<LayerGrad> = self
            .actuation
            .layers
            .iter()
            .zip(dc)
            .map(|(l, c)| LayerGrad { c, ..l.zero_grad() })
            .collect();
        let mut flat = vec![0.0; self.param_count()];
        let off = self.actuation_offset();
        for (i, g) in self.actuation.flatten_grads(&grads).into_iter().enumerate() {
            flat[off + i] = g;
        }
        Ok((value, flat))
    }

    /// Certified bound `L̂` with `‖A(X₁) − A(X₂)‖_F ≤ L̂ ‖X₁ − X₂‖_∞` for any
    /// modulation code: sine layer `ω₀‖W‖_∞ / scale`, each gated GeLU layer
    /// its bound times the GeLU slope (gates have magnitude below one), then
    /// the head bound and the residual assembly factor.
    pub fn lipschitz_bound(&self) -> f64 {
        let mut l = HEAD_SCALE / self.scale;
        for layer in &self.actuation.layers {
            let norm = layer.bound().unwrap_or_else(|| max_row_l1(&layer.w));
            l *= norm * layer.activation.pre_scale() * layer.activation.lipschitz().max(1.0);
        }
        l
    }

    /// Row-ℓ1 contract of every bounded layer, and `L_lip` against the
    /// product of softplus bounds recomputed layer by layer.
    pub fn check_lipschitz(&self) -> Result<f64> {
        self.actuation.check_row_bounds()?;
        let (value, _) = self.actuation.lipschitz_loss()?;
        let product: f64 = self.actuation.layers.iter().filter_map(|l| l.bound()).product();
        if (value - product).abs() > 1e-12 * product.max(1.0) {
            return Err(Error::InvalidArgument(format!("L_lip {value} differs from the bound product {product}")));
        }
        Ok(value)
    }
}

/// Canonical tensors recovered from a warped field: `A = R Ã Rᵀ`.
pub fn unwarp_field(field: &ActuationField, warp: &WarpCache) -> Result<Vec<Matrix3<f64>>> {
    if field.len() != warp.len() {
        return Err(Error::SizeMismatch {
            expected: warp.len(),
            got: field.len(),
        });
    }
    Ok(field
        .tensors()
        .iter()
        .zip(&warp.rotations)
        .map(|(a, r)| warp_actuation_backward(a, r))
        .collect())
}

/// `dL/dA` in canonical space from `dL/dÃ` on the warped tensors.
pub fn pull_back_to_canonical(d_warped: &[Matrix3<f64>], warp: &WarpCache) -> Vec<Matrix3<f64>> {
    d_warped
        .iter()
        .zip(&warp.rotations)
        .map(|(d, r)| warp_actuation_backward(d, r))
        .collect()
}
