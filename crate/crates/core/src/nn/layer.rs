//! Dense layers over column batches, with optional forward-mode tangents and
//! multiplicative output gates.
//!
//! A layer maps `X` (inputs × batch) to `Y = σ(s(ŴX + b)) ⊙ g`, where `s` is
//! the activation's pre-scale, `Ŵ` the (optionally Lipschitz-normalized)
//! weights and `g` an optional gate broadcast over the batch. Each tangent
//! `Ẋₖ` is pushed forward as `Ẏₖ = σ′ ⊙ sŴẊₖ ⊙ g`, and `backward` is the exact
//! reverse of both, so losses on Jacobians can be trained.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::activation::Activation;
use super::lipschitz::{lipschitz_normalize, lipschitz_normalize_backward, max_row_l1, softplus_inverse};
use crate::error::{Error, Result};
use crate::math::softplus;

/// Initial Lipschitz bound relative to the largest initial row norm.
const INIT_BOUND_HEADROOM: f64 = 1.05;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub activation: Activation,
    /// Raw Lipschitz parameter `c`; the effective bound is `softplus(c)`.
    pub lipschitz: Option<f64>,
}

/// Parameter gradients of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
}

/// Values kept from `forward` for `backward`.
#[derive(Debug, Clone)]
pub struct LayerCache {
    x: DMatrix<f64>,
    tangents_in: Vec<DMatrix<f64>>,
    w_eff: DMatrix<f64>,
    /// `σ`, `σ′`, `σ″` at the scaled pre-activation.
    act: [DMatrix<f64>; 3],
    /// Scaled pre-activation tangents `sŴẊₖ`.
    z_tangents: Vec<DMatrix<f64>>,
    gate: Option<DVector<f64>>,
}

/// Reverse-mode result of one layer.
#[derive(Debug, Clone)]
pub struct LayerBackward {
    pub grad: LayerGrad,
    pub dx: DMatrix<f64>,
    pub d_tangents: Vec<DMatrix<f64>>,
    pub d_gate: Option<DVector<f64>>,
}

impl DenseLayer {
    pub fn new(w: DMatrix<f64>, b: DVector<f64>, activation: Activation, lipschitz: Option<f64>) -> Result<Self> {
        if w.nrows() != b.len() {
            return Err(Error::SizeMismatch {
                expected: w.nrows(),
                got: b.len(),
            });
        }
        let layer = Self {
            w,
            b,
            activation,
            lipschitz,
        };
        layer.check_finite()?;
        Ok(layer)
    }

    /// Uniform initialization: the standard SIREN scheme for sine layers
    /// (`±1/n` for the first layer, `±√(6/n)/ω₀` after), `±1/√n` otherwise.
    /// A Lipschitz bound starts just above the initial largest row norm, so
    /// the clamp is inactive (and off its kink) at initialization.
    pub fn init<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        first: bool,
        lipschitz: bool,
        rng: &mut R,
    ) -> Self {
        let n = inputs.max(1) as f64;
        let r = match activation {
            Activation::Sine { omega0 } if !first => (6.0 / n).sqrt() / omega0,
            Activation::Sine { .. } => 1.0 / n,
            _ => 1.0 / n.sqrt(),
        };
        let w = DMatrix::from_fn(outputs, inputs, |_, _| rng.gen_range(-r..r));
        let b = DVector::from_fn(outputs, |_, _| rng.gen_range(-r..r));
        let lipschitz = lipschitz.then(|| softplus_inverse(INIT_BOUND_HEADROOM * max_row_l1(&w).max(1e-3)));
        Self {
            w,
            b,
            activation,
            lipschitz,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }

    /// Effective bound `softplus(c)` of a Lipschitz layer.
    pub fn bound(&self) -> Option<f64> {
        self.lipschitz.map(softplus)
    }

    /// Weights actually applied.
    pub fn effective_weights(&self) -> DMatrix<f64> {
        match self.lipschitz {
            Some(c) => lipschitz_normalize(&self.w, c),
            None => self.w.clone(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len() + usize::from(self.lipschitz.is_some())
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        if self.w.iter().chain(self.b.iter()).chain(self.lipschitz.iter()).all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("layer parameters".into()))
        }
    }

    pub fn zero_grad(&self) -> LayerGrad {
        LayerGrad {
            w: DMatrix::zeros(self.w.nrows(), self.w.ncols()),
            b: DVector::zeros(self.b.len()),
            c: 0.0,
        }
    }

    pub fn forward(
        &self,
        x: &DMatrix<f64>,
        tangents: &[DMatrix<f64>],
        gate: Option<&DVector<f64>>,
    ) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>, LayerCache)> {
        if x.nrows() != self.inputs() {
            return Err(Error::SizeMismatch {
                expected: self.inputs(),
                got: x.nrows(),
            });
        }
        if let Some(t) = tangents.iter().find(|t| t.shape() != x.shape()) {
            return Err(Error::SizeMismatch {
                expected: x.len(),
                got: t.len(),
            });
        }
        if let Some(g) = gate {
            if g.len() != self.outputs() {
                return Err(Error::SizeMismatch {
                    expected: self.outputs(),
                    got: g.len(),
                });
            }
        }
        let s = self.activation.pre_scale();
        let w_eff = self.effective_weights();
        let mut z = &w_eff * x;
        for mut col in z.column_iter_mut() {
            col += &self.b;
        }
        z *= s;
        let (rows, cols) = z.shape();
        let mut act = [DMatrix::zeros(rows, cols), DMatrix::zeros(rows, cols), DMatrix::zeros(rows, cols)];
        for (i, &zi) in z.iter().enumerate() {
            let (v, d1, d2) = self.activation.eval(zi);
            act[0][i] = v;
            act[1][i] = d1;
            act[2][i] = d2;
        }
        let z_tangents: Vec<DMatrix<f64>> = tangents.iter().map(|t| (&w_eff * t) * s).collect();
        let mut y = act[0].clone();
        let mut y_tangents: Vec<DMatrix<f64>> = z_tangents.iter().map(|zt| act[1].component_mul(zt)).collect();
        if let Some(g) = gate {
            scale_rows(&mut y, g);
            for yt in &mut y_tangents {
                scale_rows(yt, g);
            }
        }
        let cache = LayerCache {
            x: x.clone(),
            tangents_in: tangents.to_vec(),
            w_eff,
            act,
            z_tangents,
            gate: gate.cloned(),
        };
        Ok((y, y_tangents, cache))
    }

    /// Reverse of `forward` given `dL/dY` and `dL/dẎₖ` (empty when the loss
    /// ignores tangents).
    pub fn backward(&self, cache: &LayerCache, dy: &DMatrix<f64>, d_tangents: &[DMatrix<f64>]) -> Result<LayerBackward> {
        if dy.shape() != cache.act[0].shape() {
            return Err(Error::SizeMismatch {
                expected: cache.act[0].len(),
                got: dy.len(),
            });
        }
        let k = cache.z_tangents.len();
        if !d_tangents.is_empty() && d_tangents.len() != k {
            return Err(Error::SizeMismatch {
                expected: k,
                got: d_tangents.len(),
            });
        }
        let s = self.activation.pre_scale();
        let mut dy = dy.clone();
        let mut dyt: Vec<DMatrix<f64>> = d_tangents.to_vec();
        let mut d_gate = None;
        if let Some(g) = &cache.gate {
            // ∂/∂g of Σ dY ⊙ σ ⊙ g + Σₖ dẎₖ ⊙ σ′żₖ ⊙ g
            let mut dg = dy.component_mul(&cache.act[0]).column_sum();
            for (t, zt) in dyt.iter().zip(&cache.z_tangents) {
                dg += t.component_mul(&cache.act[1].component_mul(zt)).column_sum();
            }
            d_gate = Some(dg);
            scale_rows(&mut dy, g);
            for t in &mut dyt {
                scale_rows(t, g);
            }
        }
        // adjoints of the unscaled pre-activations
        let mut da = cache.act[1].component_mul(&dy);
        for (t, zt) in dyt.iter().zip(&cache.z_tangents) {
            da += cache.act[2].component_mul(&zt.component_mul(t));
        }
        da *= s;
        let dat: Vec<DMatrix<f64>> = dyt.iter().map(|t| cache.act[1].component_mul(t) * s).collect();

        let mut dw_eff = &da * cache.x.transpose();
        for (t, xt) in dat.iter().zip(&cache.tangents_in) {
            dw_eff += t * xt.transpose();
        }
        let db = da.column_sum();
        let dx = cache.w_eff.transpose() * &da;
        let mut d_tangents_in: Vec<DMatrix<f64>> = dat.iter().map(|t| cache.w_eff.transpose() * t).collect();
        if d_tangents_in.is_empty() {
            d_tangents_in = cache.tangents_in.iter().map(|t| DMatrix::zeros(t.nrows(), t.ncols())).collect();
        }
        let (w, c) = match self.lipschitz {
            Some(c) => lipschitz_normalize_backward(&self.w, c, &dw_eff),
            None => (dw_eff, 0.0),
        };
        Ok(LayerBackward {
            grad: LayerGrad { w, b: db, c },
            dx,
            d_tangents: d_tangents_in,
            d_gate,
        })
    }
}

fn scale_rows(m: &mut DMatrix<f64>, g: &DVector<f64>) {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row *= g[i];
    }
}

impl LayerGrad {
    pub fn add_assign(&mut self, other: &LayerGrad) {
        self.w += &other.w;
        self.b += &other.b;
        self.c += other.c;
    }

    pub fn scale(&mut self, a: f64) {
        self.w *= a;
        self.b *= a;
        self.c *= a;
    }
}
