use nalgebra::{DMatrix, DVector};

use super::layer::{DenseLayer, LayerBackward, LayerCache, LayerGrad};
use super::lipschitz::{max_row_l1, ROW_BOUND_SLACK};
use crate::error::{Error, Result};
use crate::math::sigmoid;

/// An ordered chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkStack {
    pub layers: Vec<DenseLayer>,
}

/// Everything `backward` needs from one `forward_full` call.
#[derive(Debug, Clone)]
pub struct StackCache {
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
pub struct StackForward {
    pub y: DMatrix<f64>,
    pub tangents: Vec<DMatrix<f64>>,
    pub cache: StackCache,
}

#[derive(Debug, Clone)]
pub struct StackBackward {
    pub grads: Vec<LayerGrad>,
    pub dx: DMatrix<f64>,
    pub d_tangents: Vec<DMatrix<f64>>,
    /// Per-layer gate gradients, `None` for ungated layers.
    pub d_gates: Vec<Option<DVector<f64>>>,
}

impl NetworkStack {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].outputs() != w[1].inputs() {
                return Err(Error::SizeMismatch {
                    expected: w[0].outputs(),
                    got: w[1].inputs(),
                });
            }
        }
        for l in &layers {
            l.check_finite()?;
        }
        Ok(Self { layers })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs())
    }

    /// Plain batched evaluation.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_full(x, &[], &[])?.y)
    }

    /// Evaluation with tangents and per-layer gates (`gates` may be shorter
    /// than the stack; missing entries mean ungated).
    pub fn forward_full(&self, x: &DMatrix<f64>, tangents: &[DMatrix<f64>], gates: &[Option<&DVector<f64>>]) -> Result<StackForward> {
        let mut y = x.clone();
        let mut t = tangents.to_vec();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let gate = gates.get(i).copied().flatten();
            let (ny, nt, cache) = layer.forward(&y, &t, gate)?;
            y = ny;
            t = nt;
            caches.push(cache);
        }
        Ok(StackForward {
            y,
            tangents: t,
            cache: StackCache { layers: caches },
        })
    }

    pub fn backward(&self, cache: &StackCache, dy: &DMatrix<f64>, d_tangents: &[DMatrix<f64>]) -> Result<StackBackward> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::SizeMismatch {
                expected: self.layers.len(),
                got: cache.layers.len(),
            });
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut d_gates = Vec::with_capacity(self.layers.len());
        let mut dy = dy.clone();
        let mut dt = d_tangents.to_vec();
        for (layer, c) in self.layers.iter().zip(&cache.layers).rev() {
            let LayerBackward {
                grad,
                dx,
                d_tangents,
                d_gate,
            } = layer.backward(c, &dy, &dt)?;
            grads.push(grad);
            d_gates.push(d_gate);
            dy = dx;
            dt = d_tangents;
        }
        grads.reverse();
        d_gates.reverse();
        Ok(StackBackward {
            grads,
            dx: dy,
            d_tangents: dt,
            d_gates,
        })
    }

    pub fn zero_grads(&self) -> Vec<LayerGrad> {
        self.layers.iter().map(|l| l.zero_grad()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Flat view: per layer, row-major weights, biases, then `c` if present.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            for i in 0..l.w.nrows() {
                out.extend(l.w.row(i).iter());
            }
            out.extend(l.b.iter());
            out.extend(l.lipschitz.iter());
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
            return Err(Error::NonFinite("network parameters".into()));
        }
        let mut k = 0;
        for l in &mut self.layers {
            let cols = l.w.ncols();
            for i in 0..l.w.nrows() {
                for j in 0..cols {
                    l.w[(i, j)] = p[k];
                    k += 1;
                }
            }
            for i in 0..l.b.len() {
                l.b[i] = p[k];
                k += 1;
            }
            if let Some(c) = &mut l.lipschitz {
                *c = p[k];
                k += 1;
            }
        }
        Ok(())
    }

    /// Gradients in the layout of [`NetworkStack::params`].
    pub fn flatten_grads(&self, grads: &[LayerGrad]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (l, g) in self.layers.iter().zip(grads) {
            for i in 0..g.w.nrows() {
                out.extend(g.w.row(i).iter());
            }
            out.extend(g.b.iter());
            if l.lipschitz.is_some() {
                out.push(g.c);
            }
        }
        out
    }

    /// `∏ softplus(cᵢ)` over Lipschitz layers and its derivative in each
    /// `cᵢ` (zero for layers without a bound). Errors without any bound.
    pub fn lipschitz_loss(&self) -> Result<(f64, Vec<f64>)> {
        let bounds: Vec<Option<f64>> = self.layers.iter().map(|l| l.bound()).collect();
        if bounds.iter().all(Option::is_none) {
            return Err(Error::InvalidArgument("no Lipschitz layer in the stack".into()));
        }
        let product: f64 = bounds.iter().flatten().product();
        let grads = self
            .layers
            .iter()
            .zip(&bounds)
            .map(|(l, b)| match (l.lipschitz, b) {
                // d/dcᵢ ∏ softplus(c) = ∏ · sigmoid(cᵢ)/softplus(cᵢ)
                (Some(c), Some(b)) => product * sigmoid(c) / b,
                _ => 0.0,
            })
            .collect();
        Ok((product, grads))
    }

    /// Checks the row-ℓ1 contract of every Lipschitz layer.
    pub fn check_row_bounds(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if let Some(bound) = l.bound() {
                let n = max_row_l1(&l.effective_weights());
                if n > bound * (1.0 + ROW_BOUND_SLACK) {
                    return Err(Error::InvalidArgument(format!(
                        "layer {i}: row l1 norm {n} exceeds bound {bound}"
                    )));
                }
            }
        }
        Ok(())
    }
}
