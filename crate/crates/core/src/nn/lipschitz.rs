//! Row-ℓ1 weight normalization with a trainable bound.
//!
//! Row `i` of `W` is scaled by `min(1, softplus(c)/‖wᵢ‖₁)`, which bounds the
//! ∞-norm of the layer's linear map by `softplus(c)`.

use nalgebra::DMatrix;

use crate::math::{sigmoid, softplus};

/// Slack allowed on the row bound for rounding in the rescale.
pub const ROW_BOUND_SLACK: f64 = 1e-9;

/// `Ŵ` with every row's ℓ1 norm clamped to `softplus(c)`.
pub fn lipschitz_normalize(w: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    let bound = softplus(c);
    let mut out = w.clone();
    for mut row in out.row_iter_mut() {
        let n = row.iter().map(|x| x.abs()).sum::<f64>();
        if n > bound {
            row *= bound / n;
        }
    }
    out
}

/// Pulls `dL/dŴ` back to `(dL/dW, dL/dc)`.
pub fn lipschitz_normalize_backward(w: &DMatrix<f64>, c: f64, d_what: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let bound = softplus(c);
    let mut dw = d_what.clone();
    let mut d_bound = 0.0;
    for i in 0..w.nrows() {
        let row = w.row(i);
        let n = row.iter().map(|x| x.abs()).sum::<f64>();
        if n <= bound {
            continue;
        }
        let g = d_what.row(i);
        let gw = g.dot(&row);
        d_bound += gw / n;
        // Ŵᵢ = s wᵢ / ‖wᵢ‖₁
        for j in 0..w.ncols() {
            let sgn = if row[j] > 0.0 {
                1.0
            } else if row[j] < 0.0 {
                -1.0
            } else {
                0.0
            };
            dw[(i, j)] = bound / n * (g[j] - gw * sgn / n);
        }
    }
    (dw, d_bound * sigmoid(c))
}

/// Largest row ℓ1 norm, the ∞-operator norm.
pub fn max_row_l1(w: &DMatrix<f64>) -> f64 {
    w.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Inverse of softplus, for initializing `c` from a target bound.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}
