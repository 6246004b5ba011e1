use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Elementwise nonlinearity of a dense layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// `sin(ω₀ z)`; the frequency is folded into the pre-activation scale.
    Sine { omega0: f64 },
    /// Exact (erf-based) GeLU.
    Gelu,
    Tanh,
    Linear,
}

/// Largest slope of GeLU, attained at `z = √2`.
pub const GELU_MAX_SLOPE: f64 = 1.128_904_145_185_155;

fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z * FRAC_1_SQRT_2))
}

impl Activation {
    /// Factor applied to `Wx + b` before the nonlinearity.
    pub fn pre_scale(&self) -> f64 {
        match *self {
            Activation::Sine { omega0 } => omega0,
            _ => 1.0,
        }
    }

    /// Value, first and second derivative at the (scaled) pre-activation.
    pub fn eval(&self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Sine { .. } => {
                let (s, c) = z.sin_cos();
                (s, c, -s)
            }
            Activation::Gelu => {
                let (cdf, pdf) = (normal_cdf(z), normal_pdf(z));
                (z * cdf, cdf + z * pdf, pdf * (2.0 - z * z))
            }
            Activation::Tanh => {
                let t = z.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            Activation::Linear => (z, 1.0, 0.0),
        }
    }

    /// Global Lipschitz constant of the nonlinearity itself.
    pub fn lipschitz(&self) -> f64 {
        match self {
            Activation::Gelu => GELU_MAX_SLOPE,
            _ => 1.0,
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            Activation::Linear => 0,
            Activation::Sine { .. } => 1,
            Activation::Gelu => 2,
            Activation::Tanh => 3,
        }
    }
}
