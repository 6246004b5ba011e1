use crate::error::{Error, Result};
use crate::nn::ACTUATION_OMEGA0;

/// Architecture and loss weights of the actuation model.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub expr_dim: usize,
    pub style_dim: usize,
    pub expr_hidden: usize,
    pub expr_latent: usize,
    pub style_hidden: usize,
    pub style_latent: usize,
    pub modulation_hidden: usize,
    /// Backbone width; also the length of the modulation code.
    pub width: usize,
    /// Number of gated GeLU layers after the sine layer.
    pub depth: usize,
    pub omega0: f64,
    pub jaw_hidden: usize,
    pub lambda_act: f64,
    pub lambda_lip: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            expr_dim: 19,
            style_dim: 4,
            expr_hidden: 32,
            expr_latent: 32,
            style_hidden: 16,
            style_latent: 16,
            modulation_hidden: 32,
            width: 64,
            depth: 3,
            omega0: ACTUATION_OMEGA0,
            jaw_hidden: 32,
            lambda_act: 1e-3,
            lambda_lip: 1e-6,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn latent_dim(&self) -> usize {
        self.expr_latent + self.style_latent
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("expr_dim", self.expr_dim),
            ("style_dim", self.style_dim),
            ("expr_hidden", self.expr_hidden),
            ("expr_latent", self.expr_latent),
            ("style_hidden", self.style_hidden),
            ("style_latent", self.style_latent),
            ("modulation_hidden", self.modulation_hidden),
            ("width", self.width),
            ("depth", self.depth),
            ("jaw_hidden", self.jaw_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::InvalidArgument("omega0 must be positive".into()));
        }
        if !(self.lambda_act >= 0.0 && self.lambda_lip >= 0.0) {
            return Err(Error::InvalidArgument("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}
