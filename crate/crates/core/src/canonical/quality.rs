//! Mapping-quality statistics: Jacobian determinants, anisotropy (ratio of
//! largest to smallest singular value) and correspondence error.

use nalgebra::Vector3;

use super::mapping::MappingFunction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    /// Fraction of samples per bin; values outside `[lo, hi)` are clamped
    /// into the end bins.
    pub fractions: Vec<f64>,
}

impl Histogram {
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let bins = bins.max(1);
        let mut counts = vec![0usize; bins];
        for &v in values {
            let t = ((v - lo) / (hi - lo) * bins as f64).floor();
            let i = if t.is_nan() { 0 } else { t.clamp(0.0, (bins - 1) as f64) as usize };
            counts[i] += 1;
        }
        let n = values.len().max(1) as f64;
        Self {
            lo,
            hi,
            fractions: counts.iter().map(|&c| c as f64 / n).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub identity: String,
    pub determinant: Histogram,
    pub anisotropy: Histogram,
    pub surface_error: Histogram,
    pub min_determinant: f64,
    pub max_anisotropy: f64,
    pub max_surface_error: f64,
    pub mean_surface_error: f64,
}

pub const QUALITY_BINS: usize = 20;

impl QualityReport {
    /// Volumetric statistics at `samples` and correspondence errors of
    /// `material → canonical`.
    pub fn evaluate(
        map: &MappingFunction,
        samples: &[Vector3<f64>],
        material: &[Vector3<f64>],
        canonical: &[Vector3<f64>],
    ) -> Result<Self> {
        if material.len() != canonical.len() {
            return Err(Error::SizeMismatch {
                expected: material.len(),
                got: canonical.len(),
            });
        }
        let (_, jac) = map.map_batch(samples)?;
        let dets: Vec<f64> = jac.iter().map(|j| j.determinant()).collect();
        let aniso: Vec<f64> = jac
            .iter()
            .map(|j| {
                let s = j.singular_values();
                s.max() / s.min().max(1e-300)
            })
            .collect();
        let mapped = map.apply(material)?;
        let errors: Vec<f64> = mapped.iter().zip(canonical).map(|(a, b)| (a - b).norm()).collect();
        let max_err = errors.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            identity: map.identity.clone(),
            determinant: Histogram::new(&dets, 0.0, 2.0, QUALITY_BINS),
            anisotropy: Histogram::new(&aniso, 1.0, 3.0, QUALITY_BINS),
            surface_error: Histogram::new(&errors, 0.0, max_err.max(1e-12), QUALITY_BINS),
            min_determinant: dets.iter().copied().fold(f64::INFINITY, f64::min),
            max_anisotropy: aniso.iter().copied().fold(1.0, f64::max),
            max_surface_error: max_err,
            mean_surface_error: errors.iter().sum::<f64>() / errors.len().max(1) as f64,
        })
    }

    /// Plain-text summary, one statistic per line.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "identity {}\nmin_det {:.6e}\nmax_anisotropy {:.6e}\nmax_surface_error {:.6e}\nmean_surface_error {:.6e}\n",
            self.identity, self.min_determinant, self.max_anisotropy, self.max_surface_error, self.mean_surface_error
        );
        for (name, h) in [("det", &self.determinant), ("anisotropy", &self.anisotropy), ("surface_error", &self.surface_error)] {
            let bins: Vec<String> = h.fractions.iter().map(|f| format!("{f:.4}")).collect();
            s.push_str(&format!("{name}_hist [{:.4e},{:.4e}] {}\n", h.lo, h.hi, bins.join(" ")));
        }
        s
    }
}
