//! Style manipulation on a trained model: transfer, interpolation and
//! regional paralysis, plus per-element exports.

use std::fmt::Write as _;

use nalgebra::{DVector, Matrix3};

use super::model::ActuationModel;
use super::train::{simulate, simulate_prediction, SimulateOptions, Simulation, TrainingIdentity};
use crate::error::{Error, Result};
use crate::pd::ActuationField;

/// Simulates `expr` on `target`'s geometry with the style code of
/// `style_source`. With `style_source == target.name` this is a plain
/// reconstruction.
pub fn style_transfer(
    model: &ActuationModel,
    expr: &DVector<f64>,
    style_source: &str,
    target: &TrainingIdentity,
    opts: &SimulateOptions,
) -> Result<Simulation> {
    let style = model.style(style_source)?.clone();
    simulate(model, target, expr, Some(&style), None, opts)
}

/// `(1 − λ) s_a + λ s_b`.
pub fn interpolate_styles(model: &ActuationModel, a: &str, b: &str, lambda: f64) -> Result<DVector<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("interpolation weight {lambda} outside [0, 1]")));
    }
    let (sa, sb) = (model.style(a)?, model.style(b)?);
    if lambda == 0.0 {
        return Ok(sa.clone());
    }
    if lambda == 1.0 {
        return Ok(sb.clone());
    }
    Ok(sa * (1.0 - lambda) + sb * lambda)
}

/// `A′ = I + s (A − I)` on elements where `mask` is set, unchanged elsewhere.
pub fn paralysis_mask(field: &ActuationField, mask: &[bool], strength: f64) -> Result<ActuationField> {
    if mask.len() != field.len() {
        return Err(Error::SizeMismatch {
            expected: field.len(),
            got: mask.len(),
        });
    }
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidArgument(format!("paralysis strength {strength} outside [0, 1]")));
    }
    let tensors = field
        .tensors()
        .iter()
        .zip(mask)
        .map(|(a, &m)| if m { Matrix3::identity() + (a - Matrix3::identity()) * strength } else { *a })
        .collect();
    ActuationField::new(tensors)
}

/// Model output with a paralyzed region, simulated on `ident`.
pub fn simulate_paralyzed(
    model: &ActuationModel,
    ident: &TrainingIdentity,
    expr: &DVector<f64>,
    mask: &[bool],
    strength: f64,
    opts: &SimulateOptions,
) -> Result<Simulation> {
    let mut p = model.predict(expr, &ident.name, None, &ident.warp)?;
    p.field = paralysis_mask(&p.field, mask, strength)?;
    simulate_prediction(ident, p, None, opts)
}

/// Per-element `‖A − I‖_F` as `element_id,frob_dist` rows.
pub fn actuation_csv(field: &ActuationField) -> String {
    let mut out = String::from("element_id,frob_dist\n");
    for (i, d) in field.frobenius_from_identity().iter().enumerate() {
        let _ = writeln!(out, "{i},{d:.9e}");
    }
    out
}

/// Modulation codes, one row per labelled code.
pub fn modulation_csv(rows: &[(String, DVector<f64>)]) -> String {
    let width = rows.first().map_or(0, |r| r.1.len());
    let mut out = String::from("label");
    for k in 0..width {
        let _ = write!(out, ",m{k}");
    }
    out.push('\n');
    for (label, m) in rows {
        out.push_str(label);
        for x in m.iter() {
            let _ = write!(out, ",{x:.9e}");
        }
        out.push('\n');
    }
    out
}
