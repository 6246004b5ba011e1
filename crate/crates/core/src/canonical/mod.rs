//! Canonical space: per-identity mappings into it, their training, and the
//! rotational warp that carries canonical actuation tensors back into each
//! identity's material frame.

mod mapping;
mod quality;
mod warp;

pub use mapping::{
    mapping_loss, regularization_points, train_mapping, MappingFunction, MappingLoss, MappingTrainConfig, DEFAULT_HIDDEN,
    MAPPING_MAGIC, MAPPING_VERSION,
};
pub use quality::{Histogram, QualityReport, QUALITY_BINS};
pub use warp::{
    rotation_extract, warp_actuation, warp_actuation_backward, warp_sample, IdentityMap, Mapping, RigidMap, WarpCache, WarpSample,
};
