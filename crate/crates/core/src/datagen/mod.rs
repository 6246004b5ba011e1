//! Synthetic multi-identity datasets with exact ground truth. Identities are
//! smooth warps of a slab template with a mouth slot; frames are produced by
//! the forward solver from procedural muscle actuation, so every stored
//! frame can be reproduced from its stored constraints.

mod bundle;
mod frames;
mod identity;
mod muscles;

pub use bundle::{bundle_hash, export_dataset, frame_obj, generate, load_dataset, DatagenConfig, Dataset, BUNDLE_SCHEMA_VERSION};
pub use frames::{
    canonical_field, make_frames, make_ground_truth, make_ground_truth_with_style, rest_positions, simulate_surface, FrameOptions,
    GroundTruthFrame, GROUND_TRUTH_TOL,
};
pub use identity::{
    make_identity, ExactMapping, StyleParams, SyntheticIdentity, TemplateConfig, WarpParams, PART_BASE, PART_LOWER_LIP, PART_UPPER_LIP,
};
pub use muscles::{
    canonical_actuation, expression_dim, jaw_transform, muscle_set, sample_expressions, Muscle, JAW_OPEN_ANGLE, PEAK_CONTRACTION,
};

#[cfg(test)]
mod tests;
