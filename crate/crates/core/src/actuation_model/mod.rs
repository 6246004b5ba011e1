//! Expression- and style-conditioned actuation model: encoders produce an
//! activation code `z`, a small MLP turns it into a modulation code `m` that
//! gates an implicit actuation field over canonical space, and a jaw network
//! maps `z` to a rigid jaw transform.

mod checkpoint;
mod config;
mod jaw;
mod losses;
mod model;
mod style;
mod train;

pub use checkpoint::{MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use jaw::{jaw_from_outputs, six_d_backward, six_d_rotation, JawGrad, SixD, JAW_OUTPUTS};
pub use losses::{loss_act, loss_geo, loss_total, target_normals, GeoLoss, LossWeights};
pub use model::{pull_back_to_canonical, unwarp_field, ActuationModel, FrameForward, Prediction, RESIDUAL_OUTPUTS};
pub use style::{actuation_csv, interpolate_styles, modulation_csv, paralysis_mask, simulate_paralyzed, style_transfer};
pub use train::{
    evaluate, loss_weights, mean_vertex_error, simulate, simulate_prediction, split_codes, train_stage1, train_stage2,
    FrameEval, Reference, SimulateOptions, Simulation, StepRecord, Stage1Config, Stage2Config, TrainReport,
    TrainingFrame, TrainingIdentity, TrainingSet,
};
