//! Barrier-based contact over an embedded collision proxy: pair distances,
//! the clamped log barrier, continuous collision detection, lagged friction
//! and the contact-aware quasistatic solve.

mod assemble;
mod barrier;
mod ccd;
mod distance;
mod friction;
pub mod jet;
mod proxy;
mod solve;

pub use assemble::{assemble_barrier, barrier_energy, BarrierAssembly, PairBlock, ProxyHessian};
pub use barrier::barrier_1d;
pub use ccd::{ccd_max_step, time_of_impact, CCD_SCALE};
pub use distance::{classify, closest_point_coefficients, pair_distance, PairDistance, PairKind, Subcase};
pub use friction::{f0, f1, friction_assembly, lag_friction, FrictionAssembly, FrictionPair, LaggedFriction};
pub use proxy::{
    all_pairs, collect_pairs, collect_pairs_brute_force, min_pair_distance, ContactPair, ContactProxy, ContactSet,
};
pub use solve::{
    newton_refine_contact, solve_contact_global, solve_quasistatic_contact, AuditRecord, ContactOptions, ContactParams, ContactState, MIN_ALPHA,
};

#[cfg(test)]
mod tests;
