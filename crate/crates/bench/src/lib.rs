//! Shared fixtures for the criterion benchmarks.

use facesim::actuation_model::{ActuationModel, ModelConfig};
use facesim::scenes::{squash_actuation, two_slabs, Scene, SlabConfig};
use facesim::contact::ContactOptions;
use facesim::pd::SolveOptions;
use facesim::Result;
use nalgebra::{DVector, Vector3};

/// Default slabs with the upper one stretched downward by `stretch`.
pub fn squash(stretch: f64) -> Result<Scene> {
    let cfg = SlabConfig::default();
    let (mut scene, _) = two_slabs(&cfg)?;
    scene.set_actuation(&squash_actuation(&scene, &cfg, stretch)?)?;
    Ok(scene)
}

/// Proxy positions of the full squash (stretch 1.6) solved with contact,
/// and of the same scene solved without contact, which penetrates.
pub struct Pressed {
    pub scene: Scene,
    pub contact: Vec<Vector3<f64>>,
    pub free: Vec<Vector3<f64>>,
}

pub fn pressed() -> Result<Pressed> {
    let scene = squash(1.6)?;
    let c = scene.solve_contact(&ContactOptions::new(scene.contact_params()))?;
    let f = scene.solve(&SolveOptions::default())?;
    Ok(Pressed {
        contact: scene.proxy.positions(&c.sim.u),
        free: scene.proxy.positions(&f.u),
        scene,
    })
}

/// Regular `n³` grid of points in the unit cube.
pub fn grid_points(n: usize) -> Vec<Vector3<f64>> {
    let s = 1.0 / n.max(1) as f64;
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out.push(Vector3::new((i as f64 + 0.5) * s, (j as f64 + 0.5) * s, (k as f64 + 0.5) * s));
            }
        }
    }
    out
}

/// Default-size model over the unit cube with the slab expression width.
pub fn model() -> Result<(ActuationModel, DVector<f64>)> {
    let cfg = ModelConfig {
        expr_dim: 8,
        ..ModelConfig::default()
    };
    let m = ActuationModel::new(cfg, &["a"], (Vector3::zeros(), Vector3::repeat(1.0)))?;
    let expr = DVector::from_fn(8, |i, _| if i % 3 == 0 { 0.5 } else { 0.0 });
    Ok((m, expr))
}
