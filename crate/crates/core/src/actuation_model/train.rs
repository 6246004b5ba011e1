//! Two-stage training: direct regression of reference fields and jaw
//! poses, then end-to-end fitting of simulated surfaces through the adjoint.

use nalgebra::{DVector, Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::jaw::JawGrad;
use super::losses::{loss_act, loss_geo, target_normals, GeoLoss, LossWeights};
use super::model::{pull_back_to_canonical, unwarp_field, ActuationModel, Prediction};
use crate::canonical::WarpCache;
use crate::contact::{ContactOptions, ContactParams};
use crate::datagen::Dataset;
use crate::diffsim::{adjoint_solve, grad_wrt_actuation, grad_wrt_bone_targets, AdjointOptions, ContactTerms};
use crate::error::{Error, Result};
use crate::math::RigidTransform;
use crate::nn::Adam;
use crate::pd::{SimState, SolveOptions};
use crate::scenes::Scene;

/// Geometry and canonical warp of one training identity.
#[derive(Debug, Clone)]
pub struct TrainingIdentity {
    pub name: String,
    pub scene: Scene,
    pub warp: WarpCache,
    pub triangles: Vec<[usize; 3]>,
}

/// Supervision for stage 1: canonical tensors at the warp's points and the
/// canonical jaw transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub canonical: Vec<Matrix3<f64>>,
    pub jaw: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingFrame {
    pub identity: usize,
    /// Index of the expression in the source dataset.
    pub code: usize,
    pub expr: DVector<f64>,
    pub target: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub reference: Option<Reference>,
    pub contact: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub identities: Vec<TrainingIdentity>,
    pub frames: Vec<TrainingFrame>,
}

/// Splits code indices `0..n` into train and held-out sets, holding out
/// `round(fraction · n)` codes chosen by `seed`.
pub fn split_codes(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((fraction * n as f64).round() as usize).min(n);
    let mut test = idx[..k].to_vec();
    let mut train = idx[k..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

impl TrainingSet {
    /// Frames of `codes` for every identity of a synthetic dataset, with
    /// `warps[i]` the canonical warp of identity `i`; references are the
    /// stored fields unwarped through it.
    pub fn from_dataset(ds: &Dataset, warps: Vec<WarpCache>, codes: &[usize]) -> Result<Self> {
        if warps.len() != ds.identities.len() {
            return Err(Error::SizeMismatch {
                expected: ds.identities.len(),
                got: warps.len(),
            });
        }
        let mut frames = Vec::new();
        for (i, (id, warp)) in ds.identities.iter().zip(&warps).enumerate() {
            let tris = &id.rest_surface().triangles;
            for &c in codes {
                let f = ds.frames[i]
                    .iter()
                    .find(|f| f.code == c)
                    .ok_or_else(|| Error::InvalidArgument(format!("code {c} missing for {}", id.name)))?;
                frames.push(TrainingFrame {
                    identity: i,
                    code: c,
                    expr: f.expr.clone(),
                    normals: target_normals(&f.surface, tris),
                    target: f.surface.clone(),
                    reference: Some(Reference {
                        canonical: unwarp_field(&f.actuation, warp)?,
                        jaw: f.jaw,
                    }),
                    contact: f.contact,
                });
            }
        }
        let identities = ds
            .identities
            .iter()
            .zip(warps)
            .map(|(id, warp)| TrainingIdentity {
                name: id.name.clone(),
                scene: id.scene.clone(),
                warp,
                triangles: id.rest_surface().triangles.clone(),
            })
            .collect();
        Ok(Self { identities, frames })
    }

    pub fn identity_names(&self) -> Vec<&str> {
        self.identities.iter().map(|i| i.name.as_str()).collect()
    }

    /// Bounding box of all canonical sample points.
    pub fn canonical_bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in self.identities.iter().flat_map(|i| &i.warp.canonical) {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn diameter(&self) -> f64 {
        self.identities.iter().map(|i| i.scene.diameter()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub steps: usize,
    pub lr: f64,
    /// Frames per step.
    pub batch_frames: usize,
    /// Canonical points sampled per frame per step; 0 uses all.
    pub points_per_frame: usize,
    /// Weight of the jaw term relative to the field term.
    pub jaw_weight: f64,
    /// Learning rate decays linearly to zero after this step.
    pub decay_start: usize,
    pub seed: u64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            steps: 3000,
            lr: 1e-3,
            batch_frames: 8,
            points_per_frame: 128,
            jaw_weight: 1.0,
            decay_start: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub epochs: usize,
    pub lr: f64,
    pub batch_frames: usize,
    pub solve_tol: f64,
    pub max_iters: usize,
    /// Solve frames flagged for contact with contact attached.
    pub contact: bool,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-5,
            batch_frames: 4,
            solve_tol: 1e-6,
            max_iters: 300,
            contact: false,
            seed: 0,
        }
    }
}

fn lr_at(lr: f64, step: usize, decay_start: usize, steps: usize) -> f64 {
    if step < decay_start || steps <= decay_start {
        lr
    } else {
        lr * (steps - step) as f64 / (steps - decay_start) as f64
    }
}

/// Per-step record shared by both stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub loss: f64,
    /// Field (stage 1) or geometry (stage 2) term.
    pub data: f64,
    /// Jaw (stage 1) or actuation (stage 2) term.
    pub aux: f64,
    /// `L_lip` after the step, checked against the layer bounds.
    pub lipschitz: f64,
    pub frames: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    /// Frames dropped after a solver failure.
    pub skipped: usize,
    /// Predicted tensors with `det A ≤ 0` over all evaluated frames.
    pub inverted: usize,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,data,aux,lipschitz,frames,skipped\n");
        for (i, s) in self.steps.iter().enumerate() {
            out.push_str(&format!(
                "{i},{:.12e},{:.12e},{:.12e},{:.12e},{},{}\n",
                s.loss, s.data, s.aux, s.lipschitz, s.frames, s.skipped
            ));
        }
        out
    }
}

/// Applies one Adam step and audits the Lipschitz contract.
fn apply_step(model: &mut ActuationModel, adam: &mut Adam, grad: &[f64]) -> Result<f64> {
    let mut p = model.params();
    adam.step(&mut p, grad)?;
    model.set_params(&p)?;
    model.check_lipschitz()
}

fn add_scaled(acc: &mut [f64], g: &[f64], s: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += s * b;
    }
}

/// Stage 1: regress each frame's reference canonical field and jaw pose,
/// no simulator in the loop.
pub fn train_stage1(model: &mut ActuationModel, set: &TrainingSet, cfg: &Stage1Config) -> Result<TrainReport> {
    let frames: Vec<&TrainingFrame> = set.frames.iter().filter(|f| f.reference.is_some()).collect();
    if frames.is_empty() {
        return Err(Error::InvalidArgument("stage 1 needs frames with reference fields".into()));
    }
    let l2 = set.diameter().powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.param_count(), cfg.lr);
    let mut report = TrainReport::default();
    let batch = cfg.batch_frames.clamp(1, frames.len());
    let mut order: Vec<usize> = Vec::new();
    for step in 0..cfg.steps {
        let picks: Vec<(usize, Vec<usize>)> = (0..batch)
            .map(|_| {
                if order.is_empty() {
                    order = (0..frames.len()).collect();
                    order.shuffle(&mut rng);
                }
                let f = order.pop().unwrap_or(0);
                let n = set.identities[frames[f].identity].warp.len();
                let pts = if cfg.points_per_frame == 0 || cfg.points_per_frame >= n {
                    (0..n).collect()
                } else {
                    rand::seq::index::sample(&mut rng, n, cfg.points_per_frame).into_vec()
                };
                (f, pts)
            })
            .collect();
        let m: &ActuationModel = model;
        let results: Vec<Result<(f64, f64, Vec<f64>)>> = picks
            .par_iter()
            .map(|(f, pts)| {
                let frame = frames[*f];
                let ident = &set.identities[frame.identity];
                let reference = frame.reference.as_ref().expect("filtered");
                let points: Vec<Vector3<f64>> = pts.iter().map(|&j| ident.warp.canonical[j]).collect();
                let fwd = m.forward_frame(&frame.expr, &ident.name, None, &points)?;
                let inv = 1.0 / pts.len() as f64;
                let mut field = 0.0;
                let d_canonical: Vec<Matrix3<f64>> = fwd
                    .canonical
                    .iter()
                    .zip(pts)
                    .map(|(a, &j)| {
                        let d = a - reference.canonical[j];
                        field += d.norm_squared() * inv;
                        d * (2.0 * inv)
                    })
                    .collect();
                let dr = fwd.jaw.rotation - reference.jaw.rotation;
                let dt = fwd.jaw.translation - reference.jaw.translation;
                let jaw = cfg.jaw_weight * (dr.norm_squared() + dt.norm_squared() / l2);
                let d_jaw = JawGrad {
                    rotation: dr * (2.0 * cfg.jaw_weight),
                    translation: dt * (2.0 * cfg.jaw_weight / l2),
                };
                Ok((field, jaw, m.backward(&fwd, &d_canonical, &d_jaw)?))
            })
            .collect();
        let mut grad = vec![0.0; model.param_count()];
        let (mut field, mut jaw) = (0.0, 0.0);
        let s = 1.0 / batch as f64;
        for r in results {
            let (f, j, g) = r?;
            field += f * s;
            jaw += j * s;
            add_scaled(&mut grad, &g, s);
        }
        let (lip, lip_grad) = model.lipschitz_loss()?;
        let lambda_lip = model.config.lambda_lip;
        add_scaled(&mut grad, &lip_grad, lambda_lip);
        adam.lr = lr_at(cfg.lr, step, cfg.decay_start, cfg.steps);
        let lipschitz = apply_step(model, &mut adam, &grad)?;
        report.steps.push(StepRecord {
            loss: field + jaw + lambda_lip * lip,
            data: field,
            aux: jaw,
            lipschitz,
            frames: batch,
            skipped: 0,
        });
        if step % 200 == 0 {
            log::info!("stage 1 step {step}: field {field:.4e} jaw {jaw:.4e}");
        }
    }
    Ok(report)
}

/// Solver settings for simulating with the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateOptions {
    pub solve: SolveOptions,
    pub contact: Option<ContactParams>,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions {
                tol: 1e-6,
                max_iters: 300,
            },
            contact: None,
        }
    }
}

/// A simulated frame.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub prediction: Prediction,
    pub state: SimState,
    pub surface: Vec<Vector3<f64>>,
}

fn solve_scene(scene: &Scene, u0: Option<&DVector<f64>>, opts: &SimulateOptions) -> Result<SimState> {
    let u0 = u0.unwrap_or(&scene.rest);
    let state = match opts.contact {
        Some(p) => {
            let mut co = ContactOptions::new(p);
            co.solve = opts.solve;
            scene.solve_contact_from(u0, &co)?.sim
        }
        None => scene.solve_from(u0, &opts.solve)?,
    };
    if !state.converged {
        return Err(Error::NotConverged(state.grad_norm));
    }
    Ok(state)
}

/// Forward simulation of the model's output on an identity, with an
/// optional style override and warm start.
pub fn simulate(
    model: &ActuationModel,
    ident: &TrainingIdentity,
    expr: &DVector<f64>,
    style: Option<&DVector<f64>>,
    u0: Option<&DVector<f64>>,
    opts: &SimulateOptions,
) -> Result<Simulation> {
    let prediction = model.predict(expr, &ident.name, style, &ident.warp)?;
    simulate_prediction(ident, prediction, u0, opts)
}

/// Forward simulation of given constraints.
pub fn simulate_prediction(
    ident: &TrainingIdentity,
    prediction: Prediction,
    u0: Option<&DVector<f64>>,
    opts: &SimulateOptions,
) -> Result<Simulation> {
    let mut scene = ident.scene.clone();
    scene.set_actuation(&prediction.field)?;
    scene.set_jaw(&prediction.jaw)?;
    let state = solve_scene(&scene, u0, opts)?;
    let surface = scene.proxy.embedding.apply_flat(&state.u);
    Ok(Simulation {
        prediction,
        state,
        surface,
    })
}

/// Mean Euclidean distance between corresponding vertices.
pub fn mean_vertex_error(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).norm()).sum::<f64>() / a.len().max(1) as f64
}

struct FrameGrad {
    geo: f64,
    act: f64,
    grad: Vec<f64>,
    u: DVector<f64>,
    inverted: usize,
}

/// Loss and flat gradient of one frame through the simulator.
fn frame_gradient(
    model: &ActuationModel,
    ident: &TrainingIdentity,
    frame: &TrainingFrame,
    u0: Option<&DVector<f64>>,
    opts: &SimulateOptions,
) -> Result<FrameGrad> {
    let fwd = model.forward_frame(&frame.expr, &ident.name, None, &ident.warp.canonical)?;
    let field = ident.warp.warp(&fwd.canonical)?;
    let inverted = fwd.canonical.iter().filter(|a| !(a.determinant() > 0.0)).count();
    let mut scene = ident.scene.clone();
    scene.set_actuation(&field)?;
    scene.set_jaw(&fwd.jaw)?;
    let state = solve_scene(&scene, u0, opts)?;
    let surface = scene.proxy.embedding.apply_flat(&state.u);
    let geo: GeoLoss = loss_geo(&surface, &ident.triangles, &frame.target, &frame.normals)?;
    let dl_du = scene.proxy.embedding.transpose_apply(&geo.grad);

    let co = opts.contact.map(|p| {
        let mut co = ContactOptions::new(p);
        co.solve = opts.solve;
        co
    });
    let terms = co.as_ref().map(|co| ContactTerms {
        proxy: &scene.proxy,
        opts: co,
    });
    let adjoint = adjoint_solve(&state, &scene.blocks, &scene.operator, terms, &dl_du, &AdjointOptions::default())?;
    let d_warped = grad_wrt_actuation(&adjoint, &scene.blocks, &state.u)?;
    let mut d_canonical = pull_back_to_canonical(&d_warped, &ident.warp);
    let (act, d_act) = loss_act(&fwd.canonical);
    for (d, a) in d_canonical.iter_mut().zip(&d_act) {
        *d += a * model.config.lambda_act;
    }
    let d_bones = grad_wrt_bone_targets(&adjoint, &scene.blocks);
    let bones = &scene.bones;
    let d_jaw = JawGrad::from_bone_targets(
        &bones.jaw_frame,
        scene
            .blocks
            .bone
            .iter()
            .zip(&d_bones)
            .filter(|(b, _)| bones.is_jaw[b.point])
            .map(|(b, g)| (&bones.rest[b.point], g)),
    );
    let grad = model.backward(&fwd, &d_canonical, &d_jaw)?;
    Ok(FrameGrad {
        geo: geo.value(),
        act,
        grad,
        u: state.u,
        inverted,
    })
}

/// Stage 2: end-to-end training through the simulator. Batches hold frames
/// of one identity; a frame whose solve fails is skipped and counted.
/// Solves are warm-started from the frame's previous equilibrium.
pub fn train_stage2(model: &mut ActuationModel, set: &TrainingSet, cfg: &Stage2Config) -> Result<TrainReport> {
    if set.frames.is_empty() {
        return Err(Error::InvalidArgument("stage 2 needs frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.param_count(), cfg.lr);
    let mut report = TrainReport::default();
    let mut warm: Vec<Option<DVector<f64>>> = vec![None; set.frames.len()];
    let batch = cfg.batch_frames.max(1);
    for epoch in 0..cfg.epochs {
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for i in 0..set.identities.len() {
            let mut idx: Vec<usize> = (0..set.frames.len()).filter(|&f| set.frames[f].identity == i).collect();
            idx.shuffle(&mut rng);
            batches.extend(idx.chunks(batch).map(|c| c.to_vec()));
        }
        batches.shuffle(&mut rng);
        for b in batches {
            let m: &ActuationModel = model;
            let results: Vec<(usize, Result<FrameGrad>)> = b
                .par_iter()
                .map(|&f| {
                    let frame = &set.frames[f];
                    let opts = frame_options(cfg, set, frame);
                    (f, frame_gradient(m, &set.identities[frame.identity], frame, warm[f].as_ref(), &opts))
                })
                .collect();
            let mut grad = vec![0.0; model.param_count()];
            let (mut geo, mut act, mut used, mut skipped) = (0.0, 0.0, 0usize, 0usize);
            let mut parts = Vec::new();
            for (f, r) in results {
                match r {
                    Ok(fg) => {
                        report.inverted += fg.inverted;
                        warm[f] = Some(fg.u.clone());
                        parts.push(fg);
                        used += 1;
                    }
                    Err(e) => {
                        log::warn!("stage 2: skipping frame {f} (code {}): {e}", set.frames[f].code);
                        warm[f] = None;
                        skipped += 1;
                    }
                }
            }
            report.skipped += skipped;
            if used == 0 {
                continue;
            }
            let s = 1.0 / used as f64;
            for fg in &parts {
                geo += fg.geo * s;
                act += fg.act * s;
                add_scaled(&mut grad, &fg.grad, s);
            }
            let (lip, lip_grad) = model.lipschitz_loss()?;
            let lambda_lip = model.config.lambda_lip;
            add_scaled(&mut grad, &lip_grad, lambda_lip);
            let lipschitz = apply_step(model, &mut adam, &grad)?;
            report.steps.push(StepRecord {
                loss: geo + model.config.lambda_act * act + lambda_lip * lip,
                data: geo,
                aux: act,
                lipschitz,
                frames: used,
                skipped,
            });
        }
        log::info!(
            "stage 2 epoch {epoch}: last loss {:.4e}, skipped {}",
            report.steps.last().map_or(f64::NAN, |s| s.loss),
            report.skipped
        );
    }
    Ok(report)
}

fn frame_options(cfg: &Stage2Config, set: &TrainingSet, frame: &TrainingFrame) -> SimulateOptions {
    let scene = &set.identities[frame.identity].scene;
    SimulateOptions {
        solve: SolveOptions {
            tol: cfg.solve_tol,
            max_iters: cfg.max_iters,
        },
        contact: (cfg.contact && frame.contact).then(|| scene.contact_params()),
    }
}

/// Evaluation of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEval {
    pub frame: usize,
    pub code: usize,
    pub identity: usize,
    pub geo: f64,
    pub mean_vertex_error: f64,
    pub inverted: usize,
}

/// Simulates every frame with the model and scores it against its target.
/// Frames run in parallel; output order follows `set.frames`.
pub fn evaluate(model: &ActuationModel, set: &TrainingSet, opts: &SimulateOptions) -> Result<Vec<FrameEval>> {
    set.frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let ident = &set.identities[f.identity];
            let sim = simulate(model, ident, &f.expr, None, None, opts)?;
            let geo = loss_geo(&sim.surface, &ident.triangles, &f.target, &f.normals)?;
            Ok(FrameEval {
                frame: i,
                code: f.code,
                identity: f.identity,
                geo: geo.value(),
                mean_vertex_error: mean_vertex_error(&sim.surface, &f.target),
                inverted: sim.prediction.inverted,
            })
        })
        .collect()
}

/// Loss weights of a model's configuration.
pub fn loss_weights(model: &ActuationModel) -> LossWeights {
    LossWeights {
        lambda_act: model.config.lambda_act,
        lambda_lip: model.config.lambda_lip,
    }
}
