use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use facesim::actuation_model::{
    actuation_csv, evaluate, interpolate_styles, modulation_csv, paralysis_mask, split_codes, train_stage1, train_stage2,
    ActuationModel, SimulateOptions, TrainingIdentity, TrainingSet,
};
use facesim::canonical::{regularization_points, train_mapping, MappingTrainConfig, QualityReport, WarpCache};
use facesim::contact::{collect_pairs, lag_friction, AuditRecord, ContactOptions, ContactParams, LaggedFriction};
use facesim::datagen::{bundle_hash, export_dataset, generate, load_dataset, Dataset, FrameOptions};
use facesim::diffsim::{gradcheck, GradcheckConfig, VertexTargetLoss};
use facesim::geom::{write_obj, TriSurface};
use facesim::pd::{ActuationField, SolveOptions};
use facesim::scenes::{bar_2x1x1, split_bar, split_bar_contact, squash_actuation, two_slabs, Scene, SlabConfig};

use crate::config::{require, Config, GradcheckScene, SceneConfig, Stages, StyleSource};
use crate::error::{CliError, CliResult};
use crate::manifest::Outputs;

/// Command-line overrides shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub contact: Option<bool>,
}

pub struct Run<'a> {
    pub config: &'a Config,
    pub config_text: &'a str,
    pub overrides: Overrides,
    pub out: &'a Path,
}

impl Run<'_> {
    /// `--seed`, then the config's top-level seed, then the table's own.
    fn seed_or(&self, own: u64) -> u64 {
        self.overrides.seed.or(self.config.seed).unwrap_or(own)
    }
}

fn load_data(path: &Path, out: &mut Outputs) -> CliResult<Dataset> {
    if !path.is_dir() {
        return Err(CliError::Config(format!("dataset {} does not exist", path.display())));
    }
    let ds = load_dataset(path)?;
    out.input(&path.display().to_string(), bundle_hash(path)?);
    Ok(ds)
}

fn load_model(path: &Path, out: &mut Outputs) -> CliResult<ActuationModel> {
    if !path.is_file() {
        return Err(CliError::Config(format!("model checkpoint {} does not exist", path.display())));
    }
    out.input_file(path)?;
    Ok(ActuationModel::load(path)?)
}

/// Exact generator warps, or `<dir>/<identity>.warp` from `train-map`.
fn load_warps(ds: &Dataset, dir: Option<&Path>, out: &mut Outputs) -> CliResult<Vec<WarpCache>> {
    ds.identities
        .iter()
        .map(|id| match dir {
            None => Ok(id.exact_warp()?),
            Some(d) => {
                let p = d.join(format!("{}.warp", id.name));
                if !p.is_file() {
                    return Err(CliError::Config(format!("warp cache {} does not exist", p.display())));
                }
                out.input_file(&p)?;
                let w = WarpCache::load(&p)?;
                if w.len() != id.mesh().element_count() {
                    return Err(CliError::Config(format!("warp cache {} does not match identity {}", p.display(), id.name)));
                }
                Ok(w)
            }
        })
        .collect()
}

pub fn gen_data(run: &Run) -> CliResult<u64> {
    let section = require(&run.config.gen_data, "gen_data")?;
    let mut cfg = section.dataset.clone();
    cfg.seed = run.seed_or(cfg.seed);
    let opts = FrameOptions {
        tol: section.tol,
        max_iters: section.max_iters,
        contact: None,
    };
    let t = Instant::now();
    let ds = generate(&cfg, &opts).map_err(|e| CliError::at_frame(0, e))?;
    let mut out = Outputs::create(run.out)?;
    export_dataset(&ds, run.out)?;
    let mut files = Vec::new();
    collect_files(run.out, run.out, &mut files)?;
    files.sort();
    for f in files.iter().filter(|f| f.as_str() != crate::manifest::RUN_MANIFEST) {
        out.record(f)?;
    }
    println!(
        "{} identities x {} frames in {:.1}s; bundle {}",
        ds.identities.len(),
        ds.codes.len(),
        t.elapsed().as_secs_f64(),
        bundle_hash(run.out)?
    );
    out.finish("gen-data", cfg.seed, run.config_text)?;
    Ok(cfg.seed)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> CliResult<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if let Ok(rel) = p.strip_prefix(root) {
            out.push(rel.to_string_lossy().into_owned());
        }
    }
    Ok(())
}

pub fn train_map(run: &Run) -> CliResult<u64> {
    let section = require(&run.config.train_map, "train_map")?;
    let seed = run.seed_or(0);
    let mut out = Outputs::create(run.out)?;
    let ds = load_data(&section.dataset, &mut out)?;
    let selected: Vec<usize> = if section.identities.is_empty() {
        (0..ds.identities.len()).collect()
    } else {
        section
            .identities
            .iter()
            .map(|n| ds.identity_index(n).map_err(|_| CliError::Config(format!("train_map.identities: unknown identity `{n}`"))))
            .collect::<CliResult<_>>()?
    };
    let cfg = MappingTrainConfig {
        lambda_e: section.lambda_e,
        steps: section.steps,
        lr: section.lr,
        decay_start: section.decay_start,
        hidden: section.hidden,
        seed,
    };
    let results: Vec<_> = selected
        .par_iter()
        .map(|&i| {
            let id = &ds.identities[i];
            let (material, canonical) = id.correspondences();
            let reg = regularization_points(id.mesh(), seed);
            let (map, history) = train_mapping(&id.name, &material, &canonical, &reg, &cfg).map_err(|e| CliError::at_frame(i, e))?;
            let report = QualityReport::evaluate(&map, &id.mesh().element_centers(), &material, &canonical)?;
            let warp = WarpCache::build(&id.name, &map, id.mesh()).map_err(|e| CliError::at_frame(i, e))?;
            Ok((i, map, history, report, warp))
        })
        .collect::<CliResult<_>>()?;
    for (i, map, history, report, warp) in results {
        let name = &ds.identities[i].name;
        let mut buf = Vec::new();
        map.write(&mut buf)?;
        out.write(&format!("{name}.map"), buf)?;
        let mut buf = Vec::new();
        warp.write(&mut buf)?;
        out.write(&format!("{name}.warp"), buf)?;
        out.write(&format!("{name}_quality.txt"), report.to_text())?;
        let mut csv = String::from("step,surface,elastic,total\n");
        for (k, l) in history.iter().enumerate() {
            let _ = writeln!(csv, "{k},{:.9e},{:.9e},{:.9e}", l.surface, l.elastic, l.total);
        }
        out.write(&format!("{name}_loss.csv"), csv)?;
        println!(
            "{name}: mean surface error {:.4e}, min det J {:.4}, max anisotropy {:.4}",
            report.mean_surface_error, report.min_determinant, report.max_anisotropy
        );
    }
    out.finish("train-map", seed, run.config_text)?;
    Ok(seed)
}

pub fn train_model(run: &Run) -> CliResult<u64> {
    let section = require(&run.config.train_model, "train_model")?;
    let seed = run.seed_or(section.model.seed);
    let mut out = Outputs::create(run.out)?;
    let ds = load_data(&section.dataset, &mut out)?;
    if section.model.expr_dim != ds.expr_dim() {
        return Err(CliError::Config(format!(
            "train_model.model.expr_dim is {} but the dataset has expression dimension {}",
            section.model.expr_dim,
            ds.expr_dim()
        )));
    }
    let warps = load_warps(&ds, section.warps.as_deref(), &mut out)?;
    let (train_codes, test_codes) = split_codes(ds.codes.len(), section.holdout, seed);
    let train = TrainingSet::from_dataset(&ds, warps.clone(), &train_codes)?;
    let test = TrainingSet::from_dataset(&ds, warps, &test_codes)?;

    let mut model = match &section.init {
        Some(p) => {
            let m = load_model(p, &mut out)?;
            if m.config.expr_dim != ds.expr_dim() {
                return Err(CliError::Config(format!("train_model.init {} has a different expression dimension", p.display())));
            }
            for name in train.identity_names() {
                m.style(name).map_err(|_| CliError::Config(format!("train_model.init has no style code for `{name}`")))?;
            }
            m
        }
        None => {
            let mut cfg = section.model.clone();
            cfg.seed = seed;
            ActuationModel::new(cfg, &train.identity_names(), train.canonical_bounds())?
        }
    };
    let mut s1 = section.stage1.clone();
    s1.seed = run.seed_or(s1.seed);
    let mut s2 = section.stage2.clone();
    s2.seed = run.seed_or(s2.seed);
    if let Some(c) = run.overrides.contact {
        s2.contact = c;
    }

    let mut split = String::from("code,set\n");
    for c in 0..ds.codes.len() {
        let _ = writeln!(split, "{c},{}", if test_codes.contains(&c) { "test" } else { "train" });
    }
    out.write("split.csv", split)?;

    let t = Instant::now();
    if section.stages != Stages::Two {
        let rep = train_stage1(&mut model, &train, &s1)?;
        out.write("stage1_loss.csv", rep.to_csv())?;
        println!("stage 1: {} steps, final loss {:.4e} ({:.1}s)", rep.steps.len(), rep.losses().last().copied().unwrap_or(f64::NAN), t.elapsed().as_secs_f64());
    }
    if section.stages != Stages::One {
        let rep = train_stage2(&mut model, &train, &s2)?;
        out.write("stage2_loss.csv", rep.to_csv())?;
        println!(
            "stage 2: {} steps, {} skipped frames, final data loss {:.4e} ({:.1}s)",
            rep.steps.len(),
            rep.skipped,
            rep.steps.last().map_or(f64::NAN, |s| s.data),
            t.elapsed().as_secs_f64()
        );
    }
    let mut buf = Vec::new();
    model.write(&mut buf)?;
    out.write("model.bin", buf)?;

    let opts = SimulateOptions {
        solve: SolveOptions {
            tol: s2.solve_tol,
            max_iters: s2.max_iters,
        },
        contact: None,
    };
    let mut csv = String::from("identity,code,set,mean_vertex_error,geo\n");
    let mut summary = Vec::new();
    for (label, set) in [("train", &train), ("test", &test)] {
        if set.frames.is_empty() {
            continue;
        }
        let evals = evaluate(&model, set, &opts).map_err(|e| CliError::at_frame(0, e))?;
        let mean = evals.iter().map(|e| e.mean_vertex_error).sum::<f64>() / evals.len() as f64;
        for e in &evals {
            let _ = writeln!(csv, "{},{},{label},{:.9e},{:.9e}", set.identities[e.identity].name, e.code, e.mean_vertex_error, e.geo);
        }
        summary.push(format!("{label} {mean:.4e}"));
    }
    out.write("eval.csv", csv)?;
    println!("mean vertex error: {} (scene diameter {:.3})", summary.join(", "), train.diameter());
    out.finish("train-model", seed, run.config_text)?;
    Ok(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Simulate,
    Retarget,
    TransferStyle,
}

impl SceneKind {
    fn name(self) -> &'static str {
        match self {
            SceneKind::Simulate => "simulate",
            SceneKind::Retarget => "retarget",
            SceneKind::TransferStyle => "transfer-style",
        }
    }
}

/// One frame to simulate: an output label, the expression, and the target
/// surface when the dataset has one.
struct Job {
    label: String,
    expr: DVector<f64>,
    target: Option<Vec<Vector3<f64>>>,
}

struct FrameOutput {
    label: String,
    surface: Vec<Vector3<f64>>,
    field: ActuationField,
    modulation: DVector<f64>,
    audit: Option<Vec<AuditRecord>>,
    iterations: usize,
    grad_norm: f64,
    error: Option<f64>,
    u: DVector<f64>,
}

fn style_vector(model: &ActuationModel, style: &StyleSource, own: &str) -> CliResult<DVector<f64>> {
    let unknown = |n: &str| CliError::Config(format!("scene.style: model has no identity `{n}`"));
    Ok(match style {
        StyleSource::Own => model.style(own).map_err(|_| unknown(own))?.clone(),
        StyleSource::Identity(n) => model.style(n).map_err(|_| unknown(n))?.clone(),
        StyleSource::Interpolate { a, b, lambda } => {
            model.style(a).map_err(|_| unknown(a))?;
            model.style(b).map_err(|_| unknown(b))?;
            interpolate_styles(model, a, b, *lambda)?
        }
    })
}

fn scene_jobs(kind: SceneKind, s: &SceneConfig, ds: &Dataset, set: &TrainingSet, target: usize) -> CliResult<Vec<Job>> {
    let source = match kind {
        SceneKind::Retarget => {
            let name = s.source.as_deref().ok_or_else(|| CliError::Config("scene.source is required for retarget".into()))?;
            ds.identity_index(name).map_err(|_| CliError::Config(format!("scene.source: unknown identity `{name}`")))?
        }
        _ => target,
    };
    let codes: Vec<usize> = if s.frames.is_empty() && s.expressions.is_empty() { (0..ds.codes.len()).collect() } else { s.frames.clone() };
    let mut jobs = Vec::new();
    for c in codes {
        if c >= ds.codes.len() {
            return Err(CliError::Config(format!("scene.frames: code {c} out of range (dataset has {})", ds.codes.len())));
        }
        let expr = ds.frames[source].iter().find(|f| f.code == c).map_or_else(|| ds.codes[c].clone(), |f| f.expr.clone());
        // ground truth exists for the target's own style only
        let target_surface = set.frames.iter().find(|f| f.identity == target && f.code == c).map(|f| f.target.clone());
        jobs.push(Job {
            label: format!("f{c:04}"),
            expr,
            target: target_surface,
        });
    }
    for (k, e) in s.expressions.iter().enumerate() {
        if e.len() != ds.expr_dim() {
            return Err(CliError::Config(format!("scene.expressions[{k}] has length {}, expected {}", e.len(), ds.expr_dim())));
        }
        jobs.push(Job {
            label: format!("e{k:04}"),
            expr: DVector::from_vec(e.clone()),
            target: None,
        });
    }
    Ok(jobs)
}

struct SceneSetup<'a> {
    model: &'a ActuationModel,
    ident: &'a TrainingIdentity,
    triangles: &'a [[usize; 3]],
    style: DVector<f64>,
    mask: Option<(Vec<bool>, f64)>,
    contact: Option<ContactParams>,
    solve: SolveOptions,
    friction: Option<(f64, f64)>,
}

fn simulate_job(
    setup: &SceneSetup,
    index: usize,
    job: &Job,
    u0: Option<&DVector<f64>>,
    friction: Option<LaggedFriction>,
) -> CliResult<FrameOutput> {
    let at = |e| CliError::at_frame(index, e);
    let model = setup.model;
    let ident = setup.ident;
    let mut p = model.predict(&job.expr, &ident.name, Some(&setup.style), &ident.warp).map_err(at)?;
    if let Some((mask, strength)) = &setup.mask {
        p.field = paralysis_mask(&p.field, mask, *strength)?;
    }
    let z = model.encode_with_style(&job.expr, &setup.style)?;
    let modulation = model.modulation_code(&z)?;
    let mut scene: Scene = ident.scene.clone();
    scene.set_actuation(&p.field)?;
    scene.set_jaw(&p.jaw)?;
    let u0 = u0.unwrap_or(&scene.rest).clone();
    let (state, audit) = match setup.contact {
        Some(params) => {
            let mut opts = ContactOptions::new(params);
            opts.solve = setup.solve;
            opts.friction = friction;
            let c = scene.solve_contact_from(&u0, &opts).map_err(at)?;
            (c.sim, Some(c.audit))
        }
        None => (scene.solve_from(&u0, &setup.solve).map_err(at)?, None),
    };
    if !state.converged {
        return Err(at(facesim::Error::NotConverged(state.grad_norm)));
    }
    let surface = scene.proxy.embedding.apply_flat(&state.u);
    let error = job.target.as_ref().map(|t| facesim::actuation_model::mean_vertex_error(&surface, t));
    Ok(FrameOutput {
        label: job.label.clone(),
        surface,
        field: p.field,
        modulation,
        audit,
        iterations: state.iterations,
        grad_norm: state.grad_norm,
        error,
        u: state.u,
    })
}

/// Friction for the next frame, lagged from the contact state of `u`.
fn lagged_from(setup: &SceneSetup, u: &DVector<f64>) -> CliResult<Option<LaggedFriction>> {
    let (Some(params), Some((mu, eps))) = (setup.contact, setup.friction) else {
        return Ok(None);
    };
    let scene = &setup.ident.scene;
    let p = scene.proxy.positions(u);
    let set = collect_pairs(&scene.proxy, &p, params.dhat)?;
    Ok(Some(lag_friction(&set, &p, params.kappa, mu, eps * scene.diameter())?))
}

pub fn scene(run: &Run, kind: SceneKind) -> CliResult<u64> {
    let s = require(&run.config.scene, "scene")?;
    let seed = run.seed_or(0);
    let mut out = Outputs::create(run.out)?;
    let ds = load_data(&s.dataset, &mut out)?;
    let model = load_model(&s.model, &mut out)?;
    if model.config.expr_dim != ds.expr_dim() {
        return Err(CliError::Config("scene.model and scene.dataset disagree on the expression dimension".into()));
    }
    let target = ds.identity_index(&s.identity).map_err(|_| CliError::Config(format!("scene.identity: unknown identity `{}`", s.identity)))?;
    let warps = load_warps(&ds, s.warps.as_deref(), &mut out)?;
    let set = TrainingSet::from_dataset(&ds, warps, &(0..ds.codes.len()).collect::<Vec<_>>())?;
    let mut ident = set.identities[target].clone();
    if let Some(b) = &s.bone_reshape {
        // bone targets are recomputed from the reshaped rest pose per frame
        ident.scene.bones.reshape_jaw(b.scale, &Vector3::from(b.offset))?;
    }
    let style = match kind {
        SceneKind::TransferStyle => match (&s.source, &s.style) {
            (Some(src), _) => style_vector(&model, &StyleSource::Identity(src.clone()), &s.identity)?,
            (None, StyleSource::Own) => {
                return Err(CliError::Config("transfer-style needs scene.source or a scene.style other than own".into()))
            }
            (None, style) => style_vector(&model, style, &s.identity)?,
        },
        _ => style_vector(&model, &s.style, &s.identity)?,
    };
    let mask = s.paralysis.as_ref().map(|p| {
        let (lo, hi) = (Vector3::from(p.min), Vector3::from(p.max));
        let m: Vec<bool> = ident.warp.canonical.iter().map(|x| (0..3).all(|k| x[k] >= lo[k] && x[k] <= hi[k])).collect();
        (m, p.strength)
    });
    let contact_on = run.overrides.contact.unwrap_or(s.contact);
    if s.friction_mu > 0.0 && !contact_on {
        return Err(CliError::Config("scene.friction_mu needs contact on".into()));
    }
    let contact = contact_on.then(|| {
        let mut p = ident.scene.contact_params();
        if let Some(d) = s.dhat {
            p.dhat = d;
        }
        p
    });
    let jobs = scene_jobs(kind, s, &ds, &set, target)?;
    let triangles = set.identities[target].triangles.clone();
    let setup = SceneSetup {
        model: &model,
        ident: &ident,
        triangles: &triangles,
        style,
        mask,
        contact,
        solve: SolveOptions {
            tol: s.tol,
            max_iters: s.max_iters,
        },
        friction: (s.friction_mu > 0.0).then_some((s.friction_mu, s.friction_eps)),
    };

    let t = Instant::now();
    let frames: Vec<FrameOutput> = if setup.friction.is_some() {
        // lagged friction makes the frames a sequence
        let mut done: Vec<FrameOutput> = Vec::with_capacity(jobs.len());
        for (i, job) in jobs.iter().enumerate() {
            let prev = done.last().map(|f| f.u.clone());
            let lagged = match &prev {
                Some(u) => lagged_from(&setup, u)?,
                None => None,
            };
            done.push(simulate_job(&setup, i, job, prev.as_ref(), lagged)?);
        }
        done
    } else {
        jobs.par_iter().enumerate().map(|(i, job)| simulate_job(&setup, i, job, None, None)).collect::<CliResult<_>>()?
    };

    let mut summary = String::from("frame,iterations,grad_norm,mean_vertex_error\n");
    let mut mods = Vec::new();
    for f in &frames {
        out.write(&format!("{}.obj", f.label), write_obj(&TriSurface::new(f.surface.clone(), setup.triangles.to_vec())))?;
        out.write(&format!("{}_actuation.csv", f.label), actuation_csv(&f.field))?;
        if let Some(audit) = &f.audit {
            let mut csv = format!("{}\n", AuditRecord::HEADER);
            for r in audit {
                let _ = writeln!(csv, "{r}");
            }
            out.write(&format!("{}_audit.csv", f.label), csv)?;
        }
        let err = f.error.map_or_else(String::new, |e| format!("{e:.9e}"));
        let _ = writeln!(summary, "{},{},{:.6e},{err}", f.label, f.iterations, f.grad_norm);
        mods.push((f.label.clone(), f.modulation.clone()));
    }
    out.write("frames.csv", summary)?;
    out.write("modulation.csv", modulation_csv(&mods))?;
    let errors: Vec<f64> = frames.iter().filter_map(|f| f.error).collect();
    print!("{}: {} frames in {:.1}s", kind.name(), frames.len(), t.elapsed().as_secs_f64());
    if !errors.is_empty() {
        print!("; mean vertex error to the dataset target {:.4e}", errors.iter().sum::<f64>() / errors.len() as f64);
    }
    println!();
    out.finish(kind.name(), seed, run.config_text)?;
    Ok(seed)
}

fn random_field(n: usize, seed: u64, amp: f64) -> CliResult<ActuationField> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = (0..n)
        .map(|_| {
            let m = Matrix3::from_fn(|_, _| if amp > 0.0 { rng.gen_range(-amp..amp) } else { 0.0 });
            Matrix3::identity() + (m + m.transpose()) * 0.5
        })
        .collect();
    Ok(ActuationField::new(t)?)
}

fn nearest_vertex(scene: &Scene, x: Vector3<f64>) -> usize {
    (0..scene.mesh.vertices.len())
        .min_by(|&a, &b| (scene.mesh.vertices[a] - x).norm().total_cmp(&(scene.mesh.vertices[b] - x).norm()))
        .unwrap_or(0)
}

pub fn gradcheck_cmd(run: &Run) -> CliResult<u64> {
    let section = run.config.gradcheck.clone().unwrap_or_default();
    let seed = run.seed_or(5);
    let mut out = Outputs::create(run.out)?;
    let (mut scene, corner, target, contact) = match section.scene {
        GradcheckScene::Bar => (bar_2x1x1()?, Vector3::new(2.0, 1.0, 1.0), Vector3::new(2.1, 1.2, 0.9), None),
        GradcheckScene::SplitBar => (
            split_bar()?,
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(1.1, 1.1, 0.8),
            Some(ContactOptions::new(split_bar_contact())),
        ),
    };
    let contact = match run.overrides.contact {
        Some(false) => None,
        Some(true) => Some(contact.unwrap_or_else(|| ContactOptions::new(scene.contact_params()))),
        None => contact,
    };
    scene.set_actuation(&random_field(scene.mesh.element_count(), seed, section.amplitude)?)?;
    let loss = VertexTargetLoss {
        vertex: nearest_vertex(&scene, corner),
        target,
    };
    let cfg = GradcheckConfig {
        step: section.fd_step,
        contact,
        ..GradcheckConfig::default()
    };
    let report = gradcheck(&scene, &loss, &cfg).map_err(|e| CliError::at_frame(0, e))?;
    out.write("gradcheck.csv", report.to_csv())?;
    let worst = report.max_rel_err();
    println!("{} parameters, max relative error {worst:.3e} (threshold {:.1e})", report.entries.len(), section.threshold);
    out.finish("gradcheck", seed, run.config_text)?;
    if !(worst < section.threshold) {
        return Err(CliError::Gradcheck(format!("max relative error {worst:.3e} is not below {:.1e}", section.threshold)));
    }
    Ok(seed)
}

pub fn bench(run: &Run) -> CliResult<u64> {
    let section = run.config.bench.clone().unwrap_or_default();
    let seed = run.seed_or(0);
    let mut out = Outputs::create(run.out)?;
    let cfg = SlabConfig::default();
    let contact = run.overrides.contact.unwrap_or(true);
    let mut csv = String::from("stretch,contact,sweeps,cg_iterations,mean_pairs,max_pairs,seconds\n");
    println!("{:>8} {:>8} {:>7} {:>8} {:>11} {:>10} {:>9}", "stretch", "contact", "sweeps", "cg_iters", "mean_pairs", "max_pairs", "seconds");
    for (i, &stretch) in section.stretches.iter().enumerate() {
        let (mut scene, _) = two_slabs(&cfg)?;
        scene.set_actuation(&squash_actuation(&scene, &cfg, stretch)?)?;
        let solve = SolveOptions {
            tol: section.tol,
            max_iters: 300,
        };
        let t = Instant::now();
        let (sweeps, cg, mean_pairs, max_pairs) = if contact {
            let mut opts = ContactOptions::new(scene.contact_params());
            opts.solve = solve;
            let c = scene.solve_contact(&opts).map_err(|e| CliError::at_frame(i, e))?;
            let cg: usize = c.audit.iter().map(|r| r.cg_iterations).sum();
            let n = c.audit.len().max(1) as f64;
            let mean = c.audit.iter().map(|r| r.pair_count as f64).sum::<f64>() / n;
            let max = c.audit.iter().map(|r| r.pair_count).max().unwrap_or(0);
            (c.sim.iterations, cg, mean, max)
        } else {
            let s = scene.solve(&solve).map_err(|e| CliError::at_frame(i, e))?;
            (s.iterations, 0, 0.0, 0)
        };
        let secs = t.elapsed().as_secs_f64();
        let _ = writeln!(csv, "{stretch},{contact},{sweeps},{cg},{mean_pairs:.1},{max_pairs},{secs:.3}");
        println!("{stretch:>8} {contact:>8} {sweeps:>7} {cg:>8} {mean_pairs:>11.1} {max_pairs:>10} {secs:>9.3}");
    }
    // timings differ run to run; the manifest hashes them like any output
    out.write("bench.csv", csv)?;
    out.finish("bench", seed, run.config_text)?;
    Ok(seed)
}
