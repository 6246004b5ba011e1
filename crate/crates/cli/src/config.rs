//! Run configuration: one TOML file with a schema version and one table per
//! command. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use facesim::actuation_model::{ModelConfig, Stage1Config, Stage2Config};
use facesim::datagen::DatagenConfig;

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    /// Base seed; `--seed` overrides it.
    pub seed: Option<u64>,
    pub gen_data: Option<GenDataConfig>,
    pub train_map: Option<TrainMapConfig>,
    pub train_model: Option<TrainModelConfig>,
    pub scene: Option<SceneConfig>,
    pub gradcheck: Option<GradcheckSection>,
    pub bench: Option<BenchConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    #[serde(default)]
    pub dataset: DatagenConfig,
    #[serde(default = "default_gt_tol")]
    pub tol: f64,
    #[serde(default = "default_gt_iters")]
    pub max_iters: usize,
}

fn default_gt_tol() -> f64 {
    facesim::datagen::FrameOptions::default().tol
}

fn default_gt_iters() -> usize {
    facesim::datagen::FrameOptions::default().max_iters
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMapConfig {
    pub dataset: PathBuf,
    /// Identity names; empty trains every identity.
    #[serde(default)]
    pub identities: Vec<String>,
    #[serde(default = "default_map_steps")]
    pub steps: usize,
    #[serde(default = "default_map_lr")]
    pub lr: f64,
    #[serde(default = "default_lambda_e")]
    pub lambda_e: f64,
    #[serde(default = "default_map_decay")]
    pub decay_start: usize,
    #[serde(default = "default_map_hidden")]
    pub hidden: usize,
}

fn default_map_steps() -> usize {
    facesim::canonical::MappingTrainConfig::default().steps
}
fn default_map_lr() -> f64 {
    facesim::canonical::MappingTrainConfig::default().lr
}
fn default_lambda_e() -> f64 {
    facesim::canonical::MappingTrainConfig::default().lambda_e
}
fn default_map_decay() -> usize {
    facesim::canonical::MappingTrainConfig::default().decay_start
}
fn default_map_hidden() -> usize {
    facesim::canonical::DEFAULT_HIDDEN
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stages {
    One,
    Two,
    Both,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainModelConfig {
    pub dataset: PathBuf,
    /// Directory of `<identity>.warp` caches from `train-map`; the exact
    /// generator warps are used when absent.
    pub warps: Option<PathBuf>,
    /// Fraction of expression codes held out from training.
    #[serde(default = "default_holdout")]
    pub holdout: f64,
    #[serde(default = "default_stages")]
    pub stages: Stages,
    /// Checkpoint to continue from (required when only stage two runs).
    pub init: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub stage1: Stage1Config,
    #[serde(default)]
    pub stage2: Stage2Config,
}

fn default_holdout() -> f64 {
    0.2
}
fn default_stages() -> Stages {
    Stages::Both
}

/// Where the style code comes from.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
pub enum StyleSource {
    Own,
    Identity(String),
    Interpolate { a: String, b: String, lambda: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paralysis {
    /// Box in canonical space; elements whose canonical center lies inside
    /// are affected.
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub strength: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneReshape {
    pub scale: f64,
    #[serde(default)]
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub dataset: PathBuf,
    pub model: PathBuf,
    /// Target identity (geometry).
    pub identity: String,
    /// Identity whose frames supply expressions for `retarget`.
    pub source: Option<String>,
    /// Expression codes by index; empty means every code of the dataset.
    #[serde(default)]
    pub frames: Vec<usize>,
    /// Explicit expression vectors, simulated after `frames`.
    #[serde(default)]
    pub expressions: Vec<Vec<f64>>,
    #[serde(default = "default_style")]
    pub style: StyleSource,
    #[serde(default)]
    pub contact: bool,
    #[serde(default)]
    pub friction_mu: f64,
    /// Friction smoothing as a fraction of the scene diameter.
    #[serde(default = "default_eps_v")]
    pub friction_eps: f64,
    pub dhat: Option<f64>,
    pub paralysis: Option<Paralysis>,
    pub bone_reshape: Option<BoneReshape>,
    #[serde(default = "default_scene_tol")]
    pub tol: f64,
    #[serde(default = "default_scene_iters")]
    pub max_iters: usize,
    pub warps: Option<PathBuf>,
}

fn default_style() -> StyleSource {
    StyleSource::Own
}
fn default_eps_v() -> f64 {
    1e-3
}
fn default_scene_tol() -> f64 {
    1e-6
}
fn default_scene_iters() -> usize {
    300
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradcheckScene {
    /// Two-element bar without contact.
    Bar,
    /// Split bar with two sheets inside the contact threshold.
    SplitBar,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckSection {
    #[serde(default = "default_gc_scene")]
    pub scene: GradcheckScene,
    #[serde(default = "default_gc_threshold")]
    pub threshold: f64,
    /// Random actuation amplitude around the identity.
    #[serde(default = "default_gc_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_gc_fd")]
    pub fd_step: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            scene: default_gc_scene(),
            threshold: default_gc_threshold(),
            amplitude: default_gc_amplitude(),
            fd_step: default_gc_fd(),
        }
    }
}

fn default_gc_scene() -> GradcheckScene {
    GradcheckScene::Bar
}
fn default_gc_threshold() -> f64 {
    1e-4
}
fn default_gc_amplitude() -> f64 {
    0.3
}
fn default_gc_fd() -> f64 {
    facesim::diffsim::GradcheckConfig::default().step
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    /// Squash-scene stretch values to time.
    #[serde(default = "default_stretches")]
    pub stretches: Vec<f64>,
    #[serde(default = "default_scene_tol")]
    pub tol: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            stretches: default_stretches(),
            tol: default_scene_tol(),
        }
    }
}

fn default_stretches() -> Vec<f64> {
    vec![1.5, 1.55, 1.6]
}

impl Config {
    /// Parses and validates; every failure is a configuration error.
    pub fn from_str(text: &str, origin: &Path) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", origin.display())))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "{}: schema_version {} is not supported (expected {SCHEMA_VERSION})",
                origin.display(),
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok((Self::from_str(&text, path)?, text))
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));
        if let Some(g) = &self.gen_data {
            g.dataset.validate().map_err(|e| CliError::Config(format!("gen_data: {e}")))?;
            if !(g.tol > 0.0) {
                return bad("gen_data.tol", format!("{} must be positive", g.tol));
            }
        }
        if let Some(m) = &self.train_map {
            if !(m.lr > 0.0) || m.steps == 0 || m.hidden == 0 || !(m.lambda_e >= 0.0) {
                return bad("train_map", "steps, hidden and lr must be positive and lambda_e non-negative".into());
            }
        }
        if let Some(t) = &self.train_model {
            t.model.validate().map_err(|e| CliError::Config(format!("train_model.model: {e}")))?;
            if !(0.0..1.0).contains(&t.holdout) {
                return bad("train_model.holdout", format!("{} outside [0, 1)", t.holdout));
            }
            if t.stages == Stages::Two && t.init.is_none() {
                return bad("train_model.init", "stage two alone needs an initial checkpoint".into());
            }
            if !(t.stage1.lr > 0.0) || !(t.stage2.lr > 0.0) {
                return bad("train_model.stage1/stage2.lr", "learning rates must be positive".into());
            }
        }
        if let Some(s) = &self.scene {
            if let StyleSource::Interpolate { lambda, .. } = &s.style {
                if !(0.0..=1.0).contains(lambda) {
                    return bad("scene.style.interpolate.lambda", format!("{lambda} outside [0, 1]"));
                }
            }
            if !(s.friction_mu >= 0.0) {
                return bad("scene.friction_mu", format!("{} must be non-negative", s.friction_mu));
            }
            if !(s.friction_eps > 0.0) {
                return bad("scene.friction_eps", format!("{} must be positive", s.friction_eps));
            }
            if s.friction_mu > 0.0 && !s.contact {
                return bad("scene.friction_mu", "friction needs contact = true".into());
            }
            if let Some(d) = s.dhat {
                if !(d > 0.0) {
                    return bad("scene.dhat", format!("{d} must be positive"));
                }
            }
            if let Some(p) = &s.paralysis {
                if !(0.0..=1.0).contains(&p.strength) {
                    return bad("scene.paralysis.strength", format!("{} outside [0, 1]", p.strength));
                }
                if (0..3).any(|k| !(p.min[k] <= p.max[k])) {
                    return bad("scene.paralysis", "min must not exceed max".into());
                }
            }
            if let Some(b) = &s.bone_reshape {
                if !(b.scale > 0.0) || b.offset.iter().any(|x| !x.is_finite()) {
                    return bad("scene.bone_reshape", "scale must be positive and offset finite".into());
                }
            }
            if !(s.tol > 0.0) || s.max_iters == 0 {
                return bad("scene", "tol and max_iters must be positive".into());
            }
        }
        if let Some(g) = &self.gradcheck {
            if !(g.threshold > 0.0) || !(g.fd_step > 0.0) || !(g.amplitude >= 0.0) {
                return bad("gradcheck", "threshold and fd_step must be positive, amplitude non-negative".into());
            }
        }
        if let Some(b) = &self.bench {
            if b.stretches.iter().any(|s| !(*s > 0.0)) || !(b.tol > 0.0) {
                return bad("bench", "stretches and tol must be positive".into());
            }
        }
        Ok(())
    }
}

/// The table a command needs, or a configuration error naming it.
pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    section.as_ref().ok_or_else(|| CliError::Config(format!("missing [{name}] table")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, CliError> {
        Config::from_str(text, Path::new("t.toml"))
    }

    #[test]
    fn defaults_fill_a_minimal_scene() {
        let c = parse("schema_version = 1\n[scene]\ndataset = \"d\"\nmodel = \"m\"\nidentity = \"a\"\n").unwrap();
        let s = c.scene.unwrap();
        assert!(matches!(s.style, StyleSource::Own));
        assert!(!s.contact && s.friction_mu == 0.0);
        assert_eq!(s.friction_eps, 1e-3);
    }

    #[test]
    fn style_sources_parse() {
        let base = "schema_version = 1\n[scene]\ndataset = \"d\"\nmodel = \"m\"\nidentity = \"a\"\n";
        let c = parse(&format!("{base}style = {{ identity = \"b\" }}\n")).unwrap();
        assert!(matches!(c.scene.unwrap().style, StyleSource::Identity(ref n) if n == "b"));
        let c = parse(&format!("{base}style = {{ interpolate = {{ a = \"a\", b = \"b\", lambda = 0.25 }} }}\n")).unwrap();
        assert!(matches!(c.scene.unwrap().style, StyleSource::Interpolate { lambda, .. } if lambda == 0.25));
    }

    #[test]
    fn rejects_out_of_range_values() {
        let base = "schema_version = 1\n[scene]\ndataset = \"d\"\nmodel = \"m\"\nidentity = \"a\"\n";
        for extra in [
            "friction_mu = 0.5\n",
            "contact = true\nfriction_eps = 0.0\n",
            "paralysis = { min = [1.0, 0.0, 0.0], max = [0.0, 1.0, 1.0], strength = 0.5 }\n",
            "bone_reshape = { scale = 0.0 }\n",
            "tol = -1.0\n",
        ] {
            assert!(matches!(parse(&format!("{base}{extra}")), Err(CliError::Config(_))), "{extra}");
        }
        assert!(parse("schema_version = 1\n[train_model]\ndataset = \"d\"\nholdout = 1.0\n").is_err());
        assert!(parse("schema_version = 1\n[train_model]\ndataset = \"d\"\nstages = \"two\"\n").is_err());
        assert!(parse("schema_version = 1\n[bench]\nstretches = [0.0]\n").is_err());
    }

    #[test]
    fn require_names_the_missing_table() {
        let c = parse("schema_version = 1\n").unwrap();
        let e = require(&c.scene, "scene").unwrap_err();
        assert!(e.to_string().contains("[scene]"));
    }
}

#[cfg(test)]
mod shipped {
    use super::*;

    #[test]
    fn example_configs_validate() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.extension().is_some_and(|e| e == "toml") {
                let (cfg, _) = Config::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
                if let Some(t) = cfg.train_model {
                    assert_eq!(t.model.expr_dim, 8, "{}", p.display());
                }
                n += 1;
            }
        }
        assert!(n >= 4);
    }
}
