//! End-to-end use of the public API on a one-identity dataset.

use facesim::actuation_model::{
    interpolate_styles, simulate, style_transfer, train_stage1, ActuationModel, ModelConfig, SimulateOptions, Stage1Config,
    TrainingSet,
};
use facesim::datagen::{bundle_hash, export_dataset, generate, load_dataset, DatagenConfig, FrameOptions};
use nalgebra::Vector3;
use proptest::prelude::*;

fn tiny() -> facesim::datagen::Dataset {
    let cfg = DatagenConfig {
        seed: 11,
        identities: vec![1],
        frames: 3,
        ..DatagenConfig::default()
    };
    let opts = FrameOptions {
        tol: 1e-8,
        ..FrameOptions::default()
    };
    generate(&cfg, &opts).unwrap()
}

#[test]
fn dataset_bundle_roundtrip_and_training() {
    let ds = tiny();
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    export_dataset(&ds, &a).unwrap();
    let back = load_dataset(&a).unwrap();
    assert_eq!(back.codes, ds.codes);
    assert_eq!(back.frames, ds.frames);
    export_dataset(&back, &b).unwrap();
    assert_eq!(bundle_hash(&a).unwrap(), bundle_hash(&b).unwrap());

    let warps = ds.identities.iter().map(|i| i.exact_warp().unwrap()).collect();
    let set = TrainingSet::from_dataset(&ds, warps, &[0, 1, 2]).unwrap();
    let cfg = ModelConfig {
        expr_dim: ds.expr_dim(),
        width: 16,
        depth: 1,
        ..ModelConfig::default()
    };
    let mut model = ActuationModel::new(cfg, &set.identity_names(), set.canonical_bounds()).unwrap();
    let rep = train_stage1(
        &mut model,
        &set,
        &Stage1Config {
            steps: 20,
            decay_start: 10,
            ..Stage1Config::default()
        },
    )
    .unwrap();
    assert_eq!(rep.steps.len(), 20);

    let path = tmp.path().join("m.bin");
    model.save(&path).unwrap();
    let loaded = ActuationModel::load(&path).unwrap();
    let ident = &set.identities[0];
    let name = ident.name.clone();
    let expr = &set.frames[1].expr;
    let opts = SimulateOptions::default();
    let s1 = simulate(&model, ident, expr, None, None, &opts).unwrap();
    let s2 = simulate(&loaded, ident, expr, None, None, &opts).unwrap();
    assert_eq!(s1.surface, s2.surface);
    // own-style transfer is plain reconstruction
    let s3 = style_transfer(&loaded, expr, &name, ident, &opts).unwrap();
    assert_eq!(s1.surface, s3.surface);
}

fn two_style_model() -> ActuationModel {
    let cfg = ModelConfig {
        expr_dim: 8,
        width: 8,
        depth: 1,
        ..ModelConfig::default()
    };
    ActuationModel::new(cfg, &["a", "b"], (Vector3::zeros(), Vector3::repeat(1.0))).unwrap()
}

proptest! {
    #[test]
    fn interpolated_styles_lie_on_the_segment(lambda in 0.0f64..=1.0) {
        let m = two_style_model();
        let (a, b) = (m.style("a").unwrap().clone(), m.style("b").unwrap().clone());
        let s = interpolate_styles(&m, "a", "b", lambda).unwrap();
        let expect = &a * (1.0 - lambda) + &b * lambda;
        prop_assert!((s - expect).amax() < 1e-15);
    }
}

#[test]
fn interpolation_rejects_lambda_outside_unit_interval() {
    let m = two_style_model();
    assert!(interpolate_styles(&m, "a", "b", 1.5).is_err());
    assert!(interpolate_styles(&m, "a", "b", -0.1).is_err());
    assert_eq!(&interpolate_styles(&m, "a", "b", 0.0).unwrap(), m.style("a").unwrap());
}
