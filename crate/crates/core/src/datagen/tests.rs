use nalgebra::{DVector, Matrix3, Vector3};

use super::*;
use crate::canonical::Mapping;
use crate::geom::vertex_normals;
use crate::math::is_rotation;

fn template() -> TemplateConfig {
    TemplateConfig::default()
}

fn muscles() -> usize {
    muscle_set(&template()).len()
}

fn expr(entries: &[(usize, f64)]) -> DVector<f64> {
    let mut e = DVector::zeros(expression_dim(&template()));
    for &(i, v) in entries {
        e[i] = v;
    }
    e
}

#[test]
fn identity_is_deterministic() {
    let a = make_identity(3, &template(), muscles()).unwrap();
    let b = make_identity(3, &template(), muscles()).unwrap();
    assert_eq!(a.mesh().vertices, b.mesh().vertices);
    assert_eq!(a.rest_surface(), b.rest_surface());
    assert_eq!(a.style, b.style);
    assert_eq!(a.warp, b.warp);
}

#[test]
fn seed_zero_is_the_template() {
    let id = make_identity(0, &template(), muscles()).unwrap();
    assert_eq!(id.rest_surface().vertices, template().surface().vertices);
    let warp = id.exact_warp().unwrap();
    for (x, c) in warp.canonical.iter().zip(id.mesh().element_centers()) {
        assert_eq!(*x, c);
    }
    assert!(warp.rotations.iter().all(|r| *r == Matrix3::identity()));
    assert_eq!(id.style, StyleParams::neutral(muscles()));
}

#[test]
fn identities_share_topology() {
    let a = make_identity(1, &template(), muscles()).unwrap();
    let b = make_identity(2, &template(), muscles()).unwrap();
    assert_eq!(a.rest_surface().topology_hash(), b.rest_surface().topology_hash());
    assert_ne!(a.rest_surface().vertices, b.rest_surface().vertices);
    assert_eq!(a.scene.bones.rest.len(), b.scene.bones.rest.len());
}

#[test]
fn warp_inverse_and_jacobian() {
    let id = make_identity(5, &template(), muscles()).unwrap();
    let w = id.warp;
    let q = Vector3::new(2.3, 5.1, 3.2);
    assert!((w.invert(&w.apply(&q)) - q).norm() < 1e-12);
    let j = w.jacobian(&q);
    let h = 1e-6;
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = h;
        let fd = (w.apply(&(q + e)) - w.apply(&(q - e))) / (2.0 * h);
        assert!((fd - j.column(k)).amax() < 1e-8);
    }
    // the exact mapping is ψ⁻¹ with the inverse Jacobian
    let x = w.apply(&q);
    let (back, jm) = id.mapping().map(&x).unwrap();
    assert!((back - q).norm() < 1e-12);
    assert!((jm * j - Matrix3::identity()).amax() < 1e-12);
    assert!(id.exact_warp().unwrap().rotations.iter().all(|r| is_rotation(r, 1e-10)));
}

#[test]
fn lips_do_not_share_vertices() {
    for seed in [0, 4] {
        let id = make_identity(seed, &template(), muscles()).unwrap();
        let m = id.mesh();
        let verts_of = |part: u8| -> std::collections::BTreeSet<usize> {
            m.elements
                .iter()
                .zip(&m.element_parts)
                .filter(|(_, &p)| p == 1 << part)
                .flat_map(|(e, _)| e.iter().copied())
                .collect()
        };
        let lower = verts_of(PART_LOWER_LIP);
        let upper = verts_of(PART_UPPER_LIP);
        let shared: Vec<_> = lower.intersection(&upper).collect();
        // only the slot floor joins the lips, through the base layer
        assert!(shared.iter().all(|&&v| (m.vertices[v].z - template().lip_level as f64 * template().h).abs() < 1e-12));
        assert!(!lower.is_empty() && !upper.is_empty());
    }
}

#[test]
fn neutral_frame_is_rest() {
    let id = make_identity(2, &template(), muscles()).unwrap();
    let warp = id.exact_warp().unwrap();
    let f = make_ground_truth(&id, &warp, 0, &expr(&[]), false, &FrameOptions::default()).unwrap();
    assert!(f.actuation.tensors().iter().all(|a| (a - Matrix3::identity()).amax() < 1e-14));
    let rest = rest_positions(&id);
    let l = id.scene.diameter();
    let err = f.surface.iter().zip(&rest).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-9 * l, "{err}");
}

#[test]
fn jaw_opening_moves_the_lower_face() {
    let id = make_identity(0, &template(), muscles()).unwrap();
    let warp = id.exact_warp().unwrap();
    let f = make_ground_truth(&id, &warp, 0, &expr(&[(muscles(), 1.0)]), false, &FrameOptions::default()).unwrap();
    let rest = rest_positions(&id);
    let slot = template().slot_y;
    let (mut below, mut above) = (Vec::new(), Vec::new());
    for (p, r) in f.surface.iter().zip(&rest) {
        let d = (p - r).norm();
        if r.y < slot - 2.0 {
            below.push(d);
        } else if r.y > slot + 2.0 {
            above.push(d);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&below) > 3.0 * mean(&above), "{} vs {}", mean(&below), mean(&above));
    assert!(f.actuation.tensors().iter().all(|a| *a == Matrix3::identity()));
}

#[test]
fn stored_constraints_reproduce_the_surface() {
    let id = make_identity(1, &template(), muscles()).unwrap();
    let warp = id.exact_warp().unwrap();
    let e = expr(&[(0, 0.6), (3, 0.9), (muscles(), 0.5)]);
    let opts = FrameOptions::default();
    let f = make_ground_truth(&id, &warp, 0, &e, false, &opts).unwrap();
    let again = simulate_surface(&id, &f.actuation, &f.jaw, false, &opts).unwrap();
    let l = id.scene.diameter();
    let err = f.surface.iter().zip(&again).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-6 * l);
    let n = f.normals(&id.rest_surface().triangles);
    assert_eq!(n, vertex_normals(&f.surface, &id.rest_surface().triangles));
}

#[test]
fn style_changes_the_target() {
    let a = make_identity(1, &template(), muscles()).unwrap();
    let b = make_identity(2, &template(), muscles()).unwrap();
    let warp = b.exact_warp().unwrap();
    let e = expr(&[(2, 1.0), (4, 0.7)]);
    let own = make_ground_truth(&b, &warp, 0, &e, false, &FrameOptions::default()).unwrap();
    let cross = make_ground_truth_with_style(&b, &warp, &a.style, 0, &e, false, &FrameOptions::default()).unwrap();
    let diff = own.surface.iter().zip(&cross.surface).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
    assert!(diff > 1e-2, "{diff}");
}

#[test]
fn lip_compression_needs_contact() {
    let id = make_identity(0, &template(), muscles()).unwrap();
    let warp = id.exact_warp().unwrap();
    let e = expr(&[(0, 1.0), (1, 1.0)]);
    let free = make_ground_truth(&id, &warp, 0, &e, false, &FrameOptions::default()).unwrap();
    let n = free.surface.len() / 2;
    let lip = |s: &[Vector3<f64>], range: std::ops::Range<usize>| -> Vec<Vector3<f64>> {
        range.filter(|&i| template().surface().vertices[i].z < template().extent().z - 1e-9).map(|i| s[i]).collect()
    };
    let gap = |s: &[Vector3<f64>]| {
        let lo = lip(s, 0..n);
        let hi = lip(s, n..2 * n);
        // same x sample order on both lip faces
        lo.iter().zip(&hi).map(|(a, b)| b.y - a.y).fold(f64::INFINITY, f64::min)
    };
    assert!(gap(&free.surface) < 0.0, "lips should cross without contact");
    let opts = FrameOptions {
        tol: 1e-6,
        max_iters: 300,
        contact: None,
    };
    let held = make_ground_truth(&id, &warp, 0, &e, true, &opts).unwrap();
    assert!(gap(&held.surface) > 0.0);
}

fn small_config() -> DatagenConfig {
    DatagenConfig {
        seed: 11,
        identities: vec![0, 3],
        frames: 3,
        density: 0.4,
        contact_codes: Vec::new(),
        template: template(),
    }
}

#[test]
fn bundle_roundtrip_is_exact() {
    let opts = FrameOptions {
        tol: 1e-6,
        ..Default::default()
    };
    let ds = generate(&small_config(), &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.codes, ds.codes);
    assert_eq!(back.frames, ds.frames);
    assert_eq!(back.config, ds.config);
    let h1 = bundle_hash(dir.path()).unwrap();

    // a second run with the same seed gives the same bytes
    let again = generate(&small_config(), &opts).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    export_dataset(&again, dir2.path()).unwrap();
    assert_eq!(bundle_hash(dir2.path()).unwrap(), h1);

    // tampering is detected
    let lattice = dir.path().join("id3/lattice.txt");
    let text = std::fs::read_to_string(&lattice).unwrap();
    std::fs::write(&lattice, text.replacen("h ", "h  ", 1)).unwrap();
    assert!(load_dataset(dir.path()).is_err());
}

#[test]
fn empty_frame_list_is_a_valid_bundle() {
    let cfg = DatagenConfig {
        frames: 0,
        ..small_config()
    };
    let ds = generate(&cfg, &FrameOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    export_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.identities.len(), 2);
    assert!(back.frames.iter().all(|f| f.is_empty()));
}

#[test]
fn config_validation() {
    let mut cfg = small_config();
    cfg.identities = vec![1, 1];
    assert!(cfg.validate().is_err());
    let mut cfg = small_config();
    cfg.contact_codes = vec![7];
    assert!(cfg.validate().is_err());
    let mut cfg = small_config();
    cfg.density = 1.5;
    assert!(cfg.validate().is_err());
    let text = toml::to_string(&small_config()).unwrap();
    let back: DatagenConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, small_config());
    assert!(toml::from_str::<DatagenConfig>(&format!("{text}\nbogus = 1\n")).is_err());
}

#[test]
fn expressions_are_sparse_and_bounded() {
    let codes = sample_expressions(200, 8, 0.35, 4);
    let active = codes.iter().flat_map(|c| c.iter()).filter(|&&x| x > 0.0).count() as f64 / 1600.0;
    assert!((active - 0.35).abs() < 0.06);
    assert!(codes.iter().flat_map(|c| c.iter()).all(|&x| (0.0..1.0).contains(&x)));
    assert_eq!(codes, sample_expressions(200, 8, 0.35, 4));
}
