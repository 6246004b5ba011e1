use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::{build_hex_lattice, deformation_gradient_operator, embed_points, to_flat, Domain};
use crate::math::{random_rotation, rotation_about};

fn box_mesh(nx: usize, ny: usize, nz: usize) -> HexMesh {
    build_hex_lattice(
        &Domain::Box {
            min: Vector3::zeros(),
            max: Vector3::new(nx as f64, ny as f64, nz as f64),
        },
        1.0,
    )
    .unwrap()
}

/// Blocks with bone points at the given rest positions (none on the jaw).
fn scene(mesh: &HexMesh, field: &ActuationField, pins: &[Vector3<f64>]) -> ConstraintBlocks {
    let w = Weights::for_element_size(mesh.h());
    let ops = deformation_gradient_operator(mesh).unwrap();
    let shape = build_shape_target_blocks(mesh, &ops, field, w.shape_target).unwrap();
    let bones = BoneAttachments {
        embedding: embed_points(mesh, pins).unwrap(),
        rest: pins.to_vec(),
        is_jaw: vec![false; pins.len()],
        jaw_frame: RigidTransform::identity(),
    };
    let bone = build_bone_blocks(&bones, &RigidTransform::identity(), w.bone).unwrap();
    ConstraintBlocks::new(mesh, shape, bone)
}

fn x0_face(ny: usize, nz: usize) -> Vec<Vector3<f64>> {
    let mut pins = Vec::new();
    for j in 0..=ny {
        for k in 0..=nz {
            pins.push(Vector3::new(0.0, j as f64, k as f64));
        }
    }
    pins
}

fn random_spd<R: Rng>(rng: &mut R, spread: f64) -> Matrix3<f64> {
    let q = random_rotation(rng);
    let d = Matrix3::from_diagonal(&Vector3::from_fn(|_, _| 1.0 + rng.gen_range(-spread..spread)));
    crate::math::symmetrize(&(q * d * q.transpose()))
}

fn rest(mesh: &HexMesh) -> DVector<f64> {
    to_flat(&mesh.vertices)
}

#[test]
fn projection_trivial_cases() {
    let (r, e) = shape_target_project(&Matrix3::identity(), &Matrix3::identity()).unwrap();
    assert!((r - Matrix3::identity()).norm() < 1e-14 && e.abs() < 1e-28);
    let q = rotation_about(&Vector3::new(1.0, 2.0, -0.5), 0.9);
    let (r, e) = shape_target_project(&q, &Matrix3::identity()).unwrap();
    assert!((r - q).norm() < 1e-12 && e < 1e-24);
    assert!(shape_target_project(&Matrix3::from_element(f64::NAN), &Matrix3::identity()).is_err());
}

#[test]
fn projection_beats_sampled_rotations() {
    let f = Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0));
    let (r, e) = shape_target_project(&f, &Matrix3::identity()).unwrap();
    assert!((r - Matrix3::identity()).norm() < 1e-12);
    assert!((e - 1.0).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100_000 {
        let q = random_rotation(&mut rng);
        assert!((f - q).norm_squared() >= e - 1e-12);
    }
}

#[test]
fn projected_rotation_has_unit_determinant_for_inverted_f() {
    let f = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -0.3));
    let (r, _) = shape_target_project(&f, &Matrix3::from_diagonal(&Vector3::new(0.8, 1.0, 1.2))).unwrap();
    assert!((r.determinant() - 1.0).abs() < 1e-12);
}

#[test]
fn actuation_field_rejects_asymmetry() {
    let mut a = Matrix3::identity();
    a[(0, 1)] = 1e-6;
    assert!(ActuationField::new(vec![a]).is_err());
    assert!(ActuationField::new(vec![Matrix3::identity()]).is_ok());
    assert!(ActuationField::new(vec![Matrix3::from_element(f64::INFINITY)]).is_err());
}

#[test]
fn one_block_per_element_and_count_check() {
    let mesh = box_mesh(1, 1, 1);
    let ops = deformation_gradient_operator(&mesh).unwrap();
    let blocks = build_shape_target_blocks(&mesh, &ops, &ActuationField::identity(1), 1.0).unwrap();
    assert_eq!(blocks.len(), 1);
    assert!(matches!(
        build_shape_target_blocks(&mesh, &ops, &ActuationField::identity(2), 1.0),
        Err(Error::SizeMismatch { expected: 1, got: 2 })
    ));
}

#[test]
fn rest_state_has_zero_energy() {
    let mesh = box_mesh(2, 1, 1);
    let b = scene(&mesh, &ActuationField::identity(2), &x0_face(1, 1));
    assert!(energy(&b, &rest(&mesh)).unwrap().abs() < 1e-24);
    let rs = local_step(&b, &rest(&mesh)).unwrap();
    assert!(rs.iter().flatten().all(|r| (r - Matrix3::identity()).norm() < 1e-12));
}

fn jaw_bones(mesh: &HexMesh) -> BoneAttachments {
    let pts = vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.0, 0.5, 0.5), Vector3::new(2.0, 1.0, 1.0)];
    BoneAttachments {
        embedding: embed_points(mesh, &pts).unwrap(),
        rest: pts,
        is_jaw: vec![false, true, true],
        jaw_frame: RigidTransform::identity(),
    }
}

#[test]
fn jaw_reshape_scales_about_the_strip_centroid() {
    let mesh = box_mesh(2, 1, 1);
    let mut bones = jaw_bones(&mesh);
    let skull = bones.rest[0];
    bones.reshape_jaw(0.5, &Vector3::new(0.0, 0.0, -0.1)).unwrap();
    assert_eq!(bones.rest[0], skull);
    assert!((bones.rest[1] - Vector3::new(1.25, 0.625, 0.525)).norm() < 1e-15);
    assert!((bones.rest[2] - Vector3::new(1.75, 0.875, 0.775)).norm() < 1e-15);
    assert!(bones.reshape_jaw(0.0, &Vector3::zeros()).is_err());
}

#[test]
fn bone_targets_follow_jaw_transform() {
    let mesh = box_mesh(2, 1, 1);
    let bones = jaw_bones(&mesh);
    let id = build_bone_blocks(&bones, &RigidTransform::identity(), 1.0).unwrap();
    for (b, x) in id.iter().zip(&bones.rest) {
        assert_eq!(b.target, *x);
    }
    let t = Vector3::new(0.1, -0.2, 0.3);
    let moved = build_bone_blocks(&bones, &RigidTransform::translation(t), 1.0).unwrap();
    assert_eq!(moved[0].target, bones.rest[0]);
    assert!((moved[1].target - bones.rest[1] - t).norm() < 1e-15);

    // 10° opening about a hinge through (0, 1, 1) along x, computed by hand
    let angle = 10f64.to_radians();
    let hinge = Vector3::new(0.0, 1.0, 1.0);
    let jaw = RigidTransform::about_axis(&hinge, &Vector3::x(), angle);
    let rotated = build_bone_blocks(&bones, &jaw, 1.0).unwrap();
    let (c, s) = (angle.cos(), angle.sin());
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c);
    for i in 1..3 {
        let expect = rx * (bones.rest[i] - hinge) + hinge;
        assert!((rotated[i].target - expect).norm() < 1e-14);
    }
}

#[test]
fn jaw_frame_conjugates_transform() {
    let mesh = box_mesh(2, 1, 1);
    let mut bones = jaw_bones(&mesh);
    bones.jaw_frame = RigidTransform::translation(Vector3::new(0.0, 0.0, 5.0));
    // rotation about the frame origin equals rotation about (0,0,5)
    let jaw = RigidTransform::about_axis(&Vector3::zeros(), &Vector3::x(), 0.2);
    let blocks = build_bone_blocks(&bones, &jaw, 1.0).unwrap();
    let direct = RigidTransform::about_axis(&Vector3::new(0.0, 0.0, 5.0), &Vector3::x(), 0.2);
    assert!((blocks[2].target - direct.apply(&bones.rest[2])).norm() < 1e-13);
}

#[test]
fn non_rigid_jaw_is_rejected() {
    let mesh = box_mesh(2, 1, 1);
    let bones = jaw_bones(&mesh);
    let bad = RigidTransform::new(Matrix3::identity() * 1.01, Vector3::zeros());
    assert!(matches!(build_bone_blocks(&bones, &bad, 1.0), Err(Error::NonRigid(_))));
}

#[test]
fn missing_attachments_make_k_singular() {
    let mesh = box_mesh(1, 1, 1);
    let b = scene(&mesh, &ActuationField::identity(1), &[]);
    assert!(matches!(assemble_global(&b), Err(Error::NotPositiveDefinite)));
    let pinned = scene(&mesh, &ActuationField::identity(1), &mesh.vertices.clone());
    assert!(assemble_global(&pinned).is_ok());
}

#[test]
fn k_matches_dense_assembly_and_rest_rhs() {
    let mesh = box_mesh(2, 1, 1);
    let b = scene(&mesh, &ActuationField::identity(2), &x0_face(1, 1));
    let k = assemble_global(&b).unwrap();

    // dense K from the 9×24 Gauss-point matrices
    let n = b.dof();
    let mut dense = DMatrix::zeros(n, n);
    for blk in &b.shape {
        for (stencil, wq) in b.stencils() {
            let g = stencil.matrix();
            let local = g.transpose() * g * (blk.weight * wq);
            for c in 0..8 {
                for d in 0..8 {
                    for a in 0..3 {
                        for bb in 0..3 {
                            dense[(3 * blk.vertices[c] + a, 3 * blk.vertices[d] + bb)] += local[(3 * c + a, 3 * d + bb)];
                        }
                    }
                }
            }
        }
    }
    for blk in &b.bone {
        for &(v, wv) in &blk.entries {
            for &(w, ww) in &blk.entries {
                for a in 0..3 {
                    dense[(3 * v + a, 3 * w + a)] += blk.weight * wv * ww;
                }
            }
        }
    }
    let x = DVector::from_fn(n, |i, _| (0.3 * i as f64).sin());
    assert!((k.apply(&x) - &dense * &x).norm() < 1e-11 * (&dense * &x).norm());

    let u = rest(&mesh);
    let rhs = global_rhs(&b, &vec![[Matrix3::identity(); QUADRATURE_POINTS]; 2]).unwrap();
    assert!((k.apply(&u) - &rhs).norm() < 1e-8 * rhs.norm());
}

#[test]
fn global_step_reproduces_rest_and_translation() {
    let mesh = box_mesh(2, 1, 1);
    let mut b = scene(&mesh, &ActuationField::identity(2), &x0_face(1, 1));
    let k = assemble_global(&b).unwrap();
    let ids = vec![[Matrix3::identity(); QUADRATURE_POINTS]; 2];
    let u = global_step(&k, &b, &ids).unwrap();
    assert!((&u - rest(&mesh)).amax() < 1e-10);

    let t = Vector3::new(0.5, -1.0, 2.0);
    let moved: Vec<_> = b.bone_targets().iter().map(|x| x + t).collect();
    b.set_bone_targets(&moved).unwrap();
    let u = global_step(&k, &b, &ids).unwrap();
    let expect = to_flat(&mesh.vertices.iter().map(|x| x + t).collect::<Vec<_>>());
    assert!((&u - expect).amax() < 1e-10);
}

#[test]
fn global_step_residual_for_random_targets() {
    let mesh = box_mesh(2, 2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut b = scene(&mesh, &ActuationField::identity(4), &x0_face(2, 1));
    let k = assemble_global(&b).unwrap();
    let targets: Vec<_> = b.bone_targets().iter().map(|x| x + Vector3::from_fn(|_, _| rng.gen_range(-1.0..1.0))).collect();
    b.set_bone_targets(&targets).unwrap();
    let rs: Vec<QuadRotations> = (0..4).map(|_| std::array::from_fn(|_| random_rotation(&mut rng))).collect();
    let u = global_step(&k, &b, &rs).unwrap();
    let rhs = global_rhs(&b, &rs).unwrap();
    assert!((k.apply(&u) - &rhs).norm() / rhs.norm() < 1e-10);
}

#[test]
fn rest_is_fixed_point() {
    let mesh = box_mesh(2, 1, 1);
    let b = scene(&mesh, &ActuationField::identity(2), &x0_face(1, 1));
    let k = assemble_global(&b).unwrap();
    let s = solve_quasistatic(&rest(&mesh), &b, &k, &SolveOptions::default()).unwrap();
    assert!(s.converged);
    assert!(s.iterations <= 1);
    assert!(s.energy.abs() < 1e-20);
    assert!((&s.u - rest(&mesh)).amax() < 1e-12);
}

#[test]
fn single_element_contracts_along_x() {
    let mesh = box_mesh(1, 1, 1);
    let a = Matrix3::from_diagonal(&Vector3::new(0.5, 1.0, 1.0));
    let b = scene(&mesh, &ActuationField::new(vec![a]).unwrap(), &[Vector3::new(0.5, 0.5, 0.5)]);
    let k = assemble_global(&b).unwrap();
    let opts = SolveOptions { tol: 1e-8, max_iters: 5000 };
    let s = solve_quasistatic(&rest(&mesh), &b, &k, &opts).unwrap();
    assert!(s.converged);
    let f = crate::geom::deformation_gradient(&mesh, &crate::geom::from_flat(&s.u), 0);
    let stretch = crate::math::PolarSvd::new(&f).unwrap().sigma;
    assert!(stretch.min() < 0.51 && stretch.min() > 0.49, "{stretch:?}");

    // brute-force scan of uniaxial stretches diag(s,1,1)
    let best = (1..=200)
        .map(|i| i as f64 * 0.01)
        .min_by(|x, y| {
            let e = |s: f64| shape_target_project(&Matrix3::from_diagonal(&Vector3::new(s, 1.0, 1.0)), &a).unwrap().1;
            e(*x).total_cmp(&e(*y))
        })
        .unwrap();
    assert!((best - 0.5).abs() < 1e-9);
}

#[test]
fn single_element_pinned_at_four_vertices_stays_at_rest() {
    let mesh = box_mesh(1, 1, 1);
    let pins: Vec<_> = mesh.vertices[..4].to_vec();
    let b = scene(&mesh, &ActuationField::identity(1), &pins);
    let k = assemble_global(&b).unwrap();
    let mut u0 = rest(&mesh);
    u0[20] += 0.2;
    let s = solve_quasistatic(&u0, &b, &k, &SolveOptions { tol: 1e-10, max_iters: 2000 }).unwrap();
    assert!(s.converged);
    assert!((&s.u - rest(&mesh)).amax() < 1e-6);
}

/// Independent evaluation of E(u) from dense 9×24 operators.
fn oracle_energy(mesh: &HexMesh, b: &ConstraintBlocks, u: &DVector<f64>) -> (f64, DVector<f64>) {
    let mut e = 0.0;
    let mut g = DVector::zeros(u.len());
    for blk in &b.shape {
        let x = nalgebra::SVector::<f64, 24>::from_fn(|i, _| u[3 * blk.vertices[i / 3] + i % 3]);
        for (stencil, wq) in b.stencils() {
            let gm = stencil.matrix();
            let fv = gm * x;
            let f = Matrix3::from_column_slice(fv.as_slice());
            let svd = (f * blk.actuation).svd(true, true);
            let (uu, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
            let mut d = Matrix3::identity();
            d[(2, 2)] = (uu * vt).determinant().signum();
            let r = uu * d * vt;
            let diff = f - r * blk.actuation;
            e += 0.5 * blk.weight * wq * diff.norm_squared();
            let gl = gm.transpose() * nalgebra::SVector::<f64, 9>::from_column_slice(diff.as_slice()) * (blk.weight * wq);
            for i in 0..24 {
                g[3 * blk.vertices[i / 3] + i % 3] += gl[i];
            }
        }
    }
    for blk in &b.bone {
        let mut p = Vector3::zeros();
        for &(v, w) in &blk.entries {
            p += Vector3::new(u[3 * v], u[3 * v + 1], u[3 * v + 2]) * w;
        }
        let d = p - blk.target;
        e += 0.5 * blk.weight * d.norm_squared();
        for &(v, w) in &blk.entries {
            for a in 0..3 {
                g[3 * v + a] += blk.weight * w * d[a];
            }
        }
    }
    let _ = mesh;
    (e, g)
}

#[test]
fn beam_energy_matches_gradient_descent_oracle() {
    let mesh = box_mesh(4, 1, 1);
    let mut tensors = vec![Matrix3::identity(); 4];
    tensors[3] = Matrix3::from_diagonal(&Vector3::new(0.7, 1.1, 1.0));
    let b = scene(&mesh, &ActuationField::new(tensors).unwrap(), &x0_face(1, 1));
    let k = assemble_global(&b).unwrap();
    let s = solve_quasistatic(&rest(&mesh), &b, &k, &SolveOptions { tol: 1e-9, max_iters: 20_000 }).unwrap();
    assert!(s.converged);

    // Barzilai-Borwein gradient descent on the oracle energy
    let mut u = rest(&mesh);
    let (mut e, mut g) = oracle_energy(&mesh, &b, &u);
    let mut step = 1e-4;
    for _ in 0..200_000 {
        let un = &u - &g * step;
        let (en, gn) = oracle_energy(&mesh, &b, &un);
        let du = &un - &u;
        let dg = &gn - &g;
        let denom = du.dot(&dg);
        step = if denom > 0.0 { du.norm_squared() / denom } else { 1e-4 };
        u = un;
        e = en;
        g = gn;
        if g.amax() < 1e-12 {
            break;
        }
    }
    assert!(s.energy > 1e-4);
    assert!((s.energy - e).abs() < 1e-6 * e, "pd {} oracle {}", s.energy, e);
}

#[test]
fn energy_is_monotone_on_random_scene() {
    let mesh = box_mesh(3, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let field = ActuationField::new((0..12).map(|_| random_spd(&mut rng, 0.4)).collect()).unwrap();
    let b = scene(&mesh, &field, &x0_face(2, 2));
    let k = assemble_global(&b).unwrap();
    let s = solve_quasistatic(&rest(&mesh), &b, &k, &SolveOptions { tol: 1e-6, max_iters: 300 }).unwrap();
    assert!(s.trace.len() > 3);
    assert!(s.is_monotone(), "increase {}", s.max_energy_increase());
}

#[test]
fn solution_is_rotation_equivariant() {
    let mesh = box_mesh(3, 1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let field = ActuationField::new((0..3).map(|_| random_spd(&mut rng, 0.3)).collect()).unwrap();
    let b = scene(&mesh, &field, &x0_face(1, 1));
    let k = assemble_global(&b).unwrap();
    let opts = SolveOptions { tol: 1e-10, max_iters: 20_000 };
    let s = solve_quasistatic(&rest(&mesh), &b, &k, &opts).unwrap();

    let q = rotation_about(&Vector3::new(0.3, -1.0, 0.4), 1.1);
    let rot = |u: &DVector<f64>| to_flat(&crate::geom::from_flat(u).iter().map(|x| q * x).collect::<Vec<_>>());
    let mut rb = b.clone();
    let targets: Vec<_> = b.bone_targets().iter().map(|x| q * x).collect();
    rb.set_bone_targets(&targets).unwrap();
    let s2 = solve_quasistatic(&rot(&rest(&mesh)), &rb, &k, &opts).unwrap();
    assert!((&s2.u - rot(&s.u)).amax() < 1e-8 * mesh.h());
}

#[test]
fn exact_hessian_matches_gradient_differences() {
    let mesh = box_mesh(2, 1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let field = ActuationField::new((0..2).map(|_| random_spd(&mut rng, 0.3)).collect()).unwrap();
    let b = scene(&mesh, &field, &x0_face(1, 1));
    let k = assemble_global(&b).unwrap();
    let u = rest(&mesh) + DVector::from_fn(b.dof(), |_, _| rng.gen_range(-0.1..0.1));
    let v = DVector::from_fn(b.dof(), |_, _| rng.gen_range(-1.0..1.0));
    let eps = 1e-6;
    let fd = (gradient(&b, &(&u + &v * eps)).unwrap() - gradient(&b, &(&u - &v * eps)).unwrap()) / (2.0 * eps);
    let h = EnergyHessian::new(&b, &k, &u, HessianMode::Exact).unwrap();
    let hv = h.apply(&v);
    assert!((&hv - &fd).norm() < 1e-6 * fd.norm(), "{}", (&hv - &fd).norm() / fd.norm());
    let w = DVector::from_fn(b.dof(), |_, _| rng.gen_range(-1.0..1.0));
    assert!((w.dot(&hv) - v.dot(&h.apply(&w))).abs() < 1e-10 * hv.norm() * w.norm());
    let gn = EnergyHessian::new(&b, &k, &u, HessianMode::GaussNewton).unwrap();
    assert_eq!(gn.apply(&v), k.apply(&v));
}

#[test]
fn gradient_matches_energy_differences() {
    let mesh = box_mesh(2, 1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let field = ActuationField::new((0..2).map(|_| random_spd(&mut rng, 0.3)).collect()).unwrap();
    let b = scene(&mesh, &field, &x0_face(1, 1));
    let u = rest(&mesh) + DVector::from_fn(b.dof(), |_, _| rng.gen_range(-0.1..0.1));
    let g = gradient(&b, &u).unwrap();
    let (_, og) = oracle_energy(&mesh, &b, &u);
    assert!((&g - &og).amax() < 1e-12);
    for i in [0, 7, 20, 35] {
        let mut up = u.clone();
        let mut um = u.clone();
        up[i] += 1e-6;
        um[i] -= 1e-6;
        let fd = (energy(&b, &up).unwrap() - energy(&b, &um).unwrap()) / 2e-6;
        assert!((fd - g[i]).abs() < 1e-7, "{i}: {fd} vs {}", g[i]);
    }
}

#[test]
fn newton_refine_reaches_tight_tolerance() {
    let mesh = box_mesh(3, 1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let field = ActuationField::new((0..3).map(|_| random_spd(&mut rng, 0.3)).collect()).unwrap();
    let b = scene(&mesh, &field, &x0_face(1, 1));
    let k = assemble_global(&b).unwrap();
    let s = solve_quasistatic(&rest(&mesh), &b, &k, &SolveOptions::default()).unwrap();
    let r = newton_refine(s, &b, &k, 1e-11, 30).unwrap();
    assert!(r.converged, "grad {}", r.grad_norm);
}
