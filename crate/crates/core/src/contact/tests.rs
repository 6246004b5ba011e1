use nalgebra::{DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geom::{embed_points, to_flat};
use crate::pd::{global_step, local_step, SolveOptions};
use crate::scenes::{bar_2x1x1, grid_surface, merge_surfaces, squash_scene, stacked_cubes, two_slabs, SlabConfig};

/// Standalone proxy (identity embedding is not needed for pair queries).
fn free_proxy(surface: crate::geom::TriSurface) -> ContactProxy {
    let mesh = crate::geom::build_hex_lattice(
        &crate::geom::Domain::Box {
            min: Vector3::repeat(-4.0),
            max: Vector3::repeat(4.0),
        },
        1.0,
    )
    .unwrap();
    let emb = embed_points(&mesh, &surface.vertices).unwrap();
    ContactProxy::with_full_mask(surface, emb).unwrap()
}

fn triangle_and_point(gap: f64) -> ContactProxy {
    let s = crate::geom::TriSurface::new(
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.2, 0.2, gap),
            Vector3::new(0.9, 0.9, gap),
            Vector3::new(0.25, 0.3, gap),
        ],
        vec![[0, 1, 2], [3, 4, 5]],
    );
    free_proxy(s)
}

#[test]
fn far_triangles_have_no_pairs() {
    let proxy = triangle_and_point(1.0);
    let set = collect_pairs(&proxy, &proxy.surface.vertices, 0.1).unwrap();
    assert!(set.is_empty());
}

#[test]
fn near_pairs_match_brute_force() {
    let dhat = 0.1;
    let proxy = triangle_and_point(dhat / 2.0);
    let p = proxy.surface.vertices.clone();
    let fast = collect_pairs(&proxy, &p, dhat).unwrap();
    let slow = collect_pairs_brute_force(&proxy, &p, dhat).unwrap();
    assert_eq!(fast, slow);
    assert!(fast.pairs.iter().any(|q| q.kind == PairKind::VertexTriangle && q.a == 3 && q.b == 0));
    assert!(fast.pairs.iter().all(|q| q.distance < dhat));
}

#[test]
fn pairs_sharing_a_vertex_are_excluded() {
    let s = grid_surface(Vector3::zeros(), Vector3::x(), Vector3::y(), 2, 2, false);
    let proxy = free_proxy(s);
    let set = collect_pairs(&proxy, &proxy.surface.vertices, 10.0).unwrap();
    assert!(!set.is_empty());
    for q in &set.pairs {
        let v = q.vertices;
        let shared = match q.kind {
            PairKind::VertexTriangle => v[1..].contains(&v[0]),
            PairKind::EdgeEdge => v[..2].iter().any(|a| v[2..].contains(a)),
        };
        assert!(!shared, "{q:?}");
    }
    // with a threshold below the grid spacing a flat sheet has no pairs
    assert!(collect_pairs(&proxy, &proxy.surface.vertices, 0.2).unwrap().is_empty());
}

#[test]
fn spatial_hash_matches_brute_force_on_random_cloud() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut parts = Vec::new();
    for _ in 0..12 {
        let o = Vector3::from_fn(|_, _| rng.gen_range(-1.5..1.5));
        let a = Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        let b = Vector3::from_fn(|_, _| rng.gen_range(-0.5..0.5));
        parts.push(grid_surface(o, a, b, 2, 1, false));
    }
    let proxy = free_proxy(merge_surfaces(&parts));
    let p = proxy.surface.vertices.clone();
    for dhat in [0.05, 0.2, 0.6] {
        assert_eq!(
            collect_pairs(&proxy, &p, dhat).unwrap(),
            collect_pairs_brute_force(&proxy, &p, dhat).unwrap()
        );
    }
}

#[test]
fn masked_out_primitives_never_pair() {
    let proxy = triangle_and_point(0.01);
    let masked = ContactProxy::new(proxy.surface.clone(), proxy.embedding.clone(), vec![true, false]).unwrap();
    let set = collect_pairs(&masked, &masked.surface.vertices, 0.1).unwrap();
    assert!(set.is_empty());
}

fn cubes_in_contact() -> (crate::scenes::Scene, DVector<f64>) {
    let scene = stacked_cubes(3, 4).unwrap();
    // bring the upper face to within d̂ of the lower one
    let mut u = scene.rest.clone();
    for (i, x) in scene.mesh.vertices.iter().enumerate() {
        if x.z > 1.5 {
            // small twist keeps the two grids' edges off exact parallelism,
            // where segment distance has a kink
            let (c, s) = (0.1f64.cos(), 0.1f64.sin());
            let (dx, dy) = (x.x - 0.5, x.y - 0.5);
            u[3 * i] = 0.5 + c * dx - s * dy;
            u[3 * i + 1] = 0.5 + s * dx + c * dy;
            u[3 * i + 2] -= 0.95;
        }
    }
    (scene, u)
}

#[test]
fn barrier_gradient_matches_differences() {
    let (scene, u) = cubes_in_contact();
    let dhat = 0.1;
    let proxy = &scene.proxy;
    let eval = |u: &DVector<f64>| {
        let p = proxy.positions(u);
        let set = collect_pairs(proxy, &p, dhat).unwrap();
        assemble_barrier(&set, proxy, &p, u.len(), 1.0).unwrap()
    };
    let a = eval(&u);
    assert!(a.pair_count > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dir = DVector::from_fn(u.len(), |_, _| rng.gen_range(-1.0..1.0));
    let eps = 1e-7;
    let fd = (eval(&(&u + &dir * eps)).value - eval(&(&u - &dir * eps)).value) / (2.0 * eps);
    let an = a.gradient.dot(&dir);
    assert!((fd - an).abs() < 1e-5 * an.abs(), "{fd} vs {an}");

    let hd = (eval(&(&u + &dir * eps)).gradient - eval(&(&u - &dir * eps)).gradient) / (2.0 * eps);
    let h = a.exact_hessian.apply(proxy, &dir);
    assert!((&hd - &h).norm() < 1e-4 * h.norm(), "{}", (&hd - &h).norm() / h.norm());
}

#[test]
fn projected_barrier_hessian_is_psd() {
    let (scene, u) = cubes_in_contact();
    let p = scene.proxy.positions(&u);
    let set = collect_pairs(&scene.proxy, &p, 0.1).unwrap();
    let a = assemble_barrier(&set, &scene.proxy, &p, u.len(), 1.0).unwrap();
    for b in &a.hessian.blocks {
        let eig = b.matrix.symmetric_eigen().eigenvalues;
        let rho = eig.amax();
        assert!(eig.min() >= -1e-10 * rho.max(1e-300));
    }
    let dense = a.hessian.to_dense(&scene.proxy, u.len());
    let eig = nalgebra::SymmetricEigen::new((&dense + dense.transpose()) * 0.5).eigenvalues;
    assert!(eig.min() >= -1e-8 * dense.trace().abs());
}

#[test]
fn empty_set_assembles_to_zero() {
    let (scene, u) = cubes_in_contact();
    let a = assemble_barrier(&ContactSet::default(), &scene.proxy, &scene.proxy.positions(&u), u.len(), 1.0).unwrap();
    assert_eq!(a.value, 0.0);
    assert!(a.gradient.iter().all(|&g| g == 0.0));
    assert!(a.hessian.is_empty());
}

#[test]
fn taylor_model_is_exact_at_expansion_point() {
    let (scene, u) = cubes_in_contact();
    let proxy = &scene.proxy;
    let p = proxy.positions(&u);
    let set = collect_pairs(proxy, &p, 0.1).unwrap();
    let a = assemble_barrier(&set, proxy, &p, u.len(), 1.0).unwrap();
    let model = |x: &DVector<f64>| {
        let d = x - &u;
        a.value + a.gradient.dot(&d) + 0.5 * d.dot(&a.hessian.apply(proxy, &d))
    };
    assert_eq!(model(&u), a.value);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dir = DVector::from_fn(u.len(), |_, _| rng.gen_range(-1.0..1.0));
    let eps = 1e-6;
    let g = (model(&(&u + &dir * eps)) - model(&(&u - &dir * eps))) / (2.0 * eps);
    assert!((g - a.gradient.dot(&dir)).abs() < 1e-6 * (1.0 + g.abs()));
    let curv = (model(&(&u + &dir * eps)) - 2.0 * model(&u) + model(&(&u - &dir * eps))) / (eps * eps);
    let exact = dir.dot(&a.hessian.apply(proxy, &dir));
    assert!((curv - exact).abs() < 1e-3 * exact.abs());
}

fn point_over_triangle_motion(dz: f64) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>, ContactProxy) {
    let proxy = triangle_and_point(0.5);
    let p0 = proxy.surface.vertices.clone();
    let mut p1 = p0.clone();
    for v in p1.iter_mut().skip(3) {
        v.z += dz;
    }
    (p0, p1, proxy)
}

#[test]
fn ccd_without_motion_is_full_step() {
    let (p0, _, proxy) = point_over_triangle_motion(0.0);
    assert_eq!(ccd_max_step(&proxy, &p0, &p0).unwrap(), 1.0);
}

#[test]
fn ccd_head_on_crossing_at_half() {
    // the upper triangle sits at z = 0.5 and moves to z = −0.5
    let (p0, p1, proxy) = point_over_triangle_motion(-1.0);
    let alpha = ccd_max_step(&proxy, &p0, &p1).unwrap();
    assert!((0.40..=0.45).contains(&alpha), "{alpha}");
    // bisection oracle on the signed height of vertex 3 over the plane
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if p0[3].z + mid * (p1[3].z - p0[3].z) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    assert!((alpha - 0.9 * lo).abs() < 1e-9);
}

#[test]
fn ccd_tangential_slide_is_full_step() {
    let proxy = triangle_and_point(0.01);
    let p0 = proxy.surface.vertices.clone();
    let mut p1 = p0.clone();
    for v in p1.iter_mut().skip(3) {
        v.x += 0.6;
        v.y -= 0.3;
    }
    assert_eq!(ccd_max_step(&proxy, &p0, &p1).unwrap(), 1.0);
    // dense sampling confirms the gap never closes
    for i in 0..=1000 {
        let t = i as f64 / 1000.0;
        let p: Vec<_> = p0.iter().zip(&p1).map(|(a, b)| a + (b - a) * t).collect();
        assert!(min_pair_distance(&proxy, &p).unwrap() > 0.0);
    }
}

#[test]
fn ccd_rejects_intersecting_start() {
    let proxy = triangle_and_point(0.0);
    let p0 = proxy.surface.vertices.clone();
    let mut p1 = p0.clone();
    p1[3].z -= 0.1;
    assert!(matches!(ccd_max_step(&proxy, &p0, &p1), Err(crate::Error::Penetration(_))));
}

#[test]
fn edge_edge_impact_is_caught() {
    let s = crate::geom::TriSurface::new(
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.5, -1.0, 0.0),
            Vector3::new(0.5, -0.5, 0.3),
            Vector3::new(0.5, 0.5, 0.3),
            Vector3::new(0.5, 0.0, 1.0),
        ],
        vec![[0, 1, 2], [3, 4, 5]],
    );
    let proxy = free_proxy(s);
    let p0 = proxy.surface.vertices.clone();
    let mut p1 = p0.clone();
    for v in p1.iter_mut().skip(3) {
        v.z -= 0.6;
    }
    let alpha = ccd_max_step(&proxy, &p0, &p1).unwrap();
    assert!((alpha - 0.45).abs() < 1e-9, "{alpha}");
}

#[test]
fn contact_global_reduces_to_pd_without_pairs() {
    let (scene, _) = two_slabs(&SlabConfig::default()).unwrap();
    let u = scene.rest.clone() * 1.01;
    let rs = local_step(&scene.blocks, &u).unwrap();
    let empty = BarrierAssembly::empty(u.len());
    let a = solve_contact_global(&scene.operator, &scene.blocks, &rs, &scene.proxy, &empty, &u, 1e-8, 100).unwrap();
    let b = global_step(&scene.operator, &scene.blocks, &rs).unwrap();
    assert!((a - b).amax() < 1e-12);
}

#[test]
fn contact_global_residual_with_active_pairs() {
    let (mut scene, u) = cubes_in_contact();
    scene.set_actuation(&crate::pd::ActuationField::identity(2)).unwrap();
    let p = scene.proxy.positions(&u);
    let set = collect_pairs(&scene.proxy, &p, 0.1).unwrap();
    let a = assemble_barrier(&set, &scene.proxy, &p, u.len(), 1.0).unwrap();
    assert!(a.pair_count > 0);
    let rs = local_step(&scene.blocks, &u).unwrap();
    let x = solve_contact_global(&scene.operator, &scene.blocks, &rs, &scene.proxy, &a, &u, 1e-8, 500).unwrap();
    let rhs = a.hessian.apply(&scene.proxy, &u) - &a.gradient + crate::pd::global_rhs(&scene.blocks, &rs).unwrap();
    let lhs = scene.operator.apply(&x) + a.hessian.apply(&scene.proxy, &x);
    assert!((lhs - &rhs).norm() / rhs.norm() < 1e-8);
}

#[test]
fn contact_global_fixed_point_at_solved_state() {
    let (scene, _) = squash_scene().unwrap();
    let s = scene.solve(&SolveOptions::default()).unwrap();
    let s = crate::pd::newton_refine(s, &scene.blocks, &scene.operator, 1e-13, 50).unwrap();
    let rs = local_step(&scene.blocks, &s.u).unwrap();
    let empty = BarrierAssembly::empty(s.u.len());
    let x = solve_contact_global(&scene.operator, &scene.blocks, &rs, &scene.proxy, &empty, &s.u, 1e-10, 500).unwrap();
    assert!((&x - &s.u).amax() < 1e-8);
}

#[test]
fn contact_solver_reduces_to_pd_without_mask() {
    let scene = bar_2x1x1().unwrap();
    let mut scene = scene;
    let a = nalgebra::Matrix3::from_diagonal(&Vector3::new(0.8, 1.1, 1.0));
    scene.set_actuation(&crate::pd::ActuationField::new(vec![a, a]).unwrap()).unwrap();
    let pd = scene.solve(&SolveOptions::default()).unwrap();
    let c = scene.solve_contact(&ContactOptions::new(ContactParams::for_diameter(scene.diameter()))).unwrap();
    assert_eq!(c.sim.iterations, pd.iterations);
    assert!((&c.sim.u - &pd.u).amax() < 1e-12);
}

#[test]
fn squash_stays_penetration_free() {
    let (scene, _) = squash_scene().unwrap();
    let mut opts = ContactOptions::new(scene.contact_params());
    opts.exhaustive_audit = true;
    let c = scene.solve_contact(&opts).unwrap();
    assert!(c.sim.converged);
    assert!(!c.audit.is_empty());
    assert!(c.audit.iter().all(|r| r.min_distance > 0.0));
    let objectives: Vec<f64> = c.sim.trace.iter().map(|r| r.after_global).collect();
    for w in c.sim.trace.windows(2) {
        assert!(w[1].after_local <= w[0].after_local + 1e-12);
    }
    assert!(objectives.len() > 2);
    assert!(min_pair_distance(&scene.proxy, &scene.proxy.positions(&c.sim.u)).unwrap() > 0.0);

    // without contact the upper face passes through the lower one
    let pd = scene.solve(&SolveOptions::default()).unwrap();
    let cfg = SlabConfig::default();
    let lowest_upper = scene
        .mesh
        .vertices
        .iter()
        .enumerate()
        .filter(|(_, x)| x.z > cfg.lower_top() + 1e-9)
        .map(|(i, _)| pd.u[3 * i + 2])
        .fold(f64::INFINITY, f64::min);
    assert!(lowest_upper < cfg.lower_top());
}

#[test]
fn friction_vanishes_without_coefficient() {
    let (scene, u) = cubes_in_contact();
    let p = scene.proxy.positions(&u);
    let set = collect_pairs(&scene.proxy, &p, 0.1).unwrap();
    let lagged = lag_friction(&set, &p, 1.0, 0.0, 1e-3).unwrap();
    let fa = friction_assembly(&lagged, &scene.proxy, &(&u * 1.01));
    assert_eq!(fa.value, 0.0);
    assert!(fa.gradient.iter().all(|&g| g == 0.0));
}

#[test]
fn friction_gradient_matches_differences() {
    let (scene, u) = cubes_in_contact();
    let p = scene.proxy.positions(&u);
    let set = collect_pairs(&scene.proxy, &p, 0.1).unwrap();
    let mut lagged = lag_friction(&set, &p, 1.0, 0.5, 1e-3).unwrap();
    lagged.pairs.truncate(1);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for scale in [2e-4, 5e-3] {
        // both the smoothed (y < ε) and the sliding regime
        let x = &u + DVector::from_fn(u.len(), |_, _| rng.gen_range(-scale..scale));
        let fa = friction_assembly(&lagged, &scene.proxy, &x);
        let dir = DVector::from_fn(u.len(), |_, _| rng.gen_range(-1.0..1.0));
        let eps = 1e-8;
        let fp = friction_assembly(&lagged, &scene.proxy, &(&x + &dir * eps));
        let fm = friction_assembly(&lagged, &scene.proxy, &(&x - &dir * eps));
        let fd = (fp.value - fm.value) / (2.0 * eps);
        let an = fa.gradient.dot(&dir);
        assert!((fd - an).abs() < 1e-4 * an.abs().max(1e-12), "{fd} vs {an}");
        let hd = (fp.gradient - fm.gradient) / (2.0 * eps);
        let h = fa.hessian.apply(&scene.proxy, &dir);
        assert!((&hd - &h).norm() < 1e-3 * h.norm().max(1e-12));
    }
}

#[test]
fn stacked_cube_rest_is_contact_free() {
    let scene = stacked_cubes(3, 4).unwrap();
    let p = scene.proxy.positions(&to_flat(&scene.mesh.vertices));
    assert!(collect_pairs(&scene.proxy, &p, 0.1).unwrap().is_empty());
}

