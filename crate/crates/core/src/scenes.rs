//! Small self-contained simulation scenes: a generic container bundling a
//! lattice, bone attachments, a collision proxy and the factorized system,
//! plus the slab setups used for contact, friction and gradient checks.

use nalgebra::{DVector, Matrix3, Vector3};

use crate::contact::{
    collect_pairs, lag_friction, newton_refine_contact, solve_quasistatic_contact, ContactOptions, ContactParams, ContactProxy, ContactState,
};
use crate::error::Result;
use crate::geom::{
    build_hex_lattice, deformation_gradient_operator, embed_points, to_flat, Domain, HexMesh, LatticeDomain, TriSurface,
};
use crate::math::RigidTransform;
use crate::pd::{
    assemble_global, build_bone_blocks, build_shape_target_blocks, newton_refine, solve_quasistatic, ActuationField, BoneAttachments,
    ConstraintBlocks, GlobalOperator, SimState, SolveOptions, Weights,
};

/// Newton iterations allowed after the sweeps stop short.
const POLISH_ITERS: usize = 50;

/// Everything needed to simulate one body configuration.
#[derive(Debug, Clone)]
pub struct Scene {
    pub mesh: HexMesh,
    pub bones: BoneAttachments,
    pub blocks: ConstraintBlocks,
    pub operator: GlobalOperator,
    pub proxy: ContactProxy,
    pub rest: DVector<f64>,
    pub weights: Weights,
}

impl Scene {
    /// Scene at rest: identity actuation, identity jaw.
    pub fn new(mesh: HexMesh, bones: BoneAttachments, proxy: ContactProxy, weights: Weights) -> Result<Self> {
        let ops = deformation_gradient_operator(&mesh)?;
        let shape = build_shape_target_blocks(&mesh, &ops, &ActuationField::identity(mesh.element_count()), weights.shape_target)?;
        let bone = build_bone_blocks(&bones, &RigidTransform::identity(), weights.bone)?;
        let blocks = ConstraintBlocks::new(&mesh, shape, bone);
        let operator = assemble_global(&blocks)?;
        let rest = to_flat(&mesh.vertices);
        Ok(Self {
            mesh,
            bones,
            blocks,
            operator,
            proxy,
            rest,
            weights,
        })
    }

    pub fn diameter(&self) -> f64 {
        self.mesh.diameter()
    }

    pub fn contact_params(&self) -> ContactParams {
        ContactParams::for_diameter(self.diameter())
    }

    pub fn set_actuation(&mut self, field: &ActuationField) -> Result<()> {
        self.blocks.set_actuation(field)
    }

    pub fn set_jaw(&mut self, jaw: &RigidTransform) -> Result<()> {
        let targets = self.bones.targets(jaw)?;
        self.blocks.set_bone_targets(&targets)
    }

    pub fn solve(&self, opts: &SolveOptions) -> Result<SimState> {
        self.solve_from(&self.rest, opts)
    }

    /// PD sweeps, then a Newton polish when they stop short of the tolerance.
    pub fn solve_from(&self, u0: &DVector<f64>, opts: &SolveOptions) -> Result<SimState> {
        let state = solve_quasistatic(u0, &self.blocks, &self.operator, opts)?;
        if state.converged {
            return Ok(state);
        }
        newton_refine(state, &self.blocks, &self.operator, opts.threshold(&self.blocks), POLISH_ITERS)
    }

    pub fn solve_contact(&self, opts: &ContactOptions) -> Result<ContactState> {
        self.solve_contact_from(&self.rest, opts)
    }

    /// Contact sweeps, then a Newton polish when they stop short.
    pub fn solve_contact_from(&self, u0: &DVector<f64>, opts: &ContactOptions) -> Result<ContactState> {
        let state = solve_quasistatic_contact(u0, &self.blocks, &self.operator, &self.proxy, opts)?;
        if state.sim.converged {
            return Ok(state);
        }
        let tol = opts.solve.threshold(&self.blocks);
        newton_refine_contact(state, &self.blocks, &self.operator, &self.proxy, opts, tol, POLISH_ITERS)
    }
}

/// Planar grid of `na × nb` quads spanned by `a` and `b` from `origin`,
/// split into triangles; `flip` reverses the orientation.
pub fn grid_surface(origin: Vector3<f64>, a: Vector3<f64>, b: Vector3<f64>, na: usize, nb: usize, flip: bool) -> TriSurface {
    let mut vertices = Vec::with_capacity((na + 1) * (nb + 1));
    for j in 0..=nb {
        for i in 0..=na {
            vertices.push(origin + a * (i as f64 / na as f64) + b * (j as f64 / nb as f64));
        }
    }
    let id = |i: usize, j: usize| i + (na + 1) * j;
    let mut triangles = Vec::with_capacity(2 * na * nb);
    for j in 0..nb {
        for i in 0..na {
            let (v00, v10, v01, v11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            // alternate diagonals to avoid a directional bias
            let quad = if (i + j) % 2 == 0 {
                [[v00, v10, v11], [v00, v11, v01]]
            } else {
                [[v00, v10, v01], [v10, v11, v01]]
            };
            for mut t in quad {
                if flip {
                    t.swap(1, 2);
                }
                triangles.push(t);
            }
        }
    }
    TriSurface::new(vertices, triangles)
}

/// Concatenates surfaces, renumbering vertices.
pub fn merge_surfaces(parts: &[TriSurface]) -> TriSurface {
    let mut out = TriSurface::default();
    for s in parts {
        let offset = out.vertices.len();
        out.vertices.extend_from_slice(&s.vertices);
        out.triangles.extend(s.triangles.iter().map(|t| t.map(|v| v + offset)));
    }
    out
}

/// Two square slabs stacked along z with an empty gap between them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlabConfig {
    pub h: f64,
    /// Cells along x and y.
    pub width: usize,
    /// Cells per slab along z.
    pub thickness: usize,
    /// Empty cells between the slabs.
    pub gap: usize,
    /// Proxy quads per lattice cell on the lower contact face; the upper face
    /// uses one more per side so the two grids do not align.
    pub proxy_density: usize,
}

impl Default for SlabConfig {
    fn default() -> Self {
        Self {
            h: 0.5,
            width: 6,
            thickness: 2,
            gap: 1,
            proxy_density: 2,
        }
    }
}

impl SlabConfig {
    pub fn lower_top(&self) -> f64 {
        self.thickness as f64 * self.h
    }

    pub fn upper_bottom(&self) -> f64 {
        (self.thickness + self.gap) as f64 * self.h
    }

    pub fn upper_top(&self) -> f64 {
        (2 * self.thickness + self.gap) as f64 * self.h
    }

    pub fn side(&self) -> f64 {
        self.width as f64 * self.h
    }
}

/// Two slabs: the lower one is held at its bottom face (skull), the upper
/// one at its top face (jaw), so a jaw transform moves the upper slab.
/// Proxy vertices `0..lower_count` lie on the lower slab's top face.
pub fn two_slabs(cfg: &SlabConfig) -> Result<(Scene, usize)> {
    let nz = 2 * cfg.thickness + cfg.gap;
    let mut lattice = LatticeDomain::new(Vector3::zeros(), [cfg.width, cfg.width, nz]);
    for k in (0..cfg.thickness).chain(cfg.thickness + cfg.gap..nz) {
        for j in 0..cfg.width {
            for i in 0..cfg.width {
                lattice.mark([i, j, k], 0);
            }
        }
    }
    let mesh = build_hex_lattice(&Domain::Occupancy(lattice), cfg.h)?;

    let mut points = Vec::new();
    let mut is_jaw = Vec::new();
    for (z, jaw) in [(0.0, false), (cfg.upper_top(), true)] {
        for j in 0..=cfg.width {
            for i in 0..=cfg.width {
                points.push(Vector3::new(i as f64 * cfg.h, j as f64 * cfg.h, z));
                is_jaw.push(jaw);
            }
        }
    }
    let bones = BoneAttachments {
        embedding: embed_points(&mesh, &points)?,
        rest: points,
        is_jaw,
        jaw_frame: RigidTransform::identity(),
    };

    let side = cfg.side();
    let m = cfg.width * cfg.proxy_density;
    let lower = grid_surface(Vector3::new(0.0, 0.0, cfg.lower_top()), Vector3::x() * side, Vector3::y() * side, m, m, false);
    // the upper face is slightly inset so its boundary never sits exactly
    // above the lower boundary
    let inset = 0.5 * cfg.h / (m + 1) as f64;
    let upper = grid_surface(
        Vector3::new(inset, inset, cfg.upper_bottom()),
        Vector3::x() * (side - 2.0 * inset),
        Vector3::y() * (side - 2.0 * inset),
        m + 1,
        m + 1,
        true,
    );
    let lower_count = lower.vertices.len();
    let surface = merge_surfaces(&[lower, upper]);
    let embedding = embed_points(&mesh, &surface.vertices)?;
    let proxy = ContactProxy::with_full_mask(surface, embedding)?;
    let weights = Weights::for_element_size(cfg.h);
    Ok((Scene::new(mesh, bones, proxy, weights)?, lower_count))
}

/// Uniform actuation on the upper slab elongating it along z by `stretch`,
/// identity on the lower slab.
pub fn squash_actuation(scene: &Scene, cfg: &SlabConfig, stretch: f64) -> Result<ActuationField> {
    let mid = 0.5 * (cfg.lower_top() + cfg.upper_bottom());
    let a = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, stretch));
    ActuationField::new(
        scene
            .mesh
            .element_centers()
            .iter()
            .map(|c| if c.z > mid { a } else { Matrix3::identity() })
            .collect(),
    )
}

/// The squash scene: upper slab stretched downward past the gap.
pub fn squash_scene() -> Result<(Scene, SlabConfig)> {
    let cfg = SlabConfig::default();
    let (mut scene, _) = two_slabs(&cfg)?;
    let field = squash_actuation(&scene, &cfg, 1.6)?;
    scene.set_actuation(&field)?;
    Ok((scene, cfg))
}

/// Two single-element bodies, `[0,1]³` and `[0,1]²×[2,3]`, each held by
/// bone points on its outer face.
pub fn stacked_cubes(proxy_lower: usize, proxy_upper: usize) -> Result<Scene> {
    let mut lattice = LatticeDomain::new(Vector3::zeros(), [1, 1, 3]);
    lattice.mark([0, 0, 0], 0);
    lattice.mark([0, 0, 2], 0);
    let mesh = build_hex_lattice(&Domain::Occupancy(lattice), 1.0)?;
    let mut points = Vec::new();
    let mut is_jaw = Vec::new();
    for (z, jaw) in [(0.0, false), (3.0, true)] {
        for (x, y) in [(0.2, 0.3), (0.8, 0.25), (0.7, 0.8), (0.25, 0.75)] {
            points.push(Vector3::new(x, y, z));
            is_jaw.push(jaw);
        }
    }
    let bones = BoneAttachments {
        embedding: embed_points(&mesh, &points)?,
        rest: points,
        is_jaw,
        jaw_frame: RigidTransform::identity(),
    };
    let lower = grid_surface(Vector3::new(0.0, 0.0, 1.0), Vector3::x(), Vector3::y(), proxy_lower, proxy_lower, false);
    let upper = grid_surface(
        Vector3::new(0.05, 0.1, 2.0),
        Vector3::x() * 0.9,
        Vector3::y() * 0.85,
        proxy_upper,
        proxy_upper,
        true,
    );
    let surface = merge_surfaces(&[lower, upper]);
    let embedding = embed_points(&mesh, &surface.vertices)?;
    let proxy = ContactProxy::with_full_mask(surface, embedding)?;
    Scene::new(mesh, bones, proxy, Weights::for_element_size(1.0))
}

/// A 2×1×1 bar cut at `x = 1` into two elements that share no vertices,
/// each held at its outer face. The proxy is two facing sheets 0.2 apart,
/// the right one twisted in its plane so no edge pair is parallel.
pub fn split_bar() -> Result<Scene> {
    let mut lattice = LatticeDomain::new(Vector3::zeros(), [2, 1, 1]);
    lattice.mark([0, 0, 0], 0);
    lattice.mark([1, 0, 0], 1);
    lattice.separated.push((0, 1));
    let mesh = build_hex_lattice(&Domain::Occupancy(lattice), 1.0)?;
    let mut points = Vec::new();
    for x in [0.0, 2.0] {
        for (y, z) in [(0.2, 0.1), (0.9, 0.3), (0.6, 0.95), (0.1, 0.7)] {
            points.push(Vector3::new(x, y, z));
        }
    }
    let bones = BoneAttachments {
        embedding: embed_points(&mesh, &points)?,
        is_jaw: vec![false; points.len()],
        rest: points,
        jaw_frame: RigidTransform::identity(),
    };
    let left = grid_surface(Vector3::new(0.9, 0.1, 0.1), Vector3::y() * 0.8, Vector3::z() * 0.8, 3, 3, false);
    let right = grid_surface(
        Vector3::new(1.1, 0.15, 0.2),
        Vector3::new(0.0, 0.7, 0.1),
        Vector3::new(0.0, -0.1, 0.65),
        3,
        3,
        true,
    );
    let surface = merge_surfaces(&[left, right]);
    let embedding = embed_points(&mesh, &surface.vertices)?;
    let proxy = ContactProxy::with_full_mask(surface, embedding)?;
    Scene::new(mesh, bones, proxy, Weights::for_element_size(1.0))
}

/// Contact parameters for [`split_bar`]: the sheets start inside `d̂`.
pub fn split_bar_contact() -> ContactParams {
    ContactParams { dhat: 0.3, kappa: 1.0 }
}

/// Axis-aligned block over `[min, max]` held by the given bone points, with
/// an inactive one-quad proxy. Used for warp and retargeting checks where
/// the same body appears in several rigid placements.
pub fn clamped_block(min: Vector3<f64>, max: Vector3<f64>, h: f64, bone_points: Vec<Vector3<f64>>) -> Result<Scene> {
    let mesh = build_hex_lattice(&Domain::Box { min, max }, h)?;
    let bones = BoneAttachments {
        embedding: embed_points(&mesh, &bone_points)?,
        is_jaw: vec![false; bone_points.len()],
        rest: bone_points,
        jaw_frame: RigidTransform::identity(),
    };
    let surface = grid_surface(min, Vector3::x() * h, Vector3::y() * h, 1, 1, false);
    let embedding = embed_points(&mesh, &surface.vertices)?;
    let proxy = ContactProxy::new(surface, embedding, vec![false; 2])?;
    Scene::new(mesh, bones, proxy, Weights::for_element_size(h))
}

/// A 2×1×1 bar held at its `x = 0` face by four bone points.
pub fn bar_2x1x1() -> Result<Scene> {
    let mesh = build_hex_lattice(
        &Domain::Box {
            min: Vector3::zeros(),
            max: Vector3::new(2.0, 1.0, 1.0),
        },
        1.0,
    )?;
    let points = vec![
        Vector3::new(0.0, 0.2, 0.1),
        Vector3::new(0.0, 0.9, 0.3),
        Vector3::new(0.0, 0.6, 0.95),
        Vector3::new(0.0, 0.1, 0.7),
    ];
    let bones = BoneAttachments {
        embedding: embed_points(&mesh, &points)?,
        is_jaw: vec![false; points.len()],
        rest: points,
        jaw_frame: RigidTransform::identity(),
    };
    let surface = grid_surface(Vector3::new(2.0, 0.0, 0.0), Vector3::y(), Vector3::z(), 1, 1, false);
    let embedding = embed_points(&mesh, &surface.vertices)?;
    let proxy = ContactProxy::new(surface, embedding, vec![false; 2])?;
    Scene::new(mesh, bones, proxy, Weights::for_element_size(1.0))
}


/// Outcome of one sliding frame on the squashed slabs.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideOutcome {
    /// Mean tangential slip over the pairs active at the frame start.
    pub slip: f64,
    pub pairs: usize,
    pub converged: bool,
}

/// Squashes the slabs into contact, then slides the upper slab's bone
/// along x by `shift` in one frame, with friction `μ` lagged from the
/// squashed state. Slip is the relative tangential displacement at the
/// contact pairs.
pub fn slide_frame(cfg: &SlabConfig, stretch: f64, shift: f64, mu: f64, eps_v: f64) -> Result<SlideOutcome> {
    let (mut scene, _) = two_slabs(cfg)?;
    scene.set_actuation(&squash_actuation(&scene, cfg, stretch)?)?;
    let mut opts = ContactOptions::new(scene.contact_params());
    let pressed = scene.solve_contact(&opts)?;
    let p0 = scene.proxy.positions(&pressed.sim.u);
    let set = collect_pairs(&scene.proxy, &p0, opts.params.dhat)?;
    let lagged = lag_friction(&set, &p0, opts.params.kappa, mu, eps_v)?;
    scene.set_jaw(&RigidTransform::translation(Vector3::x() * shift))?;
    opts.friction = Some(lagged);
    let slid = scene.solve_contact_from(&pressed.sim.u, &opts)?;
    let lagged = opts.friction.as_ref().expect("set above");
    let slips = lagged.slips(&scene.proxy.positions(&slid.sim.u));
    let n = slips.len();
    Ok(SlideOutcome {
        slip: if n == 0 { 0.0 } else { slips.iter().sum::<f64>() / n as f64 },
        pairs: n,
        converged: slid.sim.converged,
    })
}
