//! Synthetic identities: the canonical slab template, smooth per-identity
//! warps of it with closed-form inverses, and the simulation scene built on
//! the warped geometry.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::canonical::{Mapping, WarpCache};
use crate::contact::ContactProxy;
use crate::error::{Error, Result};
use crate::geom::{build_hex_lattice, embed_points, Domain, HexMesh, LatticeDomain, TriSurface};
use crate::math::RigidTransform;
use crate::pd::{BoneAttachments, Weights};
use crate::scenes::Scene;

/// Template layout in lattice units. The slab spans
/// `[0, width]×[0, height]×[0, depth]`; skin is the `z = depth` face, the
/// bone plate is `z = 0`, and a mouth slot at `y = slot_y` cuts the cell
/// layers at or above `lip_level`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateConfig {
    pub h: f64,
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub lip_level: usize,
    pub slot_y: f64,
    pub slot_half_width: f64,
    /// Lowest point of the lip faces.
    pub lip_bottom: f64,
    /// Target spacing of surface vertices.
    pub surface_spacing: f64,
    /// Jaw hinge in template coordinates; the jaw frame's origin.
    pub pivot: [f64; 3],
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            h: 1.0,
            width: 8,
            height: 8,
            depth: 4,
            lip_level: 1,
            slot_y: 4.0,
            slot_half_width: 0.25,
            lip_bottom: 1.6,
            surface_spacing: 0.4,
            pivot: [4.0, 6.0, -3.0],
        }
    }
}

/// Part tags of lattice cells.
pub const PART_LOWER_LIP: u8 = 0;
pub const PART_UPPER_LIP: u8 = 1;
pub const PART_BASE: u8 = 2;

impl TemplateConfig {
    pub fn extent(&self) -> Vector3<f64> {
        Vector3::new(self.width as f64, self.height as f64, self.depth as f64) * self.h
    }

    fn validate(&self) -> Result<()> {
        let ext = self.extent();
        let ok = self.h > 0.0
            && self.lip_level < self.depth
            && self.slot_half_width > 0.0
            && self.slot_half_width < 0.5 * self.h
            && self.slot_y > self.h
            && self.slot_y < ext.y - self.h
            && (self.slot_y / self.h - (self.slot_y / self.h).round()).abs() < 1e-12
            && self.lip_bottom > self.lip_level as f64 * self.h
            && self.lip_bottom < ext.z
            && self.surface_spacing > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inconsistent template layout {self:?}")))
        }
    }

    /// Skin surface in template coordinates: two folded sheets, each running
    /// along the top face and down its lip face, so the lips face each other
    /// across the slot. The lower sheet comes first.
    pub fn surface(&self) -> TriSurface {
        let ext = self.extent();
        let lo = self.slot_y - self.slot_half_width;
        let hi = self.slot_y + self.slot_half_width;
        let lower = self.folded_sheet(&[(0.0, ext.z), (lo, ext.z), (lo, self.lip_bottom)], false);
        let upper = self.folded_sheet(&[(ext.y, ext.z), (hi, ext.z), (hi, self.lip_bottom)], true);
        crate::scenes::merge_surfaces(&[lower, upper])
    }

    /// Sheet swept along x over a polyline in the (y, z) plane.
    fn folded_sheet(&self, path: &[(f64, f64)], flip: bool) -> TriSurface {
        let nx = (self.extent().x / self.surface_spacing).round().max(1.0) as usize;
        let mut profile = vec![path[0]];
        for w in path.windows(2) {
            let (a, b) = (w[0], w[1]);
            let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
            let n = (len / self.surface_spacing).round().max(1.0) as usize;
            for s in 1..=n {
                let t = s as f64 / n as f64;
                profile.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            }
        }
        let np = profile.len();
        let mut vertices = Vec::with_capacity((nx + 1) * np);
        for &(y, z) in &profile {
            for i in 0..=nx {
                vertices.push(Vector3::new(self.extent().x * i as f64 / nx as f64, y, z));
            }
        }
        let idx = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * (np - 1));
        for j in 0..np - 1 {
            for i in 0..nx {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                // the profile direction t and x give the normal x × t
                if flip {
                    triangles.push([a, c, b]);
                    triangles.push([a, d, c]);
                } else {
                    triangles.push([a, b, c]);
                    triangles.push([a, c, d]);
                }
            }
        }
        TriSurface::new(vertices, triangles)
    }

    /// Bone points at the bottom-face cell centers and their jaw flags
    /// (the strip below the slot follows the jaw).
    pub fn bone_points(&self) -> (Vec<Vector3<f64>>, Vec<bool>) {
        let mut pts = Vec::new();
        let mut jaw = Vec::new();
        for j in 0..self.height {
            for i in 0..self.width {
                let p = Vector3::new(i as f64 + 0.5, j as f64 + 0.5, 0.0) * self.h;
                jaw.push(p.y < self.slot_y);
                pts.push(p);
            }
        }
        (pts, jaw)
    }

    pub fn pivot(&self) -> Vector3<f64> {
        Vector3::from(self.pivot)
    }
}

/// Smooth warp `ψ` from the template into an identity's material space:
///
/// ```text
/// ψx = sx·x + a0·sin(πy/H + p0)
/// ψy = sy·y
/// ψz = z·(sz + a1·sin(πx/W + p1)·cos(πy/H + p2))
/// ```
///
/// `ψy` depends on `y` alone so the mouth slot stays planar and can sit on
/// a lattice plane; `ψz` fixes the bone plane `z = 0`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WarpParams {
    pub scale: [f64; 3],
    pub a0: f64,
    pub a1: f64,
    pub phase: [f64; 3],
    pub width: f64,
    pub height: f64,
}

impl WarpParams {
    pub fn identity(cfg: &TemplateConfig) -> Self {
        let ext = cfg.extent();
        Self {
            scale: [1.0; 3],
            a0: 0.0,
            a1: 0.0,
            phase: [0.0; 3],
            width: ext.x,
            height: ext.y,
        }
    }

    pub fn random<R: Rng + ?Sized>(cfg: &TemplateConfig, rng: &mut R) -> Self {
        let ext = cfg.extent();
        Self {
            scale: [rng.gen_range(0.9..1.1), rng.gen_range(0.9..1.1), rng.gen_range(0.9..1.1)],
            a0: rng.gen_range(-0.4..0.4) * cfg.h,
            a1: rng.gen_range(-0.08..0.08),
            phase: [rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU), rng.gen_range(0.0..TAU)],
            width: ext.x,
            height: ext.y,
        }
    }

    fn gz(&self, q: &Vector3<f64>) -> f64 {
        let [_, p1, p2] = self.phase;
        self.scale[2] + self.a1 * (PI * q.x / self.width + p1).sin() * (PI * q.y / self.height + p2).cos()
    }

    pub fn apply(&self, q: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.scale[0] * q.x + self.a0 * (PI * q.y / self.height + self.phase[0]).sin(),
            self.scale[1] * q.y,
            q.z * self.gz(q),
        )
    }

    pub fn jacobian(&self, q: &Vector3<f64>) -> Matrix3<f64> {
        let [p0, p1, p2] = self.phase;
        let (kx, ky) = (PI / self.width, PI / self.height);
        let (sx1, cx1) = (kx * q.x + p1).sin_cos();
        let (sy2, cy2) = (ky * q.y + p2).sin_cos();
        Matrix3::new(
            self.scale[0],
            self.a0 * ky * (ky * q.y + p0).cos(),
            0.0,
            0.0,
            self.scale[1],
            0.0,
            q.z * self.a1 * kx * cx1 * cy2,
            -q.z * self.a1 * ky * sx1 * sy2,
            self.gz(q),
        )
    }

    /// Closed-form `ψ⁻¹`.
    pub fn invert(&self, x: &Vector3<f64>) -> Vector3<f64> {
        let y = x.y / self.scale[1];
        let qx = (x.x - self.a0 * (PI * y / self.height + self.phase[0]).sin()) / self.scale[0];
        let q = Vector3::new(qx, y, 0.0);
        Vector3::new(qx, y, x.z / self.gz(&q))
    }
}

/// Per-identity parameters of the procedural muscle generator.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StyleParams {
    pub gains: Vec<f64>,
    /// In-plane rotation of every fiber direction, radians.
    pub tilt: f64,
    pub jaw_gain: f64,
}

impl StyleParams {
    pub fn neutral(muscles: usize) -> Self {
        Self {
            gains: vec![1.0; muscles],
            tilt: 0.0,
            jaw_gain: 1.0,
        }
    }

    pub fn random<R: Rng + ?Sized>(muscles: usize, rng: &mut R) -> Self {
        Self {
            gains: (0..muscles).map(|_| rng.gen_range(0.6..1.4)).collect(),
            tilt: rng.gen_range(-0.25..0.25),
            jaw_gain: rng.gen_range(0.7..1.3),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticIdentity {
    pub name: String,
    pub seed: u64,
    pub template: TemplateConfig,
    pub warp: WarpParams,
    pub style: StyleParams,
    pub scene: Scene,
}

/// Exact material-to-canonical map `φ = ψ⁻¹` of an identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactMapping(pub WarpParams);

impl Mapping for ExactMapping {
    fn map(&self, x: &Vector3<f64>) -> Result<(Vector3<f64>, Matrix3<f64>)> {
        let q = self.0.invert(x);
        let j = self
            .0
            .jacobian(&q)
            .try_inverse()
            .ok_or(Error::InvertedJacobian(0.0))?;
        Ok((q, j))
    }
}

const MAX_WARP_RETRIES: u64 = 16;

/// Deterministic identity from a seed; seed 0 is the undeformed template
/// with a neutral style.
pub fn make_identity(seed: u64, template: &TemplateConfig, muscles: usize) -> Result<SyntheticIdentity> {
    template.validate()?;
    let mut attempt: u64 = 0;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        let (warp, style) = if seed == 0 {
            (WarpParams::identity(template), StyleParams::neutral(muscles))
        } else {
            let w = WarpParams::random(template, &mut rng);
            (w, StyleParams::random(muscles, &mut rng))
        };
        match build_identity_scene(template, &warp) {
            Ok(scene) => {
                return Ok(SyntheticIdentity {
                    name: format!("id{seed}"),
                    seed,
                    template: template.clone(),
                    warp,
                    style,
                    scene,
                })
            }
            Err(Error::InvertedJacobian(det)) if attempt < MAX_WARP_RETRIES => {
                log::warn!("identity seed {seed}: warp inverted (det {det:e}), retrying");
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

fn build_identity_scene(t: &TemplateConfig, warp: &WarpParams) -> Result<Scene> {
    let h = t.h;
    let ext = t.extent();
    let surface_t = t.surface();
    let (bones_t, is_jaw) = t.bone_points();
    let surface: Vec<_> = surface_t.vertices.iter().map(|q| warp.apply(q)).collect();
    let bones: Vec<_> = bones_t.iter().map(|q| warp.apply(q)).collect();

    // bounds of the warped slab
    let n = 16;
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for i in 0..=n {
        for j in 0..=n {
            for k in 0..=n {
                let q = ext.component_mul(&Vector3::new(i as f64, j as f64, k as f64)) / n as f64;
                let det = warp.jacobian(&q).determinant();
                if !(det > 0.0) {
                    return Err(Error::InvertedJacobian(det));
                }
                let p = warp.apply(&q);
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
        }
    }
    for p in surface.iter().chain(&bones) {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let slot = warp.scale[1] * t.slot_y;
    let cells_below = ((slot - lo.y) / h - 1e-9).ceil().max(1.0) as usize;
    let origin = Vector3::new(lo.x, slot - cells_below as f64 * h, 0.0);
    let dims = [
        ((hi.x - origin.x) / h - 1e-9).ceil().max(1.0) as usize,
        cells_below + ((hi.y - slot) / h - 1e-9).ceil().max(1.0) as usize,
        ((hi.z - origin.z) / h - 1e-9).ceil().max(1.0) as usize,
    ];
    let mut lattice = LatticeDomain::new(origin, dims);
    let cell_of = |p: &Vector3<f64>| -> [usize; 3] {
        let c = (p - origin) / h;
        [0, 1, 2].map(|a| (c[a].floor().max(0.0) as usize).min(dims[a] - 1))
    };
    let mut occupied = vec![false; dims[0] * dims[1] * dims[2]];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let center = origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * h;
                let q = warp.invert(&center);
                let inside = (0..3).all(|a| q[a] >= 0.0 && q[a] <= ext[a]);
                occupied[lattice.cell_index([i, j, k])] = inside;
            }
        }
    }
    for p in surface.iter().chain(&bones) {
        let idx = lattice.cell_index(cell_of(p));
        occupied[idx] = true;
    }
    for (idx, &occ) in occupied.iter().enumerate() {
        if occ {
            let [i, j, k] = lattice.cell_coords(idx);
            let part = if k < t.lip_level {
                PART_BASE
            } else if j < cells_below {
                PART_LOWER_LIP
            } else {
                PART_UPPER_LIP
            };
            lattice.mark([i, j, k], part);
        }
    }
    lattice.separated.push((PART_LOWER_LIP, PART_UPPER_LIP));
    let mesh = build_hex_lattice(&Domain::Occupancy(lattice), h)?;

    let bone_att = BoneAttachments {
        embedding: embed_points(&mesh, &bones)?,
        rest: bones,
        is_jaw,
        jaw_frame: RigidTransform::translation(warp.apply(&t.pivot())),
    };
    let surface = surface_t.with_vertices(surface);
    let embedding = embed_points(&mesh, &surface.vertices)?;
    let proxy = ContactProxy::with_full_mask(surface, embedding)?;
    Scene::new(mesh, bone_att, proxy, Weights::for_element_size(h))
}

impl SyntheticIdentity {
    pub fn mapping(&self) -> ExactMapping {
        ExactMapping(self.warp)
    }

    pub fn mesh(&self) -> &HexMesh {
        &self.scene.mesh
    }

    pub fn rest_surface(&self) -> &TriSurface {
        &self.scene.proxy.surface
    }

    /// Warp data from the exact mapping.
    pub fn exact_warp(&self) -> Result<WarpCache> {
        WarpCache::build(&self.name, &self.mapping(), self.mesh())
    }

    /// Template-space surface and bone positions paired with their material
    /// positions, the correspondences a mapping is trained on.
    pub fn correspondences(&self) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        let surface_t = self.template.surface();
        let (bones_t, _) = self.template.bone_points();
        let material: Vec<_> = self.scene.proxy.surface.vertices.iter().chain(&self.scene.bones.rest).copied().collect();
        let canonical: Vec<_> = surface_t.vertices.into_iter().chain(bones_t).collect();
        (material, canonical)
    }
}
