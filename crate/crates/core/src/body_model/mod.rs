//! A minimal articulated body: skeleton, rest-pose capsule mesh with a UV
//! atlas and analytic skinning weights, forward kinematics and forward LBS.

mod io;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{arg_err, Result, UvaError};
use crate::math::{Rigid, Vec3};

pub use io::{read_obj, read_skeleton_file, write_obj, write_skeleton_file, ObjMesh, SkeletonFile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub names: Vec<String>,
    /// `None` marks the root.
    pub parents: Vec<Option<usize>>,
    /// Rest-pose joint (bone origin) positions.
    pub joints: Vec<Vec3>,
}

impl Skeleton {
    pub fn new(names: Vec<String>, parents: Vec<Option<usize>>, joints: Vec<Vec3>) -> Result<Self> {
        let s = Self {
            names,
            parents,
            joints,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn bone_count(&self) -> usize {
        self.parents.len()
    }

    pub fn root(&self) -> usize {
        self.parents.iter().position(Option::is_none).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.parents.len();
        if n == 0 {
            return Err(UvaError::Construction("skeleton has no bones".into()));
        }
        if self.joints.len() != n || self.names.len() != n {
            return Err(UvaError::Construction(format!(
                "skeleton arrays disagree: {} parents, {} joints, {} names",
                n,
                self.joints.len(),
                self.names.len()
            )));
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(UvaError::Construction(format!(
                "skeleton must have exactly one root, found {roots}"
            )));
        }
        for (b, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                if *p >= n || *p == b {
                    return Err(UvaError::Construction(format!(
                        "bone {b} has invalid parent {p}"
                    )));
                }
            }
        }
        if self.joints.iter().any(|j| !j.iter().all(|c| c.is_finite())) {
            return Err(UvaError::Construction("non-finite joint position".into()));
        }
        // every bone must be reachable from the root, which also rules out cycles
        if self.topological_order().len() != n {
            return Err(UvaError::Construction("skeleton parents contain a cycle".into()));
        }
        Ok(())
    }

    /// Bones ordered so that every parent precedes its children.
    pub fn topological_order(&self) -> Vec<usize> {
        let n = self.parents.len();
        let mut children = vec![Vec::new(); n];
        for (b, p) in self.parents.iter().enumerate() {
            if let Some(p) = p {
                if *p < n {
                    children[*p].push(b);
                }
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut queue: VecDeque<usize> = self
            .parents
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_none())
            .map(|(b, _)| b)
            .collect();
        while let Some(b) = queue.pop_front() {
            if order.len() > n {
                break;
            }
            order.push(b);
            queue.extend(children[b].iter().copied());
        }
        order
    }
}

/// Per-joint axis-angle rotations plus a root translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub joint_rotations: Vec<Vec3>,
    pub root_translation: Vec3,
}

impl Pose {
    pub fn rest(bone_count: usize) -> Self {
        Self {
            joint_rotations: vec![Vec3::zeros(); bone_count],
            root_translation: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.joint_rotations
            .iter()
            .chain(std::iter::once(&self.root_translation))
            .all(|v| v.iter().all(|c| c.is_finite()))
    }

    /// Pose-conditioning vector fed to the displacement and shading networks:
    /// the flattened rotations of every non-root joint. Global orientation and
    /// translation are excluded so the conditioned networks are invariant to
    /// moving the whole avatar.
    pub fn conditioning(&self, skeleton: &Skeleton) -> Vec<f64> {
        let root = skeleton.root();
        self.joint_rotations
            .iter()
            .enumerate()
            .filter(|(b, _)| *b != root)
            .flat_map(|(_, r)| [r.x, r.y, r.z])
            .collect()
    }
}

/// One rigid transform per bone followed by the identity background
/// transform, `N + 1` entries in total.
#[derive(Clone, Debug, PartialEq)]
pub struct BoneTransforms(pub Vec<Rigid>);

impl BoneTransforms {
    pub fn identity(bone_count: usize) -> Self {
        Self(vec![Rigid::identity(); bone_count + 1])
    }

    pub fn bone_count(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn background(&self) -> &Rigid {
        self.0.last().expect("bone transforms are never empty")
    }
}

pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<BoneTransforms> {
    let n = skeleton.bone_count();
    if pose.joint_rotations.len() != n {
        return arg_err(format!(
            "pose has {} joint rotations but skeleton has {n} bones",
            pose.joint_rotations.len()
        ));
    }
    let mut out = vec![Rigid::identity(); n + 1];
    for b in skeleton.topological_order() {
        let local = Rigid::rotation_about(&pose.joint_rotations[b], &skeleton.joints[b]);
        out[b] = match skeleton.parents[b] {
            Some(p) => out[p].compose(&local),
            None => Rigid::translation(pose.root_translation).compose(&local),
        };
    }
    Ok(BoneTransforms(out))
}

/// Canonical rest-pose triangle mesh with per-vertex UVs and skinning weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub uvs: Vec<[f64; 2]>,
    /// Row-major `V x bone_count`.
    pub lbs_weights: Vec<f64>,
    pub bone_count: usize,
}

impl AnchorMesh {
    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn weights(&self, v: usize) -> &[f64] {
        &self.lbs_weights[v * self.bone_count..(v + 1) * self.bone_count]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        triangle_area(&self.vertices, &self.faces[f])
    }

    /// Checks every structural invariant of an anchor mesh.
    pub fn validate(&self) -> Result<()> {
        let v = self.vertices.len();
        let bad = |m: String| Err(UvaError::Construction(m));
        if v == 0 || self.faces.is_empty() {
            return bad("mesh has no vertices or faces".into());
        }
        if self.uvs.len() != v {
            return bad(format!("{} uvs for {v} vertices", self.uvs.len()));
        }
        if self.bone_count == 0 || self.lbs_weights.len() != v * self.bone_count {
            return bad(format!(
                "weight table has {} entries, expected {v} x {}",
                self.lbs_weights.len(),
                self.bone_count
            ));
        }
        if self.vertices.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return bad("non-finite vertex".into());
        }
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&k| k as usize >= v) {
                return bad(format!("face {i} indexes a missing vertex"));
            }
            if self.face_area(i) <= 1e-12 {
                return bad(format!("face {i} is degenerate"));
            }
        }
        for (i, uv) in self.uvs.iter().enumerate() {
            if !uv.iter().all(|c| (0.0..=1.0).contains(c)) {
                return bad(format!("uv of vertex {i} leaves the unit square"));
            }
        }
        for i in 0..v {
            let w = self.weights(i);
            if w.iter().any(|x| *x < 0.0 || !x.is_finite()) {
                return bad(format!("negative skinning weight at vertex {i}"));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return bad(format!("skinning weights of vertex {i} sum to {s}"));
            }
        }
        if let Some((a, b, d)) = min_pair_distance(&self.vertices) {
            if d <= 1e-9 {
                return bad(format!("vertices {a} and {b} coincide"));
            }
        }
        Ok(())
    }

    /// Hash of the vertex count and face list; two meshes with equal hashes
    /// share vertex order and connectivity.
    pub fn topology_hash(&self) -> String {
        topology_hash(self.vertices.len(), &self.faces)
    }

    /// Vertex adjacency (1-ring) derived from the faces.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k] as usize;
                let b = f[(k + 1) % 3] as usize;
                nb[a].push(b);
                nb[b].push(a);
            }
        }
        for list in &mut nb {
            list.sort_unstable();
            list.dedup();
        }
        nb
    }
}

pub fn topology_hash(vertex_count: usize, faces: &[[u32; 3]]) -> String {
    let mut h = Sha256::new();
    h.update((vertex_count as u64).to_le_bytes());
    for f in faces {
        for k in f {
            h.update(k.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub(crate) fn triangle_area(vertices: &[Vec3], f: &[u32; 3]) -> f64 {
    let a = vertices[f[0] as usize];
    let b = vertices[f[1] as usize];
    let c = vertices[f[2] as usize];
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Closest vertex pair by sorting along x and sweeping.
fn min_pair_distance(points: &[Vec3]) -> Option<(usize, usize, f64)> {
    if points.len() < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x));
    let mut best = (0, 0, f64::INFINITY);
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if points[j].x - points[i].x >= best.2 {
                break;
            }
            let d = (points[i] - points[j]).norm();
            if d < best.2 {
                best = (i.min(j), i.max(j), d);
            }
        }
    }
    Some(best)
}

/// Forward LBS of every mesh vertex.
pub fn pose_mesh(mesh: &AnchorMesh, transforms: &BoneTransforms) -> Result<Vec<Vec3>> {
    pose_vertices(&mesh.vertices, &mesh.lbs_weights, mesh.bone_count, transforms)
}

/// Forward LBS of an arbitrary vertex array sharing the mesh weight table.
pub fn pose_vertices(
    vertices: &[Vec3],
    lbs_weights: &[f64],
    bone_count: usize,
    transforms: &BoneTransforms,
) -> Result<Vec<Vec3>> {
    if transforms.bone_count() != bone_count {
        return arg_err(format!(
            "{} bone transforms for {bone_count} weight columns",
            transforms.bone_count()
        ));
    }
    if lbs_weights.len() != vertices.len() * bone_count {
        return arg_err("weight table does not match vertex count");
    }
    Ok(vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = &lbs_weights[i * bone_count..(i + 1) * bone_count];
            let mut p = Vec3::zeros();
            for (b, wb) in w.iter().enumerate() {
                if *wb != 0.0 {
                    p += transforms.0[b].apply(v) * *wb;
                }
            }
            p
        })
        .collect())
}

/// Size parameters of the procedural capsule body.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodySpec {
    /// Number of bones taken from the template (1..=8).
    pub bone_count: usize,
    /// Approximate total vertex count.
    pub vertex_budget: usize,
    /// Uniform scale applied to the ~1.7 unit tall template.
    pub scale: f64,
}

impl Default for BodySpec {
    fn default() -> Self {
        Self {
            bone_count: 8,
            vertex_budget: 600,
            scale: 1.0,
        }
    }
}

struct BoneTemplate {
    name: &'static str,
    parent: Option<usize>,
    start: [f64; 3],
    end: [f64; 3],
    radius: f64,
}

// y-up, facing +z, arms out in a T pose. Parents always precede children so
// any prefix of the list is itself a valid skeleton.
const TEMPLATE: [BoneTemplate; 8] = [
    BoneTemplate { name: "pelvis", parent: None, start: [0.0, 0.92, 0.0], end: [0.0, 1.06, 0.0], radius: 0.13 },
    BoneTemplate { name: "abdomen", parent: Some(0), start: [0.0, 1.06, 0.0], end: [0.0, 1.24, 0.0], radius: 0.12 },
    BoneTemplate { name: "chest", parent: Some(1), start: [0.0, 1.24, 0.0], end: [0.0, 1.44, 0.0], radius: 0.13 },
    BoneTemplate { name: "head", parent: Some(2), start: [0.0, 1.47, 0.0], end: [0.0, 1.6, 0.0], radius: 0.1 },
    BoneTemplate { name: "left_arm", parent: Some(2), start: [0.19, 1.4, 0.0], end: [0.74, 1.4, 0.0], radius: 0.05 },
    BoneTemplate { name: "right_arm", parent: Some(2), start: [-0.19, 1.4, 0.0], end: [-0.74, 1.4, 0.0], radius: 0.05 },
    BoneTemplate { name: "left_leg", parent: Some(0), start: [0.09, 0.9, 0.0], end: [0.1, 0.07, 0.0], radius: 0.065 },
    BoneTemplate { name: "right_leg", parent: Some(0), start: [-0.09, 0.9, 0.0], end: [-0.1, 0.07, 0.0], radius: 0.065 },
];

/// Fraction of the segment length over which skinning weights blend into the
/// parent bone.
pub const JOINT_BLEND_BAND: f64 = 0.15;

/// Bone names of the default template, in bone order.
pub fn template_bone_names() -> Vec<&'static str> {
    TEMPLATE.iter().map(|b| b.name).collect()
}

/// Builds the procedural capsule body: one closed capsule per bone, a
/// non-overlapping UV chart per capsule and analytic skinning weights.
pub fn build_default_body(spec: &BodySpec) -> Result<(Skeleton, AnchorMesh)> {
    let n = spec.bone_count;
    if n == 0 || n > TEMPLATE.len() {
        return Err(UvaError::Construction(format!(
            "bone count must be in 1..={}, got {n}",
            TEMPLATE.len()
        )));
    }
    if !(spec.scale.is_finite() && spec.scale > 0.0) {
        return Err(UvaError::Construction("body scale must be positive".into()));
    }
    let bones = &TEMPLATE[..n];
    let s = spec.scale;
    let skeleton = Skeleton::new(
        bones.iter().map(|b| b.name.to_string()).collect(),
        bones.iter().map(|b| b.parent).collect(),
        bones.iter().map(|b| Vec3::from(b.start) * s).collect(),
    )?;

    let per_capsule = spec.vertex_budget / n;
    let layout = CapsuleLayout::for_budget(per_capsule).ok_or_else(|| {
        UvaError::Construction(format!(
            "vertex budget {} too small for {n} capsules (need at least {} per capsule)",
            spec.vertex_budget,
            CapsuleLayout::MIN_VERTICES
        ))
    })?;

    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let mut mesh = AnchorMesh {
        vertices: Vec::new(),
        faces: Vec::new(),
        uvs: Vec::new(),
        lbs_weights: Vec::new(),
        bone_count: n,
    };
    for (b, bone) in bones.iter().enumerate() {
        let cell = (
            (b % cols) as f64 / cols as f64,
            (b / cols) as f64 / rows as f64,
            1.0 / cols as f64,
            1.0 / rows as f64,
        );
        append_capsule(
            &mut mesh,
            b,
            bone.parent,
            Vec3::from(bone.start) * s,
            Vec3::from(bone.end) * s,
            bone.radius * s,
            &layout,
            cell,
        );
    }
    mesh.validate()?;
    Ok((skeleton, mesh))
}

struct CapsuleLayout {
    around: usize,
    cap_rings: usize,
    body_rings: usize,
}

impl CapsuleLayout {
    const MIN_VERTICES: usize = 14;

    fn for_budget(per_capsule: usize) -> Option<Self> {
        if per_capsule < Self::MIN_VERTICES {
            return None;
        }
        let around = ((per_capsule as f64 * 0.9).sqrt().round() as usize).clamp(4, 32);
        let rings = (per_capsule - 2) / around;
        let cap_rings = if rings >= 5 { 2 } else { 1 };
        let body_rings = rings.checked_sub(2 * cap_rings)?;
        (body_rings >= 1).then_some(Self {
            around,
            cap_rings,
            body_rings,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn append_capsule(
    mesh: &mut AnchorMesh,
    bone: usize,
    parent: Option<usize>,
    start: Vec3,
    end: Vec3,
    radius: f64,
    layout: &CapsuleLayout,
    cell: (f64, f64, f64, f64),
) {
    let axis_vec = end - start;
    let length = axis_vec.norm();
    let axis = axis_vec / length;
    let helper = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let p = axis.cross(&helper).normalize();
    let q = axis.cross(&p);

    // (axial offset from start, ring radius)
    let mut profile = Vec::new();
    let nc = layout.cap_rings;
    for k in 1..=nc {
        let a = std::f64::consts::FRAC_PI_2 * k as f64 / nc as f64;
        profile.push((-radius * a.cos(), radius * a.sin()));
    }
    for m in 1..=layout.body_rings {
        profile.push((length * m as f64 / (layout.body_rings + 1) as f64, radius));
    }
    for k in (1..=nc).rev() {
        let a = std::f64::consts::FRAC_PI_2 * k as f64 / nc as f64;
        profile.push((length + radius * a.cos(), radius * a.sin()));
    }
    let ring_count = profile.len();
    let total_levels = ring_count + 1;

    let pad_u = 0.04 * cell.2;
    let pad_v = 0.04 * cell.3;
    let to_uv = |ul: f64, vl: f64| {
        [
            cell.0 + pad_u + ul * (cell.2 - 2.0 * pad_u),
            cell.1 + pad_v + vl * (cell.3 - 2.0 * pad_v),
        ]
    };

    let bone_count = mesh.bone_count;
    let weights_for = |z: f64| {
        let mut w = vec![0.0; bone_count];
        match parent {
            Some(pb) => {
                let band = JOINT_BLEND_BAND * length;
                let wp = if z < band { 0.5 * (1.0 - z.max(0.0) / band) } else { 0.0 };
                w[pb] = wp;
                w[bone] = 1.0 - wp;
            }
            None => w[bone] = 1.0,
        }
        w
    };

    let base = mesh.vertices.len() as u32;
    let push = |mesh: &mut AnchorMesh, pos: Vec3, uv: [f64; 2], z: f64| {
        mesh.vertices.push(pos);
        mesh.uvs.push(uv);
        mesh.lbs_weights.extend(weights_for(z));
    };

    push(mesh, start - axis * radius, to_uv(0.5, 0.0), -radius);
    for (r, &(z, rho)) in profile.iter().enumerate() {
        let vl = (r + 1) as f64 / total_levels as f64;
        for j in 0..layout.around {
            let beta = std::f64::consts::TAU * j as f64 / layout.around as f64;
            let pos = start + axis * z + (p * beta.cos() + q * beta.sin()) * rho;
            push(mesh, pos, to_uv(j as f64 / layout.around as f64, vl), z);
        }
    }
    push(mesh, end + axis * radius, to_uv(0.5, 1.0), length + radius);

    let n = layout.around as u32;
    let ring = |r: usize, j: u32| base + 1 + r as u32 * n + (j % n);
    let south = base;
    let north = base + 1 + ring_count as u32 * n;
    // winding chosen so that (b - a) x (c - a) points away from the axis
    for j in 0..n {
        mesh.faces.push([south, ring(0, j + 1), ring(0, j)]);
    }
    for r in 0..ring_count - 1 {
        for j in 0..n {
            let a = ring(r, j);
            let b = ring(r, j + 1);
            let c = ring(r + 1, j);
            let d = ring(r + 1, j + 1);
            mesh.faces.push([a, b, d]);
            mesh.faces.push([a, d, c]);
        }
    }
    for j in 0..n {
        mesh.faces.push([north, ring(ring_count - 1, j), ring(ring_count - 1, j + 1)]);
    }
}
