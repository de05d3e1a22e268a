//! Geometry edits, texture swapping and texture painting.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::SVD;
use serde::{Deserialize, Serialize};

use crate::body_model::{read_obj, topology_hash, AnchorMesh, Pose};
use crate::camera::Camera;
use crate::error::{Result, UvaError};
use crate::image_io::{dilate_mask, Image};
use crate::math::{Mat3, Vec3};
use crate::model::{Avatar, SwapAppearance};
use crate::nn::Real;
use crate::renderer::{bounded_rays, render_rays, RenderSettings};
use crate::trainer::{RayTarget, TrainConfig, TrainView, Trainer, UpdateMask};

/// Edited canonical vertex positions, in mesh order.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryEdit {
    pub vertices: Vec<Vec3>,
}

impl GeometryEdit {
    /// Reads an edited mesh, rejecting any change of vertex count or faces.
    pub fn from_obj(path: &Path, mesh: &AnchorMesh) -> Result<Self> {
        let obj = read_obj(path)?;
        if obj.vertices.len() != mesh.vertex_count() {
            return Err(UvaError::Topology(format!(
                "{} has {} vertices, the avatar mesh has {}",
                path.display(),
                obj.vertices.len(),
                mesh.vertex_count()
            )));
        }
        if topology_hash(obj.vertices.len(), &obj.faces) != mesh.topology_hash() {
            return Err(UvaError::Topology(format!(
                "{} has a different face list than the avatar mesh",
                path.display()
            )));
        }
        Ok(Self { vertices: obj.vertices })
    }
}

/// Moves the anchor vertices. Codes stay attached by index, so geometry and
/// appearance follow the new surface.
pub fn apply_geometry_edit<T: Real>(avatar: &Avatar<T>, edit: &GeometryEdit) -> Result<Avatar<T>> {
    let mut out = avatar.clone();
    out.set_canonical_vertices(edit.vertices.clone())?;
    Ok(out)
}

/// Vertices whose largest skinning weight belongs to `bone`.
pub fn bone_vertices(mesh: &AnchorMesh, bone: usize) -> Vec<usize> {
    (0..mesh.vertex_count())
        .filter(|&v| {
            let w = mesh.weights(v);
            let best = w
                .iter()
                .enumerate()
                .fold(0, |b, (i, x)| if *x > w[b] { i } else { b });
            best == bone
        })
        .collect()
}

/// Scales the distance of the chosen vertices from the line through `origin`
/// along `axis` by `factor`.
pub fn scale_about_axis(vertices: &[Vec3], indices: &[usize], origin: &Vec3, axis: &Vec3, factor: f64) -> Vec<Vec3> {
    let a = axis.normalize();
    let mut out = vertices.to_vec();
    for &i in indices {
        let r = vertices[i] - origin;
        let along = a * r.dot(&a);
        out[i] = origin + along + (r - along) * factor;
    }
    out
}

/// Anchor vertices chosen for an edit, with an optional blend weight each.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSelection {
    pub indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl NodeSelection {
    pub fn hard(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self { indices, weights: None }
    }

    pub fn all(vertex_count: usize) -> Self {
        Self::hard((0..vertex_count).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[k])
    }

    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for &i in &self.indices {
            if i >= vertex_count {
                return Err(UvaError::Argument(format!("selected vertex {i} of {vertex_count}")));
            }
            if !seen.insert(i) {
                return Err(UvaError::Argument(format!("vertex {i} selected twice")));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.indices.len() {
                return Err(UvaError::Argument(format!(
                    "{} weights for {} indices",
                    w.len(),
                    self.indices.len()
                )));
            }
            if w.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(UvaError::Argument("selection weights must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| UvaError::json(path, e))?;
        std::fs::write(path, text).map_err(|e| UvaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UvaError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| UvaError::json(path, e))
    }
}

pub const DEFAULT_DISTANCE_THRESHOLD: f64 = 0.02;

/// Anchor vertices near the rays of the masked pixels and not hidden behind
/// the rendered surface. `mask` is row-major at the camera resolution.
pub fn select_nodes_from_mask<T: Real>(
    avatar: &Avatar<T>,
    camera: &Camera,
    pose: &Pose,
    mask: &[bool],
    distance_threshold: f64,
    settings: &RenderSettings,
) -> Result<NodeSelection> {
    let (w, h) = (camera.width, camera.height);
    if mask.len() != (w * h) as usize {
        return Err(UvaError::Argument(format!(
            "mask has {} pixels, camera is {w}x{h}",
            mask.len()
        )));
    }
    let pixels: Vec<(u32, u32)> = mask
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| ((i % w as usize) as u32, (i / w as usize) as u32))
        .collect();
    if pixels.is_empty() {
        return Ok(NodeSelection::default());
    }
    let ctx = avatar.pose_context(pose)?;
    let rays = bounded_rays(camera, &ctx, &pixels, settings.margin)?;
    let settings = RenderSettings {
        stochastic: false,
        ..settings.clone()
    };
    let depth = render_rays(avatar, &ctx, &rays, &settings, 0)?.depth;
    let mut chosen = vec![false; ctx.posed_vertices.len()];
    for i in (0..rays.len()).filter(|&i| rays.hit[i]) {
        let (o, d) = (rays.origins[i], rays.directions[i]);
        let limit = depth[i].map_or(f64::INFINITY, |t| t + distance_threshold);
        for (v, p) in ctx.posed_vertices.iter().enumerate() {
            if chosen[v] {
                continue;
            }
            let t = (p - o).dot(&d);
            if t < 0.0 || t > limit {
                continue;
            }
            if (p - o - d * t).norm() < distance_threshold {
                chosen[v] = true;
            }
        }
    }
    Ok(NodeSelection::hard(
        chosen.iter().enumerate().filter(|(_, c)| **c).map(|(v, _)| v).collect(),
    ))
}

fn kabsch(pairs: &[(Vec3, Vec3)]) -> (Mat3, Vec3) {
    let n = pairs.len() as f64;
    let pc = pairs.iter().map(|(p, _)| p).sum::<Vec3>() / n;
    let qc = pairs.iter().map(|(_, q)| q).sum::<Vec3>() / n;
    let mut cov = Mat3::zeros();
    for (p, q) in pairs {
        cov += (p - pc) * (q - qc).transpose();
    }
    let svd = SVD::new(cov, true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut fix = Mat3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * fix * u.transpose();
    (r, qc - r * pc)
}

/// Where each target anchor vertex lands in the source's canonical space:
/// the source vertex of the same index when both meshes share topology,
/// otherwise the nearest source surface point after a rigid ICP alignment.
pub fn correspondence<T: Real, S: Real>(target: &Avatar<T>, source: &Avatar<S>) -> Vec<Vec3> {
    if target.mesh().topology_hash() == source.mesh().topology_hash() {
        return source.mesh().vertices.clone();
    }
    let tv = &target.mesh().vertices;
    let centroid = |v: &[Vec3]| v.iter().sum::<Vec3>() / v.len() as f64;
    let mut r = Mat3::identity();
    let mut t = centroid(&source.mesh().vertices) - centroid(tv);
    for _ in 0..30 {
        let pairs: Vec<(Vec3, Vec3)> = tv
            .iter()
            .map(|p| {
                let q = r * p + t;
                let (j, _) = source.canonical_index().nearest(&q).expect("source mesh has vertices");
                (*p, source.mesh().vertices[j])
            })
            .collect();
        let (r_new, t_new) = kabsch(&pairs);
        let moved = (r_new - r).norm() + (t_new - t).norm();
        r = r_new;
        t = t_new;
        if moved < 1e-10 {
            break;
        }
    }
    tv.iter()
        .map(|p| source.surface().closest_point(&(r * p + t)).position)
        .collect()
}

fn source_rgb_at<S: Real>(source: &Avatar<S>, x: &Vec3) -> Vec<f64> {
    let codes = &source.params.codes;
    let dim = codes.dim;
    let knn = source.canonical_index().knn(x, source.config.motion.knn_k);
    // an exact vertex hit takes that vertex's code unchanged
    if let Some(&(j, d2)) = knn.first() {
        if d2 == 0.0 {
            return codes.rgb_row(j).iter().map(|v| v.f64()).collect();
        }
    }
    let w = crate::mesh_geometry::KnnWeights::from_neighbors(&knn);
    let mut out = vec![0.0; dim];
    for (&j, &wj) in w.indices.iter().zip(&w.weights) {
        for (o, c) in out.iter_mut().zip(codes.rgb_row(j)) {
            *o += wj * c.f64();
        }
    }
    out
}

/// Pre-blended texture swap: selected target vertices take the source's
/// appearance codes and decode with the source's colour and shading
/// networks. Vertices one ring outside the selection take a 50/50 blend.
pub fn swap_texture<T: Real, S: Real>(
    target: &Avatar<T>,
    source: &Avatar<S>,
    selection: &NodeSelection,
    positions: &[Vec3],
) -> Result<Avatar<T>> {
    let v = target.mesh().vertex_count();
    selection.validate(v)?;
    if source.iteration == 0 {
        return Err(UvaError::Argument("source avatar is untrained".into()));
    }
    if target.iteration == 0 {
        return Err(UvaError::Argument("target avatar is untrained".into()));
    }
    if target.swap.is_some() || source.swap.is_some() {
        return Err(UvaError::Argument("swapping into or from an already swapped avatar".into()));
    }
    if positions.len() != v {
        return Err(UvaError::Argument(format!(
            "correspondence has {} positions for {v} vertices",
            positions.len()
        )));
    }
    if source.params.codes.dim != target.params.codes.dim
        || source.params.nets.color.spec() != target.params.nets.color.spec()
        || source.params.nets.shading.spec() != target.params.nets.shading.spec()
    {
        return Err(UvaError::Argument("source and target decoders differ in shape".into()));
    }

    let mut weight = vec![0.0; v];
    let mut selected = vec![false; v];
    for (k, &i) in selection.indices.iter().enumerate() {
        weight[i] = selection.weight(k);
        selected[i] = true;
    }
    let neighbors = target.mesh().vertex_neighbors();
    for &i in &selection.indices {
        for &n in &neighbors[i] {
            if !selected[n] {
                weight[n] = 0.5;
            }
        }
    }

    let mut out = target.clone();
    let dim = out.params.codes.dim;
    for (i, &w) in weight.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let src = source_rgb_at(source, &positions[i]);
        let row = &mut out.params.codes.rgb[i * dim..(i + 1) * dim];
        for (r, s) in row.iter_mut().zip(src) {
            *r = if w == 1.0 { T::of(s) } else { T::of((1.0 - w) * r.f64() + w * s) };
        }
    }
    out.swap = Some(SwapAppearance {
        color: source.params.nets.color.cast(),
        shading: source.params.nets.shading.cast(),
        vertex_weight: weight,
    });
    Ok(out)
}

/// A painting request for one posed view.
#[derive(Clone, Debug)]
pub struct PaintJob {
    pub camera: Camera,
    pub pose: Pose,
    /// RGB target at the camera resolution.
    pub reference: Image,
    /// Row-major painted region.
    pub mask: Vec<bool>,
    pub dilation: u32,
    pub iterations: u64,
    pub code_lr: f64,
    pub decoder_lr: f64,
    pub freeze_decoder: bool,
    pub distance_threshold: f64,
    pub batch_rays: usize,
    pub seed: u64,
}

pub const PAINT_LR_GAP: f64 = 100.0;

impl PaintJob {
    pub fn new(camera: Camera, pose: Pose, reference: Image, mask: Vec<bool>) -> Self {
        let code_lr = 5e-3;
        Self {
            camera,
            pose,
            reference,
            mask,
            dilation: 3,
            iterations: 2000,
            code_lr,
            decoder_lr: code_lr / PAINT_LR_GAP,
            freeze_decoder: true,
            distance_threshold: DEFAULT_DISTANCE_THRESHOLD,
            batch_rays: 256,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.camera.width, self.camera.height);
        if self.reference.width != w || self.reference.height != h || self.reference.channels != 3 {
            return Err(UvaError::Argument(format!(
                "reference is {}x{}x{}, camera is {w}x{h}",
                self.reference.width, self.reference.height, self.reference.channels
            )));
        }
        if self.mask.len() != (w * h) as usize {
            return Err(UvaError::Argument("mask resolution differs from the reference".into()));
        }
        if !(self.code_lr > 0.0 && self.decoder_lr > 0.0 && self.code_lr >= self.decoder_lr) {
            return Err(UvaError::Argument("paint rates need code_lr >= decoder_lr > 0".into()));
        }
        if self.batch_rays == 0 {
            return Err(UvaError::Argument("paint batch is empty".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaintReport {
    pub selection: NodeSelection,
    pub masked_pixels: usize,
    pub losses: Vec<f64>,
}

/// Fine-tunes the appearance codes of the nodes under the dilated mask
/// (and, unless frozen, the colour decoder at `decoder_lr`) towards the
/// reference inside the mask.
pub fn paint_texture<T: Real>(
    avatar: &Avatar<T>,
    job: &PaintJob,
    settings: &RenderSettings,
) -> Result<(Avatar<T>, PaintReport)> {
    job.validate()?;
    if avatar.swap.is_some() {
        return Err(UvaError::Edit("cannot paint a texture-swapped avatar".into()));
    }
    let (w, h) = (job.camera.width, job.camera.height);
    let dilated = dilate_mask(&job.mask, w, h, job.dilation);
    let masked: Vec<(u32, u32)> = dilated
        .iter()
        .enumerate()
        .filter(|(_, m)| **m)
        .map(|(i, _)| ((i % w as usize) as u32, (i / w as usize) as u32))
        .collect();
    let selection = select_nodes_from_mask(avatar, &job.camera, &job.pose, &dilated, job.distance_threshold, settings)?;
    let mut report = PaintReport {
        selection,
        masked_pixels: masked.len(),
        losses: Vec::new(),
    };
    if masked.is_empty() || report.selection.is_empty() {
        return Ok((avatar.clone(), report));
    }

    let alpha = crate::image_io::mask_to_image(&dilated, w, h);
    let mut view = TrainView::new(avatar, "paint".into(), job.camera.clone(), &job.pose, job.reference.clone(), &alpha, 0)?;
    view.foreground = masked;
    let views = [view];
    let config = TrainConfig {
        iterations: job.iterations,
        batch_rays: job.batch_rays,
        seed: job.seed,
        jitter: false,
        ..TrainConfig::default()
    };
    let iteration = avatar.iteration;
    let mut trainer = Trainer::new(avatar.clone(), config, settings.clone())?;
    let mask = UpdateMask {
        blocks: [false, false, !job.freeze_decoder, false, false, true],
        code_rows: Some(report.selection.indices.clone()),
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(job.seed);
    for _ in 0..job.iterations {
        let batch: Vec<RayTarget> = crate::trainer::sample_rays(&views, job.batch_rays, 1.0, &mut rng);
        let loss = trainer
            .masked_step(&views, &batch, &mask, job.decoder_lr, job.code_lr / job.decoder_lr)
            .map_err(|e| match e {
                UvaError::Training { message, .. } => UvaError::Edit(format!("painting diverged: {message}")),
                other => other,
            })?;
        report.losses.push(loss);
    }
    let mut out = trainer.avatar;
    out.iteration = iteration;
    Ok((out, report))
}
