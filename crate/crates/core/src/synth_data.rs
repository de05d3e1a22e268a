//! Synthetic multi-view, multi-pose datasets rendered by an analytic
//! rasteriser of the textured body. The rasteriser is deliberately separate
//! from the volumetric renderer and serves as ground truth.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::body_model::{read_obj, read_skeleton_file, write_obj, write_skeleton_file};
use crate::body_model::{build_default_body, forward_kinematics, pose_mesh, AnchorMesh, BodySpec, Pose, Skeleton};
use crate::camera::Camera;
use crate::error::{Result, UvaError};
use crate::image_io::Image;
use crate::math::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub body: BodySpec,
    pub texture_size: u32,
    /// Image width and height in pixels.
    pub resolution: u32,
    pub poses: usize,
    /// Cameras used for training, equally spaced in azimuth.
    pub train_cameras: usize,
    /// Extra cameras placed halfway between training azimuths.
    pub heldout_cameras: usize,
    /// Every `hold_out_every`-th pose is reserved for novel-pose testing.
    pub hold_out_every: usize,
    /// Joint angle amplitude of the pose trajectories, radians.
    pub max_angle: f64,
    pub camera_distance: f64,
    /// Multiply the ground truth by a pose-dependent brightness.
    pub shaded: bool,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            body: BodySpec::default(),
            texture_size: 256,
            resolution: 128,
            poses: 25,
            train_cameras: 4,
            heldout_cameras: 1,
            hold_out_every: 5,
            max_angle: std::f64::consts::FRAC_PI_4,
            camera_distance: 3.0,
            shaded: false,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_cameras + self.heldout_cameras == 0 || self.poses == 0 {
            return Err(UvaError::Argument("a scene needs at least one camera and one pose".into()));
        }
        if self.texture_size < 64 {
            return Err(UvaError::Argument(format!(
                "texture must be at least 64x64, got {}",
                self.texture_size
            )));
        }
        if self.resolution == 0 {
            return Err(UvaError::Argument("resolution must be positive".into()));
        }
        Ok(())
    }
}

/// Procedural albedo: smooth colour gradients with a soft checker on top.
pub fn default_texture(size: u32, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e47);
    let phase: [f64; 6] = std::array::from_fn(|_| rng.gen_range(0.0..TAU));
    let mut img = Image::new(size, size, 3);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64;
            let v = (y as f64 + 0.5) / size as f64;
            let checker = if ((u * 12.0).floor() + (v * 12.0).floor()) as i64 % 2 == 0 { 0.12 } else { -0.12 };
            let c: [f32; 3] = std::array::from_fn(|k| {
                let s = 0.5 + 0.3 * (TAU * (1.0 + k as f64) * u + phase[k]).sin() * (TAU * 2.0 * v + phase[k + 3]).cos();
                (s + checker).clamp(0.0, 1.0) as f32
            });
            img.set(x, y, &c);
        }
    }
    img
}

/// Bilinear lookup with texel centres at `(i + 0.5) / size`, `v` growing
/// down the rows, clamped at the borders.
pub fn sample_texture(tex: &Image, u: f64, v: f64) -> [f64; 3] {
    let fx = (u * tex.width as f64 - 0.5).clamp(0.0, tex.width as f64 - 1.0);
    let fy = (v * tex.height as f64 - 0.5).clamp(0.0, tex.height as f64 - 1.0);
    let (x0, y0) = (fx.floor() as u32, fy.floor() as u32);
    let (x1, y1) = ((x0 + 1).min(tex.width - 1), (y0 + 1).min(tex.height - 1));
    let (ax, ay) = (fx - x0 as f64, fy - y0 as f64);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let p = |x: u32, y: u32| tex.get(x, y)[c] as f64;
        let top = p(x0, y0) * (1.0 - ax) + p(x1, y0) * ax;
        let bottom = p(x0, y1) * (1.0 - ax) + p(x1, y1) * ax;
        *o = top * (1.0 - ay) + bottom * ay;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleImage {
    pub image: Image,
    pub alpha: Image,
    /// Camera-space depth, infinite where nothing is hit.
    pub depth: Vec<f64>,
}

fn moller_trumbore(o: &Vec3, d: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<(f64, f64, f64)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-9).then_some((t, u, v))
}

/// Nearest-hit rasterisation of a textured triangle mesh; albedo only,
/// scaled by `brightness`.
pub fn oracle_render(
    vertices: &[Vec3],
    faces: &[[u32; 3]],
    uvs: &[[f64; 2]],
    texture: &Image,
    camera: &Camera,
    brightness: f64,
) -> OracleImage {
    let (w, h) = (camera.width, camera.height);
    let rot = camera.extrinsic.rotation;
    let origin = -(rot.transpose() * camera.extrinsic.translation);
    let mut best_t = vec![f64::INFINITY; (w * h) as usize];
    let mut hit: Vec<Option<(usize, f64, f64)>> = vec![None; (w * h) as usize];
    let dir = |x: u32, y: u32| {
        let d = Vec3::new((x as f64 - camera.cx) / camera.fx, (y as f64 - camera.cy) / camera.fy, 1.0);
        (rot.transpose() * d).normalize()
    };
    for (f, face) in faces.iter().enumerate() {
        let p = face.map(|i| vertices[i as usize]);
        let cam = p.map(|q| rot * q + camera.extrinsic.translation);
        // pixel bounding box of the projection; full frame if it straddles the camera plane
        let (x0, x1, y0, y1) = if cam.iter().all(|q| q.z > 1e-6) {
            let px = cam.map(|q| camera.fx * q.x / q.z + camera.cx);
            let py = cam.map(|q| camera.fy * q.y / q.z + camera.cy);
            let lo = |v: [f64; 3]| v.iter().cloned().fold(f64::INFINITY, f64::min).floor() - 1.0;
            let hi = |v: [f64; 3]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
            (lo(px), hi(px), lo(py), hi(py))
        } else if cam.iter().all(|q| q.z <= 1e-6) {
            continue;
        } else {
            (0.0, w as f64 - 1.0, 0.0, h as f64 - 1.0)
        };
        if x1 < 0.0 || y1 < 0.0 || x0 > w as f64 - 1.0 || y0 > h as f64 - 1.0 {
            continue;
        }
        let xs = x0.max(0.0) as u32..=x1.min(w as f64 - 1.0) as u32;
        for y in y0.max(0.0) as u32..=y1.min(h as f64 - 1.0) as u32 {
            for x in xs.clone() {
                let i = (y * w + x) as usize;
                if let Some((t, u, v)) = moller_trumbore(&origin, &dir(x, y), &p[0], &p[1], &p[2]) {
                    if t < best_t[i] {
                        best_t[i] = t;
                        hit[i] = Some((f, u, v));
                    }
                }
            }
        }
    }
    let mut image = Image::new(w, h, 3);
    let mut alpha = Image::new(w, h, 1);
    let mut depth = vec![f64::INFINITY; (w * h) as usize];
    let forward = Vec3::new(rot[(2, 0)], rot[(2, 1)], rot[(2, 2)]);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let Some((f, u, v)) = hit[i] else { continue };
            let face = faces[f];
            let b = [1.0 - u - v, u, v];
            let (mut tu, mut tv) = (0.0, 0.0);
            for k in 0..3 {
                tu += b[k] * uvs[face[k] as usize][0];
                tv += b[k] * uvs[face[k] as usize][1];
            }
            let c = sample_texture(texture, tu, tv).map(|c| (c * brightness).clamp(0.0, 1.0) as f32);
            image.set(x, y, &c);
            alpha.set(x, y, &[1.0]);
            depth[i] = best_t[i] * dir(x, y).dot(&forward);
        }
    }
    OracleImage { image, alpha, depth }
}

/// `0.8 + 0.4·sigmoid(θ·w)` for the pose conditioning vector `θ`.
pub fn pose_brightness(condition: &[f64], w: &[f64]) -> f64 {
    let z: f64 = condition.iter().zip(w).map(|(a, b)| a * b).sum();
    0.8 + 0.4 / (1.0 + (-z).exp())
}

/// Smooth sinusoidal joint trajectories within `±max_angle` plus a slow turn
/// of the root.
pub fn pose_trajectory(bone_count: usize, count: usize, max_angle: f64, seed: u64) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x905e);
    let joints: Vec<(Vec3, f64, f64, f64)> = (0..bone_count)
        .map(|_| {
            let axis: Vec3 = Vec3::from_fn(|_, _| StandardNormal.sample(&mut rng)).normalize();
            (axis, rng.gen_range(0.5..1.0), rng.gen_range(1.0..2.0_f64).round(), rng.gen_range(0.0..TAU))
        })
        .collect();
    (0..count)
        .map(|p| {
            let s = TAU * p as f64 / count as f64;
            let mut pose = Pose::rest(bone_count);
            for (b, (axis, amp, freq, phase)) in joints.iter().enumerate() {
                let angle = if b == 0 {
                    0.25 * (s + phase).sin()
                } else {
                    max_angle * amp * (freq * s + phase).sin()
                };
                pose.joint_rotations[b] = if b == 0 { Vec3::y() * angle } else { axis * angle };
            }
            pose
        })
        .collect()
}

/// Training cameras first, then held-out cameras offset by half a step.
pub fn camera_rig(spec: &SceneSpec) -> Result<Vec<Camera>> {
    let target = Vec3::new(0.0, 0.85, 0.0) * spec.body.scale;
    let focal = spec.resolution as f64 * spec.camera_distance / 2.3;
    let step = TAU / spec.train_cameras.max(1) as f64;
    let mut cams = Vec::new();
    for i in 0..spec.train_cameras + spec.heldout_cameras {
        let az = if i < spec.train_cameras {
            i as f64 * step
        } else {
            (i - spec.train_cameras) as f64 * step + step / 2.0
        };
        let eye = target + Vec3::new(az.sin(), 0.12, az.cos()) * spec.camera_distance * spec.body.scale;
        cams.push(Camera::look_at(eye, target, Vec3::y(), focal, spec.resolution, spec.resolution)?);
    }
    Ok(cams)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub train: Vec<String>,
    pub test_novel_view: Vec<String>,
    pub test_novel_pose: Vec<String>,
}

/// Generation record stored next to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecord {
    pub spec: SceneSpec,
    /// Brightness weights of the shaded variant, empty otherwise.
    pub brightness_weights: Vec<f64>,
}

pub fn frame_id(camera: usize, pose: usize) -> String {
    format!("c{camera:02}_p{pose:03}")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| UvaError::json(path, e))?;
    std::fs::write(path, text).map_err(|e| UvaError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| UvaError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| UvaError::json(path, e))
}

/// Renders every camera/pose pair and writes the dataset; the manifest is
/// written last.
pub fn generate_dataset(spec: &SceneSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    let (skeleton, mesh) = build_default_body(&spec.body)?;
    let texture = default_texture(spec.texture_size, spec.seed);
    let poses = pose_trajectory(skeleton.bone_count(), spec.poses, spec.max_angle, spec.seed);
    let cameras = camera_rig(spec)?;
    let cond_len = 3 * (skeleton.bone_count() - 1);
    let brightness_weights: Vec<f64> = if spec.shaded {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xb41);
        (0..cond_len).map(|_| StandardNormal.sample(&mut rng)).collect()
    } else {
        Vec::new()
    };

    let frames_dir = out.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(|e| UvaError::io(&frames_dir, e))?;
    write_obj(&out.join("body.obj"), &mesh.vertices, &mesh.uvs, &mesh.faces)?;
    write_skeleton_file(&out.join("skeleton.json"), &skeleton, &mesh)?;
    let tex_path = out.join("texture.png");
    texture.save_png(&tex_path)?;
    write_json(
        &out.join("scene.json"),
        &SceneRecord {
            spec: spec.clone(),
            brightness_weights: brightness_weights.clone(),
        },
    )?;

    let mut manifest = Manifest::default();
    let held_pose = |p: usize| spec.hold_out_every > 0 && p % spec.hold_out_every == spec.hold_out_every - 1;
    for (p, pose) in poses.iter().enumerate() {
        let transforms = forward_kinematics(&skeleton, pose)?;
        let posed = pose_mesh(&mesh, &transforms)?;
        let brightness = if spec.shaded {
            pose_brightness(&pose.conditioning(&skeleton), &brightness_weights)
        } else {
            1.0
        };
        for (c, cam) in cameras.iter().enumerate() {
            let id = frame_id(c, p);
            let dir = frames_dir.join(&id);
            std::fs::create_dir_all(&dir).map_err(|e| UvaError::io(&dir, e))?;
            let shot = oracle_render(&posed, &mesh.faces, &mesh.uvs, &texture, cam, brightness);
            shot.image.save_png(&dir.join("image.png"))?;
            shot.alpha.save_png(&dir.join("alpha.png"))?;
            cam.save(&dir.join("camera.json"))?;
            write_json(&dir.join("pose.json"), pose)?;
            if c >= spec.train_cameras {
                manifest.test_novel_view.push(id);
            } else if held_pose(p) {
                manifest.test_novel_pose.push(id);
            } else {
                manifest.train.push(id);
            }
        }
    }
    for list in [&mut manifest.train, &mut manifest.test_novel_view, &mut manifest.test_novel_pose] {
        list.sort();
    }
    let tmp = out.join("manifest.json.tmp");
    write_json(&tmp, &manifest)?;
    let dst = out.join("manifest.json");
    std::fs::rename(&tmp, &dst).map_err(|e| UvaError::io(&dst, e))?;
    Ok(manifest)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: String,
    pub camera: Camera,
    pub pose: Pose,
    pub image: Image,
    pub alpha: Image,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub skeleton: Skeleton,
    pub mesh: AnchorMesh,
    pub record: Option<SceneRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    NovelView,
    NovelPose,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&root.join("manifest.json"))?;
        let obj = read_obj(&root.join("body.obj"))?;
        let sk_file = read_skeleton_file(&root.join("skeleton.json"))?;
        let skeleton = sk_file.skeleton()?;
        let mesh = sk_file.anchor_mesh(&obj)?;
        let record_path = root.join("scene.json");
        let record = if record_path.exists() {
            Some(read_json(&record_path)?)
        } else {
            None
        };
        let ds = Self {
            root: root.to_path_buf(),
            manifest,
            skeleton,
            mesh,
            record,
        };
        for id in ds.all_ids() {
            let dir = ds.root.join("frames").join(id);
            for f in ["image.png", "alpha.png", "camera.json", "pose.json"] {
                if !dir.join(f).exists() {
                    return Err(UvaError::Load(format!("frame {id} is missing {f}")));
                }
            }
        }
        Ok(ds)
    }

    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.manifest
            .train
            .iter()
            .chain(&self.manifest.test_novel_view)
            .chain(&self.manifest.test_novel_pose)
    }

    pub fn split(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.manifest.train,
            Split::NovelView => &self.manifest.test_novel_view,
            Split::NovelPose => &self.manifest.test_novel_pose,
        }
    }

    pub fn frame(&self, id: &str) -> Result<Frame> {
        let dir = self.root.join("frames").join(id);
        Ok(Frame {
            id: id.to_string(),
            camera: Camera::load(&dir.join("camera.json"))?,
            pose: read_json(&dir.join("pose.json"))?,
            image: Image::load_png(&dir.join("image.png"), 3)?,
            alpha: Image::load_png(&dir.join("alpha.png"), 1)?,
        })
    }

    pub fn frames(&self, split: Split) -> Result<Vec<Frame>> {
        self.split(split).iter().map(|id| self.frame(id)).collect()
    }

    pub fn texture(&self) -> Result<Image> {
        Image::load_png(&self.root.join("texture.png"), 3)
    }
}

/// Per-split frame counts, for reporting.
pub fn split_counts(m: &Manifest) -> BTreeMap<&'static str, usize> {
    BTreeMap::from([
        ("train", m.train.len()),
        ("test_novel_view", m.test_novel_view.len()),
        ("test_novel_pose", m.test_novel_pose.len()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Rigid;

    #[test]
    fn frontal_plane_depth_is_constant() {
        let cam = Camera::new(50.0, 50.0, 15.5, 15.5, Rigid::identity(), 32, 32).unwrap();
        let d = 2.5;
        let v = vec![
            Vec3::new(-5.0, -5.0, d),
            Vec3::new(5.0, -5.0, d),
            Vec3::new(5.0, 5.0, d),
            Vec3::new(-5.0, 5.0, d),
        ];
        let uvs = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let tex = Image::filled(64, 64, &[0.2, 0.4, 0.6]);
        let out = oracle_render(&v, &[[0, 1, 2], [0, 2, 3]], &uvs, &tex, &cam, 1.0);
        for z in &out.depth {
            assert!((z - d).abs() < 1e-6);
        }
        assert!(out.alpha.data.iter().all(|a| *a == 1.0));
    }

    #[test]
    fn empty_mesh_is_black() {
        let cam = Camera::new(50.0, 50.0, 7.5, 7.5, Rigid::identity(), 16, 16).unwrap();
        let tex = Image::filled(64, 64, &[1.0, 1.0, 1.0]);
        let out = oracle_render(&[], &[], &[], &tex, &cam, 1.0);
        assert!(out.image.data.iter().all(|v| *v == 0.0));
        assert!(out.alpha.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn trajectory_respects_amplitude() {
        let poses = pose_trajectory(8, 25, 0.7, 3);
        for p in &poses {
            for r in &p.joint_rotations[1..] {
                assert!(r.norm() <= 0.7 + 1e-12);
            }
            assert_eq!(p.root_translation, Vec3::zeros());
        }
    }
}
