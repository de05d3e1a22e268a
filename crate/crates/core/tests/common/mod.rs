//! Helpers shared by the integration suites and the acceptance run.
#![allow(dead_code)]

use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use uva::body_model::{forward_kinematics, pose_mesh, AnchorMesh, Pose, Skeleton};
use uva::camera::Camera;
use uva::canonical_field::FieldConfig;
use uva::fixtures::{compact_config, shell_avatar, small_body, ShellParams};
use uva::image_io::Image;
use uva::math::{Rigid, Vec3};
use uva::mesh_geometry::{knn_inverse_distance, SurfaceIndex, VertexIndex};
use uva::model::{Avatar, ModelConfig};
use uva::motion_field::{diffuse_weights, inverse_lbs, MotionConfig, PoseContext};
use uva::renderer::{composite, sample_points, RenderSettings};
use uva::synth_data::{camera_rig, SceneSpec};
use uva::trainer::{batch_loss_and_gradient, RayTarget, TrainView};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian3(rng: &mut impl Rng, std: f64) -> Vec3 {
    use rand_distr::{Distribution, StandardNormal};
    let mut g = || -> f64 { StandardNormal.sample(&mut *rng) };
    Vec3::new(g(), g(), g()) * std
}

pub fn random_pose(bones: usize, max_angle: f64, rng: &mut impl Rng) -> Pose {
    let mut p = Pose::rest(bones);
    for r in &mut p.joint_rotations {
        *r = Vec3::new(
            rng.gen_range(-max_angle..max_angle),
            rng.gen_range(-max_angle..max_angle),
            rng.gen_range(-max_angle..max_angle),
        );
    }
    p.root_translation = Vec3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    p
}

pub fn random_rigid(rng: &mut impl Rng) -> Rigid {
    let aa = Vec3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
    Rigid::new(
        uva::math::axis_angle_matrix(&aa),
        Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
    )
}

/// The pose whose forward kinematics equal `motion` applied after those of
/// `pose`: only the root rotation and translation change.
pub fn moved_pose(skeleton: &Skeleton, pose: &Pose, motion: &Rigid) -> Pose {
    let root = skeleton.root();
    let j = skeleton.joints[root];
    let r_root = uva::math::axis_angle_matrix(&pose.joint_rotations[root]);
    let r_new = Rotation3::from_matrix_unchecked(motion.rotation * r_root);
    let mut out = pose.clone();
    out.joint_rotations[root] = r_new.scaled_axis();
    out.root_translation = motion.rotation * (j + pose.root_translation) + motion.translation - j;
    out
}

/// Points scattered around the posed surface.
pub fn near_surface_points(ctx: &PoseContext, n: usize, spread: f64, rng: &mut impl Rng) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            let v = ctx.posed_vertices[rng.gen_range(0..ctx.posed_vertices.len())];
            v + gaussian3(rng, spread)
        })
        .collect()
}

pub fn shell_f64(budget: usize, seed: u64) -> Avatar<f64> {
    let (sk, mesh) = small_body(budget).unwrap();
    shell_avatar(sk, mesh, compact_config(), &ShellParams::default(), seed).unwrap()
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        field: FieldConfig {
            code_dim: 4,
            pe_frequencies: 3,
            density_width: 12,
            density_layers: 3,
            color_width: 12,
            color_layers: 4,
            color_skip: 2,
            feature_dim: 4,
            shading_width: 8,
            shading_layers: 2,
            code_init_std: 0.5,
        },
        motion: MotionConfig {
            delta_width: 12,
            delta_layers: 3,
            ..MotionConfig::default()
        },
        ..ModelConfig::default()
    }
}

/// A randomly initialised double-precision avatar whose zero-initialised
/// output layers are replaced by small random values, so every component
/// contributes to the output.
pub fn random_avatar(config: ModelConfig, budget: usize, seed: u64) -> Avatar<f64> {
    let (sk, mesh) = small_body(budget).unwrap();
    let mut r = rng(seed);
    let mut a: Avatar<f64> = Avatar::new(sk, mesh, config, &mut r).unwrap();
    let last_layer = |m: &uva::nn::Mlp<f64>| {
        let s = m.spec();
        let inp = if s.hidden_layers == 0 { s.input } else { s.hidden };
        m.param_count() - (inp * s.output + s.output)
    };
    let start = last_layer(&a.params.delta);
    for p in &mut a.params.delta.params[start..] {
        *p = r.gen_range(-0.01..0.01);
    }
    let start = last_layer(&a.params.nets.shading);
    for p in &mut a.params.nets.shading.params[start..] {
        *p = r.gen_range(-0.5..0.5);
    }
    a.iteration = 1;
    a
}

// ---- invariant measurements ----

/// Largest `|Σ w - 1|` of the diffused skinning weights.
pub fn weight_partition_error(points_per_pose: usize, poses: usize, seed: u64) -> f64 {
    let (sk, mesh) = small_body(600).unwrap();
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..poses {
        let pose = random_pose(sk.bone_count(), 0.8, &mut r);
        let ctx = PoseContext::new(&sk, &mesh, &pose).unwrap();
        for _ in 0..points_per_pose {
            // a mix of near-surface and far points
            let spread = if r.gen_bool(0.8) { 0.05 } else { 0.5 };
            let x = near_surface_points(&ctx, 1, spread, &mut r)[0];
            let w = diffuse_weights(&x, &ctx.posed_index, &mesh.lbs_weights, mesh.bone_count, 4, 0.1);
            let s: f64 = w.bone_weights.iter().sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    worst
}

/// Rest pose: bone transforms, posed vertices and the backward warp of
/// near-body points are all identities.
pub fn rest_pose_identity_error() -> f64 {
    let (sk, mesh) = small_body(600).unwrap();
    let rest = Pose::rest(sk.bone_count());
    let tr = forward_kinematics(&sk, &rest).unwrap();
    let mut worst = 0.0f64;
    for t in &tr.0 {
        worst = worst.max((t.rotation - uva::math::Mat3::identity()).abs().max());
        worst = worst.max(t.translation.abs().max());
    }
    let posed = pose_mesh(&mesh, &tr).unwrap();
    for (a, b) in posed.iter().zip(&mesh.vertices) {
        worst = worst.max((a - b).abs().max());
    }
    let ctx = PoseContext::new(&sk, &mesh, &rest).unwrap();
    let mut r = rng(7);
    for x in near_surface_points(&ctx, 2000, 0.05, &mut r) {
        let w = diffuse_weights(&x, &ctx.posed_index, &mesh.lbs_weights, mesh.bone_count, 4, 0.1);
        let back = inverse_lbs(&x, &w, &ctx.transforms).unwrap();
        worst = worst.max((back - x).abs().max());
    }
    worst
}

/// A flat, regularly triangulated square in the `z = 0` plane whose UVs are
/// its `(x, y)` coordinates.
pub fn flat_patch(n: usize) -> SurfaceIndex {
    let mut v = Vec::new();
    let mut uv = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            v.push(Vec3::new(x, y, 0.0));
            uv.push([x, y]);
        }
    }
    let mut f = Vec::new();
    let id = |i: usize, j: usize| (j * (n + 1) + i) as u32;
    for j in 0..n {
        for i in 0..n {
            f.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            f.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    SurfaceIndex::new(&v, &f, &uv)
}

/// Largest round-trip error of `(u, v, d)` over the interior of a flat
/// patch, and the largest violation of `h(x, -d) = -h(x, d)`.
pub fn flat_patch_errors(queries: usize, seed: u64) -> (f64, f64) {
    let patch = flat_patch(8);
    let mut r = rng(seed);
    let (mut round, mut sym) = (0.0f64, 0.0f64);
    for _ in 0..queries {
        let (x, y) = (r.gen_range(0.05..0.95), r.gen_range(0.05..0.95));
        let d = r.gen_range(0.001..0.04);
        let up = patch.signed_height(&Vec3::new(x, y, d));
        let down = patch.signed_height(&Vec3::new(x, y, -d));
        round = round.max((up.u - x).abs()).max((up.v - y).abs()).max((up.d - d).abs());
        sym = sym.max((up.d + down.d).abs()).max((up.u - down.u).abs()).max((up.v - down.v).abs());
    }
    (round, sym)
}

/// Queries where the kd-tree's K nearest indices differ from a sort.
pub fn knn_mismatches(queries: usize, k: usize, seed: u64) -> usize {
    let (_, mesh) = small_body(600).unwrap();
    let index = VertexIndex::new(&mesh.vertices);
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..queries {
        let q = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(0.0..1.8), r.gen_range(-0.5..0.5));
        let got: Vec<usize> = index.knn(&q, k).into_iter().map(|(i, _)| i).collect();
        let mut all: Vec<(f64, usize)> = mesh.vertices.iter().enumerate().map(|(i, v)| ((v - q).norm_squared(), i)).collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<usize> = all[..k].iter().map(|(_, i)| *i).collect();
        if got != want {
            bad += 1;
        }
    }
    bad
}

pub struct EquivarianceErrors {
    pub signed_height: f64,
    pub knn_weights: f64,
    pub field: f64,
}

/// Moves mesh, queries and pose by random rigid motions and measures the
/// largest change of signed height, KNN weights and of `(σ, c)`.
pub fn equivariance_errors(trials: usize, seed: u64) -> EquivarianceErrors {
    let mut r = rng(seed);
    let avatar = random_avatar(tiny_config(), 300, seed);
    let mesh: &AnchorMesh = avatar.mesh();
    let surface = SurfaceIndex::from_mesh(mesh);
    let index = VertexIndex::new(&mesh.vertices);
    let mut out = EquivarianceErrors {
        signed_height: 0.0,
        knn_weights: 0.0,
        field: 0.0,
    };
    for _ in 0..trials {
        let m = random_rigid(&mut r);
        let moved: Vec<Vec3> = mesh.vertices.iter().map(|p| m.apply(p)).collect();
        let moved_surface = SurfaceIndex::new(&moved, &mesh.faces, &mesh.uvs);
        let moved_index = VertexIndex::new(&moved);
        for _ in 0..20 {
            let v = mesh.vertices[r.gen_range(0..mesh.vertex_count())];
            let q = v + gaussian3(&mut r, 0.04);
            let a = surface.signed_height(&q);
            let b = moved_surface.signed_height(&m.apply(&q));
            out.signed_height = out
                .signed_height
                .max((a.u - b.u).abs())
                .max((a.v - b.v).abs())
                .max((a.d - b.d).abs());
            let wa = knn_inverse_distance(&q, &index, 4);
            let wb = knn_inverse_distance(&m.apply(&q), &moved_index, 4);
            for (i, w) in wa.indices.iter().zip(&wa.weights) {
                let other = wb.indices.iter().position(|j| j == i).map_or(0.0, |p| wb.weights[p]);
                out.knn_weights = out.knn_weights.max((w - other).abs());
            }
        }

        let pose = random_pose(avatar.skeleton().bone_count(), 0.5, &mut r);
        let moved_pose = moved_pose(avatar.skeleton(), &pose, &m);
        let ctx = avatar.pose_context(&pose).unwrap();
        let ctx2 = avatar.pose_context(&moved_pose).unwrap();
        let pts = near_surface_points(&ctx, 50, 0.04, &mut r);
        let moved_pts: Vec<Vec3> = pts.iter().map(|p| m.apply(p)).collect();
        let a = avatar.evaluate(&ctx, &pts).unwrap();
        let b = avatar.evaluate(&ctx2, &moved_pts).unwrap();
        for i in 0..pts.len() {
            let scale = 1.0f64.max(a.sigma[i].abs());
            out.field = out.field.max((a.sigma[i] - b.sigma[i]).abs() / scale);
            for c in 0..3 {
                out.field = out.field.max((a.color[i][c] - b.color[i][c]).abs());
            }
        }
    }
    out
}

/// Constant density over the sampled interval: composited transmittance
/// against `exp(-σ L)` with `L` the summed interval widths.
pub fn transmittance_error(samples: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let near = r.gen_range(0.0..2.0);
        let far = near + r.gen_range(0.1..3.0);
        let sigma = r.gen_range(0.0..5.0);
        let mut sr = rng(r.gen());
        let (_, delta) = sample_points(near, far, samples, r.gen_bool(0.5).then_some(&mut sr));
        let len: f64 = delta.iter().sum();
        let c = composite(&vec![sigma; samples], &vec![[1.0, 0.5, 0.25]; samples], &delta, [0.0; 3]);
        worst = worst.max(((1.0 - c.alpha) - (-sigma * len).exp()).abs());
    }
    worst
}

/// Splitting one interval of a random ray into two halves of equal density
/// and colour.
pub fn split_invariance_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = r.gen_range(1..20);
        let sigma: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..20.0)).collect();
        let color: Vec<[f64; 3]> = (0..n).map(|_| [r.gen(), r.gen(), r.gen()]).collect();
        let delta: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..0.2)).collect();
        let bg = [r.gen(), r.gen(), r.gen()];
        let k = r.gen_range(0..n);
        let (mut s2, mut c2, mut d2) = (sigma.clone(), color.clone(), delta.clone());
        s2.insert(k, sigma[k]);
        c2.insert(k, color[k]);
        d2[k] = delta[k] / 2.0;
        d2.insert(k, delta[k] / 2.0);
        let a = composite(&sigma, &color, &delta, bg);
        let b = composite(&s2, &c2, &d2, bg);
        worst = worst.max((a.alpha - b.alpha).abs());
        for c in 0..3 {
            worst = worst.max((a.color[c] - b.color[c]).abs());
        }
    }
    worst
}

// ---- gradient probing ----

#[derive(Clone, Debug)]
pub struct GradientReport {
    pub probes: usize,
    pub resampled: usize,
    pub max_rel: f64,
    pub worst: String,
}

impl GradientReport {
    fn new() -> Self {
        Self {
            probes: 0,
            resampled: 0,
            max_rel: 0.0,
            worst: String::new(),
        }
    }

    fn merge(&mut self, o: GradientReport) {
        self.probes += o.probes;
        self.resampled += o.resampled;
        if o.max_rel > self.max_rel {
            self.max_rel = o.max_rel;
            self.worst = o.worst;
        }
    }
}

const GRAD_FLOOR: f64 = 1e-6;

/// Compares `analytic[b][i]` with central differences of `f` for random
/// parameters of the listed blocks. A probe whose difference quotient
/// changes between step `h` and `h/2` sits near a kink (ReLU, clamp, KNN
/// neighbour swap) and is redrawn, as is one with negligible gradient.
pub fn probe_blocks(
    label: &str,
    avatar: &Avatar<f64>,
    analytic: &uva::model::ModelParams<f64>,
    blocks: &[usize],
    probes: usize,
    rng: &mut impl Rng,
    f: &dyn Fn(&Avatar<f64>) -> f64,
) -> GradientReport {
    let g = analytic.blocks();
    let mut rep = GradientReport::new();
    let eval = |b: usize, i: usize, delta: f64| {
        let mut a = avatar.clone();
        a.params.blocks_mut()[b][i] += delta;
        f(&a)
    };
    let mut done = 0;
    let mut attempts = 0;
    while done < probes {
        attempts += 1;
        assert!(attempts < probes * 50, "{label}: could not find enough smooth probes");
        let b = blocks[rng.gen_range(0..blocks.len())];
        let len = g[b].len();
        if len == 0 {
            continue;
        }
        let i = rng.gen_range(0..len);
        let p = avatar.params.blocks()[b][i];
        let h = 1e-5 * p.abs().max(1.0);
        let d1 = (eval(b, i, h) - eval(b, i, -h)) / (2.0 * h);
        let d2 = (eval(b, i, h / 2.0) - eval(b, i, -h / 2.0)) / h;
        let a = g[b][i];
        let scale = a.abs().max(d1.abs());
        if scale < GRAD_FLOOR || (d1 - d2).abs() > 1e-3 * scale.max(1e-4) {
            rep.resampled += 1;
            continue;
        }
        let rel = (a - d1).abs() / scale.max(GRAD_FLOOR);
        if rel > rep.max_rel {
            rep.max_rel = rel;
            rep.worst = format!(
                "{label}: {}[{i}] analytic {a:.9e} numeric {d1:.9e}",
                uva::model::PARAM_BLOCKS[b]
            );
        }
        rep.probes += 1;
        done += 1;
    }
    rep
}

fn weighted_outputs(avatar: &Avatar<f64>, ctx: &PoseContext, pts: &[Vec3], ws: &[f64], wc: &[[f64; 3]]) -> f64 {
    let r = avatar.evaluate(ctx, pts).unwrap();
    (0..pts.len())
        .map(|i| ws[i] * r.sigma[i] + (0..3).map(|c| wc[i][c] * r.color[i][c]).sum::<f64>())
        .sum()
}

fn analytic_outputs(avatar: &Avatar<f64>, ctx: &PoseContext, pts: &[Vec3], ws: &[f64], wc: &[[f64; 3]]) -> uva::model::ModelParams<f64> {
    let tape = avatar.forward(ctx, pts).unwrap();
    let mut grads = avatar.params.zeros_like();
    avatar.backward(&tape, ws, wc, &mut grads).unwrap();
    grads
}

/// σ, c₀, s, Δ and full pixel-loss gradients against finite differences,
/// `per_kind` probes each.
pub fn gradient_suite(per_kind: usize, seed: u64) -> GradientReport {
    let mut r = rng(seed);
    let mut total = GradientReport::new();

    // point-wise outputs in a random pose
    let run = |label: &str, config: ModelConfig, blocks: &[usize], use_sigma: bool, use_color: bool, r: &mut ChaCha8Rng| {
        let avatar = random_avatar(config, 300, r.gen());
        let pose = random_pose(avatar.skeleton().bone_count(), 0.4, r);
        let ctx = avatar.pose_context(&pose).unwrap();
        let pts = near_surface_points(&ctx, 12, 0.03, r);
        let ws: Vec<f64> = (0..pts.len()).map(|_| if use_sigma { r.gen_range(-1.0..1.0) } else { 0.0 }).collect();
        let wc: Vec<[f64; 3]> = (0..pts.len())
            .map(|_| if use_color { [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)] } else { [0.0; 3] })
            .collect();
        let g = analytic_outputs(&avatar, &ctx, &pts, &ws, &wc);
        probe_blocks(label, &avatar, &g, blocks, per_kind, r, &|a| weighted_outputs(a, &ctx, &pts, &ws, &wc))
    };

    // density: F_σ and geometry codes
    total.merge(run("sigma", tiny_config(), &[1, 4], true, false, &mut r));
    // base colour alone: shading off makes c = clamp(c₀)
    let mut no_shading = tiny_config();
    no_shading.flags.disable_shading = true;
    total.merge(run("base colour", no_shading, &[2, 5], false, true, &mut r));
    // shading factor
    total.merge(run("shading", tiny_config(), &[3], false, true, &mut r));
    // displacement network through both outputs
    total.merge(run("displacement", tiny_config(), &[0], true, true, &mut r));

    // full pixel loss on a small view
    let avatar = random_avatar(tiny_config(), 300, r.gen());
    let spec = SceneSpec {
        resolution: 24,
        ..SceneSpec::default()
    };
    let cam: Camera = camera_rig(&spec).unwrap().remove(0);
    let pose = random_pose(avatar.skeleton().bone_count(), 0.3, &mut r);
    let mut target = Image::new(cam.width, cam.height, 3);
    for v in &mut target.data {
        *v = r.gen();
    }
    let alpha = Image::filled(cam.width, cam.height, &[1.0]);
    let view = TrainView::new(&avatar, "probe".into(), cam.clone(), &pose, target, &alpha, 0).unwrap();
    let views = [view];
    // rays through the body's image region
    let batch: Vec<RayTarget> = (0..16)
        .map(|_| {
            let p = (r.gen_range(9..15), r.gen_range(4..20));
            let c = views[0].image.get(p.0, p.1);
            RayTarget {
                view: 0,
                pixel: p,
                color: [c[0] as f64, c[1] as f64, c[2] as f64],
            }
        })
        .collect();
    let settings = RenderSettings {
        samples_per_ray: 24,
        ..RenderSettings::default()
    };
    let loss = |a: &Avatar<f64>| batch_loss_and_gradient(a, &views, &batch, &settings, false, 64, 0).unwrap();
    let (_, g) = loss(&avatar);
    total.merge(probe_blocks("pixel loss", &avatar, &g, &[0, 1, 2, 3, 4, 5], per_kind, &mut r, &|a| loss(a).0));
    total
}

// ---- editing helpers ----

pub fn view_camera(resolution: u32, index: usize) -> Camera {
    let spec = SceneSpec {
        resolution,
        ..SceneSpec::default()
    };
    camera_rig(&spec).unwrap().remove(index)
}

pub fn edit_settings() -> RenderSettings {
    RenderSettings {
        samples_per_ray: 48,
        ..RenderSettings::default()
    }
}

pub fn render(avatar: &Avatar<f64>, cam: &Camera, pose: &Pose) -> uva::renderer::RenderOutput {
    uva::renderer::render_image(avatar, cam, pose, &edit_settings(), 0).unwrap()
}

/// Pixels whose value changes when the codes of `vertices` are perturbed;
/// outside them no edit of those codes can show.
pub fn influence_region(avatar: &Avatar<f64>, vertices: &[usize], cam: &Camera, pose: &Pose) -> Vec<bool> {
    let base = render(avatar, cam, pose);
    let mut region = vec![false; (cam.width * cam.height) as usize];
    for shift in [3.0, -2.0] {
        let mut a = avatar.clone();
        let dim = a.params.codes.dim;
        for &v in vertices {
            for c in 0..dim {
                a.params.codes.geo[v * dim + c] += shift;
                a.params.codes.rgb[v * dim + c] += shift;
            }
        }
        let moved = render(&a, cam, pose);
        for (i, r) in region.iter_mut().enumerate() {
            let (p, q) = (&base.image.data[i * 3..i * 3 + 3], &moved.image.data[i * 3..i * 3 + 3]);
            *r |= p != q || base.alpha.data[i] != moved.alpha.data[i];
        }
    }
    region
}

/// Selected vertices plus their one-ring.
pub fn with_one_ring(mesh: &AnchorMesh, indices: &[usize]) -> Vec<usize> {
    let mut inside = vec![false; mesh.vertex_count()];
    for &i in indices {
        inside[i] = true;
    }
    let mut out = inside.clone();
    for f in &mesh.faces {
        if f.iter().any(|&v| inside[v as usize]) {
            for &v in f {
                out[v as usize] = true;
            }
        }
    }
    (0..out.len()).filter(|&i| out[i]).collect()
}

/// Count of pixels outside `region` where two images differ at all.
pub fn changes_outside(a: &Image, b: &Image, region: &[bool]) -> usize {
    let ch = a.channels;
    (0..region.len())
        .filter(|&i| !region[i] && a.data[i * ch..(i + 1) * ch] != b.data[i * ch..(i + 1) * ch])
        .count()
}

/// A rectangle of pixels, intersected with the opaque part of `alpha`.
pub fn body_rect(alpha: &Image, x0: u32, y0: u32, x1: u32, y1: u32) -> Vec<bool> {
    let mut m = vec![false; (alpha.width * alpha.height) as usize];
    for y in y0..y1 {
        for x in x0..x1 {
            m[(y * alpha.width + x) as usize] = alpha.get(x, y)[0] > 0.5;
        }
    }
    m
}

pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(p, q)| **p && **q).count();
    let union = a.iter().zip(b).filter(|(p, q)| **p || **q).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Scales the left arm's radius about its bone axis and compares the
/// rendered silhouette with a ray-cast of the edited mesh.
pub fn arm_scale_iou(resolution: u32, factor: f64) -> f64 {
    use uva::editor::{apply_geometry_edit, bone_vertices, scale_about_axis, GeometryEdit};
    let avatar = shell_f64(2000, 0);
    let sk = avatar.skeleton();
    let mesh = avatar.mesh();
    let arm = sk.names.iter().position(|n| n == "left_arm").unwrap();
    // the arm lies along +x from its joint
    let edited = scale_about_axis(&mesh.vertices, &bone_vertices(mesh, arm), &sk.joints[arm], &Vec3::x(), factor);
    let out = apply_geometry_edit(&avatar, &GeometryEdit { vertices: edited.clone() }).unwrap();
    let pose = Pose::rest(sk.bone_count());
    let cam = view_camera(resolution, 0);
    let r = render(&out, &cam, &pose);
    let texture = Image::filled(4, 4, &[1.0, 1.0, 1.0]);
    let oracle = uva::synth_data::oracle_render(&edited, &mesh.faces, &mesh.uvs, &texture, &cam, 1.0);
    let a: Vec<bool> = r.alpha.data.iter().map(|v| *v > 0.5).collect();
    let b: Vec<bool> = oracle.alpha.data.iter().map(|v| *v > 0.5).collect();
    iou(&a, &b)
}

pub fn masked_mean(img: &Image, mask: &[bool]) -> [f64; 3] {
    let mut mean = [0.0; 3];
    let n = mask.iter().filter(|m| **m).count().max(1) as f64;
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        for (c, v) in mean.iter_mut().enumerate() {
            *v += img.data[i * img.channels + c] as f64 / n;
        }
    }
    mean
}
