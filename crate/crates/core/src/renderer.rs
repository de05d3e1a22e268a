//! Rays, bounds, stratified sampling and emission-absorption compositing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body_model::Pose;
use crate::camera::Camera;
use crate::error::{Result, UvaError};
use crate::image_io::Image;
use crate::math::{Rigid, Vec3};
use crate::model::Avatar;
use crate::motion_field::PoseContext;
use crate::nn::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSettings {
    pub samples_per_ray: usize,
    pub background: [f64; 3],
    /// Jitter samples within their bins instead of taking bin centres.
    pub stochastic: bool,
    /// Rays evaluated together; bounds memory, never changes results.
    pub batch_rays: usize,
    /// Dilation of the posed-mesh bounding box.
    pub margin: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            samples_per_ray: 64,
            background: [0.0; 3],
            stochastic: false,
            batch_rays: 256,
            margin: 0.15,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_ray < 2 {
            return Err(UvaError::Argument("samples_per_ray must be at least 2".into()));
        }
        if self.batch_rays == 0 {
            return Err(UvaError::Argument("batch_rays must be at least 1".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(UvaError::Argument("margin must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RayBatch {
    pub origins: Vec<Vec3>,
    pub directions: Vec<Vec3>,
    pub near: Vec<f64>,
    pub far: Vec<f64>,
    /// False where the ray misses the bounds; `near`/`far` are then NaN.
    pub hit: Vec<bool>,
    pub pixels: Vec<(u32, u32)>,
}

impl RayBatch {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Intersects every ray with `bounds`.
    pub fn bound(&mut self, bounds: &Aabb) {
        self.bound_in(bounds, &Rigid::identity());
    }

    /// Intersects every ray with a box given in the coordinates of `frame`.
    pub fn bound_in(&mut self, bounds: &Aabb, frame: &Rigid) {
        let to_local = frame.inverse();
        for i in 0..self.len() {
            let o = to_local.apply(&self.origins[i]);
            let d = to_local.apply_vector(&self.directions[i]);
            match compute_bounds(&o, &d, bounds) {
                Some((n, f)) => {
                    self.near[i] = n;
                    self.far[i] = f;
                    self.hit[i] = true;
                }
                None => {
                    self.near[i] = f64::NAN;
                    self.far[i] = f64::NAN;
                    self.hit[i] = false;
                }
            }
        }
    }
}

/// Pinhole rays through pixel centres, not yet bounded.
pub fn generate_rays(camera: &Camera, pixels: &[(u32, u32)]) -> Result<RayBatch> {
    let n = pixels.len();
    let mut batch = RayBatch {
        origins: Vec::with_capacity(n),
        directions: Vec::with_capacity(n),
        near: vec![f64::NAN; n],
        far: vec![f64::NAN; n],
        hit: vec![false; n],
        pixels: pixels.to_vec(),
    };
    let o = camera.center();
    for &(x, y) in pixels {
        if x >= camera.width || y >= camera.height {
            return Err(UvaError::Argument(format!(
                "pixel ({x}, {y}) outside a {}x{} image",
                camera.width, camera.height
            )));
        }
        batch.origins.push(o);
        batch.directions.push(camera.direction(x as f64, y as f64));
    }
    Ok(batch)
}

pub fn all_pixels(width: u32, height: u32) -> Vec<(u32, u32)> {
    (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub lo: Vec3,
    pub hi: Vec3,
}

impl Aabb {
    pub fn around(points: &[Vec3], margin: f64) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let m = Vec3::repeat(margin);
        Self { lo: lo - m, hi: hi + m }
    }
}

/// Slab intersection of a ray with a box, clipped to `t ≥ 0`. An empty or
/// single-point interval is a miss.
pub fn compute_bounds(origin: &Vec3, direction: &Vec3, bounds: &Aabb) -> Option<(f64, f64)> {
    let mut near = 0.0f64;
    let mut far = f64::INFINITY;
    for a in 0..3 {
        let (o, d) = (origin[a], direction[a]);
        if d == 0.0 {
            if o < bounds.lo[a] || o > bounds.hi[a] {
                return None;
            }
            continue;
        }
        let t0 = (bounds.lo[a] - o) / d;
        let t1 = (bounds.hi[a] - o) / d;
        near = near.max(t0.min(t1));
        far = far.min(t0.max(t1));
    }
    (near < far).then_some((near, far))
}

/// `n` equal bins over `[near, far]`: centres, or one uniform draw per bin
/// when `rng` is given. Widths are gaps between samples, the last running to
/// `far`.
pub fn sample_points(near: f64, far: f64, n: usize, rng: Option<&mut ChaCha8Rng>) -> (Vec<f64>, Vec<f64>) {
    let bin = (far - near) / n as f64;
    let t: Vec<f64> = match rng {
        None => (0..n).map(|i| near + (i as f64 + 0.5) * bin).collect(),
        Some(rng) => (0..n).map(|i| near + (i as f64 + rng.gen::<f64>()) * bin).collect(),
    };
    let mut delta: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    delta.push(far - t[n - 1]);
    (t, delta)
}

/// Per-pixel generator for stochastic sampling, independent of batching.
pub fn pixel_rng(seed: u64, x: u32, y: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((y as u64) << 32) | x as u64);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    pub alpha: f64,
    /// `T_i α_i` per sample.
    pub weights: Vec<f64>,
}

pub fn composite(sigma: &[f64], color: &[[f64; 3]], delta: &[f64], background: [f64; 3]) -> Composite {
    let mut trans = 1.0;
    let mut out = [0.0; 3];
    let mut weights = Vec::with_capacity(sigma.len());
    for i in 0..sigma.len() {
        let a = 1.0 - (-sigma[i] * delta[i]).exp();
        let w = trans * a;
        for c in 0..3 {
            out[c] += w * color[i][c];
        }
        weights.push(w);
        trans *= 1.0 - a;
    }
    let alpha = (1.0 - trans).clamp(0.0, 1.0);
    for c in 0..3 {
        out[c] += trans * background[c];
    }
    Composite {
        color: out,
        alpha,
        weights,
    }
}

/// Gradients of [`composite`]'s colour with respect to each `σ_i` and `c_i`
/// given `∂L/∂color`.
pub fn composite_backward(
    sigma: &[f64],
    color: &[[f64; 3]],
    delta: &[f64],
    background: [f64; 3],
    d_pixel: [f64; 3],
) -> (Vec<f64>, Vec<[f64; 3]>) {
    let n = sigma.len();
    let mut trans = Vec::with_capacity(n + 1);
    let mut alpha = Vec::with_capacity(n);
    let mut t = 1.0;
    for i in 0..n {
        trans.push(t);
        let a = 1.0 - (-sigma[i] * delta[i]).exp();
        alpha.push(a);
        t *= 1.0 - a;
    }
    trans.push(t);
    let dot = |c: &[f64; 3]| c[0] * d_pixel[0] + c[1] * d_pixel[1] + c[2] * d_pixel[2];
    // suffix[k] = Σ_{i>k} T_i α_i (c_i · g) + T_{n} (bg · g)
    let mut d_sigma = vec![0.0; n];
    let mut d_color = vec![[0.0; 3]; n];
    let mut suffix = trans[n] * dot(&background);
    for k in (0..n).rev() {
        let w = trans[k] * alpha[k];
        d_color[k] = d_pixel.map(|g| w * g);
        d_sigma[k] = delta[k] * (trans[k + 1] * dot(&color[k]) - suffix);
        suffix += w * dot(&color[k]);
    }
    (d_sigma, d_color)
}

/// Ray parameter where the accumulated weight first reaches one half, or
/// `None` for rays that stay mostly transparent.
pub fn median_depth(t: &[f64], weights: &[f64]) -> Option<f64> {
    let mut acc = 0.0;
    for (ti, w) in t.iter().zip(weights) {
        acc += w;
        if acc >= 0.5 {
            return Some(*ti);
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayColors {
    pub color: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    pub depth: Vec<Option<f64>>,
}

fn ray_samples(
    rays: &RayBatch,
    i: usize,
    settings: &RenderSettings,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let (x, y) = rays.pixels[i];
    let mut rng = settings.stochastic.then(|| pixel_rng(seed, x, y));
    sample_points(rays.near[i], rays.far[i], settings.samples_per_ray, rng.as_mut())
}

/// Samples for all hit rays of `ids`, flattened, plus each ray's `(t, δ)`.
pub(crate) fn gather_samples(
    rays: &RayBatch,
    ids: &[usize],
    settings: &RenderSettings,
    seed: u64,
) -> (Vec<Vec3>, Vec<(Vec<f64>, Vec<f64>)>) {
    let mut points = Vec::new();
    let mut per_ray = Vec::with_capacity(ids.len());
    for &i in ids {
        let (t, d) = ray_samples(rays, i, settings, seed);
        points.extend(t.iter().map(|ti| rays.origins[i] + rays.directions[i] * *ti));
        per_ray.push((t, d));
    }
    (points, per_ray)
}

/// Renders bounded rays in chunks of `settings.batch_rays`.
pub fn render_rays<T: Real>(
    avatar: &Avatar<T>,
    ctx: &PoseContext,
    rays: &RayBatch,
    settings: &RenderSettings,
    seed: u64,
) -> Result<RayColors> {
    settings.validate()?;
    let n = rays.len();
    let mut out = RayColors {
        color: vec![settings.background; n],
        alpha: vec![0.0; n],
        depth: vec![None; n],
    };
    let hits: Vec<usize> = (0..n).filter(|&i| rays.hit[i]).collect();
    let s = settings.samples_per_ray;
    for chunk in hits.chunks(settings.batch_rays) {
        let (points, per_ray) = gather_samples(rays, chunk, settings, seed);
        let radiance = match avatar.evaluate(ctx, &points) {
            Ok(r) => r,
            Err(e) => return Err(locate_failure(avatar, ctx, rays, chunk, settings, seed, e)),
        };
        for (q, &i) in chunk.iter().enumerate() {
            let sigma: Vec<f64> = radiance.sigma[q * s..(q + 1) * s].iter().map(|v| v.f64()).collect();
            let color: Vec<[f64; 3]> = radiance.color[q * s..(q + 1) * s]
                .iter()
                .map(|c| c.map(|v| v.f64()))
                .collect();
            let (t, d) = &per_ray[q];
            let comp = composite(&sigma, &color, d, settings.background);
            out.color[i] = comp.color.map(|v| v.clamp(0.0, 1.0));
            out.alpha[i] = comp.alpha;
            out.depth[i] = median_depth(t, &comp.weights);
        }
    }
    Ok(out)
}

fn locate_failure<T: Real>(
    avatar: &Avatar<T>,
    ctx: &PoseContext,
    rays: &RayBatch,
    chunk: &[usize],
    settings: &RenderSettings,
    seed: u64,
    fallback: UvaError,
) -> UvaError {
    for &i in chunk {
        let (points, _) = gather_samples(rays, &[i], settings, seed);
        if let Err(e) = avatar.evaluate(ctx, &points) {
            let (x, y) = rays.pixels[i];
            return UvaError::Render {
                x,
                y,
                source: Box::new(e),
            };
        }
    }
    fallback
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub image: Image,
    pub alpha: Image,
    /// Median ray depth per pixel, row-major.
    pub depth: Vec<Option<f64>>,
}

/// Rays bounded by the box around the posed mesh, taken in the root bone's
/// frame so that moving the whole scene leaves every interval unchanged. With
/// an unrotated root this is the world-axis box.
pub fn bounded_rays(camera: &Camera, ctx: &PoseContext, pixels: &[(u32, u32)], margin: f64) -> Result<RayBatch> {
    let mut rays = generate_rays(camera, pixels)?;
    let to_local = ctx.root_frame.inverse();
    let local: Vec<Vec3> = ctx.posed_vertices.iter().map(|p| to_local.apply(p)).collect();
    rays.bound_in(&Aabb::around(&local, margin), &ctx.root_frame);
    Ok(rays)
}

pub fn render_image<T: Real>(
    avatar: &Avatar<T>,
    camera: &Camera,
    pose: &Pose,
    settings: &RenderSettings,
    seed: u64,
) -> Result<RenderOutput> {
    let ctx = avatar.pose_context(pose)?;
    render_image_in(avatar, &ctx, camera, settings, seed)
}

pub fn render_image_in<T: Real>(
    avatar: &Avatar<T>,
    ctx: &PoseContext,
    camera: &Camera,
    settings: &RenderSettings,
    seed: u64,
) -> Result<RenderOutput> {
    let pixels = all_pixels(camera.width, camera.height);
    let rays = bounded_rays(camera, ctx, &pixels, settings.margin)?;
    let colors = render_rays(avatar, ctx, &rays, settings, seed)?;
    let mut image = Image::new(camera.width, camera.height, 3);
    let mut alpha = Image::new(camera.width, camera.height, 1);
    for (i, &(x, y)) in pixels.iter().enumerate() {
        image.set(x, y, &colors.color[i].map(|v| v as f32));
        alpha.set(x, y, &[colors.alpha[i] as f32]);
    }
    Ok(RenderOutput {
        image,
        alpha,
        depth: colors.depth,
    })
}
