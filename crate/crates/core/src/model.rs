//! The avatar: skeleton, canonical anchor mesh, network parameters and code
//! tables, with batched evaluation of density and colour at observation-space
//! samples and the matching backward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::body_model::{AnchorMesh, Pose, Skeleton};
use crate::canonical_field::{
    positional_encoding, positional_encoding_backward, AblationFlags, FieldConfig, FieldNetworks, StructuredCodes,
};
use crate::error::{Result, UvaError};
use crate::math::{Mat3, Vec3};
use crate::mesh_geometry::{knn_inverse_distance, KnnWeights, SignedHeight, SurfaceIndex, VertexIndex};
use crate::motion_field::{clamp_displacement, diffuse_weights, displacement_input, inverse_lbs, MotionConfig, PoseContext};
use crate::nn::{sigmoid, softplus, Mlp, Real, Tape};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub field: FieldConfig,
    pub motion: MotionConfig,
    pub flags: AblationFlags,
}

/// Every trainable quantity of an avatar.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub delta: Mlp<T>,
    pub nets: FieldNetworks<T>,
    pub codes: StructuredCodes<T>,
}

/// Names of the parameter blocks, in [`ModelParams::blocks`] order.
pub const PARAM_BLOCKS: [&str; 6] = ["delta", "density", "color", "shading", "codes.geo", "codes.rgb"];

impl<T: Real> ModelParams<T> {
    pub fn new(config: &ModelConfig, vertex_count: usize, condition_dim: usize, rng: &mut impl Rng) -> Self {
        let delta = Mlp::new(
            config.motion.delta_spec(config.field.pe_frequencies, condition_dim),
            rng,
        );
        let nets = FieldNetworks::new(&config.field, condition_dim, rng);
        let codes = StructuredCodes::random(vertex_count, config.field.code_dim, config.field.code_init_std, rng);
        Self { delta, nets, codes }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            delta: self.delta.zeros_like(),
            nets: FieldNetworks {
                density: self.nets.density.zeros_like(),
                color: self.nets.color.zeros_like(),
                shading: self.nets.shading.zeros_like(),
            },
            codes: StructuredCodes::zeros(self.codes.vertex_count(), self.codes.dim),
        }
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            delta: self.delta.cast(),
            nets: FieldNetworks {
                density: self.nets.density.cast(),
                color: self.nets.color.cast(),
                shading: self.nets.shading.cast(),
            },
            codes: self.codes.cast(),
        }
    }

    pub fn blocks(&self) -> [&[T]; 6] {
        [
            &self.delta.params,
            &self.nets.density.params,
            &self.nets.color.params,
            &self.nets.shading.params,
            &self.codes.geo,
            &self.codes.rgb,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<T>; 6] {
        [
            &mut self.delta.params,
            &mut self.nets.density.params,
            &mut self.nets.color.params,
            &mut self.nets.shading.params,
            &mut self.codes.geo,
            &mut self.codes.rgb,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }
}

/// Appearance decoders borrowed from another avatar by a texture swap. Inside
/// the swapped region the colour is decoded by these networks instead.
#[derive(Clone, Debug, PartialEq)]
pub struct SwapAppearance<T> {
    pub color: Mlp<T>,
    pub shading: Mlp<T>,
    /// Per canonical vertex, 1 inside the swapped region, 0.5 on its
    /// boundary ring, 0 elsewhere.
    pub vertex_weight: Vec<f64>,
}

impl<T: Real> SwapAppearance<T> {
    pub fn cast<U: Real>(&self) -> SwapAppearance<U> {
        SwapAppearance {
            color: self.color.cast(),
            shading: self.shading.cast(),
            vertex_weight: self.vertex_weight.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Avatar<T = f32> {
    skeleton: Skeleton,
    mesh: AnchorMesh,
    surface: SurfaceIndex,
    canonical_index: VertexIndex,
    pub params: ModelParams<T>,
    pub swap: Option<SwapAppearance<T>>,
    pub config: ModelConfig,
    /// Training iterations applied so far.
    pub iteration: u64,
}

/// Density and colour at a batch of samples. Background samples carry zero
/// density and black.
#[derive(Clone, Debug, PartialEq)]
pub struct Radiance<T> {
    pub sigma: Vec<T>,
    pub color: Vec<[T; 3]>,
}

struct ActiveSample {
    index: usize,
    x_c: Vec3,
    h: SignedHeight,
    jacobian: Mat3,
    knn: KnnWeights,
    /// Per component, whether the displacement was inside its clamp.
    free: [bool; 3],
    base: [f64; 3],
    shading: f64,
}

/// Forward activations of [`Avatar::forward`], consumed by
/// [`Avatar::backward`].
pub struct SampleTape<T> {
    pub radiance: Radiance<T>,
    samples: Vec<ActiveSample>,
    delta: Option<Tape<T>>,
    density: Option<Tape<T>>,
    color: Option<Tape<T>>,
    shading: Option<Tape<T>>,
}

impl<T> SampleTape<T> {
    /// Number of samples that fell within the body's neighbourhood.
    pub fn active_count(&self) -> usize {
        self.samples.len()
    }
}

fn run_mlp<T: Real>(net: &Mlp<T>, x: &[T], rows: usize, keep: bool) -> (Option<Tape<T>>, Vec<T>) {
    if keep {
        let tape = net.forward(x, rows);
        let out = tape.output.clone();
        (Some(tape), out)
    } else {
        (None, net.infer(x, rows))
    }
}

impl<T: Real> Avatar<T> {
    pub fn new(skeleton: Skeleton, mesh: AnchorMesh, config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let cond = condition_dim(&skeleton);
        let params = ModelParams::new(&config, mesh.vertex_count(), cond, rng);
        Self::from_parts(skeleton, mesh, config, params, None, 0)
    }

    /// Assembles an avatar, checking that every block fits the mesh and the
    /// configured network shapes.
    pub fn from_parts(
        skeleton: Skeleton,
        mesh: AnchorMesh,
        config: ModelConfig,
        params: ModelParams<T>,
        swap: Option<SwapAppearance<T>>,
        iteration: u64,
    ) -> Result<Self> {
        skeleton.validate()?;
        mesh.validate()?;
        if mesh.bone_count != skeleton.bone_count() {
            return Err(UvaError::Argument(format!(
                "mesh has weights for {} bones, skeleton has {}",
                mesh.bone_count,
                skeleton.bone_count()
            )));
        }
        let cond = condition_dim(&skeleton);
        let f = &config.field;
        let expected = [
            (config.motion.delta_spec(f.pe_frequencies, cond), params.delta.spec(), "delta"),
            (f.density_spec(), params.nets.density.spec(), "density"),
            (f.color_spec(), params.nets.color.spec(), "color"),
            (f.shading_spec(cond), params.nets.shading.spec(), "shading"),
        ];
        for (want, got, name) in expected {
            if want != *got {
                return Err(UvaError::Argument(format!("{name} network does not match the configuration")));
            }
        }
        if params.codes.dim != f.code_dim || params.codes.vertex_count() != mesh.vertex_count() {
            return Err(UvaError::Argument(format!(
                "code tables are {}x{}, mesh needs {}x{}",
                params.codes.vertex_count(),
                params.codes.dim,
                mesh.vertex_count(),
                f.code_dim
            )));
        }
        if let Some(s) = &swap {
            if s.color.spec() != params.nets.color.spec()
                || s.shading.spec() != params.nets.shading.spec()
                || s.vertex_weight.len() != mesh.vertex_count()
            {
                return Err(UvaError::Argument("swap decoders do not match the avatar".into()));
            }
        }
        Ok(Self {
            surface: SurfaceIndex::from_mesh(&mesh),
            canonical_index: VertexIndex::new(&mesh.vertices),
            skeleton,
            mesh,
            params,
            swap,
            config,
            iteration,
        })
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn mesh(&self) -> &AnchorMesh {
        &self.mesh
    }

    pub fn surface(&self) -> &SurfaceIndex {
        &self.surface
    }

    pub fn canonical_index(&self) -> &VertexIndex {
        &self.canonical_index
    }

    /// Replaces the canonical vertex positions, keeping faces, UVs, weights
    /// and every code attached by index.
    pub fn set_canonical_vertices(&mut self, vertices: Vec<Vec3>) -> Result<()> {
        if vertices.len() != self.mesh.vertex_count() {
            return Err(UvaError::Topology(format!(
                "edit has {} vertices, mesh has {}",
                vertices.len(),
                self.mesh.vertex_count()
            )));
        }
        let mut mesh = self.mesh.clone();
        mesh.vertices = vertices;
        mesh.validate()?;
        self.surface = SurfaceIndex::from_mesh(&mesh);
        self.canonical_index = VertexIndex::new(&mesh.vertices);
        self.mesh = mesh;
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Avatar<U> {
        Avatar {
            skeleton: self.skeleton.clone(),
            mesh: self.mesh.clone(),
            surface: self.surface.clone(),
            canonical_index: self.canonical_index.clone(),
            params: self.params.cast(),
            swap: self.swap.as_ref().map(SwapAppearance::cast),
            config: self.config.clone(),
            iteration: self.iteration,
        }
    }

    pub fn pose_context(&self, pose: &Pose) -> Result<PoseContext> {
        PoseContext::new(&self.skeleton, &self.mesh, pose)
    }

    /// Density and colour at observation-space points.
    pub fn evaluate(&self, ctx: &PoseContext, points: &[Vec3]) -> Result<Radiance<T>> {
        Ok(self.run(ctx, points, false)?.radiance)
    }

    /// As [`Avatar::evaluate`], keeping what the backward pass needs.
    pub fn forward(&self, ctx: &PoseContext, points: &[Vec3]) -> Result<SampleTape<T>> {
        self.run(ctx, points, true)
    }

    fn run(&self, ctx: &PoseContext, points: &[Vec3], keep: bool) -> Result<SampleTape<T>> {
        let cfg = &self.config;
        let flags = cfg.flags;
        let pe = cfg.field.pe_frequencies;
        let k = cfg.motion.knn_k;
        let n = points.len();
        let mut radiance = Radiance {
            sigma: vec![T::zero(); n],
            color: vec![[T::zero(); 3]; n],
        };

        // backward skinning; samples beyond the body neighbourhood stay empty
        let mut index = Vec::new();
        let mut x_r = Vec::new();
        for (i, p) in points.iter().enumerate() {
            let w = diffuse_weights(
                p,
                &ctx.posed_index,
                &self.mesh.lbs_weights,
                self.mesh.bone_count,
                k,
                cfg.motion.bg_threshold,
            );
            if w.is_background() {
                continue;
            }
            x_r.push(inverse_lbs(p, &w, &ctx.transforms)?);
            index.push(i);
        }
        let m = index.len();
        if m == 0 {
            return Ok(SampleTape {
                radiance,
                samples: Vec::new(),
                delta: None,
                density: None,
                color: None,
                shading: None,
            });
        }

        let mut x_c = x_r.clone();
        let mut free = vec![[true; 3]; m];
        let mut delta_tape = None;
        if !flags.disable_delta {
            let net = &self.params.delta;
            let mut input = Vec::with_capacity(m * net.input_dim());
            for xr in &x_r {
                let h = if flags.zero_signed_height {
                    SignedHeight::ZERO
                } else {
                    self.surface.signed_height(xr)
                };
                displacement_input(&h, &ctx.condition, pe, &mut input);
            }
            let (tape, out) = run_mlp(net, &input, m, keep);
            delta_tape = tape;
            let bound = cfg.motion.delta_clamp;
            for r in 0..m {
                let raw = [out[3 * r].f64(), out[3 * r + 1].f64(), out[3 * r + 2].f64()];
                free[r] = raw.map(|v| v.abs() < bound);
                x_c[r] += clamp_displacement(raw, bound);
            }
        }

        // canonical coordinates and interpolated codes
        let dim = cfg.field.code_dim;
        let enc = cfg.field.encoded_height_dim();
        let width = enc + dim;
        let mut density_in = Vec::with_capacity(m * width);
        let mut color_in = Vec::with_capacity(m * width);
        let mut samples = Vec::with_capacity(m);
        let codes = &self.params.codes;
        for r in 0..m {
            let (h, jacobian) = if flags.zero_signed_height {
                (SignedHeight::ZERO, Mat3::zeros())
            } else {
                self.surface.signed_height_with_jacobian(&x_c[r])
            };
            let knn = knn_inverse_distance(&x_c[r], &self.canonical_index, k);
            let phi: Vec<T> = positional_encoding(&h.to_array(), pe).into_iter().map(T::of).collect();
            let mut l_geo = vec![T::zero(); dim];
            let mut l_rgb = vec![T::zero(); dim];
            for (&j, &wj) in knn.indices.iter().zip(&knn.weights) {
                let wj = T::of(wj);
                for d in 0..dim {
                    l_geo[d] += wj * codes.geo[j * dim + d];
                    l_rgb[d] += wj * codes.rgb[j * dim + d];
                }
            }
            density_in.extend_from_slice(&phi);
            density_in.extend_from_slice(&l_geo);
            color_in.extend_from_slice(&phi);
            color_in.extend_from_slice(&l_rgb);
            samples.push(ActiveSample {
                index: index[r],
                x_c: x_c[r],
                h,
                jacobian,
                knn,
                free: free[r],
                base: [0.0; 3],
                shading: 1.0,
            });
        }

        let nets = &self.params.nets;
        let (density_tape, density_out) = run_mlp(&nets.density, &density_in, m, keep);
        let (color_tape, color_out) = run_mlp(&nets.color, &color_in, m, keep);
        let color_width = nets.color.output_dim();
        let feature = color_width - 3;
        let cond: Vec<T> = ctx.condition.iter().map(|c| T::of(*c)).collect();
        let shading_input = |out: &[T]| -> Vec<T> {
            let mut x = Vec::with_capacity(m * (feature + cond.len()));
            for r in 0..m {
                x.extend_from_slice(&out[r * color_width + 3..(r + 1) * color_width]);
                x.extend_from_slice(&cond);
            }
            x
        };
        let (shading_tape, shading_out) = if flags.disable_shading {
            (None, vec![T::zero(); m])
        } else {
            run_mlp(&nets.shading, &shading_input(&color_out), m, keep)
        };

        // the swapped region decodes with the source networks
        let mut mixed: Vec<Option<(f64, [f64; 3])>> = vec![None; m];
        if let Some(swap) = &self.swap {
            let rows: Vec<usize> = (0..m)
                .filter(|&r| {
                    let s = &samples[r].knn;
                    s.indices.iter().zip(&s.weights).any(|(&j, &w)| w > 0.0 && swap.vertex_weight[j] > 0.0)
                })
                .collect();
            if !rows.is_empty() {
                let sub: Vec<T> = rows
                    .iter()
                    .flat_map(|&r| color_in[r * width..(r + 1) * width].iter().copied())
                    .collect();
                let out = swap.color.infer(&sub, rows.len());
                let s_out = if flags.disable_shading {
                    vec![T::zero(); rows.len()]
                } else {
                    let mut x = Vec::new();
                    for q in 0..rows.len() {
                        x.extend_from_slice(&out[q * color_width + 3..(q + 1) * color_width]);
                        x.extend_from_slice(&cond);
                    }
                    swap.shading.infer(&x, rows.len())
                };
                for (q, &r) in rows.iter().enumerate() {
                    let s = &samples[r].knn;
                    let omega: f64 = s
                        .indices
                        .iter()
                        .zip(&s.weights)
                        .map(|(&j, &w)| w * swap.vertex_weight[j])
                        .sum();
                    let shade = if flags.disable_shading {
                        1.0
                    } else {
                        2.0 * sigmoid(s_out[q]).f64()
                    };
                    let c = [0, 1, 2].map(|ch| (sigmoid(out[q * color_width + ch]).f64() * shade).clamp(0.0, 1.0));
                    mixed[r] = Some((omega, c));
                }
            }
        }

        for (r, s) in samples.iter_mut().enumerate() {
            let i = s.index;
            radiance.sigma[i] = softplus(density_out[r]);
            let shade = if flags.disable_shading {
                T::one()
            } else {
                T::of(2.0) * sigmoid(shading_out[r])
            };
            s.shading = shade.f64();
            for ch in 0..3 {
                let c0 = sigmoid(color_out[r * color_width + ch]);
                s.base[ch] = c0.f64();
                radiance.color[i][ch] = (c0 * shade).max(T::zero()).min(T::one());
            }
            if let Some((omega, source)) = mixed[r] {
                for ch in 0..3 {
                    let target = radiance.color[i][ch].f64();
                    radiance.color[i][ch] = T::of((1.0 - omega) * target + omega * source[ch]);
                }
            }
        }

        Ok(SampleTape {
            radiance,
            samples,
            delta: delta_tape,
            density: density_tape,
            color: color_tape,
            shading: shading_tape,
        })
    }

    /// Accumulates `∂L/∂params` into `grads` given `∂L/∂σ` and `∂L/∂c` per
    /// sample. Swapped avatars are inference-only.
    pub fn backward(
        &self,
        tape: &SampleTape<T>,
        d_sigma: &[T],
        d_color: &[[T; 3]],
        grads: &mut ModelParams<T>,
    ) -> Result<()> {
        if self.swap.is_some() {
            return Err(UvaError::Argument("a texture-swapped avatar cannot be differentiated".into()));
        }
        let n = tape.radiance.sigma.len();
        if d_sigma.len() != n || d_color.len() != n {
            return Err(UvaError::Argument(format!(
                "gradient for {} samples, tape has {}",
                d_sigma.len().min(d_color.len()),
                n
            )));
        }
        let m = tape.samples.len();
        if m == 0 {
            return Ok(());
        }
        let (Some(density_tape), Some(color_tape)) = (&tape.density, &tape.color) else {
            return Err(UvaError::Argument("tape was recorded without activations".into()));
        };
        let cfg = &self.config;
        let flags = cfg.flags;
        let nets = &self.params.nets;
        let dim = cfg.field.code_dim;
        let enc = cfg.field.encoded_height_dim();
        let width = enc + dim;
        let color_width = nets.color.output_dim();
        let feature = color_width - 3;

        let mut d_density_out = vec![T::zero(); m];
        let mut d_color_out = vec![T::zero(); m * color_width];
        let mut d_shading_out = vec![T::zero(); m];
        for (r, s) in tape.samples.iter().enumerate() {
            let i = s.index;
            d_density_out[r] = d_sigma[i] * sigmoid(density_tape.output[r]);
            let mut d_shade = 0.0;
            for ch in 0..3 {
                let c0 = s.base[ch];
                if c0 * s.shading >= 1.0 {
                    continue;
                }
                let dc = d_color[i][ch].f64();
                d_shade += dc * c0;
                d_color_out[r * color_width + ch] = T::of(dc * s.shading * c0 * (1.0 - c0));
            }
            if !flags.disable_shading {
                let half = s.shading / 2.0;
                d_shading_out[r] = T::of(d_shade * 2.0 * half * (1.0 - half));
            }
        }
        if let (false, Some(shading_tape)) = (flags.disable_shading, &tape.shading) {
            let d_in = nets
                .shading
                .backward(shading_tape, &d_shading_out, &mut grads.nets.shading.params);
            let in_width = nets.shading.input_dim();
            for r in 0..m {
                for q in 0..feature {
                    d_color_out[r * color_width + 3 + q] += d_in[r * in_width + q];
                }
            }
        }
        let d_color_in = nets.color.backward(color_tape, &d_color_out, &mut grads.nets.color.params);
        let d_density_in = nets
            .density
            .backward(density_tape, &d_density_out, &mut grads.nets.density.params);

        let codes = &self.params.codes;
        let mut d_delta_out = Vec::new();
        let want_x = !flags.disable_delta && tape.delta.is_some();
        if want_x {
            d_delta_out.resize(m * 3, T::zero());
        }
        for (r, s) in tape.samples.iter().enumerate() {
            let d_geo = &d_density_in[r * width + enc..(r + 1) * width];
            let d_rgb = &d_color_in[r * width + enc..(r + 1) * width];
            for (&j, &wj) in s.knn.indices.iter().zip(&s.knn.weights) {
                let wj = T::of(wj);
                for d in 0..dim {
                    grads.codes.geo[j * dim + d] += wj * d_geo[d];
                    grads.codes.rgb[j * dim + d] += wj * d_rgb[d];
                }
            }
            if !want_x {
                continue;
            }
            let mut d_x = Vec3::zeros();
            if !flags.zero_signed_height {
                let d_enc: Vec<T> = (0..enc)
                    .map(|e| d_density_in[r * width + e] + d_color_in[r * width + e])
                    .collect();
                let d_h = positional_encoding_backward(&s.h.to_array(), cfg.field.pe_frequencies, &d_enc);
                d_x += s.jacobian.transpose() * Vec3::new(d_h[0], d_h[1], d_h[2]);
            }
            let grad_w = s.knn.gradients(&s.x_c, self.canonical_index.points());
            for (&j, g) in s.knn.indices.iter().zip(&grad_w) {
                let mut dot = 0.0;
                for d in 0..dim {
                    dot += d_geo[d].f64() * codes.geo[j * dim + d].f64();
                    dot += d_rgb[d].f64() * codes.rgb[j * dim + d].f64();
                }
                d_x += g * dot;
            }
            for a in 0..3 {
                if s.free[a] {
                    d_delta_out[r * 3 + a] = T::of(d_x[a]);
                }
            }
        }
        if let (true, Some(delta_tape)) = (want_x, &tape.delta) {
            self.params
                .delta
                .backward(delta_tape, &d_delta_out, &mut grads.delta.params);
        }
        Ok(())
    }
}

/// Length of the pose conditioning vector: three per non-root joint.
pub fn condition_dim(skeleton: &Skeleton) -> usize {
    3 * (skeleton.bone_count() - 1)
}
