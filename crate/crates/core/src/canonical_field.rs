//! Mesh-anchored canonical field: per-vertex geometry and appearance codes,
//! Fourier features of the signed height, and the density, base-colour and
//! shading decoders.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mesh_geometry::{knn_inverse_distance, SignedHeight, VertexIndex};
use crate::nn::{sigmoid, softplus, Mlp, MlpSpec, Real};
use crate::Vec3;

/// Output length of [`positional_encoding`] for a `dim`-vector.
pub const fn encoded_dim(dim: usize, frequencies: usize) -> usize {
    dim * (2 * frequencies + 1)
}

/// `[x, sin(2^0 π x), cos(2^0 π x), ..., sin(2^(L-1) π x), cos(2^(L-1) π x)]`,
/// each block holding all components of `x`.
pub fn positional_encoding(x: &[f64], frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_dim(x.len(), frequencies));
    out.extend_from_slice(x);
    for k in 0..frequencies {
        let scale = (1u64 << k) as f64 * std::f64::consts::PI;
        out.extend(x.iter().map(|v| (scale * v).sin()));
        out.extend(x.iter().map(|v| (scale * v).cos()));
    }
    out
}

/// Chain rule through [`positional_encoding`]: maps `∂L/∂φ` to `∂L/∂x`.
pub fn positional_encoding_backward<T: Real>(x: &[f64], frequencies: usize, d_enc: &[T]) -> Vec<f64> {
    let dim = x.len();
    let mut dx: Vec<f64> = d_enc[..dim].iter().map(|d| d.f64()).collect();
    for k in 0..frequencies {
        let scale = (1u64 << k) as f64 * std::f64::consts::PI;
        let base = dim * (1 + 2 * k);
        for j in 0..dim {
            let a = scale * x[j];
            dx[j] += d_enc[base + j].f64() * scale * a.cos();
            dx[j] -= d_enc[base + dim + j].f64() * scale * a.sin();
        }
    }
    dx
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub code_dim: usize,
    pub pe_frequencies: usize,
    pub density_width: usize,
    /// Linear layers in the density decoder, output layer included.
    pub density_layers: usize,
    pub color_width: usize,
    pub color_layers: usize,
    /// Hidden layer that receives the decoder input a second time.
    pub color_skip: usize,
    pub feature_dim: usize,
    pub shading_width: usize,
    pub shading_layers: usize,
    pub code_init_std: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            code_dim: 32,
            pe_frequencies: 6,
            density_width: 128,
            density_layers: 4,
            color_width: 256,
            color_layers: 8,
            color_skip: 4,
            feature_dim: 128,
            shading_width: 64,
            shading_layers: 3,
            code_init_std: 0.01,
        }
    }
}

impl FieldConfig {
    pub fn encoded_height_dim(&self) -> usize {
        encoded_dim(3, self.pe_frequencies)
    }

    pub fn density_spec(&self) -> MlpSpec {
        MlpSpec {
            input: self.encoded_height_dim() + self.code_dim,
            hidden: self.density_width,
            hidden_layers: self.density_layers.saturating_sub(1),
            output: 1,
            skip_at: None,
            zero_last: false,
        }
    }

    pub fn color_spec(&self) -> MlpSpec {
        let hidden_layers = self.color_layers.saturating_sub(1);
        MlpSpec {
            input: self.encoded_height_dim() + self.code_dim,
            hidden: self.color_width,
            hidden_layers,
            output: 3 + self.feature_dim,
            skip_at: (self.color_skip > 0 && self.color_skip < hidden_layers).then_some(self.color_skip),
            zero_last: false,
        }
    }

    pub fn shading_spec(&self, condition_dim: usize) -> MlpSpec {
        MlpSpec {
            input: self.feature_dim + condition_dim,
            hidden: self.shading_width,
            hidden_layers: self.shading_layers.saturating_sub(1),
            output: 1,
            skip_at: None,
            zero_last: true,
        }
    }
}

/// Component switches used by the ablations. All off is the full model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationFlags {
    pub disable_delta: bool,
    pub disable_shading: bool,
    pub zero_signed_height: bool,
}

/// Two independent `V x dim` code tables attached to anchor vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredCodes<T> {
    pub dim: usize,
    pub geo: Vec<T>,
    pub rgb: Vec<T>,
}

impl<T: Real> StructuredCodes<T> {
    pub fn zeros(vertex_count: usize, dim: usize) -> Self {
        Self {
            dim,
            geo: vec![T::zero(); vertex_count * dim],
            rgb: vec![T::zero(); vertex_count * dim],
        }
    }

    pub fn random(vertex_count: usize, dim: usize, std: f64, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("valid std");
        let mut draw = || (0..vertex_count * dim).map(|_| T::of(normal.sample(rng))).collect();
        let geo = draw();
        let rgb = draw();
        Self { dim, geo, rgb }
    }

    pub fn vertex_count(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.geo.len() / self.dim
        }
    }

    pub fn geo_row(&self, v: usize) -> &[T] {
        &self.geo[v * self.dim..(v + 1) * self.dim]
    }

    pub fn rgb_row(&self, v: usize) -> &[T] {
        &self.rgb[v * self.dim..(v + 1) * self.dim]
    }

    pub fn cast<U: Real>(&self) -> StructuredCodes<U> {
        StructuredCodes {
            dim: self.dim,
            geo: self.geo.iter().map(|x| U::of(x.f64())).collect(),
            rgb: self.rgb.iter().map(|x| U::of(x.f64())).collect(),
        }
    }
}

/// Density, base-colour and shading decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldNetworks<T> {
    pub density: Mlp<T>,
    pub color: Mlp<T>,
    pub shading: Mlp<T>,
}

impl<T: Real> FieldNetworks<T> {
    pub fn new(cfg: &FieldConfig, condition_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            density: Mlp::new(cfg.density_spec(), rng),
            color: Mlp::new(cfg.color_spec(), rng),
            shading: Mlp::new(cfg.shading_spec(condition_dim), rng),
        }
    }
}

/// Blends both code tables with the inverse-distance weights of the `k`
/// nearest canonical vertices.
pub fn interpolate_codes<T: Real>(
    x_c: &Vec3,
    canonical: &VertexIndex,
    codes: &StructuredCodes<T>,
    k: usize,
) -> (Vec<T>, Vec<T>) {
    let w = knn_inverse_distance(x_c, canonical, k);
    let mut geo = vec![T::zero(); codes.dim];
    let mut rgb = vec![T::zero(); codes.dim];
    for (&i, &wi) in w.indices.iter().zip(&w.weights) {
        let wi = T::of(wi);
        for d in 0..codes.dim {
            geo[d] += wi * codes.geo[i * codes.dim + d];
            rgb[d] += wi * codes.rgb[i * codes.dim + d];
        }
    }
    (geo, rgb)
}

pub(crate) fn decoder_input<T: Real>(h: &SignedHeight, code: &[T], frequencies: usize) -> Vec<T> {
    positional_encoding(&h.to_array(), frequencies)
        .into_iter()
        .map(T::of)
        .chain(code.iter().copied())
        .collect()
}

pub fn eval_density<T: Real>(h: &SignedHeight, l_geo: &[T], nets: &FieldNetworks<T>, cfg: &FieldConfig) -> T {
    let x = decoder_input(h, l_geo, cfg.pe_frequencies);
    softplus(nets.density.infer(&x, 1)[0])
}

/// Base colour in `[0, 1]³` and the feature vector passed to shading.
pub fn eval_base_color<T: Real>(
    h: &SignedHeight,
    l_rgb: &[T],
    nets: &FieldNetworks<T>,
    cfg: &FieldConfig,
) -> ([T; 3], Vec<T>) {
    let x = decoder_input(h, l_rgb, cfg.pe_frequencies);
    let out = nets.color.infer(&x, 1);
    ([sigmoid(out[0]), sigmoid(out[1]), sigmoid(out[2])], out[3..].to_vec())
}

/// Pose-conditioned shading factor `2·sigmoid(raw)`, in `(0, 2)`.
pub fn eval_shading<T: Real>(feature: &[T], condition: &[f64], nets: &FieldNetworks<T>, flags: &AblationFlags) -> T {
    if flags.disable_shading {
        return T::one();
    }
    let x: Vec<T> = feature.iter().copied().chain(condition.iter().map(|c| T::of(*c))).collect();
    T::of(2.0) * sigmoid(nets.shading.infer(&x, 1)[0])
}

/// Density and final colour `clamp(c₀·s, 0, 1)` at one canonical point.
#[allow(clippy::too_many_arguments)]
pub fn eval_radiance<T: Real>(
    x_c: &Vec3,
    h: &SignedHeight,
    condition: &[f64],
    canonical: &VertexIndex,
    codes: &StructuredCodes<T>,
    nets: &FieldNetworks<T>,
    cfg: &FieldConfig,
    k: usize,
    flags: &AblationFlags,
) -> (T, [T; 3]) {
    let h = if flags.zero_signed_height { SignedHeight::ZERO } else { *h };
    let (l_geo, l_rgb) = interpolate_codes(x_c, canonical, codes, k);
    let sigma = eval_density(&h, &l_geo, nets, cfg);
    let (c0, f) = eval_base_color(&h, &l_rgb, nets, cfg);
    let s = eval_shading(&f, condition, nets, flags);
    (sigma, c0.map(|c| (c * s).max(T::zero()).min(T::one())))
}
