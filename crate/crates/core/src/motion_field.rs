//! Backward skinning: diffuse skinning weights to arbitrary points, invert
//! the blended bone transform, and add the pose-conditioned displacement.

use serde::{Deserialize, Serialize};

use crate::body_model::{forward_kinematics, pose_mesh, AnchorMesh, BoneTransforms, Pose, Skeleton};
use crate::canonical_field::{encoded_dim, positional_encoding};
use crate::error::{Result, UvaError};
use crate::math::{Mat3, Rigid, Vec3};
use crate::mesh_geometry::{knn_inverse_distance, KnnWeights, SignedHeight, SurfaceIndex, VertexIndex};
use crate::nn::{Mlp, MlpSpec, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    /// Neighbour count for weight diffusion and code interpolation.
    pub knn_k: usize,
    /// Points farther than this from every posed vertex are background.
    pub bg_threshold: f64,
    pub delta_width: usize,
    /// Linear layers in the displacement network, output layer included.
    pub delta_layers: usize,
    /// Bound on each displacement component.
    pub delta_clamp: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            knn_k: 4,
            bg_threshold: 0.1,
            delta_width: 128,
            delta_layers: 4,
            delta_clamp: 0.1,
        }
    }
}

impl MotionConfig {
    pub fn delta_spec(&self, pe_frequencies: usize, condition_dim: usize) -> MlpSpec {
        MlpSpec {
            input: encoded_dim(3, pe_frequencies) + condition_dim,
            hidden: self.delta_width,
            hidden_layers: self.delta_layers.saturating_sub(1),
            output: 3,
            skip_at: None,
            zero_last: true,
        }
    }
}

/// Diffused skinning weights: `N` bone weights followed by the background
/// weight.
#[derive(Clone, Debug, PartialEq)]
pub struct PointWeights {
    pub bone_weights: Vec<f64>,
    pub knn: Option<KnnWeights>,
}

impl PointWeights {
    pub fn background(bone_count: usize) -> Self {
        let mut w = vec![0.0; bone_count + 1];
        w[bone_count] = 1.0;
        Self {
            bone_weights: w,
            knn: None,
        }
    }

    pub fn is_background(&self) -> bool {
        self.knn.is_none()
    }

    pub fn background_weight(&self) -> f64 {
        *self.bone_weights.last().expect("at least the background entry")
    }
}

/// Posed-frame data shared by every sample of one pose.
#[derive(Clone, Debug)]
pub struct PoseContext {
    pub pose: Pose,
    pub transforms: BoneTransforms,
    pub posed_vertices: Vec<Vec3>,
    pub posed_index: VertexIndex,
    /// World transform of the root bone.
    pub root_frame: Rigid,
    /// Flattened non-root joint rotations.
    pub condition: Vec<f64>,
}

impl PoseContext {
    pub fn new(skeleton: &Skeleton, mesh: &AnchorMesh, pose: &Pose) -> Result<Self> {
        if !pose.is_finite() {
            return Err(UvaError::Argument("pose has non-finite components".into()));
        }
        let transforms = forward_kinematics(skeleton, pose)?;
        let posed_vertices = pose_mesh(mesh, &transforms)?;
        Ok(Self {
            pose: pose.clone(),
            posed_index: VertexIndex::new(&posed_vertices),
            posed_vertices,
            root_frame: transforms.0[skeleton.root()],
            transforms,
            condition: pose.conditioning(skeleton),
        })
    }
}

/// Inverse-distance blend of the skinning weights of the `k` nearest posed
/// vertices, or pure background beyond `bg_threshold`.
pub fn diffuse_weights(
    x_t: &Vec3,
    posed: &VertexIndex,
    lbs_weights: &[f64],
    bone_count: usize,
    k: usize,
    bg_threshold: f64,
) -> PointWeights {
    let knn = knn_inverse_distance(x_t, posed, k);
    if knn.distances.first().is_none_or(|d| *d > bg_threshold) {
        return PointWeights::background(bone_count);
    }
    let mut w = vec![0.0; bone_count + 1];
    for (&i, &wi) in knn.indices.iter().zip(&knn.weights) {
        for (b, wb) in lbs_weights[i * bone_count..(i + 1) * bone_count].iter().enumerate() {
            w[b] += wb * wi;
        }
    }
    PointWeights {
        bone_weights: w,
        knn: Some(knn),
    }
}

/// Largest tolerated condition number of the blended linear part.
pub const MAX_BLEND_CONDITION: f64 = 1e8;

/// `(Σ_b w_b B_b)⁻¹ x_t` over the `N + 1` transforms.
pub fn inverse_lbs(x_t: &Vec3, weights: &PointWeights, transforms: &BoneTransforms) -> Result<Vec3> {
    if weights.bone_weights.len() != transforms.0.len() {
        return Err(UvaError::Argument(format!(
            "{} weights for {} transforms",
            weights.bone_weights.len(),
            transforms.0.len()
        )));
    }
    let mut m = Mat3::zeros();
    let mut t = Vec3::zeros();
    for (w, b) in weights.bone_weights.iter().zip(&transforms.0) {
        if *w != 0.0 {
            m += b.rotation * *w;
            t += b.translation * *w;
        }
    }
    let inv = m.try_inverse().ok_or_else(|| UvaError::Numeric {
        message: "blended skinning matrix is singular".into(),
        condition: f64::INFINITY,
    })?;
    // the Frobenius estimate bounds the spectral condition number from above
    let estimate = m.norm() * inv.norm();
    if estimate >= 1e6 {
        let sv = m.singular_values();
        let cond = sv.max() / sv.min();
        if !(cond < MAX_BLEND_CONDITION) {
            return Err(UvaError::Numeric {
                message: "blended skinning matrix is near-singular".into(),
                condition: cond,
            });
        }
    }
    Ok(inv * (x_t - t))
}

/// Network input `[φ(h), θ]`.
pub(crate) fn displacement_input<T: Real>(h: &SignedHeight, condition: &[f64], frequencies: usize, out: &mut Vec<T>) {
    out.extend(positional_encoding(&h.to_array(), frequencies).into_iter().map(T::of));
    out.extend(condition.iter().map(|c| T::of(*c)));
}

pub(crate) fn clamp_displacement(raw: [f64; 3], bound: f64) -> Vec3 {
    Vec3::new(
        raw[0].clamp(-bound, bound),
        raw[1].clamp(-bound, bound),
        raw[2].clamp(-bound, bound),
    )
}

/// Pose-conditioned non-rigid offset, clamped to `‖Δ‖∞ ≤ delta_clamp`.
pub fn nonrigid_displacement<T: Real>(
    h: &SignedHeight,
    condition: &[f64],
    net: &Mlp<T>,
    cfg: &MotionConfig,
    pe_frequencies: usize,
) -> Vec3 {
    let mut x = Vec::with_capacity(net.input_dim());
    displacement_input(h, condition, pe_frequencies, &mut x);
    let out = net.infer(&x, 1);
    clamp_displacement([out[0].f64(), out[1].f64(), out[2].f64()], cfg.delta_clamp)
}

/// Everything [`to_canonical`] needs besides the query point.
pub struct CanonicalMapping<'a, T> {
    pub context: &'a PoseContext,
    pub lbs_weights: &'a [f64],
    pub bone_count: usize,
    pub canonical_surface: &'a SurfaceIndex,
    pub delta: Option<&'a Mlp<T>>,
    pub config: &'a MotionConfig,
    pub pe_frequencies: usize,
    pub zero_signed_height: bool,
}

/// `x_c = LBS⁻¹(x_t) + Δ`; background points get `Δ = 0`. The displacement
/// network sees the signed height of the rigidly inverted point.
pub fn to_canonical<T: Real>(x_t: &Vec3, map: &CanonicalMapping<'_, T>) -> Result<(Vec3, PointWeights)> {
    let weights = diffuse_weights(
        x_t,
        &map.context.posed_index,
        map.lbs_weights,
        map.bone_count,
        map.config.knn_k,
        map.config.bg_threshold,
    );
    let x_r = inverse_lbs(x_t, &weights, &map.context.transforms)?;
    let x_c = match map.delta {
        Some(net) if !weights.is_background() => {
            let h = if map.zero_signed_height {
                SignedHeight::ZERO
            } else {
                map.canonical_surface.signed_height(&x_r)
            };
            x_r + nonrigid_displacement(&h, &map.context.condition, net, map.config, map.pe_frequencies)
        }
        _ => x_r,
    };
    Ok((x_c, weights))
}
