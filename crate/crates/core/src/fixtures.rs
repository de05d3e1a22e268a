//! Ready-made avatars for tests and examples.
//!
//! The shell avatar has hand-set decoder weights: density is
//! `softplus(c - k·relu(d))` in the signed distance `d`, so it is opaque
//! inside the anchor mesh and empty a short way outside it, and the base
//! colour is a smooth function of the surface UV plus the first three
//! appearance code channels. It renders a recognisable body without training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::body_model::{build_default_body, AnchorMesh, BodySpec, Skeleton};
use crate::canonical_field::{FieldConfig, FieldNetworks, StructuredCodes};
use crate::error::{Result, UvaError};
use crate::model::{condition_dim, Avatar, ModelConfig, ModelParams};
use crate::motion_field::MotionConfig;
use crate::nn::{Mlp, MlpSpec, Real};

/// Small networks for tests, examples and single-core benchmarks.
pub fn compact_config() -> ModelConfig {
    ModelConfig {
        field: FieldConfig {
            code_dim: 8,
            density_width: 32,
            density_layers: 3,
            color_width: 32,
            color_layers: 4,
            color_skip: 2,
            feature_dim: 8,
            shading_width: 16,
            shading_layers: 2,
            ..FieldConfig::default()
        },
        motion: MotionConfig {
            delta_width: 32,
            delta_layers: 3,
            ..MotionConfig::default()
        },
        ..ModelConfig::default()
    }
}

/// The default capsule body with a smaller vertex budget.
pub fn small_body(vertex_budget: usize) -> Result<(Skeleton, AnchorMesh)> {
    build_default_body(&BodySpec {
        vertex_budget,
        ..BodySpec::default()
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShellParams {
    /// Density deep inside the mesh, before the softplus.
    pub sigma_inside: f64,
    /// Slope of the density fall-off outside the mesh.
    pub sharpness: f64,
    /// Scale of the UV pattern in the colour logits.
    pub pattern_gain: f64,
    /// Amplitude of the appearance codes.
    pub code_amplitude: f64,
}

impl Default for ShellParams {
    fn default() -> Self {
        Self {
            sigma_inside: 40.0,
            sharpness: 4000.0,
            pattern_gain: 2.0,
            code_amplitude: 1.0,
        }
    }
}

type Unit = (Vec<(usize, f64)>, f64);

/// An MLP whose first layer computes `units`, whose further hidden layers
/// copy them unchanged and whose output layer takes the given linear
/// combinations of them.
fn relay(spec: MlpSpec, units: &[Unit], outputs: &[(usize, Vec<(usize, f64)>, f64)]) -> Result<Mlp<f64>> {
    if spec.hidden_layers == 0 || spec.hidden < units.len() {
        return Err(UvaError::Argument(format!(
            "shell decoder needs at least one hidden layer of width {}",
            units.len()
        )));
    }
    let mut m = Mlp::<f64>::zeros(spec.clone());
    let mut off = 0;
    for layer in 0..=spec.hidden_layers {
        let inp = if layer == 0 {
            spec.input
        } else if spec.skip_at == Some(layer) {
            spec.hidden + spec.input
        } else {
            spec.hidden
        };
        let out = if layer == spec.hidden_layers { spec.output } else { spec.hidden };
        let (w, b) = (off, off + inp * out);
        if layer == 0 {
            for (u, (terms, bias)) in units.iter().enumerate() {
                for &(i, v) in terms {
                    m.params[w + u * inp + i] = v;
                }
                m.params[b + u] = *bias;
            }
        } else if layer < spec.hidden_layers {
            for u in 0..units.len() {
                m.params[w + u * inp + u] = 1.0;
            }
        } else {
            for (o, terms, bias) in outputs {
                for &(u, v) in terms {
                    m.params[w + o * inp + u] = v;
                }
                m.params[b + o] = *bias;
            }
        }
        off += inp * out + out;
    }
    debug_assert_eq!(off, m.params.len());
    Ok(m)
}

/// Builds the analytic shell avatar. `seed` only chooses the code pattern,
/// so two seeds give two differently coloured avatars on the same body.
pub fn shell_avatar<T: Real>(
    skeleton: Skeleton,
    mesh: AnchorMesh,
    config: ModelConfig,
    shell: &ShellParams,
    seed: u64,
) -> Result<Avatar<T>> {
    let f = &config.field;
    if f.code_dim < 3 || f.pe_frequencies < 2 {
        return Err(UvaError::Argument("shell avatar needs 3 code channels and 2 frequencies".into()));
    }
    let enc = f.encoded_height_dim();
    let cond = condition_dim(&skeleton);

    let density = relay(
        f.density_spec(),
        &[(vec![(2, 1.0)], 0.0), (vec![], 1.0)],
        &[(0, vec![(0, -shell.sharpness), (1, shell.sigma_inside)], 0.0)],
    )?;

    // sin(2πu) and sin(2πv) sit in the second sine block
    let (sin_u, sin_v) = (9, 10);
    let mut units: Vec<Unit> = vec![(vec![(0, 1.0)], 0.0), (vec![(1, 1.0)], 0.0)];
    for i in [sin_u, sin_v] {
        units.push((vec![(i, 1.0)], 0.0));
        units.push((vec![(i, -1.0)], 0.0));
    }
    for ch in 0..3 {
        units.push((vec![(enc + ch, 1.0)], 0.0));
        units.push((vec![(enc + ch, -1.0)], 0.0));
    }
    let g = shell.pattern_gain;
    let code = |ch: usize| [(6 + 2 * ch, 1.0), (7 + 2 * ch, -1.0)];
    let color = relay(
        f.color_spec(),
        &units,
        &[
            (0, [vec![(2, g), (3, -g)], code(0).to_vec()].concat(), 0.0),
            (1, [vec![(4, g), (5, -g)], code(1).to_vec()].concat(), 0.0),
            (2, [vec![(0, g), (1, -g)], code(2).to_vec()].concat(), 0.0),
        ],
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase: Vec<[f64; 4]> = (0..3)
        .map(|_| [0; 4].map(|_| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)))
        .collect();
    let dim = f.code_dim;
    let mut codes = StructuredCodes::<T>::zeros(mesh.vertex_count(), dim);
    for (v, p) in mesh.vertices.iter().enumerate() {
        for (ch, ph) in phase.iter().enumerate() {
            let s = (4.0 * p.x + ph[0]).sin() + (4.0 * p.y + ph[1]).sin() + (4.0 * p.z + ph[2]).sin();
            codes.rgb[v * dim + ch] = T::of(shell.code_amplitude * (s / 3.0 + 0.3 * ph[3].sin()));
        }
    }

    let params = ModelParams {
        delta: Mlp::zeros(config.motion.delta_spec(f.pe_frequencies, cond)),
        nets: FieldNetworks {
            density: density.cast(),
            color: color.cast(),
            shading: Mlp::zeros(f.shading_spec(cond)),
        },
        codes,
    };
    Avatar::from_parts(skeleton, mesh, config, params, None, 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body_model::Pose;
    use crate::math::Vec3;

    #[test]
    fn dense_inside_empty_outside() {
        let (sk, mesh) = small_body(400).unwrap();
        let n = sk.bone_count();
        let avatar: Avatar<f64> = shell_avatar(sk, mesh, compact_config(), &ShellParams::default(), 0).unwrap();
        let ctx = avatar.pose_context(&Pose::rest(n)).unwrap();
        // chest centre and a point 5 cm in front of the chest surface
        let r = avatar
            .evaluate(&ctx, &[Vec3::new(0.0, 1.34, 0.0), Vec3::new(0.0, 1.34, 0.18)])
            .unwrap();
        assert!(r.sigma[0] > 30.0, "{}", r.sigma[0]);
        assert!(r.sigma[1] < 1e-6, "{}", r.sigma[1]);
    }
}
