//! Animatable volumetric avatars anchored on a deformable mesh.
//!
//! Observation-space samples are carried into a canonical rest pose by a
//! nearest-neighbour skinning field plus a learned displacement. In canonical
//! space, geometry and appearance live in two separate tables of latent codes
//! attached to the anchor mesh vertices and are decoded together with a
//! surface-relative `(u, v, signed distance)` coordinate. Because the codes are
//! tied to vertices, moving vertices edits geometry and rewriting codes edits
//! texture, locally and independently.
//!
//! Module map:
//!
//! * [`body_model`]: articulated capsule body, forward kinematics, forward LBS
//! * [`mesh_geometry`]: closest point, signed height, KNN inverse-distance weights
//! * [`motion_field`]: backward skinning and the displacement network
//! * [`canonical_field`]: code tables, positional encoding, the three decoders
//! * [`renderer`]: cameras, rays, sampling and compositing
//! * [`trainer`]: losses, optimisation, checkpoints
//! * [`editor`]: geometry edits, texture swapping, texture painting
//! * [`synth_data`]: oracle rasteriser and synthetic datasets
//! * [`metrics`]: PSNR and SSIM
//! * [`cli`]: the `uva` command-line tool

pub mod body_model;
pub mod camera;
pub mod canonical_field;
pub mod cli;
pub mod config;
pub mod editor;
pub mod error;
pub mod fixtures;
pub mod image_io;
pub mod math;
pub mod mesh_geometry;
pub mod metrics;
pub mod model;
pub mod motion_field;
pub mod nn;
pub mod renderer;
pub mod synth_data;
pub mod trainer;

pub use error::{Result, UvaError};
pub use math::{Rigid, Vec3};
