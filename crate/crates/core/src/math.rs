//! Small rigid-motion helpers shared by the skinning and rendering code.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// A rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rigid {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Rigid {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn translation(t: Vec3) -> Self {
        Self::new(Mat3::identity(), t)
    }

    /// Rotation by the axis-angle vector `aa` (radians) about the origin.
    pub fn from_axis_angle(aa: &Vec3) -> Self {
        Self::new(axis_angle_matrix(aa), Vec3::zeros())
    }

    /// Rotation by `aa` about the point `pivot`.
    pub fn rotation_about(aa: &Vec3, pivot: &Vec3) -> Self {
        let r = axis_angle_matrix(aa);
        Self::new(r, pivot - r * pivot)
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Rigid) -> Rigid {
        Rigid::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Rigid {
        let rt = self.rotation.transpose();
        Rigid::new(rt, -(rt * self.translation))
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let gram = r.transpose() * r - Mat3::identity();
        gram.abs().max().max((r.determinant() - 1.0).abs())
    }
}

pub fn axis_angle_matrix(aa: &Vec3) -> Mat3 {
    Rotation3::from_scaled_axis(*aa).into_inner()
}

pub fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

pub fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}
