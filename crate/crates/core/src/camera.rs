//! Pinhole camera with an OpenCV-style world-to-camera transform: `x_cam =
//! R x_world + t`, `+z` looks forward, `+y` points down the image. Pixel
//! `(i, j)` has its centre at `(i, j)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UvaError};
use crate::math::{Mat3, Rigid, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World to camera.
    pub extrinsic: Rigid,
    pub width: u32,
    pub height: u32,
}

/// On-disk form: `R` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, extrinsic: Rigid, width: u32, height: u32) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            extrinsic,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(UvaError::Argument(format!("focal lengths must be positive, got ({}, {})", self.fx, self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(UvaError::Argument("image size must be non-zero".into()));
        }
        let r = &self.extrinsic.rotation;
        if (r.transpose() * r - Mat3::identity()).norm() > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(UvaError::Argument("camera rotation is not orthonormal".into()));
        }
        Ok(())
    }

    /// Camera placed at `eye` looking at `target`, image `+y` aligned with
    /// `-up` as seen by the camera.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: u32, height: u32) -> Result<Self> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| UvaError::Argument("eye and target coincide".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| UvaError::Argument("up is parallel to the view direction".into()))?;
        let y = z.cross(&x);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let extrinsic = Rigid::new(rotation, -(rotation * eye));
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            extrinsic,
            width,
            height,
        )
    }

    pub fn center(&self) -> Vec3 {
        -(self.extrinsic.rotation.transpose() * self.extrinsic.translation)
    }

    /// Pixel coordinates and camera-space depth of a world point.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        let q = self.extrinsic.apply(p);
        (self.fx * q.x / q.z + self.cx, self.fy * q.y / q.z + self.cy, q.z)
    }

    /// World-space unit direction through continuous pixel coordinates.
    pub fn direction(&self, px: f64, py: f64) -> Vec3 {
        let d = Vec3::new((px - self.cx) / self.fx, (py - self.cy) / self.fy, 1.0);
        (self.extrinsic.rotation.transpose() * d).normalize()
    }

    /// The same camera after moving the whole scene by `motion`.
    pub fn transformed(&self, motion: &Rigid) -> Self {
        Self {
            extrinsic: self.extrinsic.compose(&motion.inverse()),
            ..self.clone()
        }
    }

    pub fn to_file(&self) -> CameraFile {
        let r = &self.extrinsic.rotation;
        CameraFile {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            r: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            t: [self.extrinsic.translation.x, self.extrinsic.translation.y, self.extrinsic.translation.z],
            width: self.width,
            height: self.height,
        }
    }

    pub fn from_file(f: &CameraFile) -> Result<Self> {
        let rotation = Mat3::from_row_slice(&f.r);
        Self::new(
            f.fx,
            f.fy,
            f.cx,
            f.cy,
            Rigid {
                rotation,
                translation: Vec3::from(f.t),
            },
            f.width,
            f.height,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UvaError::io(path, e))?;
        let file: CameraFile = serde_json::from_str(&text).map_err(|e| UvaError::json(path, e))?;
        Self::from_file(&file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file()).map_err(|e| UvaError::json(path, e))?;
        std::fs::write(path, text).map_err(|e| UvaError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cam() -> Camera {
        Camera::look_at(Vec3::new(0.3, 1.0, 3.0), Vec3::new(0.0, 0.9, 0.0), Vec3::y(), 120.0, 64, 48).unwrap()
    }

    #[test]
    fn look_at_keeps_up_on_top() {
        let c = cam();
        let (_, above, _) = c.project(&Vec3::new(0.0, 1.5, 0.0));
        let (_, below, _) = c.project(&Vec3::new(0.0, 0.3, 0.0));
        assert!(above < below);
        assert_abs_diff_eq!(c.center(), Vec3::new(0.3, 1.0, 3.0), epsilon = 1e-12);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let c = cam();
        let back = Camera::from_file(&serde_json::from_str(&serde_json::to_string(&c.to_file()).unwrap()).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_focal() {
        let c = cam();
        let mut f = c.to_file();
        f.fx = 0.0;
        assert!(Camera::from_file(&f).is_err());
    }
}
