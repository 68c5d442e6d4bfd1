//! Shared rigid-body and camera geometry: poses, SE(3) increments, pinhole
//! intrinsics, and look-at construction.

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3, Vector6};

/// Rigid camera-to-world transform: rotation as a unit quaternion plus a
/// translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    /// Builds a pose from an unnormalized quaternion (w, x, y, z), renormalizing.
    pub fn from_quat_wxyz(w: f64, x: f64, y: f64, z: f64, translation: Vector3<f64>) -> Self {
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Pose::new(q, translation)
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rot_inv = self.rotation.inverse();
        Pose {
            rotation: rot_inv,
            translation: -(rot_inv * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Relative transform taking `self`-frame coordinates to `other`-frame
    /// coordinates: `other⁻¹ ∘ self`.
    pub fn relative_to(&self, other: &Pose) -> Pose {
        other.inverse().compose(self)
    }
}

/// Exponential map of se(3). `xi = (rho, theta)` with the translational part
/// first; returns the pose `exp(xi^)` for left-multiplicative updates.
pub fn se3_exp(xi: &Vector6<f64>) -> Pose {
    let rho = Vector3::new(xi[0], xi[1], xi[2]);
    let theta = Vector3::new(xi[3], xi[4], xi[5]);
    let angle = theta.norm();
    let rotation = UnitQuaternion::from_scaled_axis(theta);

    let v = if angle < 1e-9 {
        Matrix3::identity() + 0.5 * skew(&theta)
    } else {
        let k = skew(&theta);
        Matrix3::identity() + ((1.0 - angle.cos()) / (angle * angle)) * k
            + ((angle - angle.sin()) / (angle * angle * angle)) * (k * k)
    };

    Pose {
        rotation,
        translation: v * rho,
    }
}

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Camera-to-world pose at `eye` with the optical axis (camera +z) through
/// `target`. Camera x points right, y points down; world up is +z.
pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Pose {
    let forward = (target - eye).normalize();
    let mut down = -Vector3::z();
    if forward.dot(&down).abs() > 1.0 - 1e-9 {
        down = Vector3::y();
    }
    let y = (down - forward.dot(&down) * forward).normalize();
    let x = y.cross(&forward);
    let rot = Matrix3::from_columns(&[x, y, forward]);
    Pose {
        rotation: UnitQuaternion::from_matrix(&rot),
        translation: eye,
    }
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(cx >= 0.0 && cx < width as f64, "cx out of image");
        assert!(cy >= 0.0 && cy < height as f64, "cy out of image");
        CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    /// Unit direction in the camera frame through pixel (u, v).
    pub fn pixel_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }

    /// Projects a camera-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p.z <= 1e-12 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.x <= self.width as f64 - 1.0 && px.y >= 0.0 && px.y <= self.height as f64 - 1.0
    }

    /// Cone slope for the pixel footprint: perpendicular radius per unit
    /// distance along the ray, from the pixel spacing scaled by 2/sqrt(12).
    pub fn pixel_cone_radius(&self) -> f64 {
        let px = 0.5 * (1.0 / self.fx + 1.0 / self.fy);
        px * 2.0 / 12f64.sqrt()
    }
}
