//! Small geometric vocabulary shared by every stage: planes, pinhole
//! intrinsics and rigid poses.

use nalgebra::{Isometry3, Matrix3, Translation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Rigid world→camera transform.
pub type Pose = Isometry3<f64>;

/// Plane `n·x + w = 0` with unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vec3, offset: f64) -> Self {
        let len = normal.norm();
        Plane {
            normal: normal / len,
            offset: offset / len,
        }
    }

    pub fn from_point_normal(point: &Vec3, normal: &Vec3) -> Self {
        let n = normal.normalize();
        Plane {
            normal: n,
            offset: -n.dot(point),
        }
    }

    #[inline]
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// Orthogonal projection of `p` onto the plane.
    #[inline]
    pub fn project(&self, p: &Vec3) -> Vec3 {
        p - self.signed_distance(p) * self.normal
    }

    /// Orthonormal in-plane basis `(u, v)` with `u × v = n`.
    ///
    /// `u` is the axis of the smallest normal component crossed with the
    /// normal, which keeps the basis stable under small normal changes.
    pub fn basis(&self) -> (Vec3, Vec3) {
        let n = self.normal;
        let a = n.abs();
        let axis = if a.x <= a.y && a.x <= a.z {
            Vec3::x()
        } else if a.y <= a.z {
            Vec3::y()
        } else {
            Vec3::z()
        };
        let u = axis.cross(&n).normalize();
        let v = n.cross(&u);
        (u, v)
    }

    /// Angle between the two normals in degrees, ignoring orientation.
    pub fn angle_deg(&self, other: &Plane) -> f64 {
        self.normal
            .dot(&other.normal)
            .abs()
            .min(1.0)
            .acos()
            .to_degrees()
    }

    /// Retraction on the plane manifold: `n ← normalize(n + u·d0 + v·d1)`,
    /// `w ← w + dw`, with `(u, v)` from [`Plane::basis`].
    pub fn retract(&self, delta: &Vec3) -> Plane {
        let (u, v) = self.basis();
        let n = self.normal + u * delta[0] + v * delta[1];
        let len = n.norm();
        Plane {
            normal: n / len,
            offset: self.offset + delta[2],
        }
    }
}

/// Shared pinhole intrinsics of the RGB-D sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Depth-image units per meter.
    pub depth_scale: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::Argument(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64) {
            return Err(Error::Argument(format!(
                "cx={} outside (0, {})",
                self.cx, self.width
            )));
        }
        if !(self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(Error::Argument(format!(
                "cy={} outside (0, {})",
                self.cy, self.height
            )));
        }
        if !(self.depth_scale > 0.0) {
            return Err(Error::Argument("depth_scale must be positive".into()));
        }
        Ok(())
    }

    /// Perspective projection of a camera-space point. Pixel centers sit at
    /// integer coordinates.
    #[inline]
    pub fn project(&self, pc: &Vec3) -> Vec2 {
        Vec2::new(
            self.fx * pc.x / pc.z + self.cx,
            self.fy * pc.y / pc.z + self.cy,
        )
    }

    /// Projection together with its 2×3 Jacobian with respect to `pc`.
    #[inline]
    pub fn project_with_jacobian(&self, pc: &Vec3) -> (Vec2, [[f64; 3]; 2]) {
        let iz = 1.0 / pc.z;
        let uv = Vec2::new(self.fx * pc.x * iz + self.cx, self.fy * pc.y * iz + self.cy);
        let j = [
            [self.fx * iz, 0.0, -self.fx * pc.x * iz * iz],
            [0.0, self.fy * iz, -self.fy * pc.y * iz * iz],
        ];
        (uv, j)
    }

    /// Inverse projection of pixel `(u, v)` at depth `z` (camera z, meters).
    #[inline]
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) / self.fx * z, (v - self.cy) / self.fy * z, z)
    }

    /// Whether `uv` lies inside the pixel-center rectangle of the image.
    #[inline]
    pub fn contains(&self, uv: &Vec2) -> bool {
        uv.x >= 0.0
            && uv.y >= 0.0
            && uv.x <= (self.width - 1) as f64
            && uv.y <= (self.height - 1) as f64
    }
}

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left-multiplicative pose update `exp(ξ)·T` with `ξ = (v, ω)`: translation
/// first, rotation vector second.
pub fn apply_pose_delta(pose: &Pose, delta: &[f64; 6]) -> Pose {
    let dt = Vec3::new(delta[0], delta[1], delta[2]);
    let dw = Vec3::new(delta[3], delta[4], delta[5]);
    let step = Isometry3::from_parts(Translation3::from(dt), UnitQuaternion::from_scaled_axis(dw));
    step * pose
}

/// Rotation angle (degrees) and camera-center distance (meters) between two
/// world→camera poses.
pub fn pose_error(estimate: &Pose, truth: &Pose) -> (f64, f64) {
    let dr = estimate.rotation * truth.rotation.inverse();
    let c_est = estimate.inverse().translation.vector;
    let c_gt = truth.inverse().translation.vector;
    (dr.angle().to_degrees(), (c_est - c_gt).norm())
}

/// Builds a world→camera pose for a camera at `eye` looking at `target`,
/// image y pointing along `-up`.
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Pose {
    let z = (target - eye).normalize();
    let x = z.cross(up).normalize();
    let y = z.cross(&x);
    let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let rot = UnitQuaternion::from_matrix(&r);
    let t = -(rot * eye);
    Isometry3::from_parts(Translation3::from(t), rot)
}
