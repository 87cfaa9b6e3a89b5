//! Pinhole cameras, the circular view rig, and per-pixel ray fields.
//!
//! Camera frame: x right, y up, the camera looks along -z. The stored
//! rotation maps camera coordinates to world coordinates, so its columns are
//! the world-space right, up and backward axes. World space is y-up.

use std::f64::consts::PI;

use crate::error::{Result, VsaError};
use crate::tensor::Tensor;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

/// Number of f64 values in a serialized pose: position, quaternion, fx, fy, cx, cy.
pub const POSE_RECORD_LEN: usize = 11;

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

fn det(m: &Mat3) -> f64 {
    dot(m[0], cross(m[1], m[2]))
}

/// Unit quaternion `[w, x, y, z]` of a rotation matrix, with `w >= 0`.
pub fn quat_from_matrix(m: &Mat3) -> [f64; 4] {
    let tr = m[0][0] + m[1][1] + m[2][2];
    let q = if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        [0.25 * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (1.0 + m[0][0] - m[1][1] - m[2][2]).sqrt() * 2.0;
        [(m[2][1] - m[1][2]) / s, 0.25 * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
    } else if m[1][1] > m[2][2] {
        let s = (1.0 + m[1][1] - m[0][0] - m[2][2]).sqrt() * 2.0;
        [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, 0.25 * s, (m[1][2] + m[2][1]) / s]
    } else {
        let s = (1.0 + m[2][2] - m[0][0] - m[1][1]).sqrt() * 2.0;
        [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, 0.25 * s]
    };
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sign = if q[0] < 0.0 { -1.0 } else { 1.0 };
    q.map(|x| sign * x / n)
}

pub fn matrix_from_quat(q: [f64; 4]) -> Mat3 {
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    /// Camera-to-world orientation as a unit quaternion `[w, x, y, z]`.
    pub orientation: [f64; 4],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraPose {
    /// Camera at `position` looking at `target`, with square pixels and the
    /// principal point at the image center.
    pub fn look_at(position: Vec3, target: Vec3, fov_deg: f64, width: usize, height: usize) -> Result<Self> {
        let forward = sub(target, position);
        if norm(forward) < 1e-12 {
            return Err(VsaError::invalid("camera position coincides with its target"));
        }
        let forward = normalize(forward);
        let mut right = cross(forward, [0.0, 1.0, 0.0]);
        if norm(right) < 1e-9 {
            // looking straight up or down; any horizontal right axis works
            right = [1.0, 0.0, 0.0];
        }
        let right = normalize(right);
        let up = cross(right, forward);
        let back = [-forward[0], -forward[1], -forward[2]];
        let rotation = [
            [right[0], up[0], back[0]],
            [right[1], up[1], back[1]],
            [right[2], up[2], back[2]],
        ];
        let orientation = quat_from_matrix(&rotation);
        let focal = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Ok(CameraPose {
            position,
            orientation,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
        })
    }

    /// Camera-to-world rotation matrix (row-major).
    pub fn rotation(&self) -> Mat3 {
        matrix_from_quat(self.orientation)
    }

    /// World-space viewing direction.
    pub fn forward(&self) -> Vec3 {
        let r = &self.rotation();
        [-r[0][2], -r[1][2], -r[2][2]]
    }

    /// Rejects rotations that are not proper orthonormal and non-positive focals.
    pub fn validate(&self) -> Result<()> {
        let qn = self.orientation.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !qn.is_finite() || (qn - 1.0).abs() > 1e-6 {
            return Err(VsaError::invalid(format!("camera orientation is not a unit quaternion (norm {qn})")));
        }
        let r = &self.rotation();
        let d = det(r);
        if !d.is_finite() || (d - 1.0).abs() > 1e-6 {
            return Err(VsaError::invalid(format!("camera rotation is not a proper rotation (det {d})")));
        }
        for i in 0..3 {
            for j in 0..3 {
                let col_dot = (0..3).map(|k| r[k][i] * r[k][j]).sum::<f64>();
                let want = if i == j { 1.0 } else { 0.0 };
                if (col_dot - want).abs() > 1e-6 {
                    return Err(VsaError::invalid("camera rotation is not orthonormal"));
                }
            }
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(VsaError::invalid(format!("bad intrinsics fx={} fy={}", self.fx, self.fy)));
        }
        if self.position.iter().any(|v| !v.is_finite()) {
            return Err(VsaError::invalid("camera position is not finite"));
        }
        Ok(())
    }

    /// World point to `(u, v, depth)` in pixel coordinates, `None` if the
    /// point is not in front of the camera.
    pub fn project(&self, p: Vec3) -> Option<(f64, f64, f64)> {
        let c = mat_t_vec(&self.rotation(), sub(p, self.position));
        let depth = -c[2];
        if depth <= 1e-9 {
            return None;
        }
        Some((self.cx + self.fx * c[0] / depth, self.cy - self.fy * c[1] / depth, depth))
    }

    /// Unit world-space direction through pixel coordinates `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vec3 {
        let d_cam = [(u - self.cx) / self.fx, -(v - self.cy) / self.fy, -1.0];
        normalize(mat_vec(&self.rotation(), d_cam))
    }

    /// Position, quaternion `[w,x,y,z]`, then fx, fy, cx, cy.
    pub fn to_record(&self) -> [f64; POSE_RECORD_LEN] {
        let q = self.orientation;
        let p = self.position;
        [p[0], p[1], p[2], q[0], q[1], q[2], q[3], self.fx, self.fy, self.cx, self.cy]
    }

    pub fn from_record(r: &[f64; POSE_RECORD_LEN]) -> Self {
        CameraPose {
            position: [r[0], r[1], r[2]],
            orientation: [r[3], r[4], r[5], r[6]],
            fx: r[7],
            fy: r[8],
            cx: r[9],
            cy: r[10],
        }
    }
}

/// `n` cameras on a circle around the origin at a fixed elevation, equal
/// azimuth steps, all looking at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct Rig {
    pub n: usize,
    pub radius: f64,
    pub elevation_deg: f64,
    pub fov_deg: f64,
}

impl Rig {
    pub const DEFAULT_RADIUS: f64 = 2.5;
    pub const DEFAULT_ELEVATION_DEG: f64 = 30.0;
    pub const DEFAULT_FOV_DEG: f64 = 50.0;

    pub fn new(n: usize) -> Self {
        Rig {
            n,
            radius: Self::DEFAULT_RADIUS,
            elevation_deg: Self::DEFAULT_ELEVATION_DEG,
            fov_deg: Self::DEFAULT_FOV_DEG,
        }
    }

    pub fn azimuth(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / self.n as f64
    }

    pub fn position(&self, i: usize) -> Vec3 {
        let (az, el) = (self.azimuth(i), self.elevation_deg.to_radians());
        [self.radius * el.cos() * az.sin(), self.radius * el.sin(), self.radius * el.cos() * az.cos()]
    }

    pub fn pose(&self, i: usize, width: usize, height: usize) -> Result<CameraPose> {
        if i >= self.n {
            return Err(VsaError::invalid(format!("view {i} out of range for a {}-view rig", self.n)));
        }
        CameraPose::look_at(self.position(i), [0.0; 3], self.fov_deg, width, height)
    }

    pub fn poses(&self, width: usize, height: usize) -> Result<Vec<CameraPose>> {
        (0..self.n).map(|i| self.pose(i, width, height)).collect()
    }
}

/// `(H, W, 6)` field of `concat(origin, direction)` through pixel centers.
pub fn ray_field(pose: &CameraPose, height: usize, width: usize) -> Result<Tensor<f64>> {
    pose.validate()?;
    let mut data = Vec::with_capacity(height * width * 6);
    for y in 0..height {
        for x in 0..width {
            let d = pose.ray_direction(x as f64 + 0.5, y as f64 + 0.5);
            data.extend_from_slice(&pose.position);
            data.extend_from_slice(&d);
        }
    }
    Tensor::new([height, width, 6], data)
}

/// Ray field average-pooled over each `p x p` patch: `[(H/p)(W/p), 6]` in
/// row-major patch order.
pub fn pooled_ray_tokens(pose: &CameraPose, height: usize, width: usize, p: usize) -> Result<Tensor<f64>> {
    if p == 0 || height % p != 0 || width % p != 0 {
        return Err(VsaError::shape(format!("{height}x{width} image does not tile into {p}x{p} patches")));
    }
    let field = ray_field(pose, height, width)?;
    let f = field.data();
    let (gh, gw) = (height / p, width / p);
    let mut out = vec![0.0; gh * gw * 6];
    let inv = 1.0 / (p * p) as f64;
    for y in 0..height {
        for x in 0..width {
            let tok = (y / p) * gw + x / p;
            let src = &f[(y * width + x) * 6..(y * width + x + 1) * 6];
            for (o, s) in out[tok * 6..tok * 6 + 6].iter_mut().zip(src) {
                *o += s * inv;
            }
        }
    }
    Tensor::new([gh * gw, 6], out)
}
