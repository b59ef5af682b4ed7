//! Depth frames to world points with per-point noise covariances.
//!
//! Pixel noise `(σ_u, σ_v, σ_z(z))` is propagated through the Jacobian
//! `[[1/fx, 0, (u−cx)/fx], [0, 1/fy, (v−cy)/fy], [0, 0, 1]]`, giving
//! `Σ = J · diag(σ_u², σ_v², σ_z²) · Jᵀ` in the camera frame, then rotated into
//! the world frame.

use nalgebra::{Isometry3, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PointBatch;
use crate::linalg::{Mat3, Vec3};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < f64::from(self.width)
            && self.cy >= 0.0
            && self.cy < f64::from(self.height);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid intrinsics {self:?}")))
        }
    }

    /// Camera-frame point to `(u, v, z)`.
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy, p.z)
    }

    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }
}

impl Default for Intrinsics {
    /// Kinect-style VGA camera.
    fn default() -> Self {
        Self {
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }
}

/// Axial depth noise `σ_z(z) = offset + quadratic · (z − vertex)²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthNoise {
    pub offset: f64,
    pub quadratic: f64,
    pub vertex: f64,
}

impl Default for DepthNoise {
    fn default() -> Self {
        Self {
            offset: 0.0012,
            quadratic: 0.0019,
            vertex: 0.4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Pixel standard deviation.
    pub sigma_uv: f64,
    pub depth: DepthNoise,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_uv: 0.5,
            depth: DepthNoise::default(),
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_uv > 0.0) || self.depth.offset <= 0.0 || self.depth.quadratic < 0.0 {
            return Err(Error::Config(format!("invalid noise model {self:?}")));
        }
        Ok(())
    }
}

/// Depth standard deviation in meters.
pub fn depth_sigma(z: f64, model: &DepthNoise) -> Result<f64> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::InvalidDepth(z));
    }
    let d = z - model.vertex;
    Ok(model.offset + model.quadratic * d * d)
}

pub fn jacobian(u: f64, v: f64, intr: &Intrinsics) -> Mat3 {
    Mat3::new(
        1.0 / intr.fx,
        0.0,
        (u - intr.cx) / intr.fx,
        0.0,
        1.0 / intr.fy,
        (v - intr.cy) / intr.fy,
        0.0,
        0.0,
        1.0,
    )
}

/// Camera-frame covariance `J · diag(σ_u², σ_v², σ_z²) · Jᵀ`, expanded so the
/// result is exactly symmetric.
pub fn point_covariance(u: f64, v: f64, z: f64, intr: &Intrinsics, noise: &NoiseModel) -> Result<Mat3> {
    let sz = depth_sigma(z, &noise.depth)?;
    let var_uv = noise.sigma_uv * noise.sigma_uv;
    let var_z = sz * sz;
    let a = 1.0 / intr.fx;
    let b = (u - intr.cx) / intr.fx;
    let c = 1.0 / intr.fy;
    let d = (v - intr.cy) / intr.fy;
    let xx = a * a * var_uv + b * b * var_z;
    let yy = c * c * var_uv + d * d * var_z;
    let xy = b * d * var_z;
    let xz = b * var_z;
    let yz = d * var_z;
    Ok(Mat3::new(xx, xy, xz, xy, yy, yz, xz, yz, var_z))
}

/// Row-major depth image in meters; 0 or non-finite marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::Dataset(format!(
                "depth buffer has {} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    #[inline]
    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.data[v as usize * self.width as usize + u as usize]
    }
}

/// A depth image with its camera and camera-to-world pose.
#[derive(Clone, Debug)]
pub struct SensorFrame {
    pub depth: DepthImage,
    pub intrinsics: Intrinsics,
    pub pose: Isometry3<f64>,
}

/// World-frame points and covariances for every valid pixel, taking every
/// `stride`-th row and column. Output is in row-major pixel order.
pub fn backproject(frame: &SensorFrame, noise: &NoiseModel, stride: u32) -> PointBatch {
    let stride = stride.max(1);
    let intr = &frame.intrinsics;
    let rot = frame.pose.rotation.to_rotation_matrix().into_inner();
    let rows: Vec<u32> = (0..frame.depth.height.min(intr.height))
        .step_by(stride as usize)
        .collect();
    let width = frame.depth.width.min(intr.width);
    let per_row: Vec<(Vec<Vec3>, Vec<Mat3>)> = rows
        .par_iter()
        .map(|&v| {
            let mut pts = Vec::new();
            let mut covs = Vec::new();
            for u in (0..width).step_by(stride as usize) {
                let z = frame.depth.get(u, v);
                if !(z > 0.0 && z.is_finite()) {
                    continue;
                }
                let (uf, vf) = (f64::from(u), f64::from(v));
                let Ok(cov) = point_covariance(uf, vf, z, intr, noise) else {
                    continue;
                };
                let cam = intr.unproject(uf, vf, z);
                pts.push((frame.pose * Point3::from(cam)).coords);
                let w = rot * cov * rot.transpose();
                covs.push((w + w.transpose()) * 0.5);
            }
            (pts, covs)
        })
        .collect();
    let total = per_row.iter().map(|r| r.0.len()).sum();
    let mut points = Vec::with_capacity(total);
    let mut covariances = Vec::with_capacity(total);
    for (p, c) in per_row {
        points.extend(p);
        covariances.extend(c);
    }
    PointBatch {
        points,
        covariances: Some(covariances),
    }
}
