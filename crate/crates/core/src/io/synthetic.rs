//! Analytic scenes rendered into depth frames or point batches.

use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::inference::PointBatch;
use crate::io::mesh::TriangleMesh;
use crate::linalg::{Cholesky3, Mat3, Vec3};
use crate::sensor::{depth_sigma, DepthImage, Intrinsics, NoiseModel, SensorFrame};

/// Camera-to-world pose looking from `eye` toward `target`; image y points
/// roughly along `-up`.
pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Isometry3<f64> {
    let z = (target - eye).normalize();
    let mut x = z.cross(up);
    if x.norm() < 1e-9 {
        x = z.cross(&Vec3::x());
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    Isometry3::from_parts(Translation3::from(*eye), UnitQuaternion::from_rotation_matrix(&rot))
}

/// A square plane `z = height`, `|x|, |y| ≤ half_size`, scanned by a camera
/// that loops between `min_range` and `max_range` above it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlaneScan {
    pub frames: usize,
    pub half_size: f64,
    pub height: f64,
    pub min_range: f64,
    pub max_range: f64,
    /// Radius of the camera's lateral orbit.
    pub orbit: f64,
    /// Fraction of valid pixels replaced by uniform points in a cube of side
    /// `outlier_box` centered on the plane.
    pub outlier_fraction: f64,
    pub outlier_box: f64,
    pub add_noise: bool,
    pub intrinsics: Intrinsics,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for PlaneScan {
    fn default() -> Self {
        Self {
            frames: 100,
            half_size: 1.0,
            height: 0.0,
            min_range: 1.0,
            max_range: 3.0,
            orbit: 0.6,
            outlier_fraction: 0.0,
            outlier_box: 4.0,
            add_noise: true,
            intrinsics: Intrinsics::default(),
            noise: NoiseModel::default(),
            seed: 0,
        }
    }
}

impl PlaneScan {
    pub fn pose(&self, k: usize) -> Isometry3<f64> {
        let s = if self.frames > 1 {
            k as f64 / (self.frames - 1) as f64
        } else {
            0.0
        };
        let tau = std::f64::consts::TAU;
        let mid = 0.5 * (self.min_range + self.max_range);
        let amp = 0.5 * (self.max_range - self.min_range);
        let range = mid - amp * (tau * s).cos();
        let angle = 2.0 * tau * s;
        let lateral = Vec3::new(angle.cos(), angle.sin(), 0.0) * self.orbit;
        let eye = lateral + Vec3::new(0.0, 0.0, self.height + range);
        let target = -0.3 * lateral + Vec3::new(0.0, 0.0, self.height);
        look_at(&eye, &target, &Vec3::y())
    }

    /// Distance from `p` to the infinite plane.
    pub fn plane_distance(&self, p: &Vec3) -> f64 {
        (p.z - self.height).abs()
    }

    /// The plane as a two-triangle mesh.
    pub fn mesh(&self) -> TriangleMesh {
        let (h, z) = (self.half_size, self.height);
        TriangleMesh {
            vertices: vec![
                Vec3::new(-h, -h, z),
                Vec3::new(h, -h, z),
                Vec3::new(h, h, z),
                Vec3::new(-h, h, z),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
        }
    }

    pub fn render(&self, k: usize) -> SensorFrame {
        let intr = self.intrinsics;
        let pose = self.pose(k);
        let rot = pose.rotation.to_rotation_matrix().into_inner();
        let origin = pose.translation.vector;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let (w, h) = (intr.width, intr.height);
        let mut depth = vec![0.0; w as usize * h as usize];
        for v in 0..h {
            for u in 0..w {
                let ray = rot
                    * Vec3::new(
                        (f64::from(u) - intr.cx) / intr.fx,
                        (f64::from(v) - intr.cy) / intr.fy,
                        1.0,
                    );
                if ray.z.abs() < 1e-12 {
                    continue;
                }
                let s = (self.height - origin.z) / ray.z;
                if s <= 0.0 {
                    continue;
                }
                let hit = origin + ray * s;
                if hit.x.abs() > self.half_size || hit.y.abs() > self.half_size {
                    continue;
                }
                let mut z = s;
                if self.add_noise {
                    let sigma = depth_sigma(z, &self.noise.depth).unwrap_or(0.0);
                    z += sigma * rng.sample::<f64, _>(StandardNormal);
                }
                if z > 0.0 {
                    depth[v as usize * w as usize + u as usize] = z;
                }
            }
        }
        if self.outlier_fraction > 0.0 {
            let valid = depth.iter().filter(|&&z| z > 0.0).count();
            let wanted = (valid as f64 * self.outlier_fraction).round() as usize;
            let half = 0.5 * self.outlier_box;
            let inverse = pose.inverse();
            let mut placed = 0;
            let mut attempts = 0;
            while placed < wanted && attempts < wanted * 1000 {
                attempts += 1;
                let p = Point3::new(
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                    self.height + rng.random_range(-half..half),
                );
                let c = inverse * p;
                if c.z <= 0.05 {
                    continue;
                }
                let (u, v, z) = intr.project(&c.coords);
                let (ui, vi) = (u.round(), v.round());
                if ui < 0.0 || vi < 0.0 || ui >= f64::from(w) || vi >= f64::from(h) {
                    continue;
                }
                depth[vi as usize * w as usize + ui as usize] = z;
                placed += 1;
            }
        }
        SensorFrame {
            depth: DepthImage::new(w, h, depth).expect("buffer sized to intrinsics"),
            intrinsics: intr,
            pose,
        }
    }
}

/// One component of a ground-truth mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: [f64; 3],
    /// Packed upper triangle: xx, xy, xz, yy, yz, zz.
    pub covariance: [f64; 6],
}

/// Points drawn i.i.d. from a fixed Gaussian mixture, delivered in batches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmStream {
    pub components: Vec<GmmComponent>,
    pub frames: usize,
    pub points_per_frame: usize,
    pub seed: u64,
}

impl Default for GmmStream {
    /// Five well separated anisotropic clusters.
    fn default() -> Self {
        let sigma = 0.05;
        let s2 = sigma * sigma;
        let means = [
            [0.3, 0.3, 0.3],
            [1.1, 0.35, 0.25],
            [0.3, 1.2, 0.4],
            [1.0, 1.1, 1.05],
            [0.25, 0.4, 1.2],
        ];
        let shapes = [
            [s2, 0.0, 0.0, s2, 0.0, s2],
            [2.0 * s2, 0.3 * s2, 0.0, s2, 0.0, 0.5 * s2],
            [0.6 * s2, 0.0, 0.1 * s2, 1.5 * s2, 0.0, s2],
            [s2, -0.2 * s2, 0.0, 0.8 * s2, 0.2 * s2, 1.2 * s2],
            [1.3 * s2, 0.0, 0.0, 0.7 * s2, 0.0, 0.4 * s2],
        ];
        let weights = [0.3, 0.2, 0.15, 0.2, 0.15];
        Self {
            components: (0..5)
                .map(|i| GmmComponent {
                    weight: weights[i],
                    mean: means[i],
                    covariance: shapes[i],
                })
                .collect(),
            frames: 20,
            points_per_frame: 10_000,
            seed: 0,
        }
    }
}

impl GmmStream {
    /// Draws `count` points with the given seed.
    pub fn draw(&self, count: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let factors: Vec<(Vec3, Cholesky3)> = self
            .components
            .iter()
            .map(|c| {
                let cov: Mat3 = crate::linalg::sym_from_array(c.covariance);
                (
                    Vec3::from(c.mean),
                    Cholesky3::new(&cov).expect("ground-truth covariance must be positive definite"),
                )
            })
            .collect();
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (0..count)
            .map(|_| {
                let mut u = rng.random::<f64>() * total;
                let mut k = self.components.len() - 1;
                for (i, c) in self.components.iter().enumerate() {
                    if u < c.weight {
                        k = i;
                        break;
                    }
                    u -= c.weight;
                }
                let z = Vec3::new(
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                    normal.sample(&mut rng),
                );
                factors[k].0 + factors[k].1.mul_lower(&z)
            })
            .collect()
    }

    pub fn batch(&self, k: usize) -> PointBatch {
        let seed = self.seed ^ (k as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03);
        PointBatch::new(self.draw(self.points_per_frame, seed))
    }
}
