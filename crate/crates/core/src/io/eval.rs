//! Cloud-to-reference distance statistics.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::bvh::Bvh;
use crate::io::mesh::{Triangle, TriangleMesh};
use crate::linalg::Vec3;

/// Reference geometry for distance evaluation.
pub enum Reference {
    Mesh(TriangleMesh),
    Cloud(Vec<Vec3>),
}

/// Prebuilt acceleration structure over a reference.
pub enum ReferenceIndex {
    Mesh(Bvh<Triangle>),
    Cloud(Bvh<Vec3>),
}

impl ReferenceIndex {
    pub fn build(reference: &Reference) -> Result<Self> {
        match reference {
            Reference::Mesh(mesh) => {
                let (tris, skipped) = mesh.triangle_list();
                if skipped > 0 {
                    log::warn!("skipped {skipped} degenerate reference triangles");
                }
                if tris.is_empty() {
                    return Err(Error::Eval("reference mesh has no usable triangles".into()));
                }
                Ok(Self::Mesh(Bvh::build(tris)))
            }
            Reference::Cloud(points) => {
                if points.is_empty() {
                    return Err(Error::Eval("reference cloud is empty".into()));
                }
                Ok(Self::Cloud(Bvh::build(points.clone())))
            }
        }
    }

    /// Euclidean distance (m) from `p` to the reference.
    pub fn distance(&self, p: &Vec3) -> f64 {
        let d2 = match self {
            Self::Mesh(b) => b.nearest(p),
            Self::Cloud(b) => b.nearest(p),
        }
        .map_or(f64::INFINITY, |(_, d)| d);
        d2.sqrt()
    }
}

/// Distance summary in centimeters; std is the population std.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DistanceStats {
    pub mean_cm: f64,
    pub std_cm: f64,
    pub count: usize,
}

impl DistanceStats {
    /// Two-pass mean/std over distances given in meters.
    pub fn from_meters(d: &[f64]) -> Self {
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            mean_cm: mean * 100.0,
            std_cm: var.max(0.0).sqrt() * 100.0,
            count: d.len(),
        }
    }
}

pub fn distances(samples: &[Vec3], index: &ReferenceIndex) -> Vec<f64> {
    samples.par_iter().map(|p| index.distance(p)).collect()
}

pub fn cloud_distance(samples: &[Vec3], reference: &Reference) -> Result<DistanceStats> {
    if samples.is_empty() {
        return Err(Error::Eval("no sample points".into()));
    }
    let index = ReferenceIndex::build(reference)?;
    Ok(DistanceStats::from_meters(&distances(samples, &index)))
}

/// Symmetric Chamfer distance (m): mean nearest-neighbor distance a→b plus b→a.
pub fn chamfer(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Eval("chamfer needs two non-empty clouds".into()));
    }
    let one_way = |from: &[Vec3], to: &[Vec3]| {
        let idx = ReferenceIndex::Cloud(Bvh::build(to.to_vec()));
        distances(from, &idx).iter().sum::<f64>() / from.len() as f64
    };
    Ok(one_way(a, b) + one_way(b, a))
}

/// Nearest-rank percentile of an unsorted sample; `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize;
    v[rank.saturating_sub(1).min(v.len() - 1)]
}

/// Summary of a mapping run.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct EvalReport {
    pub frames: usize,
    pub points_in: u64,
    pub invalid_points: u64,
    pub distance: Option<DistanceStats>,
    pub sample_count: usize,
    pub frame_ms_p50: f64,
    pub frame_ms_p90: f64,
    pub frame_ms_max: f64,
    pub frames_per_second: f64,
    pub points_per_second: f64,
    pub block_count: usize,
    pub component_count: usize,
    pub components_pruned: u64,
    pub parameter_bytes: usize,
    pub table_overhead_bytes: usize,
    pub workers: usize,
    pub dataset_warnings: usize,
}
