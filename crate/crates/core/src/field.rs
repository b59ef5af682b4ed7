//! Queries on a frozen snapshot of the learned field.
//!
//! The snapshot flattens every component in block-coordinate order, so
//! component order (and therefore sampling) is independent of how the map was
//! built. Occupancy uses the convention `1 − exp(−density / ρ₀)` with
//! `ρ₀ = 1 / voxel_size³`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{ln_normal, max_eigenvalue, Cholesky3, Mat3, Vec3, LN_2PI_CUBED};
use crate::map::GlobalMap;
use crate::model::{ComponentId, GaussianComponent, Hyperparameters};
use crate::spatial::point_to_block;

/// Blocks closer than this (Chebyshev) are always evaluated exactly.
const EXACT_RADIUS_BLOCKS: i64 = 4;
/// Far components are skipped when their contribution bound falls below this
/// fraction of the running density.
const FAR_SKIP_RATIO: f64 = 1e-12;
/// Mahalanobis radius for confidence lookups.
const CONFIDENCE_RADIUS_SQ: f64 = 36.0;

#[derive(Clone, Debug)]
pub struct FieldComponent {
    pub id: ComponentId,
    /// Normalized mixture weight.
    pub weight: f64,
    pub mean: Vec3,
    pub covariance: Mat3,
    pub confidence: f64,
    pub point_count: f64,
    pub birth_frame: u64,
    chol: Cholesky3,
    ln_weight_norm: f64,
    max_var: f64,
}

impl FieldComponent {
    #[inline]
    fn ln_responsibility(&self, p: &Vec3) -> f64 {
        self.weight.ln() + ln_normal(&self.chol, &(p - self.mean))
    }
}

/// Read-only mixture built from a map.
#[derive(Clone, Debug)]
pub struct Mixture {
    components: Vec<FieldComponent>,
    hyper: Hyperparameters,
}

impl Mixture {
    pub fn from_map(map: &GlobalMap) -> Result<Self> {
        let mut comps = Vec::new();
        for block in map.sorted_blocks() {
            for (index, c) in block.components.into_iter().enumerate() {
                comps.push((
                    ComponentId {
                        block: block.coord,
                        index,
                    },
                    c,
                ));
            }
        }
        Self::from_components(map.hyper().clone(), comps)
    }

    /// Builds a snapshot from explicit components (given in the desired order).
    pub fn from_components(hyper: Hyperparameters, comps: Vec<(ComponentId, GaussianComponent)>) -> Result<Self> {
        let total: f64 = crate::model::neumaier_sum(comps.iter().map(|(_, c)| c.weight));
        if comps.is_empty() || total <= 0.0 {
            return Err(Error::EmptyMap);
        }
        let mut components = Vec::with_capacity(comps.len());
        for (id, c) in comps {
            if c.weight <= 0.0 {
                continue;
            }
            let covariance = c.effective_covariance(&hyper);
            let Some(chol) = Cholesky3::new(&covariance) else {
                log::warn!("skipping component {id:?} with singular covariance");
                continue;
            };
            let weight = c.weight / total;
            components.push(FieldComponent {
                id,
                weight,
                mean: c.mean,
                covariance,
                confidence: c.confidence,
                point_count: c.weight,
                birth_frame: c.birth_frame,
                chol,
                ln_weight_norm: weight.ln() - 0.5 * (LN_2PI_CUBED + chol.ln_det()),
                max_var: max_eigenvalue(&covariance),
            });
        }
        if components.is_empty() {
            return Err(Error::EmptyMap);
        }
        Ok(Self { components, hyper })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[FieldComponent] {
        &self.components
    }

    pub fn hyper(&self) -> &Hyperparameters {
        &self.hyper
    }

    /// Mixture density. Components more than four blocks away are dropped
    /// when their upper bound is negligible against the running total.
    pub fn density(&self, p: &Vec3) -> f64 {
        let Ok(here) = point_to_block(p, &self.hyper) else {
            return 0.0;
        };
        let near = |c: &FieldComponent| c.id.block.chebyshev(&here) <= EXACT_RADIUS_BLOCKS;
        let mut total = 0.0;
        for c in self.components.iter().filter(|c| near(c)) {
            total += (c.ln_weight_norm - 0.5 * c.chol.mahalanobis_sq(&(p - c.mean))).exp();
        }
        for c in self.components.iter().filter(|c| !near(c)) {
            let d2 = (p - c.mean).norm_squared();
            let ln_bound = c.ln_weight_norm - 0.5 * d2 / c.max_var;
            if total > 0.0 && ln_bound < (FAR_SKIP_RATIO * total).ln() {
                continue;
            }
            total += (c.ln_weight_norm - 0.5 * c.chol.mahalanobis_sq(&(p - c.mean))).exp();
        }
        total
    }

    pub fn occupancy(&self, p: &Vec3) -> f64 {
        occupancy_from_density(self.density(p), self.hyper.voxel_size)
    }

    /// Ancestral draws: pick a component by weight, then draw from its Gaussian.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<(Vec3, ComponentId)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picker = WeightedIndex::new(self.components.iter().map(|c| c.weight))
            .expect("snapshot holds at least one positive weight");
        (0..count)
            .map(|_| {
                let c = &self.components[picker.sample(&mut rng)];
                let z = Vec3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                (c.mean + c.chol.mul_lower(&z), c.id)
            })
            .collect()
    }

    /// Confidence of the most responsible component within 6σ of `p`, or 0.
    pub fn confidence_at(&self, p: &Vec3) -> f64 {
        let mut best: Option<(f64, f64)> = None;
        for c in &self.components {
            let d = p - c.mean;
            if c.chol.mahalanobis_sq(&d) > CONFIDENCE_RADIUS_SQ {
                continue;
            }
            let r = c.ln_responsibility(p);
            if best.is_none_or(|(b, _)| r > b) {
                best = Some((r, c.confidence));
            }
        }
        best.map_or(0.0, |(_, conf)| conf)
    }
}

/// `1 − exp(−density · voxel_size³)`.
pub fn occupancy_from_density(density: f64, voxel_size: f64) -> f64 {
    let rho0 = 1.0 / (voxel_size * voxel_size * voxel_size);
    -(-density / rho0).exp_m1()
}

pub fn density(map: &GlobalMap, p: &Vec3) -> Result<f64> {
    Ok(Mixture::from_map(map)?.density(p))
}

pub fn occupancy(map: &GlobalMap, p: &Vec3) -> Result<f64> {
    Ok(Mixture::from_map(map)?.occupancy(p))
}

pub fn sample(map: &GlobalMap, count: usize, seed: u64) -> Result<Vec<(Vec3, ComponentId)>> {
    Ok(Mixture::from_map(map)?.sample(count, seed))
}

pub fn confidence_at(map: &GlobalMap, p: &Vec3) -> f64 {
    Mixture::from_map(map).map_or(0.0, |m| m.confidence_at(p))
}
