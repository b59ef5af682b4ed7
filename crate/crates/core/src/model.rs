//! Mixture-model domain types and per-component math.
//!
//! A component stores the raw scatter accumulator rather than a covariance.
//! Density evaluation uses the unbiased estimate `scatter / (weight - 1)`,
//! which makes sequential updates agree exactly with batch statistics.
//! Components holding fewer than two points fall back to the covariance
//! recorded at instantiation (base scale inflated by the seeding point's
//! measurement covariance).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ln_normal, Cholesky3, Mat3, Vec3, LN_2PI_CUBED};
use crate::map::GlobalMap;
use crate::spatial::BlockCoord;

/// One mixture component.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianComponent {
    /// Number of points absorbed.
    pub weight: f64,
    pub mean: Vec3,
    /// Sum of outer products of deviations from the running mean.
    pub scatter: Mat3,
    /// Accumulated fidelity weight; drives pruning and confidence coloring.
    pub confidence: f64,
    /// Covariance used while the component is immature.
    pub base_cov: Mat3,
    /// Frame index in which the component was instantiated.
    pub birth_frame: u64,
}

impl GaussianComponent {
    #[inline]
    pub fn is_mature(&self) -> bool {
        self.weight >= 2.0
    }

    /// Regularized unbiased covariance. Fails for immature components.
    pub fn covariance(&self, hyper: &Hyperparameters) -> Result<Mat3> {
        if !self.is_mature() {
            return Err(Error::ImmatureComponent(self.weight));
        }
        Ok(self.scatter / (self.weight - 1.0) + Mat3::identity() * hyper.regularization())
    }

    /// Covariance used for every density query: the regularized sample
    /// covariance when mature, otherwise the recorded base covariance.
    #[inline]
    pub fn effective_covariance(&self, hyper: &Hyperparameters) -> Mat3 {
        if self.is_mature() {
            self.scatter / (self.weight - 1.0) + Mat3::identity() * hyper.regularization()
        } else {
            self.base_cov
        }
    }

    /// Density with the base-distribution fallback for immature components.
    /// Returns 0 if the covariance cannot be factorized.
    pub fn density_or_base(&self, p: &Vec3, hyper: &Hyperparameters) -> f64 {
        match Cholesky3::new(&self.effective_covariance(hyper)) {
            Some(chol) => ln_normal(&chol, &(p - self.mean)).exp(),
            None => 0.0,
        }
    }
}

/// Trivariate normal density of a mature component at `p`.
pub fn component_density(c: &GaussianComponent, p: &Vec3, hyper: &Hyperparameters) -> Result<f64> {
    let cov = c.covariance(hyper)?;
    let chol = Cholesky3::new(&cov).ok_or(Error::SingularComponent)?;
    Ok(ln_normal(&chol, &(p - c.mean)).exp())
}

/// How the assignment step picks among its options.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "rule")]
pub enum AssignmentRule {
    /// Deterministic argmax of the assignment posterior.
    #[default]
    MaxPosterior,
    /// Draw from the assignment posterior with a seeded generator.
    Sample { seed: u64 },
}

/// Model and partition hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// DP concentration, split evenly across the blocks touched by a frame.
    pub alpha: f64,
    /// Isotropic scale of the base distribution, meters.
    pub base_sigma: f64,
    /// Per-block component cap.
    pub truncation: usize,
    /// Confidence floor below which components past their grace period are removed.
    pub prune_threshold: f64,
    /// Frames a new component is protected from pruning.
    pub grace_frames: u64,
    pub voxel_size: f64,
    /// Voxels per block edge.
    pub block_side: u32,
    pub hash_primes: [i64; 3],
    pub table_size: usize,
    pub assignment: AssignmentRule,
}

pub const DEFAULT_HASH_PRIMES: [i64; 3] = [73_856_093, 19_349_669, 83_492_791];
pub const DEFAULT_TABLE_SIZE: usize = 1 << 20;
pub const DEFAULT_GRACE_FRAMES: u64 = 3;

/// Number of 1σ observations' worth of fidelity a component must collect
/// before its grace period ends.
pub const PRUNE_SUPPORT_OBSERVATIONS: f64 = 40.0;

impl Hyperparameters {
    /// Defaults scaled to a voxel size: `base_sigma = voxel / 2` and the
    /// matching pruning floor.
    pub fn for_voxel_size(voxel_size: f64) -> Self {
        let base_sigma = voxel_size / 2.0;
        Self {
            alpha: 1.0,
            base_sigma,
            truncation: 5,
            prune_threshold: default_prune_threshold(base_sigma),
            grace_frames: DEFAULT_GRACE_FRAMES,
            voxel_size,
            block_side: 8,
            hash_primes: DEFAULT_HASH_PRIMES,
            table_size: DEFAULT_TABLE_SIZE,
            assignment: AssignmentRule::MaxPosterior,
        }
    }

    /// Edge length of one block, meters.
    #[inline]
    pub fn block_extent(&self) -> f64 {
        self.voxel_size * f64::from(self.block_side)
    }

    /// Diagonal loading added to mature covariances, m².
    #[inline]
    pub fn regularization(&self) -> f64 {
        let e = 1e-4 * self.voxel_size;
        e * e
    }

    pub fn base_cov(&self) -> Mat3 {
        Mat3::identity() * (self.base_sigma * self.base_sigma)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return fail("alpha must be positive");
        }
        if !(self.base_sigma > 0.0 && self.base_sigma.is_finite()) {
            return fail("base_sigma must be positive");
        }
        if self.truncation < 1 {
            return fail("truncation must be at least 1");
        }
        if !(self.prune_threshold >= 0.0 && self.prune_threshold.is_finite()) {
            return fail("prune_threshold must be nonnegative");
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return fail("voxel_size must be positive");
        }
        if self.block_side < 1 {
            return fail("block_side must be at least 1");
        }
        if self.table_size < 1 {
            return fail("table_size must be at least 1");
        }
        if self.hash_primes.iter().any(|&p| p <= 0) {
            return fail("hash primes must be positive");
        }
        Ok(())
    }
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self::for_voxel_size(0.05)
    }
}

/// Fidelity weight of a noise-free observation one standard deviation from the
/// mean of a base-distribution component.
pub fn unit_sigma_fidelity(base_sigma: f64) -> f64 {
    (-0.5 * (LN_2PI_CUBED + 1.0) - 3.0 * base_sigma.ln()).exp()
}

/// Default pruning floor for a given base scale.
pub fn default_prune_threshold(base_sigma: f64) -> f64 {
    PRUNE_SUPPORT_OBSERVATIONS * unit_sigma_fidelity(base_sigma)
}

/// Identifies a component by its block and its position in that block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentId {
    pub block: BlockCoord,
    pub index: usize,
}

/// Mixture weights `ωₖ / Σⱼ ωⱼ` over every component in the map, ordered by
/// block coordinate then component index.
pub fn normalized_weights(map: &GlobalMap) -> Result<Vec<(ComponentId, f64)>> {
    let mut raw = Vec::new();
    for block in map.sorted_blocks() {
        for (index, c) in block.components.iter().enumerate() {
            raw.push((
                ComponentId {
                    block: block.coord,
                    index,
                },
                c.weight,
            ));
        }
    }
    normalize(raw)
}

pub(crate) fn normalize<K>(raw: Vec<(K, f64)>) -> Result<Vec<(K, f64)>> {
    let total = neumaier_sum(raw.iter().map(|(_, w)| *w));
    if raw.is_empty() || total <= 0.0 {
        return Err(Error::EmptyMap);
    }
    Ok(raw.into_iter().map(|(k, w)| (k, w / total)).collect())
}

/// Compensated summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::BlockProcessor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mature(mean: Vec3, cov: Mat3, weight: f64) -> GaussianComponent {
        GaussianComponent {
            weight,
            mean,
            scatter: cov * (weight - 1.0),
            confidence: 0.0,
            base_cov: Mat3::identity(),
            birth_frame: 0,
        }
    }

    fn unregularized() -> Hyperparameters {
        // Tiny voxel so the diagonal loading is far below the test tolerance.
        let mut h = Hyperparameters::for_voxel_size(1e-6);
        h.base_sigma = 1.0;
        h
    }

    #[test]
    fn density_at_mean_of_unit_gaussian() {
        let c = mature(Vec3::zeros(), Mat3::identity(), 10.0);
        let d = component_density(&c, &Vec3::zeros(), &unregularized()).unwrap();
        assert!((d - 0.063_494_2).abs() < 1e-6, "{d}");
    }

    #[test]
    fn density_one_sigma_along_axis() {
        let c = mature(Vec3::zeros(), Mat3::identity(), 10.0);
        let d = component_density(&c, &Vec3::new(1.0, 0.0, 0.0), &unregularized()).unwrap();
        assert!((d - 0.038_510_9).abs() < 1e-6, "{d}");
    }

    #[test]
    fn density_at_mean_is_normalization_constant() {
        let h = unregularized();
        let cov = Mat3::new(0.5, 0.1, 0.0, 0.1, 0.3, 0.05, 0.0, 0.05, 0.2);
        let mu = Vec3::new(3.0, -2.0, 7.5);
        let c = mature(mu, cov, 4.0);
        let d = component_density(&c, &mu, &h).unwrap();
        let full = c.covariance(&h).unwrap();
        let expected = 1.0 / ((2.0 * std::f64::consts::PI).powi(3) * full.determinant()).sqrt();
        assert!((d / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn immature_component_is_rejected() {
        let mut c = mature(Vec3::zeros(), Mat3::identity(), 2.0);
        c.weight = 1.0;
        c.scatter = Mat3::zeros();
        assert!(matches!(
            component_density(&c, &Vec3::zeros(), &unregularized()),
            Err(Error::ImmatureComponent(_))
        ));
        // fallback goes through the recorded base covariance
        let d = c.density_or_base(&Vec3::zeros(), &unregularized());
        assert!((d - 0.063_494_2).abs() < 1e-6);
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let mut h = unregularized();
        h.voxel_size = 0.0;
        let c = GaussianComponent {
            weight: 3.0,
            mean: Vec3::zeros(),
            scatter: crate::linalg::outer(&Vec3::new(1.0, 0.0, 0.0)),
            confidence: 0.0,
            base_cov: Mat3::identity(),
            birth_frame: 0,
        };
        assert!(matches!(
            component_density(&c, &Vec3::zeros(), &h),
            Err(Error::SingularComponent)
        ));
    }

    #[test]
    fn planar_scatter_is_invertible_after_regularization() {
        let h = Hyperparameters::for_voxel_size(0.05);
        let mut scatter = Mat3::zeros();
        scatter[(0, 0)] = 1e-3;
        scatter[(1, 1)] = 1e-3;
        let c = GaussianComponent {
            weight: 10.0,
            mean: Vec3::zeros(),
            scatter,
            confidence: 0.0,
            base_cov: Mat3::identity(),
            birth_frame: 0,
        };
        assert!(component_density(&c, &Vec3::zeros(), &h).unwrap().is_finite());
    }

    #[test]
    fn monte_carlo_integral_is_one() {
        let h = unregularized();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let a = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let cov = a * a.transpose() + Mat3::identity() * 0.2;
            let c = mature(Vec3::new(1.0, 2.0, 3.0), cov, 20.0);
            let sig: Vec<f64> = (0..3).map(|i| cov[(i, i)].sqrt() * 6.0).collect();
            let volume: f64 = sig.iter().map(|s| 2.0 * s).product();
            let samples = 1_000_000;
            let mut acc = 0.0;
            for _ in 0..samples {
                let p = Vec3::new(
                    1.0 + rng.random_range(-sig[0]..sig[0]),
                    2.0 + rng.random_range(-sig[1]..sig[1]),
                    3.0 + rng.random_range(-sig[2]..sig[2]),
                );
                acc += component_density(&c, &p, &h).unwrap();
            }
            let integral = acc / samples as f64 * volume;
            assert!((integral - 1.0).abs() < 0.01, "{integral}");
        }
    }

    fn map_with_weights(ws: &[f64]) -> GlobalMap {
        let h = Hyperparameters::for_voxel_size(0.05);
        let map = GlobalMap::new(h).unwrap();
        let coord = BlockCoord::new(0, 0, 0);
        let mut block = BlockProcessor::new(coord);
        for &w in ws {
            block
                .components
                .push(mature(Vec3::zeros(), Mat3::identity(), w.max(2.0)));
            block.components.last_mut().unwrap().weight = w;
        }
        map.insert_block(block);
        map
    }

    #[test]
    fn weights_single_component() {
        let w = normalized_weights(&map_with_weights(&[5.0])).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].1, 1.0);
    }

    #[test]
    fn weights_examples() {
        let w: Vec<f64> = normalized_weights(&map_with_weights(&[1.0, 3.0]))
            .unwrap()
            .into_iter()
            .map(|x| x.1)
            .collect();
        assert_eq!(w, vec![0.25, 0.75]);
        let w: Vec<f64> = normalized_weights(&map_with_weights(&[2.0, 2.0, 4.0]))
            .unwrap()
            .into_iter()
            .map(|x| x.1)
            .collect();
        assert_eq!(w, vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn weights_of_empty_map() {
        let map = GlobalMap::new(Hyperparameters::default()).unwrap();
        assert!(matches!(normalized_weights(&map), Err(Error::EmptyMap)));
    }

    #[test]
    fn default_threshold_scales_with_base_sigma() {
        let a = default_prune_threshold(0.025);
        let b = default_prune_threshold(0.05);
        assert!((a / b - 8.0).abs() < 1e-9);
        let one_sigma = (2.0 * std::f64::consts::PI).powf(-1.5) * 0.025_f64.powi(-3) * (-0.5f64).exp();
        assert!((unit_sigma_fidelity(0.025) / one_sigma - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_bad_values() {
        let mut h = Hyperparameters::default();
        assert!(h.validate().is_ok());
        h.alpha = 0.0;
        assert!(h.validate().is_err());
        let mut h = Hyperparameters::default();
        h.truncation = 0;
        assert!(h.validate().is_err());
        let mut h = Hyperparameters::default();
        h.table_size = 0;
        assert!(h.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn weights_sum_to_one(ws in proptest::collection::vec(1u32..10_000, 1..200)) {
            let ws: Vec<f64> = ws.into_iter().map(f64::from).collect();
            let w = normalized_weights(&map_with_weights(&ws)).unwrap();
            let s: f64 = w.iter().map(|x| x.1).sum();
            proptest::prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
