//! Accumulated-confidence bookkeeping and thresholded pruning.

use crate::linalg::{Mat3, Vec3};
use crate::model::{GaussianComponent, Hyperparameters};
use crate::spatial::BlockProcessor;

/// Likelihood of `p` under `c`, discounted by the magnitude of the
/// measurement covariance: `L(p|c) * exp(-trace(p_cov) / voxel_size²)`.
pub fn fidelity_weight(p: &Vec3, p_cov: &Mat3, c: &GaussianComponent, hyper: &Hyperparameters) -> f64 {
    c.density_or_base(p, hyper) * noise_discount(p_cov, hyper)
}

#[inline]
pub fn noise_discount(p_cov: &Mat3, hyper: &Hyperparameters) -> f64 {
    let tau_sq = hyper.voxel_size * hyper.voxel_size;
    (-p_cov.trace() / tau_sq).exp()
}

/// Adds `w` to the component's confidence. Negative or non-finite weights are
/// ignored.
pub fn accumulate(mut c: GaussianComponent, w: f64) -> GaussianComponent {
    add_confidence(&mut c, w);
    c
}

#[inline]
pub(crate) fn add_confidence(c: &mut GaussianComponent, w: f64) {
    if w > 0.0 && w.is_finite() {
        c.confidence += w;
    }
}

/// Removes components whose confidence is below the threshold once they are
/// past the grace period. Survivors keep their order and parameters.
pub fn prune(proc: &mut BlockProcessor, hyper: &Hyperparameters, current_frame: u64) -> usize {
    let before = proc.components.len();
    proc.components.retain(|c| {
        let age = current_frame.saturating_sub(c.birth_frame);
        !(c.confidence < hyper.prune_threshold && age >= hyper.grace_frames)
    });
    before - proc.components.len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{instantiate_component, update_component};
    use crate::spatial::BlockCoord;

    fn hyper() -> Hyperparameters {
        Hyperparameters::for_voxel_size(0.05)
    }

    fn component(confidence: f64, birth: u64) -> GaussianComponent {
        let mut c = instantiate_component(&Vec3::new(confidence, 0.0, 0.0), &Mat3::zeros(), &hyper(), birth);
        c.confidence = confidence;
        c
    }

    #[test]
    fn fidelity_at_mean_without_noise_is_normalization() {
        let h = hyper();
        let c = instantiate_component(&Vec3::new(1.0, 2.0, 3.0), &Mat3::zeros(), &h, 0);
        let s = h.base_sigma;
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).powf(1.5) * s * s * s);
        let w = fidelity_weight(&c.mean, &Mat3::zeros(), &c, &h);
        assert!((w / norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_noise_discount_is_e_inverse() {
        let h = hyper();
        let c = instantiate_component(&Vec3::zeros(), &Mat3::zeros(), &h, 0);
        let tau2 = h.voxel_size * h.voxel_size;
        let p_cov = Mat3::identity() * (tau2 / 3.0);
        let p = Vec3::new(0.01, 0.0, 0.0);
        let ratio = fidelity_weight(&p, &p_cov, &c, &h) / fidelity_weight(&p, &Mat3::zeros(), &c, &h);
        assert!((ratio - (-1.0f64).exp()).abs() < 1e-12);
        assert!((ratio - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn fidelity_in_far_tail_vanishes() {
        let h = hyper();
        let c = instantiate_component(&Vec3::zeros(), &Mat3::zeros(), &h, 0);
        let norm = fidelity_weight(&Vec3::zeros(), &Mat3::zeros(), &c, &h);
        let far = Vec3::new(10.0 * h.base_sigma, 0.0, 0.0);
        assert!(fidelity_weight(&far, &Mat3::zeros(), &c, &h) < 1e-20 * norm);
    }

    #[test]
    fn accumulate_is_additive() {
        let c = component(1.0, 0);
        assert_eq!(accumulate(c.clone(), 0.0).confidence, 1.0);
        let twice = accumulate(accumulate(c.clone(), 0.3), 0.3);
        assert!((twice.confidence - 1.6).abs() < 1e-15);
        let ws = [0.5, 2.25, 0.125, 4.0, 1.0];
        let forward = ws.iter().fold(c.clone(), |c, &w| accumulate(c, w));
        let backward = ws.iter().rev().fold(c, |c, &w| accumulate(c, w));
        assert_eq!(forward.confidence, 1.0 + ws.iter().sum::<f64>());
        assert_eq!(forward.confidence, backward.confidence);
    }

    #[test]
    fn nothing_pruned_above_threshold() {
        let mut h = hyper();
        h.prune_threshold = 1.0;
        let mut proc = BlockProcessor::new(BlockCoord::default());
        proc.components = vec![component(5.0, 0), component(2.0, 0)];
        let before = proc.clone();
        assert_eq!(prune(&mut proc, &h, 100), 0);
        assert_eq!(proc, before);
    }

    #[test]
    fn unreinforced_outlier_is_pruned_after_grace() {
        let h = hyper();
        let mut proc = BlockProcessor::new(BlockCoord::default());
        // a well-supported component built from many nearby points
        let mut surface = instantiate_component(&Vec3::zeros(), &Mat3::zeros(), &h, 0);
        for i in 0..50 {
            let p = Vec3::new(0.001 * f64::from(i % 7), 0.001 * f64::from(i % 5), 0.0);
            let w = fidelity_weight(&p, &Mat3::zeros(), &surface, &h);
            surface = accumulate(update_component(&surface, &p), w);
        }
        let outlier = instantiate_component(&Vec3::new(0.3, 0.3, 0.3), &Mat3::zeros(), &h, 0);
        assert!(outlier.confidence < h.prune_threshold);
        proc.components = vec![surface, outlier];
        for frame in 0..h.grace_frames {
            assert_eq!(prune(&mut proc, &h, frame), 0, "pruned during grace at frame {frame}");
        }
        assert_eq!(prune(&mut proc, &h, h.grace_frames), 1);
        assert_eq!(proc.components.len(), 1);
        assert_eq!(proc.components[0].weight, 51.0);
    }

    #[test]
    fn zero_threshold_prunes_nothing() {
        let mut h = hyper();
        h.prune_threshold = 0.0;
        let mut proc = BlockProcessor::new(BlockCoord::default());
        proc.components = vec![component(0.0, 0), component(1e-30, 0)];
        assert_eq!(prune(&mut proc, &h, 1_000), 0);
    }

    #[test]
    fn prune_is_idempotent_and_keeps_order() {
        let mut h = hyper();
        h.prune_threshold = 1.0;
        let mut proc = BlockProcessor::new(BlockCoord::default());
        proc.components = vec![
            component(3.0, 0),
            component(0.5, 0),
            component(4.0, 0),
            component(0.1, 9),
            component(2.0, 0),
        ];
        assert_eq!(prune(&mut proc, &h, 10), 1);
        let conf: Vec<f64> = proc.components.iter().map(|c| c.confidence).collect();
        assert_eq!(conf, vec![3.0, 4.0, 0.1, 2.0]);
        let snapshot = proc.clone();
        assert_eq!(prune(&mut proc, &h, 10), 0);
        assert_eq!(proc, snapshot);
    }
}
