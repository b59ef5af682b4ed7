//! Sequential CRP inference inside a block and the parallel frame loop.
//!
//! Each point of a block is scored against every existing component and
//! against a freshly instantiated one. Existing component `k` gets
//! `ωₖ / (n − 1 + α/J) · L(p | θₖ)` and the new option gets
//! `(α/J) / (n − 1 + α/J) · L₀(p)`, where `J` is the number of blocks touched
//! by the frame and `n − 1` the number of points the block has already seen.
//! `L` is the component density with the point's measurement covariance added
//! to the component covariance; `L₀` is the normalization constant of
//! `N(0, base_sigma²·I + p_cov)`. Once a block holds `truncation` components
//! the new option is disabled.
//!
//! Blocks never communicate during a frame and their points are processed in
//! input order, so the resulting map does not depend on the worker count.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{ln_normal, outer, Cholesky3, Mat3, Vec3, LN_2PI_CUBED};
use crate::map::GlobalMap;
use crate::model::{AssignmentRule, GaussianComponent, Hyperparameters};
use crate::refinement::{self, add_confidence, noise_discount};
use crate::spatial::{route_frame, BlockCoord, BlockProcessor};

/// A set of world-frame points with optional per-point covariances.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointBatch {
    pub points: Vec<Vec3>,
    /// Same length as `points` when present; absent means noise-free.
    pub covariances: Option<Vec<Mat3>>,
}

impl PointBatch {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            covariances: None,
        }
    }

    pub fn with_covariances(points: Vec<Vec3>, covariances: Vec<Mat3>) -> Result<Self> {
        if points.len() != covariances.len() {
            return Err(Error::InvalidPoint(format!(
                "{} points but {} covariances",
                points.len(),
                covariances.len()
            )));
        }
        Ok(Self {
            points,
            covariances: Some(covariances),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    #[inline]
    pub fn covariance(&self, i: usize) -> Mat3 {
        self.covariances.as_ref().map_or_else(Mat3::zeros, |c| c[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignmentKind {
    Existing(usize),
    New,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Assignment {
    pub kind: AssignmentKind,
    /// Posterior mass of the chosen option at decision time.
    pub posterior: f64,
}

/// Counters for one integrated frame. Merging is commutative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FrameStats {
    pub points_in: usize,
    pub points_routed: usize,
    pub invalid_points: usize,
    pub blocks_touched: usize,
    pub blocks_allocated: usize,
    pub components_created: usize,
    pub components_pruned: usize,
    pub wall_time: Duration,
}

impl FrameStats {
    fn merge(mut self, other: FrameStats) -> FrameStats {
        self.points_in += other.points_in;
        self.points_routed += other.points_routed;
        self.invalid_points += other.invalid_points;
        self.blocks_touched += other.blocks_touched;
        self.blocks_allocated += other.blocks_allocated;
        self.components_created += other.components_created;
        self.components_pruned += other.components_pruned;
        self.wall_time += other.wall_time;
        self
    }
}

fn check_j(j: usize) -> Result<f64> {
    if j == 0 {
        return Err(Error::Config("number of active processors must be at least 1".into()));
    }
    Ok(j as f64)
}

/// CRP prior mass of each option with the likelihood fixed to one; the last
/// entry is the new-component option.
pub fn prior_scores(proc: &BlockProcessor, hyper: &Hyperparameters, j: usize) -> Result<Vec<f64>> {
    hyper.validate()?;
    let a = hyper.alpha / check_j(j)?;
    let denom = proc.point_count as f64 + a;
    let mut out: Vec<f64> = proc.components.iter().map(|c| c.weight / denom).collect();
    out.push(a / denom);
    Ok(out)
}

/// Unnormalized posterior score of each option; the last entry is the
/// new-component option (zero when the block is at its truncation limit).
pub fn assignment_scores(
    p: &Vec3,
    p_cov: &Mat3,
    proc: &BlockProcessor,
    hyper: &Hyperparameters,
    j: usize,
) -> Result<Vec<f64>> {
    hyper.validate()?;
    let a = hyper.alpha / check_j(j)?;
    let covs: Vec<Mat3> = proc.components.iter().map(|c| c.effective_covariance(hyper)).collect();
    let mut scratch = Vec::new();
    let new = ln_scores(p, p_cov, proc, &covs, hyper, a, &mut scratch);
    let mut out: Vec<f64> = scratch.iter().map(|s| s.exp()).collect();
    out.push(new.map_or(0.0, f64::exp));
    Ok(out)
}

/// Log-scores of existing components into `out`; returns the new-option
/// log-score, or `None` if truncation forbids it.
fn ln_scores(
    p: &Vec3,
    p_cov: &Mat3,
    proc: &BlockProcessor,
    covs: &[Mat3],
    hyper: &Hyperparameters,
    a: f64,
    out: &mut Vec<f64>,
) -> Option<f64> {
    let ln_denom = (proc.point_count as f64 + a).ln();
    out.clear();
    for (c, cov) in proc.components.iter().zip(covs) {
        let ln_lik = match Cholesky3::new(&(cov + p_cov)) {
            Some(chol) => ln_normal(&chol, &(p - c.mean)),
            None => f64::NEG_INFINITY,
        };
        out.push(c.weight.ln() - ln_denom + ln_lik);
    }
    if proc.components.len() >= hyper.truncation {
        return None;
    }
    let ln_base = Cholesky3::new(&(hyper.base_cov() + p_cov))
        .map_or(f64::NEG_INFINITY, |chol| -0.5 * (LN_2PI_CUBED + chol.ln_det()));
    Some(a.ln() - ln_denom + ln_base)
}

/// Picks an option from log-scores. Ties go to the lowest index, and to an
/// existing component over the new one.
fn choose<R: Rng>(
    existing: &[f64],
    new: Option<f64>,
    p: &Vec3,
    proc: &BlockProcessor,
    rng: Option<&mut R>,
) -> Assignment {
    let mut best: Option<(AssignmentKind, f64)> = None;
    for (k, &s) in existing.iter().enumerate() {
        if s.is_nan() || s == f64::NEG_INFINITY {
            continue;
        }
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((AssignmentKind::Existing(k), s));
        }
    }
    if let Some(s) = new.filter(|s| s.is_finite()) {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((AssignmentKind::New, s));
        }
    }
    let Some((argmax, max)) = best else {
        // nothing has positive likelihood and truncation forbids a new component
        let k = nearest_mean(p, proc);
        return Assignment {
            kind: AssignmentKind::Existing(k),
            posterior: 0.0,
        };
    };
    let weight = |s: f64| if s.is_nan() { 0.0 } else { (s - max).exp() };
    let total: f64 = existing.iter().map(|&s| weight(s)).sum::<f64>() + new.map_or(0.0, weight);
    let (kind, score) = match rng {
        None => (argmax, max),
        Some(rng) => {
            let mut u = rng.random::<f64>() * total;
            let mut pick = (argmax, max);
            let options = existing
                .iter()
                .enumerate()
                .map(|(k, &s)| (AssignmentKind::Existing(k), s))
                .chain(new.map(|s| (AssignmentKind::New, s)));
            for (kind, s) in options {
                let w = weight(s);
                if w > 0.0 && u < w {
                    pick = (kind, s);
                    break;
                }
                u -= w;
            }
            pick
        }
    };
    Assignment {
        kind,
        posterior: weight(score) / total,
    }
}

fn nearest_mean(p: &Vec3, proc: &BlockProcessor) -> usize {
    let mut best = (0, f64::INFINITY);
    for (k, c) in proc.components.iter().enumerate() {
        let d = (p - c.mean).norm_squared();
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0
}

/// Maximum-posterior assignment of `p` within `proc`.
pub fn assign(p: &Vec3, p_cov: &Mat3, proc: &BlockProcessor, hyper: &Hyperparameters, j: usize) -> Result<Assignment> {
    hyper.validate()?;
    let a = hyper.alpha / check_j(j)?;
    let covs: Vec<Mat3> = proc.components.iter().map(|c| c.effective_covariance(hyper)).collect();
    let mut scratch = Vec::new();
    let new = ln_scores(p, p_cov, proc, &covs, hyper, a, &mut scratch);
    Ok(choose::<ChaCha8Rng>(&scratch, new, p, proc, None))
}

/// One incremental step of count, mean and scatter.
pub fn update_component(c: &GaussianComponent, p: &Vec3) -> GaussianComponent {
    let mut out = c.clone();
    absorb(&mut out, p);
    out
}

#[inline]
fn absorb(c: &mut GaussianComponent, p: &Vec3) {
    let w = c.weight;
    let d = p - c.mean;
    c.weight = w + 1.0;
    c.mean += d / (w + 1.0);
    c.scatter += outer(&d) * (w / (w + 1.0));
}

/// A one-point component centered on `p`. Its immature covariance is the base
/// scale inflated by the point's measurement covariance, and its confidence
/// starts at the point's fidelity weight.
pub fn instantiate_component(p: &Vec3, p_cov: &Mat3, hyper: &Hyperparameters, frame: u64) -> GaussianComponent {
    let mut c = GaussianComponent {
        weight: 1.0,
        mean: *p,
        scatter: Mat3::zeros(),
        confidence: 0.0,
        base_cov: hyper.base_cov() + p_cov,
        birth_frame: frame,
    };
    c.confidence = refinement::fidelity_weight(p, p_cov, &c, hyper);
    c
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn block_rng(seed: u64, frame: u64, coord: &BlockCoord) -> ChaCha8Rng {
    let mut s = splitmix64(seed ^ splitmix64(frame));
    for v in [coord.x, coord.y, coord.z] {
        s = splitmix64(s ^ (v as u32 as u64));
    }
    ChaCha8Rng::seed_from_u64(s)
}

#[derive(Default)]
struct BlockOutcome {
    created: usize,
    invalid: usize,
    processed: usize,
}

/// Runs the sequential assign/update loop over one block's points.
fn infer_block(
    proc: &mut BlockProcessor,
    batch: &PointBatch,
    indices: &[usize],
    hyper: &Hyperparameters,
    a: f64,
    frame: u64,
) -> BlockOutcome {
    let mut out = BlockOutcome::default();
    let mut rng = match hyper.assignment {
        AssignmentRule::MaxPosterior => None,
        AssignmentRule::Sample { seed } => Some(block_rng(seed, frame, &proc.coord)),
    };
    let mut covs: Vec<Mat3> = proc.components.iter().map(|c| c.effective_covariance(hyper)).collect();
    let mut scratch = Vec::with_capacity(hyper.truncation + 1);
    for &i in indices {
        let p = &batch.points[i];
        let p_cov = batch.covariance(i);
        if !p_cov.iter().all(|v| v.is_finite()) {
            out.invalid += 1;
            continue;
        }
        let new = ln_scores(p, &p_cov, proc, &covs, hyper, a, &mut scratch);
        let choice = choose(&scratch, new, p, proc, rng.as_mut());
        match choice.kind {
            AssignmentKind::Existing(k) => {
                let c = &mut proc.components[k];
                let w = match Cholesky3::new(&covs[k]) {
                    Some(chol) => ln_normal(&chol, &(p - c.mean)).exp() * noise_discount(&p_cov, hyper),
                    None => 0.0,
                };
                absorb(c, p);
                add_confidence(c, w);
                covs[k] = c.effective_covariance(hyper);
            }
            AssignmentKind::New => {
                let c = instantiate_component(p, &p_cov, hyper, frame);
                covs.push(c.effective_covariance(hyper));
                proc.components.push(c);
                out.created += 1;
            }
        }
        proc.point_count += 1;
        out.processed += 1;
    }
    out
}

/// Integrates one frame: route, infer every touched block in parallel on the
/// current rayon pool, prune every block, and advance the frame counter.
///
/// Pruning sweeps untouched blocks too, so a component whose grace period
/// expires while its block is out of view is still removed.
pub fn process_frame(batch: &PointBatch, map: &mut GlobalMap) -> FrameStats {
    let start = Instant::now();
    let frame = map.frame_counter();
    let mut stats = FrameStats {
        points_in: batch.len(),
        ..FrameStats::default()
    };
    if batch.is_empty() {
        stats.components_pruned = prune_all(map, frame);
        map.set_frame_counter(frame + 1);
        stats.wall_time = start.elapsed();
        return stats;
    }
    let routed = route_frame(&batch.points, map);
    let hyper = map.hyper();
    let j = routed.blocks.len();
    stats.invalid_points = routed.invalid_points;
    stats.blocks_touched = j;
    stats.blocks_allocated = routed.blocks_allocated;
    if j > 0 {
        let a = hyper.alpha / j as f64;
        let merged = routed
            .blocks
            .par_iter()
            .with_max_len(1)
            .map(|rb| {
                let mut proc = rb.handle.lock();
                let o = infer_block(&mut proc, batch, &rb.indices, hyper, a, frame);
                FrameStats {
                    points_routed: o.processed,
                    invalid_points: o.invalid,
                    components_created: o.created,
                    ..FrameStats::default()
                }
            })
            .reduce(FrameStats::default, FrameStats::merge);
        stats = stats.merge(merged);
    }
    stats.components_pruned = prune_all(map, frame);
    map.set_frame_counter(frame + 1);
    stats.wall_time = start.elapsed();
    stats
}

fn prune_all(map: &GlobalMap, frame: u64) -> usize {
    let hyper = map.hyper();
    map.table()
        .handles()
        .par_iter()
        .map(|(_, h)| refinement::prune(&mut h.lock(), hyper, frame))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn hyper() -> Hyperparameters {
        let mut h = Hyperparameters::for_voxel_size(0.05);
        h.table_size = 1 << 12;
        h
    }

    fn component_with_weight(w: f64, mean: Vec3) -> GaussianComponent {
        let mut c = instantiate_component(&mean, &Mat3::zeros(), &hyper(), 0);
        c.weight = w;
        c.scatter = Mat3::identity() * 1e-4 * (w - 1.0).max(0.0);
        c
    }

    fn processor(ws: &[f64], n: u64) -> BlockProcessor {
        let mut proc = BlockProcessor::new(BlockCoord::default());
        proc.components = ws.iter().map(|&w| component_with_weight(w, Vec3::zeros())).collect();
        proc.point_count = n;
        proc
    }

    #[test]
    fn prior_half_and_half() {
        // n = 2 at decision time, one component with ω = 1, α/J = 1
        let mut h = hyper();
        h.alpha = 3.0;
        let s = prior_scores(&processor(&[1.0], 1), &h, 3).unwrap();
        assert_eq!(s, vec![0.5, 0.5]);
    }

    #[test]
    fn prior_empty_processor() {
        let s = prior_scores(&processor(&[], 0), &hyper(), 1).unwrap();
        assert_eq!(s, vec![1.0]);
    }

    #[test]
    fn prior_two_components() {
        let s = prior_scores(&processor(&[2.0, 2.0], 4), &hyper(), 1).unwrap();
        assert_eq!(s, vec![0.4, 0.4, 0.2]);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn prior_rejects_zero_processors() {
        assert!(matches!(
            prior_scores(&processor(&[], 0), &hyper(), 0),
            Err(Error::Config(_))
        ));
        let mut bad = hyper();
        bad.alpha = -1.0;
        assert!(assignment_scores(&Vec3::zeros(), &Mat3::zeros(), &processor(&[], 0), &bad, 1).is_err());
    }

    #[test]
    fn empty_processor_assigns_new() {
        let a = assign(&Vec3::zeros(), &Mat3::zeros(), &processor(&[], 0), &hyper(), 4).unwrap();
        assert_eq!(a.kind, AssignmentKind::New);
        assert_eq!(a.posterior, 1.0);
    }

    #[test]
    fn point_at_mature_mean_joins_it() {
        let h = hyper();
        let sigma = 0.01;
        let mut proc = BlockProcessor::new(BlockCoord::default());
        for mu in [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(0.2, 0.0, 0.0),
            Vec3::new(0.0, 0.2, 0.0),
        ] {
            let mut c = component_with_weight(50.0, mu);
            c.scatter = Mat3::identity() * sigma * sigma * 49.0;
            proc.components.push(c);
        }
        proc.point_count = 150;
        let p = Vec3::new(0.2, 0.0, 0.0);
        let a = assign(&p, &Mat3::zeros(), &proc, &h, 10).unwrap();
        assert_eq!(a.kind, AssignmentKind::Existing(1));
        // brute force: recompute every score from the closed-form normal density
        let scores = assignment_scores(&p, &Mat3::zeros(), &proc, &h, 10).unwrap();
        let denom = 150.0 + h.alpha / 10.0;
        for (k, c) in proc.components.iter().enumerate() {
            let var = sigma * sigma + h.regularization();
            let d2 = (p - c.mean).norm_squared();
            let dens = (2.0 * std::f64::consts::PI * var).powf(-1.5) * (-0.5 * d2 / var).exp();
            let expected = 50.0 / denom * dens;
            assert!((scores[k] - expected).abs() <= 1e-9 * expected.max(1e-300), "{k}");
        }
        let s = h.base_sigma;
        let base = (2.0 * std::f64::consts::PI * s * s).powf(-1.5);
        assert!((scores[3] / ((h.alpha / 10.0) / denom * base) - 1.0).abs() < 1e-12);
        let best = scores.iter().cloned().fold(0.0, f64::max);
        assert_eq!(best, scores[1]);
    }

    #[test]
    fn truncation_forces_existing() {
        let mut h = hyper();
        h.truncation = 2;
        let mut proc = processor(&[10.0, 10.0], 20);
        proc.components[1].mean = Vec3::new(0.1, 0.0, 0.0);
        let p = Vec3::new(50.0, 0.0, 0.0);
        let scores = assignment_scores(&p, &Mat3::zeros(), &proc, &h, 1).unwrap();
        assert_eq!(scores[2], 0.0);
        let a = assign(&p, &Mat3::zeros(), &proc, &h, 1).unwrap();
        assert_eq!(a.kind, AssignmentKind::Existing(1));
    }

    #[test]
    fn zero_likelihood_falls_back_to_nearest_mean() {
        let mut h = hyper();
        h.truncation = 3;
        let mut proc = processor(&[10.0, 10.0, 10.0], 30);
        for (k, c) in proc.components.iter_mut().enumerate() {
            c.mean = Vec3::new(k as f64, 0.0, 0.0);
            c.scatter = Mat3::zeros();
        }
        h.voxel_size = 1e-200;
        let a = assign(&Vec3::new(1.9, 0.0, 0.0), &Mat3::zeros(), &proc, &h, 1).unwrap();
        assert_eq!(a.kind, AssignmentKind::Existing(2));
        assert_eq!(a.posterior, 0.0);
    }

    #[test]
    fn ties_prefer_lowest_index() {
        let proc = processor(&[5.0, 5.0], 10);
        let a = assign(&Vec3::new(0.001, 0.0, 0.0), &Mat3::zeros(), &proc, &hyper(), 1).unwrap();
        assert_eq!(a.kind, AssignmentKind::Existing(0));
    }

    #[test]
    fn update_two_points() {
        let c = instantiate_component(&Vec3::zeros(), &Mat3::zeros(), &hyper(), 0);
        let u = update_component(&c, &Vec3::new(2.0, 0.0, 0.0));
        assert_eq!(u.weight, 2.0);
        assert_eq!(u.mean, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(u.scatter[(0, 0)], 2.0);
    }

    #[test]
    fn update_with_point_at_mean() {
        let mut c = instantiate_component(&Vec3::new(1.0, 1.0, 1.0), &Mat3::zeros(), &hyper(), 0);
        c.weight = 7.0;
        c.scatter = Mat3::identity() * 0.3;
        let u = update_component(&c, &c.mean);
        assert_eq!(u.weight, 8.0);
        assert_eq!(u.mean, c.mean);
        assert_eq!(u.scatter, c.scatter);
    }

    #[test]
    fn update_sequence_matches_batch() {
        let pts = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let mut c = instantiate_component(&pts[0], &Mat3::zeros(), &hyper(), 0);
        for p in &pts[1..] {
            c = update_component(&c, p);
        }
        assert_eq!(c.mean, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(c.scatter[(0, 0)], 2.0);
        assert_eq!(c.weight, 3.0);
    }

    #[test]
    fn instantiate_examples() {
        let h = hyper();
        let c = instantiate_component(&Vec3::new(1.0, 2.0, 3.0), &Mat3::zeros(), &h, 4);
        assert_eq!(c.mean, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(c.weight, 1.0);
        assert_eq!(c.scatter, Mat3::zeros());
        assert_eq!(c.base_cov, h.base_cov());
        assert_eq!(c.birth_frame, 4);
        let d = instantiate_component(&Vec3::new(-5.0, 0.0, 9.0), &Mat3::zeros(), &h, 4);
        assert_eq!(GaussianComponent { mean: c.mean, ..d }, c);
        let p_cov = Mat3::identity() * 1e-4;
        let e = instantiate_component(&Vec3::zeros(), &p_cov, &h, 0);
        assert_eq!(e.base_cov, h.base_cov() + p_cov);
    }

    #[test]
    fn empty_frame_leaves_map_unchanged() {
        let mut map = GlobalMap::new(hyper()).unwrap();
        let stats = process_frame(&PointBatch::default(), &mut map);
        assert_eq!(
            FrameStats {
                wall_time: Duration::ZERO,
                ..stats
            },
            FrameStats::default()
        );
        assert_eq!(map.block_count(), 0);
        assert_eq!(map.frame_counter(), 1);
    }

    #[test]
    fn single_gaussian_block_recovers_sample_mean() {
        let mut h = hyper();
        h.truncation = 20;
        let mut map = GlobalMap::new(h).unwrap();
        let center = Vec3::new(0.2, 0.2, 0.2);
        let sigma = 0.02;
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<Vec3> = (0..1000)
            .map(|_| {
                center
                    + Vec3::new(
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                        normal.sample(&mut rng),
                    )
            })
            .collect();
        let sample_mean = pts.iter().sum::<Vec3>() / 1000.0;
        let stats = process_frame(&PointBatch::new(pts), &mut map);
        assert_eq!(stats.points_routed, 1000);
        let blocks = map.sorted_blocks();
        assert_eq!(blocks.len(), 1);
        let comps = &blocks[0].components;
        assert!(!comps.is_empty());
        let dominant = comps.iter().max_by(|a, b| a.weight.total_cmp(&b.weight)).unwrap();
        let total: f64 = comps.iter().map(|c| c.weight).sum();
        let mixture_mean = comps.iter().map(|c| c.mean * c.weight).sum::<Vec3>() / total;
        assert!((mixture_mean - sample_mean).norm() < 1e-12);
        if comps.len() == 1 {
            assert!((dominant.mean - sample_mean).norm() < 3.0 * sigma / 1000f64.sqrt());
        }
    }

    #[test]
    fn prior_normalization_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let k = rng.random_range(0..8);
            let ws: Vec<f64> = (0..k).map(|_| f64::from(rng.random_range(1..50u32))).collect();
            let n = ws.iter().sum::<f64>() as u64;
            let mut h = hyper();
            h.alpha = rng.random_range(0.01..10.0);
            let j = rng.random_range(1..100);
            let s = prior_scores(&processor(&ws, n), &h, j).unwrap();
            assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn welford_matches_batch(pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0), 1..200)) {
            let pts: Vec<Vec3> = pts.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect();
            let mut c = instantiate_component(&pts[0], &Mat3::zeros(), &hyper(), 0);
            for p in &pts[1..] {
                c = update_component(&c, p);
            }
            let n = pts.len() as f64;
            let mean = pts.iter().sum::<Vec3>() / n;
            let scatter = pts.iter().map(|p| outer(&(p - mean))).sum::<Mat3>();
            proptest::prop_assert_eq!(c.weight, n);
            proptest::prop_assert!((c.mean - mean).norm() <= 1e-12 * mean.norm().max(1.0));
            proptest::prop_assert!((c.scatter - scatter).norm() <= 1e-9 * scatter.norm().max(1.0));
            let eig = c.scatter.symmetric_eigenvalues();
            proptest::prop_assert!(eig.min() >= -1e-10 * c.scatter.trace().max(1e-300));
        }
    }
}
