//! Nearest-neighbor descriptor matching and RANSAC pose estimation.

use crate::cf::weighted_kabsch;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::linalg::{self, Vec3};
use crate::network::DescriptorSet;
use crate::rng::RngSeed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// For each row of `a`, the closest row of `b` (lowest index on ties).
pub fn nn_match(a: &DescriptorSet<f64>, b: &DescriptorSet<f64>) -> Result<CorrespondenceSet> {
    if a.dim != b.dim {
        return Err(Error::shape("nn_match", format!("descriptor dims {} vs {}", a.dim, b.dim)));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientCorrespondences { needed: 1, got: 0 });
    }
    let pairs = (0..a.len())
        .map(|i| {
            let ra = a.row(i);
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for j in 0..b.len() {
                let d: f64 = ra.iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            Correspondence {
                a: i,
                b: best,
                distance: best_d.sqrt(),
            }
        })
        .collect();
    Ok(CorrespondenceSet { pairs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    pub confidence: f64,
    pub inlier_threshold: f64,
    pub sample_size: usize,
    pub seed: RngSeed,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            confidence: 0.99,
            inlier_threshold: 1.0,
            sample_size: 3,
            seed: RngSeed(0),
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::InvalidConfig("RANSAC confidence must lie in (0, 1)".into()));
        }
        if !(self.inlier_threshold > 0.0) || self.max_iterations == 0 || self.sample_size < 3 {
            return Err(Error::InvalidConfig(
                "RANSAC needs a positive threshold, at least one iteration and samples of 3 or more".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub transform: RigidTransform<f64>,
    pub iterations_used: usize,
    pub inlier_count: usize,
    pub inliers: Vec<usize>,
}

/// Iterations needed to draw one all-inlier sample with the given
/// confidence when a fraction `ratio` of correspondences are inliers.
pub fn adaptive_iterations(ratio: f64, sample_size: usize, confidence: f64) -> f64 {
    let good = ratio.powi(sample_size as i32);
    if good >= 1.0 {
        return 1.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - good).ln()).ceil().max(1.0)
}

fn inliers_of(tf: &RigidTransform<f64>, a: &[Vec3<f64>], b: &[Vec3<f64>], thr2: f64) -> Vec<usize> {
    (0..a.len())
        .filter(|&i| linalg::dist2(&tf.apply_point(&a[i]), &b[i]) < thr2)
        .collect()
}

fn kabsch(a: &[Vec3<f64>], b: &[Vec3<f64>], idx: &[usize]) -> Result<RigidTransform<f64>> {
    let pa: Vec<_> = idx.iter().map(|&i| a[i]).collect();
    let pb: Vec<_> = idx.iter().map(|&i| b[i]).collect();
    Ok(weighted_kabsch(&pa, &pb, &vec![1.0; idx.len()])?.transform)
}

/// Robust rigid fit of `kpts_b[c.b] ~ R kpts_a[c.a] + t`.
pub fn ransac_register(
    corr: &CorrespondenceSet,
    kpts_a: &[Vec3<f64>],
    kpts_b: &[Vec3<f64>],
    cfg: &RansacConfig,
) -> Result<RansacResult> {
    cfg.validate()?;
    let n = corr.len();
    if n < cfg.sample_size {
        return Err(Error::InsufficientCorrespondences {
            needed: cfg.sample_size,
            got: n,
        });
    }
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for c in &corr.pairs {
        if c.a >= kpts_a.len() || c.b >= kpts_b.len() {
            return Err(Error::shape("ransac_register", format!("correspondence ({}, {}) out of range", c.a, c.b)));
        }
        a.push(kpts_a[c.a]);
        b.push(kpts_b[c.b]);
    }
    let thr2 = cfg.inlier_threshold * cfg.inlier_threshold;
    let mut rng = cfg.seed.rng();
    let mut best: Vec<usize> = Vec::new();
    let mut needed = cfg.max_iterations as f64;
    let mut iterations = 0;
    while iterations < cfg.max_iterations && (iterations as f64) < needed {
        iterations += 1;
        let sample = rng.sample_distinct(n, cfg.sample_size);
        // collinear or coincident samples carry no hypothesis
        let Ok(tf) = kabsch(&a, &b, &sample) else {
            continue;
        };
        let inl = inliers_of(&tf, &a, &b, thr2);
        if inl.len() > best.len() {
            best = inl;
            let ratio = best.len() as f64 / n as f64;
            needed = adaptive_iterations(ratio, cfg.sample_size, cfg.confidence).min(cfg.max_iterations as f64);
        }
    }
    if best.len() < 3 {
        return Err(Error::NoConsensus { best: best.len() });
    }
    let transform = kabsch(&a, &b, &best).map_err(|_| Error::NoConsensus { best: best.len() })?;
    let inliers = inliers_of(&transform, &a, &b, thr2);
    Ok(RansacResult {
        transform,
        iterations_used: iterations,
        inlier_count: inliers.len(),
        inliers,
    })
}
