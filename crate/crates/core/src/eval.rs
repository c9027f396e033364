//! Registration of cloud pairs with learned descriptors, and the metrics
//! reported for it.

use crate::error::{Error, Result};
use crate::geometry::{registration_error, PointCloud, RigidTransform};
use crate::keypoints::{detect, Detector, IssParams};
use crate::linalg;
use crate::network::{descriptor_forward, DescriptorParams, DescriptorSet};
use crate::ransac::{nn_match, ransac_register, RansacConfig};
use crate::rng::RngSeed;
use crate::sampling::clusters_at;

/// Success needs a translation error below this (meters).
pub const SUCCESS_RTE: f64 = 2.0;
/// Success needs a rotation error below this (degrees).
pub const SUCCESS_RRE: f64 = 5.0;
/// Reading cut of precision curves (meters).
pub const PRECISION_CUT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub detector: Detector,
    pub max_keypoints: usize,
    pub iss: IssParams,
    pub r_cluster: f64,
    pub c: usize,
    pub ransac: RansacConfig,
    pub seed: RngSeed,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            detector: Detector::Iss,
            max_keypoints: 256,
            iss: IssParams::default(),
            r_cluster: 2.0,
            c: 64,
            ransac: RansacConfig::default(),
            seed: RngSeed(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub rte: f64,
    pub rre: f64,
    pub success: bool,
    pub iterations_used: usize,
    pub inlier_count: usize,
    /// Why the pair could not be registered, if it failed with an error.
    pub failure: Option<String>,
}

impl EvalResult {
    pub fn from_error(e: &Error) -> Self {
        Self::failed(e.to_string())
    }

    /// A pair that produced no transform; its errors are NaN.
    pub fn failed(reason: String) -> Self {
        Self {
            rte: f64::NAN,
            rre: f64::NAN,
            success: false,
            iterations_used: 0,
            inlier_count: 0,
            failure: Some(reason),
        }
    }
}

pub fn is_success(rte: f64, rre: f64) -> bool {
    rte < SUCCESS_RTE && rre < SUCCESS_RRE
}

/// Keypoints and descriptors of one cloud.
pub fn describe(
    cloud: &PointCloud<f64>,
    params: &DescriptorParams<f64>,
    cfg: &EvalConfig,
    stream: u64,
) -> Result<DescriptorSet<f64>> {
    let mut rng = cfg.seed.derive(stream).rng();
    let idx = detect(cloud, cfg.detector, cfg.max_keypoints, &cfg.iss, &mut rng)?;
    if idx.is_empty() {
        return Err(Error::InsufficientCorrespondences { needed: 3, got: 0 });
    }
    let clusters = clusters_at(cloud, &idx, cfg.r_cluster, cfg.c, &mut rng)?;
    descriptor_forward(&clusters, params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub transform: RigidTransform<f64>,
    pub iterations_used: usize,
    pub inlier_count: usize,
}

/// Estimates the transform mapping `cloud_a` onto `cloud_b`.
pub fn register_pair(
    cloud_a: &PointCloud<f64>,
    cloud_b: &PointCloud<f64>,
    params: &DescriptorParams<f64>,
    cfg: &EvalConfig,
) -> Result<Registration> {
    let da = describe(cloud_a, params, cfg, 0)?;
    let db = describe(cloud_b, params, cfg, 1)?;
    register_descriptors(&da, &db, cfg)
}

/// Matches two described clouds and fits a rigid transform with RANSAC.
pub fn register_descriptors(
    da: &DescriptorSet<f64>,
    db: &DescriptorSet<f64>,
    cfg: &EvalConfig,
) -> Result<Registration> {
    let corr = nn_match(da, db)?;
    let ransac = RansacConfig {
        seed: cfg.seed.derive(2),
        ..cfg.ransac
    };
    let r = ransac_register(&corr, &da.keypoints, &db.keypoints, &ransac)?;
    Ok(Registration {
        transform: r.transform,
        iterations_used: r.iterations_used,
        inlier_count: r.inlier_count,
    })
}

pub fn evaluate_pair(
    cloud_a: &PointCloud<f64>,
    cloud_b: &PointCloud<f64>,
    gt: &RigidTransform<f64>,
    params: &DescriptorParams<f64>,
    cfg: &EvalConfig,
) -> EvalResult {
    match register_pair(cloud_a, cloud_b, params, cfg) {
        Ok(r) => {
            let e = registration_error(&r.transform, gt);
            EvalResult {
                rte: e.rte,
                rre: e.rre,
                success: is_success(e.rte, e.rre),
                iterations_used: r.iterations_used,
                inlier_count: r.inlier_count,
                failure: None,
            }
        }
        Err(e) => EvalResult::from_error(&e),
    }
}

/// Matches counted correct at each threshold, out of `total`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionCounts {
    pub thresholds: Vec<f64>,
    pub correct: Vec<usize>,
    pub total: usize,
}

impl PrecisionCounts {
    pub fn new(thresholds: &[f64]) -> Result<Self> {
        if thresholds.is_empty() || thresholds.windows(2).any(|w| !(w[0] <= w[1])) || thresholds[0] < 0.0 {
            return Err(Error::InvalidConfig("thresholds must be non-negative and ascending".into()));
        }
        Ok(Self {
            thresholds: thresholds.to_vec(),
            correct: vec![0; thresholds.len()],
            total: 0,
        })
    }

    pub fn merge(&mut self, other: &PrecisionCounts) {
        for (a, b) in self.correct.iter_mut().zip(&other.correct) {
            *a += b;
        }
        self.total += other.total;
    }

    pub fn curve(&self) -> Vec<(f64, f64)> {
        self.thresholds
            .iter()
            .zip(&self.correct)
            .map(|(&t, &c)| (t, if self.total == 0 { 0.0 } else { c as f64 / self.total as f64 }))
            .collect()
    }
}

/// Counts, for every keypoint of `a`, whether its descriptor neighbor in
/// `b` lies within each threshold of the true location.
pub fn precision_counts(
    desc_a: &DescriptorSet<f64>,
    desc_b: &DescriptorSet<f64>,
    gt: &RigidTransform<f64>,
    thresholds: &[f64],
) -> Result<PrecisionCounts> {
    let mut out = PrecisionCounts::new(thresholds)?;
    for c in nn_match(desc_a, desc_b)?.pairs {
        let truth = gt.apply_point(&desc_a.keypoints[c.a]);
        let err = linalg::dist2(&desc_b.keypoints[c.b], &truth).sqrt();
        for (k, &t) in thresholds.iter().enumerate() {
            if err <= t {
                out.correct[k] += 1;
            }
        }
        out.total += 1;
    }
    Ok(out)
}

pub fn precision_curve(
    desc_a: &DescriptorSet<f64>,
    desc_b: &DescriptorSet<f64>,
    gt: &RigidTransform<f64>,
    thresholds: &[f64],
) -> Result<Vec<(f64, f64)>> {
    Ok(precision_counts(desc_a, desc_b, gt, thresholds)?.curve())
}
