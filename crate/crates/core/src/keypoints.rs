//! Eigenvalue-saliency keypoints in the style of intrinsic shape signatures.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::linalg::{self, Mat3};
use crate::rng::SeededRng;
use crate::sampling::{farthest_point_sample, SpatialGrid};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssParams {
    pub salient_radius: f64,
    pub nms_radius: f64,
    pub gamma21: f64,
    pub gamma32: f64,
    /// Neighborhoods with fewer points (center included) are ignored.
    pub min_neighbors: usize,
    /// Smallest accepted `lambda3 / lambda1`; rejects flat patches whose
    /// third eigenvalue is only noise.
    pub min_saliency_ratio: f64,
}

impl Default for IssParams {
    fn default() -> Self {
        Self {
            salient_radius: 1.0,
            nms_radius: 1.5,
            gamma21: 0.975,
            gamma32: 0.975,
            min_neighbors: 5,
            min_saliency_ratio: 0.02,
        }
    }
}

impl IssParams {
    pub fn validate(&self) -> Result<()> {
        let ok_gamma = |g: f64| g > 0.0 && g < 1.0;
        if !(self.salient_radius > 0.0 && self.nms_radius > 0.0) {
            return Err(Error::InvalidConfig("ISS radii must be positive".into()));
        }
        if !(ok_gamma(self.gamma21) && ok_gamma(self.gamma32)) {
            return Err(Error::InvalidConfig("ISS gammas must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Eigenvalues (descending) of the neighborhood scatter of every point,
/// `None` where the neighborhood is too small.
pub fn neighborhood_eigenvalues<T: Real>(cloud: &PointCloud<T>, radius: T, min_neighbors: usize) -> Vec<Option<[T; 3]>> {
    let grid = SpatialGrid::new(&cloud.points, radius);
    cloud
        .points
        .iter()
        .map(|p| {
            let nb = grid.within(p, radius);
            if nb.len() < min_neighbors.max(3) {
                return None;
            }
            let n = T::from_usize(nb.len()).unwrap();
            let mut mean = [T::zero(); 3];
            for &i in &nb {
                mean = linalg::add(&mean, &cloud.points[i]);
            }
            mean = linalg::scale(&mean, T::one() / n);
            let mut cov: Mat3<T> = linalg::zeros();
            for &i in &nb {
                let d = linalg::sub(&cloud.points[i], &mean);
                let o = linalg::outer(&d, &d);
                for r in 0..3 {
                    for c in 0..3 {
                        cov[r][c] += o[r][c];
                    }
                }
            }
            for row in &mut cov {
                for v in row {
                    *v /= n;
                }
            }
            Some(linalg::sym_eigen3(&cov).0)
        })
        .collect()
}

/// Indices of salient points after non-maximum suppression, strongest first.
pub fn iss_like_keypoints<T: Real>(cloud: &PointCloud<T>, params: &IssParams) -> Result<Vec<usize>> {
    params.validate()?;
    let eig = neighborhood_eigenvalues(cloud, T::lit(params.salient_radius), params.min_neighbors);
    let (g21, g32, floor) = (
        T::lit(params.gamma21),
        T::lit(params.gamma32),
        T::lit(params.min_saliency_ratio),
    );
    let saliency: Vec<Option<T>> = eig
        .iter()
        .map(|e| {
            let [l1, l2, l3] = (*e)?;
            let distinct = l2 < g21 * l1 && l3 < g32 * l2;
            let strong = l3 > floor * l1 && l1 > T::zero();
            (distinct && strong).then_some(l3)
        })
        .collect();
    let grid = SpatialGrid::new(&cloud.points, T::lit(params.nms_radius));
    let mut keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            let Some(si) = saliency[i] else { return false };
            grid.within(&cloud.points[i], T::lit(params.nms_radius))
                .into_iter()
                .all(|j| match saliency[j] {
                    Some(sj) if j != i => si > sj || (si == sj && i < j),
                    _ => true,
                })
        })
        .collect();
    keep.sort_by(|&a, &b| {
        saliency[b]
            .partial_cmp(&saliency[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    Ok(keep)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detector {
    Iss,
    Fps,
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detector::Iss => "iss",
            Detector::Fps => "fps",
        })
    }
}

impl FromStr for Detector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iss" | "iss_like" => Ok(Detector::Iss),
            "fps" | "fps_random" => Ok(Detector::Fps),
            _ => Err(Error::InvalidConfig(format!("unknown detector {s:?} (expected iss or fps)"))),
        }
    }
}

/// At most `max_keypoints` keypoint indices from the chosen detector.
pub fn detect<T: Real>(
    cloud: &PointCloud<T>,
    detector: Detector,
    max_keypoints: usize,
    iss: &IssParams,
    rng: &mut SeededRng,
) -> Result<Vec<usize>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(match detector {
        Detector::Iss => {
            let mut k = iss_like_keypoints(cloud, iss)?;
            k.truncate(max_keypoints);
            k
        }
        Detector::Fps => farthest_point_sample(cloud, max_keypoints, rng),
    })
}
