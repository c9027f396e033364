//! Farthest point sampling, ball queries and fixed-size cluster
//! extraction.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::linalg::{self, Vec3};
use crate::rng::SeededRng;
use crate::scalar::Real;

/// Uniform hash grid for radius queries.
#[derive(Debug, Clone)]
pub struct SpatialGrid<'a, T> {
    points: &'a [Vec3<T>],
    cell: T,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a, T: Real> SpatialGrid<'a, T> {
    pub fn new(points: &'a [Vec3<T>], cell: T) -> Self {
        assert!(cell > T::zero());
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self {
            points,
            cell,
            cells,
        }
    }

    fn key(p: &Vec3<T>, cell: T) -> [i64; 3] {
        crate::geometry::voxel_of(p, cell)
    }

    /// Indices of points with `|p - center| <= r`, ascending.
    pub fn within(&self, center: &Vec3<T>, r: T) -> Vec<usize> {
        let r2 = r * r;
        let reach = (r / self.cell).ceil().to_i64().unwrap_or(1).max(1);
        let base = Self::key(center, self.cell);
        let mut out = Vec::new();
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let key = [base[0] + dx, base[1] + dy, base[2] + dz];
                    if let Some(ids) = self.cells.get(&key) {
                        out.extend(
                            ids.iter()
                                .copied()
                                .filter(|&i| linalg::dist2(&self.points[i], center) <= r2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Greedy farthest point sampling.
///
/// The first index is uniform from `rng`; every further pick maximizes
/// the distance to the already selected set, lowest index on ties.
/// Returns `min(k, n)` indices.
pub fn farthest_point_sample<T: Real>(
    cloud: &PointCloud<T>,
    k: usize,
    rng: &mut SeededRng,
) -> Vec<usize> {
    let n = cloud.len();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    let k = k.min(n);
    let first = rng.below(n);
    let mut selected = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let mut min_d2 = vec![T::infinity(); n];
    let mut current = first;
    loop {
        selected.push(current);
        taken[current] = true;
        if selected.len() == k {
            break;
        }
        let c = cloud.points[current];
        let mut best = usize::MAX;
        let mut best_d = -T::one();
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = linalg::dist2(&cloud.points[i], &c);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if min_d2[i] > best_d {
                best_d = min_d2[i];
                best = i;
            }
        }
        current = best;
    }
    selected
}

/// One fixed-size neighborhood around a center.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T> {
    /// Center-subtracted points.
    pub points: Vec<Vec3<T>>,
    pub source_indices: Vec<usize>,
}

/// Gathers `c` points within `r` of `center` and subtracts the center.
///
/// With at least `c` candidates they are drawn without replacement;
/// otherwise every candidate is kept once and the rest of the slots
/// are filled by uniform draws with replacement.
pub fn ball_query<T: Real>(
    cloud: &PointCloud<T>,
    center: &Vec3<T>,
    r: T,
    c: usize,
    rng: &mut SeededRng,
) -> Result<Cluster<T>> {
    let grid = SpatialGrid::new(&cloud.points, r);
    ball_query_indexed(&grid, center, r, c, rng)
}

pub fn ball_query_indexed<T: Real>(
    grid: &SpatialGrid<'_, T>,
    center: &Vec3<T>,
    r: T,
    c: usize,
    rng: &mut SeededRng,
) -> Result<Cluster<T>> {
    let candidates = grid.within(center, r);
    if candidates.is_empty() {
        return Err(Error::EmptyBall { radius: r.as_f64() });
    }
    let chosen: Vec<usize> = if candidates.len() >= c {
        rng.sample_distinct(candidates.len(), c)
            .into_iter()
            .map(|j| candidates[j])
            .collect()
    } else {
        let mut v = candidates.clone();
        while v.len() < c {
            v.push(candidates[rng.below(candidates.len())]);
        }
        v
    };
    let points = chosen
        .iter()
        .map(|&i| linalg::sub(&grid.points[i], center))
        .collect();
    Ok(Cluster {
        points,
        source_indices: chosen,
    })
}

/// `k` clusters of exactly `c` center-relative points each.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet<T> {
    pub centers: Vec<Vec3<T>>,
    /// `k * c` points, cluster-major.
    pub points: Vec<Vec3<T>>,
    /// `k * c` indices into the source cloud.
    pub source_indices: Vec<usize>,
    pub cluster_size: usize,
}

impl<T: Real> ClusterSet<T> {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn cluster(&self, i: usize) -> &[Vec3<T>] {
        let c = self.cluster_size;
        &self.points[i * c..(i + 1) * c]
    }
}

/// Clusters around the given center indices of `cloud`.
pub fn clusters_at<T: Real>(
    cloud: &PointCloud<T>,
    centers: &[usize],
    r: T,
    c: usize,
    rng: &mut SeededRng,
) -> Result<ClusterSet<T>> {
    assert!(c >= 1, "cluster size must be positive");
    let grid = SpatialGrid::new(&cloud.points, r);
    let mut set = ClusterSet {
        centers: Vec::with_capacity(centers.len()),
        points: Vec::with_capacity(centers.len() * c),
        source_indices: Vec::with_capacity(centers.len() * c),
        cluster_size: c,
    };
    for &i in centers {
        let center = cloud.points[i];
        let cl = ball_query_indexed(&grid, &center, r, c, rng)?;
        set.centers.push(center);
        set.points.extend(cl.points);
        set.source_indices.extend(cl.source_indices);
    }
    Ok(set)
}

/// Farthest point sampling followed by a ball query at every center.
pub fn extract_clusters<T: Real>(
    cloud: &PointCloud<T>,
    k: usize,
    r: T,
    c: usize,
    rng: &mut SeededRng,
) -> Result<ClusterSet<T>> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let centers = farthest_point_sample(cloud, k, rng);
    clusters_at(cloud, &centers, r, c, rng)
}
