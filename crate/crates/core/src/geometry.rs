//! Point clouds, rigid transforms, perturbations and error metrics.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::rng::SeededRng;
use crate::scalar::Real;

/// Ordered 3D points (meters) with optional per-point intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<T> {
    pub points: Vec<Vec3<T>>,
    pub intensity: Option<Vec<T>>,
}

impl<T: Real> PointCloud<T> {
    /// Builds a cloud, rejecting NaN/Inf coordinates.
    pub fn new(points: Vec<Vec3<T>>) -> Result<Self> {
        check_finite(&points)?;
        Ok(Self {
            points,
            intensity: None,
        })
    }

    pub fn with_intensity(points: Vec<Vec3<T>>, intensity: Vec<T>) -> Result<Self> {
        check_finite(&points)?;
        if intensity.len() != points.len() {
            return Err(Error::shape(
                "PointCloud::with_intensity",
                format!("{} points vs {} intensities", points.len(), intensity.len()),
            ));
        }
        Ok(Self {
            points,
            intensity: Some(intensity),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Sub-cloud made of the given indices (intensity follows).
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }

    pub fn centroid(&self) -> Vec3<T> {
        let n = T::from_usize(self.len().max(1)).unwrap();
        let mut c = [T::zero(); 3];
        for p in &self.points {
            c = linalg::add(&c, p);
        }
        linalg::scale(&c, T::one() / n)
    }
}

fn check_finite<T: Real>(points: &[Vec3<T>]) -> Result<()> {
    match points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// `x -> rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> RigidTransform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: linalg::identity(),
            translation: [T::zero(); 3],
        }
    }

    pub fn new(rotation: Mat3<T>, translation: Vec3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_rotation(rotation: Mat3<T>) -> Self {
        Self::new(rotation, [T::zero(); 3])
    }

    pub fn rot_z(theta: T) -> Self {
        Self::from_rotation(linalg::rot_z(theta))
    }

    pub fn apply_point(&self, p: &Vec3<T>) -> Vec3<T> {
        linalg::add(&linalg::mat_vec(&self.rotation, p), &self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = linalg::transpose(&self.rotation);
        let t = linalg::mat_vec(&rt, &self.translation);
        Self::new(rt, linalg::scale(&t, -T::one()))
    }

    /// `self * other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(
            linalg::mat_mul(&self.rotation, &other.rotation),
            self.apply_point(&other.translation),
        )
    }

    /// Orthonormality and `det = +1` within `tol`.
    pub fn is_valid(&self, tol: T) -> bool {
        let rtr = linalg::mat_mul(&linalg::transpose(&self.rotation), &self.rotation);
        let eye = linalg::identity::<T>();
        let ortho = (0..3).all(|i| (0..3).all(|j| (rtr[i][j] - eye[i][j]).abs() <= tol));
        ortho
            && (linalg::det(&self.rotation) - T::one()).abs() <= tol
            && self.translation.iter().all(|x| x.is_finite())
    }

    /// Row-major `[R | t]`, 12 values.
    pub fn to_row_major(&self) -> [T; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1],
            r[2][2], t[2],
        ]
    }

    pub fn from_row_major(v: &[T; 12]) -> Self {
        Self::new(
            [[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]],
            [v[3], v[7], v[11]],
        )
    }
}

/// Applies `tf` to every point; intensity is passed through.
pub fn apply_transform<T: Real>(cloud: &PointCloud<T>, tf: &RigidTransform<T>) -> PointCloud<T> {
    PointCloud {
        points: cloud.points.iter().map(|p| tf.apply_point(p)).collect(),
        intensity: cloud.intensity.clone(),
    }
}

/// `|| I - r * r_gt^T ||_F`, in `[0, 2*sqrt(2)]` for rotations.
pub fn rotation_loss<T: Real>(r: &Mat3<T>, r_gt: &Mat3<T>) -> T {
    let prod = linalg::mat_mul(r, &linalg::transpose(r_gt));
    linalg::frobenius(&linalg::mat_sub(&linalg::identity(), &prod))
}

/// Translation (meters) and rotation (degrees) error between two
/// source-to-target transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationError<T> {
    pub rte: T,
    pub rre: T,
}

/// Geodesic angle between two rotations in degrees.
pub fn rotation_angle_deg<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    let rel = linalg::mat_mul(&linalg::transpose(a), b);
    let c = (linalg::trace(&rel) - T::one()) / T::lit(2.0);
    c.max(-T::one()).min(T::one()).acos().to_degrees()
}

pub fn registration_error<T: Real>(
    est: &RigidTransform<T>,
    gt: &RigidTransform<T>,
) -> RegistrationError<T> {
    RegistrationError {
        rte: linalg::norm(&linalg::sub(&est.translation, &gt.translation)),
        rre: rotation_angle_deg(&est.rotation, &gt.rotation),
    }
}

/// Rotation about Z by `phi ~ N(0, sigma_r^2)`, zero translation.
pub fn random_z_rotation<T: Real>(sigma_r: T, rng: &mut SeededRng) -> RigidTransform<T> {
    RigidTransform::rot_z(rng.normal(sigma_r))
}

/// Isotropic Gaussian jitter with per-axis standard deviation `sigma_p`.
pub fn jitter<T: Real>(cloud: &PointCloud<T>, sigma_p: T, rng: &mut SeededRng) -> PointCloud<T> {
    if sigma_p == T::zero() {
        return cloud.clone();
    }
    let points = cloud
        .points
        .iter()
        .map(|p| {
            [
                p[0] + rng.normal(sigma_p),
                p[1] + rng.normal(sigma_p),
                p[2] + rng.normal(sigma_p),
            ]
        })
        .collect();
    PointCloud {
        points,
        intensity: cloud.intensity.clone(),
    }
}

/// Integer voxel coordinates of `p` at edge length `grid`.
pub fn voxel_of<T: Real>(p: &Vec3<T>, grid: T) -> [i64; 3] {
    [
        (p[0] / grid).floor().to_i64().unwrap_or(i64::MAX),
        (p[1] / grid).floor().to_i64().unwrap_or(i64::MAX),
        (p[2] / grid).floor().to_i64().unwrap_or(i64::MAX),
    ]
}

/// Replaces the points of each occupied voxel by their centroid.
///
/// Output is sorted by voxel index with z most significant, then y,
/// then x.
pub fn voxel_downsample<T: Real>(cloud: &PointCloud<T>, grid: T) -> PointCloud<T> {
    assert!(grid > T::zero(), "voxel grid must be positive");
    // key (z, y, x) -> (sum, intensity sum, count)
    let mut cells: BTreeMap<(i64, i64, i64), (Vec3<T>, T, usize)> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let [x, y, z] = voxel_of(p, grid);
        let e = cells
            .entry((z, y, x))
            .or_insert(([T::zero(); 3], T::zero(), 0));
        e.0 = linalg::add(&e.0, p);
        if let Some(v) = &cloud.intensity {
            e.1 += v[i];
        }
        e.2 += 1;
    }
    let mut points = Vec::with_capacity(cells.len());
    let mut intensity = Vec::with_capacity(cells.len());
    for (sum, isum, n) in cells.into_values() {
        let n = T::from_usize(n).unwrap();
        points.push([sum[0] / n, sum[1] / n, sum[2] / n]);
        intensity.push(isum / n);
    }
    PointCloud {
        points,
        intensity: cloud.intensity.as_ref().map(|_| intensity),
    }
}
