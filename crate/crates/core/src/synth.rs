//! Procedural scenes with planar structure, edges and corners.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::linalg::{self, Vec3};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Floor plus two walls meeting in one corner.
    CornerRoom,
    /// Ground plane with randomly placed and yawed boxes.
    CubeField,
    /// Anisotropic Gaussian blobs over a ground plane.
    RandomBlobs,
}

impl SceneKind {
    pub const ALL: [SceneKind; 3] = [SceneKind::CornerRoom, SceneKind::CubeField, SceneKind::RandomBlobs];

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::CornerRoom => "corner_room",
            SceneKind::CubeField => "cube_field",
            SceneKind::RandomBlobs => "random_blobs",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SceneKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scene kind {s:?}")))
    }
}

/// Box dimensions are drawn from this range (meters).
pub const CUBE_SIZE: (f64, f64) = (0.5, 3.0);

/// Boxes placed in a cube field of the given extent.
pub fn cube_count(extent: f64) -> usize {
    ((extent * extent) / 40.0).round().clamp(4.0, 200.0) as usize
}

/// Oriented box: center of its footprint on the ground, half sizes, yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub center: Vec3<f64>,
    pub half: Vec3<f64>,
    pub yaw: f64,
}

impl SceneBox {
    /// The 8 corners in world coordinates.
    pub fn corners(&self) -> Vec<Vec3<f64>> {
        let r = linalg::rot_z(self.yaw);
        let mut out = Vec::with_capacity(8);
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                for z in [0.0, 2.0 * self.half[2]] {
                    let local = [sx * self.half[0], sy * self.half[1], z];
                    out.push(linalg::add(&self.center, &linalg::mat_vec(&r, &local)));
                }
            }
        }
        out
    }
}

/// `n_points` samples of a scene spanning roughly `extent` meters in x and y.
pub fn synth_scene(kind: SceneKind, n_points: usize, extent: f64, rng: &mut SeededRng) -> Result<PointCloud<f64>> {
    synth_scene_with_boxes(kind, n_points, extent, rng).map(|(c, _)| c)
}

/// [`synth_scene`] that also returns the boxes of a cube field.
pub fn synth_scene_with_boxes(
    kind: SceneKind,
    n_points: usize,
    extent: f64,
    rng: &mut SeededRng,
) -> Result<(PointCloud<f64>, Vec<SceneBox>)> {
    if n_points == 0 {
        return Err(Error::EmptyCloud);
    }
    if !(extent > 0.0) {
        return Err(Error::InvalidConfig(format!("extent must be positive, got {extent}")));
    }
    let (pts, boxes) = match kind {
        SceneKind::CornerRoom => (corner_room(n_points, extent, rng), Vec::new()),
        SceneKind::CubeField => cube_field(n_points, extent, rng),
        SceneKind::RandomBlobs => (random_blobs(n_points, extent, rng), Vec::new()),
    };
    Ok((PointCloud::new(pts)?, boxes))
}

fn corner_room(n: usize, e: f64, rng: &mut SeededRng) -> Vec<Vec3<f64>> {
    let h = e / 5.0;
    // floor e*e, two walls e*h each, sampled by area
    let areas = [e * e, e * h, e * h];
    let total: f64 = areas.iter().sum();
    (0..n)
        .map(|_| {
            let u = rng.uniform() * total;
            let (a, b) = (rng.uniform(), rng.uniform());
            if u < areas[0] {
                [a * e, b * e, 0.0]
            } else if u < areas[0] + areas[1] {
                [0.0, a * e, b * h]
            } else {
                [a * e, 0.0, b * h]
            }
        })
        .collect()
}

fn cube_field(n: usize, e: f64, rng: &mut SeededRng) -> (Vec<Vec3<f64>>, Vec<SceneBox>) {
    let half = e / 2.0;
    let boxes: Vec<SceneBox> = (0..cube_count(e))
        .map(|_| {
            let mut size = || rng.uniform_in(CUBE_SIZE.0, CUBE_SIZE.1) / 2.0;
            let hs = [size(), size(), size()];
            let margin = hs[0].max(hs[1]) * std::f64::consts::SQRT_2;
            SceneBox {
                center: [
                    rng.uniform_in(-half + margin, half - margin),
                    rng.uniform_in(-half + margin, half - margin),
                    0.0,
                ],
                half: hs,
                yaw: rng.uniform_in(-std::f64::consts::PI, std::f64::consts::PI),
            }
        })
        .collect();
    // every box exposes 4 sides and a top; the ground takes the rest
    let face_areas: Vec<[f64; 5]> = boxes
        .iter()
        .map(|b| {
            let (x, y, z) = (2.0 * b.half[0], 2.0 * b.half[1], 2.0 * b.half[2]);
            [x * z, x * z, y * z, y * z, x * y]
        })
        .collect();
    let box_total: f64 = face_areas.iter().flatten().sum();
    let ground = e * e;
    let total = ground + box_total;
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let mut u = rng.uniform() * total;
        let (a, b) = (rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0));
        if u < ground {
            let p = [a * half, b * half, 0.0];
            // ground under a box is hidden
            if boxes.iter().all(|bx| !inside_footprint(bx, &p)) {
                pts.push(p);
            }
            continue;
        }
        u -= ground;
        let mut chosen = None;
        'outer: for (bi, fa) in face_areas.iter().enumerate() {
            for (fi, &area) in fa.iter().enumerate() {
                if u < area {
                    chosen = Some((bi, fi));
                    break 'outer;
                }
                u -= area;
            }
        }
        let (bi, fi) = chosen.unwrap_or((boxes.len() - 1, 4));
        let bx = &boxes[bi];
        let hs = bx.half;
        let z = (b + 1.0) * hs[2];
        let local = match fi {
            0 => [a * hs[0], hs[1], z],
            1 => [a * hs[0], -hs[1], z],
            2 => [hs[0], a * hs[1], z],
            3 => [-hs[0], a * hs[1], z],
            _ => [a * hs[0], b * hs[1], 2.0 * hs[2]],
        };
        pts.push(linalg::add(&bx.center, &linalg::mat_vec(&linalg::rot_z(bx.yaw), &local)));
    }
    (pts, boxes)
}

fn inside_footprint(b: &SceneBox, p: &Vec3<f64>) -> bool {
    let d = linalg::sub(p, &b.center);
    let local = linalg::mat_vec(&linalg::rot_z(-b.yaw), &d);
    local[0].abs() < b.half[0] && local[1].abs() < b.half[1]
}

fn random_blobs(n: usize, e: f64, rng: &mut SeededRng) -> Vec<Vec3<f64>> {
    let half = e / 2.0;
    let n_blobs = cube_count(e);
    let blobs: Vec<(Vec3<f64>, Vec3<f64>)> = (0..n_blobs)
        .map(|_| {
            let c = [rng.uniform_in(-half, half), rng.uniform_in(-half, half), rng.uniform_in(0.5, 2.5)];
            let s = [rng.uniform_in(0.2, 1.5), rng.uniform_in(0.2, 1.5), rng.uniform_in(0.2, 1.0)];
            (c, s)
        })
        .collect();
    (0..n)
        .map(|i| {
            if i % 3 == 0 {
                [rng.uniform_in(-half, half), rng.uniform_in(-half, half), 0.0]
            } else {
                let (c, s) = blobs[rng.below(n_blobs)];
                [
                    c[0] + s[0] * rng.gaussian(),
                    c[1] + s[1] * rng.gaussian(),
                    (c[2] + s[2] * rng.gaussian()).abs(),
                ]
            }
        })
        .collect()
}
