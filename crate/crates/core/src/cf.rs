//! Correspondence-free closed-form registration.
//!
//! Every keypoint of one cloud is paired with every keypoint of the other
//! and each pair is weighted by `exp(-|f_p - f_q|^2 / alpha)`. The rigid
//! transform minimizing the weighted squared residual over the whole pair
//! set is the weighted Kabsch solution.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::linalg::{self, Mat3, Vec3};
use crate::network::DescriptorSet;
use crate::scalar::Real;

/// Exponents below this produce an exact zero weight.
pub const MIN_EXPONENT: f64 = -700.0;
/// `sigma_2 / sigma_1` of the cross-covariance below this is rejected.
pub const DEGENERATE_RATIO: f64 = 1e-9;
/// `sigma_1` below this fraction of the weighted spread counts as zero.
const ZERO_COVARIANCE: f64 = 1e-12;

/// Dense `rows x cols` weight matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PairWeights<T> {
    pub matrix: Vec<T>,
    pub rows: usize,
    pub cols: usize,
    pub alpha: T,
}

impl<T: Real> PairWeights<T> {
    pub fn get(&self, i: usize, j: usize) -> T {
        self.matrix[i * self.cols + j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfSolution<T> {
    pub transform: RigidTransform<T>,
    pub cross_covariance: Mat3<T>,
    pub weight_total: T,
}

fn gaussian_weight<T: Real>(d2: T, alpha: T) -> T {
    let e = -d2 / alpha;
    if e < T::lit(MIN_EXPONENT) {
        T::zero()
    } else {
        e.exp()
    }
}

pub fn pair_weights<T: Real>(
    desc_p: &DescriptorSet<T>,
    desc_q: &DescriptorSet<T>,
    alpha: T,
) -> Result<PairWeights<T>> {
    if desc_p.dim != desc_q.dim {
        return Err(Error::shape(
            "pair_weights",
            format!("descriptor dims {} vs {}", desc_p.dim, desc_q.dim),
        ));
    }
    if !(alpha > T::zero()) {
        return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
    }
    let (rows, cols) = (desc_p.len(), desc_q.len());
    let mut matrix = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let a = desc_p.row(i);
        for j in 0..cols {
            let d2: T = a.iter().zip(desc_q.row(j)).map(|(&x, &y)| (x - y) * (x - y)).sum();
            matrix.push(gaussian_weight(d2, alpha));
        }
    }
    Ok(PairWeights {
        matrix,
        rows,
        cols,
        alpha,
    })
}

fn mean<T: Real>(pts: &[Vec3<T>]) -> Vec3<T> {
    let n = T::from_usize(pts.len().max(1)).unwrap();
    let s = pts.iter().fold([T::zero(); 3], |acc, p| linalg::add(&acc, p));
    linalg::scale(&s, T::one() / n)
}

/// Classifies the cross-covariance and turns it into a rotation.
fn rotation_from_covariance<T: Real>(h: &Mat3<T>, spread: T) -> Result<Mat3<T>> {
    let svd = linalg::svd3(h);
    if !(svd.s[0] > T::lit(ZERO_COVARIANCE) * spread) {
        return Err(Error::DegenerateConfiguration { ratio: 0.0 });
    }
    let ratio = svd.s[1] / svd.s[0];
    if ratio < T::lit(DEGENERATE_RATIO) {
        return Err(Error::DegenerateConfiguration {
            ratio: ratio.as_f64(),
        });
    }
    // H = U S V^T, R = V diag(1, 1, det(V U^T)) U^T: the nearest rotation to H^T
    Ok(linalg::svd3(&linalg::transpose(h)).rotation())
}

/// Weighted Kabsch on an explicit list of pairs `(pts_p[i], pts_q[i])`.
pub fn weighted_kabsch<T: Real>(pts_p: &[Vec3<T>], pts_q: &[Vec3<T>], w: &[T]) -> Result<CfSolution<T>> {
    if pts_p.len() != pts_q.len() || pts_p.len() != w.len() {
        return Err(Error::shape(
            "weighted_kabsch",
            format!("{} / {} points, {} weights", pts_p.len(), pts_q.len(), w.len()),
        ));
    }
    if let Some(bad) = w.iter().position(|&x| !(x >= T::zero()) || !x.is_finite()) {
        return Err(Error::InvalidConfig(format!("weight {bad} is {}", w[bad])));
    }
    let positive = w.iter().filter(|&&x| x > T::zero()).count();
    if positive < 3 {
        return Err(Error::InsufficientCorrespondences {
            needed: 3,
            got: positive,
        });
    }
    // shift by the plain means first so the covariance sum does not cancel
    let (op, oq) = (mean(pts_p), mean(pts_q));
    let total: T = w.iter().copied().sum();
    let mut mp = [T::zero(); 3];
    let mut mq = [T::zero(); 3];
    for ((p, q), &wi) in pts_p.iter().zip(pts_q).zip(w) {
        mp = linalg::add(&mp, &linalg::scale(&linalg::sub(p, &op), wi));
        mq = linalg::add(&mq, &linalg::scale(&linalg::sub(q, &oq), wi));
    }
    mp = linalg::scale(&mp, T::one() / total);
    mq = linalg::scale(&mq, T::one() / total);
    let mut h = linalg::zeros();
    let mut spread = T::zero();
    for ((p, q), &wi) in pts_p.iter().zip(pts_q).zip(w) {
        let a = linalg::sub(&linalg::sub(p, &op), &mp);
        let b = linalg::sub(&linalg::sub(q, &oq), &mq);
        let o = linalg::outer(&a, &b);
        for r in 0..3 {
            for c in 0..3 {
                h[r][c] += wi * o[r][c];
            }
        }
        spread += wi * linalg::norm(&a) * linalg::norm(&b);
    }
    let rotation = rotation_from_covariance(&h, spread)?;
    let mu_p = linalg::add(&op, &mp);
    let mu_q = linalg::add(&oq, &mq);
    let translation = linalg::sub(&mu_q, &linalg::mat_vec(&rotation, &mu_p));
    Ok(CfSolution {
        transform: RigidTransform::new(rotation, translation),
        cross_covariance: h,
        weight_total: total,
    })
}

/// Materializes the full `k_p * k_q` pair list and solves it.
pub fn cf_register<T: Real>(desc_p: &DescriptorSet<T>, desc_q: &DescriptorSet<T>, alpha: T) -> Result<CfSolution<T>> {
    check_counts(desc_p.len(), desc_q.len())?;
    let w = pair_weights(desc_p, desc_q, alpha)?;
    let (xs, ys) = pair_expansion(&desc_p.keypoints, &desc_q.keypoints);
    weighted_kabsch(&xs, &ys, &w.matrix)
}

/// `X`, `Y` of the pair list: entry `i * k_q + j` holds `(p_i, q_j)`.
pub fn pair_expansion<T: Real>(p: &[Vec3<T>], q: &[Vec3<T>]) -> (Vec<Vec3<T>>, Vec<Vec3<T>>) {
    let mut xs = Vec::with_capacity(p.len() * q.len());
    let mut ys = Vec::with_capacity(p.len() * q.len());
    for a in p {
        for b in q {
            xs.push(*a);
            ys.push(*b);
        }
    }
    (xs, ys)
}

fn check_counts(kp: usize, kq: usize) -> Result<()> {
    if kp < 3 || kq < 3 {
        return Err(Error::InsufficientCorrespondences {
            needed: 3,
            got: kp.min(kq),
        });
    }
    Ok(())
}

/// Differentiable solve: the rotation is a graph node, everything else is
/// reported as plain values.
#[derive(Debug, Clone)]
pub struct CfGraphSolution<T> {
    pub rotation: Var,
    pub weights: Var,
    pub solution: CfSolution<T>,
}

fn points_tensor<T: Real>(pts: &[Vec3<T>], shift: &Vec3<T>) -> Tensor<T> {
    let data = pts.iter().flat_map(|p| linalg::sub(p, shift)).collect();
    Tensor {
        shape: vec![pts.len(), 3],
        data,
    }
}

/// Graph version of [`cf_register`], differentiable with respect to the
/// descriptor rows `desc_p: (k_p, d)` and `desc_q: (k_q, d)`.
///
/// The pair sums are factored instead of materialized:
/// `H = P^T W Q - (r^T P)^T (c Q) / sum(W)` with row sums `r` and column
/// sums `c` of `W`, which equals the expanded double sum exactly.
pub fn cf_register_graph<T: Real>(
    g: &mut Graph<T>,
    kp_p: &[Vec3<T>],
    desc_p: Var,
    kp_q: &[Vec3<T>],
    desc_q: Var,
    alpha: T,
) -> Result<CfGraphSolution<T>> {
    check_counts(kp_p.len(), kp_q.len())?;
    if g.value(desc_p).rows() != kp_p.len() || g.value(desc_q).rows() != kp_q.len() {
        return Err(Error::shape(
            "cf_register_graph",
            format!(
                "{} / {} keypoints for descriptor shapes {:?} / {:?}",
                kp_p.len(),
                kp_q.len(),
                g.value(desc_p).shape,
                g.value(desc_q).shape
            ),
        ));
    }
    if !(alpha > T::zero()) {
        return Err(Error::InvalidConfig(format!("alpha must be positive, got {alpha}")));
    }
    let (kp, kq) = (kp_p.len(), kp_q.len());
    let d2 = g.pairwise_sq_dist(desc_p, desc_q)?;
    let e = g.scale(d2, -T::one() / alpha);
    let w = g.exp(e);

    let (op, oq) = (mean(kp_p), mean(kp_q));
    let p = g.constant(points_tensor(kp_p, &op));
    let q = g.constant(points_tensor(kp_q, &oq));
    let ones_q = g.constant(Tensor {
        shape: vec![kq, 1],
        data: vec![T::one(); kq],
    });
    let ones_p = g.constant(Tensor {
        shape: vec![1, kp],
        data: vec![T::one(); kp],
    });
    let total = g.reduce_sum(w);
    let rows = g.matmul(w, ones_q)?;
    let cols = g.matmul(ones_p, w)?;
    let rows_t = g.transpose(rows);
    let sp = g.matmul(rows_t, p)?;
    let sq = g.matmul(cols, q)?;
    let pt = g.transpose(p);
    let ptw = g.matmul(pt, w)?;
    let m = g.matmul(ptw, q)?;
    let sp_t = g.transpose(sp);
    let outer = g.matmul(sp_t, sq)?;
    let outer = g.div_scalar(outer, total)?;
    let h = g.sub(m, outer)?;

    let wv = g.value(w).data.clone();
    let s = g.value(total).item();
    if !(s > T::zero()) {
        return Err(Error::DegenerateConfiguration { ratio: 0.0 });
    }
    let mp = vec3_of(&g.value(sp).data, T::one() / s);
    let mq = vec3_of(&g.value(sq).data, T::one() / s);
    let hm = mat3_of(&g.value(h).data);
    let np: Vec<T> = kp_p
        .iter()
        .map(|x| linalg::norm(&linalg::sub(&linalg::sub(x, &op), &mp)))
        .collect();
    let nq: Vec<T> = kp_q
        .iter()
        .map(|x| linalg::norm(&linalg::sub(&linalg::sub(x, &oq), &mq)))
        .collect();
    let mut spread = T::zero();
    for i in 0..kp {
        for j in 0..kq {
            spread += wv[i * kq + j] * np[i] * nq[j];
        }
    }
    let rotation = rotation_from_covariance(&hm, spread)?;

    let before = g.flags().svd_degenerate;
    let ht = g.transpose(h);
    let r = g.svd_rotation(ht)?;
    if g.flags().svd_degenerate > before && g.requires_grad(h) {
        let sv = linalg::svd3(&hm).s;
        let gap = (sv[0] * sv[0] - sv[1] * sv[1])
            .abs()
            .min((sv[1] * sv[1] - sv[2] * sv[2]).abs());
        return Err(Error::SvdDegenerate { gap: gap.as_f64() });
    }
    let mu_p = linalg::add(&op, &mp);
    let mu_q = linalg::add(&oq, &mq);
    let translation = linalg::sub(&mu_q, &linalg::mat_vec(&rotation, &mu_p));
    Ok(CfGraphSolution {
        rotation: r,
        weights: w,
        solution: CfSolution {
            transform: RigidTransform::new(rotation, translation),
            cross_covariance: hm,
            weight_total: s,
        },
    })
}

/// `|I - R R_gt^T|_F` as a graph node.
pub fn rotation_loss_graph<T: Real>(g: &mut Graph<T>, r: Var, r_gt: &Mat3<T>) -> Result<Var> {
    let gt_t = g.constant(mat_tensor(&linalg::transpose(r_gt)));
    let eye = g.constant(mat_tensor(&linalg::identity()));
    let prod = g.matmul(r, gt_t)?;
    let diff = g.sub(eye, prod)?;
    Ok(g.frobenius_norm(diff))
}

pub(crate) fn mat_tensor<T: Real>(m: &Mat3<T>) -> Tensor<T> {
    Tensor {
        shape: vec![3, 3],
        data: m.iter().flatten().copied().collect(),
    }
}

pub(crate) fn mat3_of<T: Real>(d: &[T]) -> Mat3<T> {
    [[d[0], d[1], d[2]], [d[3], d[4], d[5]], [d[6], d[7], d[8]]]
}

fn vec3_of<T: Real>(d: &[T], s: T) -> Vec3<T> {
    [d[0] * s, d[1] * s, d[2] * s]
}
