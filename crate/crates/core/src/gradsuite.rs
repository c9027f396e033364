//! The finite-difference suite run by `sspd gradcheck`: every graph
//! primitive plus the full training loss (rotation loss of the
//! closed-form solve on network descriptors).

use crate::autodiff::{grad_check, grad_check_coords, Graph, GradCheckReport, Tensor, Var};
use crate::cf::{cf_register_graph, rotation_loss_graph};
use crate::error::Result;
use crate::linalg::{self, Vec3};
use crate::network::{descriptor_graph, Architecture, DescriptorParams, ForwardOptions};
use crate::rng::RngSeed;

/// A case passes when its maximum relative error is below this.
pub const GRAD_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;
/// Coordinates probed per layer when checking the full-width network.
const FULL_WIDTH_SAMPLES: usize = 24;

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRAD_TOLERANCE
    }
}

fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut r = RngSeed(seed).rng();
    let n = shape.iter().product();
    Tensor {
        shape,
        data: (0..n).map(|_| r.uniform_in(-1.0, 1.0)).collect(),
    }
}

/// `sum(y * C)` with a fixed random `C`.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let c = g.constant(rand_tensor(g.value(y).shape.clone(), seed));
    let p = g.mul(y, c)?;
    Ok(g.reduce_sum(p))
}

fn case(name: impl Into<String>, rep: GradCheckReport<f64>) -> GradCase {
    GradCase {
        name: name.into(),
        coordinates: rep.analytic.len(),
        max_rel_error: rep.max_rel_error,
    }
}

fn run<F>(out: &mut Vec<GradCase>, name: &str, point: Tensor<f64>, f: F) -> Result<()>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    out.push(case(name, grad_check(f, &point, EPS)?));
    Ok(())
}

/// `U diag(3, 1.8, 0.6) V^T`: singular values far apart, so every SVD
/// derivative is well conditioned.
fn well_separated(seed: u64) -> Tensor<f64> {
    let m = |t: &Tensor<f64>| crate::cf::mat3_of(&t.data);
    let qa = linalg::svd3(&m(&rand_tensor(vec![3, 3], seed))).u;
    let qb = linalg::svd3(&m(&rand_tensor(vec![3, 3], seed + 100))).v;
    let h = linalg::mat_mul(&linalg::mat_mul(&qa, &linalg::diag([3.0, 1.8, 0.6])), &linalg::transpose(&qb));
    crate::cf::mat_tensor(&h)
}

fn primitives(out: &mut Vec<GradCase>) -> Result<()> {
    let b = rand_tensor(vec![4, 3], 2);
    run(out, "matmul (lhs)", rand_tensor(vec![5, 4], 1), |g, x| {
        let b = g.constant(b.clone());
        let y = g.matmul(x, b)?;
        project(g, y, 3)
    })?;
    let a = rand_tensor(vec![5, 4], 1);
    run(out, "matmul (rhs)", rand_tensor(vec![4, 3], 2), |g, x| {
        let a = g.constant(a.clone());
        let y = g.matmul(a, x)?;
        project(g, y, 3)
    })?;
    let x0 = rand_tensor(vec![6, 4], 4);
    run(out, "add_bias", rand_tensor(vec![4], 5), |g, bias| {
        let x = g.constant(x0.clone());
        let y = g.add_bias(x, bias)?;
        project(g, y, 6)
    })?;
    let mut p = rand_tensor(vec![3, 5], 7);
    // stay off the kink
    p.data.iter_mut().filter(|v| v.abs() < 0.05).for_each(|v| *v += 0.1);
    run(out, "relu", p, |g, x| {
        let y = g.relu(x);
        project(g, y, 8)
    })?;
    run(out, "max_over_rows", rand_tensor(vec![6, 3], 9), |g, x| {
        let y = g.max_over_rows(x, 3)?;
        project(g, y, 10)
    })?;
    run(out, "l2_normalize_rows", rand_tensor(vec![4, 5], 11), |g, x| {
        let y = g.l2_normalize_rows(x);
        project(g, y, 12)
    })?;
    run(out, "exp / neg / scale", rand_tensor(vec![3, 3], 13), |g, x| {
        let y = g.neg(x);
        let y = g.scale(y, 0.7);
        let y = g.exp(y);
        project(g, y, 14)
    })?;
    let other = rand_tensor(vec![3, 3], 16);
    run(out, "add / sub / mul", rand_tensor(vec![3, 3], 15), |g, x| {
        let o = g.constant(other.clone());
        let a = g.add(x, o)?;
        let b = g.sub(a, x)?;
        let c = g.mul(a, x)?;
        let d = g.add(b, c)?;
        project(g, d, 17)
    })?;
    let x1 = rand_tensor(vec![2, 3], 18);
    run(out, "mul_scalar / div_scalar", Tensor::scalar(1.7), |g, s| {
        let x = g.constant(x1.clone());
        let y = g.mul_scalar(x, s)?;
        let z = g.div_scalar(y, s)?;
        let w = g.div_scalar(x, s)?;
        let q = g.add(z, w)?;
        project(g, q, 19)
    })?;
    run(out, "reduce_sum / frobenius_norm", rand_tensor(vec![4, 2], 20), |g, x| {
        let f = g.frobenius_norm(x);
        let s = g.reduce_sum(x);
        g.mul(f, s)
    })?;
    let other = rand_tensor(vec![2, 3], 22);
    run(out, "concat / gather_rows / transpose / reshape", rand_tensor(vec![3, 3], 21), |g, x| {
        let o = g.constant(other.clone());
        let c = g.concat(&[x, o, x])?;
        let r = g.gather_rows(c, &[0, 7, 7, 2, 4])?;
        let t = g.transpose(r);
        let s = g.reshape(t, vec![15])?;
        project(g, s, 23)
    })?;
    let pts = rand_tensor(vec![5, 3], 24);
    run(out, "scale_rows", rand_tensor(vec![5, 1], 25), |g, w| {
        let p = g.constant(pts.clone());
        let y = g.scale_rows(p, w)?;
        project(g, y, 26)
    })?;
    let rhs = rand_tensor(vec![4, 6], 27);
    run(out, "pairwise_sq_dist (lhs)", rand_tensor(vec![3, 6], 28), |g, a| {
        let b = g.constant(rhs.clone());
        let d = g.pairwise_sq_dist(a, b)?;
        project(g, d, 29)
    })?;
    let lhs = rand_tensor(vec![3, 6], 28);
    run(out, "pairwise_sq_dist (rhs)", rhs.clone(), |g, b| {
        let a = g.constant(lhs.clone());
        let d = g.pairwise_sq_dist(a, b)?;
        project(g, d, 29)
    })?;
    let pts = rand_tensor(vec![6, 3], 30);
    run(out, "rotate_z_groups (angles)", rand_tensor(vec![2, 2], 31), |g, sc| {
        let p = g.constant(pts.clone());
        let y = g.rotate_z_groups(p, sc, 3)?;
        project(g, y, 32)
    })?;
    let sc = rand_tensor(vec![2, 2], 31);
    run(out, "rotate_z_groups (points)", pts.clone(), |g, p| {
        let s = g.constant(sc.clone());
        let y = g.rotate_z_groups(p, s, 3)?;
        project(g, y, 32)
    })?;
    let h = well_separated(40);
    run(out, "svd3 singular values", h.clone(), |g, x| {
        let (_u, s, _v) = g.svd3(x)?;
        project(g, s, 43)
    })?;
    // U and V columns share a sign ambiguity; probe sign-free squares
    run(out, "svd3 U", h.clone(), |g, x| {
        let (u, _s, _v) = g.svd3(x)?;
        let sq = g.mul(u, u)?;
        project(g, sq, 47)
    })?;
    run(out, "svd3 V", h.clone(), |g, x| {
        let (_u, _s, v) = g.svd3(x)?;
        let sq = g.mul(v, v)?;
        project(g, sq, 48)
    })?;
    run(out, "svd_rotation", h, |g, x| {
        let r = g.svd_rotation(x)?;
        project(g, r, 49)
    })?;
    Ok(())
}

/// Two views of one random scene patch: `k` clusters of `c` points each,
/// the second rotated about Z and jittered.
struct CompositeInstance {
    pts_p: Tensor<f64>,
    pts_q: Tensor<f64>,
    kp_p: Vec<Vec3<f64>>,
    kp_q: Vec<Vec3<f64>>,
    r_gt: linalg::Mat3<f64>,
    c: usize,
}

fn composite_instance(k: usize, c: usize, seed: u64) -> CompositeInstance {
    let mut r = RngSeed(seed).rng();
    let r_gt = linalg::rot_z(0.4);
    let kp_p: Vec<Vec3<f64>> = (0..k)
        .map(|_| [r.uniform_in(-4.0, 4.0), r.uniform_in(-4.0, 4.0), r.uniform_in(-1.0, 1.0)])
        .collect();
    let kp_q = kp_p.iter().map(|p| linalg::mat_vec(&r_gt, p)).collect();
    let rel: Vec<f64> = (0..k * c * 3).map(|_| r.uniform_in(-1.5, 1.5)).collect();
    let mut rot = Vec::with_capacity(rel.len());
    for p in rel.chunks(3) {
        let q = linalg::mat_vec(&r_gt, &[p[0], p[1], p[2]]);
        rot.extend(q.iter().map(|v| v + 0.01 * r.gaussian()));
    }
    CompositeInstance {
        pts_p: Tensor {
            shape: vec![k * c, 3],
            data: rel,
        },
        pts_q: Tensor {
            shape: vec![k * c, 3],
            data: rot,
        },
        kp_p,
        kp_q,
        r_gt,
        c,
    }
}

fn composite_loss(
    g: &mut Graph<f64>,
    params: &DescriptorParams<f64>,
    vars: &[Var],
    inst: &CompositeInstance,
) -> Result<Var> {
    let xp = g.constant(inst.pts_p.clone());
    let xq = g.constant(inst.pts_q.clone());
    let opts = ForwardOptions::default();
    let dp = descriptor_graph(g, params, vars, xp, inst.c, opts)?;
    let dq = descriptor_graph(g, params, vars, xq, inst.c, opts)?;
    let sol = cf_register_graph(g, &inst.kp_p, dp.descriptors, &inst.kp_q, dq.descriptors, 1.0)?;
    rotation_loss_graph(g, sol.rotation, &inst.r_gt)
}

fn composite(out: &mut Vec<GradCase>, label: &str, arch: Architecture, sample: Option<usize>) -> Result<()> {
    let params = DescriptorParams::init(arch, &mut RngSeed(60).rng())?;
    let inst = composite_instance(5, 4, 61);
    let mut pick = RngSeed(62).rng();
    for (li, layer) in params.layers.iter().enumerate() {
        let mut point = Tensor {
            shape: layer.shape.clone(),
            data: layer.data.clone(),
        };
        // zero biases would put many pre-activations exactly on a kink
        if layer.shape.len() == 1 {
            let mut r = RngSeed(100 + li as u64).rng();
            point.data.iter_mut().for_each(|b| *b = r.uniform_in(-0.3, 0.3));
        }
        let f = |g: &mut Graph<f64>, v: Var| {
            let mut vars = params.bind(g, false);
            vars[li] = v;
            composite_loss(g, &params, &vars, &inst)
        };
        let coords: Vec<usize> = match sample {
            Some(n) if n < point.numel() => pick.sample_distinct(point.numel(), n),
            _ => (0..point.numel()).collect(),
        };
        let rep = grad_check_coords(f, &point, EPS, &coords)?;
        out.push(case(format!("loss wrt {} ({label})", layer.name), rep));
    }
    Ok(())
}

/// Runs every case; the caller decides what to do with failures.
pub fn run_gradient_suite() -> Result<Vec<GradCase>> {
    let mut out = Vec::new();
    primitives(&mut out)?;
    let small = Architecture {
        orient_point: vec![4, 5],
        orient_head: vec![3],
        feat_point: vec![5, 6],
        feat_head: vec![4],
        descriptor_dim: 3,
    };
    composite(&mut out, "small widths, all coordinates", small, None)?;
    composite(
        &mut out,
        "full widths, sampled coordinates",
        Architecture::default(),
        Some(FULL_WIDTH_SAMPLES),
    )?;
    Ok(out)
}
