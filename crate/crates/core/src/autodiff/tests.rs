use super::*;
use crate::rng::RngSeed;

fn rand_tensor(shape: Vec<usize>, seed: u64) -> Tensor<f64> {
    let mut r = RngSeed(seed).rng();
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| r.uniform_in(-1.0, 1.0)).collect()).unwrap()
}

/// `sum(y * C)` for a fixed random `C`, turning any output into a scalar.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let c = rand_tensor(g.value(y).shape.clone(), seed);
    let c = g.constant(c);
    let p = g.mul(y, c)?;
    Ok(g.reduce_sum(p))
}

const TOL: f64 = 1e-5;
const EPS: f64 = 1e-6;

fn check<F>(name: &str, point: Tensor<f64>, f: F)
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let rep = grad_check(f, &point, EPS).unwrap();
    assert!(
        rep.max_rel_error < TOL,
        "{name}: max rel error {:e} at {}",
        rep.max_rel_error,
        rep.worst_index
    );
}

#[test]
fn gradcheck_matmul_both_sides() {
    let b = rand_tensor(vec![4, 3], 2);
    check("matmul lhs", rand_tensor(vec![5, 4], 1), |g, x| {
        let b = g.constant(b.clone());
        let y = g.matmul(x, b)?;
        project(g, y, 3)
    });
    let a = rand_tensor(vec![5, 4], 1);
    check("matmul rhs", rand_tensor(vec![4, 3], 2), |g, x| {
        let a = g.constant(a.clone());
        let y = g.matmul(a, x)?;
        project(g, y, 3)
    });
}

#[test]
fn gradcheck_add_bias_and_relu() {
    let x0 = rand_tensor(vec![6, 4], 4);
    check("bias", rand_tensor(vec![4], 5), |g, b| {
        let x = g.constant(x0.clone());
        let y = g.add_bias(x, b)?;
        let y = g.relu(y);
        project(g, y, 6)
    });
    // keep inputs away from the kink
    let mut p = rand_tensor(vec![3, 5], 7);
    for v in &mut p.data {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    check("relu", p, |g, x| {
        let y = g.relu(x);
        project(g, y, 8)
    });
}

#[test]
fn relu_backward_at_negative_input_is_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(-1.0));
    let y = g.relu(x);
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0]);
}

#[test]
fn max_over_rows_routes_to_argmax() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_rows(&[[1.0, 5.0], [3.0, 2.0], [0.0, 0.0], [7.0, -1.0]]));
    let y = g.max_over_rows(x, 2).unwrap();
    assert_eq!(g.value(y).data, vec![3.0, 5.0, 7.0, 0.0]);
    let s = g.reduce_sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
    check("max_over_rows", rand_tensor(vec![6, 3], 9), |g, x| {
        let y = g.max_over_rows(x, 3)?;
        project(g, y, 10)
    });
}

#[test]
fn gradcheck_l2_normalize_rows() {
    check("l2_normalize_rows", rand_tensor(vec![4, 5], 11), |g, x| {
        let y = g.l2_normalize_rows(x);
        project(g, y, 12)
    });
}

#[test]
fn l2_normalize_zero_row_falls_back() {
    let mut g = Graph::new();
    let x = g.param(Tensor::from_rows(&[[0.0, 0.0], [3.0, 4.0]]));
    let y = g.l2_normalize_rows(x);
    assert_eq!(g.value(y).data, vec![0.0, 1.0, 0.6, 0.8]);
    assert_eq!(g.flags().degenerate_rows, 1);
}

#[test]
fn gradcheck_elementwise() {
    check("exp/neg/scale", rand_tensor(vec![3, 3], 13), |g, x| {
        let y = g.neg(x);
        let y = g.scale(y, 0.7);
        let y = g.exp(y);
        project(g, y, 14)
    });
    let other = rand_tensor(vec![3, 3], 16);
    check("add/sub/mul", rand_tensor(vec![3, 3], 15), |g, x| {
        let o = g.constant(other.clone());
        let a = g.add(x, o)?;
        let b = g.sub(a, x)?;
        let c = g.mul(a, x)?;
        let d = g.add(b, c)?;
        project(g, d, 17)
    });
}

#[test]
fn exp_underflow_clamps_to_zero() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![2], vec![-701.0, 0.0]).unwrap());
    let y = g.exp(x);
    assert_eq!(g.value(y).data, vec![0.0, 1.0]);
}

#[test]
fn gradcheck_scalar_ops() {
    let x0 = rand_tensor(vec![2, 3], 18);
    check("mul_scalar/div_scalar", Tensor::scalar(1.7), |g, s| {
        let x = g.constant(x0.clone());
        let y = g.mul_scalar(x, s)?;
        let z = g.div_scalar(y, s)?;
        let w = g.div_scalar(x, s)?;
        let q = g.add(z, w)?;
        project(g, q, 19)
    });
    check("reduce_sum/frobenius", rand_tensor(vec![4, 2], 20), |g, x| {
        let f = g.frobenius_norm(x);
        let s = g.reduce_sum(x);
        let t = g.mul(f, s)?;
        Ok(t)
    });
}

#[test]
fn gradcheck_shape_ops() {
    let other = rand_tensor(vec![2, 3], 22);
    check("concat/gather/transpose/reshape", rand_tensor(vec![3, 3], 21), |g, x| {
        let o = g.constant(other.clone());
        let c = g.concat(&[x, o, x])?;
        let r = g.gather_rows(c, &[0, 7, 7, 2, 4])?;
        let t = g.transpose(r);
        let s = g.reshape(t, vec![15])?;
        project(g, s, 23)
    });
}

#[test]
fn gradcheck_scale_rows_and_pairwise() {
    let pts = rand_tensor(vec![5, 3], 24);
    check("scale_rows weights", rand_tensor(vec![5, 1], 25), |g, w| {
        let p = g.constant(pts.clone());
        let y = g.scale_rows(p, w)?;
        project(g, y, 26)
    });
    let b = rand_tensor(vec![4, 6], 27);
    check("pairwise lhs", rand_tensor(vec![3, 6], 28), |g, a| {
        let bb = g.constant(b.clone());
        let d = g.pairwise_sq_dist(a, bb)?;
        project(g, d, 29)
    });
    let a = rand_tensor(vec![3, 6], 28);
    check("pairwise rhs", b.clone(), |g, bb| {
        let aa = g.constant(a.clone());
        let d = g.pairwise_sq_dist(aa, bb)?;
        project(g, d, 29)
    });
}

#[test]
fn gradcheck_rotate_z_groups() {
    let pts = rand_tensor(vec![6, 3], 30);
    check("rotate angles", rand_tensor(vec![2, 2], 31), |g, sc| {
        let p = g.constant(pts.clone());
        let y = g.rotate_z_groups(p, sc, 3)?;
        project(g, y, 32)
    });
    let sc = rand_tensor(vec![2, 2], 31);
    check("rotate points", pts.clone(), |g, p| {
        let s = g.constant(sc.clone());
        let y = g.rotate_z_groups(p, s, 3)?;
        project(g, y, 32)
    });
}

fn well_separated(seed: u64) -> Tensor<f64> {
    // U diag(3, 1.8, 0.6) V^T with random orthogonal factors
    let a = rand_tensor(vec![3, 3], seed);
    let b = rand_tensor(vec![3, 3], seed + 100);
    let qa = crate::linalg::svd3(&to_mat(&a)).u;
    let qb = crate::linalg::svd3(&to_mat(&b)).v;
    let m = crate::linalg::mat_mul(
        &crate::linalg::mat_mul(&qa, &crate::linalg::diag([3.0, 1.8, 0.6])),
        &crate::linalg::transpose(&qb),
    );
    Tensor::new(vec![3, 3], m.iter().flatten().copied().collect()).unwrap()
}

fn to_mat(t: &Tensor<f64>) -> crate::linalg::Mat3<f64> {
    let d = &t.data;
    [[d[0], d[1], d[2]], [d[3], d[4], d[5]], [d[6], d[7], d[8]]]
}

#[test]
fn svd3_of_diagonal() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::new(vec![3, 3], vec![3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0]).unwrap());
    let (u, s, v) = g.svd3(x).unwrap();
    assert_eq!(g.value(s).data, vec![3.0, 2.0, 1.0]);
    let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    assert_eq!(g.value(u).data, eye);
    assert_eq!(g.value(v).data, eye);
}

#[test]
fn gradcheck_svd_parts() {
    for seed in [40, 41, 42] {
        let p = well_separated(seed);
        check("svd S", p.clone(), |g, x| {
            let (_u, s, _v) = g.svd3(x)?;
            project(g, s, 43)
        });
        // columns of U and V carry a joint sign ambiguity, so probe the
        // sign-free squares instead of the raw factors
        check("svd U", p.clone(), |g, x| {
            let (u, _s, _v) = g.svd3(x)?;
            let outer = g.mul(u, u)?;
            project(g, outer, 47)
        });
        check("svd V", p.clone(), |g, x| {
            let (_u, _s, v) = g.svd3(x)?;
            let outer = g.mul(v, v)?;
            project(g, outer, 48)
        });
        check("svd rotation", p, |g, x| {
            let r = g.svd_rotation(x)?;
            project(g, r, 49)
        });
    }
}

#[test]
fn batched_svd_shapes() {
    let mut g = Graph::new();
    let mut data = well_separated(1).data;
    data.extend(well_separated(2).data);
    let x = g.param(Tensor::new(vec![2, 3, 3], data).unwrap());
    let (u, s, v) = g.svd3(x).unwrap();
    assert_eq!(g.value(u).shape, vec![2, 3, 3]);
    assert_eq!(g.value(s).shape, vec![2, 3]);
    assert_eq!(g.value(v).shape, vec![2, 3, 3]);
}

#[test]
fn svd_degenerate_is_flagged() {
    let mut g = Graph::new();
    let x = g.param(Tensor::new(vec![3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.5]).unwrap());
    let _ = g.svd3(x).unwrap();
    assert_eq!(g.flags().svd_degenerate, 1);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::new();
    let x = g.param(rand_tensor(vec![2, 3], 50));
    let s = g.reduce_sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
}

#[test]
fn backward_of_squared_norm_is_twice_x() {
    let mut g = Graph::new();
    let p = rand_tensor(vec![3, 2], 51);
    let x = g.param(p.clone());
    let sq = g.mul(x, x).unwrap();
    let s = g.reduce_sum(sq);
    g.backward(s).unwrap();
    for (d, v) in g.grad(x).unwrap().iter().zip(&p.data) {
        assert!((d - 2.0 * v).abs() < 1e-15);
    }
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut g = Graph::new();
    let x = g.param(rand_tensor(vec![2, 2], 52));
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn backward_is_linear_in_seed() {
    let w = rand_tensor(vec![3, 4], 54);
    let build = |g: &mut Graph<f64>| {
        let x = g.param(rand_tensor(vec![5, 3], 53));
        let w = g.constant(w.clone());
        let y = g.matmul(x, w).unwrap();
        let y = g.relu(y);
        let y = g.l2_normalize_rows(y);
        (x, y)
    };
    let seed = rand_tensor(vec![5, 4], 55).data;
    let mut g1 = Graph::new();
    let (x1, y1) = build(&mut g1);
    g1.backward_with(y1, seed.clone()).unwrap();
    let mut g2 = Graph::new();
    let (x2, y2) = build(&mut g2);
    g2.backward_with(y2, seed.iter().map(|v| 2.0 * v).collect()).unwrap();
    for (a, b) in g1.grad(x1).unwrap().iter().zip(g2.grad(x2).unwrap()) {
        assert!((2.0 * a - b).abs() < 1e-14);
    }
}

#[test]
fn linear_program_gradcheck_is_exact() {
    let rep = grad_check(
        |g, x| {
            let y = g.scale(x, 3.0);
            Ok(g.reduce_sum(y))
        },
        &rand_tensor(vec![4], 56),
        1e-5,
    )
    .unwrap();
    assert!(rep.max_rel_error < 1e-10);
}

#[test]
fn shape_errors() {
    let mut g = Graph::new();
    let a = g.constant(rand_tensor(vec![2, 3], 1));
    let b = g.constant(rand_tensor(vec![2, 3], 2));
    assert!(matches!(g.matmul(a, b), Err(Error::ShapeMismatch { .. })));
    assert!(g.max_over_rows(a, 4).is_err());
    assert!(g.svd3(a).is_err());
}
