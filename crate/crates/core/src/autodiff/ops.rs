//! Forward definitions and backward rules of the primitives.

use super::{Graph, Op, SvdPart, Tensor, Var, NORMALIZE_MIN_NORM, SVD_GAP_TOL};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, Svd3};
use crate::scalar::Real;

fn dims2<T: Real>(t: &Tensor<T>) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn mat3_at<T: Real>(data: &[T], b: usize) -> Mat3<T> {
    let d = &data[b * 9..b * 9 + 9];
    [[d[0], d[1], d[2]], [d[3], d[4], d[5]], [d[6], d[7], d[8]]]
}

fn put_mat3<T: Real>(out: &mut [T], b: usize, m: &Mat3<T>) {
    for i in 0..3 {
        for j in 0..3 {
            out[b * 9 + i * 3 + j] = m[i][j];
        }
    }
}

impl<T: Real> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (&self.value(a).shape, &self.value(b).shape);
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn scalar_operand(&self, op: &'static str, s: Var) -> Result<T> {
        let t = self.value(s);
        if t.numel() != 1 {
            return Err(Error::shape(op, format!("expected a scalar, got {:?}", t.shape)));
        }
        Ok(t.item())
    }

    /// `(m, k) x (k, n) -> (m, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a));
        let (k2, n) = dims2(self.value(b));
        if k != k2 {
            return Err(Error::shape("matmul", format!("({m},{k}) x ({k2},{n})")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, T::one(), &self.value(a).data, false, &self.value(b).data, false, T::zero(), &mut out);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, rg, Op::MatMul(a, b)))
    }

    /// Adds a length-`n` bias to every row of an `(m, n)` tensor.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x));
        if self.value(b).numel() != n {
            return Err(Error::shape("add_bias", format!("({m},{n}) + {:?}", self.value(b).shape)));
        }
        let bias = &self.value(b).data;
        let mut out = self.value(x).data.clone();
        for row in out.chunks_exact_mut(n) {
            for (o, &bb) in row.iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let rg = self.any_grad(&[x, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, rg, Op::AddBias(x, b)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| v.max(T::zero())).collect();
        let shape = t.shape.clone();
        let rg = self.any_grad(&[x]);
        self.push(Tensor { shape, data }, rg, Op::Relu(x))
    }

    /// Column-wise max over consecutive blocks of `group` rows:
    /// `(g * group, n) -> (g, n)`. The gradient goes to the first
    /// maximal row of each block.
    pub fn max_over_rows(&mut self, x: Var, group: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(x));
        if group == 0 || m % group != 0 {
            return Err(Error::shape("max_over_rows", format!("{m} rows in groups of {group}")));
        }
        let g = m / group;
        let src = &self.value(x).data;
        let mut out = vec![T::neg_infinity(); g * n];
        let mut argmax = vec![0usize; g * n];
        for b in 0..g {
            for r in b * group..(b + 1) * group {
                let row = &src[r * n..(r + 1) * n];
                for j in 0..n {
                    if row[j] > out[b * n + j] {
                        out[b * n + j] = row[j];
                        argmax[b * n + j] = r;
                    }
                }
            }
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor { shape: vec![g, n], data: out }, rg, Op::MaxOverRows { x, argmax }))
    }

    /// Divides every row by its L2 norm. Rows with norm below
    /// [`NORMALIZE_MIN_NORM`] become the last unit vector, carry no
    /// gradient and are counted in [`GraphFlags::degenerate_rows`].
    ///
    /// [`GraphFlags::degenerate_rows`]: super::GraphFlags::degenerate_rows
    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let (m, n) = dims2(self.value(x));
        let shape = self.value(x).shape.clone();
        let src = &self.value(x).data;
        let mut out = vec![T::zero(); m * n];
        let mut norms = vec![T::zero(); m];
        let mut degenerate = 0;
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let nrm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            if nrm < T::lit(NORMALIZE_MIN_NORM) {
                out[i * n + n - 1] = T::one();
                degenerate += 1;
            } else {
                norms[i] = nrm;
                for j in 0..n {
                    out[i * n + j] = row[j] / nrm;
                }
            }
        }
        self.flags.degenerate_rows += degenerate;
        let rg = self.any_grad(&[x]);
        self.push(Tensor { shape, data: out }, rg, Op::L2NormalizeRows { x, norms })
    }

    /// Elementwise `exp`; arguments below -700 give exactly 0.
    pub fn exp(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let floor = T::lit(-700.0);
        let data = t
            .data
            .iter()
            .map(|&v| if v < floor { T::zero() } else { v.exp() })
            .collect();
        let shape = t.shape.clone();
        let rg = self.any_grad(&[x]);
        self.push(Tensor { shape, data }, rg, Op::Exp(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| -v).collect();
        let shape = t.shape.clone();
        let rg = self.any_grad(&[x]);
        self.push(Tensor { shape, data }, rg, Op::Neg(x))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| v * s).collect();
        let shape = t.shape.clone();
        let rg = self.any_grad(&[x]);
        self.push(Tensor { shape, data }, rg, Op::Scale(x, s))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, node: Op<T>) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape.clone();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape, data }, rg, node))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x * s` with `s` a one-element tensor.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.scalar_operand("mul_scalar", s)?;
        let t = self.value(x);
        let data = t.data.iter().map(|&v| v * sv).collect();
        let shape = t.shape.clone();
        let rg = self.any_grad(&[x, s]);
        Ok(self.push(Tensor { shape, data }, rg, Op::MulScalar { x, s }))
    }

    /// `x / s` with `s` a one-element tensor.
    pub fn div_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.scalar_operand("div_scalar", s)?;
        let t = self.value(x);
        let data = t.data.iter().map(|&v| v / sv).collect();
        let shape = t.shape.clone();
        let rg = self.any_grad(&[x, s]);
        Ok(self.push(Tensor { shape, data }, rg, Op::DivScalar { x, s }))
    }

    pub fn reduce_sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().copied().sum();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::ReduceSum(x))
    }

    pub fn frobenius_norm(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().map(|&v| v * v).sum::<T>().sqrt();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), rg, Op::FrobeniusNorm(x))
    }

    /// Stacks tensors with equal column count along the row axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat", "no inputs"));
        };
        let n = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != n {
                return Err(Error::shape("concat", format!("{} vs {} columns", t.cols(), n)));
            }
            rows += t.rows();
            data.extend_from_slice(&t.data);
        }
        let rg = self.any_grad(parts);
        Ok(self.push(Tensor { shape: vec![rows, n], data }, rg, Op::Concat(parts.to_vec())))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (m, n) = dims2(self.value(x));
        if let Some(&bad) = idx.iter().find(|&&i| i >= m) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {m}")));
        }
        let src = &self.value(x).data;
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            Tensor { shape: vec![idx.len(), n], data },
            rg,
            Op::GatherRows { x, idx: idx.to_vec() },
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let (m, n) = dims2(self.value(x));
        let src = &self.value(x).data;
        let mut data = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.any_grad(&[x]);
        self.push(Tensor { shape: vec![n, m], data }, rg, Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(x);
        if shape.iter().product::<usize>() != t.numel() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", t.shape)));
        }
        let data = t.data.clone();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor { shape, data }, rg, Op::Reshape(x)))
    }

    /// Multiplies row `i` of `(m, n)` tensor `x` by `w[i]`.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(x));
        if self.value(w).numel() != m {
            return Err(Error::shape("scale_rows", format!("{m} rows vs {} weights", self.value(w).numel())));
        }
        let ws = &self.value(w).data;
        let mut data = self.value(x).data.clone();
        for (row, &wi) in data.chunks_exact_mut(n).zip(ws) {
            for v in row {
                *v *= wi;
            }
        }
        let rg = self.any_grad(&[x, w]);
        Ok(self.push(Tensor { shape: vec![m, n], data }, rg, Op::ScaleRows { x, w }))
    }

    /// `out[i][j] = |a_i - b_j|^2` for row sets `a: (p, d)`, `b: (q, d)`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (p, d) = dims2(self.value(a));
        let (q, d2) = dims2(self.value(b));
        if d != d2 {
            return Err(Error::shape("pairwise_sq_dist", format!("dims {d} vs {d2}")));
        }
        let (ad, bd) = (&self.value(a).data, &self.value(b).data);
        let mut data = vec![T::zero(); p * q];
        for i in 0..p {
            let ai = &ad[i * d..(i + 1) * d];
            for j in 0..q {
                let bj = &bd[j * d..(j + 1) * d];
                data[i * q + j] = ai.iter().zip(bj).map(|(&x, &y)| (x - y) * (x - y)).sum();
            }
        }
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor { shape: vec![p, q], data }, rg, Op::PairwiseSqDist(a, b)))
    }

    /// Rotates each block of `group` rows of `pts: (k * group, 3)` by
    /// `Rz(-theta_i)`, where row `i` of `sincos: (k, 2)` holds
    /// `(sin theta_i, cos theta_i)`.
    pub fn rotate_z_groups(&mut self, pts: Var, sincos: Var, group: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(pts));
        let (k, two) = dims2(self.value(sincos));
        if n != 3 || two != 2 || group == 0 || k * group != m {
            return Err(Error::shape(
                "rotate_z_groups",
                format!("points ({m},{n}), angles ({k},{two}), group {group}"),
            ));
        }
        let src = &self.value(pts).data;
        let sc = &self.value(sincos).data;
        let mut data = vec![T::zero(); m * 3];
        for r in 0..m {
            let (s, c) = (sc[(r / group) * 2], sc[(r / group) * 2 + 1]);
            let (x, y, z) = (src[r * 3], src[r * 3 + 1], src[r * 3 + 2]);
            data[r * 3] = c * x + s * y;
            data[r * 3 + 1] = -s * x + c * y;
            data[r * 3 + 2] = z;
        }
        let rg = self.any_grad(&[pts, sincos]);
        Ok(self.push(
            Tensor { shape: vec![m, 3], data },
            rg,
            Op::RotateZGroups { pts, sincos, group },
        ))
    }

    /// Batched 3x3 SVD of `x: (3, 3)` or `(b, 3, 3)`.
    ///
    /// Returns `(U, S, V)` with `x = U diag(S) V^T`. Singular value
    /// pairs whose squares differ by less than [`SVD_GAP_TOL`] are
    /// clamped in the backward rule and counted in
    /// [`GraphFlags::svd_degenerate`].
    ///
    /// [`GraphFlags::svd_degenerate`]: super::GraphFlags::svd_degenerate
    pub fn svd3(&mut self, x: Var) -> Result<(Var, Var, Var)> {
        let t = self.value(x);
        let batched = match t.shape.as_slice() {
            [3, 3] => false,
            [_, 3, 3] => true,
            s => return Err(Error::shape("svd3", format!("expected (3,3) or (b,3,3), got {s:?}"))),
        };
        let b = t.numel() / 9;
        let factors: Vec<Svd3<T>> = (0..b).map(|i| linalg::svd3(&mat3_at(&t.data, i))).collect();
        let tol = T::lit(SVD_GAP_TOL);
        let degenerate = factors
            .iter()
            .filter(|f| min_sq_gap(&f.s) < tol)
            .count();
        self.flags.svd_degenerate += degenerate;

        let mat_shape = if batched { vec![b, 3, 3] } else { vec![3, 3] };
        let vec_shape = if batched { vec![b, 3] } else { vec![3] };
        let mut ud = vec![T::zero(); b * 9];
        let mut vd = vec![T::zero(); b * 9];
        let mut sd = vec![T::zero(); b * 3];
        for (i, f) in factors.iter().enumerate() {
            put_mat3(&mut ud, i, &f.u);
            put_mat3(&mut vd, i, &f.v);
            sd[i * 3..i * 3 + 3].copy_from_slice(&f.s);
        }
        let rg = self.any_grad(&[x]);
        let u = self.push(
            Tensor { shape: mat_shape.clone(), data: ud },
            rg,
            Op::SvdPart { x, part: SvdPart::U, factors: factors.clone() },
        );
        let s = self.push(
            Tensor { shape: vec_shape, data: sd },
            rg,
            Op::SvdPart { x, part: SvdPart::S, factors: factors.clone() },
        );
        let v = self.push(
            Tensor { shape: mat_shape, data: vd },
            rg,
            Op::SvdPart { x, part: SvdPart::V, factors },
        );
        Ok((u, s, v))
    }

    /// Nearest proper rotation `U diag(1, 1, det(U V^T)) V^T` of a 3x3
    /// matrix, differentiable through [`Graph::svd3`].
    pub fn svd_rotation(&mut self, x: Var) -> Result<Var> {
        if self.value(x).shape != [3, 3] {
            return Err(Error::shape("svd_rotation", format!("{:?}", self.value(x).shape)));
        }
        let (u, _s, v) = self.svd3(x)?;
        let um = mat3_at(&self.value(u).data, 0);
        let vm = mat3_at(&self.value(v).data, 0);
        let d = if linalg::det(&um) * linalg::det(&vm) < T::zero() {
            -T::one()
        } else {
            T::one()
        };
        let dm = self.constant(Tensor {
            shape: vec![3, 3],
            data: vec![
                T::one(), T::zero(), T::zero(),
                T::zero(), T::one(), T::zero(),
                T::zero(), T::zero(), d,
            ],
        });
        let ud = self.matmul(u, dm)?;
        let vt = self.transpose(v);
        self.matmul(ud, vt)
    }

    pub(super) fn backward_node(&mut self, i: usize, op: &Op<T>, g: &[T]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.value(*a));
                let n = self.value(*b).cols();
                if self.requires_grad(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, T::one(), g, false, &self.value(*b).data, true, T::zero(), &mut da);
                    self.accumulate(*a, da);
                }
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, T::one(), &self.value(*a).data, true, g, false, T::zero(), &mut db);
                    self.accumulate(*b, db);
                }
            }
            Op::AddBias(x, b) => {
                let n = self.value(*b).numel();
                if self.requires_grad(*b) {
                    let mut db = vec![T::zero(); n];
                    for row in g.chunks_exact(n) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate(*b, db);
                }
                self.accumulate(*x, g.to_vec());
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .data
                    .iter()
                    .zip(g)
                    .map(|(&v, &gg)| if v > T::zero() { gg } else { T::zero() })
                    .collect();
                self.accumulate(*x, dx);
            }
            Op::MaxOverRows { x, argmax, .. } => {
                let n = self.value(*x).cols();
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (o, &r) in argmax.iter().enumerate() {
                    dx[r * n + o % n] += g[o];
                }
                self.accumulate(*x, dx);
            }
            Op::L2NormalizeRows { x, norms } => {
                let n = self.value(*x).cols();
                let src = &self.value(*x).data;
                let mut dx = vec![T::zero(); src.len()];
                for (i, &nrm) in norms.iter().enumerate() {
                    if nrm == T::zero() {
                        continue;
                    }
                    let row = &src[i * n..(i + 1) * n];
                    let gi = &g[i * n..(i + 1) * n];
                    // y = x / |x|, dy/dx = (I - y y^T) / |x|
                    let ydotg: T = row.iter().zip(gi).map(|(&v, &gg)| v * gg).sum::<T>() / nrm;
                    for j in 0..n {
                        dx[i * n + j] = (gi[j] - row[j] / nrm * ydotg) / nrm;
                    }
                }
                self.accumulate(*x, dx);
            }
            Op::Exp(x) => {
                // the output holds exp(x)
                let out = &self.nodes[i].value.data;
                let dx = out.iter().zip(g).map(|(&y, &gg)| y * gg).collect();
                self.accumulate(*x, dx);
            }
            Op::Neg(x) => self.accumulate(*x, g.iter().map(|&v| -v).collect()),
            Op::Scale(x, s) => self.accumulate(*x, g.iter().map(|&v| v * *s).collect()),
            Op::Add(a, b) => {
                self.accumulate(*a, g.to_vec());
                self.accumulate(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.to_vec());
                self.accumulate(*b, g.iter().map(|&v| -v).collect());
            }
            Op::Mul(a, b) => {
                let da = self.value(*b).data.iter().zip(g).map(|(&y, &gg)| y * gg).collect();
                let db = self.value(*a).data.iter().zip(g).map(|(&y, &gg)| y * gg).collect();
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::MulScalar { x, s } => {
                let sv = self.value(*s).item();
                let ds: T = self.value(*x).data.iter().zip(g).map(|(&v, &gg)| v * gg).sum();
                self.accumulate(*x, g.iter().map(|&v| v * sv).collect());
                self.accumulate(*s, vec![ds]);
            }
            Op::DivScalar { x, s } => {
                let sv = self.value(*s).item();
                let ds: T = -self.value(*x).data.iter().zip(g).map(|(&v, &gg)| v * gg).sum::<T>() / (sv * sv);
                self.accumulate(*x, g.iter().map(|&v| v / sv).collect());
                self.accumulate(*s, vec![ds]);
            }
            Op::ReduceSum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(*x, vec![g[0]; n]);
            }
            Op::FrobeniusNorm(x) => {
                let nrm = self.nodes[i].value.item();
                let dx = if nrm == T::zero() {
                    vec![T::zero(); self.value(*x).numel()]
                } else {
                    self.value(*x).data.iter().map(|&v| v / nrm * g[0]).collect()
                };
                self.accumulate(*x, dx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    self.accumulate(p, g[off..off + len].to_vec());
                    off += len;
                }
            }
            Op::GatherRows { x, idx } => {
                let n = self.value(*x).cols();
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (o, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        dx[i * n + j] += g[o * n + j];
                    }
                }
                self.accumulate(*x, dx);
            }
            Op::Transpose(x) => {
                let (m, n) = dims2(self.value(*x));
                let mut dx = vec![T::zero(); m * n];
                for i in 0..m {
                    for j in 0..n {
                        dx[i * n + j] = g[j * m + i];
                    }
                }
                self.accumulate(*x, dx);
            }
            Op::Reshape(x) => self.accumulate(*x, g.to_vec()),
            Op::ScaleRows { x, w } => {
                let n = self.value(*x).cols();
                let ws = &self.value(*w).data;
                let xs = &self.value(*x).data;
                let mut dx = g.to_vec();
                let mut dw = vec![T::zero(); ws.len()];
                for (i, &wi) in ws.iter().enumerate() {
                    for j in 0..n {
                        dx[i * n + j] *= wi;
                        dw[i] += g[i * n + j] * xs[i * n + j];
                    }
                }
                self.accumulate(*x, dx);
                self.accumulate(*w, dw);
            }
            Op::PairwiseSqDist(a, b) => {
                let (p, d) = dims2(self.value(*a));
                let q = self.value(*b).rows();
                let (ad, bd) = (&self.value(*a).data, &self.value(*b).data);
                let two = T::lit(2.0);
                if self.requires_grad(*a) {
                    // dA = 2 (diag(rowsum g) A - g B)
                    let mut da = vec![T::zero(); p * d];
                    T::gemm(p, q, d, -two, g, false, bd, false, T::zero(), &mut da);
                    for i in 0..p {
                        let rs: T = g[i * q..(i + 1) * q].iter().copied().sum();
                        for j in 0..d {
                            da[i * d + j] += two * rs * ad[i * d + j];
                        }
                    }
                    self.accumulate(*a, da);
                }
                let (ad, bd) = (&self.value(*a).data, &self.value(*b).data);
                if self.requires_grad(*b) {
                    // dB = 2 (diag(colsum g) B - g^T A)
                    let mut db = vec![T::zero(); q * d];
                    T::gemm(q, p, d, -two, g, true, ad, false, T::zero(), &mut db);
                    for j in 0..q {
                        let cs: T = (0..p).map(|i| g[i * q + j]).sum();
                        for k in 0..d {
                            db[j * d + k] += two * cs * bd[j * d + k];
                        }
                    }
                    self.accumulate(*b, db);
                }
            }
            Op::RotateZGroups { pts, sincos, group } => {
                let src = &self.value(*pts).data;
                let sc = &self.value(*sincos).data;
                let m = src.len() / 3;
                let mut dp = vec![T::zero(); src.len()];
                let mut dsc = vec![T::zero(); sc.len()];
                for r in 0..m {
                    let k = r / group;
                    let (s, c) = (sc[k * 2], sc[k * 2 + 1]);
                    let (x, y) = (src[r * 3], src[r * 3 + 1]);
                    let (gx, gy, gz) = (g[r * 3], g[r * 3 + 1], g[r * 3 + 2]);
                    dp[r * 3] = c * gx - s * gy;
                    dp[r * 3 + 1] = s * gx + c * gy;
                    dp[r * 3 + 2] = gz;
                    dsc[k * 2] += y * gx - x * gy;
                    dsc[k * 2 + 1] += x * gx + y * gy;
                }
                self.accumulate(*pts, dp);
                self.accumulate(*sincos, dsc);
            }
            Op::SvdPart { x, part, factors } => {
                let mut dx = vec![T::zero(); factors.len() * 9];
                for (b, f) in factors.iter().enumerate() {
                    let da = match part {
                        SvdPart::S => {
                            let gs = [g[b * 3], g[b * 3 + 1], g[b * 3 + 2]];
                            svd_backward(f, None, Some(gs), None)
                        }
                        SvdPart::U => svd_backward(f, Some(mat3_at(g, b)), None, None),
                        SvdPart::V => svd_backward(f, None, None, Some(mat3_at(g, b))),
                    };
                    put_mat3(&mut dx, b, &da);
                }
                self.accumulate(*x, dx);
            }
        }
    }
}

fn min_sq_gap<T: Real>(s: &[T; 3]) -> T {
    let sq = [s[0] * s[0], s[1] * s[1], s[2] * s[2]];
    (sq[0] - sq[1]).abs().min((sq[1] - sq[2]).abs()).min((sq[0] - sq[2]).abs())
}

/// Adjoint of `A = U diag(s) V^T` for a square full-rank 3x3 matrix:
///
/// `dA = U [ (F o (U^T dU - dU^T U)) S + diag(ds) + S (F o (V^T dV - dV^T V)) ] V^T`
///
/// with `F_ij = 1 / (s_j^2 - s_i^2)` off the diagonal.
pub(crate) fn svd_backward<T: Real>(
    f: &Svd3<T>,
    du: Option<Mat3<T>>,
    ds: Option<[T; 3]>,
    dv: Option<Mat3<T>>,
) -> Mat3<T> {
    let tol = T::lit(SVD_GAP_TOL);
    let mut fm = linalg::zeros::<T>();
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                let mut gap = f.s[j] * f.s[j] - f.s[i] * f.s[i];
                if gap.abs() < tol {
                    gap = if gap < T::zero() { -tol } else { tol };
                }
                fm[i][j] = T::one() / gap;
            }
        }
    }
    let sm = linalg::diag(f.s);
    let mut inner = linalg::zeros::<T>();
    let skew = |a: &Mat3<T>, da: &Mat3<T>| {
        let p = linalg::mat_mul(&linalg::transpose(a), da);
        let mut k = linalg::mat_sub(&p, &linalg::transpose(&p));
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] *= fm[i][j];
            }
        }
        k
    };
    if let Some(du) = du {
        let j = skew(&f.u, &du);
        inner = add3(&inner, &linalg::mat_mul(&j, &sm));
    }
    if let Some(ds) = ds {
        inner = add3(&inner, &linalg::diag(ds));
    }
    if let Some(dv) = dv {
        let k = skew(&f.v, &dv);
        inner = add3(&inner, &linalg::mat_mul(&sm, &k));
    }
    linalg::mat_mul(&linalg::mat_mul(&f.u, &inner), &linalg::transpose(&f.v))
}

fn add3<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] += b[i][j];
        }
    }
    c
}
