//! Fixed-size 3-vector / 3x3 matrix helpers, the 3x3 SVD and the
//! symmetric 3x3 eigensolver.

use crate::scalar::Real;

pub type Vec3<T> = [T; 3];
/// Row-major 3x3 matrix: `m[row][col]`.
pub type Mat3<T> = [[T; 3]; 3];

pub fn identity<T: Real>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn zeros<T: Real>() -> Mat3<T> {
    [[T::zero(); 3]; 3]
}

pub fn diag<T: Real>(d: Vec3<T>) -> Mat3<T> {
    let z = T::zero();
    [[d[0], z, z], [z, d[1], z], [z, z, d[2]]]
}

/// Rotation about +Z by `theta` radians.
pub fn rot_z<T: Real>(theta: T) -> Mat3<T> {
    let (s, c) = theta.sin_cos();
    let (o, z) = (T::one(), T::zero());
    [[c, -s, z], [s, c, z], [z, z, o]]
}

pub fn add<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale<T: Real>(a: &Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm<T: Real>(a: &Vec3<T>) -> T {
    dot(a, a).sqrt()
}

pub fn dist2<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> T {
    let d = sub(a, b);
    dot(&d, &d)
}

pub fn mat_vec<T: Real>(m: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut c = zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

pub fn transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut t = zeros();
    for i in 0..3 {
        for j in 0..3 {
            t[j][i] = a[i][j];
        }
    }
    t
}

pub fn mat_sub<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut c = zeros();
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][j] - b[i][j];
        }
    }
    c
}

pub fn det<T: Real>(m: &Mat3<T>) -> T {
    dot(&m[0], &cross(&m[1], &m[2]))
}

pub fn trace<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] + m[1][1] + m[2][2]
}

pub fn frobenius<T: Real>(m: &Mat3<T>) -> T {
    m.iter().flatten().map(|&x| x * x).sum::<T>().sqrt()
}

/// Outer product `a * b^T`.
pub fn outer<T: Real>(a: &Vec3<T>, b: &Vec3<T>) -> Mat3<T> {
    let mut m = zeros();
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[i] * b[j];
        }
    }
    m
}

fn col<T: Real>(m: &Mat3<T>, j: usize) -> Vec3<T> {
    [m[0][j], m[1][j], m[2][j]]
}

fn set_col<T: Real>(m: &mut Mat3<T>, j: usize, v: &Vec3<T>) {
    for i in 0..3 {
        m[i][j] = v[i];
    }
}

/// Singular value decomposition `a = u * diag(s) * v^T` of a 3x3 matrix.
///
/// `s` is sorted in descending order and non-negative; `u` and `v` are
/// orthogonal (either may be a reflection).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Svd3<T> {
    pub u: Mat3<T>,
    pub s: Vec3<T>,
    pub v: Mat3<T>,
}

impl<T: Real> Svd3<T> {
    pub fn reconstruct(&self) -> Mat3<T> {
        mat_mul(&mat_mul(&self.u, &diag(self.s)), &transpose(&self.v))
    }

    /// Nearest proper rotation: `u * diag(1, 1, det(u v^T)) * v^T`.
    pub fn rotation(&self) -> Mat3<T> {
        let d = self.reflection_sign();
        mat_mul(
            &mat_mul(&self.u, &diag([T::one(), T::one(), d])),
            &transpose(&self.v),
        )
    }

    /// `det(u v^T)` rounded to +-1.
    pub fn reflection_sign(&self) -> T {
        if det(&self.u) * det(&self.v) < T::zero() {
            -T::one()
        } else {
            T::one()
        }
    }
}

/// 3x3 SVD by one-sided (Hestenes) Jacobi rotations.
pub fn svd3<T: Real>(a: &Mat3<T>) -> Svd3<T> {
    let mut g = *a;
    let mut v = identity::<T>();
    let eps = T::epsilon();
    for _sweep in 0..60 {
        let mut rotated = false;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let gp = col(&g, p);
            let gq = col(&g, q);
            let alpha = dot(&gp, &gp);
            let beta = dot(&gq, &gq);
            let gamma = dot(&gp, &gq);
            if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (gamma + gamma);
            let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
            let c = T::one() / (T::one() + t * t).sqrt();
            let s = c * t;
            for i in 0..3 {
                let (x, y) = (g[i][p], g[i][q]);
                g[i][p] = c * x - s * y;
                g[i][q] = s * x + c * y;
                let (x, y) = (v[i][p], v[i][q]);
                v[i][p] = c * x - s * y;
                v[i][q] = s * x + c * y;
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order = [0usize, 1, 2];
    let norms = [norm(&col(&g, 0)), norm(&col(&g, 1)), norm(&col(&g, 2))];
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap_or(std::cmp::Ordering::Equal));

    let mut u = zeros::<T>();
    let mut vs = zeros::<T>();
    let mut s = [T::zero(); 3];
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        set_col(&mut vs, k, &col(&v, j));
    }

    let tiny = s[0] * T::lit(1e-12);
    if s[0] <= T::min_positive_value() {
        return Svd3 {
            u: identity(),
            s: [T::zero(); 3],
            v: vs,
        };
    }
    let u0 = scale(&col(&g, order[0]), T::one() / s[0]);
    set_col(&mut u, 0, &u0);
    let u1 = if s[1] > tiny {
        scale(&col(&g, order[1]), T::one() / s[1])
    } else {
        any_orthogonal(&u0)
    };
    set_col(&mut u, 1, &u1);
    let u2 = if s[2] > tiny {
        scale(&col(&g, order[2]), T::one() / s[2])
    } else {
        cross(&u0, &u1)
    };
    set_col(&mut u, 2, &u2);
    Svd3 { u, s, v: vs }
}

fn any_orthogonal<T: Real>(a: &Vec3<T>) -> Vec3<T> {
    let (o, z) = (T::one(), T::zero());
    let axis = if a[0].abs() <= a[1].abs() && a[0].abs() <= a[2].abs() {
        [o, z, z]
    } else if a[1].abs() <= a[2].abs() {
        [z, o, z]
    } else {
        [z, z, o]
    };
    let c = cross(a, &axis);
    scale(&c, T::one() / norm(&c))
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi.
///
/// Returns eigenvalues in descending order and the matching unit
/// eigenvectors as the columns of the returned matrix.
pub fn sym_eigen3<T: Real>(m: &Mat3<T>) -> (Vec3<T>, Mat3<T>) {
    let mut a = *m;
    let mut v = identity::<T>();
    for _sweep in 0..50 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        let scale_ = trace(&a).abs() + frobenius(&a);
        if off.sqrt() <= T::epsilon() * scale_ * T::lit(1e-2) || off == T::zero() {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q] == T::zero() {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (a[p][q] + a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
            let c = T::one() / (t * t + T::one()).sqrt();
            let s = t * c;
            // A <- J^T A J with J the (p, q) Givens rotation
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for k in 0..3 {
                let (vkp, vkq) = (v[k][p], v[k][q]);
                v[k][p] = c * vkp - s * vkq;
                v[k][q] = s * vkp + c * vkq;
            }
        }
    }
    let vals = [a[0][0], a[1][1], a[2][2]];
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap_or(std::cmp::Ordering::Equal));
    let mut vecs = zeros::<T>();
    let mut out = [T::zero(); 3];
    for (k, &j) in order.iter().enumerate() {
        out[k] = vals[j];
        set_col(&mut vecs, k, &col(&v, j));
    }
    (out, vecs)
}
