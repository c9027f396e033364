//! Descriptor network: a per-cluster Z-orientation estimate, re-rotation of
//! the cluster, then a shared point MLP with max pooling and a dense head
//! producing one unit-length descriptor per cluster.

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::linalg::Vec3;
use crate::rng::SeededRng;
use crate::sampling::ClusterSet;
use crate::scalar::Real;

pub const DEFAULT_DESCRIPTOR_DIM: usize = 32;

/// `k` descriptor rows of width `dim` plus the keypoints they describe.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet<T> {
    /// Row-major `k x dim`.
    pub vectors: Vec<T>,
    pub dim: usize,
    pub keypoints: Vec<Vec3<T>>,
}

impl<T: Real> DescriptorSet<T> {
    pub fn new(vectors: Vec<T>, dim: usize, keypoints: Vec<Vec3<T>>) -> Result<Self> {
        if dim == 0 || vectors.len() != dim * keypoints.len() {
            return Err(Error::shape(
                "DescriptorSet::new",
                format!("{} values for {} keypoints of dim {dim}", vectors.len(), keypoints.len()),
            ));
        }
        Ok(Self {
            vectors,
            dim,
            keypoints,
        })
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_tensor(&self) -> Tensor<T> {
        Tensor {
            shape: vec![self.len(), self.dim],
            data: self.vectors.clone(),
        }
    }
}

/// Hidden widths of both sub-networks. Input width is always 3; the
/// orientation head ends in 2 outputs and the feature head in
/// `descriptor_dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub orient_point: Vec<usize>,
    pub orient_head: Vec<usize>,
    pub feat_point: Vec<usize>,
    pub feat_head: Vec<usize>,
    pub descriptor_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            orient_point: vec![32, 64],
            orient_head: vec![32],
            feat_point: vec![64, 128, 256],
            feat_head: vec![128],
            descriptor_dim: DEFAULT_DESCRIPTOR_DIM,
        }
    }
}

const STAGES: [&str; 4] = ["orient.point", "orient.head", "feat.point", "feat.head"];

impl Architecture {
    /// `(name, fan_in, fan_out)` of every dense layer, in storage order.
    fn dense_layers(&self) -> Vec<(String, usize, usize)> {
        let mut out = Vec::new();
        let mut push_stage = |stage: &str, input: usize, widths: &[usize]| {
            let mut fan_in = input;
            for (i, &w) in widths.iter().enumerate() {
                out.push((format!("{stage}.{i}"), fan_in, w));
                fan_in = w;
            }
        };
        let head = |hidden: &[usize], last: usize| {
            let mut v = hidden.to_vec();
            v.push(last);
            v
        };
        push_stage(STAGES[0], 3, &self.orient_point);
        push_stage(STAGES[1], *self.orient_point.last().unwrap_or(&3), &head(&self.orient_head, 2));
        push_stage(STAGES[2], 3, &self.feat_point);
        push_stage(
            STAGES[3],
            *self.feat_point.last().unwrap_or(&3),
            &head(&self.feat_head, self.descriptor_dim),
        );
        out
    }

    fn validate(&self) -> Result<()> {
        if self.orient_point.is_empty() || self.feat_point.is_empty() || self.descriptor_dim == 0 {
            return Err(Error::InvalidConfig(
                "point MLPs need at least one layer and descriptor_dim must be positive".into(),
            ));
        }
        if self.dense_layers().iter().any(|(_, _, w)| *w == 0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Recovers the architecture from stored layer names and shapes.
    pub fn from_layers<T>(layers: &[Layer<T>]) -> Result<Self> {
        let mut widths: [Vec<(usize, usize)>; 4] = Default::default();
        for l in layers {
            let Some((base, kind)) = l.name.rsplit_once('.') else {
                return Err(Error::Shape(format!("unexpected layer name {:?}", l.name)));
            };
            if kind != "weight" {
                continue;
            }
            let (stage, idx) = base
                .rsplit_once('.')
                .and_then(|(s, i)| Some((STAGES.iter().position(|&x| x == s)?, i.parse::<usize>().ok()?)))
                .ok_or_else(|| Error::Shape(format!("unexpected layer name {:?}", l.name)))?;
            if l.shape.len() != 2 {
                return Err(Error::Shape(format!("{} has rank {}", l.name, l.shape.len())));
            }
            if idx != widths[stage].len() {
                return Err(Error::Shape(format!("{} is out of order", l.name)));
            }
            widths[stage].push((l.shape[0], l.shape[1]));
        }
        let outs = |s: &[(usize, usize)]| s.iter().map(|x| x.1).collect::<Vec<_>>();
        let oh = outs(&widths[1]);
        let fh = outs(&widths[3]);
        if oh.last() != Some(&2) || fh.is_empty() {
            return Err(Error::Shape("missing or malformed head layers".into()));
        }
        let arch = Architecture {
            orient_point: outs(&widths[0]),
            orient_head: oh[..oh.len() - 1].to_vec(),
            feat_point: outs(&widths[2]),
            feat_head: fh[..fh.len() - 1].to_vec(),
            descriptor_dim: *fh.last().unwrap(),
        };
        arch.validate().map_err(|e| Error::Shape(e.to_string()))?;
        let expected = DescriptorParams::<f64>::shapes(&arch);
        let got: Vec<(&str, &[usize])> = layers.iter().map(|l| (l.name.as_str(), l.shape.as_slice())).collect();
        if expected.len() != got.len()
            || expected
                .iter()
                .zip(&got)
                .any(|((n, s), (gn, gs))| n != gn || s.as_slice() != *gs)
        {
            return Err(Error::Shape("layer list does not chain into a valid network".into()));
        }
        Ok(arch)
    }
}

/// Named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorParams<T> {
    pub arch: Architecture,
    /// For every dense layer a `weight (fan_in, fan_out)` then a `bias (fan_out)`.
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> DescriptorParams<T> {
    fn shapes(arch: &Architecture) -> Vec<(String, Vec<usize>)> {
        arch.dense_layers()
            .into_iter()
            .flat_map(|(n, i, o)| [(format!("{n}.weight"), vec![i, o]), (format!("{n}.bias"), vec![o])])
            .collect()
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(arch: Architecture, rng: &mut SeededRng) -> Result<Self> {
        arch.validate()?;
        let mut layers = Vec::new();
        for (name, fan_in, fan_out) in arch.dense_layers() {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out).map(|_| T::lit(rng.uniform_in(-a, a))).collect();
            layers.push(Layer {
                name: format!("{name}.weight"),
                shape: vec![fan_in, fan_out],
                data: w,
            });
            layers.push(Layer {
                name: format!("{name}.bias"),
                shape: vec![fan_out],
                data: vec![T::zero(); fan_out],
            });
        }
        Ok(Self { arch, layers })
    }

    /// Rebuilds parameters from stored layers, checking that they chain.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        let arch = Architecture::from_layers(&layers)?;
        for l in &layers {
            if l.data.len() != l.shape.iter().product::<usize>() {
                return Err(Error::Shape(format!("{}: data length does not match shape", l.name)));
            }
        }
        Ok(Self { arch, layers })
    }

    pub fn descriptor_dim(&self) -> usize {
        self.arch.descriptor_dim
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(|l| l.data.len()).sum()
    }

    /// Adds every layer to `g`, as parameters or as constants.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.layers
            .iter()
            .map(|l| {
                let t = Tensor {
                    shape: l.shape.clone(),
                    data: l.data.clone(),
                };
                if trainable {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect()
    }
}

/// Options of the differentiable forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Stop gradients at the predicted orientation before re-rotation.
    pub detach_orientation: bool,
}

/// Nodes produced by [`descriptor_graph`].
#[derive(Debug, Clone, Copy)]
pub struct DescriptorNodes {
    /// `(k, descriptor_dim)`, unit rows.
    pub descriptors: Var,
    /// `(k, 2)` rows of `(sin theta, cos theta)`.
    pub sincos: Var,
    /// Orientation heads that fell back to `theta = 0`.
    pub degenerate_heads: usize,
}

struct StageIter<'a> {
    vars: &'a [Var],
    next: usize,
}

impl StageIter<'_> {
    fn take(&mut self) -> (Var, Var) {
        let v = (self.vars[self.next], self.vars[self.next + 1]);
        self.next += 2;
        v
    }
}

fn dense<T: Real>(g: &mut Graph<T>, x: Var, wb: (Var, Var), relu: bool) -> Result<Var> {
    let y = g.matmul(x, wb.0)?;
    let y = g.add_bias(y, wb.1)?;
    Ok(if relu { g.relu(y) } else { y })
}

/// Point MLP, max pool over groups of `c` rows, then the dense head whose
/// last layer is linear.
fn pointnet<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    c: usize,
    layers: &mut StageIter<'_>,
    n_point: usize,
    n_head: usize,
) -> Result<Var> {
    let mut h = x;
    for _ in 0..n_point {
        h = dense(g, h, layers.take(), true)?;
    }
    h = g.max_over_rows(h, c)?;
    for i in 0..n_head {
        h = dense(g, h, layers.take(), i + 1 < n_head)?;
    }
    Ok(h)
}

/// Differentiable forward pass over `points: (k * c, 3)` holding `k`
/// center-relative clusters of `c` points each.
pub fn descriptor_graph<T: Real>(
    g: &mut Graph<T>,
    params: &DescriptorParams<T>,
    vars: &[Var],
    points: Var,
    c: usize,
    opts: ForwardOptions,
) -> Result<DescriptorNodes> {
    if vars.len() != params.layers.len() {
        return Err(Error::shape(
            "descriptor_graph",
            format!("{} bound variables for {} layers", vars.len(), params.layers.len()),
        ));
    }
    let arch = &params.arch;
    let mut it = StageIter { vars, next: 0 };
    let head = pointnet(g, points, c, &mut it, arch.orient_point.len(), arch.orient_head.len() + 1)?;
    let before = g.flags().degenerate_rows;
    let sincos = g.l2_normalize_rows(head);
    let degenerate_heads = g.flags().degenerate_rows - before;
    let angle = if opts.detach_orientation {
        g.detach(sincos)
    } else {
        sincos
    };
    let rotated = g.rotate_z_groups(points, angle, c)?;
    let feat = pointnet(g, rotated, c, &mut it, arch.feat_point.len(), arch.feat_head.len() + 1)?;
    let descriptors = g.l2_normalize_rows(feat);
    Ok(DescriptorNodes {
        descriptors,
        sincos,
        degenerate_heads,
    })
}

pub(crate) fn cluster_tensor<T: Real>(clusters: &ClusterSet<T>) -> Tensor<T> {
    Tensor {
        shape: vec![clusters.points.len(), 3],
        data: clusters.points.iter().flatten().copied().collect(),
    }
}

/// Per-cluster angles and the number of heads that fell back to zero.
pub fn orientation_forward<T: Real>(clusters: &ClusterSet<T>, params: &DescriptorParams<T>) -> Result<(Vec<T>, usize)> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let x = g.constant(cluster_tensor(clusters));
    let mut it = StageIter { vars: &vars, next: 0 };
    let arch = &params.arch;
    let head = pointnet(
        &mut g,
        x,
        clusters.cluster_size,
        &mut it,
        arch.orient_point.len(),
        arch.orient_head.len() + 1,
    )?;
    let sc = g.l2_normalize_rows(head);
    let angles = g.value(sc).data.chunks_exact(2).map(|r| r[0].atan2(r[1])).collect();
    Ok((angles, g.flags().degenerate_rows))
}

/// Rotates the points of cluster `i` by `Rz(-angles[i])`.
pub fn rotate_clusters_z<T: Real>(clusters: &ClusterSet<T>, angles: &[T]) -> Result<ClusterSet<T>> {
    if angles.len() != clusters.len() {
        return Err(Error::shape(
            "rotate_clusters_z",
            format!("{} angles for {} clusters", angles.len(), clusters.len()),
        ));
    }
    let mut out = clusters.clone();
    let c = clusters.cluster_size;
    for (i, p) in out.points.iter_mut().enumerate() {
        let (s, co) = angles[i / c].sin_cos();
        *p = [co * p[0] + s * p[1], -s * p[0] + co * p[1], p[2]];
    }
    Ok(out)
}

/// Descriptors of every cluster, keyed by the cluster centers.
pub fn descriptor_forward<T: Real>(clusters: &ClusterSet<T>, params: &DescriptorParams<T>) -> Result<DescriptorSet<T>> {
    descriptor_forward_counted(clusters, params).map(|(d, _)| d)
}

/// [`descriptor_forward`] that also reports degenerate orientation heads.
pub fn descriptor_forward_counted<T: Real>(
    clusters: &ClusterSet<T>,
    params: &DescriptorParams<T>,
) -> Result<(DescriptorSet<T>, usize)> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let x = g.constant(cluster_tensor(clusters));
    let out = descriptor_graph(&mut g, params, &vars, x, clusters.cluster_size, ForwardOptions::default())?;
    let d = DescriptorSet::new(
        g.value(out.descriptors).data.clone(),
        params.descriptor_dim(),
        clusters.centers.clone(),
    )?;
    Ok((d, out.degenerate_heads))
}
