//! Self-supervised training: one cloud, a random Z rotation of it, and the
//! rotation recovered through the closed-form layer as the only signal.

use std::time::Instant;

use crate::autodiff::{adam_step, AdamState, Graph, Tensor, Var};
use crate::cf::{cf_register_graph, rotation_loss_graph};
use crate::error::{Error, Result};
use crate::geometry::{apply_transform, jitter, random_z_rotation, PointCloud, RigidTransform};
use crate::linalg::Vec3;
use crate::network::{descriptor_graph, Architecture, DescriptorParams, ForwardOptions};
use crate::rng::{RngSeed, SeededRng};
use crate::sampling::{clusters_at, extract_clusters, farthest_point_sample, ClusterSet};

/// Iteration count of the full-scale schedule.
pub const FULL_SCALE_ITERATIONS: usize = 72_500;
/// Iteration count used on synthetic scenes.
pub const DESK_SCALE_ITERATIONS: usize = 2_000;
/// Largest tolerated fraction of skipped pairs.
pub const MAX_SKIP_FRACTION: f64 = 0.1;
/// Pairs seen before the skip fraction is enforced.
const SKIP_CHECK_MIN_PAIRS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sigma_r: f64,
    pub sigma_p: f64,
    pub alpha: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub iterations: usize,
    pub k: usize,
    pub c: usize,
    pub r_cluster: f64,
    pub subsample: usize,
    pub seed: RngSeed,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub arch: Architecture,
    /// Reuse the PC1 center indices for PC2 instead of sampling again.
    pub shared_centers: bool,
    pub detach_orientation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sigma_r: 0.6,
            sigma_p: 0.01,
            alpha: 1.0,
            batch_size: 6,
            lr: 1e-3,
            iterations: DESK_SCALE_ITERATIONS,
            k: 128,
            c: 64,
            r_cluster: 2.0,
            subsample: 4096,
            seed: RngSeed(0),
            checkpoint_every: 500,
            arch: Architecture::default(),
            shared_centers: false,
            detach_orientation: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.sigma_r >= 0.0 && self.sigma_r.is_finite()) {
            return bad("sigma_r must be non-negative");
        }
        if !(self.sigma_p >= 0.0 && self.sigma_p.is_finite()) {
            return bad("sigma_p must be non-negative");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.r_cluster > 0.0 && self.r_cluster.is_finite()) {
            return bad("r_cluster must be positive");
        }
        if self.batch_size == 0 || self.c == 0 || self.subsample == 0 {
            return bad("batch_size, c and subsample must be positive");
        }
        if self.k < 3 {
            return bad("k must be at least 3");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub pc1: PointCloud<f64>,
    pub pc2: PointCloud<f64>,
    pub r_gt: RigidTransform<f64>,
}

pub fn make_training_pair(cloud: &PointCloud<f64>, cfg: &TrainConfig, rng: &mut SeededRng) -> Result<TrainingPair> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut idx = rng.sample_distinct(cloud.len(), cfg.subsample.min(cloud.len()));
    idx.sort_unstable();
    let base = cloud.select(&idx);
    let pc1 = jitter(&base, cfg.sigma_p, rng);
    let r_gt = random_z_rotation(cfg.sigma_r, rng);
    let pc2 = jitter(&apply_transform(&base, &r_gt), cfg.sigma_p, rng);
    Ok(TrainingPair { pc1, pc2, r_gt })
}

fn pair_clusters(
    pair: &TrainingPair,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<(ClusterSet<f64>, ClusterSet<f64>)> {
    let r = cfg.r_cluster;
    if cfg.shared_centers {
        let centers = farthest_point_sample(&pair.pc1, cfg.k, rng);
        let a = clusters_at(&pair.pc1, &centers, r, cfg.c, rng)?;
        let b = clusters_at(&pair.pc2, &centers, r, cfg.c, rng)?;
        Ok((a, b))
    } else {
        let a = extract_clusters(&pair.pc1, cfg.k, r, cfg.c, rng)?;
        let b = extract_clusters(&pair.pc2, cfg.k, r, cfg.c, rng)?;
        Ok((a, b))
    }
}

/// Per-pair outcome of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    /// Mean loss over the pairs that were not skipped.
    pub loss: Option<f64>,
    pub pair_losses: Vec<Option<f64>>,
    pub skipped: usize,
    pub degenerate_heads: usize,
    /// Solved translations, a diagnostic only.
    pub translations: Vec<Option<Vec3<f64>>>,
}

struct BatchGraph {
    graph: Graph<f64>,
    vars: Vec<Var>,
    loss: Option<Var>,
    stats: BatchStats,
}

fn is_skippable(e: &Error) -> bool {
    matches!(
        e,
        Error::DegenerateConfiguration { .. } | Error::SvdDegenerate { .. } | Error::InsufficientCorrespondences { .. }
    )
}

fn build_batch(
    pairs: &[TrainingPair],
    params: &DescriptorParams<f64>,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
    trainable: bool,
) -> Result<BatchGraph> {
    let mut sets = Vec::with_capacity(pairs.len() * 2);
    for p in pairs {
        let (a, b) = pair_clusters(p, cfg, rng)?;
        sets.push(a);
        sets.push(b);
    }
    // all clusters of the batch go through the network in one pass
    let c = cfg.c;
    let mut data = Vec::new();
    let mut offsets = Vec::with_capacity(sets.len() + 1);
    offsets.push(0);
    for s in &sets {
        data.extend(s.points.iter().flatten().copied());
        offsets.push(offsets.last().unwrap() + s.len());
    }
    let rows = *offsets.last().unwrap();
    let mut g = Graph::new();
    let vars = params.bind(&mut g, trainable);
    let x = g.constant(Tensor::new(vec![rows * c, 3], data)?);
    let opts = ForwardOptions {
        detach_orientation: cfg.detach_orientation,
    };
    let net = descriptor_graph(&mut g, params, &vars, x, c, opts)?;

    let mut losses = Vec::new();
    let mut stats = BatchStats {
        loss: None,
        pair_losses: Vec::with_capacity(pairs.len()),
        skipped: 0,
        degenerate_heads: net.degenerate_heads,
        translations: Vec::with_capacity(pairs.len()),
    };
    for (i, p) in pairs.iter().enumerate() {
        let range = |s: usize| (offsets[s]..offsets[s + 1]).collect::<Vec<_>>();
        let da = g.gather_rows(net.descriptors, &range(2 * i))?;
        let db = g.gather_rows(net.descriptors, &range(2 * i + 1))?;
        let (sa, sb) = (&sets[2 * i], &sets[2 * i + 1]);
        match cf_register_graph(&mut g, &sa.centers, da, &sb.centers, db, cfg.alpha) {
            Ok(sol) => {
                let l = rotation_loss_graph(&mut g, sol.rotation, &p.r_gt.rotation)?;
                stats.pair_losses.push(Some(g.value(l).item()));
                stats.translations.push(Some(sol.solution.transform.translation));
                losses.push(l);
            }
            Err(e) if is_skippable(&e) => {
                stats.skipped += 1;
                stats.pair_losses.push(None);
                stats.translations.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let loss = if losses.is_empty() {
        None
    } else {
        let all = g.concat(&losses)?;
        let sum = g.reduce_sum(all);
        let l = g.scale(sum, 1.0 / losses.len() as f64);
        stats.loss = Some(g.value(l).item());
        Some(l)
    };
    Ok(BatchGraph {
        graph: g,
        vars,
        loss,
        stats,
    })
}

/// Loss of a batch without updating anything.
pub fn batch_loss(
    pairs: &[TrainingPair],
    params: &DescriptorParams<f64>,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<BatchStats> {
    Ok(build_batch(pairs, params, cfg, rng, false)?.stats)
}

/// Forward, backward and one Adam update over a batch of pairs.
pub fn train_step(
    pairs: &[TrainingPair],
    params: &mut DescriptorParams<f64>,
    opt: &mut AdamState<f64>,
    cfg: &TrainConfig,
    rng: &mut SeededRng,
) -> Result<BatchStats> {
    if pairs.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let mut b = build_batch(pairs, params, cfg, rng, true)?;
    let Some(loss) = b.loss else {
        return Ok(b.stats);
    };
    b.graph.backward(loss)?;
    let zeros: Vec<Vec<f64>> = params.layers.iter().map(|l| vec![0.0; l.data.len()]).collect();
    let grads: Vec<&[f64]> = b
        .vars
        .iter()
        .zip(&zeros)
        .map(|(&v, z)| b.graph.grad(v).unwrap_or(z))
        .collect();
    let mut slices: Vec<&mut [f64]> = params.layers.iter_mut().map(|l| l.data.as_mut_slice()).collect();
    adam_step(&mut slices, &grads, opt, cfg.lr)?;
    Ok(b.stats)
}

pub fn init_params(cfg: &TrainConfig) -> Result<DescriptorParams<f64>> {
    DescriptorParams::init(cfg.arch.clone(), &mut cfg.seed.derive(0).rng())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub loss: Option<f64>,
    pub skipped: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: DescriptorParams<f64>,
    pub log: Vec<LogRow>,
    pub pairs_total: usize,
    pub skipped_total: usize,
}

/// Cycles through reshuffled clouds, one pair per cloud visit.
struct CloudCycle {
    order: Vec<usize>,
    pos: usize,
}

impl CloudCycle {
    fn next(&mut self, rng: &mut SeededRng) -> usize {
        if self.pos == self.order.len() {
            rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Runs `cfg.iterations` steps. `on_checkpoint(iter, params)` is called
/// every `checkpoint_every` steps and once at the end.
pub fn train(
    clouds: &[PointCloud<f64>],
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &DescriptorParams<f64>) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if clouds.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut params = init_params(cfg)?;
    let mut opt = AdamState::new(params.layers.iter().map(|l| l.data.len()));
    let mut rng = cfg.seed.derive(1).rng();
    let mut cycle = CloudCycle {
        order: (0..clouds.len()).collect(),
        pos: clouds.len(),
    };
    let start = Instant::now();
    let mut log = Vec::with_capacity(cfg.iterations);
    let (mut pairs_total, mut skipped_total) = (0, 0);
    for iter in 1..=cfg.iterations {
        let batch = (0..cfg.batch_size)
            .map(|_| {
                let ci = cycle.next(&mut rng);
                make_training_pair(&clouds[ci], cfg, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let stats = train_step(&batch, &mut params, &mut opt, cfg, &mut rng)?;
        pairs_total += batch.len();
        skipped_total += stats.skipped;
        log.push(LogRow {
            iter,
            loss: stats.loss,
            skipped: skipped_total,
            seconds: start.elapsed().as_secs_f64(),
        });
        if pairs_total >= SKIP_CHECK_MIN_PAIRS && skipped_total as f64 > MAX_SKIP_FRACTION * pairs_total as f64 {
            return Err(Error::TooManySkips {
                skipped: skipped_total,
                total: pairs_total,
            });
        }
        if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 && iter != cfg.iterations {
            on_checkpoint(iter, &params)?;
        }
    }
    on_checkpoint(cfg.iterations, &params)?;
    Ok(TrainOutput {
        params,
        log,
        pairs_total,
        skipped_total,
    })
}
