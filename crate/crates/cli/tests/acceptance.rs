//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::error::Error as StdError;
use std::fs;
use std::io::Write as _;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use sspd::cf::{cf_register, pair_weights};
use sspd::checkpoint::{decode, encode, load_checkpoint, load_checkpoint_expecting, save_checkpoint};
use sspd::eval::{evaluate_pair, precision_curve, EvalConfig};
use sspd::geometry::{apply_transform, jitter, random_z_rotation, registration_error};
use sspd::gradsuite::run_gradient_suite;
use sspd::network::descriptor_forward;
use sspd::ransac::{ransac_register, Correspondence, CorrespondenceSet, RansacConfig};
use sspd::rng::{RngSeed, SeededRng};
use sspd::sampling::extract_clusters;
use sspd::synth::{synth_scene, SceneKind};
use sspd::train::{batch_loss, init_params, make_training_pair, train, TrainConfig};
use sspd::{linalg, DescriptorParams, DescriptorSet, Mat3, PointCloud, RigidTransform, Vec3};

type Res<T> = Result<T, Box<dyn StdError>>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Res<Outcome> {
    Ok(Outcome { pass, detail })
}

fn rand_point(rng: &mut SeededRng, half: f64) -> Vec3 {
    [rng.uniform_in(-half, half), rng.uniform_in(-half, half), rng.uniform_in(-half, half)]
}

/// Uniform random rotation from a normalized Gaussian quaternion.
fn random_rotation(rng: &mut SeededRng) -> Mat3 {
    let mut q = [rng.gaussian(), rng.gaussian(), rng.gaussian(), rng.gaussian()];
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.iter_mut().for_each(|v| *v /= n);
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn to_na(p: &Vec3) -> Vector3<f64> {
    Vector3::new(p[0], p[1], p[2])
}

/// Reference solver on an explicit pair list, written against nalgebra.
struct RefKabsch {
    h: Matrix3<f64>,
    solution: Option<(Matrix3<f64>, Vector3<f64>)>,
}

fn ref_kabsch(x: &[Vector3<f64>], y: &[Vector3<f64>], w: &[f64]) -> RefKabsch {
    let total: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(p, wi)| p * *wi).sum::<Vector3<f64>>() / total;
    let my = y.iter().zip(w).map(|(q, wi)| q * *wi).sum::<Vector3<f64>>() / total;
    let mut h = Matrix3::zeros();
    let mut spread = 0.0;
    for ((p, q), wi) in x.iter().zip(y).zip(w) {
        h += (p - mx) * (q - my).transpose() * *wi;
        spread += wi * (p - mx).norm() * (q - my).norm();
    }
    let svd = h.svd(true, true);
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if !(s[0] > 1e-12 * spread) || s[1] / s[0] < 1e-9 {
        return RefKabsch { h, solution: None };
    }
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let d = (vt.transpose() * u.transpose()).determinant().signum();
    let r = vt.transpose() * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let t = my - r * mx;
    RefKabsch { h, solution: Some((r, t)) }
}

fn expand(p: &[Vec3], q: &[Vec3]) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for a in p {
        for b in q {
            xs.push(to_na(a));
            ys.push(to_na(b));
        }
    }
    (xs, ys)
}

fn gauss_weights(dp: &[Vec<f64>], dq: &[Vec<f64>], alpha: f64) -> Vec<f64> {
    let mut w = Vec::new();
    for a in dp {
        for b in dq {
            let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            w.push((-d2 / alpha).exp());
        }
    }
    w
}

fn desc(rows: &[Vec<f64>], keypoints: Vec<Vec3>) -> Res<DescriptorSet> {
    Ok(DescriptorSet::new(rows.concat(), rows[0].len(), keypoints)?)
}

fn c1_exact_recovery() -> Res<Outcome> {
    let start = Instant::now();
    let mut rng = RngSeed(1).rng();
    let p: Vec<Vec3> = (0..5).map(|_| rand_point(&mut rng, 2.0)).collect();
    let gt = RigidTransform::rot_z(20f64.to_radians());
    let q: Vec<Vec3> = p.iter().map(|x| gt.apply_point(x)).collect();
    let eye: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| f64::from(i == j)).collect()).collect();
    let sol = cf_register(&desc(&eye, p)?, &desc(&eye, q)?, 1.0)?;
    let r_err = linalg::frobenius(&linalg::mat_sub(&sol.transform.rotation, &gt.rotation));
    let t_err = linalg::norm(&sol.transform.translation);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        r_err < 1e-6 && t_err < 1e-6 && secs < 1.0,
        format!("R err {r_err:.1e}, t err {t_err:.1e} m, {secs:.3} s"),
    )
}

fn c2_uniform_weights() -> Res<Outcome> {
    // Identical descriptors: every pair weight is exactly 1 and the pair
    // expansion's cross-covariance vanishes, so both solvers must agree
    // that no rotation is defined.
    let (mut uniform_ok, mut degenerate_ok, mut worst_h) = (0, 0, 0.0f64);
    for i in 0..100 {
        let mut rng = RngSeed(200 + i).rng();
        let (kp, kq) = (3 + rng.below(6), 3 + rng.below(6));
        let v: Vec<f64> = (0..4).map(|_| rng.gaussian()).collect();
        let p: Vec<Vec3> = (0..kp).map(|_| rand_point(&mut rng, 5.0)).collect();
        let q: Vec<Vec3> = (0..kq).map(|_| rand_point(&mut rng, 5.0)).collect();
        let (dp, dq) = (desc(&vec![v.clone(); kp], p.clone())?, desc(&vec![v; kq], q.clone())?);
        if pair_weights(&dp, &dq, 1.0)?.matrix.iter().all(|&w| w == 1.0) {
            uniform_ok += 1;
        }
        let (xs, ys) = expand(&p, &q);
        let reference = ref_kabsch(&xs, &ys, &vec![1.0; xs.len()]);
        worst_h = worst_h.max(reference.h.abs().max());
        let ours_degenerate = matches!(
            cf_register(&dp, &dq, 1.0),
            Err(sspd::error::Error::DegenerateConfiguration { .. })
        );
        if ours_degenerate && reference.solution.is_none() {
            degenerate_ok += 1;
        }
    }
    // Distinct descriptors: same expansion, non-uniform weights, full solve.
    let (mut solved_ok, mut worst_diff) = (0, 0.0f64);
    for i in 0..100 {
        let mut rng = RngSeed(300 + i).rng();
        let k = 3 + rng.below(6);
        let rows: Vec<Vec<f64>> = (0..k).map(|_| (0..4).map(|_| rng.gaussian()).collect()).collect();
        let p: Vec<Vec3> = (0..k).map(|_| rand_point(&mut rng, 5.0)).collect();
        let gt = RigidTransform::new(random_rotation(&mut rng), rand_point(&mut rng, 3.0));
        let q: Vec<Vec3> = p.iter().map(|x| linalg::add(&gt.apply_point(x), &rand_point(&mut rng, 0.05))).collect();
        let alpha = rng.uniform_in(0.5, 4.0);
        let ours = cf_register(&desc(&rows, p.clone())?, &desc(&rows, q.clone())?, alpha)?;
        let (xs, ys) = expand(&p, &q);
        let reference = ref_kabsch(&xs, &ys, &gauss_weights(&rows, &rows, alpha));
        let Some((r, t)) = reference.solution else { continue };
        let r_ours = Matrix3::from_fn(|a, b| ours.transform.rotation[a][b]);
        let h_ours = Matrix3::from_fn(|a, b| ours.cross_covariance[a][b]);
        let t_ours = to_na(&ours.transform.translation);
        let diff = (r_ours - r).abs().max().max((t_ours - t).abs().max()).max((h_ours - reference.h).abs().max());
        worst_diff = worst_diff.max(diff);
        if diff <= 1e-10 {
            solved_ok += 1;
        }
    }
    outcome(
        uniform_ok == 100 && degenerate_ok == 100 && worst_h <= 1e-10 && solved_ok == 100,
        format!(
            "uniform weights {uniform_ok}/100, both degenerate {degenerate_ok}/100 (reference |H| max {worst_h:.1e}); \
             weighted expansion agrees {solved_ok}/100 (max diff {worst_diff:.1e})"
        ),
    )
}

fn c3_gradients() -> Res<Outcome> {
    let start = Instant::now();
    let cases = run_gradient_suite()?;
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = cases.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    let worst = cases.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    outcome(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} cases, max rel error {worst:.1e}, {secs:.1} s{}",
            cases.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join("; ")) }
        ),
    )
}

fn objective(p: &[Vec3], q: &[Vec3], w: &[f64], tf: &RigidTransform) -> f64 {
    let mut f = 0.0;
    for (i, a) in p.iter().enumerate() {
        let moved = tf.apply_point(a);
        for (j, b) in q.iter().enumerate() {
            f += w[i * q.len() + j] * linalg::dist2(&moved, b);
        }
    }
    f
}

/// Rotation by `angle` about a random axis.
fn small_rotation(rng: &mut SeededRng, angle: f64) -> Mat3 {
    let axis = [rng.gaussian(), rng.gaussian(), rng.gaussian()];
    let n = linalg::norm(&axis);
    let [x, y, z] = axis.map(|v| v / n);
    let (s, c) = angle.sin_cos();
    let k: Mat3 = [[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]];
    let k2 = linalg::mat_mul(&k, &k);
    let mut r = linalg::identity();
    for a in 0..3 {
        for b in 0..3 {
            r[a][b] += s * k[a][b] + (1.0 - c) * k2[a][b];
        }
    }
    r
}

fn c4_optimality() -> Res<Outcome> {
    let (mut wins, mut worst_gap) = (0, f64::INFINITY);
    for i in 0..50 {
        let mut rng = RngSeed(400 + i).rng();
        let (kp, kq) = (3 + rng.below(3), 3 + rng.below(3));
        let dp: Vec<Vec<f64>> = (0..kp).map(|_| (0..3).map(|_| rng.uniform()).collect()).collect();
        let dq: Vec<Vec<f64>> = (0..kq).map(|_| (0..3).map(|_| rng.uniform()).collect()).collect();
        let p: Vec<Vec3> = (0..kp).map(|_| rand_point(&mut rng, 3.0)).collect();
        let q: Vec<Vec3> = (0..kq).map(|_| rand_point(&mut rng, 3.0)).collect();
        let alpha = 0.5;
        let sol = cf_register(&desc(&dp, p.clone())?, &desc(&dq, q.clone())?, alpha)?;
        let w = gauss_weights(&dp, &dq, alpha);
        let best = objective(&p, &q, &w, &sol.transform);
        let mut beaten = false;
        for n in 0..10_000 {
            let cand = if n % 2 == 0 {
                RigidTransform::new(random_rotation(&mut rng), rand_point(&mut rng, 5.0))
            } else {
                let angle = rng.uniform_in(0.0, 0.1);
                let r = linalg::mat_mul(&small_rotation(&mut rng, angle), &sol.transform.rotation);
                let t = linalg::add(&sol.transform.translation, &rand_point(&mut rng, 0.1));
                RigidTransform::new(r, t)
            };
            let f = objective(&p, &q, &w, &cand);
            worst_gap = worst_gap.min(f - best);
            if f < best - 1e-12 * best.max(1.0) {
                beaten = true;
            }
        }
        if !beaten {
            wins += 1;
        }
    }
    outcome(
        wins == 50,
        format!("optimum never beaten in {wins}/50 instances, smallest candidate margin {worst_gap:.2e}"),
    )
}

fn c7_ransac() -> Res<Outcome> {
    let (mut good, mut max_iters) = (0, 0);
    for trial in 0..100 {
        let mut rng = RngSeed(700 + trial).rng();
        let gt = RigidTransform::new(random_rotation(&mut rng), rand_point(&mut rng, 10.0));
        let a: Vec<Vec3> = (0..100).map(|_| rand_point(&mut rng, 10.0)).collect();
        let b: Vec<Vec3> = a
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if i % 2 == 0 {
                    linalg::add(&gt.apply_point(p), &[0.01 * rng.gaussian(), 0.01 * rng.gaussian(), 0.01 * rng.gaussian()])
                } else {
                    linalg::add(&gt.translation, &rand_point(&mut rng, 10.0))
                }
            })
            .collect();
        let corr = CorrespondenceSet {
            pairs: (0..100).map(|i| Correspondence { a: i, b: i, distance: 0.0 }).collect(),
        };
        let cfg = RansacConfig {
            seed: RngSeed(7).derive(trial),
            ..RansacConfig::default()
        };
        let res = ransac_register(&corr, &a, &b, &cfg)?;
        max_iters = max_iters.max(res.iterations_used);
        let e = registration_error(&res.transform, &gt);
        if e.rte < 0.1 && e.rre < 0.5 {
            good += 1;
        }
    }
    outcome(
        good >= 95 && max_iters < 10_000,
        format!("{good}/100 within 0.1 m / 0.5 deg, max iterations {max_iters}"),
    )
}

fn c8_precision() -> Res<Outcome> {
    let thresholds: Vec<f64> = (0..=40).map(|i| i as f64 * 0.125).collect();
    let mut monotone = 0;
    for i in 0..20 {
        let mut rng = RngSeed(800 + i).rng();
        let rows = |rng: &mut SeededRng| -> Vec<Vec<f64>> { (0..40).map(|_| (0..6).map(|_| rng.gaussian()).collect()).collect() };
        let (ra, rb) = (rows(&mut rng), rows(&mut rng));
        let ka: Vec<Vec3> = (0..40).map(|_| rand_point(&mut rng, 4.0)).collect();
        let kb: Vec<Vec3> = (0..40).map(|_| rand_point(&mut rng, 4.0)).collect();
        let gt = RigidTransform::new(random_rotation(&mut rng), rand_point(&mut rng, 1.0));
        let curve = precision_curve(&desc(&ra, ka)?, &desc(&rb, kb)?, &gt, &thresholds)?;
        if curve.windows(2).all(|w| w[0].1 <= w[1].1) {
            monotone += 1;
        }
    }
    // network descriptors on a real scene pair
    let params = init_params(&TrainConfig::default())?;
    let mut rng = RngSeed(880).rng();
    let scene = synth_scene(SceneKind::CubeField, 3000, 20.0, &mut rng)?;
    let gt = random_z_rotation(0.6, &mut rng);
    let other = jitter(&apply_transform(&scene, &gt), 0.01, &mut rng);
    let da = descriptor_forward(&extract_clusters(&scene, 64, 2.0, 16, &mut rng)?, &params)?;
    let db = descriptor_forward(&extract_clusters(&other, 64, 2.0, 16, &mut rng)?, &params)?;
    let curve = precision_curve(&da, &db, &gt, &thresholds)?;
    let network_monotone = curve.windows(2).all(|w| w[0].1 <= w[1].1);

    // exact keypoints, injective descriptors, shuffled order in b
    let mut rng = RngSeed(890).rng();
    let rows: Vec<Vec<f64>> = (0..60).map(|_| (0..8).map(|_| rng.gaussian()).collect()).collect();
    let ka: Vec<Vec3> = (0..60).map(|_| rand_point(&mut rng, 10.0)).collect();
    let gt = RigidTransform::new(random_rotation(&mut rng), rand_point(&mut rng, 5.0));
    let mut perm: Vec<usize> = (0..60).collect();
    rng.shuffle(&mut perm);
    let rb: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
    let kb: Vec<Vec3> = perm.iter().map(|&i| gt.apply_point(&ka[i])).collect();
    let exact = precision_curve(&desc(&rows, ka)?, &desc(&rb, kb)?, &gt, &[0.25, 0.5, 1.0, 2.0])?;
    let at_one = exact[2].1;
    outcome(
        monotone == 20 && network_monotone && at_one == 1.0,
        format!("monotone {monotone}/20 random + network curve {network_monotone}; exact precision at 1 m = {at_one}"),
    )
}

fn run_cli(args: &[&str]) -> Res<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_sspd")).args(args).output()?;
    if !out.status.success() {
        return Err(format!("sspd {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)).into());
    }
    Ok(())
}

fn c9_determinism() -> Res<Outcome> {
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();
    fs::create_dir_all(p("data"))?;
    for (i, kind) in ["cube_field", "corner_room", "cube_field"].iter().enumerate() {
        let out = p(&format!("data/scene{i}.xyz"));
        run_cli(&["synth", "--kind", kind, "--n", "1500", "--extent", "20", "--seed", &i.to_string(), "--out", &out])?;
    }
    let mut manifest = String::from("cloud_a,cloud_b,gt_file\n");
    for i in 0..4 {
        run_cli(&[
            "synth", "--kind", "cube_field", "--n", "3000", "--extent", "20", "--seed", &(50 + i).to_string(),
            "--out", &p(&format!("a{i}.xyz")), "--pair", &p(&format!("b{i}.bin")), "--gt", &p(&format!("gt{i}.txt")),
        ])?;
        manifest.push_str(&format!("a{i}.xyz,b{i}.bin,gt{i}.txt\n"));
    }
    fs::write(p("pairs.csv"), manifest)?;
    fs::write(
        p("run.cfg"),
        "seed = 3\niterations = 20\nbatch_size = 2\nk = 16\nc = 8\nsubsample = 1000\ncheckpoint_every = 10\n",
    )?;
    let mut ckpts = Vec::new();
    let mut results = Vec::new();
    for run in 0..2 {
        let ck = p(&format!("model{run}.sspd"));
        run_cli(&["train", "--config", &p("run.cfg"), "--data", &p("data"), "--out", &ck])?;
        let res = p(&format!("results{run}.csv"));
        run_cli(&["evaluate", "--ckpt", &ck, "--config", &p("run.cfg"), "--pairs", &p("pairs.csv"), "--out", &res])?;
        ckpts.push(fs::read(&ck)?);
        results.push(fs::read(&res)?);
    }
    let same_ckpt = ckpts[0] == ckpts[1];
    let same_csv = results[0] == results[1];
    outcome(
        same_ckpt && same_csv,
        format!(
            "checkpoint {} ({} bytes), results csv {} ({} rows)",
            if same_ckpt { "identical" } else { "differs" },
            ckpts[0].len(),
            if same_csv { "identical" } else { "differs" },
            results[0].iter().filter(|&&b| b == b'\n').count() - 1
        ),
    )
}

fn same_bits(a: &DescriptorParams, b: &DescriptorParams) -> bool {
    a.layers.len() == b.layers.len()
        && a.layers.iter().zip(&b.layers).all(|(x, y)| {
            x.name == y.name
                && x.shape == y.shape
                && x.data.len() == y.data.len()
                && x.data.iter().zip(&y.data).all(|(u, v)| u.to_bits() == v.to_bits())
        })
}

fn c10_checkpoint() -> Res<Outcome> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("m.sspd");
    let params = init_params(&TrainConfig::default())?;
    save_checkpoint(&params, &path)?;
    let round_trip = same_bits(&params, &load_checkpoint(&path)?) && same_bits(&params, &decode(&encode(&params))?);

    let good = encode(&params);
    let mut cases: Vec<(&str, Vec<u8>)> = Vec::new();
    let mut b = good.clone();
    b[0] = b'X';
    cases.push(("bad magic", b));
    let mut b = good.clone();
    b[4..8].copy_from_slice(&99u32.to_le_bytes());
    cases.push(("bad version", b));
    cases.push(("truncated header", good[..10].to_vec()));
    cases.push(("truncated data", good[..good.len() - 3].to_vec()));
    let mut b = good.clone();
    let n = b.len();
    b[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
    cases.push(("NaN value", b));
    let mut b = good.clone();
    b.push(0);
    cases.push(("trailing byte", b));

    let mut rejected = Vec::new();
    let mut wrong = Vec::new();
    for (name, bytes) in &cases {
        let file = dir.path().join("bad.sspd");
        fs::write(&file, bytes)?;
        match load_checkpoint(&file) {
            Err(e) if e.kind() == "FormatError" => rejected.push(*name),
            other => wrong.push(format!("{name}: {:?}", other.map(|_| "accepted"))),
        }
    }
    let dim_check = matches!(load_checkpoint_expecting(&path, params.descriptor_dim() + 1), Err(e) if e.kind() == "ShapeError");
    outcome(
        round_trip && wrong.is_empty() && dim_check,
        format!(
            "bit-exact {round_trip}; FormatError for {}/{} corruptions{}; dim mismatch ShapeError {dim_check}",
            rejected.len(),
            cases.len(),
            if wrong.is_empty() { String::new() } else { format!(" (wrong: {})", wrong.join(", ")) }
        ),
    )
}

// Criteria 5 and 6 share one training run per seed.

const SMOKE_SEEDS: u64 = 5;

fn smoke_config(seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: 2000,
        k: 32,
        c: 16,
        seed: RngSeed(seed),
        checkpoint_every: 0,
        shared_centers: true,
        ..TrainConfig::default()
    }
}

fn scene_kind(i: u64) -> SceneKind {
    if i % 2 == 0 {
        SceneKind::CubeField
    } else {
        SceneKind::CornerRoom
    }
}

struct SmokeRun {
    init_loss: f64,
    final_loss: f64,
    params: DescriptorParams,
    seconds: f64,
}

fn training_scenes() -> Res<Vec<PointCloud>> {
    (0..20)
        .map(|i| Ok(synth_scene(scene_kind(i), 4096, 20.0, &mut RngSeed(i).rng())?))
        .collect()
}

/// Mean loss on 24 fixed pairs drawn from the training scenes.
fn fixed_batch_loss(scenes: &[PointCloud], params: &DescriptorParams, cfg: &TrainConfig) -> Res<f64> {
    let mut rng = RngSeed(900).rng();
    let pairs = (0..24)
        .map(|j| make_training_pair(&scenes[j % scenes.len()], cfg, &mut rng))
        .collect::<Result<Vec<_>, _>>()?;
    let stats = batch_loss(&pairs, params, cfg, &mut RngSeed(901).rng())?;
    stats.loss.ok_or_else(|| "every evaluation pair was skipped".into())
}

fn smoke_run(scenes: &[PointCloud], seed: u64) -> Res<SmokeRun> {
    let cfg = smoke_config(seed);
    let start = Instant::now();
    let init_loss = fixed_batch_loss(scenes, &init_params(&cfg)?, &cfg)?;
    let out = train(scenes, &cfg, |_, _| Ok(()))?;
    let seconds = start.elapsed().as_secs_f64();
    let final_loss = fixed_batch_loss(scenes, &out.params, &cfg)?;
    Ok(SmokeRun {
        init_loss,
        final_loss,
        params: out.params,
        seconds,
    })
}

fn smoke_runs() -> &'static Result<(Vec<SmokeRun>, f64), String> {
    static RUNS: OnceLock<Result<(Vec<SmokeRun>, f64), String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let scenes = training_scenes().map_err(|e| e.to_string())?;
        let runs = std::thread::scope(|s| {
            let handles: Vec<_> = (0..SMOKE_SEEDS)
                .map(|seed| {
                    let scenes = &scenes;
                    s.spawn(move || smoke_run(scenes, seed).map_err(|e| e.to_string()))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect::<Result<Vec<_>, _>>()
        })?;
        Ok((runs, start.elapsed().as_secs_f64()))
    })
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn c5_training() -> Res<Outcome> {
    let (runs, wall) = smoke_runs().as_ref().map_err(|e| e.clone())?;
    let init = median(runs.iter().map(|r| r.init_loss).collect());
    let fin = median(runs.iter().map(|r| r.final_loss).collect());
    let per_seed: Vec<String> = runs.iter().map(|r| format!("{:.3}->{:.3}", r.init_loss, r.final_loss)).collect();
    let longest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    outcome(
        fin < 0.5 * init,
        format!(
            "median loss {init:.3} -> {fin:.3} (ratio {:.2}); seeds [{}]; wall {:.0} s, longest seed {longest:.0} s",
            fin / init,
            per_seed.join(", "),
            wall
        ),
    )
}

fn c6_self_registration() -> Res<Outcome> {
    let (runs, _) = smoke_runs().as_ref().map_err(|e| e.clone())?;
    let trained = &runs[0].params;
    let random = init_params(&smoke_config(0))?;
    let (mut ok_trained, mut ok_random) = (0, 0);
    for i in 0..50u64 {
        let seed = RngSeed(10_000 + i);
        let a = synth_scene(scene_kind(i), 25_600, 50.0, &mut seed.rng())?;
        let mut rng = seed.derive(1).rng();
        let gt = random_z_rotation(0.6, &mut rng);
        let b = jitter(&apply_transform(&a, &gt), 0.01, &mut rng);
        let cfg = EvalConfig {
            c: 16,
            seed: RngSeed(6).derive(i),
            ..EvalConfig::default()
        };
        ok_trained += usize::from(evaluate_pair(&a, &b, &gt, trained, &cfg).success);
        ok_random += usize::from(evaluate_pair(&a, &b, &gt, &random, &cfg).success);
    }
    outcome(
        ok_trained >= 45 && ok_random <= 20,
        format!("trained {ok_trained}/50 (need >= 45), random init {ok_random}/50 (need <= 20)"),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Res<Outcome>); 10] = [
        (1, "exact recovery", c1_exact_recovery),
        (2, "uniform-weight equivalence", c2_uniform_weights),
        (3, "gradient suite", c3_gradients),
        (4, "CF optimality", c4_optimality),
        (7, "RANSAC robustness", c7_ransac),
        (8, "precision curve", c8_precision),
        (9, "determinism", c9_determinism),
        (10, "checkpoint round trip", c10_checkpoint),
        (5, "training smoke", c5_training),
        (6, "self-registration", c6_self_registration),
    ];
    let mut failed = Vec::new();
    for (n, name, run) in criteria {
        let start = Instant::now();
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        println!(
            "criterion {n:>2} {}: {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        std::io::stdout().flush().ok();
        if !pass {
            failed.push(n);
        }
    }
    failed.sort_unstable();
    println!("acceptance: {}/10 criteria passed", 10 - failed.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
