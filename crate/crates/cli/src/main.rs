use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sspd::checkpoint::{load_checkpoint, save_checkpoint};
use sspd::eval::{describe, evaluate_pair, register_pair, EvalConfig, EvalResult, PrecisionCounts};
use sspd::geometry::{apply_transform, jitter, random_z_rotation, PointCloud, RigidTransform};
use sspd::gradsuite::{run_gradient_suite, GRAD_TOLERANCE};
use sspd::io::{self, CloudFormat, ManifestRow, RunConfig};
use sspd::keypoints::{detect, Detector};
use sspd::network::DescriptorParams;
use sspd::rng::RngSeed;
use sspd::synth::{synth_scene, SceneKind};
use sspd::train::train;

#[derive(Parser)]
#[command(name = "sspd", version, about = "Self-supervised point-cloud descriptors and registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train descriptor weights on every cloud file in a directory.
    Train(TrainArgs),
    /// Register one pair of clouds; prints R (9 numbers) then t (3 numbers).
    Register(RegisterArgs),
    /// Register every pair of a manifest and write per-pair errors.
    Evaluate(EvaluateArgs),
    /// Pooled descriptor-matching precision over a manifest.
    Precision(PrecisionArgs),
    /// Dump detected keypoints of one cloud.
    Keypoints(KeypointArgs),
    /// Generate a synthetic scene, optionally with a rotated partner.
    Synth(SynthArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck,
}

#[derive(Args)]
struct ModelArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// key=value file for keypoint, cluster and RANSAC settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cloud file format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<CloudFormat>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Directory of training clouds (.xyz, .txt, .bin).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Training log; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct RegisterArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    cloud_a: PathBuf,
    #[arg(long)]
    cloud_b: PathBuf,
    /// Ground truth; when given, errors are computed and written to --out.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    detector: Option<Detector>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    detector: Option<Detector>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct PrecisionArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    pairs: PathBuf,
    /// Comma-separated ascending thresholds in meters.
    #[arg(long, default_value = "0.25,0.5,1,2", value_delimiter = ',')]
    thresholds: Vec<f64>,
    #[arg(long)]
    detector: Option<Detector>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KeypointArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long, default_value = "iss")]
    detector: Detector,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured keypoint cap.
    #[arg(long)]
    max: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    format: Option<CloudFormat>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "corner_room")]
    kind: SceneKind,
    #[arg(long, default_value_t = 4096)]
    n: usize,
    /// Scene span in meters.
    #[arg(long, default_value_t = 50.0)]
    extent: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    format: Option<CloudFormat>,
    /// Also write a Z-rotated, jittered copy of the scene here.
    #[arg(long, requires = "gt")]
    pair: Option<PathBuf>,
    /// Transform mapping the scene onto its copy.
    #[arg(long, requires = "pair")]
    gt: Option<PathBuf>,
    #[arg(long, default_value_t = 0.6)]
    sigma_r: f64,
    #[arg(long, default_value_t = 0.01)]
    sigma_p: f64,
}

fn format_for(path: &Path, explicit: Option<CloudFormat>) -> CloudFormat {
    explicit.unwrap_or_else(|| CloudFormat::from_path(path))
}

fn load_cloud(path: &Path, explicit: Option<CloudFormat>) -> Result<PointCloud<f64>> {
    Ok(io::read_cloud(path, format_for(path, explicit))?)
}

fn run_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = RngSeed(s);
        cfg.eval.seed = RngSeed(s);
    }
    Ok(cfg)
}

struct Model {
    params: DescriptorParams<f64>,
    eval: EvalConfig,
}

fn load_model(m: &ModelArgs, detector: Option<Detector>) -> Result<Model> {
    let cfg = run_config(m.config.as_deref(), m.seed)?;
    let params = load_checkpoint(&m.ckpt)?;
    let mut eval = cfg.eval;
    if let Some(d) = detector {
        eval.detector = d;
    }
    Ok(Model { params, eval })
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = RunConfig::from_file(&a.config)?;
    let mut files: Vec<PathBuf> = fs::read_dir(&a.data)
        .with_context(|| format!("{}: cannot list directory", a.data.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("xyz" | "txt" | "bin")
                )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(sspd::error::Error::InvalidConfig(format!(
            "no .xyz, .txt or .bin clouds in {}",
            a.data.display()
        )));
    }
    let clouds = files
        .iter()
        .map(|p| load_cloud(p, None))
        .collect::<Result<Vec<_>>>()?;
    eprintln!(
        "training on {} clouds for {} iterations",
        clouds.len(),
        cfg.train.iterations
    );
    let out = train(&clouds, &cfg.train, |iter, params| {
        save_checkpoint(params, &a.out)?;
        eprintln!("iteration {iter}: checkpoint written");
        Ok(())
    })?;
    let log = a
        .log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.log.csv", a.out.display())));
    io::write_log_csv(&log, &out.log)?;
    eprintln!(
        "done: {} pairs, {} skipped",
        out.pairs_total, out.skipped_total
    );
    Ok(())
}

fn print_transform(tf: &RigidTransform<f64>) {
    let r: Vec<String> = tf.rotation.iter().flatten().map(|v| io::fmt_f64(*v)).collect();
    let t: Vec<String> = tf.translation.iter().map(|v| io::fmt_f64(*v)).collect();
    println!("{}", r.join(" "));
    println!("{}", t.join(" "));
}

fn cmd_register(a: &RegisterArgs) -> Result<()> {
    let m = load_model(&a.model, a.detector)?;
    let ca = load_cloud(&a.cloud_a, a.model.format)?;
    let cb = load_cloud(&a.cloud_b, a.model.format)?;
    let reg = register_pair(&ca, &cb, &m.params, &m.eval)?;
    print_transform(&reg.transform);
    let result = match &a.gt {
        Some(gt) => {
            let gt = io::read_transform(gt)?;
            let e = sspd::geometry::registration_error(&reg.transform, &gt);
            EvalResult {
                rte: e.rte,
                rre: e.rre,
                success: sspd::eval::is_success(e.rte, e.rre),
                iterations_used: reg.iterations_used,
                inlier_count: reg.inlier_count,
                failure: None,
            }
        }
        None => EvalResult {
            rte: f64::NAN,
            rre: f64::NAN,
            success: false,
            iterations_used: reg.iterations_used,
            inlier_count: reg.inlier_count,
            failure: None,
        },
    };
    if let Some(out) = &a.out {
        io::write_results_csv(out, &[("0".to_string(), result)])?;
    }
    Ok(())
}

/// Maps `f` over `items` on up to `jobs` threads, keeping input order.
fn par_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(usize, &T) -> R + Sync) -> Vec<R> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(ci, part)| {
                let f = &f;
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(j, x)| f(ci * chunk + j, x))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

fn load_pair(row: &ManifestRow, fmt: Option<CloudFormat>) -> Result<(PointCloud<f64>, PointCloud<f64>, RigidTransform<f64>)> {
    Ok((
        load_cloud(&row.cloud_a, fmt)?,
        load_cloud(&row.cloud_b, fmt)?,
        io::read_transform(&row.gt_file)?,
    ))
}

fn default_jobs() -> usize {
    thread::available_parallelism().map_or(1, |n| n.get())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let m = load_model(&a.model, a.detector)?;
    let rows = io::read_manifest(&a.pairs)?;
    let results = par_map(&rows, a.jobs.unwrap_or_else(default_jobs), |i, row| {
        // every pair gets its own stream so results do not depend on order
        let cfg = EvalConfig {
            seed: m.eval.seed.derive(i as u64),
            ..m.eval.clone()
        };
        match load_pair(row, a.model.format) {
            Ok((ca, cb, gt)) => evaluate_pair(&ca, &cb, &gt, &m.params, &cfg),
            Err(e) => EvalResult::failed(format!("{e:#}")),
        }
    });
    let mut out = Vec::with_capacity(results.len());
    let mut ok = 0;
    for (i, r) in results.into_iter().enumerate() {
        if let Some(why) = &r.failure {
            eprintln!("WARN: pair {i}: {why}");
        }
        ok += usize::from(r.success);
        out.push((i.to_string(), r));
    }
    io::write_results_csv(&a.out, &out)?;
    eprintln!("{ok}/{} pairs registered successfully", out.len());
    Ok(())
}

fn cmd_precision(a: &PrecisionArgs) -> Result<()> {
    let m = load_model(&a.model, a.detector)?;
    let rows = io::read_manifest(&a.pairs)?;
    let mut pooled = PrecisionCounts::new(&a.thresholds)?;
    for (i, row) in rows.iter().enumerate() {
        let (ca, cb, gt) = load_pair(row, a.model.format)?;
        let cfg = EvalConfig {
            seed: m.eval.seed.derive(i as u64),
            ..m.eval.clone()
        };
        let counts = describe(&ca, &m.params, &cfg, 0)
            .and_then(|da| Ok((da, describe(&cb, &m.params, &cfg, 1)?)))
            .and_then(|(da, db)| sspd::eval::precision_counts(&da, &db, &gt, &a.thresholds));
        match counts {
            Ok(c) => pooled.merge(&c),
            Err(e) => eprintln!("WARN: pair {i}: {e}"),
        }
    }
    io::write_precision_csv(&a.out, &pooled.curve())?;
    Ok(())
}

fn cmd_keypoints(a: &KeypointArgs) -> Result<()> {
    let cfg = run_config(a.config.as_deref(), a.seed)?;
    let cloud = load_cloud(&a.cloud, a.format)?;
    let max = a.max.unwrap_or(cfg.eval.max_keypoints);
    let idx = detect(&cloud, a.detector, max, &cfg.eval.iss, &mut cfg.eval.seed.rng())?;
    io::write_keypoints_csv(&a.out, &cloud, &idx)?;
    eprintln!("{} keypoints", idx.len());
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let seed = RngSeed(a.seed);
    let scene = synth_scene(a.kind, a.n, a.extent, &mut seed.derive(0).rng())?;
    io::write_cloud(&a.out, &scene, format_for(&a.out, a.format))?;
    if let (Some(pair), Some(gt_path)) = (&a.pair, &a.gt) {
        let mut rng = seed.derive(1).rng();
        let gt = random_z_rotation(a.sigma_r, &mut rng);
        let moved = jitter(&apply_transform(&scene, &gt), a.sigma_p, &mut rng);
        io::write_cloud(pair, &moved, format_for(pair, a.format))?;
        io::write_transform(gt_path, &gt)?;
    }
    Ok(())
}

fn cmd_gradcheck() -> Result<bool> {
    let cases = run_gradient_suite()?;
    let mut all = true;
    for c in &cases {
        let tag = if c.passed() { "ok  " } else { "FAIL" };
        all &= c.passed();
        println!("{tag} {:<60} {:>6} coords  max rel err {:.2e}", c.name, c.coordinates, c.max_rel_error);
    }
    println!(
        "{} of {} cases below {GRAD_TOLERANCE:e}",
        cases.iter().filter(|c| c.passed()).count(),
        cases.len()
    );
    Ok(all)
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<sspd::error::Error>())
        .map_or("Error", sspd::error::Error::kind)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("ERROR: Usage: {first}");
            eprint!("{}", e.render());
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Register(a) => cmd_register(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Precision(a) => cmd_precision(a),
        Command::Keypoints(a) => cmd_keypoints(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Gradcheck => match cmd_gradcheck() {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("ERROR: GradientCheck: at least one case exceeded the tolerance");
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR: {}: {e:#}", error_kind(&e));
            ExitCode::from(1)
        }
    }
}
