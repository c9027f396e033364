//! Cloud files, transform files, manifests, CSV outputs and run configs.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{EvalConfig, EvalResult};
use crate::geometry::{PointCloud, RigidTransform};
use crate::keypoints::Detector;
use crate::rng::RngSeed;
use crate::train::{LogRow, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// `x y z [intensity]` per line, `#` starts a comment.
    AsciiXyz,
    /// Little-endian f32 records of `x y z intensity`.
    KittiBin,
}

impl CloudFormat {
    /// `.bin` files are binary scans, everything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("bin") => CloudFormat::KittiBin,
            _ => CloudFormat::AsciiXyz,
        }
    }
}

impl fmt::Display for CloudFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CloudFormat::AsciiXyz => "ascii_xyz",
            CloudFormat::KittiBin => "kitti_bin",
        })
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ascii_xyz" | "xyz" => Ok(CloudFormat::AsciiXyz),
            "kitti_bin" | "bin" => Ok(CloudFormat::KittiBin),
            _ => Err(Error::InvalidConfig(format!("unknown cloud format {s:?}"))),
        }
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(path, line, format!("not a number: {tok:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite value {tok:?}")));
    }
    Ok(v)
}

pub fn read_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let cloud = match format {
        CloudFormat::AsciiXyz => parse_ascii(path, &bytes)?,
        CloudFormat::KittiBin => parse_kitti(path, &bytes)?,
    };
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(cloud)
}

fn parse_ascii(path: &Path, bytes: &[u8]) -> Result<PointCloud<f64>> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(path, 0, format!("not UTF-8: {e}")))?;
    let mut pts = Vec::new();
    let mut intensity = Vec::new();
    let mut with_intensity = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.len() != 3 && toks.len() != 4 {
            return Err(parse_err(path, line, format!("expected 3 or 4 fields, got {}", toks.len())));
        }
        let has = toks.len() == 4;
        if *with_intensity.get_or_insert(has) != has {
            return Err(parse_err(path, line, "intensity column present on some lines only"));
        }
        pts.push([
            parse_f64(path, line, toks[0])?,
            parse_f64(path, line, toks[1])?,
            parse_f64(path, line, toks[2])?,
        ]);
        if has {
            intensity.push(parse_f64(path, line, toks[3])?);
        }
    }
    if with_intensity == Some(true) {
        PointCloud::with_intensity(pts, intensity)
    } else {
        PointCloud::new(pts)
    }
}

fn parse_kitti(path: &Path, bytes: &[u8]) -> Result<PointCloud<f64>> {
    if bytes.len() % 16 != 0 {
        return Err(parse_err(
            path,
            0,
            format!("{} bytes is not a whole number of 16-byte records", bytes.len()),
        ));
    }
    let mut pts = Vec::with_capacity(bytes.len() / 16);
    let mut intensity = Vec::with_capacity(bytes.len() / 16);
    for (r, rec) in bytes.chunks_exact(16).enumerate() {
        let f = |k: usize| f64::from(f32::from_le_bytes(rec[k * 4..k * 4 + 4].try_into().unwrap()));
        let v = [f(0), f(1), f(2), f(3)];
        if let Some(k) = v.iter().position(|x| !x.is_finite()) {
            return Err(parse_err(
                path,
                0,
                format!("record {r} (byte offset {}) holds a non-finite value", r * 16 + k * 4),
            ));
        }
        pts.push([v[0], v[1], v[2]]);
        intensity.push(v[3]);
    }
    PointCloud::with_intensity(pts, intensity)
}

pub fn write_cloud(path: &Path, cloud: &PointCloud<f64>, format: CloudFormat) -> Result<()> {
    let bytes = match format {
        CloudFormat::AsciiXyz => {
            let mut s = String::with_capacity(cloud.len() * 72);
            for (i, p) in cloud.points.iter().enumerate() {
                s.push_str(&format!("{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]));
                if let Some(v) = &cloud.intensity {
                    s.push_str(&format!(" {:.16e}", v[i]));
                }
                s.push('\n');
            }
            s.into_bytes()
        }
        CloudFormat::KittiBin => {
            let mut b = Vec::with_capacity(cloud.len() * 16);
            for (i, p) in cloud.points.iter().enumerate() {
                let inten = cloud.intensity.as_ref().map_or(0.0, |v| v[i]);
                for x in [p[0], p[1], p[2], inten] {
                    b.extend_from_slice(&(x as f32).to_le_bytes());
                }
            }
            b
        }
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Twelve numbers, `[R | t]` row by row.
pub fn read_transform(path: &Path) -> Result<RigidTransform<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut vals = Vec::with_capacity(12);
    for (i, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("");
        for tok in body.split_whitespace() {
            vals.push(parse_f64(path, i + 1, tok)?);
        }
    }
    let arr: [f64; 12] = vals
        .as_slice()
        .try_into()
        .map_err(|_| parse_err(path, 0, format!("expected 12 numbers, found {}", vals.len())))?;
    let tf = RigidTransform::from_row_major(&arr);
    if !tf.is_valid(1e-6) {
        return Err(parse_err(path, 0, "rotation block is not a proper rotation"));
    }
    Ok(tf)
}

pub fn format_transform(tf: &RigidTransform<f64>) -> String {
    let v = tf.to_row_major();
    let mut s = String::new();
    for r in 0..3 {
        let row: Vec<String> = (0..4).map(|c| format!("{:.16e}", v[r * 4 + c])).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_transform(path: &Path, tf: &RigidTransform<f64>) -> Result<()> {
    fs::write(path, format_transform(tf)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub cloud_a: PathBuf,
    pub cloud_b: PathBuf,
    pub gt_file: PathBuf,
}

pub const MANIFEST_HEADER: [&str; 3] = ["cloud_a", "cloud_b", "gt_file"];

/// Reads `cloud_a,cloud_b,gt_file` rows; relative paths are taken
/// relative to the manifest's directory. The header line is optional.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = fs::read(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(text.as_slice());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| parse_err(path, e.position().map_or(line, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(line, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rows.is_empty() && rec.iter().eq(MANIFEST_HEADER) {
            continue;
        }
        if rec.len() != 3 || rec.iter().any(str::is_empty) {
            return Err(parse_err(path, line, format!("expected 3 fields, got {}", rec.len())));
        }
        let resolve = |s: &str| {
            let p = Path::new(s);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        rows.push(ManifestRow {
            cloud_a: resolve(&rec[0]),
            cloud_b: resolve(&rec[1]),
            gt_file: resolve(&rec[2]),
        });
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[(String, String, String)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(MANIFEST_HEADER).map_err(wrap)?;
    for (a, b, g) in rows {
        w.write_record([a, b, g]).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    let wrap = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Shortest round-trip text of a float, `nan` for missing values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

pub const RESULTS_HEADER: [&str; 6] = ["pair_id", "rte_m", "rre_deg", "success", "iterations", "inliers"];
pub const PRECISION_HEADER: [&str; 2] = ["threshold_m", "precision"];
pub const LOG_HEADER: [&str; 4] = ["iter", "loss", "skipped", "seconds"];
pub const KEYPOINT_HEADER: [&str; 4] = ["index", "x", "y", "z"];

pub fn write_results_csv(path: &Path, rows: &[(String, EvalResult)]) -> Result<()> {
    write_rows(
        path,
        &RESULTS_HEADER,
        rows.iter().map(|(id, r)| {
            vec![
                id.clone(),
                fmt_f64(r.rte),
                fmt_f64(r.rre),
                r.success.to_string(),
                r.iterations_used.to_string(),
                r.inlier_count.to_string(),
            ]
        }),
    )
}

pub fn write_precision_csv(path: &Path, curve: &[(f64, f64)]) -> Result<()> {
    write_rows(
        path,
        &PRECISION_HEADER,
        curve.iter().map(|&(t, p)| vec![fmt_f64(t), fmt_f64(p)]),
    )
}

pub fn write_log_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    write_rows(
        path,
        &LOG_HEADER,
        log.iter().map(|r| {
            vec![
                r.iter.to_string(),
                fmt_f64(r.loss.unwrap_or(f64::NAN)),
                r.skipped.to_string(),
                format!("{:.3}", r.seconds),
            ]
        }),
    )
}

pub fn write_keypoints_csv(path: &Path, cloud: &PointCloud<f64>, idx: &[usize]) -> Result<()> {
    write_rows(
        path,
        &KEYPOINT_HEADER,
        idx.iter().map(|&i| {
            let p = cloud.points[i];
            vec![i.to_string(), fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(p[2])]
        }),
    )
}

/// Appends one line to a text file (used for streaming logs).
pub fn append_line(path: &Path, line: &str) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(f, "{line}").map_err(|e| Error::io(path, e))
}

/// Training, keypoint and RANSAC settings read from a `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let eval = EvalConfig {
            r_cluster: train.r_cluster,
            c: train.c,
            ..EvalConfig::default()
        };
        Self { train, eval }
    }
}

/// Every accepted key, in the order they are documented.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "sigma_r",
    "sigma_p",
    "alpha",
    "batch_size",
    "lr",
    "iterations",
    "k",
    "c",
    "r_cluster",
    "subsample",
    "checkpoint_every",
    "descriptor_dim",
    "orient_point_widths",
    "orient_head_widths",
    "feat_point_widths",
    "feat_head_widths",
    "shared_centers",
    "detach_orientation",
    "detector",
    "max_keypoints",
    "salient_radius",
    "nms_radius",
    "gamma21",
    "gamma32",
    "min_neighbors",
    "min_saliency_ratio",
    "ransac_max_iterations",
    "ransac_confidence",
    "inlier_threshold",
];

fn parse_value<V: FromStr>(path: &Path, line: usize, key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| parse_err(path, line, format!("invalid value {v:?} for {key}")))
}

fn parse_bool(path: &Path, line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(parse_err(path, line, format!("invalid boolean {v:?} for {key}"))),
    }
}

fn parse_widths(path: &Path, line: usize, key: &str, v: &str) -> Result<Vec<usize>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|t| parse_value(path, line, key, t.trim())).collect()
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    /// Parses `key = value` lines; `#` comments and blank lines are
    /// ignored, unknown or repeated keys are errors.
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        let mut c_set = false;
        let mut r_set = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(parse_err(path, line, format!("expected key=value, got {body:?}")));
            };
            let (k, v) = (k.trim(), v.trim());
            if !CONFIG_KEYS.contains(&k) {
                return Err(parse_err(path, line, format!("unknown key {k:?}")));
            }
            if !seen.insert(k.to_string()) {
                return Err(parse_err(path, line, format!("duplicate key {k:?}")));
            }
            let t = &mut cfg.train;
            let e = &mut cfg.eval;
            match k {
                "seed" => {
                    t.seed = RngSeed(parse_value(path, line, k, v)?);
                    e.seed = t.seed;
                }
                "sigma_r" => t.sigma_r = parse_value(path, line, k, v)?,
                "sigma_p" => t.sigma_p = parse_value(path, line, k, v)?,
                "alpha" => t.alpha = parse_value(path, line, k, v)?,
                "batch_size" => t.batch_size = parse_value(path, line, k, v)?,
                "lr" => t.lr = parse_value(path, line, k, v)?,
                "iterations" => t.iterations = parse_value(path, line, k, v)?,
                "k" => t.k = parse_value(path, line, k, v)?,
                "c" => {
                    t.c = parse_value(path, line, k, v)?;
                    c_set = true;
                }
                "r_cluster" => {
                    t.r_cluster = parse_value(path, line, k, v)?;
                    r_set = true;
                }
                "subsample" => t.subsample = parse_value(path, line, k, v)?,
                "checkpoint_every" => t.checkpoint_every = parse_value(path, line, k, v)?,
                "descriptor_dim" => t.arch.descriptor_dim = parse_value(path, line, k, v)?,
                "orient_point_widths" => t.arch.orient_point = parse_widths(path, line, k, v)?,
                "orient_head_widths" => t.arch.orient_head = parse_widths(path, line, k, v)?,
                "feat_point_widths" => t.arch.feat_point = parse_widths(path, line, k, v)?,
                "feat_head_widths" => t.arch.feat_head = parse_widths(path, line, k, v)?,
                "shared_centers" => t.shared_centers = parse_bool(path, line, k, v)?,
                "detach_orientation" => t.detach_orientation = parse_bool(path, line, k, v)?,
                "detector" => {
                    e.detector = v
                        .parse::<Detector>()
                        .map_err(|err| parse_err(path, line, err.to_string()))?
                }
                "max_keypoints" => e.max_keypoints = parse_value(path, line, k, v)?,
                "salient_radius" => e.iss.salient_radius = parse_value(path, line, k, v)?,
                "nms_radius" => e.iss.nms_radius = parse_value(path, line, k, v)?,
                "gamma21" => e.iss.gamma21 = parse_value(path, line, k, v)?,
                "gamma32" => e.iss.gamma32 = parse_value(path, line, k, v)?,
                "min_neighbors" => e.iss.min_neighbors = parse_value(path, line, k, v)?,
                "min_saliency_ratio" => e.iss.min_saliency_ratio = parse_value(path, line, k, v)?,
                "ransac_max_iterations" => e.ransac.max_iterations = parse_value(path, line, k, v)?,
                "ransac_confidence" => e.ransac.confidence = parse_value(path, line, k, v)?,
                "inlier_threshold" => e.ransac.inlier_threshold = parse_value(path, line, k, v)?,
                _ => unreachable!("key list and match arms disagree on {k}"),
            }
        }
        // the evaluation clusters follow the training geometry
        if c_set {
            cfg.eval.c = cfg.train.c;
        }
        if r_set {
            cfg.eval.r_cluster = cfg.train.r_cluster;
        }
        cfg.train.validate().map_err(|e| parse_err(path, 0, e.to_string()))?;
        cfg.eval.iss.validate().map_err(|e| parse_err(path, 0, e.to_string()))?;
        cfg.eval.ransac.validate().map_err(|e| parse_err(path, 0, e.to_string()))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn ascii_basic_and_comments() {
        let d = tmp();
        let p = d.path().join("a.xyz");
        fs::write(&p, "# header\n0 0 0\n\n1 2 3 # trailing\n").unwrap();
        let c = read_cloud(&p, CloudFormat::AsciiXyz).unwrap();
        assert_eq!(c.points, vec![[0.0; 3], [1.0, 2.0, 3.0]]);
        assert!(c.intensity.is_none());
    }

    #[test]
    fn ascii_errors_carry_line_numbers() {
        let d = tmp();
        let p = d.path().join("a.xyz");
        fs::write(&p, "0 0 0\n1 nan 3\n").unwrap();
        assert!(matches!(read_cloud(&p, CloudFormat::AsciiXyz), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "0 0\n").unwrap();
        assert!(matches!(read_cloud(&p, CloudFormat::AsciiXyz), Err(Error::Parse { line: 1, .. })));
        fs::write(&p, "0 0 0 1\n1 1 1\n").unwrap();
        assert!(matches!(read_cloud(&p, CloudFormat::AsciiXyz), Err(Error::Parse { line: 2, .. })));
        fs::write(&p, "# nothing\n").unwrap();
        assert!(matches!(read_cloud(&p, CloudFormat::AsciiXyz), Err(Error::EmptyCloud)));
        assert!(matches!(
            read_cloud(&d.path().join("missing"), CloudFormat::AsciiXyz),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn ascii_round_trip_is_exact() {
        let d = tmp();
        let p = d.path().join("a.xyz");
        let c = PointCloud::with_intensity(
            vec![[0.1, -1.0 / 3.0, 1e-300], [std::f64::consts::PI, 12345.678901234567, -0.0]],
            vec![0.25, 1.0 / 7.0],
        )
        .unwrap();
        write_cloud(&p, &c, CloudFormat::AsciiXyz).unwrap();
        let back = read_cloud(&p, CloudFormat::AsciiXyz).unwrap();
        let bits = |c: &PointCloud<f64>| c.points.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&c));
        assert_eq!(back.intensity, c.intensity);
    }

    #[test]
    fn kitti_records() {
        let d = tmp();
        let p = d.path().join("s.bin");
        let mut b = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5, -1.0, 0.0, 4.0, 0.25] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&p, &b).unwrap();
        let c = read_cloud(&p, CloudFormat::KittiBin).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.intensity, Some(vec![0.5, 0.25]));
        fs::write(&p, &b[..17]).unwrap();
        assert!(matches!(read_cloud(&p, CloudFormat::KittiBin), Err(Error::Parse { .. })));
        write_cloud(&p, &c, CloudFormat::KittiBin).unwrap();
        assert_eq!(fs::read(&p).unwrap(), b);
        assert_eq!(CloudFormat::from_path(&p), CloudFormat::KittiBin);
    }

    #[test]
    fn transform_file_round_trip() {
        let d = tmp();
        let p = d.path().join("gt.txt");
        let tf = RigidTransform::new(crate::linalg::rot_z(0.3), [1.0, -2.0, 0.5]);
        write_transform(&p, &tf).unwrap();
        assert_eq!(read_transform(&p).unwrap(), tf);
        fs::write(&p, "1 0 0 0 0 1 0 0 0 0 1").unwrap();
        assert!(matches!(read_transform(&p), Err(Error::Parse { .. })));
        fs::write(&p, "2 0 0 0 0 1 0 0 0 0 1 0").unwrap();
        assert!(read_transform(&p).is_err());
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let d = tmp();
        let p = d.path().join("pairs.csv");
        fs::write(&p, "cloud_a,cloud_b,gt_file\na.xyz, b.xyz ,gt.txt\n/abs/a,/abs/b,/abs/g\n").unwrap();
        let rows = read_manifest(&p).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].cloud_b, d.path().join("b.xyz"));
        assert_eq!(rows[1].gt_file, PathBuf::from("/abs/g"));
        fs::write(&p, "a,b\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn config_parsing() {
        let p = Path::new("run.cfg");
        let cfg = RunConfig::parse(p, "# comment\nsigma_r = 0.3\nk=16\nc = 8\ndetector = fps\nfeat_point_widths=8,16\n").unwrap();
        assert_eq!(cfg.train.sigma_r, 0.3);
        assert_eq!((cfg.train.k, cfg.train.c, cfg.eval.c), (16, 8, 8));
        assert_eq!(cfg.eval.detector, Detector::Fps);
        assert_eq!(cfg.train.arch.feat_point, vec![8, 16]);
        let err = RunConfig::parse(p, "k = 16\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(matches!(RunConfig::parse(p, "k = x\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(RunConfig::parse(p, "k = 4\nk = 5\n"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(RunConfig::parse(p, "novalue\n"), Err(Error::Parse { line: 1, .. })));
        assert!(RunConfig::parse(p, "ransac_confidence = 1.5\n").is_err());
        assert_eq!(RunConfig::parse(p, "").unwrap(), RunConfig::default());
    }

    #[test]
    fn every_key_is_accepted() {
        let sample = |k: &str| match k {
            "detector" => "iss",
            "shared_centers" | "detach_orientation" => "false",
            k if k.ends_with("_widths") => "8",
            "ransac_confidence" | "gamma21" | "gamma32" | "min_saliency_ratio" => "0.5",
            _ => "7",
        };
        for k in CONFIG_KEYS {
            let text = format!("{k} = {}\n", sample(k));
            RunConfig::parse(Path::new("x"), &text).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }
}
