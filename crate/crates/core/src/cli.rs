//! Command-line front end. Exit codes: 0 success, 2 configuration or input
//! error, 3 I/O error, 4 pipeline infeasible (no usable candidates, no
//! ground truth).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{de::DeserializeOwned, Deserialize};

use crate::barcode::{BarcodeBank, BarcodeError};
use crate::bench::{run_experiment, BenchError, ExperimentSpec};
use crate::estimator::{EstimateError, Method, RansacConfig};
use crate::geometry::{symmetric_epipolar_distance, Fundamental, PointPair};
use crate::matcher::MatchError;
use crate::pipeline::{offline_cached, write_scene, CalibrateOptions, Dataset, PipelineError, CACHE_ENV};
use crate::refine::{RefineConfig, RefineError};
use crate::silhouette::{FrameTangents, SilhouetteError};
use crate::synth::{make_scene, SceneSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "motionbar", version, about = "Fundamental matrices from silhouette video")]
pub struct Cli {
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene with ground truth.
    Synth {
        /// Scene spec (JSON); the default scene when omitted.
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate F for the first two cameras of a dataset.
    Calibrate(CalibrateArgs),
    /// Ground-truth error of a fundamental matrix.
    Eval { f: PathBuf, manifest: PathBuf },
    /// Run an experiment spec.
    Bench {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write every candidate line's barcode as CSV.
    DumpBarcodes {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        angle_step: Option<f64>,
    },
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    pub manifest: PathBuf,
    /// JSON file with the same keys as the flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long)]
    pub hypotheses: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub no_refine: bool,
    #[arg(long)]
    pub key_frames: Option<usize>,
    #[arg(long)]
    pub angle_step: Option<f64>,
    /// F as JSON; the report and trace CSVs are written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Keys accepted in a calibrate config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateFile {
    pub method: Option<Method>,
    pub hypotheses: Option<usize>,
    pub seed: Option<u64>,
    pub no_refine: Option<bool>,
    pub key_frames: Option<usize>,
    pub angle_step: Option<f64>,
    pub out: Option<PathBuf>,
    pub top_m: Option<usize>,
    pub ransac: Option<RansacConfig>,
    pub refine: Option<RefineConfig>,
}

/// Fully resolved calibrate settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateSettings {
    pub options: CalibrateOptions,
    pub angle_step_deg: f64,
    pub out: PathBuf,
}

impl CalibrateArgs {
    pub fn resolve(&self, file: CalibrateFile) -> Result<CalibrateSettings, String> {
        let mut ransac = file.ransac.unwrap_or_default();
        if let Some(n) = self.hypotheses.or(file.hypotheses) {
            ransac.max_hypotheses = n;
        }
        if let Some(s) = self.seed.or(file.seed) {
            ransac.seed = s;
        }
        ransac.validate().map_err(|e| e.to_string())?;
        let no_refine = self.no_refine || file.no_refine.unwrap_or(false);
        let refine = if no_refine { None } else { Some(file.refine.unwrap_or_default()) };
        if let Some(r) = &refine {
            r.validate().map_err(|e| e.to_string())?;
        }
        let angle_step_deg = self.angle_step.or(file.angle_step).unwrap_or(2.0);
        crate::silhouette::angle_count(angle_step_deg).map_err(|e| e.to_string())?;
        let top_m = file.top_m.unwrap_or(1);
        if top_m == 0 {
            return Err("top_m must be at least 1".into());
        }
        Ok(CalibrateSettings {
            options: CalibrateOptions {
                method: self.method.or(file.method).unwrap_or(Method::Barcode),
                ransac,
                refine,
                key_frames: self.key_frames.or(file.key_frames),
                top_m,
            },
            angle_step_deg,
            out: self.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("fundamental.json")),
        })
    }
}

impl clap::ValueEnum for Method {
    fn value_variants<'a>() -> &'a [Self] {
        &[Method::Barcode, Method::Sinha]
    }
    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.name()))
    }
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn config(m: impl ToString) -> Self {
        Self { code: EXIT_CONFIG, message: m.to_string() }
    }
    fn io(m: impl ToString) -> Self {
        Self { code: EXIT_IO, message: m.to_string() }
    }
    fn infeasible(m: impl ToString) -> Self {
        Self { code: EXIT_INFEASIBLE, message: m.to_string() }
    }
}

pub fn exit_code(e: &PipelineError) -> i32 {
    use PipelineError as P;
    match e {
        P::LengthMismatch(..) | P::SizeMismatch | P::NoFrames | P::Manifest(_) => EXIT_CONFIG,
        P::Io { .. } => EXIT_IO,
        P::Silhouette(SilhouetteError::Format { .. } | SilhouetteError::BadAngleStep(_)) => EXIT_CONFIG,
        P::Silhouette(_) => EXIT_INFEASIBLE,
        P::Barcode(BarcodeError::Io(_) | BarcodeError::Cache(_)) => EXIT_IO,
        P::Barcode(_) => EXIT_CONFIG,
        P::Match(MatchError::NotEnoughFrames { .. }) => EXIT_INFEASIBLE,
        P::Match(_) => EXIT_CONFIG,
        P::Estimate(EstimateError::InvalidConfig(_)) => EXIT_CONFIG,
        P::Estimate(_) => EXIT_INFEASIBLE,
        P::Refine(RefineError::InvalidConfig(_)) => EXIT_CONFIG,
        P::Refine(_) => EXIT_INFEASIBLE,
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Mean and median symmetric epipolar distance over `points`.
pub fn error_stats(f: &Fundamental, points: &[PointPair]) -> Option<(f64, f64)> {
    let mut d: Vec<f64> = points.iter().filter_map(|p| symmetric_epipolar_distance(f, p).ok()).collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    let n = d.len();
    let median = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    Some((mean, median))
}

pub fn format_error_line(stats: (f64, f64), pairs: usize) -> String {
    format!("gt_error_px mean={:.6} median={:.6} pairs={pairs}", stats.0, stats.1)
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "fundamental".into());
    out.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_synth(spec: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let spec: SceneSpec = match spec {
        Some(p) => read_json(p)?,
        None => SceneSpec::default(),
    };
    let scene = make_scene(&spec).map_err(Failure::config)?;
    fs::create_dir_all(out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    let manifest = write_scene(&scene, out)?;
    println!("frames={} cameras={} out={}", manifest.frames, manifest.cameras.len(), out.display());
    Ok(())
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<(), Failure> {
    let file: CalibrateFile = match &args.config {
        Some(p) => read_json(p)?,
        None => CalibrateFile::default(),
    };
    let settings = args.resolve(file).map_err(Failure::config)?;
    let ds = Dataset::open(&args.manifest)?;
    let (a, b) = ds.load_pair()?;
    let gt = ds.ground_truth_points(Some((&a, &b)))?;
    let off = offline_cached(&a, &b, settings.angle_step_deg, cache_dir().as_deref())?;
    let cal = off.calibrate(&settings.options, gt.as_deref())?;
    let json = serde_json::to_string_pretty(&cal.f).map_err(Failure::io)?;
    write_file(&settings.out, json + "\n")?;
    write_file(&sibling(&settings.out, ".report.csv"), cal.report.to_csv())?;
    if let Some(r) = &cal.refinement {
        write_file(&sibling(&settings.out, ".trace.csv"), r.trace_csv())?;
    }
    println!("method={} inliers={} lm_runs={}", cal.report.method.name(), cal.inliers, cal.report.lm_count);
    if let Some(r) = &cal.refinement {
        println!("refine iterations={} termination={:?}", r.iterations, r.termination);
    }
    println!("{}", cal.f);
    if let Some(points) = &gt {
        if let Some(stats) = error_stats(&cal.f, points) {
            println!("{}", format_error_line(stats, points.len()));
        }
    }
    Ok(())
}

fn cmd_eval(f_path: &Path, manifest: &Path) -> Result<(), Failure> {
    let f: Fundamental = read_json(f_path)?;
    let ds = Dataset::open(manifest)?;
    let points = ds.ground_truth_points(None)?.ok_or_else(|| Failure::infeasible("no ground truth in manifest"))?;
    let stats = error_stats(&f, &points).ok_or_else(|| Failure::infeasible("no ground-truth pairs"))?;
    println!("{}", format_error_line(stats, points.len()));
    Ok(())
}

fn cmd_bench(spec_path: &Path, out: &Path) -> Result<(), Failure> {
    let spec: ExperimentSpec = read_json(spec_path)?;
    let result = run_experiment(&spec).map_err(|e| match e {
        BenchError::Io(_) => Failure::io(e),
        _ => Failure::config(e),
    })?;
    result.write(out).map_err(Failure::io)?;
    let failed = result.cells.iter().filter(|c| c.outcome.is_err()).count();
    println!("cells={} failed={failed} out={}", result.cells.len(), out.display());
    Ok(())
}

fn bank_csv(bank: &BarcodeBank, tangents: &[FrameTangents]) -> String {
    let mut s = String::from("frame,line,normal_angle_deg,ones,bits\n");
    for (t, ft) in tangents.iter().enumerate() {
        for (i, (cl, b)) in ft.lines.iter().zip(bank.frame(t)).enumerate() {
            let _ = writeln!(s, "{t},{i},{},{},{}", cl.normal_angle_deg, b.ones(), b.to_bit_string());
        }
    }
    s
}

fn cmd_dump(manifest: &Path, out: &Path, angle_step: Option<f64>) -> Result<(), Failure> {
    let step = angle_step.unwrap_or(2.0);
    crate::silhouette::angle_count(step).map_err(Failure::config)?;
    let ds = Dataset::open(manifest)?;
    let (a, b) = ds.load_pair()?;
    let off = offline_cached(&a, &b, step, cache_dir().as_deref())?;
    fs::create_dir_all(out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    write_file(&out.join("barcodes_a.csv"), bank_csv(&off.bank_a, &off.tangents_a))?;
    write_file(&out.join("barcodes_b.csv"), bank_csv(&off.bank_b, &off.tangents_b))?;
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::config("--threads must be at least 1"));
        }
        // A second call in one process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Synth { spec, out } => cmd_synth(spec.as_deref(), out),
        Command::Calibrate(args) => cmd_calibrate(args),
        Command::Eval { f, manifest } => cmd_eval(f, manifest),
        Command::Bench { spec, out } => cmd_bench(spec, out),
        Command::DumpBarcodes { manifest, out, angle_step } => cmd_dump(manifest, out, *angle_step),
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
