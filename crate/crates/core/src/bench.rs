//! Experiment harness: LM-count-to-accuracy, accuracy at a hypothesis budget,
//! per-seed method ratios and success fractions on synthetic scenes.
//!
//! Every derived number is a pure function of the raw checkpoint series, so a
//! summary can always be recomputed from `bench.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{fmt_err, Checkpoint, Method, RansacConfig};
use crate::geometry::{mean_symmetric_distance, Fundamental, HomogLine, HomogPoint, PointPair};
use crate::pipeline::{CalibrateOptions, Offline};
use crate::refine::RefineConfig;
use crate::synth::{ground_truth_frontier_points, make_scene, FrontierPair, SceneSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("no completed cells")]
    NoData,
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedScene {
    pub name: String,
    #[serde(default)]
    pub spec: SceneSpec,
}

fn default_thresholds() -> Vec<f64> {
    vec![1.5, 1.0, 0.8, 0.5, 0.4, 0.3]
}

fn default_budgets() -> Vec<usize> {
    vec![1000, 2000, 5000, 10000]
}

fn default_angle_step() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenes: Vec<NamedScene>,
    pub methods: Vec<Method>,
    /// Hypothesis counts for the accuracy-at-budget table.
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    /// Error levels in pixels.
    #[serde(default = "default_thresholds")]
    pub thresholds: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Hypotheses per run; defaults to the largest budget.
    #[serde(default)]
    pub hypotheses: Option<usize>,
    #[serde(default = "default_angle_step")]
    pub angle_step_deg: f64,
    #[serde(default)]
    pub key_frames: Option<usize>,
    #[serde(default)]
    pub ransac: RansacConfig,
    /// Also run refinement and record its ground-truth error.
    #[serde(default)]
    pub refine: Option<RefineConfig>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: &str| Err(BenchError::InvalidSpec(m.into()));
        if self.scenes.is_empty() {
            return bad("no scenes");
        }
        if self.methods.is_empty() || self.budgets.is_empty() || self.thresholds.is_empty() || self.seeds.is_empty()
        {
            return bad("methods, budgets, thresholds and seeds must be nonempty");
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0)) {
            return bad("thresholds must be positive");
        }
        if self.budgets.contains(&0) {
            return bad("budgets must be positive");
        }
        let mut names: Vec<&str> = self.scenes.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return bad("scene names must be unique");
        }
        if names.iter().any(|n| n.is_empty() || n.contains([',', '/', '\\', '\n'])) {
            return bad("scene names must be nonempty and free of ',' and path separators");
        }
        self.ransac.validate().map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
        if let Some(r) = &self.refine {
            r.validate().map_err(|e| BenchError::InvalidSpec(e.to_string()))?;
        }
        Ok(())
    }

    pub fn hypotheses(&self) -> usize {
        self.hypotheses.unwrap_or_else(|| self.budgets.iter().copied().max().unwrap_or(0))
    }
}

/// Raw outcome of one (scene, method, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct CellData {
    pub checkpoints: Vec<Checkpoint>,
    pub final_f: Fundamental,
    /// Ground-truth error of the F the estimator returned.
    pub final_error: f64,
    pub refined_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub scene: String,
    pub method: Method,
    pub seed: u64,
    pub outcome: Result<CellData, String>,
}

#[derive(Debug, Clone)]
pub struct SceneTruth {
    pub name: String,
    pub size: (usize, usize),
    pub f: Fundamental,
    pub points: Vec<PointPair>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub cells: Vec<Cell>,
    pub truths: Vec<SceneTruth>,
}

/// Per-scene shared state: masks analyzed once, read by every cell.
struct Prepared {
    truth: SceneTruth,
    offline: Offline,
}

fn prepare(scene: &NamedScene, angle_step_deg: f64) -> Result<Prepared, String> {
    let s = make_scene(&scene.spec).map_err(|e| e.to_string())?;
    let a = s.render_camera(0);
    let b = s.render_camera(1);
    let f = s.fundamental(0, 1).map_err(|e| e.to_string())?;
    let gt = ground_truth_frontier_points(&a, &b, &f).map_err(|e| e.to_string())?;
    let offline = Offline::compute(&a, &b, angle_step_deg).map_err(|e| e.to_string())?;
    Ok(Prepared {
        truth: SceneTruth {
            name: scene.name.clone(),
            size: s.image_size(),
            f,
            points: gt.iter().map(FrontierPair::point_pair).collect(),
        },
        offline,
    })
}

fn run_cell(p: &Prepared, spec: &ExperimentSpec, method: Method, seed: u64) -> Result<CellData, String> {
    let opts = CalibrateOptions {
        method,
        ransac: RansacConfig { seed, max_hypotheses: spec.hypotheses(), timing: false, ..spec.ransac },
        refine: spec.refine,
        key_frames: spec.key_frames,
        top_m: 1,
    };
    let cal = p.offline.calibrate(&opts, Some(&p.truth.points)).map_err(|e| e.to_string())?;
    let err = |f: &Fundamental| mean_symmetric_distance(f, &p.truth.points).unwrap_or(f64::INFINITY);
    Ok(CellData {
        checkpoints: cal.report.checkpoints.clone(),
        final_f: cal.ransac_f,
        final_error: err(&cal.ransac_f),
        refined_error: cal.refinement.as_ref().map(|r| err(&r.f)),
    })
}

/// Runs every (scene, method, seed) cell. Scenes are prepared one at a time;
/// the cells of a scene run in parallel against its shared offline phase.
/// A failing cell or scene is recorded and the rest continue.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, BenchError> {
    spec.validate()?;
    let mut cells = Vec::new();
    let mut truths = Vec::new();
    for scene in &spec.scenes {
        let jobs: Vec<(Method, u64)> =
            spec.methods.iter().flat_map(|&m| spec.seeds.iter().map(move |&s| (m, s))).collect();
        match prepare(scene, spec.angle_step_deg) {
            Ok(p) => {
                let done: Vec<Cell> = jobs
                    .par_iter()
                    .map(|&(method, seed)| Cell {
                        scene: scene.name.clone(),
                        method,
                        seed,
                        outcome: run_cell(&p, spec, method, seed),
                    })
                    .collect();
                cells.extend(done);
                truths.push(p.truth);
            }
            Err(e) => {
                tracing::warn!("scene {} failed: {e}", scene.name);
                cells.extend(jobs.into_iter().map(|(method, seed)| Cell {
                    scene: scene.name.clone(),
                    method,
                    seed,
                    outcome: Err(e.clone()),
                }));
            }
        }
    }
    Ok(ExperimentResult { spec: spec.clone(), cells, truths })
}

// ---------------------------------------------------------------------------
// Derived statistics

/// Expected LM runs until the post-LM error first falls to `threshold`,
/// from the empirical success rate `p` of the series: `1/p`, plus the
/// method's precompute charge in LM units. `None` when no checkpoint
/// succeeded.
pub fn expected_lm_count(checkpoints: &[Checkpoint], threshold: f64, method: Method, interval: usize) -> Option<f64> {
    let n = checkpoints.len();
    let hits = checkpoints.iter().filter(|c| c.post_lm_error <= threshold).count();
    (hits > 0).then(|| n as f64 / hits as f64 + method.precompute_cost() as f64 / interval as f64)
}

/// What an unattained cell is known to exceed: the runs it spent.
pub fn expected_lm_lower_bound(checkpoints: &[Checkpoint], method: Method, interval: usize) -> f64 {
    checkpoints.len() as f64 + method.precompute_cost() as f64 / interval as f64
}

/// Lowest post-LM error among checkpoints at or before `budget` hypotheses.
pub fn best_at_budget(checkpoints: &[Checkpoint], budget: usize) -> f64 {
    checkpoints
        .iter()
        .filter(|c| c.hypothesis_index <= budget)
        .map(|c| c.post_lm_error)
        .fold(f64::INFINITY, f64::min)
}

pub fn best_error(checkpoints: &[Checkpoint]) -> f64 {
    checkpoints.iter().map(|c| c.post_lm_error).fold(f64::INFINITY, f64::min)
}

/// Median with the upper middle element for even counts; infinities sort last.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-cell ratio of the baseline's expected LM count to the barcode
/// method's at one threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellRatio {
    pub seed: u64,
    pub ratio: f64,
    /// The baseline never attained the threshold; `ratio` is a lower bound.
    pub lower_bound: bool,
}

impl ExperimentResult {
    fn completed(&self) -> impl Iterator<Item = (&Cell, &CellData)> {
        self.cells.iter().filter_map(|c| c.outcome.as_ref().ok().map(|d| (c, d)))
    }

    fn interval(&self) -> usize {
        self.spec.ransac.checkpoint_interval
    }

    fn cell(&self, scene: &str, method: Method, seed: u64) -> Option<&CellData> {
        self.cells
            .iter()
            .find(|c| c.scene == scene && c.method == method && c.seed == seed)
            .and_then(|c| c.outcome.as_ref().ok())
    }

    /// Ratios over seeds where the barcode method attained the threshold.
    pub fn ratios(&self, scene: &str, threshold: f64) -> Vec<CellRatio> {
        let iv = self.interval();
        self.spec
            .seeds
            .iter()
            .filter_map(|&seed| {
                let b = self.cell(scene, Method::Barcode, seed)?;
                let s = self.cell(scene, Method::Sinha, seed)?;
                let eb = expected_lm_count(&b.checkpoints, threshold, Method::Barcode, iv)?;
                Some(match expected_lm_count(&s.checkpoints, threshold, Method::Sinha, iv) {
                    Some(es) => CellRatio { seed, ratio: es / eb, lower_bound: false },
                    None => CellRatio {
                        seed,
                        ratio: expected_lm_lower_bound(&s.checkpoints, Method::Sinha, iv) / eb,
                        lower_bound: true,
                    },
                })
            })
            .collect()
    }

    /// Median ratio, flagged as a lower bound when any contributing cell is.
    pub fn median_ratio(&self, scene: &str, threshold: f64) -> Option<(f64, bool)> {
        let r = self.ratios(scene, threshold);
        let m = median(&r.iter().map(|c| c.ratio).collect::<Vec<_>>())?;
        Some((m, r.iter().any(|c| c.lower_bound)))
    }

    /// Raw series: one row per checkpoint of every completed cell.
    pub fn bench_csv(&self) -> String {
        let mut s = String::from("scene,method,seed,hypothesis_index,window_best_error,post_lm_error,lm_count\n");
        for (c, d) in self.completed() {
            for k in &d.checkpoints {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    c.scene,
                    c.method.name(),
                    c.seed,
                    k.hypothesis_index,
                    fmt_err(k.window_best_error),
                    fmt_err(k.post_lm_error),
                    k.lm_count
                );
            }
        }
        s
    }

    /// Derived tables in long form. `seed` is empty for medians over seeds;
    /// `status` is `ok`, `not_attained`, `lower_bound` or `missing`.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("table,scene,method,seed,parameter,value,status\n");
        let iv = self.interval();
        let mut row = |table: &str, scene: &str, method: &str, seed: Option<u64>, param: String, v: f64, status: &str| {
            let seed = seed.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{table},{scene},{method},{seed},{param},{},{status}", fmt_err(v));
        };
        let status_of = |v: f64| if v.is_finite() { "ok" } else { "not_attained" };
        for scene in &self.spec.scenes {
            let name = scene.name.as_str();
            for &m in &self.spec.methods {
                let cells: Vec<(u64, &CellData)> = self
                    .spec
                    .seeds
                    .iter()
                    .filter_map(|&seed| self.cell(name, m, seed).map(|d| (seed, d)))
                    .collect();
                for &seed in &self.spec.seeds {
                    if self.cell(name, m, seed).is_none() {
                        row("missing", name, m.name(), Some(seed), String::new(), f64::INFINITY, "missing");
                    }
                }
                if cells.is_empty() {
                    continue;
                }
                for &t in &self.spec.thresholds {
                    let per: Vec<f64> = cells
                        .iter()
                        .map(|(_, d)| expected_lm_count(&d.checkpoints, t, m, iv).unwrap_or(f64::INFINITY))
                        .collect();
                    for ((seed, _), v) in cells.iter().zip(&per) {
                        row("expected_lm", name, m.name(), Some(*seed), fmt_param(t), *v, status_of(*v));
                    }
                    let med = median(&per).unwrap_or(f64::INFINITY);
                    row("expected_lm", name, m.name(), None, fmt_param(t), med, status_of(med));
                    let hyp: Vec<f64> = per.iter().map(|v| v * iv as f64).collect();
                    let med = median(&hyp).unwrap_or(f64::INFINITY);
                    row("expected_hypotheses", name, m.name(), None, fmt_param(t), med, status_of(med));
                }
                for &b in &self.spec.budgets {
                    let per: Vec<f64> = cells.iter().map(|(_, d)| best_at_budget(&d.checkpoints, b)).collect();
                    let med = median(&per).unwrap_or(f64::INFINITY);
                    row("best_at_budget", name, m.name(), None, b.to_string(), med, status_of(med));
                }
                let fin: Vec<f64> = cells.iter().map(|(_, d)| d.final_error).collect();
                let med = median(&fin).unwrap_or(f64::INFINITY);
                row("final_error", name, m.name(), None, String::new(), med, status_of(med));
                let refined: Vec<f64> = cells.iter().filter_map(|(_, d)| d.refined_error).collect();
                if let Some(med) = median(&refined) {
                    row("refined_error", name, m.name(), None, String::new(), med, status_of(med));
                }
            }
            if self.spec.methods.contains(&Method::Barcode) && self.spec.methods.contains(&Method::Sinha) {
                for &t in &self.spec.thresholds {
                    for r in self.ratios(name, t) {
                        let st = if r.lower_bound { "lower_bound" } else { "ok" };
                        row("ratio", name, "sinha/barcode", Some(r.seed), fmt_param(t), r.ratio, st);
                    }
                    match self.median_ratio(name, t) {
                        Some((v, lb)) => {
                            row("ratio", name, "sinha/barcode", None, fmt_param(t), v, if lb { "lower_bound" } else { "ok" })
                        }
                        None => row("ratio", name, "sinha/barcode", None, fmt_param(t), f64::INFINITY, "not_attained"),
                    }
                }
            }
        }
        if let Ok(fr) = self.success_fractions_all() {
            for (m, per) in fr {
                for (t, v) in per {
                    row("success_fraction", "all", m.name(), None, t, v, "ok");
                }
            }
        }
        s
    }

    fn success_fractions_all(&self) -> Result<BTreeMap<Method, Vec<(String, f64)>>, BenchError> {
        let mut out: BTreeMap<Method, Vec<(String, f64)>> = BTreeMap::new();
        for &t in &self.spec.thresholds {
            for (m, v) in success_fraction(self, t)? {
                out.entry(m).or_default().push((fmt_param(t), v));
            }
        }
        Ok(out)
    }

    /// Writes `bench.csv`, `summary.csv` and one overlay per scene and method
    /// (first completed seed).
    pub fn write(&self, out: &Path) -> Result<(), BenchError> {
        fs::create_dir_all(out)?;
        fs::write(out.join("bench.csv"), self.bench_csv())?;
        fs::write(out.join("summary.csv"), self.summary_csv())?;
        for truth in &self.truths {
            for &m in &self.spec.methods {
                let first = self.spec.seeds.iter().find_map(|&s| self.cell(&truth.name, m, s));
                if let Some(d) = first {
                    let svg = render_overlay(truth.size, &d.final_f, &truth.f, &truth.points);
                    fs::write(out.join(format!("overlay_{}_{}.svg", truth.name, m.name())), svg)?;
                }
            }
        }
        Ok(())
    }
}

fn fmt_param(t: f64) -> String {
    format!("{t}")
}

/// Fraction of completed (scene, seed) cells per method whose best post-LM
/// error is at most `threshold`.
pub fn success_fraction(result: &ExperimentResult, threshold: f64) -> Result<BTreeMap<Method, f64>, BenchError> {
    let mut tally: BTreeMap<Method, (usize, usize)> = BTreeMap::new();
    for (c, d) in result.completed() {
        let e = tally.entry(c.method).or_default();
        e.1 += 1;
        if best_error(&d.checkpoints) <= threshold {
            e.0 += 1;
        }
    }
    if tally.is_empty() {
        return Err(BenchError::NoData);
    }
    Ok(tally.into_iter().map(|(m, (k, n))| (m, k as f64 / n as f64)).collect())
}

// ---------------------------------------------------------------------------
// Overlay

/// Segment of `line` inside `[0, w] × [0, h]`, if any.
pub fn clip_line(line: &HomogLine, w: f64, h: f64) -> Option<((f64, f64), (f64, f64))> {
    let [a, b, c] = [line.0.x, line.0.y, line.0.z];
    let mut pts: Vec<(f64, f64)> = Vec::with_capacity(4);
    let mut push = |x: f64, y: f64| {
        let eps = 1e-9 * (w + h);
        if x >= -eps && x <= w + eps && y >= -eps && y <= h + eps && !pts.iter().any(|p| (p.0 - x).hypot(p.1 - y) < 1e-9)
        {
            pts.push((x.clamp(0.0, w), y.clamp(0.0, h)));
        }
    };
    if b.abs() > 1e-15 {
        push(0.0, -c / b);
        push(w, -(c + a * w) / b);
    }
    if a.abs() > 1e-15 {
        push(-c / a, 0.0);
        push(-(c + b * h) / a, h);
    }
    (pts.len() >= 2).then(|| (pts[0], pts[1]))
}

const EST_STROKE: &str = "#e6b800";
const GT_STROKE: &str = "#d62728";

/// Two panels side by side (image A, image B). Through each ground-truth
/// point the epipolar line induced by its partner is drawn under the
/// estimated F (yellow) and the ground-truth F (red).
pub fn render_overlay(size: (usize, usize), f_est: &Fundamental, f_gt: &Fundamental, points: &[PointPair]) -> Vec<u8> {
    let (w, h) = (size.0 as f64, size.1 as f64);
    let gap = 10.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        2.0 * w + gap,
        h,
        2.0 * w + gap,
        h
    );
    for (panel, ox) in [("A", 0.0), ("B", w + gap)] {
        let _ = writeln!(s, "<g id=\"image{panel}\" transform=\"translate({ox} 0)\">");
        let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"#ffffff\" stroke=\"#000000\"/>");
        for (f, stroke, class) in [(f_gt, GT_STROKE, "gt"), (f_est, EST_STROKE, "est")] {
            for p in points {
                let line = if panel == "A" { f.line_in_a(&p.x_prime) } else { f.line_in_b(&p.x) };
                if let Some(((x1, y1), (x2, y2))) = clip_line(&line, w, h) {
                    let _ = writeln!(
                        s,
                        "<line class=\"{class}\" x1=\"{x1:.3}\" y1=\"{y1:.3}\" x2=\"{x2:.3}\" y2=\"{y2:.3}\" stroke=\"{stroke}\" stroke-width=\"1\"/>"
                    );
                }
            }
        }
        for p in points {
            let q: &HomogPoint = if panel == "A" { &p.x } else { &p.x_prime };
            if let Some(px) = q.to_pixel() {
                let _ = writeln!(s, "<circle cx=\"{:.3}\" cy=\"{:.3}\" r=\"2\" fill=\"#1f77b4\"/>", px.x, px.y);
            }
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s.into_bytes()
}
