//! RANSAC over barcode-matched line triples, LM polishing at fixed
//! checkpoints, and the tangent-sampling baseline.

use std::fmt::Write as _;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chart::{RankTwoChart, DOF};
use crate::geometry::{
    fundamental_from_line_pairs_with, mean_symmetric_distance, symmetric_epipolar_distance, Concurrency,
    Fundamental, LinePair, Mat3, PointPair, Vec3,
};
use crate::lm::{self, LeastSquares, LmConfig};
use crate::matcher::{MatchCandidate, MatchTable};
use crate::silhouette::{FrameTangents, Pixel};

/// Hypothesis-equivalents charged for the offline barcode phase.
pub const BARCODE_PRECOMPUTE_COST: usize = 35;

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("need at least 3 usable candidates, have {0}")]
    NotEnoughCandidates(usize),
    #[error("no hypothesis produced a valid fundamental matrix")]
    AllDegenerate,
    #[error("need at least {needed} point pairs, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RansacConfig {
    pub max_hypotheses: usize,
    pub checkpoint_interval: usize,
    pub inlier_threshold_px: f64,
    pub seed: u64,
    pub min_correlation: f64,
    /// Record per-checkpoint wall time. Off by default so reports are
    /// reproducible byte for byte.
    pub timing: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            max_hypotheses: 5000,
            checkpoint_interval: 1000,
            inlier_threshold_px: 1.0,
            seed: 0,
            min_correlation: 0.9,
            timing: false,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), EstimateError> {
        if self.checkpoint_interval == 0 {
            return Err(EstimateError::InvalidConfig("checkpoint_interval must be at least 1".into()));
        }
        if !(self.inlier_threshold_px > 0.0) {
            return Err(EstimateError::InvalidConfig("inlier_threshold_px must be positive".into()));
        }
        if !(self.min_correlation > 0.0) {
            return Err(EstimateError::InvalidConfig("min_correlation must be positive".into()));
        }
        if self.max_hypotheses == 0 {
            return Err(EstimateError::InvalidConfig("max_hypotheses must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Barcode,
    Sinha,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Barcode => "barcode",
            Method::Sinha => "sinha",
        }
    }

    pub fn precompute_cost(&self) -> usize {
        match self {
            Method::Barcode => BARCODE_PRECOMPUTE_COST,
            Method::Sinha => 0,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "barcode" => Ok(Method::Barcode),
            "sinha" => Ok(Method::Sinha),
            other => Err(format!("unknown method '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub f: Fundamental,
    pub inlier_count: usize,
    /// Mean symmetric epipolar distance over inliers (∞ with no inliers).
    pub score: f64,
    /// Table indices for the barcode method; (first frame, second frame,
    /// tangent side) for the baseline.
    pub source: [usize; 3],
    pub index: usize,
}

/// More inliers first, then lower error, then earlier hypothesis.
fn rank_key(h: &Hypothesis) -> (std::cmp::Reverse<usize>, OrdF64, usize) {
    (std::cmp::Reverse(h.inlier_count), OrdF64(h.score), h.index)
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Hypotheses generated so far when the checkpoint fired.
    pub hypothesis_index: usize,
    /// Inlier error of the window's best hypothesis (∞ if none was valid).
    pub window_best_error: f64,
    /// Error after LM: against ground truth when given, else the inliers.
    pub post_lm_error: f64,
    pub lm_count: usize,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacReport {
    pub method: Method,
    pub checkpoints: Vec<Checkpoint>,
    pub lm_count: usize,
    pub precompute_cost_iters: usize,
    pub hypotheses: usize,
    pub valid_hypotheses: usize,
}

impl RansacReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("hypothesis_index,window_best_error,post_lm_error,lm_count,wall_ms\n");
        for c in &self.checkpoints {
            let wall = c.wall_ms.map(|w| format!("{w:.3}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                c.hypothesis_index,
                fmt_err(c.window_best_error),
                fmt_err(c.post_lm_error),
                c.lm_count,
                wall
            );
        }
        out
    }

    /// Running minimum of the post-LM error.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.checkpoints
            .iter()
            .map(|c| {
                best = best.min(c.post_lm_error);
                best
            })
            .collect()
    }
}

pub fn fmt_err(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.9}")
    } else {
        "inf".into()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator of hypothesis `index`; the seed is hashed first so that nearby
/// seeds do not share streams.
pub fn hypothesis_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed) ^ index as u64))
}

/// Touch-point pairs of the candidates at or above `min_correlation`.
pub fn surrogate_pairs(table: &MatchTable, min_correlation: f64) -> Vec<PointPair> {
    table
        .candidates
        .iter()
        .filter(|c| c.correlation >= min_correlation)
        .map(|c| PointPair::from_pixels(c.line_a.touch.pos, c.line_b.touch.pos))
        .collect()
}

/// Inlier count and mean inlier error of `f` on `points`.
pub fn score_points(f: &Fundamental, points: &[PointPair], threshold_px: f64) -> (usize, f64) {
    let mut n = 0;
    let mut sum = 0.0;
    for p in points {
        if let Ok(d) = symmetric_epipolar_distance(f, p) {
            if d < threshold_px {
                n += 1;
                sum += d;
            }
        }
    }
    if n == 0 {
        (0, f64::INFINITY)
    } else {
        (n, sum / n as f64)
    }
}

/// Scores `f` on the touch points of every candidate with correlation of at
/// least `min_correlation`.
pub fn score_hypothesis(f: &Fundamental, table: &MatchTable, threshold_px: f64, min_correlation: f64) -> (usize, f64) {
    score_points(f, &surrogate_pairs(table, min_correlation), threshold_px)
}

/// Candidates with correlation ≥ `min_correlation` whose touch points are
/// inliers of `f`, in table order.
pub fn symmetric_epipolar_inliers<'t>(
    f: &Fundamental,
    table: &'t MatchTable,
    threshold_px: f64,
    min_correlation: f64,
) -> Vec<&'t MatchCandidate> {
    table
        .candidates
        .iter()
        .filter(|c| c.correlation >= min_correlation)
        .filter(|c| {
            let p = PointPair::from_pixels(c.line_a.touch.pos, c.line_b.touch.pos);
            symmetric_epipolar_distance(f, &p).is_ok_and(|d| d < threshold_px)
        })
        .collect()
}

fn inliers(f: &Fundamental, points: &[PointPair], threshold_px: f64) -> Vec<PointPair> {
    points
        .iter()
        .filter(|p| symmetric_epipolar_distance(f, p).is_ok_and(|d| d < threshold_px))
        .copied()
        .collect()
}

// ---------------------------------------------------------------------------
// LM over the rank-2 chart

/// Similarity normalization shared by both images: per-image centroid, one
/// common scale so residuals stay proportional to pixels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Normalization {
    pub(crate) ta: Mat3,
    pub(crate) tb: Mat3,
    pub(crate) scale: f64,
}

impl Normalization {
    pub(crate) fn new(pairs: &[(Vector2<f64>, Vector2<f64>)]) -> Self {
        let n = pairs.len() as f64;
        let ca = pairs.iter().map(|p| p.0).sum::<Vector2<f64>>() / n;
        let cb = pairs.iter().map(|p| p.1).sum::<Vector2<f64>>() / n;
        let spread = pairs.iter().map(|p| (p.0 - ca).norm() + (p.1 - cb).norm()).sum::<f64>() / (2.0 * n);
        let scale = if spread > 1e-12 { std::f64::consts::SQRT_2 / spread } else { 1.0 };
        let t = |c: Vector2<f64>| Mat3::new(scale, 0.0, -scale * c.x, 0.0, scale, -scale * c.y, 0.0, 0.0, 1.0);
        Self { ta: t(ca), tb: t(cb), scale }
    }

    pub(crate) fn apply(t: &Mat3, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
    }

    pub(crate) fn unapply(t: &Mat3, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((p.x - t[(0, 2)]) / t[(0, 0)], (p.y - t[(1, 2)]) / t[(1, 1)])
    }

    pub(crate) fn to_normalized(&self, f: &Mat3) -> Mat3 {
        let ia = self.ta.try_inverse().unwrap();
        let ib = self.tb.try_inverse().unwrap();
        ib.transpose() * f * ia
    }

    pub(crate) fn to_pixels(&self, f: &Mat3) -> Mat3 {
        self.tb.transpose() * f * self.ta
    }
}

/// Signed point-to-epipolar-line distances in both images.
fn pair_residuals(f: &Mat3, x: &Vector2<f64>, xp: &Vector2<f64>) -> (f64, f64) {
    let xh = Vec3::new(x.x, x.y, 1.0);
    let xph = Vec3::new(xp.x, xp.y, 1.0);
    let lb = f * xh;
    let la = f.transpose() * xph;
    let s = xph.dot(&lb);
    (s / lb.x.hypot(lb.y), s / la.x.hypot(la.y))
}

/// Sum of squared signed epipolar distances in both images, in px².
pub fn epipolar_cost(f: &Fundamental, pairs: &[PointPair]) -> f64 {
    pairs
        .iter()
        .filter_map(|p| Some((p.x.to_pixel()?, p.x_prime.to_pixel()?)))
        .map(|(x, xp)| {
            let (r1, r2) = pair_residuals(f.matrix(), &x, &xp);
            r1 * r1 + r2 * r2
        })
        .filter(|v| v.is_finite())
        .sum()
}

/// Signed epipolar residuals as a function of the seven chart parameters.
pub struct EpipolarProblem {
    chart: RankTwoChart,
    pts: Vec<(Vector2<f64>, Vector2<f64>)>,
}

impl EpipolarProblem {
    pub fn new(f: &Mat3, pts: Vec<(Vector2<f64>, Vector2<f64>)>) -> Self {
        Self { chart: RankTwoChart::at(f), pts }
    }

    pub fn matrix(&self, p: &[f64]) -> Mat3 {
        self.chart.matrix(p)
    }
}

impl LeastSquares for EpipolarProblem {
    fn params(&self) -> usize {
        DOF
    }

    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let f = self.chart.matrix(p.as_slice());
        let mut r = DVector::zeros(2 * self.pts.len());
        for (i, (x, xp)) in self.pts.iter().enumerate() {
            let (r1, r2) = pair_residuals(&f, x, xp);
            r[2 * i] = r1;
            r[2 * i + 1] = r2;
        }
        r
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let ev = self.chart.eval(p.as_slice());
        let mut j = DMatrix::zeros(2 * self.pts.len(), DOF);
        for (i, (x, xp)) in self.pts.iter().enumerate() {
            let xh = Vec3::new(x.x, x.y, 1.0);
            let xph = Vec3::new(xp.x, xp.y, 1.0);
            let lb = ev.f * xh;
            let la = ev.f.transpose() * xph;
            let s = xph.dot(&lb);
            let nb = lb.x.hypot(lb.y);
            let na = la.x.hypot(la.y);
            for k in 0..DOF {
                let dlb = ev.df[k] * xh;
                let dla = ev.df[k].transpose() * xph;
                let ds = xph.dot(&dlb);
                let dnb = (lb.x * dlb.x + lb.y * dlb.y) / nb;
                let dna = (la.x * dla.x + la.y * dla.y) / na;
                j[(2 * i, k)] = ds / nb - s * dnb / (nb * nb);
                j[(2 * i + 1, k)] = ds / na - s * dna / (na * na);
            }
        }
        j
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub f: Fundamental,
    pub converged: bool,
    pub iterations: usize,
    /// Sum of squared epipolar distances (px²) before and after.
    pub initial_cost: f64,
    pub final_cost: f64,
}

/// Polishes `f` by minimizing the sum of squared epipolar distances over the
/// 7-dof rank-2 chart. Never returns a matrix with a higher cost.
pub fn lm_refine(f: &Fundamental, pairs: &[PointPair]) -> Result<LmOutcome, EstimateError> {
    let pts: Vec<(Vector2<f64>, Vector2<f64>)> =
        pairs.iter().filter_map(|p| Some((p.x.to_pixel()?, p.x_prime.to_pixel()?))).collect();
    if pts.len() < 7 {
        return Err(EstimateError::InsufficientPoints { needed: 7, got: pts.len() });
    }
    let norm = Normalization::new(&pts);
    let npts: Vec<_> = pts
        .iter()
        .map(|(a, b)| (Normalization::apply(&norm.ta, a), Normalization::apply(&norm.tb, b)))
        .collect();
    let fn0 = norm.to_normalized(f.matrix());
    let problem = EpipolarProblem::new(&(fn0 / fn0.norm()), npts);
    let out = lm::minimize(&problem, DVector::zeros(DOF), &LmConfig::default());
    let initial_cost = epipolar_cost(f, pairs);
    let candidate = Fundamental::from_matrix(norm.to_pixels(&problem.matrix(out.params.as_slice())));
    let s2 = norm.scale * norm.scale;
    debug_assert!(out.cost <= out.initial_cost * (1.0 + 1e-12) + 1e-300, "LM increased its objective");
    let (f_out, final_cost) = match candidate {
        Ok(c) => {
            let cost = epipolar_cost(&c, pairs);
            if cost <= initial_cost {
                (c, cost)
            } else {
                (*f, initial_cost)
            }
        }
        Err(_) => (*f, initial_cost),
    };
    tracing::trace!(
        iterations = out.iterations,
        normalized_cost = 2.0 * out.cost / s2,
        "lm_refine"
    );
    Ok(LmOutcome { f: f_out, converged: out.converged, iterations: out.iterations, initial_cost, final_cost })
}

// ---------------------------------------------------------------------------
// RANSAC driver

/// Outcome of one generated hypothesis.
type Generated = Option<(Fundamental, [usize; 3])>;

struct Driver<'a> {
    cfg: &'a RansacConfig,
    method: Method,
    points: Vec<PointPair>,
    ground_truth: Option<&'a [PointPair]>,
}

impl Driver<'_> {
    fn run<G>(&self, generate: G) -> Result<(Fundamental, RansacReport), EstimateError>
    where
        G: Fn(&mut ChaCha8Rng) -> Generated + Sync,
    {
        let cfg = self.cfg;
        let start = self.cfg.timing.then(Instant::now);
        let mut checkpoints = Vec::new();
        let mut valid = 0usize;
        // (hypothesis rank key, post-LM matrix) of the best rescored result
        let mut best_final: Option<(usize, f64, Fundamental)> = None;
        let mut done = 0usize;
        while done < cfg.max_hypotheses {
            let end = (done + cfg.checkpoint_interval).min(cfg.max_hypotheses);
            let window: Vec<Option<Hypothesis>> = (done..end)
                .into_par_iter()
                .map(|index| {
                    let mut rng = hypothesis_rng(cfg.seed, index);
                    let (f, source) = generate(&mut rng)?;
                    let (inlier_count, score) = score_points(&f, &self.points, cfg.inlier_threshold_px);
                    Some(Hypothesis { f, inlier_count, score, source, index })
                })
                .collect();
            valid += window.iter().flatten().count();
            let best = window.into_iter().flatten().min_by_key(rank_key);
            let (window_best_error, post_lm_error) = match &best {
                None => (f64::INFINITY, f64::INFINITY),
                Some(h) => {
                    let inl = inliers(&h.f, &self.points, cfg.inlier_threshold_px);
                    let polished = match lm_refine(&h.f, &inl) {
                        Ok(o) => o.f,
                        Err(_) => h.f,
                    };
                    let (n, e) = score_points(&polished, &self.points, cfg.inlier_threshold_px);
                    let better = match &best_final {
                        None => true,
                        Some((bn, be, _)) => (n, std::cmp::Reverse(OrdF64(e))) > (*bn, std::cmp::Reverse(OrdF64(*be))),
                    };
                    if better {
                        best_final = Some((n, e, polished));
                    }
                    let err = match self.ground_truth {
                        Some(gt) => mean_symmetric_distance(&polished, gt).unwrap_or(f64::INFINITY),
                        None => mean_symmetric_distance(&polished, &inl).unwrap_or(f64::INFINITY),
                    };
                    (h.score, err)
                }
            };
            checkpoints.push(Checkpoint {
                hypothesis_index: end,
                window_best_error,
                post_lm_error,
                lm_count: checkpoints.len() + 1,
                wall_ms: start.map(|s| s.elapsed().as_secs_f64() * 1e3),
            });
            done = end;
        }
        let report = RansacReport {
            method: self.method,
            lm_count: checkpoints.len(),
            checkpoints,
            precompute_cost_iters: self.method.precompute_cost(),
            hypotheses: cfg.max_hypotheses,
            valid_hypotheses: valid,
        };
        match best_final {
            Some((_, _, f)) => Ok((f, report)),
            None => Err(EstimateError::AllDegenerate),
        }
    }
}

fn hypothesis_from_lines(pairs: &[LinePair; 3]) -> Option<Fundamental> {
    let fit = fundamental_from_line_pairs_with(pairs, Concurrency::Unchecked).ok()?;
    fit.f.check_invariants().ok()?;
    Some(fit.f)
}

/// RANSAC over triples of barcode-matched line pairs. Sampling is uniform
/// over candidates with correlation ≥ `min_correlation`; the returned matrix
/// is the post-LM checkpoint result with the most surrogate inliers, so
/// ground truth only feeds the report.
pub fn ransac_fundamental(
    table: &MatchTable,
    cfg: &RansacConfig,
    ground_truth: Option<&[PointPair]>,
) -> Result<(Fundamental, RansacReport), EstimateError> {
    cfg.validate()?;
    let pool: Vec<usize> =
        (0..table.candidates.len()).filter(|&i| table.candidates[i].correlation >= cfg.min_correlation).collect();
    if pool.len() < 3 {
        return Err(EstimateError::NotEnoughCandidates(pool.len()));
    }
    let driver = Driver { cfg, method: Method::Barcode, points: surrogate_pairs(table, cfg.min_correlation), ground_truth };
    driver.run(|rng| {
        let picks = sample(rng, pool.len(), 3);
        let idx = [pool[picks.index(0)], pool[picks.index(1)], pool[picks.index(2)]];
        let c = idx.map(|i| &table.candidates[i]);
        if c[0].frame == c[1].frame || c[0].frame == c[2].frame || c[1].frame == c[2].frame {
            return None;
        }
        let pairs = c.map(|m| LinePair { l: m.line_a.line, l_prime: m.line_b.line });
        Some((hypothesis_from_lines(&pairs)?, idx))
    })
}

/// Which side of the direction from `e` to `c` the point `p` lies on.
fn side(e: &Pixel, c: &Pixel, p: &Pixel) -> f64 {
    (c - e).perp(&(p - e)).signum()
}

/// Third line pair for the baseline: silhouette tangents from the
/// hypothesized epipoles in another frame. `orientation` is +1 if the
/// pencils keep the side ordering, −1 if they flip it. `None` when either
/// epipole is inside (or on) the hull.
pub fn tangent_pair_through(
    e: &Pixel,
    e_prime: &Pixel,
    a: &FrameTangents,
    b: &FrameTangents,
    side_a: usize,
    orientation: f64,
) -> Option<LinePair> {
    let ha = a.hull.as_ref().filter(|h| !h.is_degenerate())?;
    let hb = b.hull.as_ref().filter(|h| !h.is_degenerate())?;
    let ta = ha.tangents_from(e)?;
    let tb = hb.tangents_from(e_prime)?;
    let (ca, cb) = (ha.centroid(), hb.centroid());
    let (_, la) = ta[side_a & 1];
    let sa = side(e, &ca, &ha.vertices[ta[side_a & 1].0]);
    let want = sa * orientation;
    let (_, lb) = *tb.iter().find(|(i, _)| side(e_prime, &cb, &hb.vertices[*i]) == want)?;
    Some(LinePair { l: la, l_prime: lb })
}

/// Baseline: two sampled tangent directions per image in one frame define the
/// epipoles; the third pair is the pair of tangents from those epipoles to
/// the silhouettes of a second frame. Scored and polished exactly like
/// [`ransac_fundamental`].
pub fn sinha_baseline(
    frames: &[usize],
    a: &[FrameTangents],
    b: &[FrameTangents],
    table: &MatchTable,
    cfg: &RansacConfig,
    ground_truth: Option<&[PointPair]>,
) -> Result<(Fundamental, RansacReport), EstimateError> {
    cfg.validate()?;
    let usable: Vec<usize> =
        frames.iter().copied().filter(|&f| f < a.len() && f < b.len() && a[f].is_usable() && b[f].is_usable()).collect();
    if usable.len() < 2 {
        return Err(EstimateError::NotEnoughCandidates(usable.len()));
    }
    let driver = Driver { cfg, method: Method::Sinha, points: surrogate_pairs(table, cfg.min_correlation), ground_truth };
    driver.run(|rng| {
        let k = usable.len();
        let t = usable[rng.gen_range(0..k)];
        let t2 = usable[(usable.iter().position(|&x| x == t).unwrap() + rng.gen_range(1..k)) % k];
        let (fa, fb) = (&a[t], &b[t]);
        let ia = sample(rng, fa.lines.len(), 2);
        let ib = sample(rng, fb.lines.len(), 2);
        let (l1, l2) = (&fa.lines[ia.index(0)], &fa.lines[ia.index(1)]);
        let (m1, m2) = (&fb.lines[ib.index(0)], &fb.lines[ib.index(1)]);
        let e = l1.line.intersect(&l2.line).to_pixel()?;
        let ep = m1.line.intersect(&m2.line).to_pixel()?;
        let ca = fa.hull.as_ref()?.centroid();
        let cb = fb.hull.as_ref()?.centroid();
        let orientation = side(&e, &ca, &l1.touch.pos) * side(&ep, &cb, &m1.touch.pos);
        if orientation == 0.0 {
            return None;
        }
        let s = rng.gen_range(0..2usize);
        let third = tangent_pair_through(&e, &ep, &a[t2], &b[t2], s, orientation)?;
        let pairs = [
            LinePair { l: l1.line, l_prime: m1.line },
            LinePair { l: l2.line, l_prime: m2.line },
            third,
        ];
        Some((hypothesis_from_lines(&pairs)?, [t, t2, s]))
    })
}
