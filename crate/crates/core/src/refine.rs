//! Alternating refinement of F: a gold-standard reprojection fit of the
//! point pairs, then a barcode-driven search over small rotations of each
//! epipolar line about its point.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix2, SMatrix, SVector, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barcode::{barcode_correlation, LineBarcoder, View};
use crate::chart::{ChartEval, RankTwoChart, DOF};
use crate::estimator::Normalization;
use crate::geometry::{
    compose_from_pencils, epipole_from_lines, fit_pencil_homography, mean_symmetric_distance, pencil_basis, skew,
    Fundamental, GeometryError, HomogLine, HomogPoint, LinePair, Mat3, PointPair, Vec3,
};
use crate::lm::LeastSquares;

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("need at least {needed} point pairs, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("need at least 3 line pairs, got {0}")]
    TooFewLines(usize),
    #[error("optimized lines are not concurrent (residual {residual:.3} px)")]
    DegeneratePencil { residual: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How angular deviation enters the line cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialPenalty {
    /// `|δ| / Θ` per image, traded off linearly against correlation.
    Linear,
    /// Zero inside `[−Θ, Θ]`: maximal correlation wins, ties go to the
    /// smaller total rotation.
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub theta_deg: f64,
    pub angle_samples: usize,
    pub max_iters: usize,
    pub epipole_tol_px: f64,
    /// Largest displacement (px, at the pivot point) of an optimized line
    /// when it is snapped onto the refitted pencil.
    pub pencil_tol_px: f64,
    pub penalty: SpatialPenalty,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            theta_deg: 0.2,
            angle_samples: 41,
            max_iters: 20,
            epipole_tol_px: 0.1,
            pencil_tol_px: 1.0,
            penalty: SpatialPenalty::Linear,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), RefineError> {
        if !(self.theta_deg > 0.0) {
            return Err(RefineError::InvalidConfig("theta_deg must be positive".into()));
        }
        if self.angle_samples % 2 == 0 {
            return Err(RefineError::InvalidConfig("angle_samples must be odd".into()));
        }
        if self.max_iters == 0 {
            return Err(RefineError::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }

    /// Offsets in degrees, symmetric about zero.
    pub fn offsets_deg(&self) -> Vec<f64> {
        let n = self.angle_samples;
        if n == 1 {
            return vec![0.0];
        }
        let h = (n - 1) / 2;
        (0..n).map(|k| self.theta_deg * (k as f64 - h as f64) / h as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineState {
    pub f: Fundamental,
    pub points: Vec<PointPair>,
    pub lines: Vec<LinePair>,
    pub iter: usize,
    pub epipole_shift_px: f64,
}

// ---------------------------------------------------------------------------
// Step one: joint LM over F and corrected points

/// Reprojection residuals of all points under the model
/// `x̂ = (u, v)`, `x̂' ∝ [e']ₓF (u, v, 1)ᵀ + ρ e'`, which satisfies the
/// epipolar constraint exactly for any parameters.
pub struct GoldStandard {
    chart: RankTwoChart,
    pts: Vec<(Vector2<f64>, Vector2<f64>)>,
}

type PointBlock = (SVector<f64, 4>, SMatrix<f64, 4, DOF>, SMatrix<f64, 4, 3>);

impl GoldStandard {
    pub fn new(f: &Mat3, pts: Vec<(Vector2<f64>, Vector2<f64>)>) -> Self {
        Self { chart: RankTwoChart::at(f), pts }
    }

    pub fn point_count(&self) -> usize {
        self.pts.len()
    }

    /// Initial parameter vector: chart origin, measured points in image A and
    /// the algebraically closest depth for image B.
    pub fn initial_params(&self) -> DVector<f64> {
        let ev = self.chart.eval(&[0.0; DOF]);
        let m = skew(&ev.e_prime) * ev.f;
        let mut p = DVector::zeros(DOF + 3 * self.pts.len());
        for (i, (xa, xb)) in self.pts.iter().enumerate() {
            let a = m * Vec3::new(xa.x, xa.y, 1.0);
            let xt = Vec3::new(xb.x, xb.y, 1.0);
            let ce = xt.cross(&ev.e_prime);
            let ca = xt.cross(&a);
            let rho = if ce.norm_squared() > 1e-300 { -ce.dot(&ca) / ce.norm_squared() } else { 0.0 };
            p[DOF + 3 * i] = xa.x;
            p[DOF + 3 * i + 1] = xa.y;
            p[DOF + 3 * i + 2] = rho;
        }
        p
    }

    fn corrected(ev: &ChartEval, q: &[f64]) -> (Vector2<f64>, Vec3) {
        let m = skew(&ev.e_prime) * ev.f;
        (Vector2::new(q[0], q[1]), m * Vec3::new(q[0], q[1], 1.0) + ev.e_prime * q[2])
    }

    fn block(&self, ev: &ChartEval, i: usize, q: &[f64]) -> PointBlock {
        let (xa, xb) = &self.pts[i];
        let m = skew(&ev.e_prime) * ev.f;
        let xt = Vec3::new(q[0], q[1], 1.0);
        let y = m * xt + ev.e_prime * q[2];
        let r = SVector::<f64, 4>::new(q[0] - xa.x, q[1] - xa.y, y.x / y.z - xb.x, y.y / y.z - xb.y);
        let dehomog = |dy: Vec3| ((dy.x * y.z - y.x * dy.z) / (y.z * y.z), (dy.y * y.z - y.y * dy.z) / (y.z * y.z));
        let mut ja = SMatrix::<f64, 4, DOF>::zeros();
        for k in 0..DOF {
            let dm = skew(&ev.de_prime[k]) * ev.f + skew(&ev.e_prime) * ev.df[k];
            let dy = dm * xt + ev.de_prime[k] * q[2];
            let (d0, d1) = dehomog(dy);
            ja[(2, k)] = d0;
            ja[(3, k)] = d1;
        }
        let mut jb = SMatrix::<f64, 4, 3>::zeros();
        jb[(0, 0)] = 1.0;
        jb[(1, 1)] = 1.0;
        for (c, dy) in [m.column(0).into_owned(), m.column(1).into_owned(), ev.e_prime].into_iter().enumerate() {
            let (d0, d1) = dehomog(dy);
            jb[(2, c)] = d0;
            jb[(3, c)] = d1;
        }
        (r, ja, jb)
    }

    fn cost(&self, p: &DVector<f64>) -> f64 {
        let ev = self.chart.eval(&p.as_slice()[..DOF]);
        (0..self.pts.len())
            .map(|i| {
                let q = &p.as_slice()[DOF + 3 * i..DOF + 3 * i + 3];
                let (xh, y) = Self::corrected(&ev, q);
                let (xa, xb) = &self.pts[i];
                (xh - xa).norm_squared() + (Vector2::new(y.x / y.z, y.y / y.z) - xb).norm_squared()
            })
            .sum::<f64>()
    }
}

impl LeastSquares for GoldStandard {
    fn params(&self) -> usize {
        DOF + 3 * self.pts.len()
    }

    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        let ev = self.chart.eval(&p.as_slice()[..DOF]);
        let mut r = DVector::zeros(4 * self.pts.len());
        for i in 0..self.pts.len() {
            let (ri, _, _) = self.block(&ev, i, &p.as_slice()[DOF + 3 * i..DOF + 3 * i + 3]);
            r.fixed_rows_mut::<4>(4 * i).copy_from(&ri);
        }
        r
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let ev = self.chart.eval(&p.as_slice()[..DOF]);
        let mut j = DMatrix::zeros(4 * self.pts.len(), self.params());
        for i in 0..self.pts.len() {
            let (_, ja, jb) = self.block(&ev, i, &p.as_slice()[DOF + 3 * i..DOF + 3 * i + 3]);
            j.view_mut((4 * i, 0), (4, DOF)).copy_from(&ja);
            j.view_mut((4 * i, DOF + 3 * i), (4, 3)).copy_from(&jb);
        }
        j
    }
}

/// LM on [`GoldStandard`] exploiting its block structure (Schur complement
/// on the model parameters). Returns the final parameters, the iteration
/// count and whether the gradient test was met.
fn solve_gold_standard(problem: &GoldStandard, mut p: DVector<f64>) -> (DVector<f64>, usize, bool) {
    const MAX_ITERS: usize = 100;
    const GRAD_TOL: f64 = 1e-10;
    let n = problem.point_count();
    let mut cost = problem.cost(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iters = 0;
    while iters < MAX_ITERS {
        let ev = problem.chart.eval(&p.as_slice()[..DOF]);
        let mut u = SMatrix::<f64, DOF, DOF>::zeros();
        let mut ga = SVector::<f64, DOF>::zeros();
        let mut vs = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        let mut gbs = Vec::with_capacity(n);
        let mut gmax = 0.0_f64;
        for i in 0..n {
            let (r, ja, jb) = problem.block(&ev, i, &p.as_slice()[DOF + 3 * i..DOF + 3 * i + 3]);
            u += ja.transpose() * ja;
            let gi = -(jb.transpose() * r);
            ga -= ja.transpose() * r;
            gmax = gmax.max(gi.amax());
            vs.push(jb.transpose() * jb);
            ws.push(ja.transpose() * jb);
            gbs.push(gi);
        }
        gmax = gmax.max(ga.amax());
        if gmax < GRAD_TOL {
            converged = true;
            break;
        }
        iters += 1;
        let mut accepted = false;
        for _ in 0..30 {
            let mut s = u;
            for k in 0..DOF {
                s[(k, k)] += lambda * u[(k, k)].max(1e-12);
            }
            let mut rhs = ga;
            let mut vinv = Vec::with_capacity(n);
            let mut ok = true;
            for i in 0..n {
                let mut v = vs[i];
                for k in 0..3 {
                    v[(k, k)] += lambda * v[(k, k)].max(1e-12);
                }
                let Some(vi) = v.try_inverse() else {
                    ok = false;
                    break;
                };
                let wv = ws[i] * vi;
                s -= wv * ws[i].transpose();
                rhs -= wv * gbs[i];
                vinv.push(vi);
            }
            let da = if ok { s.cholesky().map(|c| c.solve(&rhs)) } else { None };
            let Some(da) = da else {
                lambda *= 10.0;
                continue;
            };
            let mut cand = p.clone();
            for k in 0..DOF {
                cand[k] += da[k];
            }
            for i in 0..n {
                let db = vinv[i] * (gbs[i] - ws[i].transpose() * da);
                for k in 0..3 {
                    cand[DOF + 3 * i + k] += db[k];
                }
            }
            let step_norm = (&cand - &p).norm();
            let cc = problem.cost(&cand);
            if cc.is_finite() && cc < cost {
                p = cand;
                cost = cc;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                break;
            }
            if step_norm <= 1e-15 * (p.norm() + 1e-15) {
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            converged = true;
            break;
        }
    }
    (p, iters, converged)
}

#[derive(Debug, Clone)]
pub struct StepOneOutcome {
    pub state: RefineState,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Gold-standard fit of F and corrected points, then lines reset through
/// the corrected points: `l = Fᵀx̂'` in image A, `l' = F x̂` in image B.
pub fn step_one_reproject(state: &RefineState) -> Result<StepOneOutcome, RefineError> {
    let pts: Vec<(Vector2<f64>, Vector2<f64>)> =
        state.points.iter().filter_map(|p| Some((p.x.to_pixel()?, p.x_prime.to_pixel()?))).collect();
    if pts.len() < 7 {
        return Err(RefineError::InsufficientPoints { needed: 7, got: pts.len() });
    }
    let norm = Normalization::new(&pts);
    let npts: Vec<_> = pts
        .iter()
        .map(|(a, b)| (Normalization::apply(&norm.ta, a), Normalization::apply(&norm.tb, b)))
        .collect();
    let fn0 = norm.to_normalized(state.f.matrix());
    let problem = GoldStandard::new(&(fn0 / fn0.norm()), npts);
    let p0 = problem.initial_params();
    let s2 = norm.scale * norm.scale;
    let initial_cost = problem.cost(&p0) / s2;
    let (p, iterations, converged) = solve_gold_standard(&problem, p0);
    let final_cost = problem.cost(&p) / s2;

    let ev = problem.chart.eval(&p.as_slice()[..DOF]);
    let f = Fundamental::from_matrix(norm.to_pixels(&ev.f))?;
    let mut points = Vec::with_capacity(pts.len());
    let mut lines = Vec::with_capacity(pts.len());
    for i in 0..pts.len() {
        let (xh, y) = GoldStandard::corrected(&ev, &p.as_slice()[DOF + 3 * i..DOF + 3 * i + 3]);
        let xa = Normalization::unapply(&norm.ta, &xh);
        let xb = Normalization::unapply(&norm.tb, &Vector2::new(y.x / y.z, y.y / y.z));
        let pair = PointPair::from_pixels(xa, xb);
        lines.push(LinePair { l: f.line_in_a(&pair.x_prime), l_prime: f.line_in_b(&pair.x) });
        points.push(pair);
    }
    Ok(StepOneOutcome {
        state: RefineState { f, points, lines, iter: state.iter, epipole_shift_px: state.epipole_shift_px },
        initial_cost,
        final_cost,
        iterations,
        converged,
    })
}

// ---------------------------------------------------------------------------
// Step two: barcode line search

/// Winning grid cell for one line pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineChoice {
    pub index_a: usize,
    pub index_b: usize,
    pub cost: f64,
    pub correlation: f64,
}

/// Cost of every offset pair: `d_s(δ) + d_s(δ') − corr`, with a degenerate
/// correlation counted as zero.
pub fn line_costs(corr: &DMatrix<f64>, offsets_deg: &[f64], theta_deg: f64, penalty: SpatialPenalty) -> DMatrix<f64> {
    let ds = |d: f64| match penalty {
        SpatialPenalty::Linear => d.abs() / theta_deg,
        SpatialPenalty::Window => 0.0,
    };
    DMatrix::from_fn(corr.nrows(), corr.ncols(), |i, j| ds(offsets_deg[i]) + ds(offsets_deg[j]) - corr[(i, j)])
}

/// Cost ties within this margin are broken by total rotation.
pub const COST_TIE: f64 = 1e-9;

/// Argmin of the cost grid; ties go to the smaller `|δ| + |δ'|`, then to the
/// smaller indices.
pub fn select_offsets(costs: &DMatrix<f64>, offsets_deg: &[f64]) -> (usize, usize) {
    let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..costs.nrows() {
        for j in 0..costs.ncols() {
            if costs[(i, j)] > min + COST_TIE {
                continue;
            }
            let spread = offsets_deg[i].abs() + offsets_deg[j].abs();
            let better = match best {
                None => true,
                Some((bi, bj, bs)) => spread < bs - 1e-12 || ((spread - bs).abs() <= 1e-12 && (i, j) < (bi, bj)),
            };
            if better {
                best = Some((i, j, spread));
            }
        }
    }
    best.map(|(i, j, _)| (i, j)).unwrap_or((0, 0))
}

/// The line through `p` obtained by rotating `l` by `deg` degrees about `p`.
pub fn rotate_about(l: &HomogLine, p: &Vector2<f64>, deg: f64) -> HomogLine {
    HomogLine::through_pixel_at_angle(*p, l.direction_angle() + deg.to_radians())
}

/// Grid search for one line pair, returning the correlation grid too.
pub fn search_pair<B: LineBarcoder + ?Sized>(
    pair: &LinePair,
    points: &PointPair,
    barcodes: &B,
    cfg: &RefineConfig,
) -> (LineChoice, DMatrix<f64>) {
    let offsets = cfg.offsets_deg();
    let (xa, xb) = (points.x.to_pixel().unwrap(), points.x_prime.to_pixel().unwrap());
    let ba: Vec<_> = offsets.iter().map(|d| barcodes.barcode(View::A, &rotate_about(&pair.l, &xa, *d))).collect();
    let bb: Vec<_> = offsets.iter().map(|d| barcodes.barcode(View::B, &rotate_about(&pair.l_prime, &xb, *d))).collect();
    let corr = DMatrix::from_fn(offsets.len(), offsets.len(), |i, j| {
        barcode_correlation(&ba[i], &bb[j]).map(|c| c.value).unwrap_or(0.0)
    });
    let costs = line_costs(&corr, &offsets, cfg.theta_deg, cfg.penalty);
    let (i, j) = select_offsets(&costs, &offsets);
    (LineChoice { index_a: i, index_b: j, cost: costs[(i, j)], correlation: corr[(i, j)] }, corr)
}

#[derive(Debug, Clone)]
pub struct StepTwoOutcome {
    pub state: RefineState,
    pub choices: Vec<LineChoice>,
    pub mean_cost: f64,
}

/// Projection of `l` onto the pencil through `e`, in basis coordinates.
fn pencil_coords(l: &HomogLine, basis: (Vec3, Vec3)) -> Vector2<f64> {
    let n = l.0 / l.normal_norm();
    Vector2::new(n.dot(&basis.0), n.dot(&basis.1))
}

fn pencil_line(q: &Vector2<f64>, basis: (Vec3, Vec3)) -> HomogLine {
    HomogLine(basis.0 * q.x + basis.1 * q.y)
}

fn epipole_shift(a: &HomogPoint, b: &HomogPoint) -> f64 {
    match (a.to_pixel(), b.to_pixel()) {
        (Some(p), Some(q)) => (p - q).norm(),
        _ => f64::INFINITY,
    }
}

/// Rotates every line pair to its best grid cell, refits both epipoles and
/// the pencil homography, snaps the points onto the refitted pencils and
/// rebuilds F.
pub fn step_two_line_search<B: LineBarcoder + ?Sized>(
    state: &RefineState,
    barcodes: &B,
    cfg: &RefineConfig,
) -> Result<StepTwoOutcome, RefineError> {
    cfg.validate()?;
    if state.lines.len() < 3 || state.lines.len() != state.points.len() {
        return Err(RefineError::TooFewLines(state.lines.len().min(state.points.len())));
    }
    let offsets = cfg.offsets_deg();
    let choices: Vec<LineChoice> = state
        .lines
        .par_iter()
        .zip(state.points.par_iter())
        .map(|(l, p)| search_pair(l, p, barcodes, cfg).0)
        .collect();
    let mut la = Vec::with_capacity(choices.len());
    let mut lb = Vec::with_capacity(choices.len());
    for ((c, l), p) in choices.iter().zip(&state.lines).zip(&state.points) {
        la.push(rotate_about(&l.l, &p.x.to_pixel().unwrap(), offsets[c.index_a]));
        lb.push(rotate_about(&l.l_prime, &p.x_prime.to_pixel().unwrap(), offsets[c.index_b]));
    }
    let ea = epipole_from_lines(&la)?.point;
    let eb = epipole_from_lines(&lb)?.point;
    let basis_a = pencil_basis(&ea.0);
    let basis_b = pencil_basis(&eb.0);
    let qa: Vec<Vector2<f64>> = la.iter().map(|l| pencil_coords(l, basis_a)).collect();
    let qb: Vec<Vector2<f64>> = lb.iter().map(|l| pencil_coords(l, basis_b)).collect();
    let h: Matrix2<f64> = fit_pencil_homography(&qa, &qb)?;
    let f = Fundamental::from_matrix(compose_from_pencils(&ea.0, basis_a, basis_b, &h))?;

    let mut points = Vec::with_capacity(qa.len());
    let mut lines = Vec::with_capacity(qa.len());
    let mut residual = 0.0_f64;
    for (i, p) in state.points.iter().enumerate() {
        let line_a = pencil_line(&qa[i], basis_a);
        let line_b = pencil_line(&(h * qa[i]), basis_b);
        let (xa, xb) = (p.x.to_pixel().unwrap(), p.x_prime.to_pixel().unwrap());
        let pa = line_a.project(xa)?;
        let pb = line_b.project(xb)?;
        residual = residual.max((pa - xa).norm()).max((pb - xb).norm());
        points.push(PointPair::from_pixels(pa, pb));
        lines.push(LinePair { l: line_a, l_prime: line_b });
    }
    if residual > cfg.pencil_tol_px {
        return Err(RefineError::DegeneratePencil { residual });
    }
    let shift = epipole_shift(&f.epipole(), &state.f.epipole()).max(epipole_shift(&f.epipole_prime(), &state.f.epipole_prime()));
    let mean_cost = choices.iter().map(|c| c.cost).sum::<f64>() / choices.len() as f64;
    Ok(StepTwoOutcome {
        state: RefineState { f, points, lines, iter: state.iter + 1, epipole_shift_px: shift },
        choices,
        mean_cost,
    })
}

// ---------------------------------------------------------------------------
// Outer loop

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EpipoleConverged,
    MaxIters,
    DegeneratePencil,
    StepFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub epipole_shift_px: f64,
    pub mean_cl: f64,
    /// Mean symmetric epipolar distance on the input points.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub f: Fundamental,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceRow>,
}

impl RefineOutcome {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,epipole_shift_px,mean_Cl,objective\n");
        for r in &self.trace {
            let _ = writeln!(s, "{},{:.9},{:.9},{:.9}", r.iter, r.epipole_shift_px, r.mean_cl, r.objective);
        }
        s
    }
}

/// Alternates the two steps until the epipoles move less than
/// `epipole_tol_px` or `max_iters` outer iterations ran. Returns the iterate
/// with the lowest mean symmetric epipolar distance on the input points,
/// the starting matrix included.
pub fn refine<B: LineBarcoder + ?Sized>(
    f0: &Fundamental,
    points: &[PointPair],
    lines: &[LinePair],
    barcodes: &B,
    cfg: &RefineConfig,
) -> Result<RefineOutcome, RefineError> {
    cfg.validate()?;
    if points.len() < 7 {
        return Err(RefineError::InsufficientPoints { needed: 7, got: points.len() });
    }
    if lines.len() < 3 {
        return Err(RefineError::TooFewLines(lines.len()));
    }
    let objective = |f: &Fundamental| mean_symmetric_distance(f, points).unwrap_or(f64::INFINITY);
    let mut best = (objective(f0), *f0);
    let consider = |f: &Fundamental, best: &mut (f64, Fundamental)| {
        let o = objective(f);
        if o < best.0 {
            *best = (o, *f);
        }
        o
    };
    let mut state =
        RefineState { f: *f0, points: points.to_vec(), lines: lines.to_vec(), iter: 0, epipole_shift_px: f64::INFINITY };
    let mut trace = Vec::new();
    let mut termination = Termination::MaxIters;
    while state.iter < cfg.max_iters {
        let one = match step_one_reproject(&state) {
            Ok(o) => o,
            Err(e) => {
                tracing::warn!("step one failed: {e}");
                termination = Termination::StepFailed;
                break;
            }
        };
        consider(&one.state.f, &mut best);
        let two = match step_two_line_search(&one.state, barcodes, cfg) {
            Ok(t) => t,
            Err(RefineError::DegeneratePencil { residual }) => {
                tracing::warn!(residual, "optimized lines lost concurrency");
                termination = Termination::DegeneratePencil;
                state.iter += 1;
                break;
            }
            Err(e) => {
                tracing::warn!("step two failed: {e}");
                termination = Termination::StepFailed;
                state.iter += 1;
                break;
            }
        };
        let o = consider(&two.state.f, &mut best);
        state = two.state;
        trace.push(TraceRow { iter: state.iter, epipole_shift_px: state.epipole_shift_px, mean_cl: two.mean_cost, objective: o });
        if state.epipole_shift_px < cfg.epipole_tol_px {
            termination = Termination::EpipoleConverged;
            break;
        }
    }
    Ok(RefineOutcome { f: best.1, iterations: state.iter, termination, trace })
}
