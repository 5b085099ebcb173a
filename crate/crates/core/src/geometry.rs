//! Homogeneous 2-D primitives and fundamental-matrix construction.
//!
//! Convention throughout the crate: a point `x` in image A and its match `x'`
//! in image B satisfy `x'ᵀ F x = 0`. `F x` is the epipolar line of `x` in
//! image B, `Fᵀ x'` the epipolar line of `x'` in image A, `F e = 0` and
//! `Fᵀ e' = 0`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix2, Matrix3, Matrix3x4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Relative size below which a homogeneous coordinate counts as zero.
const IDEAL_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("camera centers coincide (zero baseline)")]
    DegenerateCameras,
    #[error("projection matrix is rank deficient")]
    RankDeficientCamera,
    #[error("line has a vanishing normal (a, b) = (0, 0)")]
    DegenerateLine,
    #[error("pencil vertex is ambiguous (two smallest singular values too close)")]
    IllConditioned,
    #[error("lines are not concurrent: residual {residual:.3} exceeds {tolerance:.3}")]
    NotConcurrent { residual: f64, tolerance: f64 },
    #[error("pencil is degenerate (coincident lines or singular line map)")]
    DegeneratePencil,
    #[error("matrix has rank below two")]
    DegenerateMatrix,
    #[error("need at least {needed} lines, got {got}")]
    TooFewLines { needed: usize, got: usize },
    #[error("cannot parse fundamental matrix: {0}")]
    Parse(String),
}

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A point of the projective plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogPoint(pub Vec3);

impl HomogPoint {
    pub fn new(x: f64, y: f64, w: f64) -> Self {
        Self(Vec3::new(x, y, w))
    }

    pub fn from_pixel(x: f64, y: f64) -> Self {
        Self(Vec3::new(x, y, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.0.z.abs() > IDEAL_EPS * self.0.norm()
    }

    /// Inhomogeneous pixel coordinates, `None` for ideal points.
    pub fn to_pixel(&self) -> Option<Vector2<f64>> {
        if self.is_finite() {
            Some(Vector2::new(self.0.x / self.0.z, self.0.y / self.0.z))
        } else {
            None
        }
    }

    /// Unit-norm representative with a deterministic sign.
    pub fn normalized(&self) -> Self {
        Self(sign_fixed(self.0.normalize()))
    }

    /// Scale-invariant equality.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.0.normalize().cross(&other.0.normalize()).norm() <= tol
    }
}

/// A line `{p : a·x + b·y + c·w = 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomogLine(pub Vec3);

impl HomogLine {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self(Vec3::new(a, b, c))
    }

    pub fn through(p: &HomogPoint, q: &HomogPoint) -> Self {
        Self(p.0.cross(&q.0))
    }

    /// Line through pixel `p` with direction angle `theta` (radians).
    pub fn through_pixel_at_angle(p: Vector2<f64>, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let n = Vector2::new(-s, c);
        Self(Vec3::new(n.x, n.y, -n.dot(&p)))
    }

    pub fn normal_norm(&self) -> f64 {
        self.0.x.hypot(self.0.y)
    }

    pub fn is_valid(&self) -> bool {
        self.normal_norm() > IDEAL_EPS * self.0.norm()
    }

    /// Scaled so that `(a, b)` has unit length; signed distances then come out in pixels.
    pub fn unit(&self) -> Result<Self, GeometryError> {
        let n = self.normal_norm();
        if !(n > IDEAL_EPS * self.0.norm()) {
            return Err(GeometryError::DegenerateLine);
        }
        Ok(Self(self.0 / n))
    }

    pub fn intersect(&self, other: &Self) -> HomogPoint {
        HomogPoint(self.0.cross(&other.0))
    }

    /// Signed pixel distance of a finite pixel to the line.
    pub fn signed_distance(&self, p: Vector2<f64>) -> Result<f64, GeometryError> {
        let n = self.normal_norm();
        if !(n > 0.0) {
            return Err(GeometryError::DegenerateLine);
        }
        Ok((self.0.x * p.x + self.0.y * p.y + self.0.z) / n)
    }

    pub fn distance(&self, p: Vector2<f64>) -> Result<f64, GeometryError> {
        self.signed_distance(p).map(f64::abs)
    }

    /// Direction angle of the line in `[0, π)`.
    pub fn direction_angle(&self) -> f64 {
        let a = (-self.0.x).atan2(self.0.y);
        a.rem_euclid(std::f64::consts::PI)
    }

    /// Orthogonal projection of a pixel onto the line.
    pub fn project(&self, p: Vector2<f64>) -> Result<Vector2<f64>, GeometryError> {
        let n = self.normal_norm();
        if !(n > 0.0) {
            return Err(GeometryError::DegenerateLine);
        }
        let d = self.signed_distance(p)?;
        Ok(p - Vector2::new(self.0.x, self.0.y) * (d / n))
    }

    /// Angle between the two lines, in `[0, π/2]`.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let a = Vector2::new(self.0.x, self.0.y);
        let b = Vector2::new(other.0.x, other.0.y);
        let c = (a.dot(&b).abs() / (a.norm() * b.norm())).min(1.0);
        c.acos()
    }

    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.0.normalize().cross(&other.0.normalize()).norm() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinePair {
    pub l: HomogLine,
    pub l_prime: HomogLine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub x: HomogPoint,
    pub x_prime: HomogPoint,
}

impl PointPair {
    pub fn from_pixels(a: Vector2<f64>, b: Vector2<f64>) -> Self {
        Self {
            x: HomogPoint::from_pixel(a.x, a.y),
            x_prime: HomogPoint::from_pixel(b.x, b.y),
        }
    }
}

/// Fix the sign of a vector so its first entry with magnitude above a small
/// threshold is positive.
fn sign_fixed(v: Vec3) -> Vec3 {
    let scale = v.amax();
    for i in 0..3 {
        if v[i].abs() > 1e-12 * scale {
            return if v[i] < 0.0 { -v } else { v };
        }
    }
    v
}

/// Unit Frobenius norm, first significant entry positive. Idempotent.
pub fn canonicalize(m: &Mat3) -> Mat3 {
    let n = m.norm();
    let mut out = if n > 0.0 && (n - 1.0).abs() > 8.0 * f64::EPSILON { m / n } else { *m };
    let scale = out.amax();
    // row-major scan
    for r in 0..3 {
        for c in 0..3 {
            let v = out[(r, c)];
            if v.abs() > 1e-12 * scale {
                if v < 0.0 {
                    out = -out;
                }
                // no negative zeros
                return out.map(|v| v + 0.0);
            }
        }
    }
    out
}

/// Unit right and left null vectors of a rank-2 matrix, as the largest cross
/// product of two rows (columns). Far more accurate than singular vectors
/// when the entries span several orders of magnitude, as in pixel units.
pub fn null_vectors(m: &Mat3) -> (Vec3, Vec3) {
    let widest = |v: [Vec3; 3]| {
        [v[0].cross(&v[1]), v[0].cross(&v[2]), v[1].cross(&v[2])]
            .into_iter()
            .max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared()))
            .unwrap()
            .normalize()
    };
    let rows = [0, 1, 2].map(|r| m.row(r).transpose());
    let cols = [0, 1, 2].map(|c| m.column(c).into_owned());
    (widest(rows), widest(cols))
}

/// A rank-2 fundamental matrix with its epipoles, in canonical scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fundamental {
    m: Mat3,
    e: HomogPoint,
    e_prime: HomogPoint,
}

impl Fundamental {
    /// Enforces rank two by truncating the smallest singular value, then
    /// canonicalizes scale and sign.
    pub fn from_matrix(m: Mat3) -> Result<Self, GeometryError> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::DegenerateMatrix);
        }
        let svd = m.svd(true, true);
        let s = svd.singular_values;
        if !(s[0] > 0.0) || s[1] <= 1e-12 * s[0] {
            return Err(GeometryError::DegenerateMatrix);
        }
        let u = svd.u.unwrap();
        let vt = svd.v_t.unwrap();
        // an exactly rank-2 input is kept verbatim so round trips are lossless
        let trunc = if s[2] <= 4.0 * f64::EPSILON * s[0] {
            m
        } else {
            u * Mat3::from_diagonal(&Vec3::new(s[0], s[1], 0.0)) * vt
        };
        let m = canonicalize(&trunc);
        let (e, e_prime) = null_vectors(&m);
        Ok(Self { m, e: HomogPoint(sign_fixed(e)), e_prime: HomogPoint(sign_fixed(e_prime)) })
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    /// Epipole in image A (`F e = 0`).
    pub fn epipole(&self) -> HomogPoint {
        self.e
    }

    /// Epipole in image B (`Fᵀ e' = 0`).
    pub fn epipole_prime(&self) -> HomogPoint {
        self.e_prime
    }

    /// Swaps the roles of the two images.
    pub fn transposed(&self) -> Self {
        Self {
            m: canonicalize(&self.m.transpose()),
            e: self.e_prime,
            e_prime: self.e,
        }
    }

    /// Epipolar line in image B of a point in image A.
    pub fn line_in_b(&self, x: &HomogPoint) -> HomogLine {
        HomogLine(self.m * x.0)
    }

    /// Epipolar line in image A of a point in image B.
    pub fn line_in_a(&self, x_prime: &HomogPoint) -> HomogLine {
        HomogLine(self.m.transpose() * x_prime.0)
    }

    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        (self.m - other.m).norm()
    }

    pub fn smallest_singular_value(&self) -> f64 {
        self.m.singular_values().min()
    }

    /// Largest of `|F e|` and `|Fᵀ e'|` with unit-norm epipoles.
    pub fn null_residual(&self) -> f64 {
        let r1 = (self.m * self.e.0.normalize()).norm();
        let r2 = (self.m.transpose() * self.e_prime.0.normalize()).norm();
        r1.max(r2)
    }

    pub fn row_major(&self) -> [f64; 9] {
        let m = &self.m;
        [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ]
    }

    pub fn from_row_major(v: &[f64; 9]) -> Result<Self, GeometryError> {
        Self::from_matrix(Mat3::from_row_slice(v))
    }

    /// Checks rank, null vectors and canonical form; returns a description of
    /// the first violated invariant.
    pub fn check_invariants(&self) -> Result<(), String> {
        let s = self.smallest_singular_value();
        if s >= 1e-9 {
            return Err(format!("smallest singular value {s:e}"));
        }
        let r = self.null_residual();
        if r >= 1e-9 {
            return Err(format!("null-vector residual {r:e}"));
        }
        if (self.m.norm() - 1.0).abs() > 1e-12 {
            return Err(format!("frobenius norm {}", self.m.norm()));
        }
        if canonicalize(&self.m) != self.m {
            return Err("not in canonical form".into());
        }
        Ok(())
    }
}

impl fmt::Display for Fundamental {
    /// `F = a b c / d e f / g h i`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.row_major();
        write!(
            f,
            "F = {:e} {:e} {:e} / {:e} {:e} {:e} / {:e} {:e} {:e}",
            v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]
        )
    }
}

impl FromStr for Fundamental {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let body = s.trim();
        let body = body
            .strip_prefix("F")
            .map(|r| r.trim_start())
            .and_then(|r| r.strip_prefix('='))
            .unwrap_or(body);
        let rows: Vec<&str> = body.split('/').collect();
        if rows.len() != 3 {
            return Err(GeometryError::Parse(format!("expected 3 rows, got {}", rows.len())));
        }
        let mut v = [0.0; 9];
        for (r, row) in rows.iter().enumerate() {
            let nums: Vec<&str> = row.split_whitespace().collect();
            if nums.len() != 3 {
                return Err(GeometryError::Parse(format!("row {r} has {} entries", nums.len())));
            }
            for (c, n) in nums.iter().enumerate() {
                v[r * 3 + c] = n
                    .parse()
                    .map_err(|_| GeometryError::Parse(format!("bad number '{n}'")))?;
            }
        }
        Self::from_row_major(&v)
    }
}

/// JSON form: 9 row-major floats plus both epipoles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FundamentalJson {
    pub f: [f64; 9],
    pub epipole: [f64; 3],
    pub epipole_prime: [f64; 3],
}

impl From<&Fundamental> for FundamentalJson {
    fn from(f: &Fundamental) -> Self {
        let e = f.epipole().0;
        let ep = f.epipole_prime().0;
        Self {
            f: f.row_major(),
            epipole: [e.x, e.y, e.z],
            epipole_prime: [ep.x, ep.y, ep.z],
        }
    }
}

impl TryFrom<&FundamentalJson> for Fundamental {
    type Error = GeometryError;

    fn try_from(j: &FundamentalJson) -> Result<Self, Self::Error> {
        Fundamental::from_row_major(&j.f)
    }
}

impl Serialize for Fundamental {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        FundamentalJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Fundamental {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let j = FundamentalJson::deserialize(d)?;
        Fundamental::try_from(&j).map_err(serde::de::Error::custom)
    }
}

/// Camera center as the right null vector of a 3×4 projection (cofactor form).
pub fn camera_center(p: &Matrix3x4<f64>) -> nalgebra::Vector4<f64> {
    let minor = |skip: usize| {
        let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
        Mat3::from_fn(|r, c| p[(r, cols[c])]).determinant()
    };
    nalgebra::Vector4::new(minor(0), -minor(1), minor(2), -minor(3))
}

/// Ground-truth fundamental matrix of a camera pair, `F = [e']ₓ P_B P_A⁺`.
pub fn fundamental_from_cameras(
    pa: &Matrix3x4<f64>,
    pb: &Matrix3x4<f64>,
) -> Result<Fundamental, GeometryError> {
    let gram_a = pa * pa.transpose();
    let gram_b = pb * pb.transpose();
    let inv_a = gram_a.try_inverse().ok_or(GeometryError::RankDeficientCamera)?;
    if gram_b.determinant().abs() <= 1e-12 * gram_b.norm().powi(3) {
        return Err(GeometryError::RankDeficientCamera);
    }
    let c = camera_center(pa);
    let e_prime = pb * c;
    if e_prime.norm() <= 1e-10 * pb.norm() * c.norm() {
        return Err(GeometryError::DegenerateCameras);
    }
    let pa_pinv = pa.transpose() * inv_a;
    let f = skew(&e_prime) * pb * pa_pinv;
    Fundamental::from_matrix(f).map_err(|_| GeometryError::DegenerateCameras)
}

/// Mean of the two point-to-epipolar-line distances, in pixels.
pub fn symmetric_epipolar_distance(f: &Fundamental, pair: &PointPair) -> Result<f64, GeometryError> {
    let x = pair.x.to_pixel().ok_or(GeometryError::DegenerateLine)?;
    let xp = pair.x_prime.to_pixel().ok_or(GeometryError::DegenerateLine)?;
    let xh = Vec3::new(x.x, x.y, 1.0);
    let xph = Vec3::new(xp.x, xp.y, 1.0);
    let lb = f.matrix() * xh;
    let la = f.matrix().transpose() * xph;
    let nb = lb.x.hypot(lb.y);
    let na = la.x.hypot(la.y);
    if !(nb > 0.0) || !(na > 0.0) {
        return Err(GeometryError::DegenerateLine);
    }
    let s = xph.dot(&lb);
    Ok(0.5 * (s.abs() / nb + s.abs() / na))
}

/// Mean symmetric epipolar distance over a set of pairs; pairs with a
/// degenerate epipolar line are skipped. `None` when nothing is measurable.
pub fn mean_symmetric_distance(f: &Fundamental, pairs: &[PointPair]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for p in pairs {
        if let Ok(d) = symmetric_epipolar_distance(f, p) {
            sum += d;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Least-squares common point of a set of lines.
#[derive(Debug, Clone)]
pub struct EpipoleFit {
    pub point: HomogPoint,
    /// Per-line residual: pixel distance for a finite point, sine of the
    /// direction mismatch for an ideal point.
    pub residuals: Vec<f64>,
}

impl EpipoleFit {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }
}

pub fn epipole_from_lines(lines: &[HomogLine]) -> Result<EpipoleFit, GeometryError> {
    if lines.len() < 2 {
        return Err(GeometryError::TooFewLines { needed: 2, got: lines.len() });
    }
    let units: Vec<HomogLine> = lines.iter().map(|l| l.unit()).collect::<Result<_, _>>()?;
    let rows = units.len().max(3);
    let mut a = DMatrix::<f64>::zeros(rows, 3);
    for (i, l) in units.iter().enumerate() {
        a[(i, 0)] = l.0.x;
        a[(i, 1)] = l.0.y;
        a[(i, 2)] = l.0.z;
    }
    let svd = a.svd(false, true);
    let s = &svd.singular_values;
    let vt = svd.v_t.as_ref().unwrap();
    if s[1] - s[2] < 1e-12 * s[0] {
        return Err(GeometryError::IllConditioned);
    }
    let v = Vec3::new(vt[(2, 0)], vt[(2, 1)], vt[(2, 2)]);
    let point = HomogPoint(v).normalized();
    Ok(EpipoleFit {
        residuals: units.iter().map(|l| point_line_residual(&point, l)).collect(),
        point,
    })
}

/// Distance (px) from a point to a unit line, or the sine residual for ideal points.
pub fn point_line_residual(p: &HomogPoint, unit_line: &HomogLine) -> f64 {
    match p.to_pixel() {
        Some(px) => (unit_line.0.x * px.x + unit_line.0.y * px.y + unit_line.0.z).abs(),
        None => {
            let d = p.0.normalize();
            (unit_line.0.x * d.x + unit_line.0.y * d.y).abs()
        }
    }
}

/// Deterministic orthonormal basis `(u1, u2)` of the plane orthogonal to `e`,
/// right-handed with `e` (`u1 × u2 = ê`).
pub fn pencil_basis(e: &Vec3) -> (Vec3, Vec3) {
    let en = e.normalize();
    let axis = if en.x.abs() <= en.y.abs() && en.x.abs() <= en.z.abs() {
        Vec3::x()
    } else if en.y.abs() <= en.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let u1 = (axis - en * axis.dot(&en)).normalize();
    let u2 = en.cross(&u1);
    (u1, u2)
}

/// Builds `F` from two epipoles and the 1-D line homography `h` between the
/// pencils, expressed in the bases `(ua1, ua2)` and `(ub1, ub2)`:
/// `F = U_B h U_Aᵀ [e]ₓ`.
pub(crate) fn compose_from_pencils(
    e: &Vec3,
    ua: (Vec3, Vec3),
    ub: (Vec3, Vec3),
    h: &Matrix2<f64>,
) -> Mat3 {
    let en = e.normalize();
    let sa = nalgebra::Matrix3x2::from_columns(&[ua.0, ua.1]);
    let sb = nalgebra::Matrix3x2::from_columns(&[ub.0, ub.1]);
    sb * h * sa.transpose() * skew(&en)
}

/// Fits a 1-D projective map `q'ᵢ ∝ H qᵢ` (least squares for more than three
/// correspondences).
pub fn fit_pencil_homography(
    src: &[Vector2<f64>],
    dst: &[Vector2<f64>],
) -> Result<Matrix2<f64>, GeometryError> {
    if src.len() < 3 || src.len() != dst.len() {
        return Err(GeometryError::TooFewLines { needed: 3, got: src.len().min(dst.len()) });
    }
    let rows = src.len().max(4);
    let mut a = DMatrix::<f64>::zeros(rows, 4);
    for (i, (q, qp)) in src.iter().zip(dst).enumerate() {
        let q = q.normalize();
        let qp = qp.normalize();
        a[(i, 0)] = -qp.y * q.x;
        a[(i, 1)] = -qp.y * q.y;
        a[(i, 2)] = qp.x * q.x;
        a[(i, 3)] = qp.x * q.y;
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.as_ref().unwrap();
    let h = Matrix2::new(vt[(3, 0)], vt[(3, 1)], vt[(3, 2)], vt[(3, 3)]);
    let det = h.determinant();
    if !(det.abs() > 1e-10 * h.norm_squared()) {
        return Err(GeometryError::DegeneratePencil);
    }
    Ok(h)
}

/// How strictly the input lines of each image must share a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Concurrency {
    /// Max per-line residual in pixels (sine residual of `tol_px * 1e-6` for ideal points).
    Strict { tol_px: f64 },
    /// Accept the least-squares vertex as is.
    Unchecked,
}

impl Default for Concurrency {
    fn default() -> Self {
        Concurrency::Strict { tol_px: 1.0 }
    }
}

/// Result of [`fundamental_from_line_pairs_with`].
#[derive(Debug, Clone)]
pub struct LinePairFit {
    pub f: Fundamental,
    /// Largest angle (radians) between a mapped input line and its partner.
    pub transfer_residual: f64,
    pub residual_a: f64,
    pub residual_b: f64,
}

fn check_concurrency(fit: &EpipoleFit, mode: Concurrency) -> Result<(), GeometryError> {
    if let Concurrency::Strict { tol_px } = mode {
        let tol = if fit.point.is_finite() { tol_px } else { tol_px * 1e-6 };
        let r = fit.max_residual();
        if r > tol {
            return Err(GeometryError::NotConcurrent { residual: r, tolerance: tol });
        }
    }
    Ok(())
}

fn pencil_coords(lines: &[HomogLine], basis: (Vec3, Vec3)) -> Result<Vec<Vector2<f64>>, GeometryError> {
    let q: Vec<Vector2<f64>> = lines
        .iter()
        .map(|l| {
            let n = l.0.normalize();
            Vector2::new(n.dot(&basis.0), n.dot(&basis.1))
        })
        .collect();
    for i in 0..q.len() {
        if q[i].norm() < 1e-12 {
            return Err(GeometryError::DegeneratePencil);
        }
        for j in 0..i {
            let c = q[i].perp(&q[j]).abs() / (q[i].norm() * q[j].norm());
            if c < 1e-9 {
                return Err(GeometryError::DegeneratePencil);
            }
        }
    }
    Ok(q)
}

/// Fundamental matrix from three corresponding epipolar line pairs, with the
/// default strict concurrency check.
pub fn fundamental_from_line_pairs(pairs: &[LinePair; 3]) -> Result<Fundamental, GeometryError> {
    fundamental_from_line_pairs_with(pairs, Concurrency::default()).map(|fit| fit.f)
}

/// Fundamental matrix from `n ≥ 3` corresponding epipolar line pairs: fit both
/// pencil vertices, express each line in its pencil, fit the 1-D line
/// homography and lift it to `F = A [e]ₓ`.
pub fn fundamental_from_line_pairs_with(
    pairs: &[LinePair],
    mode: Concurrency,
) -> Result<LinePairFit, GeometryError> {
    if pairs.len() < 3 {
        return Err(GeometryError::TooFewLines { needed: 3, got: pairs.len() });
    }
    let la: Vec<HomogLine> = pairs.iter().map(|p| p.l).collect();
    let lb: Vec<HomogLine> = pairs.iter().map(|p| p.l_prime).collect();
    let fit_a = epipole_from_lines(&la).map_err(degenerate_as_pencil)?;
    let fit_b = epipole_from_lines(&lb).map_err(degenerate_as_pencil)?;
    pencil_coords(&la, pencil_basis(&fit_a.point.0))?;
    pencil_coords(&lb, pencil_basis(&fit_b.point.0))?;
    check_concurrency(&fit_a, mode)?;
    check_concurrency(&fit_b, mode)?;

    // refit in frames centred on the epipoles, where pencil lines are (a, b, ~0)
    let ta = centering(&fit_a.point);
    let tb = centering(&fit_b.point);
    let na: Vec<HomogLine> = la.iter().map(|l| HomogLine(ta.line * l.0)).collect();
    let nb: Vec<HomogLine> = lb.iter().map(|l| HomogLine(tb.line * l.0)).collect();
    let ea = epipole_from_lines(&na).map_err(degenerate_as_pencil)?.point;
    let eb = epipole_from_lines(&nb).map_err(degenerate_as_pencil)?.point;
    let basis_a = pencil_basis(&ea.0);
    let basis_b = pencil_basis(&eb.0);
    let qa = pencil_coords(&na, basis_a)?;
    let qb = pencil_coords(&nb, basis_b)?;
    let h = fit_pencil_homography(&qa, &qb)?;
    let m = tb.point.transpose() * compose_from_pencils(&ea.0, basis_a, basis_b, &h) * ta.point;
    let f = Fundamental::from_matrix(m).map_err(|_| GeometryError::DegeneratePencil)?;

    let sb = nalgebra::Matrix3x2::from_columns(&[basis_b.0, basis_b.1]);
    let transfer_residual = qa
        .iter()
        .zip(&lb)
        .map(|(q, l)| HomogLine(tb.point.transpose() * (sb * (h * q))).angle_to(l))
        .fold(0.0, f64::max);
    Ok(LinePairFit {
        f,
        transfer_residual,
        residual_a: fit_a.max_residual(),
        residual_b: fit_b.max_residual(),
    })
}

/// Translation taking a finite epipole to the origin: `point` acts on
/// points, `line = point⁻ᵀ` on lines. Identity for far or ideal epipoles.
struct Centering {
    point: Mat3,
    line: Mat3,
}

fn centering(e: &HomogPoint) -> Centering {
    match e.to_pixel().filter(|p| p.norm() < 1e6) {
        Some(p) => Centering {
            point: Mat3::new(1.0, 0.0, -p.x, 0.0, 1.0, -p.y, 0.0, 0.0, 1.0),
            line: Mat3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, p.x, p.y, 1.0),
        },
        None => Centering { point: Mat3::identity(), line: Mat3::identity() },
    }
}

fn degenerate_as_pencil(e: GeometryError) -> GeometryError {
    match e {
        GeometryError::IllConditioned => GeometryError::DegeneratePencil,
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rectified() -> Fundamental {
        Fundamental::from_matrix(Mat3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)).unwrap()
    }

    #[test]
    fn pure_translation_gives_skew_of_baseline() {
        let pa = Matrix3x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        let mut pb = pa;
        pb[(0, 3)] = 1.0;
        let f = fundamental_from_cameras(&pa, &pb).unwrap();
        let expected = canonicalize(&skew(&Vec3::new(1.0, 0.0, 0.0)));
        assert!((f.matrix() - expected).norm() < 1e-12);
        f.check_invariants().unwrap();
    }

    #[test]
    fn identical_cameras_are_degenerate() {
        let pa = Matrix3x4::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0);
        assert_eq!(fundamental_from_cameras(&pa, &pa), Err(GeometryError::DegenerateCameras));
    }

    #[test]
    fn symmetric_distance_on_rectified_pair() {
        let f = rectified();
        let same_row = PointPair::from_pixels(Vector2::new(3.0, 5.0), Vector2::new(9.0, 5.0));
        assert_eq!(symmetric_epipolar_distance(&f, &same_row).unwrap(), 0.0);
        let off = PointPair::from_pixels(Vector2::new(3.0, 5.0), Vector2::new(9.0, 7.0));
        assert!((symmetric_epipolar_distance(&f, &off).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_distance_rejects_epipole_point() {
        // x at the epipole of a rectified pair is ideal, so use a matrix whose
        // epipole is finite: F x = 0 for x = (0, 0, 1).
        let m = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let f = Fundamental::from_matrix(m).unwrap();
        let pair = PointPair::from_pixels(Vector2::new(0.0, 0.0), Vector2::new(4.0, 1.0));
        assert_eq!(symmetric_epipolar_distance(&f, &pair), Err(GeometryError::DegenerateLine));
    }

    #[test]
    fn epipole_of_concurrent_and_parallel_lines() {
        let fit = epipole_from_lines(&[
            HomogLine::new(1.0, 0.0, 0.0),
            HomogLine::new(0.0, 1.0, 0.0),
            HomogLine::new(1.0, 1.0, 0.0),
        ])
        .unwrap();
        assert!(fit.point.approx_eq(&HomogPoint::new(0.0, 0.0, 1.0), 1e-12));
        assert!(fit.max_residual() < 1e-12);

        let fit = epipole_from_lines(&[
            HomogLine::new(0.0, 1.0, 0.0),
            HomogLine::new(0.0, 1.0, -1.0),
            HomogLine::new(0.0, 1.0, -2.0),
        ])
        .unwrap();
        assert!(fit.point.approx_eq(&HomogPoint::new(1.0, 0.0, 0.0), 1e-12));
        assert!(!fit.point.is_finite());
    }

    #[test]
    fn epipole_needs_two_lines() {
        assert!(matches!(
            epipole_from_lines(&[HomogLine::new(1.0, 0.0, 0.0)]),
            Err(GeometryError::TooFewLines { .. })
        ));
    }

    #[test]
    fn epipole_ambiguous_for_identical_lines() {
        let l = HomogLine::new(1.0, 2.0, 3.0);
        assert_eq!(epipole_from_lines(&[l, l, l]).unwrap_err(), GeometryError::IllConditioned);
    }

    #[test]
    fn epipole_from_slightly_rotated_lines() {
        let e = Vector2::new(100.0, 50.0);
        let base = [0.3_f64, 1.1, 2.0];
        let tilt = 0.1_f64.to_radians();
        // rotate each line about a point 200 px away from e along the line
        let lines: Vec<HomogLine> = base
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let dir = Vector2::new(a.cos(), a.sin());
                let pivot = e + dir * 200.0;
                let s = if i % 2 == 0 { tilt } else { -tilt };
                HomogLine::through_pixel_at_angle(pivot, a + s)
            })
            .collect();
        let fit = epipole_from_lines(&lines).unwrap();
        let p = fit.point.to_pixel().unwrap();
        assert!((p - e).norm() < 0.5, "{p:?}");
    }

    #[test]
    fn identical_lines_make_degenerate_pencil() {
        let l1 = HomogLine::new(1.0, 0.0, -5.0);
        let l2 = HomogLine::new(0.0, 1.0, -5.0);
        let pairs = [
            LinePair { l: l1, l_prime: l1 },
            LinePair { l: l1, l_prime: l2 },
            LinePair { l: l2, l_prime: HomogLine::new(1.0, 1.0, -10.0) },
        ];
        assert_eq!(fundamental_from_line_pairs(&pairs), Err(GeometryError::DegeneratePencil));
    }

    #[test]
    fn canonicalize_is_idempotent() {
        let m = Mat3::new(-3.0, 1.0, 2.0, 0.5, -7.0, 1.0, 2.0, 2.0, 0.1);
        let c = canonicalize(&m);
        assert_eq!(canonicalize(&c), c);
        assert!(c[(0, 0)] > 0.0);
    }

    #[test]
    fn text_format_round_trip() {
        let f = rectified();
        let parsed: Fundamental = f.to_string().parse().unwrap();
        assert!(parsed.frobenius_distance(&f) < 1e-12);
        let parsed: Fundamental = "F = 0 0 0 / 0 0 -1 / 0 1 0".parse().unwrap();
        assert!(parsed.frobenius_distance(&f) < 1e-15);
        assert!("F = 1 2 / 3 4 5 / 6 7 8".parse::<Fundamental>().is_err());
    }

    #[test]
    fn json_round_trip() {
        let f = rectified();
        let s = serde_json::to_string(&f).unwrap();
        let back: Fundamental = serde_json::from_str(&s).unwrap();
        assert_eq!(back.row_major(), f.row_major());
    }
}
