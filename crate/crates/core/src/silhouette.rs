//! Binary masks, convex hulls of silhouettes and their tangent envelopes.
//!
//! Pixel `(col, row)` has its center at coordinates `(col, row)`.

use nalgebra::Vector2;
use thiserror::Error;

use crate::geometry::HomogLine;

pub type Pixel = Vector2<f64>;

/// Grayscale values at or above this count as foreground.
pub const FOREGROUND_THRESHOLD: u8 = 128;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SilhouetteError {
    #[error("malformed PGM at byte {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("hull has fewer than three vertices")]
    DegenerateHull,
    #[error("angle step {0}° does not divide 360°")]
    BadAngleStep(f64),
}

/// One binary frame of a stationary camera.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    pub frame_index: usize,
}

impl Mask {
    pub fn new(width: usize, height: usize, frame_index: usize) -> Self {
        Self { width, height, bits: vec![false; width * height], frame_index }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>, frame_index: usize) -> Self {
        assert_eq!(bits.len(), width * height, "bits length must equal width × height");
        Self { width, height, bits, frame_index }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Foreground in-bounds test that treats out-of-image as background.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && self.get(x as usize, y as usize)
    }

    /// Foreground pixels with a background (or out-of-image) 4-neighbor.
    pub fn boundary_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(x, y) {
                    continue;
                }
                let (xi, yi) = (x as i64, y as i64);
                if !self.get_signed(xi - 1, yi)
                    || !self.get_signed(xi + 1, yi)
                    || !self.get_signed(xi, yi - 1)
                    || !self.get_signed(xi, yi + 1)
                {
                    out.push((x, y));
                }
            }
        }
        out
    }

    /// Binary PGM (P5) with values 0 / 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.bits.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }

    pub fn from_pgm(bytes: &[u8], frame_index: usize) -> Result<Self, SilhouetteError> {
        load_mask(bytes, frame_index)
    }
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmCursor<'_> {
    fn err(&self, message: impl Into<String>) -> SilhouetteError {
        SilhouetteError::Format { offset: self.pos, message: message.into() }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize, SilhouetteError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a decimal number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| SilhouetteError::Format { offset: start, message: "number out of range".into() })
    }
}

/// Parses a binary PGM; a pixel is foreground iff its value is ≥ 128.
pub fn load_mask(bytes: &[u8], frame_index: usize) -> Result<Mask, SilhouetteError> {
    let mut cur = PgmCursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(cur.err("missing P5 magic"));
    }
    cur.pos = 2;
    let width = cur.number()?;
    let height = cur.number()?;
    let maxval = cur.number()?;
    if maxval == 0 || maxval > 255 {
        return Err(cur.err(format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    match bytes.get(cur.pos) {
        Some(c) if c.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected a single whitespace before the raster")),
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| cur.err("image dimensions overflow"))?;
    let data = &bytes[cur.pos..];
    if data.len() < n {
        return Err(SilhouetteError::Format {
            offset: bytes.len(),
            message: format!("truncated raster: expected {n} bytes, found {}", data.len()),
        });
    }
    let bits = data[..n].iter().map(|&v| v >= FOREGROUND_THRESHOLD).collect();
    Ok(Mask { width, height, bits, frame_index })
}

/// Convex hull of a silhouette, counter-clockwise in image coordinates
/// (positive shoelace area), without collinear vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexHull {
    pub vertices: Vec<Pixel>,
}

fn cross(o: &Pixel, a: &Pixel, b: &Pixel) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

impl ConvexHull {
    /// Andrew's monotone chain over arbitrary points.
    pub fn from_points(mut pts: Vec<Pixel>) -> Option<Self> {
        if pts.is_empty() {
            return None;
        }
        pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        pts.dedup();
        if pts.len() < 3 {
            return Some(Self { vertices: pts });
        }
        let mut lower: Vec<Pixel> = Vec::new();
        for p in &pts {
            while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
                lower.pop();
            }
            lower.push(*p);
        }
        let mut upper: Vec<Pixel> = Vec::new();
        for p in pts.iter().rev() {
            while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
                upper.pop();
            }
            upper.push(*p);
        }
        lower.pop();
        upper.pop();
        lower.extend(upper);
        Some(Self { vertices: lower })
    }

    pub fn is_degenerate(&self) -> bool {
        self.vertices.len() < 3
    }

    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        if n < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            let a = &self.vertices[i];
            let b = &self.vertices[(i + 1) % n];
            s += a.x * b.y - a.y * b.x;
        }
        0.5 * s
    }

    /// Area centroid; vertex mean for degenerate hulls.
    pub fn centroid(&self) -> Pixel {
        let n = self.vertices.len();
        let area = self.area();
        if n < 3 || area <= 0.0 {
            return self.vertices.iter().sum::<Pixel>() / n as f64;
        }
        let mut c = Pixel::zeros();
        for i in 0..n {
            let a = &self.vertices[i];
            let b = &self.vertices[(i + 1) % n];
            let w = a.x * b.y - a.y * b.x;
            c += (a + b) * w;
        }
        c / (6.0 * area)
    }

    /// True if `p` is inside or within `tol` of the boundary.
    pub fn contains(&self, p: &Pixel, tol: f64) -> bool {
        let n = self.vertices.len();
        match n {
            0 => false,
            1 => (p - self.vertices[0]).norm() <= tol,
            2 => segment_distance(p, &self.vertices[0], &self.vertices[1]) <= tol,
            _ => (0..n).all(|i| {
                let a = &self.vertices[i];
                let b = &self.vertices[(i + 1) % n];
                cross(a, b, p) / (b - a).norm() >= -tol
            }),
        }
    }

    /// Strict interior test used for epipoles; boundary points count as outside.
    pub fn strictly_contains(&self, p: &Pixel) -> bool {
        let n = self.vertices.len();
        n >= 3
            && (0..n).all(|i| {
                let a = &self.vertices[i];
                let b = &self.vertices[(i + 1) % n];
                cross(a, b, p) > 0.0
            })
    }

    /// Euclidean distance from `p` to the hull boundary.
    pub fn boundary_distance(&self, p: &Pixel) -> f64 {
        let n = self.vertices.len();
        match n {
            0 => f64::INFINITY,
            1 => (p - self.vertices[0]).norm(),
            _ => (0..n)
                .map(|i| segment_distance(p, &self.vertices[i], &self.vertices[(i + 1) % n]))
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Index of the vertex extreme along `dir`; ties go to the lexicographically
    /// smaller vertex.
    pub fn extreme_vertex(&self, dir: &Pixel) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, v) in self.vertices.iter().enumerate() {
            let s = dir.dot(v);
            let tie = (s - best_v).abs() <= 1e-9 * (1.0 + s.abs());
            if (s > best_v && !tie) || (tie && lex_less(v, &self.vertices[best])) {
                best = i;
                best_v = best_v.max(s);
            }
        }
        best
    }

    /// The two tangent lines from an external point, as `(vertex index, line)`
    /// for the left and right tangent seen from `p`; `None` when `p` is inside.
    pub fn tangents_from(&self, p: &Pixel) -> Option<[(usize, HomogLine); 2]> {
        if self.is_degenerate() || self.contains(p, 1e-9) {
            return None;
        }
        let c = self.centroid();
        let base = (c - p).normalize();
        let mut lo = (0, f64::INFINITY);
        let mut hi = (0, f64::NEG_INFINITY);
        for (i, v) in self.vertices.iter().enumerate() {
            let d = v - p;
            let ang = (base.x * d.y - base.y * d.x).atan2(base.dot(&d));
            if ang < lo.1 {
                lo = (i, ang);
            }
            if ang > hi.1 {
                hi = (i, ang);
            }
        }
        let line = |i: usize| {
            let v = self.vertices[i];
            HomogLine::new(v.y - p.y, p.x - v.x, p.y * v.x - p.x * v.y)
        };
        Some([(lo.0, line(lo.0)), (hi.0, line(hi.0))])
    }

    /// Minimum enclosing circle approximation: centroid and max vertex distance.
    pub fn bounding_circle(&self) -> (Pixel, f64) {
        let c = self.centroid();
        let r = self.vertices.iter().map(|v| (v - c).norm()).fold(0.0, f64::max);
        (c, r)
    }
}

fn lex_less(a: &Pixel, b: &Pixel) -> bool {
    a.x < b.x || (a.x == b.x && a.y < b.y)
}

pub fn segment_distance(p: &Pixel, a: &Pixel, b: &Pixel) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Hull of all foreground pixel centers (union of every blob).
pub fn convex_hull(mask: &Mask) -> Result<ConvexHull, SilhouetteError> {
    // the row extremes are sufficient for the hull
    let mut pts = Vec::new();
    for y in 0..mask.height() {
        let row = &mask.bits()[y * mask.width()..(y + 1) * mask.width()];
        if let Some(first) = row.iter().position(|&b| b) {
            let last = row.iter().rposition(|&b| b).unwrap();
            pts.push(Pixel::new(first as f64, y as f64));
            if last != first {
                pts.push(Pixel::new(last as f64, y as f64));
            }
        }
    }
    ConvexHull::from_points(pts).ok_or(SilhouetteError::EmptyMask)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePoint {
    pub pos: Pixel,
}

/// A supporting line of the hull with outward normal `(cos θ, sin θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateLine {
    pub line: HomogLine,
    pub touch: CandidatePoint,
    pub normal_angle_deg: f64,
}

pub fn angle_count(step_deg: f64) -> Result<usize, SilhouetteError> {
    if !(step_deg > 0.0) {
        return Err(SilhouetteError::BadAngleStep(step_deg));
    }
    let n = (360.0 / step_deg).round();
    if n < 1.0 || (n * step_deg - 360.0).abs() > 1e-9 {
        return Err(SilhouetteError::BadAngleStep(step_deg));
    }
    Ok(n as usize)
}

/// Supporting lines at outward-normal angles `0, step, …, 360 − step`.
pub fn tangent_lines(hull: &ConvexHull, step_deg: f64) -> Result<Vec<CandidateLine>, SilhouetteError> {
    let count = angle_count(step_deg)?;
    if hull.is_degenerate() {
        return Err(SilhouetteError::DegenerateHull);
    }
    Ok((0..count)
        .map(|k| {
            let deg = k as f64 * step_deg;
            let (s, c) = deg.to_radians().sin_cos();
            let n = Pixel::new(c, s);
            let v = hull.vertices[hull.extreme_vertex(&n)];
            CandidateLine {
                line: HomogLine::new(c, s, -n.dot(&v)),
                touch: CandidatePoint { pos: v },
                normal_angle_deg: deg,
            }
        })
        .collect())
}

/// Boundary pixels lying within ½ px of the hull boundary.
pub fn candidate_points(mask: &Mask, hull: &ConvexHull) -> Result<Vec<CandidatePoint>, SilhouetteError> {
    if mask.is_empty() {
        return Err(SilhouetteError::EmptyMask);
    }
    Ok(mask
        .boundary_pixels()
        .into_iter()
        .map(|(x, y)| Pixel::new(x as f64, y as f64))
        .filter(|p| hull.boundary_distance(p) <= 0.5)
        .map(|pos| CandidatePoint { pos })
        .collect())
}

/// Per-frame tangent envelope. Frames whose hull is degenerate keep `lines` empty.
#[derive(Debug, Clone)]
pub struct FrameTangents {
    pub frame: usize,
    pub hull: Option<ConvexHull>,
    pub lines: Vec<CandidateLine>,
}

impl FrameTangents {
    pub fn is_usable(&self) -> bool {
        !self.lines.is_empty()
    }
}

pub fn analyze_frame(mask: &Mask, step_deg: f64) -> Result<FrameTangents, SilhouetteError> {
    angle_count(step_deg)?;
    let hull = convex_hull(mask).ok();
    let lines = match &hull {
        Some(h) if !h.is_degenerate() => tangent_lines(h, step_deg)?,
        _ => Vec::new(),
    };
    Ok(FrameTangents { frame: mask.frame_index, hull, lines })
}
