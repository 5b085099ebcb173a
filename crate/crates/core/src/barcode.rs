//! Motion barcodes of lines and their correlation.
//!
//! A line's barcode has one bit per frame: whether some foreground pixel
//! center lies within ½ px of the line in that frame. Two barcodes are compared
//! by Pearson correlation; constant barcodes correlate to 0 and are flagged.

use std::io::{self, Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::HomogLine;
use crate::silhouette::{convex_hull, FrameTangents, Mask, Pixel};

/// Half-width of the incidence band between a line and pixel centers.
pub const BAND: f64 = 0.5;

#[derive(Debug, Error)]
pub enum BarcodeError {
    #[error("masks have different dimensions")]
    DimensionMismatch,
    #[error("no masks given")]
    NoFrames,
    #[error("barcode lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("barcode cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Row-run index of a mask plus its hull, for fast exact line tests.
#[derive(Debug, Clone)]
pub struct MaskSpans {
    width: usize,
    height: usize,
    row_start: Vec<u32>,
    runs: Vec<(i64, i64)>,
    /// (xmin, xmax, ymin, ymax) of the foreground, `None` for empty frames.
    bbox: Option<(i64, i64, i64, i64)>,
    hull: Vec<Pixel>,
    circle: (Pixel, f64),
}

impl MaskSpans {
    pub fn new(mask: &Mask) -> Self {
        let (w, h) = (mask.width(), mask.height());
        let mut row_start = Vec::with_capacity(h + 1);
        let mut runs = Vec::new();
        let mut bbox: Option<(i64, i64, i64, i64)> = None;
        for y in 0..h {
            row_start.push(runs.len() as u32);
            let row = &mask.bits()[y * w..(y + 1) * w];
            let mut x = 0;
            while x < w {
                if row[x] {
                    let s = x;
                    while x < w && row[x] {
                        x += 1;
                    }
                    let (x0, x1, yy) = (s as i64, x as i64 - 1, y as i64);
                    runs.push((x0, x1));
                    bbox = Some(match bbox {
                        None => (x0, x1, yy, yy),
                        Some((a, b, c, _)) => (a.min(x0), b.max(x1), c, yy),
                    });
                } else {
                    x += 1;
                }
            }
        }
        row_start.push(runs.len() as u32);
        let (hull, circle) = match convex_hull(mask) {
            Ok(hull) => {
                let c = hull.bounding_circle();
                (hull.vertices, c)
            }
            Err(_) => (Vec::new(), (Pixel::zeros(), 0.0)),
        };
        Self { width: w, height: h, row_start, runs, bbox, hull, circle }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn is_empty(&self) -> bool {
        self.bbox.is_none()
    }

    fn row_runs(&self, y: i64) -> &[(i64, i64)] {
        let y = y as usize;
        &self.runs[self.row_start[y] as usize..self.row_start[y + 1] as usize]
    }

    /// Exact test: some foreground pixel center within ½ px of `line`.
    pub fn intersects(&self, line: &HomogLine) -> bool {
        let Some((xmin, xmax, ymin, ymax)) = self.bbox else {
            return false;
        };
        let Ok(u) = line.unit() else {
            return false;
        };
        let (a, b, c) = (u.0.x, u.0.y, u.0.z);
        let on = |x: f64, y: f64| (a * x + b * y + c).abs() <= BAND;

        let (cc, r) = self.circle;
        let dc = a * cc.x + b * cc.y + c;
        if dc.abs() > r + BAND + 1e-9 {
            return false;
        }
        let mut below = false;
        let mut above = false;
        for v in &self.hull {
            let d = a * v.x + b * v.y + c;
            if d.abs() <= BAND {
                return true;
            }
            if d < 0.0 {
                below = true;
            } else {
                above = true;
            }
        }
        if !(below && above) {
            return false;
        }

        // rows touched by the band inside the bounding box
        let (mut y0, mut y1) = (ymin, ymax);
        if b.abs() > 1e-12 {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &x in &[xmin as f64, xmax as f64] {
                for &s in &[-BAND, BAND] {
                    let y = (s - c - a * x) / b;
                    lo = lo.min(y);
                    hi = hi.max(y);
                }
            }
            y0 = y0.max(lo.floor() as i64 - 1);
            y1 = y1.min(hi.ceil() as i64 + 1);
        }
        for y in y0..=y1 {
            let runs = self.row_runs(y);
            if runs.is_empty() {
                continue;
            }
            let yf = y as f64;
            let (lo, hi) = if a.abs() <= 1e-12 {
                if on(xmin as f64, yf) {
                    (xmin, xmax)
                } else {
                    continue;
                }
            } else {
                let k = b * yf + c;
                let p = (-BAND - k) / a;
                let q = (BAND - k) / a;
                let (pmin, pmax) = if p < q { (p, q) } else { (q, p) };
                if pmax < xmin as f64 - 2.0 || pmin > xmax as f64 + 2.0 {
                    continue;
                }
                let mut lo = pmin.ceil() as i64;
                if on((lo - 1) as f64, yf) {
                    lo -= 1;
                } else if !on(lo as f64, yf) {
                    lo += 1;
                }
                let mut hi = pmax.floor() as i64;
                if on((hi + 1) as f64, yf) {
                    hi += 1;
                } else if !on(hi as f64, yf) {
                    hi -= 1;
                }
                (lo, hi)
            };
            if lo > hi {
                continue;
            }
            if runs.iter().any(|&(r0, r1)| r0 <= hi && r1 >= lo) {
                return true;
            }
        }
        false
    }
}

/// True iff some foreground pixel center of `mask` lies within ½ px of `line`.
pub fn line_intersects_mask(line: &HomogLine, mask: &Mask) -> bool {
    MaskSpans::new(mask).intersects(line)
}

/// Binary temporal sequence of one line, packed 64 frames per word.
#[derive(Debug, Clone, PartialEq)]
pub struct Barcode {
    words: Vec<u64>,
    len: usize,
    ones: usize,
}

impl Barcode {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut words = vec![0u64; bits.len().div_ceil(64)];
        let mut ones = 0;
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
                ones += 1;
            }
        }
        Self { words, len: bits.len(), ones }
    }

    fn from_words(words: Vec<u64>, len: usize) -> Self {
        let ones = words.iter().map(|w| w.count_ones() as usize).sum();
        Self { words, len, ones }
    }

    pub fn zeros(len: usize) -> Self {
        Self { words: vec![0; len.div_ceil(64)], len, ones: 0 }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, t: usize) -> bool {
        self.words[t / 64] >> (t % 64) & 1 == 1
    }

    pub fn ones(&self) -> usize {
        self.ones
    }

    pub fn mean(&self) -> f64 {
        if self.len == 0 {
            0.0
        } else {
            self.ones as f64 / self.len as f64
        }
    }

    /// Population standard deviation of the bits.
    pub fn stdev(&self) -> f64 {
        let m = self.mean();
        (m * (1.0 - m)).max(0.0).sqrt()
    }

    pub fn is_degenerate(&self) -> bool {
        self.ones == 0 || self.ones == self.len
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.len).map(|t| self.get(t)).collect()
    }

    pub fn to_bit_string(&self) -> String {
        (0..self.len).map(|t| if self.get(t) { '1' } else { '0' }).collect()
    }

    fn and_count(&self, other: &Self) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }

    /// Mean-centered, stdev-scaled row (divided by √N), zero if degenerate.
    fn normalized_row(&self) -> Vec<f64> {
        if self.is_degenerate() {
            return vec![0.0; self.len];
        }
        let m = self.mean();
        let s = self.stdev() * (self.len as f64).sqrt();
        (0..self.len).map(|t| ((self.get(t) as u8 as f64) - m) / s).collect()
    }
}

pub fn motion_barcode(line: &HomogLine, masks: &[Mask]) -> Result<Barcode, BarcodeError> {
    let first = masks.first().ok_or(BarcodeError::NoFrames)?;
    if masks.iter().any(|m| m.width() != first.width() || m.height() != first.height()) {
        return Err(BarcodeError::DimensionMismatch);
    }
    let spans: Vec<MaskSpans> = masks.iter().map(MaskSpans::new).collect();
    Ok(barcode_from_spans(line, &spans))
}

pub fn barcode_from_spans(line: &HomogLine, spans: &[MaskSpans]) -> Barcode {
    let bits: Vec<bool> = spans.iter().map(|s| s.intersects(line)).collect();
    Barcode::from_bits(&bits)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correlation {
    pub value: f64,
    /// Set when either barcode is constant; `value` is then 0.
    pub degenerate: bool,
}

/// Pearson correlation from bit counts.
pub fn barcode_correlation(a: &Barcode, b: &Barcode) -> Result<Correlation, BarcodeError> {
    if a.len != b.len {
        return Err(BarcodeError::LengthMismatch(a.len, b.len));
    }
    if a.is_degenerate() || b.is_degenerate() {
        return Ok(Correlation { value: 0.0, degenerate: true });
    }
    let n = a.len as f64;
    let (na, nb) = (a.ones as f64, b.ones as f64);
    let n11 = a.and_count(b) as f64;
    let num = n * n11 - na * nb;
    let den = (na * (n - na) * nb * (n - nb)).sqrt();
    Ok(Correlation { value: (num / den).clamp(-1.0, 1.0), degenerate: false })
}

/// Pearson correlations between two barcode sets.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    pub values: DMatrix<f64>,
    pub degenerate_rows: Vec<bool>,
    pub degenerate_cols: Vec<bool>,
}

impl AffinityMatrix {
    pub fn is_degenerate(&self, i: usize, j: usize) -> bool {
        self.degenerate_rows[i] || self.degenerate_cols[j]
    }

    /// Largest entry; entries within `1e-12` of it tie and go to the smaller
    /// row, then the smaller column.
    pub fn argmax(&self) -> Option<(usize, usize, f64)> {
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (rows, cols) = self.values.shape();
        (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .find(|&(i, j)| self.values[(i, j)] >= max - 1e-12)
            .map(|(i, j)| (i, j, self.values[(i, j)]))
    }
}

fn normalized_matrix(set: &[&Barcode], len: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(set.len(), len);
    for (i, b) in set.iter().enumerate() {
        for (t, v) in b.normalized_row().into_iter().enumerate() {
            m[(i, t)] = v;
        }
    }
    m
}

/// `values[i][j] = corr(rows[i], cols[j])`, computed as one matrix product of
/// pre-normalized barcode matrices.
pub fn affinity_matrix(rows: &[&Barcode], cols: &[&Barcode]) -> Result<AffinityMatrix, BarcodeError> {
    let len = rows.first().or(cols.first()).map_or(0, |b| b.len);
    for b in rows.iter().chain(cols) {
        if b.len != len {
            return Err(BarcodeError::LengthMismatch(len, b.len));
        }
    }
    let zr = normalized_matrix(rows, len);
    let zc = normalized_matrix(cols, len);
    let mut values = zr * zc.transpose();
    values.apply(|v| *v = v.clamp(-1.0, 1.0));
    Ok(AffinityMatrix {
        values,
        degenerate_rows: rows.iter().map(|b| b.is_degenerate()).collect(),
        degenerate_cols: cols.iter().map(|b| b.is_degenerate()).collect(),
    })
}

/// Which camera of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    A,
    B,
}

/// Anything that can produce the barcode of an arbitrary line in either view.
pub trait LineBarcoder: Sync {
    fn barcode(&self, view: View, line: &HomogLine) -> Barcode;
    fn frame_count(&self) -> usize;
}

/// Barcodes straight from the two mask sequences.
pub struct MaskBarcoder<'a> {
    pub a: &'a [MaskSpans],
    pub b: &'a [MaskSpans],
}

impl LineBarcoder for MaskBarcoder<'_> {
    fn barcode(&self, view: View, line: &HomogLine) -> Barcode {
        match view {
            View::A => barcode_from_spans(line, self.a),
            View::B => barcode_from_spans(line, self.b),
        }
    }

    fn frame_count(&self) -> usize {
        self.a.len()
    }
}

/// Offline phase output for one camera: the barcode of every candidate line
/// of every frame, indexed `[frame][line]`. Unusable frames have no rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BarcodeBank {
    pub frame_count: usize,
    pub lines_per_frame: usize,
    pub angle_step_deg: f64,
    rows: Vec<Vec<Barcode>>,
}

impl BarcodeBank {
    pub fn compute(tangents: &[FrameTangents], spans: &[MaskSpans], angle_step_deg: f64) -> Self {
        let lines_per_frame = tangents.iter().map(|t| t.lines.len()).max().unwrap_or(0);
        let rows: Vec<Vec<Barcode>> = tangents
            .par_iter()
            .map(|ft| ft.lines.iter().map(|cl| barcode_from_spans(&cl.line, spans)).collect())
            .collect();
        Self { frame_count: spans.len(), lines_per_frame, angle_step_deg, rows }
    }

    pub fn frame(&self, f: usize) -> &[Barcode] {
        &self.rows[f]
    }

    pub fn get(&self, frame: usize, line: usize) -> Option<&Barcode> {
        self.rows.get(frame).and_then(|r| r.get(line))
    }

    const MAGIC: &'static [u8; 4] = b"MBAR";
    const VERSION: u32 = 1;

    /// Header (magic, version, frame count, lines per frame, angle step),
    /// then per frame a row count and its packed rows with their statistics.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), BarcodeError> {
        w.write_all(Self::MAGIC)?;
        w.write_all(&Self::VERSION.to_le_bytes())?;
        w.write_all(&(self.frame_count as u32).to_le_bytes())?;
        w.write_all(&(self.lines_per_frame as u32).to_le_bytes())?;
        w.write_all(&self.angle_step_deg.to_le_bytes())?;
        for row in &self.rows {
            w.write_all(&(row.len() as u32).to_le_bytes())?;
            for b in row {
                for word in &b.words {
                    w.write_all(&word.to_le_bytes())?;
                }
                w.write_all(&b.mean().to_le_bytes())?;
                w.write_all(&b.stdev().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, BarcodeError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(BarcodeError::Cache("bad magic".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut f64buf = [0u8; 8];
        let mut read_u32 = |r: &mut R| -> io::Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut r)?;
        if version != Self::VERSION {
            return Err(BarcodeError::Cache(format!("unsupported version {version}")));
        }
        let frame_count = read_u32(&mut r)? as usize;
        let lines_per_frame = read_u32(&mut r)? as usize;
        r.read_exact(&mut f64buf)?;
        let angle_step_deg = f64::from_le_bytes(f64buf);
        let nwords = frame_count.div_ceil(64);
        let mut rows = Vec::with_capacity(frame_count);
        for _ in 0..frame_count {
            let n = read_u32(&mut r)? as usize;
            if n > lines_per_frame {
                return Err(BarcodeError::Cache("row count exceeds header".into()));
            }
            let mut row = Vec::with_capacity(n);
            for _ in 0..n {
                let mut words = Vec::with_capacity(nwords);
                for _ in 0..nwords {
                    r.read_exact(&mut f64buf)?;
                    words.push(u64::from_le_bytes(f64buf));
                }
                let b = Barcode::from_words(words, frame_count);
                r.read_exact(&mut f64buf)?;
                let mean = f64::from_le_bytes(f64buf);
                r.read_exact(&mut f64buf)?;
                let stdev = f64::from_le_bytes(f64buf);
                if mean != b.mean() || stdev != b.stdev() {
                    return Err(BarcodeError::Cache("row statistics do not match bits".into()));
                }
                row.push(b);
            }
            rows.push(row);
        }
        Ok(Self { frame_count, lines_per_frame, angle_step_deg, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bc(s: &str) -> Barcode {
        Barcode::from_bits(&s.chars().map(|c| c == '1').collect::<Vec<_>>())
    }

    #[test]
    fn single_pixel_hit_and_miss() {
        let mut m = Mask::new(64, 64, 0);
        m.set(10, 10, true);
        assert!(line_intersects_mask(&HomogLine::new(0.0, 1.0, -10.0), &m));
        assert!(!line_intersects_mask(&HomogLine::new(0.0, 1.0, -50.0), &m));
        assert!(line_intersects_mask(&HomogLine::new(1.0, -1.0, 0.0), &m));
        assert!(!line_intersects_mask(&HomogLine::new(1.0, -1.0, 1.0), &m));
    }

    #[test]
    fn empty_frame_never_hits() {
        let m = Mask::new(32, 32, 0);
        assert!(!line_intersects_mask(&HomogLine::new(0.3, 1.0, -5.0), &m));
    }

    #[test]
    fn correlation_examples() {
        let a = bc("0110");
        assert_eq!(barcode_correlation(&a, &bc("0110")).unwrap().value, 1.0);
        assert_eq!(barcode_correlation(&a, &bc("1001")).unwrap().value, -1.0);
        let d = barcode_correlation(&bc("0000"), &a).unwrap();
        assert_eq!(d, Correlation { value: 0.0, degenerate: true });
        assert!(matches!(barcode_correlation(&a, &bc("011")), Err(BarcodeError::LengthMismatch(4, 3))));
    }

    #[test]
    fn statistics_match_bits() {
        let b = bc("0110100");
        assert_eq!(b.ones(), 3);
        assert!((b.mean() - 3.0 / 7.0).abs() < 1e-15);
        let m = b.mean();
        let var = b.bits().iter().map(|&x| (x as u8 as f64 - m).powi(2)).sum::<f64>() / 7.0;
        assert!((b.stdev() - var.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn one_by_one_affinity() {
        let a = bc("0110");
        let m = affinity_matrix(&[&a], &[&a]).unwrap();
        assert_eq!(m.values.shape(), (1, 1));
        assert!((m.values[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn barcode_of_line_through_moving_blob() {
        let mut masks: Vec<Mask> = (0..3).map(|t| Mask::new(20, 20, t)).collect();
        masks[0].set(2, 15, true);
        masks[1].set(10, 5, true);
        masks[2].set(14, 5, true);
        let line = HomogLine::new(0.0, 1.0, -5.0);
        let b = motion_barcode(&line, &masks).unwrap();
        assert_eq!(b.to_bit_string(), "011");
        let outside = HomogLine::new(0.0, 1.0, 100.0);
        assert_eq!(motion_barcode(&outside, &masks).unwrap().to_bit_string(), "000");
    }

    #[test]
    fn mismatched_dimensions_rejected() {
        let masks = vec![Mask::new(20, 20, 0), Mask::new(21, 20, 1)];
        assert!(matches!(
            motion_barcode(&HomogLine::new(0.0, 1.0, -5.0), &masks),
            Err(BarcodeError::DimensionMismatch)
        ));
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let mut m = Mask::new(16, 16, 0);
        for y in 4..9 {
            for x in 3..10 {
                m.set(x, y, true);
            }
        }
        let mut m2 = Mask::new(16, 16, 1);
        m2.set(12, 12, true);
        let masks = [m.clone(), m2, Mask::new(16, 16, 2)];
        let spans: Vec<MaskSpans> = masks.iter().map(MaskSpans::new).collect();
        let tangents: Vec<FrameTangents> =
            masks.iter().map(|m| crate::silhouette::analyze_frame(m, 30.0).unwrap()).collect();
        let bank = BarcodeBank::compute(&tangents, &spans, 30.0);
        let mut buf = Vec::new();
        bank.write_to(&mut buf).unwrap();
        let back = BarcodeBank::read_from(&buf[..]).unwrap();
        assert_eq!(back, bank);
        buf[0] = b'X';
        assert!(BarcodeBank::read_from(&buf[..]).is_err());
    }
}
