//! Key-frame selection and barcode matching of candidate epipolar lines.

use rayon::prelude::*;
use thiserror::Error;

use crate::barcode::{affinity_matrix, AffinityMatrix, Barcode, BarcodeBank};
use crate::silhouette::{CandidateLine, FrameTangents};

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("only {usable} usable frames, {requested} requested")]
    NotEnoughFrames { usable: usize, requested: usize },
    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("key-frame count must be at least 3")]
    CountTooSmall,
}

/// A proposed pair of corresponding epipolar lines from one frame pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchCandidate {
    pub frame: usize,
    pub index_a: usize,
    pub index_b: usize,
    pub line_a: CandidateLine,
    pub line_b: CandidateLine,
    pub correlation: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchTable {
    /// Sorted by correlation, descending; ties keep frame order.
    pub candidates: Vec<MatchCandidate>,
    pub frames: Vec<usize>,
}

impl MatchTable {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// CSV dump: frame, angleA, angleB, correlation, lineA coords, lineB coords.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,angle_a,angle_b,correlation,la_a,la_b,la_c,lb_a,lb_b,lb_c\n");
        for c in &self.candidates {
            let la = c.line_a.line.unit().map(|l| l.0).unwrap_or(c.line_a.line.0);
            let lb = c.line_b.line.unit().map(|l| l.0).unwrap_or(c.line_b.line.0);
            out.push_str(&format!(
                "{},{},{},{:.9},{:.9},{:.9},{:.6},{:.9},{:.9},{:.6}\n",
                c.frame,
                c.line_a.normal_angle_deg,
                c.line_b.normal_angle_deg,
                c.correlation,
                la.x,
                la.y,
                la.z,
                lb.x,
                lb.y,
                lb.z
            ));
        }
        out
    }
}

/// Per-frame pose feature: hull centroid and √area of both views.
fn frame_feature(a: &FrameTangents, b: &FrameTangents) -> Option<([f64; 6], f64)> {
    let ha = a.hull.as_ref().filter(|h| !h.is_degenerate())?;
    let hb = b.hull.as_ref().filter(|h| !h.is_degenerate())?;
    let (ca, cb) = (ha.centroid(), hb.centroid());
    let (aa, ab) = (ha.area(), hb.area());
    Some(([ca.x, ca.y, aa.sqrt(), cb.x, cb.y, ab.sqrt()], aa + ab))
}

fn dist(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Greedy farthest-point selection of frame pairs whose silhouettes differ
/// the most. Starts from the largest joint silhouette area; ties pick the
/// lower frame index.
pub fn select_key_frames(
    a: &[FrameTangents],
    b: &[FrameTangents],
    count: usize,
) -> Result<Vec<usize>, MatchError> {
    if a.len() != b.len() {
        return Err(MatchError::LengthMismatch(a.len(), b.len()));
    }
    if count < 3 {
        return Err(MatchError::CountTooSmall);
    }
    let feats: Vec<(usize, [f64; 6], f64)> = a
        .iter()
        .zip(b)
        .enumerate()
        .filter_map(|(i, (fa, fb))| frame_feature(fa, fb).map(|(f, area)| (i, f, area)))
        .collect();
    if feats.len() < count {
        return Err(MatchError::NotEnoughFrames { usable: feats.len(), requested: count });
    }
    let first = feats
        .iter()
        .enumerate()
        .fold(0, |best, (k, f)| if f.2 > feats[best].2 { k } else { best });
    let mut chosen = vec![first];
    let mut min_d: Vec<f64> = feats.iter().map(|f| dist(&f.1, &feats[first].1)).collect();
    min_d[first] = f64::NEG_INFINITY;
    let mut warned = false;
    while chosen.len() < count {
        let (k, d) = min_d
            .iter()
            .enumerate()
            .fold((usize::MAX, f64::NEG_INFINITY), |acc, (k, &d)| if d > acc.1 { (k, d) } else { acc });
        if d <= 0.0 && !warned {
            tracing::warn!("key frames are indistinguishable; silhouettes look static");
            warned = true;
        }
        chosen.push(k);
        min_d[k] = f64::NEG_INFINITY;
        for (j, f) in feats.iter().enumerate() {
            if min_d[j] > f64::NEG_INFINITY {
                min_d[j] = min_d[j].min(dist(&f.1, &feats[k].1));
            }
        }
    }
    Ok(chosen.into_iter().map(|k| feats[k].0).collect())
}

/// All frames usable in both views.
pub fn usable_frames(a: &[FrameTangents], b: &[FrameTangents]) -> Vec<usize> {
    a.iter()
        .zip(b)
        .enumerate()
        .filter(|(_, (fa, fb))| fa.is_usable() && fb.is_usable())
        .map(|(i, _)| i)
        .collect()
}

/// Correlations closer than this are ties; the matrix product is not exact
/// to the last bit, so identical barcodes can differ by rounding.
pub const CORRELATION_TIE: f64 = 1e-12;

/// Up to `m` distinct positive, non-degenerate entries in decreasing order;
/// ties go to the smaller row, then the smaller column.
pub fn top_entries(aff: &AffinityMatrix, m: usize) -> Vec<(usize, usize, f64)> {
    let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(m);
    let (rows, cols) = aff.values.shape();
    let eligible = |i: usize, j: usize, entries: &[(usize, usize, f64)]| {
        !aff.is_degenerate(i, j) && aff.values[(i, j)] > 0.0 && !entries.iter().any(|e| e.0 == i && e.1 == j)
    };
    for _ in 0..m {
        let mut max = f64::NEG_INFINITY;
        for i in 0..rows {
            for j in 0..cols {
                if eligible(i, j, &entries) {
                    max = max.max(aff.values[(i, j)]);
                }
            }
        }
        if !max.is_finite() {
            break;
        }
        let first = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .find(|&(i, j)| eligible(i, j, &entries) && aff.values[(i, j)] >= max - CORRELATION_TIE);
        match first {
            Some((i, j)) => entries.push((i, j, aff.values[(i, j)])),
            None => break,
        }
    }
    entries
}

/// For each frame pair, the `top_m` candidate line pairs with the highest
/// barcode correlation; `top_m = 1` keeps only the best pair.
pub fn best_pairs(
    frames: &[usize],
    a: &[FrameTangents],
    b: &[FrameTangents],
    bank_a: &BarcodeBank,
    bank_b: &BarcodeBank,
    top_m: usize,
) -> MatchTable {
    let top_m = top_m.max(1);
    let per_frame: Vec<Vec<MatchCandidate>> = frames
        .par_iter()
        .map(|&f| {
            let (la, lb) = (&a[f].lines, &b[f].lines);
            if la.is_empty() || lb.is_empty() {
                return Vec::new();
            }
            let rows: Vec<&Barcode> = bank_a.frame(f).iter().collect();
            let cols: Vec<&Barcode> = bank_b.frame(f).iter().collect();
            let Ok(aff) = affinity_matrix(&rows, &cols) else {
                return Vec::new();
            };
            let entries = top_entries(&aff, top_m);
            entries
                .into_iter()
                .map(|(i, j, v)| MatchCandidate {
                    frame: f,
                    index_a: i,
                    index_b: j,
                    line_a: la[i],
                    line_b: lb[j],
                    correlation: v,
                })
                .collect()
        })
        .collect();
    let mut candidates: Vec<MatchCandidate> = per_frame.into_iter().flatten().collect();
    candidates.sort_by(|x, y| y.correlation.total_cmp(&x.correlation).then(x.frame.cmp(&y.frame)));
    MatchTable { candidates, frames: frames.to_vec() }
}
