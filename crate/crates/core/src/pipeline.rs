//! End-to-end composition: offline barcode phase, matching, estimation,
//! refinement, plus the on-disk dataset layout and the barcode cache.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::barcode::{BarcodeBank, BarcodeError, MaskBarcoder, MaskSpans};
use crate::estimator::{
    ransac_fundamental, sinha_baseline, symmetric_epipolar_inliers, EstimateError, Method, RansacConfig, RansacReport,
};
use crate::geometry::{Fundamental, LinePair, PointPair};
use crate::matcher::{best_pairs, select_key_frames, usable_frames, MatchError, MatchTable};
use crate::refine::{refine, RefineConfig, RefineOutcome};
use crate::silhouette::{analyze_frame, FrameTangents, Mask, SilhouetteError};
use crate::synth::{frontier_from_csv, frontier_to_csv, FrontierPair, Scene, SceneSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("camera sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("masks differ in size")]
    SizeMismatch,
    #[error("no frames")]
    NoFrames,
    #[error(transparent)]
    Silhouette(#[from] SilhouetteError),
    #[error(transparent)]
    Barcode(#[from] BarcodeError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error(transparent)]
    Refine(#[from] crate::refine::RefineError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl PipelineError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Everything derived from the masks alone.
pub struct Offline {
    pub angle_step_deg: f64,
    pub tangents_a: Vec<FrameTangents>,
    pub tangents_b: Vec<FrameTangents>,
    pub spans_a: Vec<MaskSpans>,
    pub spans_b: Vec<MaskSpans>,
    pub bank_a: BarcodeBank,
    pub bank_b: BarcodeBank,
}

fn analyze(masks: &[Mask], step: f64) -> Result<Vec<FrameTangents>, SilhouetteError> {
    masks.par_iter().map(|m| analyze_frame(m, step)).collect()
}

impl Offline {
    pub fn compute(masks_a: &[Mask], masks_b: &[Mask], angle_step_deg: f64) -> Result<Self, PipelineError> {
        let (tangents_a, tangents_b) = Self::check_and_analyze(masks_a, masks_b, angle_step_deg)?;
        let spans_a: Vec<MaskSpans> = masks_a.par_iter().map(MaskSpans::new).collect();
        let spans_b: Vec<MaskSpans> = masks_b.par_iter().map(MaskSpans::new).collect();
        let bank_a = BarcodeBank::compute(&tangents_a, &spans_a, angle_step_deg);
        let bank_b = BarcodeBank::compute(&tangents_b, &spans_b, angle_step_deg);
        Ok(Self { angle_step_deg, tangents_a, tangents_b, spans_a, spans_b, bank_a, bank_b })
    }

    /// Like [`Offline::compute`] but reuses banks loaded from a cache.
    pub fn with_banks(
        masks_a: &[Mask],
        masks_b: &[Mask],
        angle_step_deg: f64,
        bank_a: BarcodeBank,
        bank_b: BarcodeBank,
    ) -> Result<Self, PipelineError> {
        let (tangents_a, tangents_b) = Self::check_and_analyze(masks_a, masks_b, angle_step_deg)?;
        let spans_a: Vec<MaskSpans> = masks_a.par_iter().map(MaskSpans::new).collect();
        let spans_b: Vec<MaskSpans> = masks_b.par_iter().map(MaskSpans::new).collect();
        Ok(Self { angle_step_deg, tangents_a, tangents_b, spans_a, spans_b, bank_a, bank_b })
    }

    fn check_and_analyze(
        masks_a: &[Mask],
        masks_b: &[Mask],
        step: f64,
    ) -> Result<(Vec<FrameTangents>, Vec<FrameTangents>), PipelineError> {
        if masks_a.len() != masks_b.len() {
            return Err(PipelineError::LengthMismatch(masks_a.len(), masks_b.len()));
        }
        if masks_a.is_empty() {
            return Err(PipelineError::NoFrames);
        }
        let dims = |m: &Mask| (m.width(), m.height());
        if masks_a.iter().any(|m| dims(m) != dims(&masks_a[0])) || masks_b.iter().any(|m| dims(m) != dims(&masks_b[0])) {
            return Err(PipelineError::SizeMismatch);
        }
        Ok((analyze(masks_a, step)?, analyze(masks_b, step)?))
    }

    pub fn frame_count(&self) -> usize {
        self.tangents_a.len()
    }

    pub fn barcoder(&self) -> MaskBarcoder<'_> {
        MaskBarcoder { a: &self.spans_a, b: &self.spans_b }
    }

    /// Key frames (`None` = every usable frame) and their best line pairs.
    pub fn match_table(&self, key_frames: Option<usize>, top_m: usize) -> Result<MatchTable, PipelineError> {
        let frames = match key_frames {
            Some(k) => select_key_frames(&self.tangents_a, &self.tangents_b, k)?,
            None => usable_frames(&self.tangents_a, &self.tangents_b),
        };
        Ok(best_pairs(&frames, &self.tangents_a, &self.tangents_b, &self.bank_a, &self.bank_b, top_m))
    }

    pub fn estimate(
        &self,
        table: &MatchTable,
        method: Method,
        cfg: &RansacConfig,
        ground_truth: Option<&[PointPair]>,
    ) -> Result<(Fundamental, RansacReport), PipelineError> {
        Ok(match method {
            Method::Barcode => ransac_fundamental(table, cfg, ground_truth)?,
            Method::Sinha => {
                let frames = usable_frames(&self.tangents_a, &self.tangents_b);
                sinha_baseline(&frames, &self.tangents_a, &self.tangents_b, table, cfg, ground_truth)?
            }
        })
    }
}

// ---------------------------------------------------------------------------
// Calibration

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateOptions {
    pub method: Method,
    pub ransac: RansacConfig,
    /// `None` skips refinement.
    pub refine: Option<RefineConfig>,
    pub key_frames: Option<usize>,
    /// Line pairs kept per frame pair.
    pub top_m: usize,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        Self {
            method: Method::Barcode,
            ransac: RansacConfig::default(),
            refine: Some(RefineConfig::default()),
            key_frames: None,
            top_m: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub f: Fundamental,
    pub ransac_f: Fundamental,
    pub report: RansacReport,
    /// Absent when refinement was disabled or had too little support.
    pub refinement: Option<RefineOutcome>,
    pub inliers: usize,
}

/// Surrogate inlier points and their lines under `f`.
pub fn inlier_correspondences(
    f: &Fundamental,
    table: &MatchTable,
    cfg: &RansacConfig,
) -> (Vec<PointPair>, Vec<LinePair>) {
    symmetric_epipolar_inliers(f, table, cfg.inlier_threshold_px, cfg.min_correlation)
        .into_iter()
        .map(|c| {
            (
                PointPair::from_pixels(c.line_a.touch.pos, c.line_b.touch.pos),
                LinePair { l: c.line_a.line, l_prime: c.line_b.line },
            )
        })
        .unzip()
}

impl Offline {
    /// Matching, robust estimation and optional refinement. Ground truth only
    /// feeds the report's error columns.
    pub fn calibrate(
        &self,
        opts: &CalibrateOptions,
        ground_truth: Option<&[PointPair]>,
    ) -> Result<Calibration, PipelineError> {
        let table = self.match_table(opts.key_frames, opts.top_m)?;
        let (ransac_f, report) = self.estimate(&table, opts.method, &opts.ransac, ground_truth)?;
        let (points, lines) = inlier_correspondences(&ransac_f, &table, &opts.ransac);
        let mut out = Calibration { f: ransac_f, ransac_f, report, refinement: None, inliers: points.len() };
        if let Some(rcfg) = &opts.refine {
            if points.len() >= 7 && lines.len() >= 3 {
                let r = refine(&ransac_f, &points, &lines, &self.barcoder(), rcfg)?;
                out.f = r.f;
                out.refinement = Some(r);
            } else {
                tracing::warn!("skipping refinement: {} inliers", points.len());
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Barcode cache

/// Environment variable naming the barcode cache directory.
pub const CACHE_ENV: &str = "MOTIONBAR_CACHE_DIR";

/// Content key of an offline phase: both mask sequences and the angle step.
pub fn cache_key(masks_a: &[Mask], masks_b: &[Mask], angle_step_deg: f64) -> String {
    let mut h = Sha256::new();
    h.update(b"motionbar-barcodes-v1");
    h.update(angle_step_deg.to_le_bytes());
    for masks in [masks_a, masks_b] {
        h.update((masks.len() as u64).to_le_bytes());
        for m in masks {
            h.update((m.width() as u64).to_le_bytes());
            h.update((m.height() as u64).to_le_bytes());
            let packed: Vec<u8> = m
                .bits()
                .chunks(8)
                .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << i)))
                .collect();
            h.update(&packed);
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// [`Offline::compute`] backed by a cache directory; unreadable entries are
/// recomputed and rewritten.
pub fn offline_cached(
    masks_a: &[Mask],
    masks_b: &[Mask],
    angle_step_deg: f64,
    cache_dir: Option<&Path>,
) -> Result<Offline, PipelineError> {
    let Some(dir) = cache_dir else {
        return Offline::compute(masks_a, masks_b, angle_step_deg);
    };
    let key = cache_key(masks_a, masks_b, angle_step_deg);
    let paths = [dir.join(format!("{key}.a.mbar")), dir.join(format!("{key}.b.mbar"))];
    let load = |p: &Path| -> Option<BarcodeBank> {
        let bytes = fs::read(p).ok()?;
        BarcodeBank::read_from(bytes.as_slice()).ok()
    };
    if let (Some(a), Some(b)) = (load(&paths[0]), load(&paths[1])) {
        if a.frame_count == masks_a.len() && b.frame_count == masks_b.len() {
            tracing::debug!("barcode cache hit {key}");
            return Offline::with_banks(masks_a, masks_b, angle_step_deg, a, b);
        }
    }
    let off = Offline::compute(masks_a, masks_b, angle_step_deg)?;
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    for (bank, path) in [(&off.bank_a, &paths[0]), (&off.bank_b, &paths[1])] {
        let mut buf = Vec::new();
        bank.write_to(&mut buf)?;
        fs::write(path, buf).map_err(|e| PipelineError::io(path, e))?;
    }
    Ok(off)
}

// ---------------------------------------------------------------------------
// Dataset layout

pub const MANIFEST_NAME: &str = "manifest.json";
pub const FRONTIER_NAME: &str = "frontier.csv";

pub fn frame_file_name(t: usize) -> String {
    format!("frame_{t:05}.pgm")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    /// Directory of PGM frames, relative to the manifest.
    pub dir: String,
    /// Ground-truth 3×4 projection, row-major.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<[f64; 12]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub frames: usize,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub cameras: Vec<CameraEntry>,
    /// Ground-truth F between the first two cameras.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fundamental: Option<Fundamental>,
    /// Ground-truth frontier pairs (CSV), relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frontier: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
}

/// A manifest plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(manifest_path).map_err(|e| PipelineError::io(manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        if manifest.cameras.len() < 2 {
            return Err(PipelineError::Manifest("need two cameras".into()));
        }
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, manifest })
    }

    /// All frames of camera `cam`, in index order.
    pub fn load_camera(&self, cam: usize) -> Result<Vec<Mask>, PipelineError> {
        let entry = self
            .manifest
            .cameras
            .get(cam)
            .ok_or_else(|| PipelineError::Manifest(format!("no camera {cam}")))?;
        let dir = self.root.join(&entry.dir);
        let mut names: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| PipelineError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
            .collect();
        names.sort();
        names
            .par_iter()
            .enumerate()
            .map(|(t, p)| {
                let bytes = fs::read(p).map_err(|e| PipelineError::io(p, e))?;
                Ok(Mask::from_pgm(&bytes, t)?)
            })
            .collect()
    }

    /// Masks of the first two cameras, checked against the manifest.
    pub fn load_pair(&self) -> Result<(Vec<Mask>, Vec<Mask>), PipelineError> {
        let a = self.load_camera(0)?;
        let b = self.load_camera(1)?;
        if a.len() != b.len() {
            return Err(PipelineError::LengthMismatch(a.len(), b.len()));
        }
        if a.len() != self.manifest.frames {
            return Err(PipelineError::Manifest(format!(
                "manifest lists {} frames, found {}",
                self.manifest.frames,
                a.len()
            )));
        }
        let size = (self.manifest.width, self.manifest.height);
        if a.iter().chain(&b).any(|m| (m.width(), m.height()) != size) {
            return Err(PipelineError::SizeMismatch);
        }
        Ok((a, b))
    }

    /// Ground-truth pairs from the frontier file, or extracted from the masks
    /// with the ground-truth F. `None` when neither is available.
    pub fn ground_truth_points(
        &self,
        masks: Option<(&[Mask], &[Mask])>,
    ) -> Result<Option<Vec<PointPair>>, PipelineError> {
        if let Some(rel) = &self.manifest.frontier {
            let path = self.root.join(rel);
            let text = fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
            let pairs = frontier_from_csv(&text).map_err(PipelineError::Manifest)?;
            return Ok(Some(pairs.iter().map(FrontierPair::point_pair).collect()));
        }
        let Some(f) = &self.manifest.fundamental else {
            return Ok(None);
        };
        let owned;
        let (a, b) = match masks {
            Some(m) => m,
            None => {
                owned = self.load_pair()?;
                (owned.0.as_slice(), owned.1.as_slice())
            }
        };
        Ok(crate::synth::ground_truth_frontier_points(a, b, f)
            .ok()
            .map(|v| v.iter().map(FrontierPair::point_pair).collect()))
    }
}

/// Renders a scene to `out`: one PGM directory per camera, the frontier CSV
/// of the first two cameras and the manifest. Returns the manifest.
pub fn write_scene(scene: &Scene, out: &Path) -> Result<Manifest, PipelineError> {
    let (width, height) = scene.image_size();
    let mut cameras = Vec::new();
    let mut first_two = Vec::new();
    for (c, cam) in scene.cameras.iter().enumerate() {
        let masks = scene.render_camera(c);
        let rel = format!("cam{c}");
        let dir = out.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        masks.par_iter().enumerate().try_for_each(|(t, m)| {
            let p = dir.join(frame_file_name(t));
            fs::write(&p, m.to_pgm()).map_err(|e| PipelineError::io(&p, e))
        })?;
        let p = cam.projection();
        let mut projection = [0.0; 12];
        for r in 0..3 {
            for k in 0..4 {
                projection[4 * r + k] = p[(r, k)];
            }
        }
        cameras.push(CameraEntry { dir: rel, projection: Some(projection) });
        if c < 2 {
            first_two.push(masks);
        }
    }
    let f = scene.fundamental(0, 1).map_err(|e| PipelineError::Manifest(e.to_string()))?;
    let frontier = match crate::synth::ground_truth_frontier_points(&first_two[0], &first_two[1], &f) {
        Ok(pairs) => {
            let p = out.join(FRONTIER_NAME);
            fs::write(&p, frontier_to_csv(&pairs)).map_err(|e| PipelineError::io(&p, e))?;
            Some(FRONTIER_NAME.to_string())
        }
        Err(e) => {
            tracing::warn!("no frontier file: {e}");
            None
        }
    };
    let manifest = Manifest {
        frames: scene.frames(),
        fps: scene.spec.fps,
        width,
        height,
        cameras,
        fundamental: Some(f),
        frontier,
        scene: Some(scene.spec.clone()),
    };
    let p = out.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::Manifest(e.to_string()))?;
    fs::write(&p, text + "\n").map_err(|e| PipelineError::io(&p, e))?;
    Ok(manifest)
}
