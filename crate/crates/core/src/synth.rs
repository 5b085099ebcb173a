//! Synthetic scenes of moving spheres seen by stationary pinhole cameras,
//! with exact silhouettes and ground-truth frontier points.

use std::f64::consts::PI;

use nalgebra::{Matrix3x4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{fundamental_from_cameras, symmetric_epipolar_distance, Fundamental, Mat3, PointPair};
use crate::silhouette::{candidate_points, convex_hull, ConvexHull, Mask, Pixel};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("no frontier points found")]
    NoFrontierPoints,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub k: Mat3,
    pub r: Mat3,
    pub t: Vector3<f64>,
}

impl Camera {
    /// Camera at `center` looking at `target`; image y points down.
    pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, focal: f64, principal: (f64, f64)) -> Self {
        let fwd = (target - center).normalize();
        let up = Vector3::z();
        let right = fwd.cross(&up).normalize();
        let down = fwd.cross(&right);
        let r = Mat3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let k = Mat3::new(focal, 0.0, principal.0, 0.0, focal, principal.1, 0.0, 0.0, 1.0);
        Self { k, t: -(r * center), r }
    }

    pub fn projection(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        rt.set_column(3, &self.t);
        self.k * rt
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    pub fn focal(&self) -> f64 {
        self.k[(0, 0)]
    }

    /// Pixel coordinates, or `None` behind the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<Pixel> {
        let c = self.r * x + self.t;
        (c.z > 1e-9).then(|| {
            let h = self.k * c;
            Pixel::new(h.x / h.z, h.y / h.z)
        })
    }

    /// World-space direction of the ray through pixel `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        let f = self.focal();
        let d = Vector3::new((u - self.k[(0, 2)]) / f, (v - self.k[(1, 2)]) / f, 1.0);
        self.r.transpose() * d
    }

    pub fn check(&self) -> Result<(), SynthError> {
        if !(self.focal() > 0.0) {
            return Err(SynthError::InvalidSpec("focal length must be positive".into()));
        }
        if (self.r * self.r.transpose() - Mat3::identity()).amax() > 1e-12 {
            return Err(SynthError::InvalidSpec("rotation is not orthonormal".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

/// Lissajous path: `center + amplitude ⊙ sin(2π frequency ⊙ t / frames + phase)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub radius: f64,
    pub center: [f64; 3],
    pub amplitude: [f64; 3],
    pub frequency: [f64; 3],
    #[serde(default)]
    pub phase: [f64; 3],
}

impl Trajectory {
    pub fn at(&self, t: usize, frames: usize) -> Sphere {
        let s = t as f64 / frames as f64;
        let c = [0, 1, 2].map(|i| self.center[i] + self.amplitude[i] * (2.0 * PI * self.frequency[i] * s + self.phase[i]).sin());
        Sphere { center: c, radius: self.radius }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    /// Euclidean dilation radius of every silhouette, in pixels.
    pub dilation_px: f64,
    /// Per-camera probability that a frame's silhouette is lost (empty mask).
    pub dropout: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { dilation_px: 0.0, dropout: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub focal_px: f64,
    /// Distance of every camera from the vertical axis through the origin.
    pub camera_radius: f64,
    pub camera_height: f64,
    pub azimuths_deg: Vec<f64>,
    pub spheres: Vec<Trajectory>,
    pub noise: NoiseSpec,
    pub fps: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            frames: 200,
            focal_px: 600.0,
            camera_radius: 5.0,
            camera_height: 0.3,
            azimuths_deg: vec![0.0, 60.0],
            spheres: vec![
                Trajectory {
                    radius: 0.35,
                    center: [0.0, 0.0, 0.0],
                    amplitude: [1.0, 0.9, 0.6],
                    frequency: [1.0, 2.0, 3.0],
                    phase: [0.0, 0.5, 1.0],
                },
                Trajectory {
                    radius: 0.25,
                    center: [0.3, -0.2, 0.4],
                    amplitude: [0.8, 1.0, 0.5],
                    frequency: [3.0, 1.0, 2.0],
                    phase: [1.5, 0.0, 2.5],
                },
                Trajectory {
                    radius: 0.2,
                    center: [-0.3, 0.3, -0.4],
                    amplitude: [0.9, 0.7, 0.4],
                    frequency: [2.0, 3.0, 5.0],
                    phase: [2.0, 1.0, 0.3],
                },
            ],
            noise: NoiseSpec::default(),
            fps: 25.0,
        }
    }
}

impl SceneSpec {
    /// Default scene with the two cameras facing each other.
    pub fn facing() -> Self {
        Self { azimuths_deg: vec![0.0, 180.0], ..Self::default() }
    }

    /// Default scene with boundary dilation and frame dropout.
    pub fn noisy(dilation_px: f64, dropout: f64, seed: u64) -> Self {
        Self { noise: NoiseSpec { dilation_px, dropout, seed }, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub spec: SceneSpec,
    pub cameras: Vec<Camera>,
    /// `spheres[t]` are the spheres at frame `t`.
    pub spheres: Vec<Vec<Sphere>>,
}

impl Scene {
    pub fn frames(&self) -> usize {
        self.spheres.len()
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.spec.width, self.spec.height)
    }

    pub fn fundamental(&self, a: usize, b: usize) -> Result<Fundamental, crate::geometry::GeometryError> {
        fundamental_from_cameras(&self.cameras[a].projection(), &self.cameras[b].projection())
    }

    /// Renders every frame of camera `cam`, noise included.
    pub fn render_camera(&self, cam: usize) -> Vec<Mask> {
        let (w, h) = self.image_size();
        let noise = &self.spec.noise;
        (0..self.frames())
            .into_par_iter()
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ ((cam as u64) << 32) ^ t as u64);
                if noise.dropout > 0.0 && rng.gen::<f64>() < noise.dropout {
                    return Mask::new(w, h, t);
                }
                let m = render_silhouette(&self.cameras[cam], &self.spheres[t], (w, h), t);
                if noise.dilation_px > 0.0 {
                    dilate(&m, noise.dilation_px)
                } else {
                    m
                }
            })
            .collect()
    }
}

pub fn make_scene(spec: &SceneSpec) -> Result<Scene, SynthError> {
    let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
    if spec.azimuths_deg.len() < 2 {
        return bad("need at least two cameras");
    }
    if spec.spheres.is_empty() {
        return bad("need at least one sphere trajectory");
    }
    if spec.frames < 10 {
        return bad("need at least 10 frames");
    }
    if spec.width == 0 || spec.height == 0 {
        return bad("image size must be positive");
    }
    if !(spec.camera_radius > 0.0) || !(spec.focal_px > 0.0) {
        return bad("camera radius and focal length must be positive");
    }
    if spec.spheres.iter().any(|s| !(s.radius > 0.0)) {
        return bad("sphere radius must be positive");
    }
    if !(0.0..1.0).contains(&spec.noise.dropout) || spec.noise.dilation_px < 0.0 {
        return bad("noise parameters out of range");
    }
    let principal = ((spec.width as f64 - 1.0) / 2.0, (spec.height as f64 - 1.0) / 2.0);
    let cameras: Vec<Camera> = spec
        .azimuths_deg
        .iter()
        .map(|az| {
            let (s, c) = az.to_radians().sin_cos();
            let center = Vector3::new(spec.camera_radius * c, spec.camera_radius * s, spec.camera_height);
            Camera::look_at(center, Vector3::zeros(), spec.focal_px, principal)
        })
        .collect();
    for c in &cameras {
        c.check()?;
    }
    let spheres: Vec<Vec<Sphere>> =
        (0..spec.frames).map(|t| spec.spheres.iter().map(|tr| tr.at(t, spec.frames)).collect()).collect();
    let inside = spheres
        .iter()
        .filter(|frame| frame.iter().all(|s| cameras.iter().all(|c| sphere_in_view(c, s, spec.width, spec.height))))
        .count();
    if (inside as f64) < 0.95 * spec.frames as f64 {
        return bad("spheres leave the field of view in more than 5% of frames");
    }
    Ok(Scene { spec: spec.clone(), cameras, spheres })
}

/// Image-space bounding box of a sphere's silhouette, from the projected
/// corners of its bounding cube; `None` if any corner is behind the camera.
fn projected_bounds(cam: &Camera, s: &Sphere) -> Option<(f64, f64, f64, f64)> {
    let c = Vector3::from(s.center);
    let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..8 {
        let o = Vector3::new(
            if i & 1 == 0 { -1.0 } else { 1.0 },
            if i & 2 == 0 { -1.0 } else { 1.0 },
            if i & 4 == 0 { -1.0 } else { 1.0 },
        );
        let p = cam.project(&(c + o * s.radius))?;
        b = (b.0.min(p.x), b.1.min(p.y), b.2.max(p.x), b.3.max(p.y));
    }
    Some(b)
}

fn sphere_in_view(cam: &Camera, s: &Sphere, w: usize, h: usize) -> bool {
    let c = Vector3::from(s.center);
    let d = (c - cam.center()).norm();
    if d <= s.radius {
        return false;
    }
    let Some(p) = cam.project(&c) else { return false };
    // conservative silhouette radius
    let r = cam.focal() * (s.radius / d).asin().tan() * 1.5;
    p.x - r >= 0.0 && p.y - r >= 0.0 && p.x + r <= (w - 1) as f64 && p.y + r <= (h - 1) as f64
}

/// A pixel is foreground iff the ray through its center meets a sphere.
pub fn render_silhouette(cam: &Camera, spheres: &[Sphere], size: (usize, usize), frame: usize) -> Mask {
    let (w, h) = size;
    let mut m = Mask::new(w, h, frame);
    let origin = cam.center();
    for s in spheres {
        let c = Vector3::from(s.center);
        let oc = c - origin;
        if oc.norm() <= s.radius {
            // camera inside the sphere sees nothing but sphere
            for y in 0..h {
                for x in 0..w {
                    m.set(x, y, true);
                }
            }
            continue;
        }
        let (x0, y0, x1, y1) = match projected_bounds(cam, s) {
            Some(b) => b,
            None => (0.0, 0.0, (w - 1) as f64, (h - 1) as f64),
        };
        let xs = x0.floor().max(0.0) as usize;
        let ys = y0.floor().max(0.0) as usize;
        let xe = (x1.ceil().max(-1.0) as i64).min(w as i64 - 1);
        let ye = (y1.ceil().max(-1.0) as i64).min(h as i64 - 1);
        if xe < 0 || ye < 0 {
            continue;
        }
        let r2 = s.radius * s.radius;
        for y in ys..=ye as usize {
            for x in xs..=xe as usize {
                if m.get(x, y) {
                    continue;
                }
                let d = cam.ray(x as f64, y as f64);
                let along = oc.dot(&d);
                if along <= 0.0 {
                    continue;
                }
                // squared distance from the sphere center to the ray
                if oc.cross(&d).norm_squared() <= r2 * d.norm_squared() {
                    m.set(x, y, true);
                }
            }
        }
    }
    m
}

/// Binary dilation with a Euclidean disc of the given radius.
pub fn dilate(m: &Mask, radius: f64) -> Mask {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let r = radius.floor() as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= radius * radius)
        .collect();
    let mut out = m.clone();
    for (x, y) in m.boundary_pixels() {
        for &(dx, dy) in &offsets {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && nx < w && ny < h {
                out.set(nx as usize, ny as usize, true);
            }
        }
    }
    out
}

/// A ground-truth correspondence between frontier-point projections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPair {
    pub a: [f64; 2],
    pub b: [f64; 2],
    pub frame: usize,
}

impl FrontierPair {
    pub fn point_pair(&self) -> PointPair {
        PointPair::from_pixels(Pixel::new(self.a[0], self.a[1]), Pixel::new(self.b[0], self.b[1]))
    }
}

/// Maximum angle between the true epipolar line and a hull tangent at a point.
pub const FRONTIER_ANGLE_DEG: f64 = 1.0;
/// Maximum symmetric epipolar distance of a ground-truth pair.
pub const FRONTIER_MAX_DISTANCE: f64 = 0.01;
/// Minimum spacing of the kept ground-truth points in each image.
pub const FRONTIER_SPACING_PX: f64 = 15.0;

/// True if some supporting line of `hull` through `p` is within `tol` radians
/// of the line through `p` with direction `dir`.
pub fn near_supporting_line(hull: &ConvexHull, p: &Pixel, dir: &Pixel, tol: f64) -> bool {
    let c = hull.centroid();
    let base = c - p;
    if base.norm() < 1e-12 {
        return false;
    }
    let base = base.normalize();
    let angle_of = |d: &Pixel| (base.x * d.y - base.y * d.x).atan2(base.dot(d));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &hull.vertices {
        let d = v - p;
        if d.norm() < 1e-9 {
            continue;
        }
        let a = angle_of(&d);
        lo = lo.min(a);
        hi = hi.max(a);
    }
    if !lo.is_finite() {
        return false;
    }
    // supporting directions modulo π form [hi, lo + π]
    let (from, to) = (hi - tol, lo + PI + tol);
    if to < from {
        return false;
    }
    let phi = angle_of(dir);
    let phi = from + (phi - from).rem_euclid(PI);
    phi <= to
}

/// Candidate points of a frame whose true epipolar line (through the epipole
/// `e`) is within [`FRONTIER_ANGLE_DEG`] of a hull tangent.
fn frontier_candidates(mask: &Mask, epipole: &crate::geometry::HomogPoint) -> Vec<Pixel> {
    let Ok(hull) = convex_hull(mask) else { return Vec::new() };
    if hull.is_degenerate() {
        return Vec::new();
    }
    let Ok(cands) = candidate_points(mask, &hull) else { return Vec::new() };
    let tol = FRONTIER_ANGLE_DEG.to_radians();
    cands
        .into_iter()
        .map(|c| c.pos)
        .filter(|p| {
            let dir = match epipole.to_pixel() {
                Some(e) => p - e,
                None => Pixel::new(epipole.0.x, epipole.0.y),
            };
            dir.norm() > 1e-9 && near_supporting_line(&hull, p, &dir, tol)
        })
        .collect()
}

/// Ground-truth frontier pairs: per frame, candidate points near an epipolar
/// tangency in each image, paired across images when their symmetric
/// epipolar distance is below [`FRONTIER_MAX_DISTANCE`], then thinned
/// greedily (frame order, then distance) to [`FRONTIER_SPACING_PX`].
pub fn ground_truth_frontier_points(
    masks_a: &[Mask],
    masks_b: &[Mask],
    f: &Fundamental,
) -> Result<Vec<FrontierPair>, SynthError> {
    let e = f.epipole();
    let ep = f.epipole_prime();
    let per_frame: Vec<Vec<(f64, FrontierPair)>> = masks_a
        .par_iter()
        .zip(masks_b.par_iter())
        .enumerate()
        .map(|(t, (ma, mb))| {
            let qa = frontier_candidates(ma, &e);
            if qa.is_empty() {
                return Vec::new();
            }
            let qb = frontier_candidates(mb, &ep);
            let mut out = Vec::new();
            for a in &qa {
                for b in &qb {
                    if let Ok(d) = symmetric_epipolar_distance(f, &PointPair::from_pixels(*a, *b)) {
                        if d < FRONTIER_MAX_DISTANCE {
                            out.push((d, FrontierPair { a: [a.x, a.y], b: [b.x, b.y], frame: t }));
                        }
                    }
                }
            }
            out.sort_by(|x, y| x.0.total_cmp(&y.0));
            out
        })
        .collect();
    let mut kept: Vec<FrontierPair> = Vec::new();
    let far = |p: &[f64; 2], q: &[f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]) >= FRONTIER_SPACING_PX;
    for (_, cand) in per_frame.into_iter().flatten() {
        if kept.iter().all(|k| far(&k.a, &cand.a) && far(&k.b, &cand.b)) {
            kept.push(cand);
        }
    }
    if kept.is_empty() {
        return Err(SynthError::NoFrontierPoints);
    }
    Ok(kept)
}

pub fn frontier_to_csv(pairs: &[FrontierPair]) -> String {
    let mut s = String::from("frame,xa,ya,xb,yb\n");
    for p in pairs {
        s.push_str(&format!("{},{},{},{},{}\n", p.frame, p.a[0], p.a[1], p.b[0], p.b[1]));
    }
    s
}

pub fn frontier_from_csv(text: &str) -> Result<Vec<FrontierPair>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<&str> = line.split(',').collect();
        if v.len() != 5 {
            return Err(format!("line {}: expected 5 fields", i + 1));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("line {}: {e}", i + 1));
        out.push(FrontierPair {
            frame: v[0].trim().parse().map_err(|e| format!("line {}: {e}", i + 1))?,
            a: [num(v[1])?, num(v[2])?],
            b: [num(v[3])?, num(v[4])?],
        });
    }
    Ok(out)
}
