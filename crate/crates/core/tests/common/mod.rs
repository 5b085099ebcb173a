#![allow(dead_code)]

use motionbar::barcode::{barcode_correlation, LineBarcoder, View, BAND};
use motionbar::geometry::{fundamental_from_cameras, Fundamental, HomogLine, LinePair, Mat3, PointPair};
use motionbar::lm::LeastSquares;
use motionbar::pipeline::Offline;
use motionbar::refine::{RefineConfig, SpatialPenalty, COST_TIE};
use motionbar::silhouette::{convex_hull, tangent_lines, Mask, Pixel};
use motionbar::synth::{make_scene, Scene, SceneSpec};
use nalgebra::{DMatrix, DVector, Matrix3x4, Rotation3, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

/// Two random cameras looking at the unit cube around the origin.
pub fn random_rig(rng: &mut ChaCha8Rng) -> (Matrix3x4<f64>, Matrix3x4<f64>) {
    let mut cam = || {
        let f = rng.gen_range(400.0..900.0);
        let k = Mat3::new(f, 0.0, rng.gen_range(280.0..360.0), 0.0, f, rng.gen_range(200.0..280.0), 0.0, 0.0, 1.0);
        let r = Rotation3::from_euler_angles(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
            rng.gen_range(-0.3..0.3),
        );
        let depth = rng.gen_range(4.0..8.0);
        let t = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), depth);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(r.matrix());
        rt.set_column(3, &t);
        k * rt
    };
    (cam(), cam())
}

pub fn project(p: &Matrix3x4<f64>, x: &Vector3<f64>) -> Pixel {
    let h = p * x.push(1.0);
    Pixel::new(h.x / h.z, h.y / h.z)
}

pub fn random_point(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Random rig with a well-defined F and `n` exact correspondences.
pub fn rig_with_pairs(rng: &mut ChaCha8Rng, n: usize) -> (Fundamental, Vec<PointPair>) {
    loop {
        let (pa, pb) = random_rig(rng);
        let Ok(f) = fundamental_from_cameras(&pa, &pb) else { continue };
        let pairs = (0..n)
            .map(|_| {
                let x = random_point(rng);
                PointPair::from_pixels(project(&pa, &x), project(&pb, &x))
            })
            .collect();
        return (f, pairs);
    }
}

pub struct Fixture {
    pub scene: Scene,
    pub masks_a: Vec<Mask>,
    pub masks_b: Vec<Mask>,
    pub f: Fundamental,
    pub offline: Offline,
}

/// Default scene with its offline phase, computed once per test binary.
pub fn default_fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let scene = make_scene(&SceneSpec::default()).unwrap();
        let masks_a = scene.render_camera(0);
        let masks_b = scene.render_camera(1);
        let f = scene.fundamental(0, 1).unwrap();
        let offline = Offline::compute(&masks_a, &masks_b, 2.0).unwrap();
        Fixture { scene, masks_a, masks_b, f, offline }
    })
}

/// Three exact epipolar line pairs through the given correspondences.
pub fn line_triple(f: &Fundamental, pairs: &[PointPair]) -> [LinePair; 3] {
    let e = f.epipole();
    [0, 1, 2].map(|i| LinePair { l: HomogLine(e.0.cross(&pairs[i].x.0)), l_prime: f.line_in_b(&pairs[i].x) })
}

/// Brute force: some foreground pixel center within the band of the line.
pub fn mask_oracle(line: &HomogLine, mask: &Mask) -> bool {
    let Ok(u) = line.unit() else { return false };
    (0..mask.height()).any(|y| {
        (0..mask.width()).any(|x| mask.get(x, y) && (u.0.x * x as f64 + u.0.y * y as f64 + u.0.z).abs() <= BAND)
    })
}

/// Lines that mostly graze the silhouettes: tangents shifted by up to 1 px,
/// axis-aligned lines on half-pixel offsets, and arbitrary lines.
pub fn random_line(rng: &mut ChaCha8Rng, mask: &Mask) -> HomogLine {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    match rng.gen_range(0..4) {
        0 => {
            let p = Pixel::new(rng.gen_range(0.0..w), rng.gen_range(0.0..h));
            HomogLine::through_pixel_at_angle(p, rng.gen_range(0.0..std::f64::consts::PI))
        }
        1 => HomogLine::new(1.0, 0.0, -(rng.gen_range(0..mask.width()) as f64 + rng.gen_range(-2..=2) as f64 * 0.25)),
        2 => HomogLine::new(0.0, 1.0, -(rng.gen_range(0..mask.height()) as f64 + rng.gen_range(-2..=2) as f64 * 0.25)),
        _ => match convex_hull(mask) {
            Ok(hull) if !hull.is_degenerate() => {
                let lines = tangent_lines(&hull, 2.0).unwrap();
                let l = lines[rng.gen_range(0..lines.len())].line;
                HomogLine::new(l.0.x, l.0.y, l.0.z + rng.gen_range(-1.0..1.0))
            }
            _ => HomogLine::new(1.0, 1.0, -rng.gen_range(0.0..w + h)),
        },
    }
}

/// Independent grid search: plain loops over every offset pair, first
/// strict improvement wins after the tie rule.
pub fn grid_oracle<B: LineBarcoder>(pair: &LinePair, pts: &PointPair, barcodes: &B, cfg: &RefineConfig) -> (usize, usize, f64) {
    let n = cfg.angle_samples;
    let offsets: Vec<f64> = (0..n).map(|i| -cfg.theta_deg + 2.0 * cfg.theta_deg * i as f64 / (n - 1) as f64).collect();
    let (xa, xb) = (pts.x.to_pixel().unwrap(), pts.x_prime.to_pixel().unwrap());
    let rot = |l: &HomogLine, p: Vector2<f64>, d: f64| {
        let dir = (-l.0.x).atan2(l.0.y) + d.to_radians();
        HomogLine::new(-dir.sin(), dir.cos(), dir.sin() * p.x - dir.cos() * p.y)
    };
    let mut cells = Vec::new();
    for (i, di) in offsets.iter().enumerate() {
        let ba = barcodes.barcode(View::A, &rot(&pair.l, xa, *di));
        for (j, dj) in offsets.iter().enumerate() {
            let bb = barcodes.barcode(View::B, &rot(&pair.l_prime, xb, *dj));
            let corr = barcode_correlation(&ba, &bb).map(|c| c.value).unwrap_or(0.0);
            let penalty = match cfg.penalty {
                SpatialPenalty::Linear => (di.abs() + dj.abs()) / cfg.theta_deg,
                SpatialPenalty::Window => 0.0,
            };
            cells.push((i, j, penalty - corr, di.abs() + dj.abs()));
        }
    }
    let min = cells.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let best = cells
        .iter()
        .filter(|c| c.2 <= min + COST_TIE)
        .min_by(|a, b| a.3.partial_cmp(&b.3).unwrap().then((a.0, a.1).cmp(&(b.0, b.1))))
        .unwrap();
    (best.0, best.1, best.2)
}

/// Largest column-wise relative gap between the analytic Jacobian and
/// central differences.
pub fn jacobian_gap<P: LeastSquares>(problem: &P, p: &DVector<f64>) -> f64 {
    let j = problem.jacobian(p);
    let h = 1e-6;
    let mut num = DMatrix::zeros(j.nrows(), j.ncols());
    for k in 0..p.len() {
        let (mut pp, mut pm) = (p.clone(), p.clone());
        pp[k] += h;
        pm[k] -= h;
        num.set_column(k, &((problem.residuals(&pp) - problem.residuals(&pm)) / (2.0 * h)));
    }
    (0..j.ncols())
        .map(|k| (j.column(k) - num.column(k)).norm() / j.column(k).norm().max(1e-8))
        .fold(0.0, f64::max)
}
