mod common;

use common::{default_fixture, project, random_point};
use motionbar::geometry::{symmetric_epipolar_distance, Mat3, PointPair};
use motionbar::silhouette::Pixel;
use motionbar::synth::*;
use nalgebra::{Matrix2, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Outline conic of a sphere: `q(x) = xᵀ G x <= 0` inside the silhouette.
fn outline_conic(cam: &Camera, s: &Sphere) -> Mat3 {
    let c = cam.r * Vector3::from(s.center) + cam.t;
    let q = c * c.transpose() - Mat3::identity() * (c.norm_squared() - s.radius * s.radius);
    let kinv = cam.k.try_inverse().unwrap();
    -(kinv.transpose() * q * kinv)
}

/// Area of the ellipse `xᵀMx + 2bᵀx + c <= 0`.
fn ellipse_area(g: &Mat3) -> f64 {
    let m = Matrix2::new(g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]);
    let b = Vector2::new(g[(0, 2)], g[(1, 2)]);
    assert!(m.determinant() > 0.0 && m[(0, 0)] > 0.0, "outline is not an ellipse");
    PI * (b.dot(&(m.try_inverse().unwrap() * b)) - g[(2, 2)]) / m.determinant().sqrt()
}

/// First-order distance from a pixel to the conic outline.
fn outline_distance(g: &Mat3, p: &Pixel) -> f64 {
    let x = Vector3::new(p.x, p.y, 1.0);
    let grad = 2.0 * (g * x);
    (x.dot(&(g * x))).abs() / grad.xy().norm()
}

#[test]
fn scene_cameras_are_valid() {
    let scene = make_scene(&SceneSpec::default()).unwrap();
    for c in &scene.cameras {
        c.check().unwrap();
        assert!(c.focal() > 0.0);
        assert!((c.r * c.r.transpose() - Mat3::identity()).amax() < 1e-12);
    }
    assert_eq!(scene.frames(), 200);
}

#[test]
fn ground_truth_f_annihilates_projected_points() {
    let scene = make_scene(&SceneSpec::default()).unwrap();
    let f = scene.fundamental(0, 1).unwrap();
    f.check_invariants().unwrap();
    let (pa, pb) = (scene.cameras[0].projection(), scene.cameras[1].projection());
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..100 {
        let x = random_point(&mut rng);
        let d = symmetric_epipolar_distance(&f, &PointPair::from_pixels(project(&pa, &x), project(&pb, &x))).unwrap();
        assert!(d < 1e-9, "{d}");
    }
    // in image-normalized coordinates the two nonzero singular values are
    // within two orders of magnitude
    let t = Mat3::new(320.0, 0.0, 319.5, 0.0, 320.0, 239.5, 0.0, 0.0, 1.0);
    let sv = (t.transpose() * f.matrix() * t).svd(false, false).singular_values;
    let mut sv: Vec<f64> = sv.iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    assert!(sv[1] / sv[0] > 1e-2, "{sv:?}");
}

#[test]
fn facing_cameras_see_each_other_near_the_center() {
    let scene = make_scene(&SceneSpec::facing()).unwrap();
    let f = scene.fundamental(0, 1).unwrap();
    let center = Pixel::new(319.5, 239.5);
    for e in [f.epipole(), f.epipole_prime()] {
        let p = e.to_pixel().unwrap();
        assert!((p - center).norm() < 40.0, "epipole at {p:?}");
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = SceneSpec::default();
    spec.spheres[0].radius = 0.0;
    assert!(matches!(make_scene(&spec), Err(SynthError::InvalidSpec(_))));
    let spec = SceneSpec { frames: 5, ..SceneSpec::default() };
    assert!(matches!(make_scene(&spec), Err(SynthError::InvalidSpec(_))));
    let spec = SceneSpec { azimuths_deg: vec![0.0], ..SceneSpec::default() };
    assert!(matches!(make_scene(&spec), Err(SynthError::InvalidSpec(_))));
    let spec = SceneSpec { camera_radius: 1.0, ..SceneSpec::default() };
    assert!(matches!(make_scene(&spec), Err(SynthError::InvalidSpec(_))));
}

fn axis_camera() -> Camera {
    Camera::look_at(Vector3::new(5.0, 0.0, 0.0), Vector3::zeros(), 600.0, (100.0, 80.0))
}

#[test]
fn centered_sphere_renders_the_analytic_disc() {
    let cam = axis_camera();
    let s = Sphere { center: [0.0, 0.0, 0.0], radius: 0.5 };
    let m = render_silhouette(&cam, &[s], (201, 161), 0);
    // disc radius f·r/√(d²−r²)
    let rho = 600.0 * 0.5 / (25.0f64 - 0.25).sqrt();
    let mut far = 0.0f64;
    for (x, y) in m.boundary_pixels() {
        far = far.max((x as f64 - 100.0).hypot(y as f64 - 80.0));
    }
    assert!((far - rho).abs() <= 0.5, "boundary radius {far}, analytic {rho}");
    assert!(m.get(100, 80));
    let area = PI * rho * rho;
    assert!((m.count() as f64 - area).abs() / area < 0.02);
}

#[test]
fn sphere_behind_the_camera_is_invisible() {
    let cam = axis_camera();
    let s = Sphere { center: [8.0, 0.0, 0.0], radius: 0.5 };
    assert!(render_silhouette(&cam, &[s], (201, 161), 0).is_empty());
}

#[test]
fn disjoint_spheres_add_up() {
    let cam = axis_camera();
    let s1 = Sphere { center: [0.0, 0.6, 0.0], radius: 0.3 };
    let s2 = Sphere { center: [0.0, -0.6, 0.1], radius: 0.25 };
    let size = (201, 161);
    let both = render_silhouette(&cam, &[s1, s2], size, 0).count();
    let sum = render_silhouette(&cam, &[s1], size, 0).count() + render_silhouette(&cam, &[s2], size, 0).count();
    assert_eq!(both, sum);
}

#[test]
fn mask_areas_match_analytic_ellipses() {
    let fx = default_fixture();
    let size = fx.scene.image_size();
    let mut checked = 0;
    for (cam, masks) in [(0, &fx.masks_a), (1, &fx.masks_b)] {
        let camera = &fx.scene.cameras[cam];
        for t in (0..fx.scene.frames()).step_by(7) {
            let spheres = &fx.scene.spheres[t];
            let singles: usize = spheres.iter().map(|s| render_silhouette(camera, &[*s], size, t).count()).sum();
            if singles != masks[t].count() {
                continue; // overlapping silhouettes
            }
            let area: f64 = spheres.iter().map(|s| ellipse_area(&outline_conic(camera, s))).sum();
            let got = masks[t].count() as f64;
            assert!((got - area).abs() / area < 0.02, "camera {cam} frame {t}: {got} vs {area}");
            checked += 1;
        }
    }
    assert!(checked >= 20);
}

#[test]
fn rendering_is_deterministic() {
    for spec in [SceneSpec { frames: 20, ..SceneSpec::default() }, SceneSpec { frames: 20, ..SceneSpec::noisy(1.5, 0.2, 9) }] {
        let a = make_scene(&spec).unwrap();
        let b = make_scene(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.render_camera(0), b.render_camera(0));
        assert_eq!(a.render_camera(1), b.render_camera(1));
    }
}

#[test]
fn dilation_only_grows_silhouettes() {
    let clean = make_scene(&SceneSpec { frames: 20, ..SceneSpec::default() }).unwrap();
    let noisy = make_scene(&SceneSpec { frames: 20, ..SceneSpec::noisy(1.5, 0.0, 3) }).unwrap();
    for (c, n) in clean.render_camera(0).iter().zip(noisy.render_camera(0)) {
        assert!(n.count() > c.count());
        for y in 0..c.height() {
            for x in 0..c.width() {
                assert!(!c.get(x, y) || n.get(x, y));
            }
        }
    }
}

#[test]
fn frontier_pairs_are_epipolar_thinned_and_on_the_outline() {
    let fx = default_fixture();
    let pairs = ground_truth_frontier_points(&fx.masks_a, &fx.masks_b, &fx.f).unwrap();
    assert!(pairs.len() >= 10, "{} pairs", pairs.len());
    for (i, p) in pairs.iter().enumerate() {
        assert!(symmetric_epipolar_distance(&fx.f, &p.point_pair()).unwrap() < 0.01);
        for q in &pairs[..i] {
            assert!((p.a[0] - q.a[0]).hypot(p.a[1] - q.a[1]) >= 15.0);
            assert!((p.b[0] - q.b[0]).hypot(p.b[1] - q.b[1]) >= 15.0);
        }
        for (cam, xy) in [(0, p.a), (1, p.b)] {
            let camera = &fx.scene.cameras[cam];
            let d = fx.scene.spheres[p.frame]
                .iter()
                .map(|s| outline_distance(&outline_conic(camera, s), &Pixel::new(xy[0], xy[1])))
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 1.0, "frame {} camera {cam}: {d} px off the outline", p.frame);
        }
    }
}

#[test]
fn frontier_csv_round_trips() {
    let fx = default_fixture();
    let pairs = ground_truth_frontier_points(&fx.masks_a, &fx.masks_b, &fx.f).unwrap();
    assert_eq!(frontier_from_csv(&frontier_to_csv(&pairs)).unwrap(), pairs);
    assert!(frontier_from_csv("frame,xa,ya,xb,yb\n1,2,3\n").is_err());
}
