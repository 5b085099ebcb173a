mod common;

use common::{default_fixture, jacobian_gap, rig_with_pairs};
use motionbar::estimator::*;
use motionbar::geometry::*;
use motionbar::matcher::{MatchCandidate, MatchTable};
use motionbar::refine::GoldStandard;
use motionbar::silhouette::{CandidateLine, CandidatePoint};
use motionbar::synth::ground_truth_frontier_points;
use nalgebra::{DVector, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Points in a roughly unit-scale frame, as the LM code sees them.
fn normalized_points(pairs: &[PointPair]) -> Vec<(Vector2<f64>, Vector2<f64>)> {
    pairs
        .iter()
        .map(|p| {
            let (a, b) = (p.x.to_pixel().unwrap(), p.x_prime.to_pixel().unwrap());
            ((a - Vector2::new(320.0, 240.0)) / 300.0, (b - Vector2::new(320.0, 240.0)) / 300.0)
        })
        .collect()
}

fn normalized_f(f: &Fundamental) -> Mat3 {
    let t = Mat3::new(300.0, 0.0, 320.0, 0.0, 300.0, 240.0, 0.0, 0.0, 1.0);
    let m = t.transpose() * f.matrix() * t;
    m / m.norm()
}

#[test]
fn epipolar_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let (f, pairs) = rig_with_pairs(&mut rng, 12);
        let problem = EpipolarProblem::new(&normalized_f(&f), normalized_points(&pairs));
        let p = DVector::from_fn(7, |_, _| rng.gen_range(-0.05..0.05));
        let gap = jacobian_gap(&problem, &p);
        assert!(gap < 1e-5, "relative gap {gap:e}");
    }
}

#[test]
fn gold_standard_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..20 {
        let (f, pairs) = rig_with_pairs(&mut rng, 8);
        let problem = GoldStandard::new(&normalized_f(&f), normalized_points(&pairs));
        let mut p = problem.initial_params();
        for k in 0..p.len() {
            p[k] += rng.gen_range(-0.02..0.02);
        }
        let gap = jacobian_gap(&problem, &p);
        assert!(gap < 1e-5, "relative gap {gap:e}");
    }
}

#[test]
fn lm_keeps_exact_solutions() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let (f, pairs) = rig_with_pairs(&mut rng, 30);
        let out = lm_refine(&f, &pairs).unwrap();
        assert!(out.f.frobenius_distance(&f) < 1e-9);
    }
}

#[test]
fn lm_shrinks_a_small_perturbation_tenfold() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..10 {
        let (f, pairs) = rig_with_pairs(&mut rng, 30);
        let t = Mat3::new(300.0, 0.0, 320.0, 0.0, 300.0, 240.0, 0.0, 0.0, 1.0).try_inverse().unwrap();
        let noise = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let fn1 = normalized_f(&f) + noise * (1e-3 / noise.norm());
        let noisy = Fundamental::from_matrix(t.transpose() * fn1 * t).unwrap();
        let before = mean_symmetric_distance(&noisy, &pairs).unwrap();
        let after = mean_symmetric_distance(&lm_refine(&noisy, &pairs).unwrap().f, &pairs).unwrap();
        assert!(after * 10.0 <= before, "{before} -> {after}");
    }
}

fn candidate(pair: &PointPair, la: HomogLine, lb: HomogLine, frame: usize, corr: f64) -> MatchCandidate {
    let mk = |l: HomogLine, p: &HomogPoint| CandidateLine {
        line: l,
        touch: CandidatePoint { pos: p.to_pixel().unwrap() },
        normal_angle_deg: 0.0,
    };
    MatchCandidate { frame, index_a: 0, index_b: 0, line_a: mk(la, &pair.x), line_b: mk(lb, &pair.x_prime), correlation: corr }
}

#[test]
fn frontier_touch_points_are_inliers_of_the_true_f() {
    let fx = default_fixture();
    let truth = ground_truth_frontier_points(&fx.masks_a, &fx.masks_b, &fx.f).unwrap();
    let table = MatchTable {
        candidates: truth
            .iter()
            .map(|t| {
                let p = t.point_pair();
                candidate(&p, fx.f.line_in_a(&p.x_prime), fx.f.line_in_b(&p.x), t.frame, 0.95)
            })
            .collect(),
        frames: truth.iter().map(|t| t.frame).collect(),
    };
    let (n, mean) = score_hypothesis(&fx.f, &table, 1.0, 0.9);
    assert_eq!(n, truth.len());
    assert!(mean < 0.1);
    assert_eq!(symmetric_epipolar_inliers(&fx.f, &table, 0.1, 0.9).len(), truth.len());
}

#[test]
fn unrelated_line_triples_explain_few_touch_points() {
    let fx = default_fixture();
    let table = fx.offline.match_table(None, 1).unwrap();
    let strong: Vec<&MatchCandidate> = table.candidates.iter().filter(|c| c.correlation >= 0.9).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut counts = Vec::new();
    while counts.len() < 50 {
        // A lines and B lines from different, unrelated candidates
        let pick = |rng: &mut ChaCha8Rng| strong[rng.gen_range(0..strong.len())];
        let pairs = [0, 1, 2].map(|_| LinePair { l: pick(&mut rng).line_a.line, l_prime: pick(&mut rng).line_b.line });
        if let Ok(fit) = fundamental_from_line_pairs_with(&pairs, Concurrency::Unchecked) {
            counts.push(score_hypothesis(&fit.f, &table, 1.0, 0.9).0);
        }
    }
    counts.sort_unstable();
    assert!(counts[counts.len() / 2] <= 3, "median inliers {}", counts[counts.len() / 2]);
}

fn run_barcode(seed: u64, hypotheses: usize) -> (Fundamental, RansacReport) {
    let fx = default_fixture();
    let table = fx.offline.match_table(None, 1).unwrap();
    let truth: Vec<PointPair> =
        ground_truth_frontier_points(&fx.masks_a, &fx.masks_b, &fx.f).unwrap().iter().map(|p| p.point_pair()).collect();
    let cfg = RansacConfig { max_hypotheses: hypotheses, seed, ..Default::default() };
    ransac_fundamental(&table, &cfg, Some(&truth)).unwrap()
}

#[test]
fn ransac_reaches_half_a_pixel_on_the_clean_scene() {
    let (f, report) = run_barcode(1, 5000);
    f.check_invariants().unwrap();
    let best = *report.best_so_far().last().unwrap();
    assert!(best <= 0.5, "ground-truth error {best}");
    assert_eq!(report.lm_count, 5);
    assert!(report.best_so_far().windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn ransac_is_independent_of_worker_count() {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_barcode(7, 2000))
    };
    let (f1, r1) = run(1);
    let (f3, r3) = run(3);
    assert_eq!(f1, f3);
    assert_eq!(r1.to_csv(), r3.to_csv());
}

#[test]
fn sinha_baseline_emits_valid_fundamentals() {
    let fx = default_fixture();
    let table = fx.offline.match_table(None, 1).unwrap();
    let cfg = RansacConfig { max_hypotheses: 2000, seed: 3, ..Default::default() };
    let (f, report) = fx.offline.estimate(&table, Method::Sinha, &cfg, None).unwrap();
    f.check_invariants().unwrap();
    assert_eq!(report.method, Method::Sinha);
    assert_eq!(report.precompute_cost_iters, 0);
    assert_eq!(report.lm_count, 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn lm_never_increases_its_objective(seed in any::<u64>(), noise in 0.0..2.0f64, scale in -4.0..-1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, mut pairs) = rig_with_pairs(&mut rng, 15);
        for p in &mut pairs {
            let b = p.x_prime.to_pixel().unwrap();
            *p = PointPair::from_pixels(p.x.to_pixel().unwrap(), b + Vector2::new(rng.gen_range(-noise..=noise), rng.gen_range(-noise..=noise)));
        }
        let t = Mat3::new(300.0, 0.0, 320.0, 0.0, 300.0, 240.0, 0.0, 0.0, 1.0).try_inverse().unwrap();
        let jitter = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
        let start = Fundamental::from_matrix(t.transpose() * (normalized_f(&f) + jitter * 10f64.powf(scale)) * t);
        prop_assume!(start.is_ok());
        let start = start.unwrap();
        let out = lm_refine(&start, &pairs).unwrap();
        prop_assert!(out.final_cost <= out.initial_cost);
        prop_assert!(epipolar_cost(&out.f, &pairs) <= epipolar_cost(&start, &pairs));
        prop_assert!(out.f.check_invariants().is_ok());
    }
}
