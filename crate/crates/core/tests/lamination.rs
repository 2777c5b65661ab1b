use std::f64::consts::{PI, TAU};

use chamberflow::diffusion::DiffusionConfig;
use chamberflow::group::random_gaussian_element;
use chamberflow::lamination::{
    all_test_functions, build_lift, build_lift_from_mark, disk_frame, haar_control,
    invariance_deficit, parse_test_element, radial_chamber_field, right_action, schottky_reduce,
    test_functions, transverse_stationarity_residual, FiberChoice, LiftedSampleSet, QuotientPoint,
    SchottkyGroup, TEST_FUNCTION_COUNT,
};
use chamberflow::{Error, GroupElement, GroupId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn schottky() -> SchottkyGroup {
    SchottkyGroup::preset("schottky-a").unwrap()
}

fn a(s: f64) -> GroupElement {
    GroupElement::from_rows(GroupId::Sl2, &[(s / 2.0).exp(), 0.0, 0.0, (-s / 2.0).exp()]).unwrap()
}

fn k(phi: f64) -> GroupElement {
    GroupElement::rotation(GroupId::Sl2, 0, 1, phi)
}

/// Frame at hyperbolic distance `d` from the basepoint, in a random direction and orientation.
fn random_frame(rng: &mut ChaCha8Rng, max_distance: f64) -> GroupElement {
    k(rng.random_range(0.0..PI))
        .mul(&a(rng.random_range(0.0..max_distance)))
        .mul(&k(rng.random_range(0.0..PI)))
}

/// Distance between two matrices modulo the sign ambiguity M = {+-I},
/// relative to their size.
fn frame_gap(g: &GroupElement, h: &GroupElement) -> f64 {
    let neg = GroupElement::from_rows(GroupId::Sl2, &[-1.0, 0.0, 0.0, -1.0]).unwrap();
    let scale = g.matrix().amax().max(1.0);
    g.max_abs_diff(h).min(g.max_abs_diff(&neg.mul(h))) / scale
}

#[test]
fn reduction_is_idempotent_bitwise() {
    let gamma = schottky();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..1000 {
        let g = if i % 2 == 0 {
            random_gaussian_element(GroupId::Sl2, &mut rng)
        } else {
            random_frame(&mut rng, 40.0)
        };
        let once = schottky_reduce(&g, &gamma).unwrap();
        let twice = schottky_reduce(&once.representative, &gamma).unwrap();
        assert_eq!(twice.representative, once.representative);
        assert!(twice.word.is_empty());
    }
}

#[test]
fn reduction_is_invariant_under_the_group() {
    let gamma = schottky();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let letters = ['A', 'a', 'B', 'b'];
    let mut worst: f64 = 0.0;
    for _ in 0..300 {
        let g = random_frame(&mut rng, 12.0);
        let word: String = (0..rng.random_range(1..6))
            .map(|_| letters[rng.random_range(0..4)])
            .collect();
        let gam = gamma.word_element(&word).unwrap();
        let q = schottky_reduce(&g, &gamma).unwrap();
        let r = schottky_reduce(&gam.mul(&g), &gamma).unwrap();
        worst = worst.max(frame_gap(&q.representative, &r.representative));
    }
    // Exact only up to round-off: the translate is reduced through different products.
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn reduced_points_lie_in_the_fundamental_domain() {
    let gamma = schottky();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let q = schottky_reduce(&random_frame(&mut rng, 60.0), &gamma).unwrap();
        let z = chamberflow::diffusion::upper_half_plane_point(&q.representative);
        assert!(gamma.in_fundamental_domain(z));
    }
}

#[test]
fn right_action_laws() {
    let gamma = schottky();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let unipotent = |rng: &mut ChaCha8Rng| {
        let s = rng.random_range(-2.0..2.0);
        if rng.random::<bool>() {
            GroupElement::from_rows(GroupId::Sl2, &[1.0, 0.0, s, 1.0]).unwrap()
        } else {
            GroupElement::from_rows(GroupId::Sl2, &[1.0, s, 0.0, 1.0]).unwrap()
        }
    };
    let id = GroupElement::identity(GroupId::Sl2);
    for _ in 0..1000 {
        let h = random_frame(&mut rng, 15.0);
        let q = schottky_reduce(&h, &gamma).unwrap();
        assert_eq!(
            right_action(&q, &id, &gamma).unwrap().representative,
            q.representative
        );

        let (g1, g2) = (unipotent(&mut rng), unipotent(&mut rng));
        let stepwise = right_action(&right_action(&q, &g1, &gamma).unwrap(), &g2, &gamma).unwrap();
        let direct = right_action(&q, &g1.mul(&g2), &gamma).unwrap();
        assert!(frame_gap(&stepwise.representative, &direct.representative) < 1e-8);

        let g = random_gaussian_element(GroupId::Sl2, &mut rng);
        let through = right_action(&q, &g, &gamma).unwrap();
        let straight = schottky_reduce(&h.mul(&g), &gamma).unwrap();
        assert!(frame_gap(&through.representative, &straight.representative) < 1e-8);
    }
}

#[test]
fn radial_field_is_equivariant_under_the_positive_chamber() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    // exp(rho / 4)
    let a0 = parse_test_element("a:0.25").unwrap();
    for _ in 0..100 {
        let x = k(rng.random_range(0.0..PI)).mul(&a(rng.random_range(0.1..20.0)));
        let lhs = radial_chamber_field(&x).unwrap().mul(&a0);
        let rhs = radial_chamber_field(&x.mul(&a0)).unwrap();
        assert!(frame_gap(&lhs, &rhs) < 1e-8, "{}", frame_gap(&lhs, &rhs));
        // Constant on K-cosets.
        let moved = radial_chamber_field(&x.mul(&k(rng.random_range(0.0..PI)))).unwrap();
        assert!(frame_gap(&radial_chamber_field(&x).unwrap(), &moved) < 1e-8);
    }
}

fn lift(n: u64, count: usize, seed: u64) -> LiftedSampleSet {
    let cfg = DiffusionConfig::new(GroupId::Sl2, 0.02, seed, count, n as f64).unwrap();
    build_lift(&cfg, &schottky(), n, count, 1).unwrap()
}

#[test]
fn lift_with_n_one_is_the_basepoint_frame() {
    let set = lift(1, 50, 3);
    let id = GroupElement::identity(GroupId::Sl2);
    for s in &set.samples {
        assert_eq!(
            s.point,
            QuotientPoint {
                representative: id.clone(),
                word: String::new()
            }
        );
        assert_eq!(s.mark.angle(), set.initial_mark);
    }
}

#[test]
fn lift_is_deterministic_and_seed_dependent() {
    let (s1, s2, s3) = (lift(8, 200, 3), lift(8, 200, 3), lift(8, 200, 4));
    assert_eq!(s1, s2);
    assert_ne!(s1.samples, s3.samples);
    let gamma = schottky();
    for set in [&s1, &s3] {
        for s in &set.samples {
            let z = chamberflow::diffusion::upper_half_plane_point(&s.point.representative);
            assert!(gamma.in_fundamental_domain(z));
            assert!(s.time < 8);
        }
    }
}

#[test]
fn lift_halves_agree() {
    let set = lift(64, 4000, 21);
    let values: Vec<[f64; TEST_FUNCTION_COUNT]> = set
        .samples
        .iter()
        .map(|s| test_functions(&s.point.representative, &s.mark))
        .collect();
    let (first, second) = values.split_at(values.len() / 2);
    for f in 0..TEST_FUNCTION_COUNT {
        let stats = |half: &[[f64; TEST_FUNCTION_COUNT]]| {
            let n = half.len() as f64;
            let m = half.iter().map(|v| v[f]).sum::<f64>() / n;
            let var = half.iter().map(|v| (v[f] - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, var / n)
        };
        let ((m1, v1), (m2, v2)) = (stats(first), stats(second));
        assert!(
            (m1 - m2).abs() <= 3.0 * (v1 + v2).sqrt(),
            "function {f}: {m1} vs {m2}"
        );
    }
}

#[test]
fn deficit_edge_cases() {
    let gamma = schottky();
    let set = lift(8, 300, 5);
    let id = GroupElement::identity(GroupId::Sl2);
    assert_eq!(
        invariance_deficit(&set, &id, &gamma, &all_test_functions(), 1)
            .unwrap()
            .max,
        0.0
    );
    assert!(matches!(
        invariance_deficit(&set, &id, &gamma, &[], 1),
        Err(Error::Usage(_))
    ));
    assert!(matches!(
        invariance_deficit(&set, &id, &gamma, &[8], 1),
        Err(Error::Usage(_))
    ));
}

#[test]
fn haar_control_is_invariant_and_skewed_fiber_is_not() {
    let gamma = schottky();
    let fs = all_test_functions();
    let haar = haar_control(&gamma, 10_000, 9, FiberChoice::Uniform, 1).unwrap();
    let skewed = haar_control(&gamma, 10_000, 9, FiberChoice::Fixed(0.0), 1).unwrap();
    for spec in ["a:0.25", "n:0.25", "k:0.785"] {
        let g = parse_test_element(spec).unwrap();
        let d = invariance_deficit(&haar, &g, &gamma, &fs, 1).unwrap();
        assert!(d.max <= 3.0, "{spec}: {:?}", d.per_function);
    }
    let d = invariance_deficit(
        &skewed,
        &parse_test_element("k:0.785").unwrap(),
        &gamma,
        &fs,
        1,
    )
    .unwrap();
    assert!(d.max > 10.0, "{:?}", d.per_function);
}

#[test]
fn haar_samples_cover_the_truncated_domain() {
    let gamma = schottky();
    let haar = haar_control(&gamma, 2000, 9, FiberChoice::Uniform, 1).unwrap();
    let mut marks = [0usize; 4];
    for s in &haar.samples {
        let f = disk_frame(&s.point.representative);
        assert!(f.distance <= chamberflow::lamination::HAAR_RADIUS + 1e-9);
        marks[(s.mark.angle() / TAU * 4.0) as usize % 4] += 1;
    }
    assert!(marks.iter().all(|&m| m > 400), "{marks:?}");
}

#[test]
fn stationarity_residual_vanishes_at_a_fixed_boundary_point() {
    let gamma = SchottkyGroup::preset("cyclic").unwrap();
    let cfg = DiffusionConfig::new(GroupId::Sl2, 0.02, 3, 500, 8.0).unwrap();
    let set = build_lift_from_mark(&cfg, &gamma, 8, 500, 0.0, 1).unwrap();
    assert!(set.samples.iter().any(|s| !s.point.word.is_empty()));
    assert_eq!(
        transverse_stationarity_residual(&set, &gamma, 16, 1).unwrap(),
        0.0
    );
    assert!(matches!(
        transverse_stationarity_residual(&set, &gamma, 4, 1),
        Err(Error::Usage(_))
    ));
}

#[test]
fn stationarity_residual_is_at_noise_level() {
    let gamma = schottky();
    let full = lift(64, 20_000, 8);
    let half = LiftedSampleSet {
        samples: full.samples[..10_000].to_vec(),
        ..full.clone()
    };
    let r_half = transverse_stationarity_residual(&half, &gamma, 16, 1).unwrap();
    let r_full = transverse_stationarity_residual(&full, &gamma, 16, 1).unwrap();
    assert!(r_half <= 3.0, "{r_half}");
    assert!(r_full / r_half <= 1.5, "{r_half} -> {r_full}");
}

#[test]
fn unknown_preset_and_elements_are_usage_errors() {
    assert!(matches!(SchottkyGroup::preset("x"), Err(Error::Usage(_))));
    assert!(matches!(parse_test_element("q:1"), Err(Error::Usage(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reduction_fixes_reduced_points(phi in 0.0..PI, d in 0.0..50.0f64, psi in 0.0..PI) {
        let gamma = schottky();
        let q = schottky_reduce(&k(phi).mul(&a(d)).mul(&k(psi)), &gamma).unwrap();
        let again = schottky_reduce(&q.representative, &gamma).unwrap();
        prop_assert_eq!(again.representative, q.representative);
    }

    #[test]
    fn reduction_never_moves_away_from_the_basepoint(phi in 0.0..PI, d in 0.0..50.0f64) {
        let gamma = schottky();
        let g = k(phi).mul(&a(d));
        let q = schottky_reduce(&g, &gamma).unwrap();
        prop_assert!(disk_frame(&q.representative).distance <= disk_frame(&g).distance + 1e-9);
    }

    #[test]
    fn test_functions_are_bounded(phi in 0.0..PI, d in 0.0..30.0f64, psi in 0.0..PI, m in 0.0..TAU) {
        let g = k(phi).mul(&a(d)).mul(&k(psi));
        let mark = chamberflow::diffusion::BoundaryPoint::new(m).unwrap();
        for v in test_functions(&g, &mark) {
            prop_assert!(v.abs() <= 1.0 + 1e-12);
        }
    }
}
