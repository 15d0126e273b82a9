use proptest::prelude::*;
use thermoform::maps::{c2_distance, eval_orbit, potential_phi, IntervalMap};

fn family() -> impl Strategy<Value = IntervalMap> {
    prop_oneof![
        (1.42f64..=2.0).prop_map(|s| IntervalMap::tent(s).unwrap()),
        (0.2f64..0.8).prop_map(|v| IntervalMap::skew_tent(v).unwrap()),
        (3.5f64..=4.0).prop_map(|a| IntervalMap::logistic(a).unwrap()),
        Just(IntervalMap::chebyshev()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn long_orbits_never_escape(map in family(), x in 0.0f64..=1.0) {
        let orbit = eval_orbit(&map, x, 10_000).unwrap();
        prop_assert_eq!(orbit.len(), 10_001);
        prop_assert!(orbit.iter().all(|y| (0.0..=1.0).contains(y)));
    }

    #[test]
    fn potential_vanishes_at_zero_and_is_linear_in_t(map in family(), x in 0.0f64..=1.0, t1 in -3.0f64..3.0, t2 in -3.0f64..3.0) {
        prop_assume!(map.near_critical(x).is_none());
        prop_assert_eq!(potential_phi(&map, 0.0, x).unwrap(), 0.0);
        let sum = potential_phi(&map, t1 + t2, x).unwrap();
        let parts = potential_phi(&map, t1, x).unwrap() + potential_phi(&map, t2, x).unwrap();
        prop_assert!((sum - parts).abs() <= 1e-12 * (1.0 + sum.abs()));
    }

    #[test]
    fn c2_distance_is_a_pseudometric(a in 3.5f64..=4.0, b in 3.5f64..=4.0, c in 3.5f64..=4.0) {
        let (fa, fb, fc) = (IntervalMap::logistic(a).unwrap(), IntervalMap::logistic(b).unwrap(), IntervalMap::logistic(c).unwrap());
        let g = 200;
        prop_assert_eq!(c2_distance(&fa, &fa, g), 0.0);
        prop_assert_eq!(c2_distance(&fa, &fb, g), c2_distance(&fb, &fa, g));
        prop_assert!(c2_distance(&fa, &fc, g) <= c2_distance(&fa, &fb, g) + c2_distance(&fb, &fc, g) + 1e-12);
    }

    #[test]
    fn inverse_branches_are_right_inverses(map in family(), y in 0.0f64..=1.0) {
        for s in 0..map.branch_count() {
            let (lo, hi) = map.branch_image(s);
            let y = lo + (hi - lo) * y;
            prop_assert!((map.eval(map.inverse(s, y)) - y).abs() < 1e-9);
        }
    }
}

#[test]
fn orbit_examples() {
    let orbit = eval_orbit(&IntervalMap::tent(2.0).unwrap(), 1.0 / 3.0, 2).unwrap();
    for (a, b) in orbit.iter().zip([1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(eval_orbit(&IntervalMap::chebyshev(), 0.5, 3).unwrap(), vec![0.5, 1.0, 0.0, 0.0]);
}

#[test]
fn potential_examples() {
    let ln2 = 2f64.ln();
    assert!((potential_phi(&IntervalMap::tent(2.0).unwrap(), 1.0, 0.3).unwrap() + ln2).abs() < 1e-15);
    let cheb = IntervalMap::chebyshev();
    assert!((potential_phi(&cheb, 1.0, 0.0).unwrap() + 4f64.ln()).abs() < 1e-15);
    assert!((potential_phi(&cheb, 0.9, 0.25).unwrap() + 0.9 * ln2).abs() < 1e-15);
    assert!(potential_phi(&cheb, 1.0, 0.5).is_err());
}

#[test]
fn logistic_c2_distance_is_closed_form() {
    // max|Δa x(1-x)| + max|Δa (1-2x)| + |2Δa|
    let (a, b) = (IntervalMap::logistic(3.9).unwrap(), IntervalMap::logistic(3.8).unwrap());
    let da = 0.1;
    let expected = da * 0.25 + da + 2.0 * da;
    assert!((c2_distance(&a, &b, 1000) - expected).abs() < 1e-6, "{}", c2_distance(&a, &b, 1000));
}

#[test]
fn tent_c2_distance_lower_bound() {
    let d = c2_distance(&IntervalMap::tent(2.0).unwrap(), &IntervalMap::tent(1.9).unwrap(), 1000);
    assert!(d >= 0.1, "{d}");
}
