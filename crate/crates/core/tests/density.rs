use thermoform::density::{l1_distance, lyapunov, orbit_histogram, ulam, GridDensity, UlamMatrix, UlamOptions};
use thermoform::maps::IntervalMap;

#[test]
fn chebyshev_ulam_is_arcsine() {
    let map = IntervalMap::chebyshev();
    let d = ulam(&map, 1024).unwrap();
    let l1 = l1_distance(&d, &GridDensity::arcsine(1024)).unwrap();
    assert!(l1 < 0.05, "L1 {l1}");
    assert!((lyapunov(&map, &d) - std::f64::consts::LN_2).abs() < 0.02);
}

#[test]
fn tent_ulam_agrees_with_long_orbit() {
    let map = IntervalMap::tent(1.9).unwrap();
    let d = ulam(&map, 512).unwrap();
    let h = orbit_histogram(&map, 0.1234567, 1000, 10_000_000, 512).unwrap();
    let l1 = l1_distance(&d, &h).unwrap();
    assert!(l1 < 0.05, "L1 {l1}");
    // the absolutely continuous measure of a tent has exponent log s
    assert!((lyapunov(&map, &d) - 1.9f64.ln()).abs() < 1e-9);
}

#[test]
fn ulam_rows_are_stochastic_and_fixed() {
    let map = IntervalMap::logistic(3.8).unwrap();
    let m = UlamMatrix::build(&map, 256, &UlamOptions::default());
    assert!(m.stochasticity_error() < 1e-9);
    let d = ulam(&map, 256).unwrap();
    let h = d.bin_width();
    let p: Vec<f64> = d.values.iter().map(|v| v * h).collect();
    let q = m.left_apply(&p);
    let err = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn coarsening_preserves_mass() {
    let d = GridDensity::arcsine(1024);
    let c = d.coarsen(8).unwrap();
    assert_eq!(c.bins(), 128);
    let m: f64 = c.values.iter().sum::<f64>() * c.bin_width();
    assert!((m - 1.0).abs() < 1e-12);
    assert!(d.coarsen(3).is_err());
}
