use thermoform::density::{l1_distance, GridDensity};
use thermoform::inducing::InducingScheme;
use thermoform::maps::IntervalMap;
use thermoform::stability::{run_pipeline, scheme_for, PipelineConfig, PipelineRun, TestDictionary};
use thermoform::thermo::{
    conformality_errors, constant_potential, gurevich_pressure, induced_potential, invariance_residual, solve_pressure,
    variation_profile, zk_sum,
};

const LN2: f64 = std::f64::consts::LN_2;

fn cfg(n_max: usize, itinerary: Option<Vec<u8>>, t: f64) -> PipelineConfig {
    PipelineConfig { t, n_max, base_itinerary: itinerary, ..Default::default() }
}

fn tent2(n_max: usize) -> InducingScheme {
    scheme_for(&IntervalMap::tent(2.0).unwrap(), &cfg(n_max, Some(vec![0]), 1.0)).unwrap()
}

fn run(map: &IntervalMap, n_max: usize, itinerary: Option<Vec<u8>>, t: f64) -> PipelineRun {
    run_pipeline(map, &cfg(n_max, itinerary, t)).unwrap()
}

#[test]
fn full_tent_potential_is_locally_constant() {
    let s = tent2(10);
    let pot = induced_potential(&s, 1.0, 0.0).unwrap();
    for (i, b) in s.branches.iter().enumerate() {
        assert!((pot.at_mid(i) + b.tau as f64 * LN2).abs() < 1e-12);
        assert!((pot.at_fixed(i) - pot.at_mid(i)).abs() < 1e-12);
    }
    let var = variation_profile(&s, &pot, 4).unwrap();
    assert!(var.v.iter().all(|&v| v < 1e-9), "{:?}", var.v);
    // scaling t scales the potential
    let half = induced_potential(&s, 0.5, 0.0).unwrap();
    assert!((half.at_mid(3) - 0.5 * pot.at_mid(3)).abs() < 1e-12);
}

#[test]
fn partition_sums_of_constant_potentials() {
    let s = tent2(6);
    let vals: Vec<f64> = s.branches.iter().map(|b| -0.3 * b.tau as f64).collect();
    let pot = constant_potential(&s, vals.clone(), 0.0).unwrap();
    let z1: f64 = vals.iter().map(|v| v.exp()).sum();
    assert!((zk_sum(&s, &pot, 1, 100).unwrap() - z1).abs() < 1e-12);
    // two-letter words with summed time at most 7, by direct enumeration
    let mut z2 = 0.0;
    for (i, a) in s.branches.iter().enumerate() {
        for (j, b) in s.branches.iter().enumerate() {
            if a.tau + b.tau <= 7 {
                z2 += (vals[i] + vals[j]).exp();
            }
        }
    }
    assert!((zk_sum(&s, &pot, 2, 7).unwrap() - z2).abs() < 1e-12);
}

#[test]
fn equal_weights_give_log_of_total_weight() {
    let s = tent2(5);
    let w = 0.15f64;
    let pot = constant_potential(&s, vec![w.ln(); s.branches.len()], 0.0).unwrap();
    let est = gurevich_pressure(&s, &pot, 4, 1000).unwrap();
    assert!((est.value - (5.0 * w).ln()).abs() < 1e-12, "{}", est.value);
    // adding a constant shifts the pressure by it
    let est2 = gurevich_pressure(&s, &pot.offset_by(0.7), 4, 1000).unwrap();
    assert!((est2.value - est.value - 0.7).abs() < 1e-12);
}

#[test]
fn full_tent_pressure_is_linear_in_t() {
    let s = tent2(20);
    for t in [0.0, 0.8, 0.9, 1.0, 1.1, 1.2] {
        let p = solve_pressure(&s, t).unwrap().pressure;
        assert!((p - (1.0 - t) * LN2).abs() < 1e-3, "t = {t}: {p}");
    }
}

#[test]
fn chebyshev_pressure() {
    let s = scheme_for(&IntervalMap::chebyshev(), &cfg(20, None, 1.0)).unwrap();
    assert!(solve_pressure(&s, 1.0).unwrap().pressure.abs() < 1e-3);
    assert!((solve_pressure(&s, 0.0).unwrap().pressure - LN2).abs() < 1e-3);
}

#[test]
fn pressure_decreases_in_t() {
    let s = scheme_for(&IntervalMap::tent(1.9).unwrap(), &cfg(20, None, 1.0)).unwrap();
    let ps: Vec<f64> = [0.6, 0.8, 1.0, 1.2].iter().map(|&t| solve_pressure(&s, t).unwrap().pressure).collect();
    assert!(ps.windows(2).all(|w| w[1] < w[0]), "{ps:?}");
    // at t = 1 the pressure vanishes, and P(t) = (1 - t) log 1.9 for the tent
    for (t, p) in [0.6, 0.8, 1.0, 1.2].iter().zip(&ps) {
        assert!((p - (1.0 - t) * 1.9f64.ln()).abs() < 2e-3, "t = {t}: {p}");
    }
}

#[test]
fn full_tent_gibbs_state_is_lebesgue() {
    let map = IntervalMap::tent(2.0).unwrap();
    let r = run(&map, 20, Some(vec![0]), 1.0);
    let g = &r.gibbs;
    assert!(g.rho.iter().all(|&v| (v - 1.0).abs() < 1e-6), "{:?}", &g.rho[..4]);
    assert!(g.gibbs_constant < 1.0 + 1e-6);
    // masses 2^-τ, renormalized over the enumerated branches
    let total = 1.0 - 0.5f64.powi(20);
    for (b, &m) in r.scheme.branches.iter().zip(&g.branch_mass) {
        let expect = 0.5f64.powi(b.tau as i32) / total;
        assert!((m / expect - 1.0).abs() < 1e-5, "tau {}: {m}", b.tau);
    }
    // ∫τ dμ_F over branches of mass 2^-τ, τ <= 20
    let tau_mean: f64 = (1..=20).map(|k| k as f64 * 0.5f64.powi(k)).sum::<f64>() / (1.0 - 0.5f64.powi(20));
    assert!((g.tau_mean - tau_mean).abs() < 1e-6);
    let coarse = GridDensity::from_measure(&r.measure).unwrap().coarsen(16).unwrap();
    assert_eq!(coarse.bins(), 256);
    assert!(coarse.values.iter().all(|&v| (v - 1.0).abs() < 0.02));
}

#[test]
fn chebyshev_measure_is_arcsine() {
    let r = run(&IntervalMap::chebyshev(), 30, None, 1.0);
    let d = GridDensity::from_measure(&r.measure).unwrap();
    let l1 = l1_distance(&d, &GridDensity::arcsine(d.bins())).unwrap();
    assert!(l1 < 0.05, "L1 to arcsine {l1}");
    assert!((r.measure.mass - 1.0).abs() < 1e-9);
}

#[test]
fn projected_measures_are_invariant_and_gibbs() {
    let dict = TestDictionary::default();
    let cases = [
        (IntervalMap::tent(2.0).unwrap(), Some(vec![0]), 1.0),
        (IntervalMap::tent(1.9).unwrap(), None, 1.0),
        (IntervalMap::tent(1.9).unwrap(), None, 0.9),
        (IntervalMap::chebyshev(), None, 1.0),
    ];
    for (map, it, t) in cases {
        let r = run(&map, 25, it, t);
        let res = invariance_residual(&map, &r.measure, &dict).unwrap();
        assert!(res < 5e-3, "{} t = {t}: invariance {res}", map.id());
        assert_eq!(r.gibbs.sandwich_violations(), 0);
        let conf = conformality_errors(&r.scheme, &r.gibbs);
        assert!(!conf.is_empty());
        let worst = conf.iter().map(|c| c.1).fold(0.0, f64::max);
        assert!(worst < 1e-2, "{} t = {t}: conformality {worst}", map.id());
        // the projection and the branch masses use different quadratures
        // for the same τ mean
        let rel = (r.measure.tau_mean / r.gibbs.tau_mean - 1.0).abs();
        assert!(rel < 1e-3, "{} t = {t}: τ means {} and {}", map.id(), r.measure.tau_mean, r.gibbs.tau_mean);
    }
}
