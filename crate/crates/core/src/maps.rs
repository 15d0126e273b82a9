//! Interval-map families, their derivatives and critical data, the geometric
//! potential `phi_t = -t log|Df|`, and a C² distance between maps.
//!
//! Every built-in family is unimodal with closed-form derivatives and
//! closed-form inverse branches. Tent maps are not C² at the turning point;
//! they are kept as exactly solvable test oracles and their corner is
//! recorded as a critical point with `corner = true`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default radius around critical points inside which the potential is singular.
pub const DEFAULT_CLEARANCE: f64 = 1e-12;

/// Orbits leaving [0,1] by less than this are clamped back.
pub const CLAMP_TOLERANCE: f64 = 1e-12;

/// Registered family ids.
pub const FAMILIES: &[&str] = &["tent", "skew-tent", "logistic", "cheb"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CriticalKind {
    Maximum,
    Minimum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: f64,
    /// Critical order. Smooth critical points have order > 1; corners of
    /// piecewise-linear maps are stored with order 1.
    pub order: f64,
    pub kind: CriticalKind,
    /// The map has a corner here rather than a smooth turning point.
    pub corner: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GrowthKind {
    Exponential,
    Polynomial,
}

/// Growth assumption on critical orbits, supplied as metadata. The crate
/// does not certify it; see [`growth_diagnostic`] for a finite-n check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthClass {
    pub kind: GrowthKind,
    pub constant: f64,
    pub rate: f64,
}

impl GrowthClass {
    pub fn new(kind: GrowthKind, constant: f64, rate: f64, map: &IntervalMap) -> Result<Self> {
        if !(constant > 0.0) || !rate.is_finite() || !(rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "growth class needs C > 0 and rate > 0, got C = {constant}, rate = {rate}"
            )));
        }
        if kind == GrowthKind::Polynomial {
            let max_order = map
                .critical_points()
                .iter()
                .map(|c| c.order)
                .fold(1.0, f64::max);
            if rate <= 2.0 * max_order {
                return Err(Error::InvalidArgument(format!(
                    "polynomial growth rate {rate} must exceed 2 * max critical order = {}",
                    2.0 * max_order
                )));
            }
        }
        Ok(Self { kind, constant, rate })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Formula {
    /// `s * min(x, 1 - x)`
    Tent { slope: f64 },
    /// Full-branch piecewise-linear map with turning point `v` and peak 1.
    SkewTent { vertex: f64 },
    /// `a x (1 - x)`
    Logistic { a: f64 },
}

/// A unimodal self-map of [0,1] with critical-point metadata. Immutable after
/// construction.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalMap {
    id: String,
    params: Vec<f64>,
    formula: Formula,
    critical: Vec<CriticalPoint>,
    clearance: f64,
    growth: Option<GrowthClass>,
}

impl IntervalMap {
    /// Symmetric tent map with slope `s` in (√2, 2].
    pub fn tent(slope: f64) -> Result<Self> {
        if !(slope > std::f64::consts::SQRT_2 && slope <= 2.0) {
            return Err(Error::InvalidArgument(format!(
                "tent slope must lie in (sqrt 2, 2], got {slope}"
            )));
        }
        Ok(Self::build(
            "tent",
            vec![slope],
            Formula::Tent { slope },
            CriticalPoint { location: 0.5, order: 1.0, kind: CriticalKind::Maximum, corner: true },
        ))
    }

    /// Full-branch skew tent map with turning point `vertex` in (0,1).
    pub fn skew_tent(vertex: f64) -> Result<Self> {
        if !(vertex > 0.0 && vertex < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "skew tent vertex must lie in (0, 1), got {vertex}"
            )));
        }
        Ok(Self::build(
            "skew-tent",
            vec![vertex],
            Formula::SkewTent { vertex },
            CriticalPoint { location: vertex, order: 1.0, kind: CriticalKind::Maximum, corner: true },
        ))
    }

    /// Logistic map `a x (1 - x)` for `a` in [3.5, 4].
    pub fn logistic(a: f64) -> Result<Self> {
        if !(3.5..=4.0).contains(&a) {
            return Err(Error::InvalidArgument(format!(
                "logistic parameter must lie in [3.5, 4], got {a}"
            )));
        }
        Ok(Self::build(
            "logistic",
            vec![a],
            Formula::Logistic { a },
            CriticalPoint { location: 0.5, order: 2.0, kind: CriticalKind::Maximum, corner: false },
        ))
    }

    /// The Chebyshev map `4x(1-x)`.
    pub fn chebyshev() -> Self {
        Self::build(
            "cheb",
            Vec::new(),
            Formula::Logistic { a: 4.0 },
            CriticalPoint { location: 0.5, order: 2.0, kind: CriticalKind::Maximum, corner: false },
        )
    }

    /// Looks a family up in the registry.
    pub fn from_family(id: &str, params: &[f64]) -> Result<Self> {
        let want = |n: usize| -> Result<()> {
            if params.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "family `{id}` takes {n} parameter(s), got {}",
                    params.len()
                )));
            }
            Ok(())
        };
        match id {
            "tent" => {
                want(1)?;
                Self::tent(params[0])
            }
            "skew-tent" => {
                want(1)?;
                Self::skew_tent(params[0])
            }
            "logistic" => {
                want(1)?;
                Self::logistic(params[0])
            }
            "cheb" => {
                want(0)?;
                Ok(Self::chebyshev())
            }
            _ => Err(Error::UnknownFamily { id: id.to_string(), known: FAMILIES.join(", ") }),
        }
    }

    fn build(id: &str, params: Vec<f64>, formula: Formula, critical: CriticalPoint) -> Self {
        Self {
            id: id.to_string(),
            params,
            formula,
            critical: vec![critical],
            clearance: DEFAULT_CLEARANCE,
            growth: None,
        }
    }

    pub fn with_clearance(mut self, clearance: f64) -> Self {
        self.clearance = clearance;
        self
    }

    pub fn with_growth(mut self, growth: GrowthClass) -> Self {
        self.growth = Some(growth);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn clearance(&self) -> f64 {
        self.clearance
    }

    pub fn growth(&self) -> Option<&GrowthClass> {
        self.growth.as_ref()
    }

    pub fn critical_points(&self) -> &[CriticalPoint] {
        &self.critical
    }

    /// True when the map has a corner instead of a smooth turning point.
    pub fn is_piecewise_linear(&self) -> bool {
        self.critical.iter().any(|c| c.corner)
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.formula {
            Formula::Tent { slope } => slope * x.min(1.0 - x),
            Formula::SkewTent { vertex } => {
                if x <= vertex {
                    x / vertex
                } else {
                    (1.0 - x) / (1.0 - vertex)
                }
            }
            Formula::Logistic { a } => a * x * (1.0 - x),
        }
    }

    /// First derivative. At a corner this returns 0.
    pub fn deriv1(&self, x: f64) -> f64 {
        match self.formula {
            Formula::Tent { slope } => {
                if x < 0.5 {
                    slope
                } else if x > 0.5 {
                    -slope
                } else {
                    0.0
                }
            }
            Formula::SkewTent { vertex } => {
                if x < vertex {
                    1.0 / vertex
                } else if x > vertex {
                    -1.0 / (1.0 - vertex)
                } else {
                    0.0
                }
            }
            Formula::Logistic { a } => a * (1.0 - 2.0 * x),
        }
    }

    pub fn deriv2(&self, _x: f64) -> f64 {
        match self.formula {
            Formula::Tent { .. } | Formula::SkewTent { .. } => 0.0,
            Formula::Logistic { a } => -2.0 * a,
        }
    }

    /// Number of monotone branches (laps).
    pub fn branch_count(&self) -> usize {
        self.critical.len() + 1
    }

    /// The level-1 cylinders, left to right.
    pub fn branches(&self) -> Vec<(f64, f64)> {
        let mut cuts = vec![0.0];
        cuts.extend(self.critical.iter().map(|c| c.location));
        cuts.push(1.0);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Branch containing `x`; a critical point is assigned to the branch on its right.
    pub fn symbol_of(&self, x: f64) -> usize {
        self.critical.iter().take_while(|c| x >= c.location).count()
    }

    /// One-sided derivative on branch `symbol`, well defined at the branch ends.
    pub fn branch_deriv1(&self, symbol: usize, x: f64) -> f64 {
        match self.formula {
            Formula::Tent { slope } => {
                if symbol == 0 {
                    slope
                } else {
                    -slope
                }
            }
            Formula::SkewTent { vertex } => {
                if symbol == 0 {
                    1.0 / vertex
                } else {
                    -1.0 / (1.0 - vertex)
                }
            }
            Formula::Logistic { .. } => self.deriv1(x),
        }
    }

    /// Image of branch `symbol` as an ordered interval.
    pub fn branch_image(&self, symbol: usize) -> (f64, f64) {
        debug_assert!(symbol < self.branch_count());
        // every built-in family is unimodal with f(0) = f(1) = 0
        let peak = match self.formula {
            Formula::Tent { slope } => 0.5 * slope,
            Formula::SkewTent { .. } => 1.0,
            Formula::Logistic { a } => 0.25 * a,
        };
        (0.0, peak)
    }

    /// Inverse of `f` restricted to branch `symbol`. `y` is clamped into the
    /// branch image first.
    pub fn inverse(&self, symbol: usize, y: f64) -> f64 {
        let (lo, hi) = self.branch_image(symbol);
        let y = y.clamp(lo, hi);
        match self.formula {
            Formula::Tent { slope } => {
                if symbol == 0 {
                    y / slope
                } else {
                    1.0 - y / slope
                }
            }
            Formula::SkewTent { vertex } => {
                if symbol == 0 {
                    y * vertex
                } else {
                    1.0 - y * (1.0 - vertex)
                }
            }
            Formula::Logistic { a } => {
                // left root written to avoid cancellation
                let d = (1.0 - 4.0 * y / a).max(0.0);
                let left = 2.0 * y / (a * (1.0 + d.sqrt()));
                if symbol == 0 {
                    left
                } else {
                    1.0 - left
                }
            }
        }
    }

    /// Image of `[lo, hi]` (contained in branch `symbol`) as an ordered interval.
    pub fn image_on_branch(&self, _symbol: usize, lo: f64, hi: f64) -> (f64, f64) {
        let (a, b) = (self.eval(lo), self.eval(hi));
        (a.min(b), a.max(b))
    }

    /// The critical point whose clearance contains `x`, if any.
    pub fn near_critical(&self, x: f64) -> Option<f64> {
        self.critical
            .iter()
            .map(|c| c.location)
            .find(|c| (x - c).abs() < self.clearance)
    }
}

/// Orbit `(x, f x, ..., f^n x)`.
pub fn eval_orbit(map: &IntervalMap, x: f64, n: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::NotSelfMap { step: 0, value: x });
    }
    let mut orbit = Vec::with_capacity(n + 1);
    orbit.push(x);
    let mut cur = x;
    for step in 1..=n {
        let mut next = map.eval(cur);
        if !(-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&next) || !next.is_finite() {
            return Err(Error::NotSelfMap { step, value: next });
        }
        next = next.clamp(0.0, 1.0);
        orbit.push(next);
        cur = next;
    }
    Ok(orbit)
}

/// The geometric potential `-t log|Df(x)|`.
pub fn potential_phi(map: &IntervalMap, t: f64, x: f64) -> Result<f64> {
    if let Some(c) = map.near_critical(x) {
        return Err(Error::SingularPotential { x, critical: c });
    }
    Ok(-t * map.deriv1(x).abs().ln())
}

/// C² distance `sup|a-b| + sup|a'-b'| + sup|a''-b''|` over a uniform grid of
/// `grid` points. Derivative terms skip points inside the critical clearance
/// of either map.
pub fn c2_distance(a: &IntervalMap, b: &IntervalMap, grid: usize) -> f64 {
    let grid = grid.max(2);
    let (mut d0, mut d1, mut d2) = (0.0f64, 0.0f64, 0.0f64);
    for j in 0..grid {
        let x = j as f64 / (grid - 1) as f64;
        d0 = d0.max((a.eval(x) - b.eval(x)).abs());
        if a.near_critical(x).is_some() || b.near_critical(x).is_some() {
            continue;
        }
        d1 = d1.max((a.deriv1(x) - b.deriv1(x)).abs());
        d2 = d2.max((a.deriv2(x) - b.deriv2(x)).abs());
    }
    d0 + d1 + d2
}

/// Finite-n growth diagnostic: the minimum over `1 <= n <= depth` and critical
/// points `c` of `|Df^n(f c)| / (C e^{alpha n})` (exponential) or
/// `|Df^n(f c)| / (C n^beta)` (polynomial). Values bounded away from 0 are
/// consistent with the growth assumption.
pub fn growth_diagnostic(map: &IntervalMap, class: &GrowthClass, depth: usize) -> f64 {
    let mut worst = f64::INFINITY;
    for c in map.critical_points() {
        let mut x = map.eval(c.location);
        let mut log_deriv = 0.0;
        for n in 1..=depth {
            let d = map.deriv1(x).abs();
            if d == 0.0 {
                return 0.0;
            }
            log_deriv += d.ln();
            let scale = match class.kind {
                GrowthKind::Exponential => class.constant.ln() + class.rate * n as f64,
                GrowthKind::Polynomial => class.constant.ln() + class.rate * (n as f64).ln(),
            };
            worst = worst.min((log_deriv - scale).exp());
            x = map.eval(x).clamp(0.0, 1.0);
        }
    }
    worst
}

/// Finite-depth check for collisions `f^j(c) = f^k(c')` with `j != k`.
/// Returns the first colliding pair of iterates found.
pub fn critical_collision(map: &IntervalMap, depth: usize, tol: f64) -> Option<(usize, usize)> {
    let orbits: Vec<Vec<f64>> = map
        .critical_points()
        .iter()
        .map(|c| {
            let mut orbit = vec![c.location];
            for _ in 0..depth {
                let next = map.eval(*orbit.last().unwrap()).clamp(0.0, 1.0);
                orbit.push(next);
            }
            orbit
        })
        .collect();
    for a in &orbits {
        for b in &orbits {
            for j in 1..=depth {
                for k in 1..=depth {
                    if j != k && (a[j] - b[k]).abs() < tol {
                        return Some((j.min(k), j.max(k)));
                    }
                }
            }
        }
    }
    None
}

/// Grid spot-check of the map invariants: self-map, derivative sign changes
/// only at critical points, derivative agrees with a central difference.
/// Returns the largest finite-difference mismatch.
pub fn check_map(map: &IntervalMap, grid: usize) -> Result<f64> {
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut last_sign: Option<(f64, usize)> = None;
    for j in 0..grid {
        let x = (j as f64 + 0.5) / grid as f64;
        let y = map.eval(x);
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::NotSelfMap { step: 1, value: y });
        }
        if map.critical_points().iter().any(|c| (x - c.location).abs() < 10.0 * h) {
            continue;
        }
        let fd = (map.eval(x + h) - map.eval(x - h)) / (2.0 * h);
        worst = worst.max((fd - map.deriv1(x)).abs());
        let sign = map.deriv1(x).signum();
        let lap = map.symbol_of(x);
        if let Some((prev, prev_lap)) = last_sign {
            if prev != sign && prev_lap == lap {
                return Err(Error::InvalidArgument(format!(
                    "derivative changes sign away from a critical point near {x}"
                )));
            }
        }
        last_sign = Some((sign, lap));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tent_orbit_hits_fixed_point() {
        let f = IntervalMap::tent(2.0).unwrap();
        let orbit = eval_orbit(&f, 1.0 / 3.0, 2).unwrap();
        assert!((orbit[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((orbit[2] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn chebyshev_critical_orbit() {
        let f = IntervalMap::chebyshev();
        assert_eq!(eval_orbit(&f, 0.5, 3).unwrap(), vec![0.5, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn tent_orbit_matches_high_precision_recurrence() {
        // slope 19/10 and x = 1/5 in exact rationals
        let f = IntervalMap::tent(1.9).unwrap();
        let orbit = eval_orbit(&f, 0.2, 5).unwrap();
        let (mut num, mut den): (i128, i128) = (1, 5);
        for value in orbit.iter().skip(1) {
            let m = if 2 * num <= den { num } else { den - num };
            num = 19 * m;
            den *= 10;
            let g = gcd(num, den);
            num /= g;
            den /= g;
            assert!((value - num as f64 / den as f64).abs() < 1e-13);
        }
    }

    fn gcd(a: i128, b: i128) -> i128 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }

    #[test]
    fn escape_is_reported() {
        let f = IntervalMap::tent(2.0).unwrap();
        assert!(matches!(eval_orbit(&f, 1.5, 2), Err(Error::NotSelfMap { .. })));
    }

    #[test]
    fn potential_examples() {
        let tent = IntervalMap::tent(2.0).unwrap();
        assert!((potential_phi(&tent, 1.0, 0.3).unwrap() + 2f64.ln()).abs() < 1e-15);
        let cheb = IntervalMap::chebyshev();
        assert!((potential_phi(&cheb, 1.0, 0.0).unwrap() + 4f64.ln()).abs() < 1e-15);
        assert!((potential_phi(&cheb, 0.9, 0.25).unwrap() + 0.9 * 2f64.ln()).abs() < 1e-15);
        assert!(matches!(
            potential_phi(&cheb, 1.0, 0.5 + 1e-13),
            Err(Error::SingularPotential { .. })
        ));
    }

    #[test]
    fn c2_distance_examples() {
        let t2 = IntervalMap::tent(2.0).unwrap();
        let t19 = IntervalMap::tent(1.9).unwrap();
        assert_eq!(c2_distance(&t2, &t2, 100), 0.0);
        let d = c2_distance(&t2, &t19, 1000);
        assert!(d >= 0.1);
        // sup term at the grid point nearest 1/2 is 0.1 * 499/999
        assert!((d - (0.1 * 499.0 / 999.0 + 0.1)).abs() < 1e-12);

        let q39 = IntervalMap::logistic(3.9).unwrap();
        let q38 = IntervalMap::logistic(3.8).unwrap();
        // 0.1 * max x(1-x) + 0.1 * max |1-2x| + 0.1 * 2; the grid j/999 misses x = 1/2
        let x_near = 499.0 / 999.0;
        let expected = 0.1 * x_near * (1.0 - x_near) + 0.1 + 0.2;
        assert!((c2_distance(&q39, &q38, 1000) - expected).abs() < 1e-12);
    }

    #[test]
    fn inverse_branches_invert() {
        for f in [
            IntervalMap::tent(1.9).unwrap(),
            IntervalMap::skew_tent(0.3).unwrap(),
            IntervalMap::logistic(3.7).unwrap(),
            IntervalMap::chebyshev(),
        ] {
            for s in 0..2 {
                let (lo, hi) = f.branch_image(s);
                for j in 0..=20 {
                    let y = lo + (hi - lo) * j as f64 / 20.0;
                    let x = f.inverse(s, y);
                    assert!((f.eval(x) - y).abs() < 1e-12, "{} s={s} y={y}", f.id());
                }
            }
        }
    }

    #[test]
    fn registry_rejects_unknown_family() {
        match IntervalMap::from_family("henon", &[1.4]) {
            Err(Error::UnknownFamily { known, .. }) => assert!(known.contains("tent")),
            other => panic!("unexpected {other:?}"),
        }
        assert!(IntervalMap::from_family("tent", &[1.2]).is_err());
    }

    #[test]
    fn built_in_maps_pass_grid_checks() {
        for f in [
            IntervalMap::tent(1.7).unwrap(),
            IntervalMap::skew_tent(0.4).unwrap(),
            IntervalMap::logistic(3.6).unwrap(),
            IntervalMap::chebyshev(),
        ] {
            let err = check_map(&f, 2000).unwrap();
            assert!(err < 1e-6, "{}: {err}", f.id());
        }
    }

    #[test]
    fn growth_class_validation_and_diagnostic() {
        let cheb = IntervalMap::chebyshev();
        assert!(GrowthClass::new(GrowthKind::Polynomial, 1.0, 3.0, &cheb).is_err());
        let class = GrowthClass::new(GrowthKind::Exponential, 1.0, 0.5, &cheb).unwrap();
        // f(c) = 1, then 0 forever: |Df^n(1)| = 4^n
        let diag = growth_diagnostic(&cheb, &class, 10);
        assert!((diag - (4f64.ln() - 0.5)).exp() > 0.0 && diag >= 1.0);
    }

    #[test]
    fn collision_check_detects_preperiodic_critical_orbit() {
        let cheb = IntervalMap::chebyshev();
        assert_eq!(critical_collision(&cheb, 5, 1e-12), Some((2, 3)));
        let t = IntervalMap::tent(1.9).unwrap();
        assert_eq!(critical_collision(&t, 6, 1e-12), None);
    }
}
