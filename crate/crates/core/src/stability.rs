//! Parameter sweeps over map families: pressure differences, weak* and L1
//! distances of equilibria, return-time tail fits and matched-cylinder
//! mass, one row per perturbation rung.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cylinders::Cylinder;
use crate::density::{l1_distance, GridDensity};
use crate::error::{Error, Result};
use crate::inducing::{base_by_itinerary, build_scheme, critical_base, select_base, InducingScheme, SchemeOptions};
use crate::maps::{c2_distance, IntervalMap};
use crate::thermo::{gibbs_state_with, linear_fit, project_measure, EquilibriumMeasure, GibbsOptions, GibbsState};
use crate::tower::{build_tower, transitive_component, HofbauerTower};

/// Observables on [0,1] with values in [0,1]: `(T_n(2x-1) + 1)/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestDictionary {
    pub degrees: Vec<usize>,
}

impl Default for TestDictionary {
    fn default() -> Self {
        Self::chebyshev(8)
    }
}

impl TestDictionary {
    /// Degrees `0..n`.
    pub fn chebyshev(n: usize) -> Self {
        Self { degrees: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn name(&self, j: usize) -> String {
        format!("T{}", self.degrees[j])
    }

    pub fn eval(&self, j: usize, x: f64) -> f64 {
        let u = (2.0 * x - 1.0).clamp(-1.0, 1.0);
        0.5 * ((self.degrees[j] as f64 * u.acos()).cos() + 1.0)
    }
}

/// `|∫g da - ∫g db|` for each observable of the dictionary.
pub fn weak_star_vector(a: &EquilibriumMeasure, b: &EquilibriumMeasure, dict: &TestDictionary) -> Result<Vec<f64>> {
    if a.bins() != b.bins() {
        return Err(Error::Resolution { left: a.bins(), right: b.bins() });
    }
    Ok((0..dict.len())
        .map(|j| {
            let g = |x: f64| dict.eval(j, x);
            (a.integrate(g) - b.integrate(g)).abs()
        })
        .collect())
}

pub fn weak_star_distance(a: &EquilibriumMeasure, b: &EquilibriumMeasure, dict: &TestDictionary) -> Result<f64> {
    Ok(weak_star_vector(a, b, dict)?.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailKind {
    Exponential,
    Polynomial,
}

impl TailKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TailKind::Exponential => "exponential",
            TailKind::Polynomial => "polynomial",
        }
    }
}

/// `μ_F{τ > N} ≈ C e^{-rate N}` or `C N^{-rate}`, whichever fits better.
#[derive(Clone, Debug, PartialEq)]
pub struct TailFit {
    pub kind: TailKind,
    pub constant: f64,
    pub rate: f64,
    pub r_squared: f64,
    /// R² of the rejected model.
    pub other_r_squared: f64,
    pub points: Vec<(usize, f64)>,
}

/// Tail of a return-time distribution given as `(τ, mass)` pairs, with the
/// masses normalized over the pairs.
pub fn tail_fit(weights: &[(usize, f64)], n_grid: &[usize]) -> Result<TailFit> {
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let points: Vec<(usize, f64)> = n_grid
        .iter()
        .map(|&n| (n, weights.iter().filter(|w| w.0 > n).map(|w| w.1).sum::<f64>() / total))
        .filter(|&(n, tail)| n > 0 && tail > 0.0 && tail.is_finite())
        .collect();
    if points.len() < 3 {
        return Err(Error::TailUnderresolved { points: points.len() });
    }
    let exp_pts: Vec<(f64, f64)> = points.iter().map(|&(n, v)| (n as f64, v.ln())).collect();
    let poly_pts: Vec<(f64, f64)> = points.iter().map(|&(n, v)| ((n as f64).ln(), v.ln())).collect();
    let underresolved = || Error::TailUnderresolved { points: points.len() };
    let (se, ie, re) = linear_fit(&exp_pts).ok_or_else(underresolved)?;
    let (sp, ip, rp) = linear_fit(&poly_pts).ok_or_else(underresolved)?;
    Ok(if re >= rp {
        TailFit { kind: TailKind::Exponential, constant: ie.exp(), rate: -se, r_squared: re, other_r_squared: rp, points }
    } else {
        TailFit { kind: TailKind::Polynomial, constant: ip.exp(), rate: -sp, r_squared: rp, other_r_squared: re, points }
    })
}

/// Tail fit of `μ_F{τ > N}` from the branch masses of a Gibbs state,
/// normalized over the enumerated branches. Grid values at or beyond the
/// scheme's `N_max` carry no mass and are dropped.
pub fn tail_profile(scheme: &InducingScheme, gs: &GibbsState, n_grid: &[usize]) -> Result<TailFit> {
    let weights: Vec<(usize, f64)> = scheme.branches.iter().map(|b| b.tau).zip(gs.branch_mass.iter().copied()).collect();
    let grid: Vec<usize> = n_grid.iter().copied().filter(|&n| n < scheme.n_max).collect();
    tail_fit(&weights, &grid)
}

fn interval_difference_mass(gs: &GibbsState, a: (f64, f64), b: (f64, f64)) -> f64 {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    let overlap = if hi > lo { gs.mu_interval(lo, hi) } else { 0.0 };
    gs.mu_interval(a.0, a.1) + gs.mu_interval(b.0, b.1) - 2.0 * overlap
}

/// `μ_b` mass of the symmetric differences of branch domains matched by
/// itinerary (τ at most `tau_cap`), plus the mass of unmatched branches.
pub fn cylinder_mass_mismatch(a: &InducingScheme, b: &InducingScheme, gs_b: &GibbsState, tau_cap: usize) -> Result<f64> {
    if a.base_itinerary != b.base_itinerary {
        return Err(Error::IncomparableSchemes { left: a.base_itinerary.clone(), right: b.base_itinerary.clone() });
    }
    let index: std::collections::HashMap<&[u8], usize> = b
        .branches
        .iter()
        .enumerate()
        .filter(|(_, br)| br.tau <= tau_cap)
        .map(|(j, br)| (br.itinerary.as_slice(), j))
        .collect();
    let mut matched = vec![false; b.branches.len()];
    let mut total = 0.0;
    for br in a.branches.iter().filter(|br| br.tau <= tau_cap) {
        match index.get(br.itinerary.as_slice()) {
            Some(&j) => {
                matched[j] = true;
                let other = &b.branches[j];
                total += interval_difference_mass(gs_b, (br.left, br.right), (other.left, other.right));
            }
            None => total += gs_b.mu_interval(br.left, br.right),
        }
    }
    for (j, br) in b.branches.iter().enumerate() {
        if br.tau <= tau_cap && !matched[j] {
            total += gs_b.branch_mass[j];
        }
    }
    Ok(total.max(0.0))
}

/// How the base cylinder is chosen when no itinerary is given.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum BaseRule {
    /// First cylinder in itinerary order passing the boundary check.
    Scan,
    /// Shallowest cylinder ending at the critical point.
    #[default]
    Critical,
}

/// Settings for one run of the pipeline tower, scheme, Gibbs state,
/// projection.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub t: f64,
    /// Depth of the base cylinder when no itinerary is given.
    pub base_depth: usize,
    pub base_rule: BaseRule,
    pub base_itinerary: Option<Vec<u8>>,
    pub delta: f64,
    pub n_max: usize,
    /// Tower height; `None` means `N_max + 2`.
    pub tower_height: Option<usize>,
    pub bins: usize,
    pub gibbs: GibbsOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            t: 1.0,
            base_depth: 3,
            base_rule: BaseRule::default(),
            base_itinerary: None,
            delta: crate::inducing::DEFAULT_DELTA,
            n_max: crate::inducing::DEFAULT_N_MAX,
            tower_height: None,
            bins: crate::thermo::DEFAULT_BINS,
            gibbs: GibbsOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub scheme: InducingScheme,
    pub gibbs: GibbsState,
    pub measure: EquilibriumMeasure,
}

fn transitive_tower(map: &IntervalMap, cfg: &PipelineConfig) -> Result<HofbauerTower> {
    let mut tower = build_tower(map, cfg.tower_height.unwrap_or(cfg.n_max + 2))?;
    transitive_component(&mut tower)?;
    Ok(tower)
}

/// The configured base cylinder of `map`.
pub fn base_for(map: &IntervalMap, tower: &HofbauerTower, cfg: &PipelineConfig) -> Result<Cylinder> {
    match &cfg.base_itinerary {
        Some(it) => base_by_itinerary(map, it),
        None => match cfg.base_rule {
            BaseRule::Scan => select_base(map, tower, cfg.base_depth, cfg.delta),
            BaseRule::Critical => critical_base(map, tower, cfg.base_depth, cfg.delta),
        },
    }
}

/// The inducing scheme of `map` for the configured base.
pub fn scheme_for(map: &IntervalMap, cfg: &PipelineConfig) -> Result<InducingScheme> {
    let tower = transitive_tower(map, cfg)?;
    let base = base_for(map, &tower, cfg)?;
    build_scheme(map, &tower, &base, &SchemeOptions { delta: cfg.delta, n_max: cfg.n_max, ..Default::default() })
}

pub fn run_pipeline(map: &IntervalMap, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let scheme = scheme_for(map, cfg)?;
    let gibbs = gibbs_state_with(&scheme, cfg.t, &cfg.gibbs)?;
    let measure = project_measure(&scheme, &gibbs, cfg.bins)?;
    Ok(PipelineRun { scheme, gibbs, measure })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub family: String,
    pub base_param: f64,
    /// Signed parameter offsets, strictly decreasing in absolute value.
    pub ladder: Vec<f64>,
    pub pipeline: PipelineConfig,
    pub dict: TestDictionary,
    pub tail_grid: Option<Vec<usize>>,
    pub tau_cap: usize,
    pub c2_grid: usize,
}

impl SweepConfig {
    pub fn new(family: &str, base_param: f64, ladder: Vec<f64>, pipeline: PipelineConfig) -> Self {
        Self {
            family: family.to_string(),
            base_param,
            ladder,
            pipeline,
            dict: TestDictionary::default(),
            tail_grid: None,
            tau_cap: 8,
            c2_grid: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(Error::InvalidArgument("ladder is empty".into()));
        }
        if self.ladder.iter().any(|o| !o.is_finite()) || !self.pipeline.t.is_finite() {
            return Err(Error::InvalidArgument("ladder offsets and t must be finite".into()));
        }
        if self.ladder.windows(2).any(|w| w[1].abs() >= w[0].abs()) {
            return Err(Error::InvalidArgument(format!("ladder offsets must shrink strictly: {:?}", self.ladder)));
        }
        Ok(())
    }

    fn tail_grid_for(&self, n_max: usize) -> Vec<usize> {
        self.tail_grid.clone().unwrap_or_else(|| (1..n_max.saturating_sub(n_max / 4).max(4)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RungResult {
    pub offset: f64,
    pub param: f64,
    pub c2_distance: f64,
    pub pressure: Option<f64>,
    pub delta_pressure: Option<f64>,
    pub weak_star: Option<Vec<f64>>,
    /// Present only at `t = 1`.
    pub l1: Option<f64>,
    pub tail: Option<TailFit>,
    pub mismatch: Option<f64>,
    pub gibbs_constant: Option<f64>,
    pub tau_mean: Option<f64>,
    /// Stage failures and warnings, in pipeline order.
    pub notes: Vec<String>,
}

impl RungResult {
    pub fn weak_star_max(&self) -> Option<f64> {
        self.weak_star.as_ref().map(|v| v.iter().copied().fold(0.0, f64::max))
    }

    pub fn failed(&self) -> bool {
        self.pressure.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    pub family: String,
    pub t: f64,
    pub base_param: f64,
    pub ladder: Vec<f64>,
    pub base_pressure: Option<f64>,
    pub base_notes: Vec<String>,
    pub dict: TestDictionary,
    pub rungs: Vec<RungResult>,
    /// `max |ΔP| / c2` over rungs with positive distance.
    pub pressure_lipschitz: Option<f64>,
}

impl StabilityReport {
    pub fn column<F: Fn(&RungResult) -> Option<f64>>(&self, f: F) -> Vec<Option<f64>> {
        self.rungs.iter().map(f).collect()
    }
}

/// One base itinerary shared by the whole ladder: the deepest cylinder any
/// map on it selects, ties going to the base map. Rungs whose transitive
/// part is smaller than the base map's would otherwise lose the base.
fn sweep_itinerary(cfg: &SweepConfig, base_map: &IntervalMap) -> Option<Vec<u8>> {
    let maps: Vec<Option<IntervalMap>> = std::iter::once(Some(base_map.clone()))
        .chain(cfg.ladder.iter().map(|o| IntervalMap::from_family(&cfg.family, &[cfg.base_param + o]).ok()))
        .collect();
    let picks: Vec<Option<Vec<u8>>> = maps
        .par_iter()
        .map(|m| {
            let m = m.as_ref()?;
            let tower = transitive_tower(m, &cfg.pipeline).ok()?;
            base_for(m, &tower, &cfg.pipeline).ok().map(|c| c.itinerary)
        })
        .collect();
    picks.into_iter().flatten().fold(None, |best: Option<Vec<u8>>, it| match best {
        Some(b) if b.len() >= it.len() => Some(b),
        _ => Some(it),
    })
}

/// Runs the base map and every rung (in parallel) and compares each rung
/// with the base. Stage errors are recorded on the rung.
pub fn run_sweep(cfg: &SweepConfig) -> Result<StabilityReport> {
    cfg.validate()?;
    let base_map = IntervalMap::from_family(&cfg.family, &[cfg.base_param])?;
    let mut pipeline = cfg.pipeline.clone();
    if pipeline.base_itinerary.is_none() {
        pipeline.base_itinerary = sweep_itinerary(cfg, &base_map);
    }
    let base_scheme = scheme_for(&base_map, &pipeline);
    let base_run = base_scheme.and_then(|scheme| {
        let gibbs = gibbs_state_with(&scheme, pipeline.t, &pipeline.gibbs)?;
        let measure = project_measure(&scheme, &gibbs, pipeline.bins)?;
        Ok(PipelineRun { scheme, gibbs, measure })
    });
    let runs: Vec<(f64, Result<IntervalMap>, Option<Result<PipelineRun>>)> = cfg
        .ladder
        .par_iter()
        .map(|&offset| {
            let map = IntervalMap::from_family(&cfg.family, &[cfg.base_param + offset]);
            let run = map.as_ref().ok().map(|m| run_pipeline(m, &pipeline));
            (offset, map, run)
        })
        .collect();

    let base_notes = match &base_run {
        Ok(_) => Vec::new(),
        Err(e) => vec![format!("base: {e}")],
    };
    let base = base_run.as_ref().ok();
    let mut rungs = Vec::with_capacity(runs.len());
    for (offset, map, run) in runs {
        let param = cfg.base_param + offset;
        let mut r = RungResult {
            offset,
            param,
            c2_distance: f64::NAN,
            pressure: None,
            delta_pressure: None,
            weak_star: None,
            l1: None,
            tail: None,
            mismatch: None,
            gibbs_constant: None,
            tau_mean: None,
            notes: Vec::new(),
        };
        let map = match map {
            Ok(m) => m,
            Err(e) => {
                r.notes.push(format!("map: {e}"));
                rungs.push(r);
                continue;
            }
        };
        r.c2_distance = c2_distance(&map, &base_map, cfg.c2_grid);
        let run = match run.expect("run exists for a valid map") {
            Ok(run) => run,
            Err(e) => {
                r.notes.push(format!("pipeline: {e}"));
                rungs.push(r);
                continue;
            }
        };
        r.pressure = Some(run.gibbs.pressure);
        r.gibbs_constant = Some(run.gibbs.gibbs_constant);
        r.tau_mean = Some(run.measure.tau_mean);
        if !run.gibbs.variation.summable {
            r.notes.push("variations not summable".into());
        }
        if run.scheme.coverage < 1.0 - 1e-3 {
            r.notes.push(format!("coverage {:.6}", run.scheme.coverage));
        }
        match tail_profile(&run.scheme, &run.gibbs, &cfg.tail_grid_for(run.scheme.n_max)) {
            Ok(fit) => r.tail = Some(fit),
            Err(e) => r.notes.push(format!("tail: {e}")),
        }
        if let Some(b) = base {
            r.delta_pressure = Some((run.gibbs.pressure - b.gibbs.pressure).abs());
            match weak_star_vector(&run.measure, &b.measure, &cfg.dict) {
                Ok(v) => r.weak_star = Some(v),
                Err(e) => r.notes.push(format!("weak*: {e}")),
            }
            if pipeline.t == 1.0 {
                let l1 = GridDensity::from_measure(&run.measure)
                    .and_then(|a| l1_distance(&a, &GridDensity::from_measure(&b.measure)?));
                match l1 {
                    Ok(v) => r.l1 = Some(v),
                    Err(e) => r.notes.push(format!("l1: {e}")),
                }
            }
            match cylinder_mass_mismatch(&b.scheme, &run.scheme, &run.gibbs, cfg.tau_cap) {
                Ok(v) => r.mismatch = Some(v),
                Err(e) => r.notes.push(format!("mismatch: {e}")),
            }
        }
        rungs.push(r);
    }
    let pressure_lipschitz = rungs
        .iter()
        .filter(|r| r.c2_distance > 0.0)
        .filter_map(|r| r.delta_pressure.map(|d| d / r.c2_distance))
        .reduce(f64::max);
    Ok(StabilityReport {
        family: cfg.family.clone(),
        t: pipeline.t,
        base_param: cfg.base_param,
        ladder: cfg.ladder.clone(),
        base_pressure: base.map(|b| b.gibbs.pressure),
        base_notes,
        dict: cfg.dict.clone(),
        rungs,
        pressure_lipschitz,
    })
}

/// True when `values` never increase, except for at most one rise of at
/// most `allowance` relative to the preceding value.
pub fn non_increasing_with_allowance(values: &[f64], allowance: f64) -> bool {
    let mut inversions = 0;
    for w in values.windows(2) {
        if w[1] > w[0] {
            if w[1] > w[0] * (1.0 + allowance) {
                return false;
            }
            inversions += 1;
        }
    }
    inversions <= 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dictionary_is_bounded_and_linear_at_degree_one() {
        let d = TestDictionary::default();
        assert_eq!(d.len(), 8);
        for j in 0..d.len() {
            for k in 0..=100 {
                let v = d.eval(j, k as f64 / 100.0);
                assert!((0.0..=1.0 + 1e-15).contains(&v));
            }
        }
        assert!((d.eval(1, 0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn geometric_tail_rate() {
        let w: Vec<(usize, f64)> = (1..=60).map(|t| (t, 0.5f64.powi(t as i32))).collect();
        let fit = tail_fit(&w, &(1..=30).collect::<Vec<_>>()).unwrap();
        assert_eq!(fit.kind, TailKind::Exponential);
        assert!((fit.rate - 2f64.ln()).abs() < 1e-3, "{}", fit.rate);
    }

    #[test]
    fn tail_needs_three_points() {
        let w = vec![(1, 0.5), (2, 0.5)];
        assert!(matches!(tail_fit(&w, &[1, 2, 3]), Err(Error::TailUnderresolved { .. })));
    }

    #[test]
    fn ladder_validation() {
        let mut c = SweepConfig::new("tent", 1.9, vec![0.05, 0.02, 0.02], PipelineConfig::default());
        assert!(c.validate().is_err());
        c.ladder = vec![-0.01, -0.005];
        assert!(c.validate().is_ok());
    }

    #[test]
    fn inversion_allowance() {
        assert!(non_increasing_with_allowance(&[4.0, 3.0, 3.2, 1.0], 0.1));
        assert!(!non_increasing_with_allowance(&[4.0, 3.0, 3.5, 1.0], 0.1));
        assert!(!non_increasing_with_allowance(&[4.0, 4.1, 3.0, 3.1], 0.1));
    }
}
