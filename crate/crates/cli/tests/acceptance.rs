//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use thermoform::density::{l1_distance, lyapunov, ulam, GridDensity};
use thermoform::maps::IntervalMap;
use thermoform::stability::{
    non_increasing_with_allowance, run_pipeline, run_sweep, scheme_for, tail_profile, PipelineConfig, PipelineRun,
    StabilityReport, SweepConfig, TailKind, TestDictionary,
};
use thermoform::thermo::{conformality_errors, invariance_residual, solve_pressure_with, SolveOptions};
use thermoform_cli::{commands::cmd_stability, ExperimentConfig};

const LN2: f64 = std::f64::consts::LN_2;
const TENT_LADDER: [f64; 4] = [0.05, 0.02, 0.01, 0.005];
const LOGISTIC_LADDER: [f64; 4] = [-0.01, -0.005, -0.002, -0.001];

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// One equilibrium computed for the suites, with its label.
struct Equilibrium {
    label: String,
    map: IntervalMap,
    run: PipelineRun,
}

fn equilibrium(label: &str, map: IntervalMap, t: f64, n_max: usize, itinerary: Option<Vec<u8>>) -> Equilibrium {
    let cfg = PipelineConfig { t, n_max, base_itinerary: itinerary, ..Default::default() };
    let run = run_pipeline(&map, &cfg).unwrap_or_else(|e| panic!("{label}: {e}"));
    Equilibrium { label: label.to_string(), map, run }
}

struct Runs {
    equilibria: Vec<Equilibrium>,
    tent_sweeps: Vec<(f64, StabilityReport, Duration)>,
    logistic_sweep: StabilityReport,
}

impl Runs {
    fn get(&self, label: &str) -> &Equilibrium {
        self.equilibria.iter().find(|e| e.label == label).expect("computed equilibrium")
    }
}

fn compute() -> Runs {
    let tent2 = IntervalMap::tent(2.0).unwrap();
    let tent19 = IntervalMap::tent(1.9).unwrap();
    let cheb = IntervalMap::chebyshev();
    let equilibria = vec![
        equilibrium("tent 2, t = 1", tent2.clone(), 1.0, 20, Some(vec![0])),
        equilibrium("tent 2, t = 0.9", tent2, 0.9, 20, Some(vec![0])),
        equilibrium("cheb, t = 1", cheb.clone(), 1.0, 30, None),
        equilibrium("cheb, t = 0.9", cheb, 0.9, 30, None),
        equilibrium("tent 1.9, t = 1", tent19.clone(), 1.0, 30, None),
        equilibrium("tent 1.9, t = 0.9", tent19, 0.9, 30, None),
        equilibrium("logistic 4, t = 0.9", IntervalMap::logistic(4.0).unwrap(), 0.9, 30, None),
        equilibrium("logistic 3.99, t = 0.9", IntervalMap::logistic(3.99).unwrap(), 0.9, 30, None),
    ];
    let tent_sweeps = [1.0, 0.9]
        .iter()
        .map(|&t| {
            let start = Instant::now();
            let pipeline = PipelineConfig { t, n_max: 30, ..Default::default() };
            let report = run_sweep(&SweepConfig::new("tent", 1.9, TENT_LADDER.to_vec(), pipeline)).unwrap();
            (t, report, start.elapsed())
        })
        .collect();
    let pipeline = PipelineConfig { t: 0.9, n_max: 30, ..Default::default() };
    let logistic_sweep = run_sweep(&SweepConfig::new("logistic", 4.0, LOGISTIC_LADDER.to_vec(), pipeline)).unwrap();
    Runs { equilibria, tent_sweeps, logistic_sweep }
}

fn analytic_pressure() -> Outcome {
    let map = IntervalMap::tent(2.0).unwrap();
    let cfg = PipelineConfig { n_max: 20, base_itinerary: Some(vec![0]), ..Default::default() };
    let opts = SolveOptions { k_max: 8, ..Default::default() };
    let mut worst = (0.0f64, Duration::ZERO);
    for t in [0.8, 0.9, 1.0, 1.1, 1.2] {
        let start = Instant::now();
        let scheme = scheme_for(&map, &cfg).map_err(|e| e.to_string())?;
        let p = solve_pressure_with(&scheme, t, &opts).map_err(|e| e.to_string())?.pressure;
        let elapsed = start.elapsed();
        worst = (worst.0.max((p - (1.0 - t) * LN2).abs()), worst.1.max(elapsed));
    }
    ensure(
        worst.0 < 1e-3 && worst.1 < Duration::from_secs(30),
        format!("max |P - (1-t) log 2| = {:.2e}, slowest t {:.2?}", worst.0, worst.1),
    )
}

fn acip_anchor() -> Outcome {
    let start = Instant::now();
    let e = equilibrium("cheb acip", IntervalMap::chebyshev(), 1.0, 30, None);
    let d = GridDensity::from_measure(&e.run.measure).map_err(|e| e.to_string())?;
    let bins = d.bins();
    let arcsine = l1_distance(&d, &GridDensity::arcsine(bins)).map_err(|e| e.to_string())?;
    let to_ulam = l1_distance(&d, &ulam(&e.map, bins).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let lyap = lyapunov(&e.map, &d);
    let p = e.run.gibbs.pressure;
    let elapsed = start.elapsed();
    ensure(
        bins == 1 << 12 && arcsine < 0.05 && to_ulam < 0.1 && (lyap - LN2).abs() < 1e-2 && p.abs() < 1e-3 && elapsed < Duration::from_secs(120),
        format!("{bins} bins: L1 arcsine {arcsine:.4}, L1 Ulam {to_ulam:.4}, lyapunov {lyap:.5}, P {p:.2e}, {elapsed:.2?}"),
    )
}

fn gibbs_suite(runs: &Runs) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for e in &runs.equilibria {
        let g = &e.run.gibbs;
        let depth_ok = g.words.len() >= 4;
        let violations = g.sandwich_violations();
        let bound = 1.5 * g.h_bound;
        let pass = depth_ok && violations == 0 && g.gibbs_constant <= bound;
        ok &= pass;
        let note = if g.h_bound.is_finite() { String::new() } else { " (bound vacuous)".into() };
        lines.push(format!("{}: K {:.3} <= {:.3}{note}, {} violations", e.label, g.gibbs_constant, bound, violations));
    }
    ensure(ok, lines.join("; "))
}

fn conformality_suite(runs: &Runs) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for label in ["tent 2, t = 1", "tent 2, t = 0.9", "cheb, t = 1", "cheb, t = 0.9"] {
        let e = runs.get(label);
        let errs = conformality_errors(&e.run.scheme, &e.run.gibbs);
        let worst = errs.iter().map(|c| c.1).fold(0.0, f64::max);
        ok &= !errs.is_empty() && worst < 0.05;
        lines.push(format!("{label}: {worst:.2e}"));
    }
    ensure(ok, lines.join("; "))
}

fn invariance_suite(runs: &Runs) -> Outcome {
    let dict = TestDictionary::default();
    let mut worst = (0.0f64, String::new());
    for e in &runs.equilibria {
        let r = invariance_residual(&e.map, &e.run.measure, &dict).map_err(|err| err.to_string())?;
        if r >= worst.0 {
            worst = (r, e.label.clone());
        }
    }
    ensure(
        dict.len() == 8 && worst.0 < 2e-2,
        format!("{} equilibria, {} observables, worst {:.2e} ({})", runs.equilibria.len(), dict.len(), worst.0, worst.1),
    )
}

fn column(report: &StabilityReport, f: impl Fn(&thermoform::stability::RungResult) -> Option<f64>) -> Result<Vec<f64>, String> {
    report
        .rungs
        .iter()
        .map(|r| f(r).ok_or_else(|| format!("rung {} has no value: {:?}", r.offset, r.notes)))
        .collect()
}

fn fmt_col(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn weak_star_stability(runs: &Runs) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut total = Duration::ZERO;
    for (t, report, elapsed) in &runs.tent_sweeps {
        let w = column(report, |r| r.weak_star_max())?;
        ok &= non_increasing_with_allowance(&w, 0.1) && *w.last().unwrap() < 0.02;
        total += *elapsed;
        lines.push(format!("t = {t}: weak* [{}]", fmt_col(&w)));
    }
    ok &= total < Duration::from_secs(600);
    lines.push(format!("{total:.2?}"));
    ensure(ok, lines.join("; "))
}

fn strong_stability(runs: &Runs) -> Outcome {
    let (_, report, _) = runs.tent_sweeps.iter().find(|s| s.0 == 1.0).expect("t = 1 sweep");
    let l1 = column(report, |r| r.l1)?;
    ensure(
        non_increasing_with_allowance(&l1, 0.0) && *l1.last().unwrap() < 0.05,
        format!("t = 1: L1 [{}]", fmt_col(&l1)),
    )
}

fn pressure_continuity(runs: &Runs) -> Outcome {
    let mut worst = 0.0f64;
    for (t, report, _) in &runs.tent_sweeps {
        for r in &report.rungs {
            let dp = r.delta_pressure.ok_or_else(|| format!("rung {} failed: {:?}", r.offset, r.notes))?;
            worst = worst.max((dp - ((1.0 - t) * (r.param / 1.9).ln()).abs()).abs());
        }
    }
    let dp = column(&runs.logistic_sweep, |r| r.delta_pressure)?;
    let decreasing = dp.windows(2).all(|w| w[1] < w[0]);
    ensure(
        worst < 1e-3 && decreasing,
        format!("tent max deviation from analytic {worst:.2e}; logistic 4 |dP| [{}]", dp.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")),
    )
}

fn tail_decay(runs: &Runs) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for label in ["tent 2, t = 1", "cheb, t = 1", "cheb, t = 0.9"] {
        let e = runs.get(label);
        let grid: Vec<usize> = (1..e.run.scheme.n_max - e.run.scheme.n_max / 4).collect();
        let fit = tail_profile(&e.run.scheme, &e.run.gibbs, &grid).map_err(|err| format!("{label}: {err}"))?;
        let mut pass = fit.kind == TailKind::Exponential && fit.r_squared > 0.9 && fit.rate > 0.0;
        if label.starts_with("tent 2") {
            pass &= (fit.rate / LN2 - 1.0).abs() < 0.05;
        }
        ok &= pass;
        lines.push(format!("{label}: {} rate {:.4} R2 {:.4}", fit.kind.as_str(), fit.rate, fit.r_squared));
    }
    ensure(ok, lines.join("; "))
}

fn determinism() -> Outcome {
    let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
    let mut outputs = Vec::new();
    for d in &dirs {
        let text = format!(
            "[map]\nfamily = \"tent\"\nparams = [1.9]\n[run]\nt = [0.9, 1.0]\nn_max = 20\n[stability]\nladder = [0.05, 0.02, 0.01, 0.005]\n[output]\ndir = \"{}\"\n",
            d.path().display()
        );
        let cfg = ExperimentConfig::parse(&text, Vec::new()).map_err(|e| e.to_string())?;
        cmd_stability(&cfg, &mut std::io::sink()).map_err(|e| e.to_string())?;
        let files: Vec<(String, Vec<u8>)> = ["stability_t0.9.csv", "stability_t1.csv"]
            .iter()
            .map(|f| Ok((f.to_string(), fs::read(d.path().join(f)).map_err(|e| e.to_string())?)))
            .collect::<Result<_, String>>()?;
        outputs.push(files);
    }
    let bytes: usize = outputs[0].iter().map(|f| f.1.len()).sum();
    ensure(outputs[0] == outputs[1], format!("{} CSVs, {bytes} bytes, identical: {}", outputs[0].len(), outputs[0] == outputs[1]))
}

fn main() -> ExitCode {
    let setup = Instant::now();
    let runs = catch_unwind(compute);
    let runs = match runs {
        Ok(r) => r,
        Err(_) => {
            println!("FAIL setup: a pipeline run panicked");
            return ExitCode::FAILURE;
        }
    };
    println!("shared runs computed in {:.2?}", setup.elapsed());
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("analytic pressure", Box::new(analytic_pressure)),
        ("acip anchor", Box::new(acip_anchor)),
        ("Gibbs property suite", Box::new(|| gibbs_suite(&runs))),
        ("conformality suite", Box::new(|| conformality_suite(&runs))),
        ("invariance suite", Box::new(|| invariance_suite(&runs))),
        ("weak* stability", Box::new(|| weak_star_stability(&runs))),
        ("strong stability", Box::new(|| strong_stability(&runs))),
        ("pressure continuity", Box::new(|| pressure_continuity(&runs))),
        ("tail decay", Box::new(|| tail_decay(&runs))),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
