//! One function per subcommand. Each writes its CSV (and SVG with `plot`)
//! files under the output directory and a short summary to `out`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use thermoform::cylinders::partition;
use thermoform::density::{l1_distance, lyapunov, ulam_with, GridDensity, UlamOptions};
use thermoform::dump::{self, fmt};
use thermoform::plot::{report_charts, Chart, Series};
use thermoform::stability::{run_sweep, scheme_for, TestDictionary};
use thermoform::thermo::{gibbs_state_with, invariance_residual, project_measure, solve_pressure_with};
use thermoform::tower::{build_tower, transitive_component};

use crate::config::ExperimentConfig;
use crate::error::CliError;

type CmdResult = Result<(), CliError>;

fn create(cfg: &ExperimentConfig, name: &str) -> Result<BufWriter<File>, CliError> {
    fs::create_dir_all(&cfg.output.dir)?;
    Ok(BufWriter::new(File::create(path(cfg, name))?))
}

fn path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output.dir.join(name)
}

fn t_tag(t: f64) -> String {
    format!("t{}", fmt(t))
}

fn write_svg(cfg: &ExperimentConfig, name: &str, chart: &Chart) -> CmdResult {
    let mut f = create(cfg, name)?;
    f.write_all(chart.to_svg().as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn cmd_partition<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> CmdResult {
    let depth = cfg.run.partition_depth.unwrap_or(cfg.run.k);
    let part = partition(&cfg.map(), depth)?;
    dump::partition_csv(&part, create(cfg, "partition.csv")?)?;
    let slivers = part.cylinders.iter().filter(|c| c.sliver).count();
    writeln!(out, "partition depth {depth}: {} cylinders ({slivers} slivers)", part.len())?;
    Ok(())
}

pub fn cmd_tower<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> CmdResult {
    let height = cfg.run.tower_height.unwrap_or(cfg.run.n_max + 2);
    let mut tower = build_tower(&cfg.map(), height)?;
    let transitive = transitive_component(&mut tower)?;
    dump::tower_csv(&tower, create(cfg, "tower.csv")?)?;
    dump::tower_dot(&tower, create(cfg, "tower.dot")?)?;
    writeln!(
        out,
        "tower height {height}: {} nodes, {} edges, {} transitive",
        tower.domains.len(),
        tower.edges.len(),
        transitive.len()
    )?;
    if tower.transitive_tie {
        writeln!(out, "warning: two maximal cyclic components tie in size")?;
    }
    Ok(())
}

pub fn cmd_induce<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> CmdResult {
    let scheme = scheme_for(&cfg.map(), &cfg.pipeline(cfg.run.t[0]))?;
    dump::scheme_csv(&scheme, create(cfg, "scheme.csv")?)?;
    writeln!(
        out,
        "base [{}, {}] itinerary {:?}: {} branches, coverage {}, open mass {}, unresolved {}",
        fmt(scheme.base.0),
        fmt(scheme.base.1),
        scheme.base_itinerary,
        scheme.branches.len(),
        fmt(scheme.coverage),
        fmt(scheme.open_mass),
        scheme.unresolved_branches
    )?;
    let short = scheme.branches.iter().filter(|b| !b.extension_ok).count();
    if short > 0 {
        writeln!(out, "note: {short} branches lack the (1+delta) extension")?;
    }
    if !scheme.boundary_ok {
        writeln!(out, "note: base fails the finite boundary check")?;
    }
    Ok(())
}

pub fn cmd_pressure<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> CmdResult {
    let pipeline = cfg.pipeline(cfg.run.t[0]);
    let scheme = scheme_for(&cfg.map(), &pipeline)?;
    let mut rows = Vec::with_capacity(cfg.run.t.len());
    for &t in &cfg.run.t {
        let sol = solve_pressure_with(&scheme, t, &pipeline.gibbs.solve)?;
        writeln!(out, "t = {}  P = {}", fmt(t), fmt(sol.pressure))?;
        rows.push(sol);
    }
    dump::pressure_csv(&rows, create(cfg, "pressure.csv")?)?;
    Ok(())
}

pub fn cmd_equilibrium<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> CmdResult {
    let map = cfg.map();
    let scheme = scheme_for(&map, &cfg.pipeline(cfg.run.t[0]))?;
    let dict = TestDictionary::default();
    for &t in &cfg.run.t {
        let pipeline = cfg.pipeline(t);
        let gs = gibbs_state_with(&scheme, t, &pipeline.gibbs)?;
        let mu = project_measure(&scheme, &gs, pipeline.bins)?;
        let tag = t_tag(t);
        dump::gibbs_csv(&gs, create(cfg, &format!("gibbs_{tag}.csv"))?)?;
        dump::measure_csv(&mu, create(cfg, &format!("measure_{tag}.csv"))?)?;
        writeln!(
            out,
            "t = {}  P = {}  K = {}  mean tau = {}  invariance = {}",
            fmt(t),
            fmt(gs.pressure),
            fmt(gs.gibbs_constant),
            fmt(gs.tau_mean),
            fmt(invariance_residual(&map, &mu, &dict)?)
        )?;
        let Ok(density) = GridDensity::from_measure(&mu) else {
            writeln!(out, "  measure has atoms; no density written")?;
            continue;
        };
        dump::density_csv(&density, create(cfg, &format!("density_{tag}.csv"))?)?;
        writeln!(out, "  lyapunov = {}", fmt(lyapunov(&map, &density)))?;
        let mut chart = Chart::new(&format!("{} density, t = {}", map.id(), fmt(t)), "x", "density");
        chart.series.push(Series::new("projected", centres(&density)));
        if t == 1.0 {
            let opts = UlamOptions { seed: cfg.output.seed, ..Default::default() };
            let reference = ulam_with(&map, pipeline.bins, &opts)?;
            writeln!(out, "  L1 to Ulam = {}", fmt(l1_distance(&density, &reference)?))?;
            chart.series.push(Series::new("Ulam", centres(&reference)));
        }
        if cfg.output.plot {
            write_svg(cfg, &format!("density_{tag}.svg"), &chart)?;
        }
    }
    Ok(())
}

fn centres(d: &GridDensity) -> Vec<(f64, f64)> {
    let h = d.bin_width();
    d.values.iter().enumerate().map(|(j, &v)| ((j as f64 + 0.5) * h, v)).collect()
}

pub fn cmd_stability<W: Write>(cfg: &ExperimentConfig, out: &mut W) -> CmdResult {
    if cfg.stability.is_none() {
        return Err(CliError::Config("stability needs a [stability] section with a ladder".into()));
    }
    for &t in &cfg.run.t {
        let sweep = cfg.sweep(t).expect("stability section present");
        let report = run_sweep(&sweep)?;
        let tag = t_tag(t);
        dump::report_csv(&report, create(cfg, &format!("stability_{tag}.csv"))?)?;
        writeln!(out, "t = {}  base P = {}", fmt(t), report.base_pressure.map(fmt).unwrap_or_else(|| "failed".into()))?;
        for note in &report.base_notes {
            writeln!(out, "  base: {note}")?;
        }
        for r in &report.rungs {
            let col = |x: Option<f64>| x.map(fmt).unwrap_or_else(|| "-".into());
            writeln!(
                out,
                "  offset {}  |dP| {}  weak* {}  L1 {}  K {}{}",
                fmt(r.offset),
                col(r.delta_pressure),
                col(r.weak_star_max()),
                col(r.l1),
                col(r.gibbs_constant),
                if r.notes.is_empty() { String::new() } else { format!("  [{}]", r.notes.join("; ")) }
            )?;
        }
        if cfg.output.plot {
            for (stem, chart) in report_charts(&report) {
                write_svg(cfg, &format!("stability_{tag}_{stem}.svg"), &chart)?;
            }
        }
    }
    Ok(())
}
