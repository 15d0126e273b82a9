//! CSV and DOT writers for every pipeline stage. Numbers are printed with
//! 12 significant digits so that output is stable across runs and platforms.

use std::io::Write;

use crate::cylinders::CylinderPartition;
use crate::density::GridDensity;
use crate::error::Result;
use crate::inducing::InducingScheme;
use crate::stability::StabilityReport;
use crate::thermo::{EquilibriumMeasure, GibbsState, PressureSolution};
use crate::tower::HofbauerTower;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// `x` with [`SIGNIFICANT_DIGITS`] significant digits in the shortest of
/// fixed or exponent notation, trailing zeros removed (C's `%.12g`).
pub fn fmt(x: f64) -> String {
    fmt_sig(x, SIGNIFICANT_DIGITS)
}

pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let digits = digits.max(1);
    // round first, since rounding can carry into the next decade
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}", trim_zeros(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn word<T: ToString>(w: &[T]) -> String {
    w.iter().map(ToString::to_string).collect::<Vec<_>>().join(".")
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub fn partition_csv<W: Write>(part: &CylinderPartition, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["level", "index", "itinerary", "left", "right", "width", "sliver"])?;
    for (i, c) in part.cylinders.iter().enumerate() {
        w.write_record([
            c.level.to_string(),
            i.to_string(),
            word(&c.itinerary),
            fmt(c.left),
            fmt(c.right),
            fmt(c.width()),
            c.sliver.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn tower_csv<W: Write>(tower: &HofbauerTower, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["id", "min_level", "left", "right", "address", "explored", "transitive", "successors"])?;
    for d in &tower.domains {
        let succ: Vec<String> = d.successors.iter().map(|s| s.map(|x| x.to_string()).unwrap_or_else(|| "-".into())).collect();
        w.write_record([
            d.id.to_string(),
            d.min_level.to_string(),
            fmt(d.left),
            fmt(d.right),
            word(&d.address),
            d.explored.to_string(),
            tower.is_transitive(d.id).to_string(),
            succ.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Graphviz rendering of the tower graph; transitive domains are filled.
pub fn tower_dot<W: Write>(tower: &HofbauerTower, mut out: W) -> Result<()> {
    writeln!(out, "digraph tower {{")?;
    for d in &tower.domains {
        let style = if tower.is_transitive(d.id) { ", style=filled" } else { "" };
        writeln!(out, "  d{} [label=\"D{} L{}\\n[{}, {}]\"{}];", d.id, d.id, d.min_level, fmt(d.left), fmt(d.right), style)?;
    }
    let mut edges = tower.edges.clone();
    edges.sort_unstable();
    edges.dedup();
    for (a, b) in edges {
        writeln!(out, "  d{a} -> d{b};")?;
    }
    writeln!(out, "}}")?;
    Ok(())
}

pub fn scheme_csv<W: Write>(scheme: &InducingScheme, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["index", "left", "right", "width", "tau", "itinerary", "extension_ok", "distortion", "landing"])?;
    for (i, b) in scheme.branches.iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt(b.left),
            fmt(b.right),
            fmt(b.width()),
            b.tau.to_string(),
            word(&b.itinerary),
            b.extension_ok.to_string(),
            fmt(b.distortion),
            b.landing.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn pressure_csv<W: Write>(rows: &[PressureSolution], out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["t", "pressure", "residual", "k_used", "lower_bound", "stable"])?;
    for r in rows {
        w.write_record([
            fmt(r.t),
            fmt(r.pressure),
            fmt(r.residual),
            r.estimate.k_used.to_string(),
            fmt(r.estimate.lower_bound),
            r.estimate.stable.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sampled cylinder words with their Gibbs data, shallow levels first.
pub fn gibbs_csv<W: Write>(gs: &GibbsState, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["depth", "word", "tau_sum", "left", "right", "psi", "mass", "conformal", "gibbs_ratio"])?;
    for (k, level) in gs.words.iter().enumerate() {
        for ww in level {
            w.write_record([
                (k + 1).to_string(),
                word(&ww.word),
                ww.tau_sum.to_string(),
                fmt(ww.left),
                fmt(ww.right),
                fmt(ww.psi),
                fmt(ww.mass),
                fmt(ww.conformal),
                fmt(ww.gibbs_ratio()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn measure_csv<W: Write>(mu: &EquilibriumMeasure, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["bin_left", "mass"])?;
    let h = mu.bin_width();
    for (j, m) in mu.histogram.iter().enumerate() {
        w.write_record([fmt(j as f64 * h), fmt(*m)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn density_csv<W: Write>(d: &GridDensity, out: W) -> Result<()> {
    let mut w = writer(out);
    w.write_record(["bin_left", "density"])?;
    for (j, v) in d.values.iter().enumerate() {
        w.write_record([fmt(d.bin_left(j)), fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per rung; the weak* vector is spread over one column per test
/// observable.
pub fn report_csv<W: Write>(report: &StabilityReport, out: W) -> Result<()> {
    let mut w = writer(out);
    let mut header: Vec<String> = ["offset", "param", "c2_distance", "pressure", "delta_pressure", "weak_star_max"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..report.dict.len()).map(|j| format!("weak_star_{}", report.dict.name(j))));
    let with_l1 = report.t == 1.0;
    if with_l1 {
        header.push("l1".into());
    }
    header.extend(["tail_kind", "tail_constant", "tail_rate", "tail_r2", "mismatch", "gibbs_constant", "tau_mean", "notes"].map(String::from));
    w.write_record(&header)?;
    for r in &report.rungs {
        let mut row = vec![fmt(r.offset), fmt(r.param), fmt(r.c2_distance), opt(r.pressure), opt(r.delta_pressure), opt(r.weak_star_max())];
        for j in 0..report.dict.len() {
            row.push(opt(r.weak_star.as_ref().map(|v| v[j])));
        }
        if with_l1 {
            row.push(opt(r.l1));
        }
        match &r.tail {
            Some(t) => row.extend([format!("{:?}", t.kind).to_lowercase(), fmt(t.constant), fmt(t.rate), fmt(t.r_squared)]),
            None => row.extend(std::iter::repeat(String::new()).take(4)),
        }
        row.extend([opt(r.mismatch), opt(r.gibbs_constant), opt(r.tau_mean), r.notes.join("; ")]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt(0.2 * 2f64.ln()), "0.138629436112");
        assert_eq!(fmt(1.0), "1");
        assert_eq!(fmt(-2.5), "-2.5");
        assert_eq!(fmt(1e-7), "1e-7");
        assert_eq!(fmt(3.00824137466e-5), "3.00824137466e-5");
        assert_eq!(fmt(1.5e-4), "0.00015");
        assert_eq!(fmt(123456789012345.0), "1.23456789012e14");
        assert_eq!(fmt(0.99999999999999), "1");
        assert_eq!(fmt(f64::INFINITY), "inf");
        assert_eq!(fmt(0.0), "0");
    }

    #[test]
    fn words_are_dotted() {
        assert_eq!(word(&[0u8, 1, 1]), "0.1.1");
        assert_eq!(word::<u8>(&[]), "");
    }
}
