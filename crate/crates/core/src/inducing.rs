//! First-return inducing schemes over the Č-set of the tower.
//!
//! A base cylinder `X` is lifted to the transitive domains `D ⊇ (1+δ)X`.
//! Starting from the lowest such domain, pieces of `X` are pushed forward one
//! branch at a time together with their tower domain; a piece returns when
//! its domain is in the Č-set and its image covers `X`. The return branch is
//! the pullback of `X` along the recorded itinerary.

use rayon::prelude::*;

use crate::cylinders::{boundary_condition, partition, Cylinder};
use crate::error::{Error, Result};
use crate::maps::IntervalMap;
use crate::tower::HofbauerTower;

pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_N_MAX: usize = 25;
pub const DEFAULT_COVERAGE_FLOOR: f64 = 0.9;
/// Image endpoints this close to a base endpoint are snapped onto it.
pub const SNAP_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_PIECE_CAP: usize = 4_000_000;
/// Relative error allowed when a branch midpoint is mapped back to the base.
pub const RETURN_TOLERANCE: f64 = 1e-6;

/// `(a - δγ, a + γ + δγ) ∩ [0,1]` with `γ = b - a`.
pub fn fatten(interval: (f64, f64), delta: f64) -> (f64, f64) {
    let (a, b) = interval;
    let g = b - a;
    ((a - delta * g).max(0.0), (b + delta * g).min(1.0))
}

/// Transitive domains whose interval contains `(1+δ)A`, each paired with the
/// piece of `A` it carries, ordered by `(min_level, id)`.
pub fn check_set(tower: &HofbauerTower, a: (f64, f64), delta: f64) -> Result<Vec<(usize, (f64, f64))>> {
    let ids = tower.transitive_ids().ok_or(Error::ComponentMissing)?;
    let (lo, hi) = fatten(a, delta);
    let tol = tower.ident_tol;
    let mut out: Vec<(usize, (f64, f64))> = ids
        .iter()
        .copied()
        .filter(|&id| {
            let d = &tower.domains[id];
            d.left <= lo + tol && d.right >= hi - tol
        })
        .map(|id| (id, a))
        .collect();
    out.sort_by_key(|&(id, _)| (tower.domains[id].min_level, id));
    Ok(out)
}

/// One branch `X_i` of the induced map `F = f^{τ_i}` onto the base.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub left: f64,
    pub right: f64,
    pub tau: usize,
    pub itinerary: Vec<u8>,
    /// `f^τ` is monotone on the pullback of the (1+δ)-fattened base.
    pub extension_ok: bool,
    /// max/min of `|(f^τ)'|` over five sample points.
    pub distortion: f64,
    /// Tower domain in which the return lands.
    pub landing: usize,
}

impl Branch {
    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.left && x <= self.right
    }

    /// The inverse branch `g_i(y)` and `log|(f^τ)'|` at that point.
    pub fn pull(&self, map: &IntervalMap, y: f64) -> (f64, f64) {
        pull_word(map, &self.itinerary, y)
    }
}

/// Pulls `y` back along an itinerary; returns the preimage and the log
/// derivative of the composed forward map at it.
pub fn pull_word(map: &IntervalMap, word: &[u8], y: f64) -> (f64, f64) {
    let mut z = y;
    let mut log_d = 0.0;
    for &s in word.iter().rev() {
        z = map.inverse(s as usize, z);
        log_d += map.branch_deriv1(s as usize, z).abs().ln();
    }
    (z, log_d)
}

/// Pulls `y` back along an itinerary without derivative bookkeeping.
pub fn pull_point(map: &IntervalMap, word: &[u8], y: f64) -> f64 {
    word.iter().rev().fold(y, |z, &s| map.inverse(s as usize, z))
}

/// Like [`pull_word`], but fails with the offending orbit point when the
/// chain passes inside the critical clearance.
pub fn pull_word_checked(map: &IntervalMap, word: &[u8], y: f64) -> std::result::Result<(f64, f64), f64> {
    let mut z = y;
    let mut log_d = 0.0;
    for &s in word.iter().rev() {
        z = map.inverse(s as usize, z);
        if map.near_critical(z).is_some() {
            return Err(z);
        }
        log_d += map.branch_deriv1(s as usize, z).abs().ln();
    }
    Ok((z, log_d))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeOptions {
    pub delta: f64,
    pub n_max: usize,
    pub coverage_floor: f64,
    pub piece_cap: usize,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            n_max: DEFAULT_N_MAX,
            coverage_floor: DEFAULT_COVERAGE_FLOOR,
            piece_cap: DEFAULT_PIECE_CAP,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InducingScheme {
    pub map: IntervalMap,
    pub base: (f64, f64),
    pub base_itinerary: Vec<u8>,
    pub delta: f64,
    pub n_max: usize,
    /// Sorted left to right.
    pub branches: Vec<Branch>,
    /// `Σ|X_i| / |X|`.
    pub coverage: f64,
    /// Base fraction lost to returns that only partly cover the base.
    pub partial_mass: f64,
    pub partial_returns: usize,
    /// Base fraction still travelling at `n_max`.
    pub open_mass: f64,
    pub start_domain: usize,
    pub check_domains: Vec<usize>,
    /// `f^j(∂X) ∩ ∂X = ∅` for `1 <= j <= level(X)`.
    pub boundary_ok: bool,
    /// Both base endpoints are approached by long branches.
    pub accumulation_ok: bool,
    /// Largest branch distortion.
    pub distortion_bound: f64,
    /// Returns dropped because double precision cannot separate them.
    pub unresolved_branches: usize,
    /// Base fraction of the dropped returns.
    pub unresolved_mass: f64,
}

impl InducingScheme {
    pub fn base_width(&self) -> f64 {
        self.base.1 - self.base.0
    }

    /// Index of the branch containing `x`.
    pub fn branch_at(&self, x: f64) -> Option<usize> {
        let idx = self.branches.partition_point(|b| b.right < x);
        (idx < self.branches.len() && self.branches[idx].contains(x)).then_some(idx)
    }

    /// Branch counts per inducing time, index `τ`.
    pub fn tau_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_max + 1];
        for b in &self.branches {
            counts[b.tau] += 1;
        }
        counts
    }

    /// Applies `F = f^τ` on the branch containing `x`.
    pub fn induced(&self, x: f64) -> Option<(f64, usize)> {
        let i = self.branch_at(x)?;
        let b = &self.branches[i];
        let mut y = x;
        for &s in &b.itinerary {
            y = self.map.eval(y);
            debug_assert!(s as usize <= self.map.branch_count());
        }
        Some((y.clamp(self.base.0, self.base.1), b.tau))
    }
}

#[derive(Clone, Debug)]
struct Piece {
    lo: f64,
    hi: f64,
    domain: usize,
    word: Vec<u8>,
}

enum Outcome {
    Return(Branch),
    Partial(f64),
    Continue(Piece),
    Lost(f64),
    Unresolved(f64),
}

pub fn build_scheme(map: &IntervalMap, tower: &HofbauerTower, base: &Cylinder, opts: &SchemeOptions) -> Result<InducingScheme> {
    if opts.n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    if !(opts.delta >= 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be nonnegative, got {}", opts.delta)));
    }
    let x = base.interval();
    let check = check_set(tower, x, opts.delta)?;
    if check.is_empty() {
        return Err(Error::BaseNotInTransitivePart { left: x.0, right: x.1 });
    }
    let check_domains: Vec<usize> = check.iter().map(|c| c.0).collect();
    let mut in_check = vec![false; tower.domains.len()];
    for &d in &check_domains {
        in_check[d] = true;
    }
    let start = check_domains[0];
    let width = x.1 - x.0;
    let fat = fatten(x, opts.delta);
    let branches_q1 = map.branches();

    let mut pieces = vec![Piece { lo: x.0, hi: x.1, domain: start, word: Vec::new() }];
    let mut branches = Vec::new();
    let mut partial_mass = 0.0;
    let mut partial_returns = 0;
    let mut lost_mass = 0.0;
    let (mut unresolved_branches, mut unresolved_mass) = (0, 0.0);

    for _step in 1..=opts.n_max {
        let outcomes: Vec<Vec<Outcome>> = pieces
            .par_iter()
            .map(|p| step_piece(map, tower, p, &branches_q1, &in_check, x, fat))
            .collect();
        let mut next = Vec::new();
        for o in outcomes.into_iter().flatten() {
            match o {
                Outcome::Return(b) => branches.push(b),
                Outcome::Partial(m) => {
                    partial_mass += m;
                    partial_returns += 1;
                }
                Outcome::Continue(p) => next.push(p),
                Outcome::Lost(m) => lost_mass += m,
                Outcome::Unresolved(m) => {
                    unresolved_branches += 1;
                    unresolved_mass += m;
                }
            }
        }
        if next.len() > opts.piece_cap {
            return Err(Error::SchemeTooLarge { cap: opts.piece_cap });
        }
        pieces = next;
        if pieces.is_empty() {
            break;
        }
    }
    let open_mass: f64 = pieces.iter().map(|p| piece_mass(map, p)).sum::<f64>() + lost_mass;
    if branches.is_empty() {
        return Err(Error::EmptyScheme);
    }
    branches.sort_by(|a, b| a.left.total_cmp(&b.left));
    let covered: f64 = branches.iter().map(Branch::width).sum();
    let coverage = covered / width;
    if coverage < opts.coverage_floor {
        log::warn!("low coverage {coverage:.6} for scheme of {} over [{}, {}]", map.id(), x.0, x.1);
    }
    let distortion_bound = branches.iter().map(|b| b.distortion).fold(1.0, f64::max);
    let accumulation_ok = accumulation(&branches, x, opts.n_max);
    Ok(InducingScheme {
        map: map.clone(),
        base: x,
        base_itinerary: base.itinerary.clone(),
        delta: opts.delta,
        n_max: opts.n_max,
        branches,
        coverage,
        partial_mass: partial_mass / width,
        partial_returns,
        open_mass: open_mass / width,
        start_domain: start,
        check_domains,
        boundary_ok: boundary_condition(map, x.0, x.1, base.level),
        accumulation_ok,
        distortion_bound,
        unresolved_branches,
        unresolved_mass: unresolved_mass / width,
    })
}

fn piece_mass(map: &IntervalMap, p: &Piece) -> f64 {
    let (a, _) = pull_word(map, &p.word, p.lo);
    let (b, _) = pull_word(map, &p.word, p.hi);
    (b - a).abs()
}

fn step_piece(
    map: &IntervalMap,
    tower: &HofbauerTower,
    p: &Piece,
    q1: &[(f64, f64)],
    in_check: &[bool],
    x: (f64, f64),
    fat: (f64, f64),
) -> Vec<Outcome> {
    let mut out = Vec::new();
    let dom = &tower.domains[p.domain];
    for (s, &(b_lo, b_hi)) in q1.iter().enumerate() {
        let (lo, hi) = (p.lo.max(b_lo), p.hi.min(b_hi));
        if hi - lo <= crate::tower::PIECE_TOLERANCE {
            continue;
        }
        let mut word = p.word.clone();
        word.push(s as u8);
        let next = if dom.explored { dom.successors[s] } else { None };
        let Some(next) = next else {
            out.push(Outcome::Lost(piece_mass(map, &Piece { lo, hi, domain: p.domain, word: p.word.clone() })));
            continue;
        };
        let (mut i_lo, mut i_hi) = map.image_on_branch(s, lo, hi);
        for e in [x.0, x.1] {
            if (i_lo - e).abs() < SNAP_TOLERANCE {
                i_lo = e;
            }
            if (i_hi - e).abs() < SNAP_TOLERANCE {
                i_hi = e;
            }
        }
        if !in_check[next] || i_hi <= x.0 || i_lo >= x.1 {
            out.push(Outcome::Continue(Piece { lo: i_lo, hi: i_hi, domain: next, word }));
            continue;
        }
        if i_lo <= x.0 && i_hi >= x.1 {
            let b = make_branch(map, x, fat, word.clone(), next);
            if resolved(map, &b, x) {
                out.push(Outcome::Return(b));
            } else {
                out.push(Outcome::Unresolved(b.width()));
            }
        } else {
            let piece = Piece { lo: i_lo.max(x.0), hi: i_hi.min(x.1), domain: next, word: word.clone() };
            out.push(Outcome::Partial(piece_mass(map, &piece)));
        }
        if x.0 - i_lo > crate::tower::PIECE_TOLERANCE {
            out.push(Outcome::Continue(Piece { lo: i_lo, hi: x.0, domain: next, word: word.clone() }));
        }
        if i_hi - x.1 > crate::tower::PIECE_TOLERANCE {
            out.push(Outcome::Continue(Piece { lo: x.1, hi: i_hi, domain: next, word }));
        }
    }
    out
}

fn make_branch(map: &IntervalMap, x: (f64, f64), fat: (f64, f64), itinerary: Vec<u8>, landing: usize) -> Branch {
    let (a, _) = pull_word(map, &itinerary, x.0);
    let (b, _) = pull_word(map, &itinerary, x.1);
    let (left, right) = (a.min(b), a.max(b));
    let extension_ok = extension_ok(map, &itinerary, fat);
    let mut dmin = f64::INFINITY;
    let mut dmax = 0.0f64;
    for j in 0..5 {
        let y = x.0 + (x.1 - x.0) * j as f64 / 4.0;
        let (_, ld) = pull_word(map, &itinerary, y);
        dmin = dmin.min(ld);
        dmax = dmax.max(ld);
    }
    Branch {
        left,
        right,
        tau: itinerary.len(),
        itinerary,
        extension_ok,
        distortion: (dmax - dmin).exp(),
        landing,
    }
}

/// The pulled base midpoint must come back to the base midpoint under
/// `f^τ`. Near folds the inverse branches lose half the significant digits,
/// and deep returns there collapse onto a wrong, possibly zero-width interval.
fn resolved(map: &IntervalMap, b: &Branch, x: (f64, f64)) -> bool {
    if b.right <= b.left {
        return false;
    }
    let mid = 0.5 * (x.0 + x.1);
    let (mut y, _) = pull_word(map, &b.itinerary, mid);
    if !(b.left..=b.right).contains(&y) {
        return false;
    }
    for _ in 0..b.tau {
        y = map.eval(y);
    }
    (y - mid).abs() <= RETURN_TOLERANCE * (x.1 - x.0)
}

/// Pulls the fattened base back along `word`, checking that no intermediate
/// interval reaches a critical value of the branch it is pulled through, so
/// that `f^τ` extends diffeomorphically over the pullback.
fn extension_ok(map: &IntervalMap, word: &[u8], fat: (f64, f64)) -> bool {
    let crit: Vec<f64> = map.critical_points().iter().map(|c| c.location).collect();
    let q1 = map.branches();
    let (mut lo, mut hi) = fat;
    for &s in word.iter().rev() {
        let s = s as usize;
        let (b_lo, b_hi) = q1[s];
        for end in [b_lo, b_hi] {
            if crit.contains(&end) {
                let v = map.eval(end);
                if v >= lo - SNAP_TOLERANCE && v <= hi + SNAP_TOLERANCE {
                    return false;
                }
            }
        }
        let (i_lo, i_hi) = map.branch_image(s);
        if lo < i_lo - SNAP_TOLERANCE || hi > i_hi + SNAP_TOLERANCE {
            return false;
        }
        let (a, b) = (map.inverse(s, lo), map.inverse(s, hi));
        lo = a.min(b);
        hi = a.max(b);
    }
    true
}

/// Each base endpoint has branches with `τ >= n_max / 2` within 1% of the
/// base width, or is itself covered by a branch.
fn accumulation(branches: &[Branch], x: (f64, f64), n_max: usize) -> bool {
    let reach = 0.01 * (x.1 - x.0);
    let long = (n_max / 2).max(1);
    [x.0, x.1].iter().all(|&e| {
        branches.iter().any(|b| {
            let dist = if b.contains(e) { 0.0 } else { (b.left - e).abs().min((b.right - e).abs()) };
            dist == 0.0 || (b.tau >= long && dist < reach)
        })
    })
}

/// Base cylinders of depth `k` in itinerary order, filtered to non-slivers
/// with a nonempty Č-set; the first passing the boundary condition is
/// returned, together with whether it passed.
pub fn select_base(map: &IntervalMap, tower: &HofbauerTower, k: usize, delta: f64) -> Result<Cylinder> {
    let part = partition(map, k)?;
    let mut cands: Vec<&Cylinder> = part.cylinders.iter().filter(|c| !c.sliver).collect();
    cands.sort_by(|a, b| a.itinerary.cmp(&b.itinerary));
    for c in cands {
        if boundary_condition(map, c.left, c.right, k) && !check_set(tower, c.interval(), delta)?.is_empty() {
            return Ok(c.clone());
        }
    }
    Err(Error::NoAdmissibleBase { depth: k })
}

/// The shallowest cylinder of depth at most `max_depth` that ends at the
/// first critical point and whose fattening is carried by the transitive
/// part. It fails the finite boundary check (its left end maps onto the
/// critical point), but returns through the critical neighbourhood are
/// short, so the untruncated mass decays much faster than on scanned bases.
pub fn critical_base(map: &IntervalMap, tower: &HofbauerTower, max_depth: usize, delta: f64) -> Result<Cylinder> {
    let c = map.critical_points().first().map(|c| c.location).ok_or(Error::NoAdmissibleBase { depth: max_depth })?;
    for k in 1..=max_depth {
        let part = partition(map, k)?;
        let found = part.cylinders.iter().find(|cy| !cy.sliver && (cy.right - c).abs() <= SNAP_TOLERANCE);
        if let Some(cy) = found {
            if !check_set(tower, cy.interval(), delta)?.is_empty() {
                return Ok(cy.clone());
            }
        }
    }
    Err(Error::NoAdmissibleBase { depth: max_depth })
}

/// The depth-`k` cylinder with a given itinerary.
pub fn base_by_itinerary(map: &IntervalMap, itinerary: &[u8]) -> Result<Cylinder> {
    let part = partition(map, itinerary.len())?;
    part.find_itinerary(itinerary)
        .map(|i| part.cylinders[i].clone())
        .ok_or_else(|| Error::InvalidArgument(format!("no cylinder with itinerary {itinerary:?}")))
}

/// `(τ(x), τ(Fx), ...)` up to `depth` terms; stops early when the orbit
/// falls into a gap of the truncated branch set.
pub fn scheme_orbit_times(scheme: &InducingScheme, x: f64, depth: usize) -> Vec<usize> {
    let mut times = Vec::with_capacity(depth);
    let mut y = x;
    for _ in 0..depth {
        match scheme.induced(y) {
            Some((next, tau)) => {
                times.push(tau);
                y = next;
            }
            None => break,
        }
    }
    times
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tower::{build_tower, transitive_component};

    fn tower(map: &IntervalMap, h: usize) -> HofbauerTower {
        let mut t = build_tower(map, h).unwrap();
        transitive_component(&mut t).unwrap();
        t
    }

    #[test]
    fn fatten_examples() {
        let (a, b) = fatten((0.2, 0.4), 0.5);
        assert!((a - 0.1).abs() < 1e-15 && (b - 0.5).abs() < 1e-15);
        assert_eq!(fatten((0.2, 0.4), 0.0), (0.2, 0.4));
        assert_eq!(fatten((0.0, 0.9), 0.5), (0.0, 1.0));
    }

    #[test]
    fn chebyshev_check_set_is_base_domain() {
        let t = tower(&IntervalMap::chebyshev(), 6);
        assert_eq!(check_set(&t, (0.3, 0.4), 0.1).unwrap(), vec![(0, (0.3, 0.4))]);
        assert_eq!(check_set(&t, (0.0, 1.0), 0.1).unwrap().len(), 1);
    }

    #[test]
    fn full_tent_half_base_has_one_branch_per_time() {
        let f = IntervalMap::tent(2.0).unwrap();
        let t = tower(&f, 12);
        let base = base_by_itinerary(&f, &[0]).unwrap();
        let opts = SchemeOptions { n_max: 10, ..SchemeOptions::default() };
        let s = build_scheme(&f, &t, &base, &opts).unwrap();
        assert_eq!(&s.tau_counts()[1..], &[1; 10]);
        // branch with return time τ has width 2^-(τ+1)
        let expect = 0.5 - 0.5f64.powi(11);
        assert!((s.coverage * 0.5 - expect).abs() < 1e-14);
        assert!(!s.boundary_ok);
        // only the first branch avoids the critical value on its way back
        assert!(s.branches[0].extension_ok);
        assert!(s.branches[1..].iter().all(|b| !b.extension_ok));
    }

    #[test]
    fn periodic_point_has_constant_return_times() {
        let f = IntervalMap::tent(2.0).unwrap();
        let t = tower(&f, 12);
        let base = base_by_itinerary(&f, &[0]).unwrap();
        let s = build_scheme(&f, &t, &base, &SchemeOptions { n_max: 10, ..SchemeOptions::default() }).unwrap();
        let b = s.branches.iter().find(|b| b.tau == 2).unwrap();
        // fixed point of the inverse branch
        let mut y = 0.25;
        for _ in 0..200 {
            y = b.pull(&f, y).0;
        }
        assert_eq!(scheme_orbit_times(&s, y, 4), vec![2, 2, 2, 2]);
        assert!(scheme_orbit_times(&s, 0.2999999, 3).len() <= 3);
    }

    #[test]
    fn empty_check_set_is_an_error() {
        let f = IntervalMap::tent(1.9).unwrap();
        let t = tower(&f, 10);
        let base = base_by_itinerary(&f, &[0]).unwrap();
        assert!(matches!(
            build_scheme(&f, &t, &base, &SchemeOptions::default()),
            Err(Error::BaseNotInTransitivePart { .. })
        ));
    }
}
