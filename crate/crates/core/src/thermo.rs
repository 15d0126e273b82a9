//! Induced potentials, variations, partition sums, Gurevich pressure, the
//! pressure equation `P_G(Φ - sτ) = 0`, the conformal measure and invariant
//! density of the induced system, and the projection of the induced
//! equilibrium state back to the interval.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::inducing::{pull_point, pull_word, pull_word_checked, InducingScheme};
use crate::maps::IntervalMap;
use crate::stability::TestDictionary;

/// Inverse-branch iterations used to locate periodic points.
pub const PERIODIC_ITERATIONS: usize = 200;
pub const DEFAULT_WORD_BUDGET: usize = 250_000;
pub const DEFAULT_BRACKET: (f64, f64) = (-5.0, 5.0);
pub const DEFAULT_BINS: usize = 1 << 12;
/// Cylinders narrower than this fraction of the base are not weighed.
pub const MIN_WORD_WIDTH: f64 = 1e-10;
/// Branches per projection work unit.
const PROJECTION_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub enum PotentialSource {
    /// `Φ_i = -t log|(f^{τ_i})'|`.
    Geometric { t: f64 },
    /// `Φ_i` constant on each branch.
    Constant(Vec<f64>),
}

/// `Ψ_i(x) = scale · (Φ_i(x) - shift · τ_i) + offset` on each branch.
#[derive(Clone, Debug, PartialEq)]
pub struct InducedPotential {
    pub source: PotentialSource,
    pub shift: f64,
    pub scale: f64,
    pub offset: f64,
    pub taus: Vec<usize>,
    pub fixed_points: Vec<f64>,
    pub midpoints: Vec<f64>,
    /// `log|(f^τ)'|` at the fixed point and at the midpoint of each branch.
    pub log_deriv_fixed: Vec<f64>,
    pub log_deriv_mid: Vec<f64>,
}

impl InducedPotential {
    pub fn t(&self) -> Option<f64> {
        match self.source {
            PotentialSource::Geometric { t } => Some(t),
            PotentialSource::Constant(_) => None,
        }
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    /// `Ψ_i` at a point of branch `i` where `log|(f^τ)'| = log_deriv`.
    #[inline]
    pub fn value(&self, branch: usize, log_deriv: f64) -> f64 {
        let raw = match &self.source {
            PotentialSource::Geometric { t } => {
                if *t == 0.0 {
                    0.0
                } else {
                    -t * log_deriv
                }
            }
            PotentialSource::Constant(v) => v[branch],
        };
        self.scale * (raw - self.shift * self.taus[branch] as f64) + self.offset
    }

    /// `Ψ_k` along a word, given the summed log derivative at the point.
    pub fn word_value(&self, word: &[u32], log_deriv: f64) -> f64 {
        let tau: usize = word.iter().map(|&i| self.taus[i as usize]).sum();
        let raw = match &self.source {
            PotentialSource::Geometric { t } => {
                if *t == 0.0 {
                    0.0
                } else {
                    -t * log_deriv
                }
            }
            PotentialSource::Constant(v) => word.iter().map(|&i| v[i as usize]).sum(),
        };
        self.scale * (raw - self.shift * tau as f64) + self.offset * word.len() as f64
    }

    /// `Ψ_i` at the fixed point of branch `i`.
    pub fn at_fixed(&self, i: usize) -> f64 {
        self.value(i, self.log_deriv_fixed[i])
    }

    /// `Ψ_i` at the midpoint of branch `i`.
    pub fn at_mid(&self, i: usize) -> f64 {
        self.value(i, self.log_deriv_mid[i])
    }

    /// The pair `(g_i(y), Ψ_i(g_i(y)))` for `y` in the base.
    pub fn eval(&self, scheme: &InducingScheme, branch: usize, y: f64) -> (f64, f64) {
        let (x, l) = scheme.branches[branch].pull(&scheme.map, y);
        (x, self.value(branch, l))
    }

    pub fn with_shift(&self, shift: f64) -> Self {
        Self { shift, ..self.clone() }
    }

    /// The potential multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { scale: self.scale * c, offset: self.offset * c, ..self.clone() }
    }

    /// The potential plus the constant `c` on every branch.
    pub fn offset_by(&self, c: f64) -> Self {
        Self { offset: self.offset + c, ..self.clone() }
    }
}

/// Fixed point of the inverse branch composed along `word`.
pub fn periodic_point(map: &IntervalMap, word: &[u8], base: (f64, f64)) -> std::result::Result<f64, ()> {
    let (ga, gb) = (pull_point(map, word, base.0), pull_point(map, word, base.1));
    if !((gb - ga).abs() < (base.1 - base.0) * (1.0 - 1e-12)) {
        return Err(());
    }
    let mut y = 0.5 * (base.0 + base.1);
    for _ in 0..PERIODIC_ITERATIONS {
        let next = pull_point(map, word, y);
        if (next - y).abs() <= 1e-16 * (1.0 + y.abs()) {
            return Ok(next);
        }
        y = next;
    }
    Ok(y)
}

fn concat(scheme: &InducingScheme, word: &[u32]) -> Vec<u8> {
    let mut out = Vec::new();
    for &i in word {
        out.extend_from_slice(&scheme.branches[i as usize].itinerary);
    }
    out
}

fn not_contracting(word: &[u32]) -> Error {
    Error::BranchNotContracting { word: word.iter().map(|&i| i as usize).collect() }
}

fn build_potential(scheme: &InducingScheme, source: PotentialSource, shift: f64) -> Result<InducedPotential> {
    if scheme.branches.is_empty() {
        return Err(Error::EmptyScheme);
    }
    let bad = scheme.branches.iter().filter(|b| !b.extension_ok).count();
    if bad > 0 {
        log::debug!("{bad} branches of the {} scheme lack the (1+δ) extension", scheme.map.id());
    }
    let map = &scheme.map;
    let geometric = matches!(source, PotentialSource::Geometric { t } if t != 0.0);
    let samples: Vec<Result<(f64, f64, f64, f64)>> = scheme
        .branches
        .par_iter()
        .enumerate()
        .map(|(i, b)| {
            let p = periodic_point(map, &b.itinerary, scheme.base).map_err(|_| not_contracting(&[i as u32]))?;
            let mid = 0.5 * (scheme.base.0 + scheme.base.1);
            let mut out = [0.0; 2];
            for (slot, y) in out.iter_mut().zip([p, mid]) {
                let (_, l) = if geometric {
                    pull_word_checked(map, &b.itinerary, y).map_err(|x| Error::SingularBranch { branch: i, x })?
                } else {
                    pull_word(map, &b.itinerary, y)
                };
                *slot = l;
            }
            Ok((p, 0.5 * (b.left + b.right), out[0], out[1]))
        })
        .collect();
    let mut pot = InducedPotential {
        source,
        shift,
        scale: 1.0,
        offset: 0.0,
        taus: scheme.branches.iter().map(|b| b.tau).collect(),
        fixed_points: Vec::with_capacity(samples.len()),
        midpoints: Vec::with_capacity(samples.len()),
        log_deriv_fixed: Vec::with_capacity(samples.len()),
        log_deriv_mid: Vec::with_capacity(samples.len()),
    };
    for s in samples {
        let (p, m, lp, lm) = s?;
        pot.fixed_points.push(p);
        pot.midpoints.push(m);
        pot.log_deriv_fixed.push(lp);
        pot.log_deriv_mid.push(lm);
    }
    Ok(pot)
}

/// The induced geometric potential `Ψ = -t log|(f^τ)'| - s τ`.
pub fn induced_potential(scheme: &InducingScheme, t: f64, s: f64) -> Result<InducedPotential> {
    if !t.is_finite() || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("t and s must be finite, got t = {t}, s = {s}")));
    }
    build_potential(scheme, PotentialSource::Geometric { t }, s)
}

/// A potential constant on each branch: `Ψ_i = values[i] - s τ_i`.
pub fn constant_potential(scheme: &InducingScheme, values: Vec<f64>, s: f64) -> Result<InducedPotential> {
    if values.len() != scheme.branches.len() {
        return Err(Error::InvalidArgument(format!(
            "{} constant values for {} branches",
            values.len(),
            scheme.branches.len()
        )));
    }
    build_potential(scheme, PotentialSource::Constant(values), s)
}

// ---------------------------------------------------------------------------
// variations

#[derive(Clone, Debug, PartialEq)]
pub struct VariationProfile {
    /// `V_k` for `k = 1..=k_max` (index `k - 1`).
    pub v: Vec<f64>,
    /// `B_k = exp(Σ_{j>k} V_j)` for `k = 0..=k_max`, tail extrapolated.
    pub b: Vec<f64>,
    /// Fitted geometric decay rate of `V_k`, when a fit exists.
    pub lambda: Option<f64>,
    pub r_squared: Option<f64>,
    pub summable: bool,
    /// Words sampled per level.
    pub words_sampled: Vec<usize>,
}

impl VariationProfile {
    pub fn b0(&self) -> f64 {
        self.b[0]
    }
}

/// Branch indices by decreasing weight `e^{Ψ_i}` at the fixed point.
fn heaviest(pot: &InducedPotential) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pot.len()).collect();
    order.sort_by(|&a, &b| pot.at_fixed(b).total_cmp(&pot.at_fixed(a)).then(a.cmp(&b)));
    order
}

/// All `depth`-tuples over `alphabet` with summed τ at most `tau_cap`.
fn words_over(alphabet: &[usize], taus: &[usize], depth: usize, tau_cap: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(depth);
    fn rec(alphabet: &[usize], taus: &[usize], depth: usize, left: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == depth {
            out.push(cur.clone());
            return;
        }
        for &i in alphabet {
            if taus[i] <= left {
                cur.push(i as u32);
                rec(alphabet, taus, depth, left - taus[i], cur, out);
                cur.pop();
            }
        }
    }
    rec(alphabet, taus, depth, tau_cap, &mut cur, &mut out);
    out
}

/// Sampled words at a given depth: all tuples over the heaviest branches,
/// with as many branches as fit the budget.
fn sample_words(order: &[usize], taus: &[usize], depth: usize, budget: usize, tau_cap: usize) -> Vec<Vec<u32>> {
    let mut n = ((budget as f64).powf(1.0 / depth as f64).floor() as usize).clamp(1, order.len());
    while n > 1 && n.pow(depth as u32) > budget {
        n -= 1;
    }
    let mut alphabet: Vec<usize> = order[..n].to_vec();
    alphabet.sort_unstable();
    words_over(&alphabet, taus, depth, tau_cap)
}

/// `V_k`: the largest spread of the one-step `Ψ` over three points (the two
/// ends and the middle) of each sampled k-cylinder.
pub fn variation_profile(scheme: &InducingScheme, pot: &InducedPotential, k_max: usize) -> Result<VariationProfile> {
    variation_profile_with(scheme, pot, k_max, 2_000)
}

pub fn variation_profile_with(
    scheme: &InducingScheme,
    pot: &InducedPotential,
    k_max: usize,
    budget: usize,
) -> Result<VariationProfile> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    let map = &scheme.map;
    let (a, b) = scheme.base;
    let ys = [a, 0.5 * (a + b), b];
    let order = heaviest(pot);
    let mut v = Vec::with_capacity(k_max);
    let mut sampled = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let words = if k == 1 {
            (0..pot.len() as u32).map(|i| vec![i]).collect()
        } else {
            sample_words(&order, &pot.taus, k, budget, usize::MAX)
        };
        sampled.push(words.len());
        let vk = words
            .par_iter()
            .map(|w| {
                let tail = concat(scheme, &w[1..]);
                let first = &scheme.branches[w[0] as usize].itinerary;
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &y in &ys {
                    let z = pull_point(map, &tail, y);
                    let (_, l) = pull_word(map, first, z);
                    let psi = pot.value(w[0] as usize, l);
                    if !psi.is_finite() {
                        return f64::INFINITY;
                    }
                    lo = lo.min(psi);
                    hi = hi.max(psi);
                }
                hi - lo
            })
            .reduce(|| 0.0, f64::max);
        v.push(vk);
    }
    let (lambda, r2) = geometric_fit(&v);
    let all_zero = v.iter().all(|&x| x == 0.0);
    let finite = v.iter().all(|x| x.is_finite());
    let summable = finite && (all_zero || lambda.is_some_and(|l| l < 1.0));
    let tail = if all_zero {
        0.0
    } else if summable {
        let l = lambda.expect("summable implies a fit");
        v[k_max - 1] * l / (1.0 - l)
    } else {
        log::warn!("variations of the {} scheme are not summable on the sampled range: {v:?}", map.id());
        f64::INFINITY
    };
    let mut bvec = vec![0.0; k_max + 1];
    let mut acc = tail;
    for k in (0..=k_max).rev() {
        bvec[k] = acc.exp();
        if k >= 1 {
            acc += v[k - 1];
        }
    }
    Ok(VariationProfile { v, b: bvec, lambda, r_squared: r2, summable, words_sampled: sampled })
}

/// Least-squares fit of `log V_k` against `k` over positive finite values.
fn geometric_fit(v: &[f64]) -> (Option<f64>, Option<f64>) {
    let pts: Vec<(f64, f64)> = v
        .iter()
        .enumerate()
        .filter(|(_, &x)| x > 0.0 && x.is_finite())
        .map(|(k, &x)| ((k + 1) as f64, x.ln()))
        .collect();
    match linear_fit(&pts) {
        Some((slope, _, r2)) => (Some(slope.exp()), Some(r2)),
        None => (None, None),
    }
}

/// `(slope, intercept, R²)` of an ordinary least-squares line.
pub fn linear_fit(pts: &[(f64, f64)]) -> Option<(f64, f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

// ---------------------------------------------------------------------------
// partition sums and pressure

/// A periodic orbit of the induced system, one per word.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicWord {
    pub word: Vec<u32>,
    pub point: f64,
    /// `log|(f^{Στ})'|` at the periodic point.
    pub log_deriv: f64,
    pub tau: usize,
}

/// Periodic points of all words up to the deepest level that fits the word
/// budget. Independent of `t` and `s`.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicTable {
    /// `levels[k - 1]` holds the words of length `k`.
    pub levels: Vec<Vec<PeriodicWord>>,
    pub base: (f64, f64),
    pub tau_cap: usize,
}

impl PeriodicTable {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// `log Z_k`, optionally restricted to words starting with `first`.
    pub fn log_z(&self, pot: &InducedPotential, k: usize, first: Option<u32>) -> f64 {
        log_sum_exp(
            self.levels[k - 1]
                .iter()
                .filter(|w| first.is_none_or(|f| w.word[0] == f))
                .map(|w| pot.word_value(&w.word, w.log_deriv)),
        )
    }
}

fn log_sum_exp<I: Iterator<Item = f64> + Clone>(values: I) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Number of words of each length `1..=k_max` with summed τ at most `cap`.
pub fn word_counts(taus: &[usize], k_max: usize, cap: usize) -> Vec<f64> {
    let tmax = taus.iter().copied().max().unwrap_or(0);
    let cap = cap.min(k_max.saturating_mul(tmax));
    let mut hist = vec![0.0f64; tmax + 1];
    for &t in taus {
        hist[t] += 1.0;
    }
    let mut cur = vec![0.0f64; cap + 1];
    cur[0] = 1.0;
    let mut counts = Vec::with_capacity(k_max);
    for _ in 0..k_max {
        let mut next = vec![0.0f64; cap + 1];
        for (s, &c) in cur.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (t, &h) in hist.iter().enumerate() {
                if h > 0.0 && s + t <= cap {
                    next[s + t] += c * h;
                }
            }
        }
        counts.push(next.iter().sum());
        cur = next;
    }
    counts
}

pub fn periodic_table(scheme: &InducingScheme, k_max: usize, tau_cap: usize, budget: usize) -> Result<PeriodicTable> {
    if scheme.branches.is_empty() {
        return Err(Error::EmptyScheme);
    }
    let taus: Vec<usize> = scheme.branches.iter().map(|b| b.tau).collect();
    let counts = word_counts(&taus, k_max.max(1), tau_cap);
    let mut depth = 1;
    while depth < k_max && counts[depth] <= budget as f64 {
        depth += 1;
    }
    let alphabet: Vec<usize> = (0..taus.len()).collect();
    let mut levels = Vec::with_capacity(depth);
    for k in 1..=depth {
        let words = words_over(&alphabet, &taus, k, tau_cap);
        let level: Vec<Result<PeriodicWord>> = words
            .into_par_iter()
            .map(|w| periodic_word(scheme, w))
            .collect();
        levels.push(level.into_iter().collect::<Result<Vec<_>>>()?);
    }
    Ok(PeriodicTable { levels, base: scheme.base, tau_cap })
}

fn periodic_word(scheme: &InducingScheme, word: Vec<u32>) -> Result<PeriodicWord> {
    let it = concat(scheme, &word);
    let p = periodic_point(&scheme.map, &it, scheme.base).map_err(|_| not_contracting(&word))?;
    let (_, l) = pull_word(&scheme.map, &it, p);
    Ok(PeriodicWord { tau: it.len(), word, point: p, log_deriv: l })
}

/// `Z_k = Σ e^{Ψ_k(x)}` over periodic points of `k`-words with summed τ at
/// most `n`, enumerated directly.
pub fn zk_sum(scheme: &InducingScheme, pot: &InducedPotential, k: usize, n: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let taus: Vec<usize> = scheme.branches.iter().map(|b| b.tau).collect();
    let alphabet: Vec<usize> = (0..taus.len()).collect();
    let words = words_over(&alphabet, &taus, k, n);
    let terms: Vec<Result<f64>> = words
        .into_par_iter()
        .map(|w| {
            let pw = periodic_word(scheme, w)?;
            Ok(pot.word_value(&pw.word, pw.log_deriv).exp())
        })
        .collect();
    let mut z = 0.0;
    for t in terms {
        z += t?;
    }
    Ok(z)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GurevichEstimate {
    /// `log Z_k(C_1^i) - log Z_{k-1}(C_1^i)` at the deepest level (`log Z_1`
    /// when only one level fits the budget).
    pub value: f64,
    /// `(1/k) log Z_k` at the deepest level.
    pub last: f64,
    /// `sup_k (1/k) log Z_k`.
    pub lower_bound: f64,
    pub k_used: usize,
    /// `log Z_k` over all words.
    pub log_z: Vec<f64>,
    /// First symbol `i` of the cylinder `C_1^i` the estimate is taken on.
    pub reference: Option<usize>,
    /// `log Z_k(Ψ, C_1^i)` on the reference cylinder.
    pub log_z_reference: Vec<f64>,
    /// Difference from the estimate on an alternative first cylinder.
    pub cylinder_spread: Option<f64>,
    pub stable: bool,
}

/// First symbols for the restricted sums `Z_k(Ψ, C_1^i)`: branches ordered
/// by weight at their fixed point, skipping those whose fixed point sits on
/// the base boundary (there the periodic orbit is the boundary orbit itself
/// and its weight is not comparable to the cylinder's).
fn reference_symbols(pot: &InducedPotential, base: (f64, f64)) -> Vec<usize> {
    let tol = 1e-9 * (base.1 - base.0);
    let mut order: Vec<usize> = heaviest(pot)
        .into_iter()
        .filter(|&i| pot.fixed_points[i] - base.0 > tol && base.1 - pot.fixed_points[i] > tol)
        .collect();
    if order.is_empty() {
        order = heaviest(pot);
    }
    order
}

pub fn pressure_from_table(table: &PeriodicTable, pot: &InducedPotential) -> GurevichEstimate {
    let k = table.depth();
    let log_z: Vec<f64> = (1..=k).map(|j| table.log_z(pot, j, None)).collect();
    let last = log_z[k - 1] / k as f64;
    let lower_bound = log_z.iter().enumerate().map(|(j, z)| z / (j + 1) as f64).fold(f64::NEG_INFINITY, f64::max);
    if k < 2 {
        return GurevichEstimate {
            value: log_z[0],
            last,
            lower_bound,
            k_used: k,
            reference: None,
            log_z_reference: Vec::new(),
            log_z,
            cylinder_spread: None,
            stable: true,
        };
    }
    let refs = reference_symbols(pot, table.base);
    let first = refs[0] as u32;
    let log_z_reference: Vec<f64> = (1..=k).map(|j| table.log_z(pot, j, Some(first))).collect();
    let value = log_z_reference[k - 1] - log_z_reference[k - 2];
    let mut stable = value.is_finite();
    if k >= 4 {
        let r: Vec<f64> = (1..k).map(|j| log_z_reference[j] - log_z_reference[j - 1]).collect();
        let d1 = (r[r.len() - 1] - r[r.len() - 2]).abs();
        let d0 = (r[r.len() - 2] - r[r.len() - 3]).abs();
        if d1 > d0 + 1e-12 {
            stable = false;
        }
    }
    if !stable {
        log::warn!("unstable pressure sequence: log Z_k(C_1^{first}) = {log_z_reference:?}");
    }
    let cylinder_spread = refs.get(1).map(|&alt| {
        let alt = alt as u32;
        (value - (table.log_z(pot, k, Some(alt)) - table.log_z(pot, k - 1, Some(alt)))).abs()
    });
    GurevichEstimate {
        value,
        last,
        lower_bound,
        k_used: k,
        reference: Some(refs[0]),
        log_z_reference,
        log_z,
        cylinder_spread,
        stable,
    }
}

/// Gurevich pressure from partition sums over words with summed τ at most
/// `n`, up to depth `k_max` as far as the default word budget allows.
pub fn gurevich_pressure(scheme: &InducingScheme, pot: &InducedPotential, k_max: usize, n: usize) -> Result<GurevichEstimate> {
    if k_max < 2 {
        return Err(Error::InvalidArgument("k_max must be at least 2".into()));
    }
    let table = periodic_table(scheme, k_max, n, DEFAULT_WORD_BUDGET)?;
    Ok(pressure_from_table(&table, pot))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveOptions {
    pub k_max: usize,
    /// Cap on summed τ of a word; `None` means `k_max · N_max`.
    pub tau_cap: Option<usize>,
    pub budget: usize,
    pub bracket: (f64, f64),
    pub iterations: usize,
    pub tolerance: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            k_max: 8,
            tau_cap: None,
            budget: DEFAULT_WORD_BUDGET,
            bracket: DEFAULT_BRACKET,
            iterations: 40,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PressureSolution {
    pub t: f64,
    pub pressure: f64,
    /// `P_G(Φ - Pτ)` at the returned root.
    pub residual: f64,
    pub estimate: GurevichEstimate,
}

pub fn solve_pressure(scheme: &InducingScheme, t: f64) -> Result<PressureSolution> {
    solve_pressure_with(scheme, t, &SolveOptions::default())
}

/// Bisection on `s` for `P_G(Φ - sτ) = 0`, finished by one secant step
/// inside the final bracket.
pub fn solve_pressure_with(scheme: &InducingScheme, t: f64, opts: &SolveOptions) -> Result<PressureSolution> {
    let cap = opts.tau_cap.unwrap_or(opts.k_max.max(1) * scheme.n_max);
    let table = periodic_table(scheme, opts.k_max.max(1), cap, opts.budget)?;
    let pot = induced_potential(scheme, t, 0.0)?;
    solve_on_table(&table, &pot, opts)
}

pub fn solve_on_table(table: &PeriodicTable, pot: &InducedPotential, opts: &SolveOptions) -> Result<PressureSolution> {
    let g = |s: f64| pressure_from_table(table, &pot.with_shift(s)).value;
    let (mut lo, mut hi) = opts.bracket;
    let (mut g_lo, mut g_hi) = (g(lo), g(hi));
    if !(g_lo > 0.0 && g_hi < 0.0) {
        return Err(Error::PressureUnbracketed { lo, hi, g_lo, g_hi });
    }
    for _ in 0..opts.iterations {
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            lo = mid;
            hi = mid;
            g_lo = 0.0;
            g_hi = 0.0;
            break;
        }
        if gm > 0.0 {
            lo = mid;
            g_lo = gm;
        } else {
            hi = mid;
            g_hi = gm;
        }
    }
    let root = if g_lo == g_hi { 0.5 * (lo + hi) } else { lo + g_lo * (hi - lo) / (g_lo - g_hi) };
    let estimate = pressure_from_table(table, &pot.with_shift(root));
    let residual = estimate.value;
    if residual.abs() >= opts.tolerance {
        log::warn!("pressure residual {residual:e} exceeds tolerance {:e}", opts.tolerance);
    }
    Ok(PressureSolution { t: pot.t().unwrap_or(f64::NAN), pressure: root, residual, estimate })
}

// ---------------------------------------------------------------------------
// Gibbs state

#[derive(Clone, Debug, PartialEq)]
pub struct GibbsOptions {
    pub solve: SolveOptions,
    /// Nodes carrying the density `ρ` (Chebyshev-distributed over the base).
    pub nodes: usize,
    /// Fine cells carrying the conformal measure `m`.
    pub cells: usize,
    /// Minimum quadrature blocks per branch.
    pub quad_min: usize,
    /// Quadrature blocks for cylinder weights.
    pub word_blocks: usize,
    pub word_depth: usize,
    pub word_budget: usize,
    pub variation_depth: usize,
    pub rho_tol: f64,
    pub max_iter: usize,
    /// Target for `|log λ|` when normalizing the shift.
    pub polish_tol: f64,
    pub polish_max: usize,
    pub m_tol: f64,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            nodes: 65,
            cells: 2048,
            quad_min: 16,
            word_blocks: 64,
            word_depth: 4,
            word_budget: 4096,
            variation_depth: 6,
            rho_tol: 1e-8,
            max_iter: 1000,
            polish_tol: 1e-11,
            polish_max: 30,
            m_tol: 1e-12,
        }
    }
}

/// Weight of one enumerated induced word.
#[derive(Clone, Debug, PartialEq)]
pub struct WordWeight {
    pub word: Vec<u32>,
    pub tau_sum: usize,
    pub left: f64,
    pub right: f64,
    /// Periodic point of the word.
    pub anchor: f64,
    /// `Ψ_k` at the anchor.
    pub psi: f64,
    /// Conformal mass `m(C_w)`.
    pub conformal: f64,
    /// Invariant mass `μ_F(C_w)`.
    pub mass: f64,
}

impl WordWeight {
    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    /// `μ_F(C_w) / e^{Ψ_k(x_C)}`.
    pub fn gibbs_ratio(&self) -> f64 {
        self.mass / self.psi.exp()
    }
}

#[derive(Clone, Debug)]
pub struct GibbsState {
    pub t: f64,
    /// The shift `s` normalizing the transfer operator to eigenvalue 1.
    pub pressure: f64,
    /// Root of the partition-sum equation, before normalization.
    pub gurevich_pressure: f64,
    pub gurevich_residual: f64,
    /// `log λ` of `L*` on the conformal measure at the returned pressure.
    pub log_eigenvalue: f64,
    pub potential: InducedPotential,
    pub base: (f64, f64),
    pub nodes: Vec<f64>,
    /// `ρ` at the nodes, normalized so that `∫ρ dm = 1`.
    pub rho: Vec<f64>,
    /// `ρ` at each branch fixed point.
    pub branch_rho: Vec<f64>,
    /// Conformal mass of each fine cell of the base.
    pub m_cells: Vec<f64>,
    pub branch_conformal: Vec<f64>,
    pub branch_mass: Vec<f64>,
    /// `words[k - 1]` holds the sampled words of depth `k`.
    pub words: Vec<Vec<WordWeight>>,
    /// Sampled words whose cylinders are too narrow to resolve.
    pub unresolved_words: usize,
    /// Largest two-sided ratio over the sampled words.
    pub gibbs_constant: f64,
    pub variation: VariationProfile,
    /// `B_0⁴`.
    pub h_bound: f64,
    /// `sup |L ρ - ρ|` over nodes.
    pub eigen_residual: f64,
    /// `log` of the nodal eigenvalue of `L` on `ρ`.
    pub rho_log_eigenvalue: f64,
    /// `∫τ dμ_F` over the enumerated branches.
    pub tau_mean: f64,
    pub rho_iterations: usize,
    pub m_iterations: usize,
}

impl GibbsState {
    pub fn rho_at(&self, y: f64) -> f64 {
        interp(&self.nodes, &self.rho, self.base, y)
    }

    pub fn cell_width(&self) -> f64 {
        (self.base.1 - self.base.0) / self.m_cells.len() as f64
    }

    fn cell_sum<W: Fn(f64) -> f64>(&self, lo: f64, hi: f64, weight: W) -> f64 {
        if hi <= lo {
            return 0.0;
        }
        let h = self.cell_width();
        let (a, _) = self.base;
        let n = self.m_cells.len();
        let c0 = (((lo - a) / h).floor().max(0.0) as usize).min(n - 1);
        let c1 = (((hi - a) / h).floor().max(0.0) as usize).min(n - 1);
        let mut sum = 0.0;
        for c in c0..=c1 {
            let (l, r) = (a + c as f64 * h, a + (c + 1) as f64 * h);
            let ov = (hi.min(r) - lo.max(l)).max(0.0);
            sum += self.m_cells[c] * ov / h * weight(0.5 * (l + r));
        }
        sum
    }

    /// Conformal mass of `[lo, hi]` read directly off the fine cells.
    pub fn m_interval(&self, lo: f64, hi: f64) -> f64 {
        self.cell_sum(lo, hi, |_| 1.0)
    }

    /// `μ_F([lo, hi])`, with `ρ` taken at the centre of each fine cell.
    pub fn mu_interval(&self, lo: f64, hi: f64) -> f64 {
        self.cell_sum(lo, hi, |y| self.rho_at(y))
    }

    /// Sum of `μ_F` over the enumerated words of each depth.
    pub fn word_mass_sums(&self) -> Vec<f64> {
        self.words.iter().map(|l| l.iter().map(|w| w.mass).sum()).collect()
    }

    /// Sum of `m` over the enumerated words of each depth.
    pub fn word_conformal_sums(&self) -> Vec<f64> {
        self.words.iter().map(|l| l.iter().map(|w| w.conformal).sum()).collect()
    }

    /// Words whose Gibbs ratio falls outside `[1/K, K]` for the reported `K`.
    pub fn sandwich_violations(&self) -> usize {
        let k = self.gibbs_constant * (1.0 + 1e-12);
        self.words.iter().flatten().filter(|w| !(w.gibbs_ratio() <= k && w.gibbs_ratio() >= 1.0 / k)).count()
    }
}

/// Interpolation of nodal values by piecewise power laws in the distance to
/// the nearer base endpoint, extended beyond the outer nodes. Power laws
/// track the integrable endpoint singularities that appear when an endpoint
/// orbit meets a critical point, and reduce to linear interpolation to
/// second order where the values are smooth.
fn interp(nodes: &[f64], values: &[f64], ends: (f64, f64), y: f64) -> f64 {
    let n = nodes.len();
    let mid = 0.5 * (ends.0 + ends.1);
    let power = |d: f64, d0: f64, d1: f64, v0: f64, v1: f64| {
        if v0 > 0.0 && v1 > 0.0 && d1 != d0 {
            let p = ((v1 / v0).ln() / (d1 / d0).ln()).clamp(-0.95, 4.0);
            v0 * (d.max(1e-3 * d0.min(d1)) / d0).powf(p)
        } else {
            v0 + (v1 - v0) * (d - d0) / (d1 - d0)
        }
    };
    let j = nodes.partition_point(|&v| v <= y).clamp(1, n - 1);
    let (x0, x1) = (nodes[j - 1], nodes[j]);
    if x1 <= mid && y <= mid {
        power(y - ends.0, x0 - ends.0, x1 - ends.0, values[j - 1], values[j])
    } else if x0 >= mid && y >= mid {
        power(ends.1 - y, ends.1 - x0, ends.1 - x1, values[j - 1], values[j])
    } else {
        let f = (y - x0) / (x1 - x0);
        values[j - 1] * (1.0 - f) + values[j] * f
    }
}

/// Chebyshev-distributed interior nodes over `[a, b]`, increasing.
fn chebyshev_nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|q| {
            let th = std::f64::consts::PI * (n - q) as f64 / n as f64 - std::f64::consts::PI * 0.5 / n as f64;
            a + (b - a) * 0.5 * (1.0 + th.cos())
        })
        .collect()
}

/// `log|(f^τ)'|` estimated by the secant through the pulled endpoints of
/// `[y0, y1]`. It integrates `|g'|` exactly over the interval, which keeps
/// the quadrature accurate next to endpoint singularities of `g'`.
#[inline]
fn secant_log_deriv(y0: f64, y1: f64, x0: f64, x1: f64, fallback: f64) -> f64 {
    let dx = (x1 - x0).abs();
    if dx > 0.0 && y1 > y0 {
        ((y1 - y0) / dx).ln()
    } else {
        fallback
    }
}

/// Branch-by-node samples of the transfer operator.
struct NodeOperator {
    n_nodes: usize,
    ends: (f64, f64),
    /// `[i * n_nodes + q]`: `g_i(y_q)` and the log derivative there.
    x: Vec<f64>,
    l: Vec<f64>,
}

impl NodeOperator {
    fn new(scheme: &InducingScheme, nodes: &[f64]) -> Self {
        let per: Vec<(Vec<f64>, Vec<f64>)> = scheme
            .branches
            .par_iter()
            .map(|b| nodes.iter().map(|&y| b.pull(&scheme.map, y)).unzip())
            .collect();
        let mut x = Vec::with_capacity(per.len() * nodes.len());
        let mut l = Vec::with_capacity(per.len() * nodes.len());
        for (px, pl) in per {
            x.extend(px);
            l.extend(pl);
        }
        Self { n_nodes: nodes.len(), ends: scheme.base, x, l }
    }

    fn weights(&self, pot: &InducedPotential) -> Vec<f64> {
        (0..self.x.len()).map(|k| pot.value(k / self.n_nodes, self.l[k]).exp()).collect()
    }

    fn apply(&self, w: &[f64], nodes: &[f64], rho: &[f64]) -> Vec<f64> {
        let nb = self.x.len() / self.n_nodes;
        (0..self.n_nodes)
            .into_par_iter()
            .map(|q| {
                let mut s = 0.0;
                for i in 0..nb {
                    let k = i * self.n_nodes + q;
                    s += w[k] * interp(nodes, rho, self.ends, self.x[k]);
                }
                s
            })
            .collect()
    }
}

/// Per-branch quadrature of the conformal measure: base blocks, their
/// pullbacks and the fine cells they land in.
struct CellOperator {
    cells: usize,
    branches: Vec<Vec<Block>>,
}

struct Block {
    c0: usize,
    len: usize,
    /// Secant `log|(f^τ)'|` over the block.
    l: f64,
    /// Pullback of the block centre.
    x: f64,
    /// Fine cells covered by the pulled block, with overlap fractions.
    landing: Vec<(u32, f64)>,
}

fn pow2_at_least(x: f64) -> usize {
    let mut p = 1usize;
    while (p as f64) < x {
        p <<= 1;
    }
    p
}

impl CellOperator {
    fn new(scheme: &InducingScheme, cells: usize, quad_min: usize) -> Self {
        let (a, b) = scheme.base;
        let h = (b - a) / cells as f64;
        let branches = scheme
            .branches
            .par_iter()
            .map(|br| {
                let q = pow2_at_least(4.0 * br.width() / h).clamp(quad_min.min(cells), cells);
                let len = cells / q;
                let ends: Vec<f64> = (0..=q).map(|j| pull_point(&scheme.map, &br.itinerary, a + (j * len) as f64 * h)).collect();
                (0..q)
                    .map(|j| {
                        let c0 = j * len;
                        let (y0, y1) = (a + c0 as f64 * h, a + (c0 + len) as f64 * h);
                        let (x, lm) = br.pull(&scheme.map, 0.5 * (y0 + y1));
                        let (u, v) = (ends[j], ends[j + 1]);
                        Block { c0, len, l: secant_log_deriv(y0, y1, u, v, lm), x, landing: spread(u.min(v), u.max(v), a, h, cells) }
                    })
                    .collect()
            })
            .collect();
        Self { cells, branches }
    }

    /// `L* m` on the fine cells, and its mass weighted by `τ`.
    fn apply(&self, pot: &InducedPotential, m: &[f64]) -> (Vec<f64>, f64) {
        let prefix = prefix_sums(m);
        let mut out = vec![0.0; self.cells];
        let mut tau_weighted = 0.0;
        for (i, blocks) in self.branches.iter().enumerate() {
            let mut branch_total = 0.0;
            for blk in blocks {
                let mass = (prefix[blk.c0 + blk.len] - prefix[blk.c0]) * pot.value(i, blk.l).exp();
                branch_total += mass;
                for &(c, f) in &blk.landing {
                    out[c as usize] += mass * f;
                }
            }
            tau_weighted += branch_total * pot.taus[i] as f64;
        }
        (out, tau_weighted)
    }
}

fn prefix_sums(v: &[f64]) -> Vec<f64> {
    let mut prefix = vec![0.0; v.len() + 1];
    for (c, &x) in v.iter().enumerate() {
        prefix[c + 1] = prefix[c] + x;
    }
    prefix
}

/// Cells of a uniform grid overlapped by `[lo, hi]`, with the fraction of
/// the interval's length falling in each.
fn spread(lo: f64, hi: f64, a: f64, h: f64, n: usize) -> Vec<(u32, f64)> {
    let c0 = (((lo - a) / h).floor().max(0.0) as usize).min(n - 1);
    let c1 = (((hi - a) / h).floor().max(0.0) as usize).min(n - 1);
    let w = hi - lo;
    if c0 == c1 || w <= 0.0 {
        return vec![(c0 as u32, 1.0)];
    }
    (c0..=c1)
        .map(|c| {
            let (l, r) = (a + c as f64 * h, a + (c + 1) as f64 * h);
            (c as u32, (hi.min(r) - lo.max(l)).max(0.0) / w)
        })
        .filter(|&(_, f)| f > 0.0)
        .collect()
}

/// Power iteration of `L*` on `m` (kept a probability vector). Returns
/// `λ = (L* m)(X)` and the `τ`-weighted mean at the last step.
fn conformal_iteration(
    op: &CellOperator,
    pot: &InducedPotential,
    m: &mut Vec<f64>,
    opts: &GibbsOptions,
    iterations: &mut usize,
) -> Result<(f64, f64)> {
    let mut lambda = 1.0;
    let mut tau_bar = 1.0;
    for _ in 0..opts.max_iter {
        let (next, tau_weighted) = op.apply(pot, m);
        let total: f64 = next.iter().sum();
        *iterations += 1;
        if !total.is_finite() || total <= 0.0 {
            return Err(Error::TransferOperatorDiverged { iterations: *iterations });
        }
        lambda = total;
        tau_bar = tau_weighted / total;
        let next: Vec<f64> = next.iter().map(|v| v / total).collect();
        let change: f64 = next.iter().zip(m.iter()).map(|(u, v)| (u - v).abs()).sum();
        *m = next;
        if change < opts.m_tol {
            break;
        }
    }
    Ok((lambda, tau_bar))
}

pub fn gibbs_state(scheme: &InducingScheme, t: f64) -> Result<GibbsState> {
    gibbs_state_with(scheme, t, &GibbsOptions::default())
}

pub fn gibbs_state_with(scheme: &InducingScheme, t: f64, opts: &GibbsOptions) -> Result<GibbsState> {
    let sol = solve_pressure_with(scheme, t, &opts.solve)?;
    let pot = induced_potential(scheme, t, sol.pressure)?;
    gibbs_for_potential(scheme, pot, sol.residual, opts)
}

/// Builds the Gibbs state of a given potential. The shift is first polished
/// until `L*` has eigenvalue 1 on the conformal measure, then `ρ` is found
/// by power iteration of `L` and normalized by `∫ρ dm = 1`.
pub fn gibbs_for_potential(
    scheme: &InducingScheme,
    mut pot: InducedPotential,
    gurevich_residual: f64,
    opts: &GibbsOptions,
) -> Result<GibbsState> {
    let (a, b) = scheme.base;
    let gurevich_pressure = pot.shift;

    let cell_op = CellOperator::new(scheme, opts.cells, opts.quad_min);
    let mut m = vec![1.0 / opts.cells as f64; opts.cells];
    let mut m_iterations = 0;
    let mut log_lambda = f64::NAN;
    for _ in 0..opts.polish_max.max(1) {
        let (lambda, tau_bar) = conformal_iteration(&cell_op, &pot, &mut m, opts, &mut m_iterations)?;
        log_lambda = lambda.ln();
        if log_lambda.abs() < opts.polish_tol {
            break;
        }
        pot = pot.with_shift(pot.shift + log_lambda / (pot.scale * tau_bar));
    }
    if (pot.shift - gurevich_pressure).abs() > 1e-3 {
        log::warn!("normalized pressure {} differs from the partition-sum root {gurevich_pressure}", pot.shift);
    }

    let nodes = chebyshev_nodes(a, b, opts.nodes.max(3));
    let op = NodeOperator::new(scheme, &nodes);
    let w = op.weights(&pot);
    let mut rho = vec![1.0; nodes.len()];
    let mut rho_iterations = 0;
    let mut rho_lambda = 1.0;
    for it in 0..opts.max_iter {
        let next = op.apply(&w, &nodes, &rho);
        let top = next.iter().copied().fold(0.0, f64::max);
        if !top.is_finite() || top <= 0.0 {
            return Err(Error::TransferOperatorDiverged { iterations: it + 1 });
        }
        let prev_top = rho.iter().copied().fold(0.0, f64::max);
        rho_lambda = top / prev_top;
        let next: Vec<f64> = next.iter().map(|v| v / top).collect();
        let change = next.iter().zip(&rho).map(|(u, v)| (u - v / prev_top).abs()).fold(0.0, f64::max);
        rho = next;
        rho_iterations += 1;
        if change < opts.rho_tol {
            break;
        }
    }

    // normalize ∫ρ dm = 1
    let h = (b - a) / opts.cells as f64;
    let z: f64 = m.iter().enumerate().map(|(c, &mc)| mc * interp(&nodes, &rho, scheme.base, a + (c as f64 + 0.5) * h)).sum();
    for r in rho.iter_mut() {
        *r /= z;
    }
    let lrho = op.apply(&w, &nodes, &rho);
    let eigen_residual = lrho.iter().zip(&rho).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);

    let prefix = prefix_sums(&m);
    let mut branch_conformal = Vec::with_capacity(scheme.branches.len());
    let mut branch_mass = Vec::with_capacity(scheme.branches.len());
    for (i, blocks) in cell_op.branches.iter().enumerate() {
        let (mut mc, mut mu) = (0.0, 0.0);
        for blk in blocks {
            let e = (prefix[blk.c0 + blk.len] - prefix[blk.c0]) * pot.value(i, blk.l).exp();
            mc += e;
            mu += e * interp(&nodes, &rho, scheme.base, blk.x);
        }
        branch_conformal.push(mc);
        branch_mass.push(mu);
    }
    let total_mass: f64 = branch_mass.iter().sum();
    let tau_mean = branch_mass.iter().zip(&pot.taus).map(|(m, &t)| m * t as f64).sum::<f64>() / total_mass;
    let branch_rho = pot.fixed_points.iter().map(|&p| interp(&nodes, &rho, scheme.base, p)).collect();

    let variation = variation_profile(scheme, &pot, opts.variation_depth)?;
    let h_bound = variation.b0().powi(4);

    let mut gs = GibbsState {
        t: pot.t().unwrap_or(f64::NAN),
        pressure: pot.shift,
        gurevich_pressure,
        gurevich_residual,
        log_eigenvalue: log_lambda,
        potential: pot,
        base: scheme.base,
        nodes,
        rho,
        branch_rho,
        m_cells: m,
        branch_conformal,
        branch_mass,
        words: Vec::new(),
        unresolved_words: 0,
        gibbs_constant: 1.0,
        variation,
        h_bound,
        eigen_residual,
        rho_log_eigenvalue: rho_lambda.ln(),
        tau_mean,
        rho_iterations,
        m_iterations,
    };
    (gs.words, gs.unresolved_words) = word_weights(scheme, &gs, opts)?;
    gs.gibbs_constant = gs
        .words
        .iter()
        .flatten()
        .map(|w| {
            let r = w.gibbs_ratio();
            r.max(1.0 / r)
        })
        .fold(1.0, f64::max);
    Ok(gs)
}

/// Sampled words of each depth, dropping cylinders too narrow to resolve in
/// double precision; returns the number dropped.
fn word_weights(scheme: &InducingScheme, gs: &GibbsState, opts: &GibbsOptions) -> Result<(Vec<Vec<WordWeight>>, usize)> {
    let pot = &gs.potential;
    let mut unresolved = 0;
    let mut order: Vec<usize> = (0..pot.len()).collect();
    order.sort_by(|&x, &y| gs.branch_mass[y].total_cmp(&gs.branch_mass[x]).then(x.cmp(&y)));
    let (a, b) = scheme.base;
    let q = opts.word_blocks.clamp(1, gs.m_cells.len());
    let per = gs.m_cells.len() / q;
    let hb = (b - a) / q as f64;
    let block_mass: Vec<f64> = (0..q).map(|j| gs.m_cells[j * per..(j + 1) * per].iter().sum()).collect();
    let mut levels = Vec::with_capacity(opts.word_depth);
    for depth in 1..=opts.word_depth {
        let words = if depth == 1 {
            (0..pot.len() as u32).map(|i| vec![i]).collect()
        } else {
            sample_words(&order, &pot.taus, depth, opts.word_budget, usize::MAX)
        };
        let level: Vec<Result<Option<WordWeight>>> = words
            .into_par_iter()
            .map(|w| {
                let it = concat(scheme, &w);
                let anchor = periodic_point(&scheme.map, &it, scheme.base).map_err(|_| not_contracting(&w))?;
                let (_, l) = pull_word(&scheme.map, &it, anchor);
                let psi = pot.word_value(&w, l);
                let ends: Vec<f64> = (0..=q).map(|j| pull_point(&scheme.map, &it, a + j as f64 * hb)).collect();
                let (mut conformal, mut mass) = (0.0, 0.0);
                for (j, &mb) in block_mass.iter().enumerate() {
                    let (y0, y1) = (a + j as f64 * hb, a + (j + 1) as f64 * hb);
                    let (x, lm) = pull_word(&scheme.map, &it, 0.5 * (y0 + y1));
                    let lx = secant_log_deriv(y0, y1, ends[j], ends[j + 1], lm);
                    let e = mb * pot.word_value(&w, lx).exp();
                    conformal += e;
                    mass += e * gs.rho_at(x);
                }
                let (u, v) = (ends[0], ends[q]);
                if (v - u).abs() < MIN_WORD_WIDTH * (b - a) {
                    return Ok(None);
                }
                Ok(Some(WordWeight { tau_sum: it.len(), left: u.min(v), right: u.max(v), anchor, psi, conformal, mass, word: w }))
            })
            .collect();
        let level = level.into_iter().collect::<Result<Vec<_>>>()?;
        unresolved += level.iter().filter(|w| w.is_none()).count();
        levels.push(level.into_iter().flatten().collect());
    }
    Ok((levels, unresolved))
}

/// Relative conformality error per branch `i` at depth 2:
/// `|Σ_j m(X_j) - Σ_j m(C_ij) e^{-Ψ_i}| / Σ_j m(X_j)` over the enumerated
/// depth-2 words `ij`. `m(X_j)` is read off the fine cells, `m(C_ij)` comes
/// from the word weights, and `Ψ_i` is the secant value over `C_ij`.
pub fn conformality_errors(scheme: &InducingScheme, gs: &GibbsState) -> Vec<(usize, f64)> {
    let Some(level2) = gs.words.get(1) else {
        return Vec::new();
    };
    let direct: Vec<f64> = scheme.branches.iter().map(|br| gs.m_interval(br.left, br.right)).collect();
    let mut acc: std::collections::BTreeMap<usize, (f64, f64)> = Default::default();
    for w in level2 {
        let (i, j) = (w.word[0] as usize, w.word[1] as usize);
        let image = &scheme.branches[j];
        let psi_i = gs.potential.value(i, secant_log_deriv(image.left, image.right, w.left, w.right, f64::NAN));
        let e = acc.entry(i).or_insert((0.0, 0.0));
        e.0 += direct[j];
        e.1 += w.conformal * (-psi_i).exp();
    }
    acc.into_iter().map(|(i, (lhs, rhs))| (i, (lhs - rhs).abs() / lhs)).collect()
}

// ---------------------------------------------------------------------------
// projection

/// An invariant measure on [0,1]: a histogram on a uniform grid plus atoms.
#[derive(Clone, Debug, PartialEq)]
pub struct EquilibriumMeasure {
    pub map_id: String,
    pub params: Vec<f64>,
    pub t: f64,
    /// Mass per bin.
    pub histogram: Vec<f64>,
    /// Point masses `(x, mass)`.
    pub atoms: Vec<(f64, f64)>,
    pub mass: f64,
    pub tau_mean: f64,
}

impl EquilibriumMeasure {
    pub fn bins(&self) -> usize {
        self.histogram.len()
    }

    pub fn bin_width(&self) -> f64 {
        1.0 / self.histogram.len() as f64
    }

    /// A measure made of point masses only, on a grid of `bins` bins.
    pub fn point_masses(map: &IntervalMap, atoms: Vec<(f64, f64)>, bins: usize) -> Self {
        let mass = atoms.iter().map(|a| a.1).sum();
        Self {
            map_id: map.id().to_string(),
            params: map.params().to_vec(),
            t: f64::NAN,
            histogram: vec![0.0; bins],
            atoms,
            mass,
            tau_mean: f64::NAN,
        }
    }

    /// A histogram measure from per-bin masses.
    pub fn from_histogram(map: &IntervalMap, t: f64, histogram: Vec<f64>) -> Self {
        let mass = histogram.iter().sum();
        Self {
            map_id: map.id().to_string(),
            params: map.params().to_vec(),
            t,
            histogram,
            atoms: Vec::new(),
            mass,
            tau_mean: f64::NAN,
        }
    }

    /// Density values per bin (histogram mass over bin width).
    pub fn density(&self) -> Vec<f64> {
        let n = self.bins() as f64;
        self.histogram.iter().map(|m| m * n).collect()
    }

    /// `∫ g∘h dμ`, with two Gauss points per bin.
    pub fn integrate_composed<G: Fn(f64) -> f64, H: Fn(f64) -> f64>(&self, g: G, h: H) -> f64 {
        let w = self.bin_width();
        let d = 0.5 / 3f64.sqrt();
        let mut s = 0.0;
        for (j, &m) in self.histogram.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let c = (j as f64 + 0.5) * w;
            s += 0.5 * m * (g(h(c - d * w)) + g(h(c + d * w)));
        }
        s + self.atoms.iter().map(|&(x, m)| m * g(h(x))).sum::<f64>()
    }

    pub fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> f64 {
        self.integrate_composed(g, |x| x)
    }
}

/// Pushes `μ_F` through `f^k`, `0 <= k < τ_i`, on every branch and
/// normalizes by `∫τ dμ_F`.
pub fn project_measure(scheme: &InducingScheme, gs: &GibbsState, bins: usize) -> Result<EquilibriumMeasure> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be positive".into()));
    }
    let map = &scheme.map;
    let pot = &gs.potential;
    let (a, b) = scheme.base;
    let cells = gs.m_cells.len();
    let hc = (b - a) / cells as f64;
    let prefix = prefix_sums(&gs.m_cells);
    // fixed chunks keep the summation order independent of the thread count
    let parts: Vec<(Vec<f64>, f64, f64)> = scheme
        .branches
        .par_chunks(PROJECTION_CHUNK)
        .enumerate()
        .map(|(chunk, brs)| {
            let mut hist = vec![0.0; bins];
            let (mut total, mut weighted) = (0.0, 0.0);
            for (offset, br) in brs.iter().enumerate() {
                let i = chunk * PROJECTION_CHUNK + offset;
                let w = project_branch(map, pot, gs, i, br, &prefix, (a, hc), &mut hist);
                total += w;
                weighted += w * br.tau as f64;
            }
            (hist, total, weighted)
        })
        .collect();
    let mut hist = vec![0.0; bins];
    let (mut total, mut weighted) = (0.0, 0.0);
    for (h, t, wt) in parts {
        for (acc, v) in hist.iter_mut().zip(h) {
            *acc += v;
        }
        total += t;
        weighted += wt;
    }
    let tau_mean = weighted / total;
    if tau_mean > 1e3 {
        log::warn!("projection unstable: mean inducing time {tau_mean}");
    }
    let norm: f64 = hist.iter().sum();
    for v in hist.iter_mut() {
        *v /= norm;
    }
    Ok(EquilibriumMeasure {
        map_id: map.id().to_string(),
        params: map.params().to_vec(),
        t: gs.t,
        histogram: hist,
        atoms: Vec::new(),
        mass: 1.0,
        tau_mean,
    })
}

/// Deposits `f^k_*(μ_F|X_i)` for `0 <= k < τ_i` and returns `μ_F(X_i)`.
///
/// The branch is cut into power-of-two blocks of base cells, fine enough
/// that at the last step each block covers about one bin. At each step
/// adjacent blocks are merged while their joint image stays within one
/// bin, and each group's mass is spread uniformly over its image. Orbit
/// points `f^k(x)` come from the backward pull chain, not forward iteration.
#[allow(clippy::too_many_arguments)]
fn project_branch(
    map: &IntervalMap,
    pot: &InducedPotential,
    gs: &GibbsState,
    i: usize,
    br: &crate::inducing::Branch,
    prefix: &[f64],
    (a, hc): (f64, f64),
    hist: &mut [f64],
) -> f64 {
    let cells = prefix.len() - 1;
    let bins = hist.len() as f64;
    let tau = br.tau;
    let last = *br.itinerary.last().expect("branches have τ >= 1") as usize;
    let last_width = (map.inverse(last, a + cells as f64 * hc) - map.inverse(last, a)).abs();
    let q = pow2_at_least(last_width * bins).clamp(1, cells);
    let len = cells / q;
    // chain[k * (q + 1) + j] = f^k(g_i(y_j))
    let stride = q + 1;
    let mut chain = vec![0.0; tau * stride];
    for j in 0..=q {
        let mut z = a + (j * len) as f64 * hc;
        for k in (0..tau).rev() {
            z = map.inverse(br.itinerary[k] as usize, z);
            chain[k * stride + j] = z;
        }
    }
    let mut weights = vec![0.0; q];
    for (j, w) in weights.iter_mut().enumerate() {
        let mb = prefix[(j + 1) * len] - prefix[j * len];
        if mb == 0.0 {
            continue;
        }
        let (y0, y1) = (a + (j * len) as f64 * hc, a + ((j + 1) * len) as f64 * hc);
        let (p0, p1) = (chain[j], chain[j + 1]);
        let (_, lm) = br.pull(map, 0.5 * (y0 + y1));
        *w = mb * pot.value(i, secant_log_deriv(y0, y1, p0, p1, lm)).exp() * gs.rho_at(0.5 * (p0 + p1));
    }
    let total: f64 = weights.iter().sum();
    for k in 0..tau {
        let row = &chain[k * stride..(k + 1) * stride];
        let span = (row[q] - row[0]).abs();
        let groups = pow2_at_least(span * bins).clamp(1, q);
        let g = q / groups;
        for s in 0..groups {
            let (u, v) = (row[s * g], row[(s + 1) * g]);
            let w: f64 = weights[s * g..(s + 1) * g].iter().sum();
            if w > 0.0 {
                deposit(hist, u.min(v), u.max(v), w);
            }
        }
    }
    total
}

/// Adds `w` spread uniformly over `[lo, hi]` into a histogram on [0,1].
fn deposit(hist: &mut [f64], lo: f64, hi: f64, w: f64) {
    let n = hist.len();
    let nf = n as f64;
    let c0 = ((lo * nf).floor().max(0.0) as usize).min(n - 1);
    let c1 = ((hi * nf).floor().max(0.0) as usize).min(n - 1);
    if c0 == c1 || hi <= lo {
        hist[c0] += w;
        return;
    }
    let span = hi - lo;
    for (c, slot) in hist.iter_mut().enumerate().take(c1 + 1).skip(c0) {
        let (l, r) = (c as f64 / nf, (c + 1) as f64 / nf);
        let ov = (hi.min(r) - lo.max(l)).max(0.0);
        *slot += w * ov / span;
    }
}

/// `max_g |∫ g∘f dμ - ∫ g dμ|` over the dictionary.
pub fn invariance_residual(map: &IntervalMap, mu: &EquilibriumMeasure, tests: &TestDictionary) -> Result<f64> {
    if tests.is_empty() {
        return Err(Error::InvalidArgument("test dictionary is empty".into()));
    }
    Ok((0..tests.len())
        .map(|j| {
            let g = |x: f64| tests.eval(j, x);
            (mu.integrate_composed(g, |x| map.eval(x).clamp(0.0, 1.0)) - mu.integrate(g)).abs()
        })
        .fold(0.0, f64::max))
}
