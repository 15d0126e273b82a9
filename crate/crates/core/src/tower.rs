//! The Hofbauer tower: domains `f^k(X_k)` for k-cylinders `X_k`, identified
//! when they agree as sets, with the graph structure `D -> D'` and its
//! transitive component.
//!
//! Domains are generated breadth first. A domain `D` splits at the critical
//! points into pieces `D ∩ B_s` (one per branch `B_s`); the successor along
//! symbol `s` is the image `f(D ∩ B_s)`. This is the same as refining the
//! witnessing cylinder `X_k` to the level-(k+1) cylinders it contains.

use std::collections::HashMap;

use crate::cylinders::{partition_levels, DEFAULT_MAX_DEPTH};
use crate::error::{Error, Result};
use crate::graph::{is_cyclic, tarjan_scc};
use crate::maps::IntervalMap;

/// Two domains are identified when both endpoints agree within this.
pub const IDENT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_DOMAIN_CAP: usize = 100_000;
/// Pieces `D ∩ B_s` narrower than this produce no edge.
pub const PIECE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TowerOptions {
    pub ident_tol: f64,
    pub domain_cap: usize,
    /// Witness cylinders are recorded for levels up to this depth.
    pub witness_depth: usize,
}

impl Default for TowerOptions {
    fn default() -> Self {
        Self { ident_tol: IDENT_TOLERANCE, domain_cap: DEFAULT_DOMAIN_CAP, witness_depth: 10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TowerDomain {
    pub id: usize,
    pub left: f64,
    pub right: f64,
    pub min_level: usize,
    /// Symbol path from the base that first produced this domain.
    pub address: Vec<u8>,
    /// `(level, cylinder index)` pairs realizing this interval.
    pub witnesses: Vec<(usize, usize)>,
    /// Successor along each branch symbol; `None` if the piece is empty or
    /// the domain sits at the height cap.
    pub successors: Vec<Option<usize>>,
    /// Successors were computed (the domain lies below the height cap).
    pub explored: bool,
}

impl TowerDomain {
    pub fn interval(&self) -> (f64, f64) {
        (self.left, self.right)
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.left - tol && x <= self.right + tol
    }
}

#[derive(Clone, Debug)]
pub struct HofbauerTower {
    pub map: IntervalMap,
    pub height_cap: usize,
    pub ident_tol: f64,
    pub domains: Vec<TowerDomain>,
    pub edges: Vec<(usize, usize)>,
    pub base_id: usize,
    transitive: Option<Vec<usize>>,
    /// Two maximal cyclic components tied in size.
    pub transitive_tie: bool,
}

impl HofbauerTower {
    pub fn transitive_ids(&self) -> Option<&[usize]> {
        self.transitive.as_deref()
    }

    pub fn is_transitive(&self, id: usize) -> bool {
        self.transitive.as_ref().is_some_and(|t| t.binary_search(&id).is_ok())
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.domains.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
        }
        adj
    }

    /// Edges leaving the transitive component into domains whose forward
    /// closure is fully computed (cannot reach an unexplored domain). Edges
    /// into domains that reach the height cap are undetermined, not violations.
    pub fn closure_violations(&self) -> Vec<(usize, usize)> {
        let n = self.domains.len();
        let mut radj = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            radj[b].push(a);
        }
        let mut open = vec![false; n];
        let mut stack: Vec<usize> = (0..n).filter(|&i| !self.domains[i].explored).collect();
        for &i in &stack {
            open[i] = true;
        }
        while let Some(v) = stack.pop() {
            for &u in &radj[v] {
                if !open[u] {
                    open[u] = true;
                    stack.push(u);
                }
            }
        }
        self.edges
            .iter()
            .copied()
            .filter(|&(a, b)| self.is_transitive(a) && !self.is_transitive(b) && !open[b])
            .collect()
    }

    pub fn find_address(&self, address: &[u8]) -> Option<usize> {
        self.domains.iter().position(|d| d.address == address)
    }
}

struct DomainIndex {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl DomainIndex {
    fn new(tol: f64) -> Self {
        Self { cell: 4.0 * tol, buckets: HashMap::new() }
    }

    fn key(&self, lo: f64, hi: f64) -> (i64, i64) {
        ((lo / self.cell).round() as i64, (hi / self.cell).round() as i64)
    }

    fn find(&self, domains: &[TowerDomain], lo: f64, hi: f64, tol: f64) -> Option<usize> {
        let (kl, kh) = self.key(lo, hi);
        for dl in -1..=1 {
            for dh in -1..=1 {
                if let Some(ids) = self.buckets.get(&(kl + dl, kh + dh)) {
                    for &id in ids {
                        let d = &domains[id];
                        if (d.left - lo).abs() <= tol && (d.right - hi).abs() <= tol {
                            return Some(id);
                        }
                    }
                }
            }
        }
        None
    }

    fn insert(&mut self, id: usize, lo: f64, hi: f64) {
        let key = self.key(lo, hi);
        self.buckets.entry(key).or_default().push(id);
    }
}

pub fn build_tower(map: &IntervalMap, height: usize) -> Result<HofbauerTower> {
    build_tower_with(map, height, &TowerOptions::default())
}

/// Builds the tower up to height `height` (domains reachable from the base by
/// paths of length at most `height`).
pub fn build_tower_with(map: &IntervalMap, height: usize, opts: &TowerOptions) -> Result<HofbauerTower> {
    if height == 0 {
        return Err(Error::InvalidArgument("tower height must be at least 1".into()));
    }
    let branches = map.branches();
    let nb = branches.len();
    let mut domains = vec![TowerDomain {
        id: 0,
        left: 0.0,
        right: 1.0,
        min_level: 0,
        address: Vec::new(),
        witnesses: vec![(0, 0)],
        successors: vec![None; nb],
        explored: false,
    }];
    let mut index = DomainIndex::new(opts.ident_tol);
    index.insert(0, 0.0, 1.0);
    let mut edges = Vec::new();
    let mut frontier = vec![0usize];

    for level in 0..height {
        let mut next = Vec::new();
        for &d in &frontier {
            let (lo, hi) = domains[d].interval();
            let mut succ = vec![None; nb];
            for (s, &(b_lo, b_hi)) in branches.iter().enumerate() {
                let (p_lo, p_hi) = (lo.max(b_lo), hi.min(b_hi));
                if p_hi - p_lo <= PIECE_TOLERANCE {
                    continue;
                }
                let (i_lo, i_hi) = map.image_on_branch(s, p_lo, p_hi);
                let id = match index.find(&domains, i_lo, i_hi, opts.ident_tol) {
                    Some(id) => id,
                    None => {
                        let id = domains.len();
                        if id >= opts.domain_cap {
                            return Err(Error::TowerTooLarge { cap: opts.domain_cap });
                        }
                        let mut address = domains[d].address.clone();
                        address.push(s as u8);
                        domains.push(TowerDomain {
                            id,
                            left: i_lo,
                            right: i_hi,
                            min_level: level + 1,
                            address,
                            witnesses: Vec::new(),
                            successors: vec![None; nb],
                            explored: false,
                        });
                        index.insert(id, i_lo, i_hi);
                        next.push(id);
                        id
                    }
                };
                succ[s] = Some(id);
                edges.push((d, id));
            }
            domains[d].successors = succ;
            domains[d].explored = true;
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    edges.sort_unstable();
    edges.dedup();

    let witness_depth = opts.witness_depth.min(height).min(DEFAULT_MAX_DEPTH);
    if witness_depth > 0 {
        let levels = partition_levels(map, witness_depth, DEFAULT_MAX_DEPTH)?;
        let mut owner: Vec<Option<usize>> = vec![Some(0)];
        for part in levels.iter().skip(1) {
            let mut next_owner = Vec::with_capacity(part.len());
            for (idx, cyl) in part.cylinders.iter().enumerate() {
                let parent = cyl.parent.and_then(|p| owner[p]);
                let symbol = *cyl.itinerary.last().expect("level >= 1") as usize;
                let dom = parent.and_then(|p| domains[p].successors[symbol]);
                if let Some(dom) = dom {
                    domains[dom].witnesses.push((part.level, idx));
                }
                next_owner.push(dom);
            }
            owner = next_owner;
        }
    }

    Ok(HofbauerTower {
        map: map.clone(),
        height_cap: height,
        ident_tol: opts.ident_tol,
        domains,
        edges,
        base_id: 0,
        transitive: None,
        transitive_tie: false,
    })
}

/// Computes and stores the transitive component: the largest cyclic
/// strongly connected component reachable from the base.
pub fn transitive_component(tower: &mut HofbauerTower) -> Result<Vec<usize>> {
    let adj = tower.adjacency();
    let reach = reachable(&adj, tower.base_id);
    let mut cyclic: Vec<Vec<usize>> = tarjan_scc(&adj)
        .into_iter()
        .filter(|c| reach[c[0]] && is_cyclic(c, &adj))
        .collect();
    if cyclic.is_empty() {
        return Err(Error::ComponentUndetected { height: tower.height_cap });
    }
    cyclic.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    tower.transitive_tie = cyclic.len() > 1 && cyclic[0].len() == cyclic[1].len();
    if tower.transitive_tie {
        log::warn!(
            "two maximal cyclic components of size {} in the tower of {}",
            cyclic[0].len(),
            tower.map.id()
        );
    }
    let comp = cyclic.swap_remove(0);
    tower.transitive = Some(comp.clone());
    Ok(comp)
}

fn reachable(adj: &[Vec<usize>], from: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

/// One step of the lifted dynamics: `(x, D) -> (f x, D')`.
pub fn tower_step(tower: &HofbauerTower, x: f64, domain: usize) -> Result<(f64, usize)> {
    let d = tower.domains.get(domain).ok_or_else(|| {
        Error::InvalidArgument(format!("domain {domain} does not exist"))
    })?;
    if !d.contains(x, tower.ident_tol) {
        return Err(Error::OutsideDomain { x, left: d.left, right: d.right });
    }
    let map = &tower.map;
    if map
        .critical_points()
        .iter()
        .any(|c| (x - c.location).abs() < crate::cylinders::DEDUP_TOLERANCE)
    {
        return Err(Error::AmbiguousPoint { x });
    }
    let s = map.symbol_of(x);
    let next = d.successors[s].ok_or(Error::NoEdge { domain })?;
    Ok((map.eval(x).clamp(0.0, 1.0), next))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chebyshev_tower_is_one_self_loop() {
        let mut t = build_tower(&IntervalMap::chebyshev(), 6).unwrap();
        assert_eq!(t.domains.len(), 1);
        assert_eq!(t.edges, vec![(0, 0)]);
        assert_eq!(transitive_component(&mut t).unwrap(), vec![0]);
        let (y, d) = tower_step(&t, 0.3, 0).unwrap();
        assert!((y - 0.84).abs() < 1e-15);
        assert_eq!(d, 0);
    }

    #[test]
    fn full_tent_tower() {
        let t = build_tower(&IntervalMap::tent(2.0).unwrap(), 6).unwrap();
        assert_eq!(t.domains.len(), 1);
        assert_eq!(t.edges, vec![(0, 0)]);
        let (y, d) = tower_step(&t, 0.3, 0).unwrap();
        assert!((y - 0.6).abs() < 1e-15 && d == 0);
        // every cylinder up to level 6 witnesses the base domain
        assert_eq!(t.domains[0].witnesses.len(), 1 + 2 + 4 + 8 + 16 + 32 + 64);
    }

    #[test]
    fn tent_19_transitive_component_excludes_base() {
        let mut t = build_tower(&IntervalMap::tent(1.9).unwrap(), 8).unwrap();
        let comp = transitive_component(&mut t).unwrap();
        assert!(!comp.contains(&0));
        assert!(comp.len() > 2);
        assert!(t.closure_violations().is_empty());
    }

    #[test]
    fn step_errors() {
        let t = build_tower(&IntervalMap::tent(1.9).unwrap(), 2).unwrap();
        assert!(matches!(tower_step(&t, 0.5, 0), Err(Error::AmbiguousPoint { .. })));
        let top = t.domains.iter().position(|d| !d.explored).unwrap();
        let x = 0.5 * (t.domains[top].left + t.domains[top].right) + 1e-3;
        assert!(matches!(tower_step(&t, x, top), Err(Error::NoEdge { .. })));
    }
}
