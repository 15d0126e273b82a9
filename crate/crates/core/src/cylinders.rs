//! Level-k monotonicity partitions, itineraries, and the itinerary matching
//! between partitions of nearby maps.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::IntervalMap;
use crate::roots::{bisect, iterate};

pub const ROOT_TOLERANCE: f64 = 1e-13;
/// Endpoints closer than this are merged.
pub const DEDUP_TOLERANCE: f64 = 1e-11;
/// Cylinders narrower than this are flagged as slivers.
pub const SLIVER_WIDTH: f64 = 1e-10;
pub const DEFAULT_MAX_DEPTH: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub level: usize,
    pub left: f64,
    pub right: f64,
    /// Branch index of `f^j(x)` for `j < level`.
    pub itinerary: Vec<u8>,
    /// Index of the enclosing cylinder one level up.
    pub parent: Option<usize>,
    pub sliver: bool,
}

impl Cylinder {
    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.left + self.right)
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.left, self.right)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CylinderPartition {
    pub map_id: String,
    pub params: Vec<f64>,
    pub level: usize,
    pub cylinders: Vec<Cylinder>,
}

impl CylinderPartition {
    pub fn len(&self) -> usize {
        self.cylinders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cylinders.is_empty()
    }

    /// Index of the cylinder with this itinerary.
    pub fn find_itinerary(&self, itinerary: &[u8]) -> Option<usize> {
        self.cylinders.iter().position(|c| c.itinerary == itinerary)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CylinderMatching {
    pub level: usize,
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

impl CylinderMatching {
    pub fn is_total(&self) -> bool {
        self.unmatched_a.is_empty() && self.unmatched_b.is_empty()
    }
}

/// The partition `Q_k` with the default maximum depth.
pub fn partition(map: &IntervalMap, k: usize) -> Result<CylinderPartition> {
    partition_with_max(map, k, DEFAULT_MAX_DEPTH)
}

pub fn partition_with_max(map: &IntervalMap, k: usize, max_depth: usize) -> Result<CylinderPartition> {
    Ok(partition_levels(map, k, max_depth)?.pop().expect("level 0 always present"))
}

/// All partitions `Q_0, ..., Q_k`.
pub fn partition_levels(map: &IntervalMap, k: usize, max_depth: usize) -> Result<Vec<CylinderPartition>> {
    if k > max_depth {
        return Err(Error::DepthTooLarge { requested: k, max: max_depth });
    }
    let mut levels = vec![CylinderPartition {
        map_id: map.id().to_string(),
        params: map.params().to_vec(),
        level: 0,
        cylinders: vec![Cylinder {
            level: 0,
            left: 0.0,
            right: 1.0,
            itinerary: Vec::new(),
            parent: None,
            sliver: false,
        }],
    }];
    for level in 1..=k {
        let next = refine(map, levels.last().unwrap())?;
        debug_assert_eq!(next.level, level);
        levels.push(next);
    }
    Ok(levels)
}

fn refine(map: &IntervalMap, prev: &CylinderPartition) -> Result<CylinderPartition> {
    let j = prev.level;
    let criticals: Vec<f64> = map.critical_points().iter().map(|c| c.location).collect();
    let mut cylinders = Vec::with_capacity(prev.len() * 2);
    for (parent_idx, parent) in prev.cylinders.iter().enumerate() {
        let (a, b) = parent.interval();
        let (ya, yb) = (iterate(map, a, j), iterate(map, b, j));
        let (lo, hi) = (ya.min(yb), ya.max(yb));
        // cut points x with f^j(x) = c, paired with their image value c
        let mut cuts: Vec<(f64, f64)> = Vec::new();
        for &c in &criticals {
            if c <= lo + DEDUP_TOLERANCE || c >= hi - DEDUP_TOLERANCE {
                continue;
            }
            let x = if j == 0 {
                c
            } else {
                bisect(|x| iterate(map, x, j) - c, a, b, ROOT_TOLERANCE).ok_or(
                    Error::PartitionIncomplete { level: j + 1, left: a, right: b },
                )?
            };
            cuts.push((x, c));
        }
        cuts.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut points = vec![(a, ya)];
        for cut in cuts {
            if cut.0 - points.last().unwrap().0 > DEDUP_TOLERANCE && b - cut.0 > DEDUP_TOLERANCE {
                points.push(cut);
            }
        }
        points.push((b, yb));
        for w in points.windows(2) {
            let ((left, y_left), (right, y_right)) = (w[0], w[1]);
            let symbol = map.symbol_of(0.5 * (y_left + y_right)) as u8;
            let mut itinerary = parent.itinerary.clone();
            itinerary.push(symbol);
            cylinders.push(Cylinder {
                level: j + 1,
                left,
                right,
                itinerary,
                parent: Some(parent_idx),
                sliver: right - left < SLIVER_WIDTH,
            });
        }
    }
    Ok(CylinderPartition {
        map_id: prev.map_id.clone(),
        params: prev.params.clone(),
        level: j + 1,
        cylinders,
    })
}

/// The unique cylinder of `part` containing `x`.
pub fn cylinder_containing(part: &CylinderPartition, x: f64) -> Result<&Cylinder> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::OutsideDomain { x, left: 0.0, right: 1.0 });
    }
    let idx = part.cylinders.partition_point(|c| c.right < x);
    let idx = idx.min(part.len() - 1);
    let cyl = &part.cylinders[idx];
    let interior_left = cyl.left > 0.0 && (x - cyl.left).abs() < DEDUP_TOLERANCE;
    let interior_right = cyl.right < 1.0 && (x - cyl.right).abs() < DEDUP_TOLERANCE;
    if interior_left || interior_right {
        return Err(Error::AmbiguousPoint { x });
    }
    Ok(cyl)
}

/// Pairs cylinders with identical itineraries.
pub fn match_partitions(a: &CylinderPartition, b: &CylinderPartition) -> Result<CylinderMatching> {
    if a.level != b.level {
        return Err(Error::InvalidArgument(format!(
            "cannot match partitions at levels {} and {}",
            a.level, b.level
        )));
    }
    let index_b: HashMap<&[u8], usize> =
        b.cylinders.iter().enumerate().map(|(i, c)| (c.itinerary.as_slice(), i)).collect();
    let mut pairs = Vec::new();
    let mut unmatched_a = Vec::new();
    let mut seen_b = vec![false; b.len()];
    for (i, c) in a.cylinders.iter().enumerate() {
        match index_b.get(c.itinerary.as_slice()) {
            Some(&j) => {
                pairs.push((i, j));
                seen_b[j] = true;
            }
            None => unmatched_a.push(i),
        }
    }
    let unmatched_b = seen_b.iter().enumerate().filter(|(_, s)| !**s).map(|(j, _)| j).collect();
    Ok(CylinderMatching { level: a.level, pairs, unmatched_a, unmatched_b })
}

/// Checks `f^j(∂X) ∩ ∂X = ∅` for `1 <= j <= depth`.
pub fn boundary_condition(map: &IntervalMap, left: f64, right: f64, depth: usize) -> bool {
    let ends = [left, right];
    ends.iter().all(|&e| {
        let mut x = e;
        (1..=depth).all(|_| {
            x = map.eval(x).clamp(0.0, 1.0);
            ends.iter().all(|&b| (x - b).abs() > DEDUP_TOLERANCE)
        })
    })
}

/// Hausdorff distance between two intervals.
pub fn hausdorff(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_zero_is_whole_interval() {
        let p = partition(&IntervalMap::logistic(3.8).unwrap(), 0).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.cylinders[0].interval(), (0.0, 1.0));
    }

    #[test]
    fn full_tent_level_one_and_five() {
        let f = IntervalMap::tent(2.0).unwrap();
        let p1 = partition(&f, 1).unwrap();
        assert_eq!(p1.cylinders.iter().map(|c| c.interval()).collect::<Vec<_>>(), vec![(0.0, 0.5), (0.5, 1.0)]);
        let p5 = partition(&f, 5).unwrap();
        assert_eq!(p5.len(), 32);
        for (j, c) in p5.cylinders.iter().enumerate() {
            assert!((c.left - j as f64 / 32.0).abs() < 1e-12);
            assert!((c.right - (j + 1) as f64 / 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn chebyshev_endpoints_are_sine_squares() {
        let p = partition(&IntervalMap::chebyshev(), 3).unwrap();
        assert_eq!(p.len(), 8);
        for (j, c) in p.cylinders.iter().enumerate() {
            let expect = (j as f64 * std::f64::consts::PI / 16.0).sin().powi(2);
            assert!((c.left - expect).abs() < 1e-12, "{j}: {} vs {expect}", c.left);
        }
    }

    #[test]
    fn containing_examples() {
        let f = IntervalMap::tent(2.0).unwrap();
        let p1 = partition(&f, 1).unwrap();
        assert_eq!(cylinder_containing(&p1, 0.3).unwrap().interval(), (0.0, 0.5));
        let p5 = partition(&f, 5).unwrap();
        let c = cylinder_containing(&p5, 0.3).unwrap();
        assert!((c.left - 9.0 / 32.0).abs() < 1e-12 && (c.right - 10.0 / 32.0).abs() < 1e-12);
        let p0 = partition(&f, 0).unwrap();
        assert_eq!(cylinder_containing(&p0, 0.77).unwrap().interval(), (0.0, 1.0));
        assert!(matches!(cylinder_containing(&p1, 0.5), Err(Error::AmbiguousPoint { .. })));
    }

    #[test]
    fn depth_cap_enforced() {
        let f = IntervalMap::tent(2.0).unwrap();
        assert!(matches!(partition(&f, 21), Err(Error::DepthTooLarge { .. })));
    }

    #[test]
    fn boundary_condition_examples() {
        let f = IntervalMap::tent(2.0).unwrap();
        assert!(!boundary_condition(&f, 0.0, 0.5, 1));
        // f^2(3/4) = 1 is an endpoint
        assert!(!boundary_condition(&f, 0.75, 1.0, 2));
        assert!(boundary_condition(&f, 0.75, 0.875, 3));
    }
}
