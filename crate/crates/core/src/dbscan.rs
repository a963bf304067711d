//! DBSCAN in η–φ space with a wrapped azimuth.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec::Vec;
use core::f64::consts::TAU;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::wrap_angle;

/// Label of points that belong to no cluster.
pub const UNCLUSTERED: i64 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbscanParams {
    /// Neighborhood radius in η–φ units (inclusive).
    pub eps: f64,
    /// Neighbors within `eps`, counting the point itself, needed for a core point.
    pub min_pts: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self { eps: 0.05, min_pts: 2 }
    }
}

/// `√(Δη² + Δφ²)` with Δφ along the shorter arc.
pub fn eta_phi_distance(p1: (f64, f64), p2: (f64, f64)) -> f64 {
    let de = p1.0 - p2.0;
    let dp = wrap_angle(p1.1 - p2.1).abs();
    de.hypot(dp)
}

/// Uniform grid over (η, φ) with cells at least `eps` wide; φ cells wrap.
struct Grid {
    eps: f64,
    phi_cells: i64,
    phi_cell_width: f64,
    cells: BTreeMap<(i64, i64), Vec<usize>>,
}

impl Grid {
    fn new(points: &[(f64, f64)], eps: f64) -> Self {
        let phi_cells = ((TAU / eps).floor() as i64).max(1);
        let mut grid = Self {
            eps,
            phi_cells,
            phi_cell_width: TAU / phi_cells as f64,
            cells: BTreeMap::new(),
        };
        for (i, p) in points.iter().enumerate() {
            let key = grid.key(*p);
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn key(&self, p: (f64, f64)) -> (i64, i64) {
        let phi = crate::canonical_phi(p.1);
        let pc = ((phi / self.phi_cell_width).floor() as i64).clamp(0, self.phi_cells - 1);
        ((p.0 / self.eps).floor() as i64, pc)
    }

    fn neighbors(&self, points: &[(f64, f64)], i: usize, out: &mut Vec<usize>) {
        out.clear();
        let (ke, kp) = self.key(points[i]);
        let phi_span: Vec<i64> = if self.phi_cells <= 3 {
            (0..self.phi_cells).collect()
        } else {
            [-1, 0, 1].iter().map(|d| (kp + d).rem_euclid(self.phi_cells)).collect()
        };
        for de in -1..=1 {
            for &pc in &phi_span {
                if let Some(bucket) = self.cells.get(&(ke + de, pc)) {
                    out.extend(
                        bucket
                            .iter()
                            .copied()
                            .filter(|&j| eta_phi_distance(points[i], points[j]) <= self.eps),
                    );
                }
            }
        }
    }
}

/// Clusters `(η, φ)` points. Returns one label per point, `-1` for
/// unclustered points.
///
/// Clusters are numbered in order of their lowest-index core point; a
/// border point reachable from several clusters joins the first one found
/// when scanning points in ascending index order.
pub fn dbscan(points: &[(f64, f64)], params: &DbscanParams) -> Vec<i64> {
    let n = points.len();
    let mut labels = alloc::vec![UNCLUSTERED; n];
    if n == 0 {
        return labels;
    }
    let grid = Grid::new(points, params.eps);
    let mut visited = alloc::vec![false; n];
    let mut neigh = Vec::new();
    let mut inner = Vec::new();
    let mut next_label = 0i64;
    let mut queue = VecDeque::new();

    for i in 0..n {
        if visited[i] {
            continue;
        }
        grid.neighbors(points, i, &mut neigh);
        if neigh.len() < params.min_pts {
            // Possibly claimed later as a border point.
            continue;
        }
        visited[i] = true;
        labels[i] = next_label;
        queue.clear();
        queue.extend(neigh.iter().copied());
        while let Some(j) = queue.pop_front() {
            if labels[j] == UNCLUSTERED {
                labels[j] = next_label;
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            grid.neighbors(points, j, &mut inner);
            if inner.len() >= params.min_pts {
                queue.extend(inner.iter().copied().filter(|&k| !visited[k]));
            }
        }
        next_label += 1;
    }
    labels
}

/// Number of clusters in a label vector.
pub fn cluster_count(labels: &[i64]) -> usize {
    labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_examples() {
        assert!((eta_phi_distance((0.0, 0.05), (0.0, TAU - 0.05)) - 0.1).abs() < 1e-12);
        assert_eq!(eta_phi_distance((0.4, 1.0), (0.4, 1.0)), 0.0);
        assert_eq!(eta_phi_distance((0.0, 0.0), (3.0, 0.0)), 3.0);
    }

    #[test]
    fn sparse_points_are_unclustered() {
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 * 0.5, 1.0)).collect();
        let labels = dbscan(&pts, &DbscanParams { eps: 0.1, min_pts: 2 });
        assert!(labels.iter().all(|&l| l == UNCLUSTERED));
    }

    #[test]
    fn two_separated_groups() {
        let mut pts = Vec::new();
        for k in 0..4 {
            pts.push((0.0 + 0.01 * k as f64, 1.0));
        }
        for k in 0..4 {
            pts.push((1.0 + 0.01 * k as f64, 1.0));
        }
        let labels = dbscan(&pts, &DbscanParams { eps: 0.05, min_pts: 3 });
        assert_eq!(labels, [0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn clusters_across_phi_seam() {
        let pts = [(0.0, 0.01), (0.0, TAU - 0.01), (0.0, TAU - 0.03), (2.0, 3.0)];
        let labels = dbscan(&pts, &DbscanParams { eps: 0.025, min_pts: 2 });
        assert_eq!(labels, [0, 0, 0, UNCLUSTERED]);
        assert_eq!(cluster_count(&labels), 1);
    }

    #[test]
    fn border_point_goes_to_first_cluster() {
        // Point 4 is within eps of one core of each group but has only
        // three neighbors itself, so it is a border point of both.
        let pts = [
            (0.02, 1.0),
            (0.03, 1.0),
            (0.04, 1.0),
            (0.06, 1.0),
            (0.10, 1.0),
            (0.14, 1.0),
            (0.16, 1.0),
            (0.17, 1.0),
            (0.18, 1.0),
        ];
        let labels = dbscan(&pts, &DbscanParams { eps: 0.05, min_pts: 4 });
        assert_eq!(labels, [0, 0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn large_eps_uses_all_phi_cells() {
        let pts = [(0.0, 0.1), (0.0, 3.0), (0.0, 6.0)];
        let labels = dbscan(&pts, &DbscanParams { eps: 4.0, min_pts: 2 });
        assert_eq!(labels, [0, 0, 0]);
    }
}
