//! Closed-ball and ray primitives plus a uniform-grid index over node
//! positions.
//!
//! The grid is an accelerator only: every query answers exactly what a
//! linear scan with [`Ball::contains`] would.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{is_finite, DVec3};
use crate::graph::{Graph, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SpatialError {
    #[error("ray parameter must be non-negative")]
    NegativeParameter,
    #[error("radius must be positive")]
    NonPositiveRadius,
    #[error("ray direction must be finite and nonzero")]
    DegenerateRay,
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("spatial index is stale (graph changed since build)")]
    StaleIndex,
}

/// Closed ball `{p : |p - center| <= radius}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: DVec3,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: DVec3, radius: f64) -> Result<Self, SpatialError> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(SpatialError::NonPositiveRadius);
        }
        if !is_finite(center) {
            return Err(SpatialError::NonFinite);
        }
        Ok(Self { center, radius })
    }

    /// Closed containment; no tolerance at the boundary.
    #[inline]
    pub fn contains(&self, p: DVec3) -> bool {
        (p - self.center).length() <= self.radius
    }
}

/// Half-line with unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: DVec3,
    pub direction: DVec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: DVec3, direction: DVec3) -> Result<Self, SpatialError> {
        if !is_finite(origin) {
            return Err(SpatialError::NonFinite);
        }
        let len = direction.length();
        if !(len > 0.0) || !len.is_finite() {
            return Err(SpatialError::DegenerateRay);
        }
        Ok(Self { origin, direction: direction / len })
    }

    pub fn point_at(&self, t: f64) -> Result<DVec3, SpatialError> {
        if !(t >= 0.0) {
            return Err(SpatialError::NegativeParameter);
        }
        Ok(self.origin + self.direction * t)
    }
}

/// `origin + t * direction` for `t >= 0`.
pub fn point_on_ray(ray: &Ray, t: f64) -> Result<DVec3, SpatialError> {
    ray.point_at(t)
}

/// Cells per axis at most; cell edge is at least `extent / GRID_DIVISIONS`.
const GRID_DIVISIONS: f64 = 32.0;

/// Uniform grid over node positions in compressed-row layout: `cell_start`
/// indexes into `entries`, which holds point indices sorted by cell.
#[derive(Debug, Clone, Default)]
pub struct SpatialIndex {
    origin: DVec3,
    cell: f64,
    dims: [usize; 3],
    cell_start: Vec<u32>,
    entries: Vec<u32>,
    ids: Vec<NodeId>,
    points: Vec<DVec3>,
    revision: u64,
}

impl SpatialIndex {
    /// Builds an index over all node positions. The cell edge is
    /// `max(extent / 32, typical_radius)`.
    pub fn build(graph: &Graph, typical_radius: Option<f64>) -> Self {
        let ids: Vec<NodeId> = graph.node_ids().cloned().collect();
        let points: Vec<DVec3> = graph.nodes().map(|n| n.position).collect();
        Self::from_points(ids, points, typical_radius, graph.revision())
    }

    pub fn from_points(
        ids: Vec<NodeId>,
        points: Vec<DVec3>,
        typical_radius: Option<f64>,
        revision: u64,
    ) -> Self {
        debug_assert_eq!(ids.len(), points.len());
        if points.is_empty() {
            return Self { revision, cell: 1.0, ..Self::default() };
        }
        let (lo, hi) = points
            .iter()
            .fold((points[0], points[0]), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        let extent = (hi - lo).max_element();
        let mut cell = (extent / GRID_DIVISIONS).max(typical_radius.unwrap_or(0.0));
        if !(cell > 0.0) || !cell.is_finite() {
            cell = 1.0;
        }
        let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a]) / cell).floor() as usize + 1);
        let mut index = Self {
            origin: lo,
            cell,
            dims,
            cell_start: Vec::new(),
            entries: Vec::new(),
            ids,
            points,
            revision,
        };
        index.fill();
        index
    }

    fn fill(&mut self) {
        let ncells = self.dims[0] * self.dims[1] * self.dims[2];
        let mut counts = vec![0u32; ncells + 1];
        let cells: Vec<usize> = self.points.iter().map(|&p| self.cell_of(p)).collect();
        for &c in &cells {
            counts[c + 1] += 1;
        }
        for i in 0..ncells {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut entries = vec![0u32; self.points.len()];
        for (i, &c) in cells.iter().enumerate() {
            entries[cursor[c] as usize] = i as u32;
            cursor[c] += 1;
        }
        self.cell_start = counts;
        self.entries = entries;
    }

    fn axis_cell(&self, x: f64, axis: usize) -> usize {
        let c = ((x - self.origin[axis]) / self.cell).floor();
        if c <= 0.0 {
            0
        } else {
            (c as usize).min(self.dims[axis] - 1)
        }
    }

    fn cell_of(&self, p: DVec3) -> usize {
        let [i, j, k] = [0, 1, 2].map(|a| self.axis_cell(p[a], a));
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Ids of all indexed points inside the closed ball.
    pub fn nodes_in_ball(&self, ball: &Ball) -> BTreeSet<NodeId> {
        let mut out = BTreeSet::new();
        self.visit_ball(ball, |i| {
            out.insert(self.ids[i].clone());
        });
        out
    }

    /// True if any indexed point lies inside the ball.
    pub fn any_in_ball(&self, ball: &Ball) -> bool {
        let mut hit = false;
        self.visit_ball(ball, |_| hit = true);
        hit
    }

    /// Like [`nodes_in_ball`](Self::nodes_in_ball) but fails if `graph` has
    /// changed since the index was built.
    pub fn nodes_in_ball_checked(
        &self,
        graph: &Graph,
        ball: &Ball,
    ) -> Result<BTreeSet<NodeId>, SpatialError> {
        if graph.revision() != self.revision {
            return Err(SpatialError::StaleIndex);
        }
        Ok(self.nodes_in_ball(ball))
    }

    fn visit_ball(&self, ball: &Ball, mut f: impl FnMut(usize)) {
        if self.points.is_empty() {
            return;
        }
        // One cell of padding on each side so boundary points whose cell
        // index rounds outward are still visited.
        let range = |a: usize| {
            let lo = self.axis_cell(ball.center[a] - ball.radius, a).saturating_sub(1);
            let hi = (self.axis_cell(ball.center[a] + ball.radius, a) + 1).min(self.dims[a] - 1);
            lo..=hi
        };
        let (ri, rj, rk) = (range(0), range(1), range(2));
        for k in rk {
            for j in rj.clone() {
                let row = (k * self.dims[1] + j) * self.dims[0];
                for i in ri.clone() {
                    let c = row + i;
                    let (s, e) = (self.cell_start[c] as usize, self.cell_start[c + 1] as usize);
                    for &pi in &self.entries[s..e] {
                        if ball.contains(self.points[pi as usize]) {
                            f(pi as usize);
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::rng::SplitMix64;

    fn graph_of(points: &[DVec3]) -> Graph {
        let mut g = Graph::new();
        for (i, &p) in points.iter().enumerate() {
            g.add_node(NodeId(format!("n{i}")), p, BTreeMap::new()).unwrap();
        }
        g
    }

    fn scan(g: &Graph, ball: &Ball) -> BTreeSet<NodeId> {
        g.nodes()
            .filter(|n| {
                let d = n.position - ball.center;
                (d.x * d.x + d.y * d.y + d.z * d.z).sqrt() <= ball.radius
            })
            .map(|n| n.id.clone())
            .collect()
    }

    #[test]
    fn center_and_boundary_are_included() {
        let g = graph_of(&[DVec3::ZERO, DVec3::new(2.0, 0.0, 0.0), DVec3::new(2.0 + 1e-12, 0.0, 0.0)]);
        let idx = SpatialIndex::build(&g, None);
        let hits = idx.nodes_in_ball(&Ball::new(DVec3::ZERO, 2.0).unwrap());
        assert_eq!(hits, [NodeId::from("n0"), NodeId::from("n1")].into_iter().collect());
    }

    #[test]
    fn empty_graph() {
        let g = Graph::new();
        let idx = SpatialIndex::build(&g, None);
        assert!(idx.is_empty());
        assert!(idx.nodes_in_ball(&Ball::new(DVec3::ZERO, 5.0).unwrap()).is_empty());
    }

    #[test]
    fn ray_points() {
        let ray = Ray::new(DVec3::ZERO, DVec3::new(0.0, 0.0, -1.0)).unwrap();
        assert_eq!(point_on_ray(&ray, 2.0).unwrap(), DVec3::new(0.0, 0.0, -2.0));
        assert_eq!(point_on_ray(&ray, 0.0).unwrap(), DVec3::ZERO);
        assert_eq!(point_on_ray(&ray, -1.0), Err(SpatialError::NegativeParameter));
        let r = Ray::new(DVec3::ZERO, DVec3::new(3.0, 4.0, 0.0)).unwrap();
        assert!((r.direction.length() - 1.0).abs() <= 1e-9);
        assert_eq!(Ray::new(DVec3::ZERO, DVec3::ZERO), Err(SpatialError::DegenerateRay));
    }

    #[test]
    fn ball_radius_must_be_positive() {
        assert_eq!(Ball::new(DVec3::ZERO, 0.0), Err(SpatialError::NonPositiveRadius));
        assert_eq!(Ball::new(DVec3::ZERO, -1.0), Err(SpatialError::NonPositiveRadius));
        assert_eq!(Ball::new(DVec3::ZERO, f64::NAN), Err(SpatialError::NonPositiveRadius));
    }

    #[test]
    fn matches_linear_scan_on_500_nodes() {
        let mut rng = SplitMix64::new(11);
        let pts: Vec<DVec3> = (0..500)
            .map(|_| DVec3::new(rng.range_f64(-10.0, 10.0), rng.range_f64(-10.0, 10.0), rng.range_f64(-10.0, 10.0)))
            .collect();
        let g = graph_of(&pts);
        let idx = SpatialIndex::build(&g, None);
        for _ in 0..200 {
            let c = DVec3::new(rng.range_f64(-12.0, 12.0), rng.range_f64(-12.0, 12.0), rng.range_f64(-12.0, 12.0));
            let ball = Ball::new(c, rng.range_f64(0.01, 8.0)).unwrap();
            assert_eq!(idx.nodes_in_ball(&ball), scan(&g, &ball));
        }
    }

    #[test]
    fn rebuild_after_cell_crossing_move() {
        let mut rng = SplitMix64::new(5);
        let pts: Vec<DVec3> = (0..100)
            .map(|_| DVec3::new(rng.range_f64(0.0, 32.0), rng.range_f64(0.0, 32.0), rng.range_f64(0.0, 32.0)))
            .collect();
        let mut g = graph_of(&pts);
        let idx = SpatialIndex::build(&g, None);
        let moved = NodeId::from("n0");
        let target = g.position(&moved).unwrap() + DVec3::new(5.5, 0.0, 0.0);
        g.set_position(&moved, target).unwrap();
        let ball = Ball::new(target, 0.5).unwrap();
        assert_eq!(idx.nodes_in_ball_checked(&g, &ball), Err(SpatialError::StaleIndex));
        let idx = SpatialIndex::build(&g, None);
        let hits = idx.nodes_in_ball_checked(&g, &ball).unwrap();
        assert!(hits.contains(&moved));
        assert_eq!(hits, scan(&g, &ball));
    }

    #[test]
    fn repeated_queries_are_identical() {
        let g = graph_of(&[DVec3::ZERO, DVec3::ONE, DVec3::splat(2.0)]);
        let idx = SpatialIndex::build(&g, Some(0.5));
        let ball = Ball::new(DVec3::splat(1.0), 1.8).unwrap();
        assert_eq!(idx.nodes_in_ball(&ball), idx.nodes_in_ball(&ball));
    }
}
