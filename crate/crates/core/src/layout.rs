//! Deterministic 3D force-directed layout.
//!
//! An "alpha"-annealed particle simulation in the style of the d3-force
//! family: each tick adds link-spring and many-body impulses scaled by the
//! current alpha to the node velocities, shifts the layout toward the
//! origin, then damps and integrates. Many-body repulsion is approximated
//! with a Barnes–Hut octree.
//!
//! Everything is sequential and in node-id order, so identical inputs give
//! bit-identical outputs within one build.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::DVec3;
use crate::graph::{Graph, NodeId};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayoutError {
    #[error("layout state does not match the graph's node set")]
    InconsistentState,
    #[error("invalid layout parameter: {0}")]
    InvalidParams(&'static str),
}

/// Link distance at which `many_body_strength` is calibrated. Charges are
/// rescaled by `(link_distance / REFERENCE_LINK_DISTANCE)^2` so the default
/// pair (-30, 30 native units) keeps its balance at any link distance.
pub const REFERENCE_LINK_DISTANCE: f64 = 30.0;

/// Softening length for the many-body kernel.
pub const SOFTENING: f64 = 1e-3;

/// Seeding sphere radius per cube-root of node count.
pub const SEED_SCALE: f64 = 1.0;

/// Magnitude of the deterministic perturbation applied to coincident nodes.
pub const JIGGLE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutParams {
    pub seed: u64,
    pub link_distance: f64,
    /// Multiplier on the degree-normalized spring strength `1 / min(deg)`.
    pub link_strength: f64,
    /// Negative repels.
    pub many_body_strength: f64,
    pub theta: f64,
    pub alpha_start: f64,
    pub alpha_min: f64,
    pub alpha_decay: f64,
    /// Fraction of velocity retained after each tick.
    pub velocity_decay: f64,
    pub center_strength: f64,
    pub max_iterations: u32,
    /// Per-tick speed cap.
    pub max_speed: f64,
}

impl Default for LayoutParams {
    fn default() -> Self {
        Self {
            seed: 0,
            link_distance: 1.0,
            link_strength: 1.0,
            many_body_strength: -30.0,
            theta: 0.9,
            alpha_start: 1.0,
            alpha_min: 0.001,
            alpha_decay: 1.0 - 0.001f64.powf(1.0 / 300.0),
            velocity_decay: 0.6,
            center_strength: 1.0,
            max_iterations: 300,
            max_speed: 10.0,
        }
    }
}

impl LayoutParams {
    pub fn validate(&self) -> Result<(), LayoutError> {
        if !(self.theta > 0.0 && self.theta <= 1.0) && self.theta != 0.0 {
            return Err(LayoutError::InvalidParams("theta must be in (0, 1]"));
        }
        if !(self.alpha_decay > 0.0 && self.alpha_decay < 1.0) {
            return Err(LayoutError::InvalidParams("alpha_decay must be in (0, 1)"));
        }
        if !(self.alpha_min > 0.0) {
            return Err(LayoutError::InvalidParams("alpha_min must be positive"));
        }
        if !(self.link_distance > 0.0) {
            return Err(LayoutError::InvalidParams("link_distance must be positive"));
        }
        if !(self.max_speed > 0.0) {
            return Err(LayoutError::InvalidParams("max_speed must be positive"));
        }
        Ok(())
    }

    /// Charge actually applied at this link distance.
    pub fn effective_charge(&self) -> f64 {
        let s = self.link_distance / REFERENCE_LINK_DISTANCE;
        self.many_body_strength * s * s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutState {
    pub ids: Vec<NodeId>,
    pub positions: Vec<DVec3>,
    pub velocities: Vec<DVec3>,
    pub alpha: f64,
    pub rng: SplitMix64,
}

impl LayoutState {
    /// Starts from the graph's current positions (for re-layout after edits).
    pub fn from_graph(graph: &Graph, params: &LayoutParams) -> Self {
        Self {
            ids: graph.node_ids().cloned().collect(),
            positions: graph.nodes().map(|n| n.position).collect(),
            velocities: vec![DVec3::ZERO; graph.node_count()],
            alpha: params.alpha_start,
            rng: SplitMix64::new(params.seed ^ 0x6a09_e667_f3bc_c908),
        }
    }

    pub fn write_to(&self, graph: &mut Graph) -> Result<(), LayoutError> {
        if !ids_match(&self.ids, graph) {
            return Err(LayoutError::InconsistentState);
        }
        let mut it = self.positions.iter();
        graph.update_positions(|_| *it.next().expect("lengths checked"));
        Ok(())
    }
}

fn ids_match(ids: &[NodeId], graph: &Graph) -> bool {
    ids.len() == graph.node_count() && ids.iter().zip(graph.node_ids()).all(|(a, b)| a == b)
}

/// `n` points uniform in a ball of radius `SEED_SCALE * cbrt(n)`.
pub fn seed_points(n: usize, seed: u64) -> Vec<DVec3> {
    let radius = seeding_radius(n);
    let mut rng = SplitMix64::new(seed);
    (0..n)
        .map(|_| loop {
            let p = DVec3::new(
                rng.range_f64(-1.0, 1.0),
                rng.range_f64(-1.0, 1.0),
                rng.range_f64(-1.0, 1.0),
            );
            if p.length_squared() <= 1.0 {
                break p * radius;
            }
        })
        .collect()
}

pub fn seeding_radius(n: usize) -> f64 {
    SEED_SCALE * (n as f64).cbrt()
}

/// Deterministic initial state: seeded positions, zero velocities.
pub fn seed_positions(graph: &Graph, seed: u64) -> LayoutState {
    let params = LayoutParams { seed, ..LayoutParams::default() };
    let mut state = LayoutState::from_graph(graph, &params);
    state.positions = seed_points(graph.node_count(), seed);
    state
}

/// One simulation step.
pub fn tick(state: &mut LayoutState, graph: &Graph, params: &LayoutParams) -> Result<(), LayoutError> {
    if !ids_match(&state.ids, graph) {
        return Err(LayoutError::InconsistentState);
    }
    let n = state.positions.len();
    if n == 0 {
        state.alpha += (0.0 - state.alpha) * params.alpha_decay;
        return Ok(());
    }
    jiggle_coincident(&mut state.positions, &mut state.rng);

    let alpha = state.alpha;
    apply_links(state, graph, params, alpha);

    let charge = params.effective_charge();
    if charge != 0.0 {
        let forces = many_body_forces(&state.positions, charge, params.theta);
        for (v, f) in state.velocities.iter_mut().zip(&forces) {
            *v += *f * alpha;
        }
    }

    if params.center_strength != 0.0 {
        let mean = state.positions.iter().fold(DVec3::ZERO, |acc, &p| acc + p) / n as f64;
        let shift = mean * params.center_strength;
        for p in &mut state.positions {
            *p -= shift;
        }
    }

    for (p, v) in state.positions.iter_mut().zip(&mut state.velocities) {
        *v *= params.velocity_decay;
        let speed = v.length();
        if speed > params.max_speed {
            *v *= params.max_speed / speed;
        }
        *p += *v;
    }

    state.alpha += (0.0 - state.alpha) * params.alpha_decay;
    Ok(())
}

/// Spring impulses toward `link_distance`, split between endpoints by
/// degree and evaluated on the predicted positions `p + v`.
fn apply_links(state: &mut LayoutState, graph: &Graph, params: &LayoutParams, alpha: f64) {
    if graph.link_count() == 0 || params.link_strength == 0.0 {
        return;
    }
    let index: BTreeMap<&NodeId, usize> = state.ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let pairs: Vec<(usize, usize)> = graph
        .links()
        .map(|l| (index[l.source()], index[l.target()]))
        .collect();
    let mut degree = vec![0usize; state.ids.len()];
    for &(s, t) in &pairs {
        degree[s] += 1;
        degree[t] += 1;
    }
    for &(s, t) in &pairs {
        let strength = params.link_strength / degree[s].min(degree[t]) as f64;
        let bias = degree[s] as f64 / (degree[s] + degree[t]) as f64;
        let mut d = state.positions[t] + state.velocities[t] - state.positions[s] - state.velocities[s];
        let mut l = d.length();
        if l == 0.0 {
            d = jiggle_vec(&mut state.rng);
            l = d.length();
        }
        let k = (l - params.link_distance) / l * alpha * strength;
        let impulse = d * k;
        state.velocities[t] -= impulse * bias;
        state.velocities[s] += impulse * (1.0 - bias);
    }
}

fn jiggle_vec(rng: &mut SplitMix64) -> DVec3 {
    DVec3::new(
        rng.range_f64(-0.5, 0.5),
        rng.range_f64(-0.5, 0.5),
        rng.range_f64(-0.5, 0.5),
    ) * JIGGLE
}

/// Perturbs every node that shares its exact position with an earlier node.
fn jiggle_coincident(points: &mut [DVec3], rng: &mut SplitMix64) {
    let key = |p: &DVec3| (p.x.to_bits(), p.y.to_bits(), p.z.to_bits());
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| (key(&points[i]), i));
    let dupes: Vec<usize> = order
        .windows(2)
        .filter(|w| key(&points[w[0]]) == key(&points[w[1]]))
        .map(|w| w[1])
        .collect();
    for i in dupes {
        points[i] += jiggle_vec(rng);
    }
}

/// Runs from a seeded state until alpha drops below `alpha_min` or
/// `max_iterations` ticks have run, then writes positions into `graph`.
pub fn run_layout(graph: &mut Graph, params: &LayoutParams) -> Result<u32, LayoutError> {
    let state = seed_positions(graph, params.seed);
    run_from(state, graph, params)
}

/// Same as [`run_layout`] but continues from an explicit state.
pub fn run_from(mut state: LayoutState, graph: &mut Graph, params: &LayoutParams) -> Result<u32, LayoutError> {
    params.validate()?;
    state.alpha = params.alpha_start;
    let mut ticks = 0;
    while ticks < params.max_iterations && state.alpha >= params.alpha_min {
        tick(&mut state, graph, params)?;
        ticks += 1;
    }
    state.write_to(graph)?;
    Ok(ticks)
}

// ---------------------------------------------------------------------------
// Barnes–Hut

const MAX_DEPTH: u32 = 24;
const NO_CHILD: u32 = u32::MAX;

struct Cell {
    center: DVec3,
    half: f64,
    /// Mean position of the bodies in this cell.
    com: DVec3,
    count: u32,
    children: [u32; 8],
    /// Body range in `Octree::bodies` for leaves.
    first: u32,
    len: u32,
}

struct Octree {
    cells: Vec<Cell>,
    bodies: Vec<u32>,
}

impl Octree {
    fn build(points: &[DVec3]) -> Self {
        let (lo, hi) = points
            .iter()
            .fold((points[0], points[0]), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        let center = (lo + hi) * 0.5;
        let half = ((hi - lo).max_element() * 0.5).max(f64::MIN_POSITIVE);
        let mut tree = Octree { cells: Vec::new(), bodies: Vec::with_capacity(points.len()) };
        let idx: Vec<u32> = (0..points.len() as u32).collect();
        tree.build_cell(points, idx, center, half, 0);
        tree
    }

    fn build_cell(&mut self, points: &[DVec3], idx: Vec<u32>, center: DVec3, half: f64, depth: u32) -> u32 {
        let com = idx.iter().fold(DVec3::ZERO, |acc, &i| acc + points[i as usize]) / idx.len() as f64;
        let id = self.cells.len() as u32;
        self.cells.push(Cell {
            center,
            half,
            com,
            count: idx.len() as u32,
            children: [NO_CHILD; 8],
            first: 0,
            len: 0,
        });
        if idx.len() <= 1 || depth >= MAX_DEPTH {
            let cell = &mut self.cells[id as usize];
            cell.first = self.bodies.len() as u32;
            cell.len = idx.len() as u32;
            self.bodies.extend_from_slice(&idx);
            return id;
        }
        let mut buckets: [Vec<u32>; 8] = Default::default();
        for i in idx {
            let p = points[i as usize];
            let o = (p.x >= center.x) as usize | ((p.y >= center.y) as usize) << 1 | ((p.z >= center.z) as usize) << 2;
            buckets[o].push(i);
        }
        let q = half * 0.5;
        for (o, bucket) in buckets.into_iter().enumerate() {
            if bucket.is_empty() {
                continue;
            }
            let offset = DVec3::new(
                if o & 1 != 0 { q } else { -q },
                if o & 2 != 0 { q } else { -q },
                if o & 4 != 0 { q } else { -q },
            );
            let child = self.build_cell(points, bucket, center + offset, q, depth + 1);
            self.cells[id as usize].children[o] = child;
        }
        id
    }
}

/// Per-node many-body acceleration (before alpha scaling):
/// `sum_j strength * (p_j - p_i) / (|p_j - p_i|^2 + SOFTENING^2)`.
///
/// A cell not containing the target is summarized by its centroid when
/// `width / distance < theta`; with `theta = 0` every pair is evaluated.
pub fn many_body_forces(points: &[DVec3], strength: f64, theta: f64) -> Vec<DVec3> {
    if points.is_empty() {
        return Vec::new();
    }
    let tree = Octree::build(points);
    let theta2 = theta * theta;
    let eps2 = SOFTENING * SOFTENING;
    let mut stack = Vec::with_capacity(64);
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let mut f = DVec3::ZERO;
            stack.clear();
            stack.push(0u32);
            while let Some(c) = stack.pop() {
                let cell = &tree.cells[c as usize];
                let d = cell.com - p;
                let l = d.length_squared();
                let width = cell.half * 2.0;
                let contains = (p - cell.center).abs().max_element() <= cell.half;
                if !contains && width * width < theta2 * l {
                    f += d * (strength * cell.count as f64 / (l + eps2));
                    continue;
                }
                if cell.len > 0 || cell.children == [NO_CHILD; 8] {
                    for &j in &tree.bodies[cell.first as usize..(cell.first + cell.len) as usize] {
                        if j as usize == i {
                            continue;
                        }
                        let d = points[j as usize] - p;
                        f += d * (strength / (d.length_squared() + eps2));
                    }
                    continue;
                }
                for &child in cell.children.iter().rev() {
                    if child != NO_CHILD {
                        stack.push(child);
                    }
                }
            }
            f
        })
        .collect()
}
