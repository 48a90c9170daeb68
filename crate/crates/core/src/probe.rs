//! Probe lifecycle: placement along a pointing ray, scaling, repositioning,
//! activation, and extraction of the probe content (the induced subgraph of
//! the nodes inside the ball) into a user-anchored focus view.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cues::Viewpoint;
use crate::geom::{is_finite, quat_is_unit, DQuat, DVec3};
use crate::graph::{AttrValue, Graph, GraphError, Link, NodeId};
use crate::spatial::{Ball, Ray, SpatialError, SpatialIndex};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error("ray parameter must be non-negative")]
    NegativeParameter,
    #[error("probe radius must be positive")]
    NonPositiveRadius,
    #[error("probe {0} is not placed")]
    NotPlaced(ProbeId),
    #[error("probe {0} is already placed")]
    AlreadyPlaced(ProbeId),
    #[error("no node carries numeric attribute `{0}`")]
    UnknownAttribute(String),
    #[error("invalid content transform: {0}")]
    InvalidTransform(&'static str),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbeId(pub u32);

impl fmt::Display for ProbeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Color(pub [u8; 3]);

/// Placement-order color cycle.
pub const PALETTE: [Color; 8] = [
    Color([228, 26, 28]),
    Color([55, 126, 184]),
    Color([77, 175, 74]),
    Color([152, 78, 163]),
    Color([255, 127, 0]),
    Color([255, 217, 47]),
    Color([166, 86, 40]),
    Color([247, 129, 191]),
];

pub fn palette_color(index: u32) -> Color {
    PALETTE[index as usize % PALETTE.len()]
}

/// Focus-view layout constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContentParams {
    /// Radius of the sphere the content is scaled into.
    pub display_radius: f64,
    /// Distance in front of the viewpoint.
    pub anchor_distance: f64,
    /// Render-size factor for member nodes in the global graph.
    pub highlight_scale: f64,
}

impl Default for ContentParams {
    fn default() -> Self {
        Self { display_radius: 0.3, anchor_distance: 0.6, highlight_scale: 1.5 }
    }
}

/// Scaled copy of a probe's enclosed subgraph, positioned relative to the
/// user.
///
/// Display coordinates are a similarity transform of the member positions
/// captured at extraction: `world_center + rotation * (scale * (p - capture_center))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentView {
    pub probe: ProbeId,
    /// Default placement in viewpoint-local coordinates.
    pub anchor: DVec3,
    /// User displacement in viewpoint-local coordinates.
    pub user_offset: DVec3,
    pub rotation: DQuat,
    pub scale: f64,
    pub display_radius: f64,
    pub world_center: DVec3,
    /// Probe ball center at extraction.
    pub capture_center: DVec3,
    /// Frozen membership with positions captured at extraction.
    pub members: BTreeMap<NodeId, DVec3>,
    /// Links with both endpoints among the members.
    pub links: BTreeSet<Link>,
    /// Links leaving the content (exactly one endpoint among the members).
    pub crossing_links: BTreeSet<Link>,
}

impl ContentView {
    pub fn member_ids(&self) -> impl Iterator<Item = &NodeId> + '_ {
        self.members.keys()
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.members.contains_key(id)
    }

    pub fn to_display(&self, global: DVec3) -> DVec3 {
        self.world_center + self.rotation * ((global - self.capture_center) * self.scale)
    }

    /// Inverse of [`to_display`](Self::to_display).
    pub fn to_global(&self, display: DVec3) -> DVec3 {
        self.capture_center + self.rotation.inverse() * ((display - self.world_center) / self.scale)
    }

    pub fn display_position(&self, id: &NodeId) -> Option<DVec3> {
        self.members.get(id).map(|&p| self.to_display(p))
    }

    pub fn follow(&mut self, viewpoint: &Viewpoint) {
        self.world_center = viewpoint.to_world(self.anchor + self.user_offset);
    }

    /// Drops members no longer in the graph and recomputes link sets
    /// against the (otherwise frozen) membership.
    pub fn sync_links(&mut self, graph: &Graph) {
        self.members.retain(|id, _| graph.contains_node(id));
        let ids: BTreeSet<NodeId> = self.members.keys().cloned().collect();
        self.links = graph.links_within(&ids);
        self.crossing_links = graph.links_crossing(&ids);
    }

    pub fn check(&self) -> Result<(), ProbeError> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(ProbeError::InvalidTransform("scale must be positive"));
        }
        if !is_finite(self.world_center) {
            return Err(ProbeError::InvalidTransform("world center must be finite"));
        }
        if !quat_is_unit(self.rotation, 1e-9) {
            return Err(ProbeError::InvalidTransform("rotation must be unit-norm"));
        }
        Ok(())
    }
}

/// Vibration flag: on while an unplaced probe encloses at least one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HapticSignal {
    pub active: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub id: ProbeId,
    pub ball: Ball,
    pub color: Color,
    pub active: bool,
    pub placed: bool,
    /// Pointing ray while the probe is in hand.
    pub ray: Option<Ray>,
    pub ray_t: f64,
    pub content: Option<ContentView>,
}

impl Probe {
    pub fn members(&self) -> Option<&BTreeMap<NodeId, DVec3>> {
        self.content.as_ref().map(|c| &c.members)
    }

    pub fn contains_member(&self, id: &NodeId) -> bool {
        self.content.as_ref().is_some_and(|c| c.contains(id))
    }
}

fn check_t_r(t: f64, r: f64) -> Result<(), ProbeError> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(ProbeError::NegativeParameter);
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(ProbeError::NonPositiveRadius);
    }
    Ok(())
}

/// Starts an unplaced probe at parameter `t` along `ray`.
pub fn begin_probe(id: ProbeId, color: Color, ray: Ray, t: f64, r: f64) -> Result<Probe, ProbeError> {
    check_t_r(t, r)?;
    let center = ray.point_at(t)?;
    Ok(Probe {
        id,
        ball: Ball::new(center, r)?,
        color,
        active: false,
        placed: false,
        ray: Some(ray),
        ray_t: t,
        content: None,
    })
}

/// Moves the in-hand probe along its ray and rescales it.
pub fn adjust_probe(probe: &mut Probe, t: f64, r: f64) -> Result<(), ProbeError> {
    if probe.placed {
        return Err(ProbeError::AlreadyPlaced(probe.id));
    }
    check_t_r(t, r)?;
    let ray = probe.ray.ok_or(ProbeError::NotPlaced(probe.id))?;
    probe.ball = Ball::new(ray.point_at(t)?, r)?;
    probe.ray_t = t;
    Ok(())
}

pub fn haptic_signal(in_hand: Option<&Probe>, index: &SpatialIndex) -> HapticSignal {
    HapticSignal {
        active: in_hand.is_some_and(|p| !p.placed && index.any_in_ball(&p.ball)),
    }
}

fn extract(
    probe: &Probe,
    graph: &Graph,
    index: &SpatialIndex,
    viewpoint: &Viewpoint,
    params: &ContentParams,
    previous: Option<&ContentView>,
) -> Result<ContentView, ProbeError> {
    let ids = index.nodes_in_ball_checked(graph, &probe.ball)?;
    let sub = graph.induced_subgraph(&ids)?;
    let members = ids
        .iter()
        .map(|id| (id.clone(), graph.position(id).expect("indexed nodes exist")))
        .collect();
    let (anchor, user_offset, rotation) = match previous {
        Some(c) => (c.anchor, c.user_offset, c.rotation),
        None => (DVec3::new(0.0, 0.0, -params.anchor_distance), DVec3::ZERO, DQuat::IDENTITY),
    };
    let mut content = ContentView {
        probe: probe.id,
        anchor,
        user_offset,
        rotation,
        scale: params.display_radius / probe.ball.radius,
        display_radius: params.display_radius,
        world_center: DVec3::ZERO,
        capture_center: probe.ball.center,
        members,
        links: sub.links,
        crossing_links: graph.links_crossing(&sub.nodes),
    };
    content.follow(viewpoint);
    Ok(content)
}

/// Fixes the probe in place and extracts its content.
pub fn place_probe(
    probe: &mut Probe,
    graph: &Graph,
    index: &SpatialIndex,
    viewpoint: &Viewpoint,
    params: &ContentParams,
) -> Result<(), ProbeError> {
    if probe.placed {
        return Err(ProbeError::AlreadyPlaced(probe.id));
    }
    let content = extract(probe, graph, index, viewpoint, params, None)?;
    probe.content = Some(content);
    probe.placed = true;
    probe.ray = None;
    Ok(())
}

/// Replaces the ball of a placed probe and re-extracts its content. The
/// view's user offset and rotation carry over.
pub fn reposition_probe(
    probe: &mut Probe,
    new_ball: Ball,
    graph: &Graph,
    index: &SpatialIndex,
    viewpoint: &Viewpoint,
    params: &ContentParams,
) -> Result<(), ProbeError> {
    if !probe.placed {
        return Err(ProbeError::NotPlaced(probe.id));
    }
    let ball = Ball::new(new_ball.center, new_ball.radius).map_err(|e| match e {
        SpatialError::NonPositiveRadius => ProbeError::NonPositiveRadius,
        other => other.into(),
    })?;
    let mut moved = probe.clone();
    moved.ball = ball;
    let content = extract(&moved, graph, index, viewpoint, params, probe.content.as_ref())?;
    probe.ball = ball;
    probe.content = Some(content);
    Ok(())
}

/// Re-evaluates membership from current positions.
pub fn refresh_content(
    probe: &mut Probe,
    graph: &Graph,
    index: &SpatialIndex,
    viewpoint: &Viewpoint,
    params: &ContentParams,
) -> Result<(), ProbeError> {
    if !probe.placed {
        return Err(ProbeError::NotPlaced(probe.id));
    }
    let content = extract(probe, graph, index, viewpoint, params, probe.content.as_ref())?;
    probe.content = Some(content);
    Ok(())
}

pub fn set_probe_active(probe: &mut Probe, active: bool) -> Result<(), ProbeError> {
    if !probe.placed {
        return Err(ProbeError::NotPlaced(probe.id));
    }
    probe.active = active;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Max,
    Min,
}

/// Node holding the extremal numeric value of `attribute`; ties go to the
/// smallest id.
pub fn extremal_node<'g>(graph: &'g Graph, attribute: &str, objective: Objective) -> Option<&'g NodeId> {
    let mut best: Option<(&NodeId, f64)> = None;
    for node in graph.nodes() {
        let Some(x) = node.attributes.get(attribute).and_then(AttrValue::as_f64) else {
            continue;
        };
        let better = match best {
            None => true,
            Some((_, b)) => match objective {
                Objective::Max => x > b,
                Objective::Min => x < b,
            },
        };
        if better {
            best = Some((&node.id, x));
        }
    }
    best.map(|(id, _)| id)
}

/// Places a probe of radius `r` centered on the extremal node for
/// `attribute`.
#[allow(clippy::too_many_arguments)]
pub fn auto_place_probe(
    id: ProbeId,
    color: Color,
    graph: &Graph,
    index: &SpatialIndex,
    attribute: &str,
    objective: Objective,
    r: f64,
    viewpoint: &Viewpoint,
    params: &ContentParams,
) -> Result<Probe, ProbeError> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(ProbeError::NonPositiveRadius);
    }
    let target = extremal_node(graph, attribute, objective)
        .ok_or_else(|| ProbeError::UnknownAttribute(attribute.to_owned()))?;
    let center = graph.position(target).expect("node exists");
    let mut probe = Probe {
        id,
        ball: Ball::new(center, r)?,
        color,
        active: false,
        placed: false,
        ray: None,
        ray_t: 0.0,
        content: None,
    };
    place_probe(&mut probe, graph, index, viewpoint, params)?;
    Ok(probe)
}
