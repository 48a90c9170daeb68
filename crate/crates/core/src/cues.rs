//! Viewpoint model and the visual cues that keep each focus view tied to
//! its probe: a directional cone near the view axis and a tunnel (truncated
//! cone) from the content view to the probe sphere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{angle_between, quat_is_unit, rotate_about, DQuat, DVec3, FORWARD, UP};
use crate::probe::{Color, ContentView, Probe, ProbeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CueError {
    #[error("viewpoint coincides with the probe center")]
    DegenerateView,
    #[error("content center coincides with the probe center")]
    DegenerateDirection,
    #[error("probe is not placed")]
    NotPlaced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMode {
    /// Camera immersed within the graph.
    #[default]
    Egocentric,
    /// Camera observing the graph from outside.
    Exocentric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewpoint {
    pub position: DVec3,
    pub orientation: DQuat,
    #[serde(default)]
    pub mode: ViewMode,
}

impl Default for Viewpoint {
    fn default() -> Self {
        Self { position: DVec3::ZERO, orientation: DQuat::IDENTITY, mode: ViewMode::Egocentric }
    }
}

impl Viewpoint {
    pub fn new(position: DVec3, orientation: DQuat) -> Self {
        Self { position, orientation, mode: ViewMode::Egocentric }
    }

    /// Unit view direction (local -Z).
    pub fn view_direction(&self) -> DVec3 {
        (self.orientation * FORWARD).normalize()
    }

    pub fn up(&self) -> DVec3 {
        (self.orientation * UP).normalize()
    }

    pub fn is_valid(&self) -> bool {
        crate::geom::is_finite(self.position) && quat_is_unit(self.orientation, 1e-9)
    }

    /// Maps a point from viewpoint-local to world coordinates.
    pub fn to_world(&self, local: DVec3) -> DVec3 {
        self.position + self.orientation * local
    }
}

/// Tunable cue constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CueParams {
    /// Cones show only when the probe is more than this far off-axis.
    pub alpha_threshold: f64,
    /// Fixed rotation of the view direction toward the probe.
    pub cone_rotation: f64,
    /// Distance from the eye to the cone apex.
    pub cone_distance: f64,
    /// Distance at which opacity has halved.
    pub opacity_reference: f64,
    pub opacity_floor: f64,
}

impl Default for CueParams {
    fn default() -> Self {
        Self {
            alpha_threshold: 30f64.to_radians(),
            cone_rotation: 20f64.to_radians(),
            cone_distance: 0.5,
            opacity_reference: 10.0,
            opacity_floor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeCue {
    pub probe: ProbeId,
    pub visible: bool,
    pub apex: DVec3,
    /// Unit axis from the apex toward the probe center.
    pub axis: DVec3,
    pub opacity: f64,
    pub color: Color,
    /// Angle between view direction and the direction to the probe.
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunnelCue {
    pub probe: ProbeId,
    pub visible: bool,
    /// On the content display sphere.
    pub start: DVec3,
    /// On the probe ball surface.
    pub end: DVec3,
    pub start_radius: f64,
    pub end_radius: f64,
    pub color: Color,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cue", rename_all = "snake_case")]
pub enum Cue {
    Cone(ConeCue),
    Tunnel(TunnelCue),
}

/// Opacity for a probe at `distance`: `1 / (1 + d / d_ref)`, floored.
pub fn cone_opacity(distance: f64, params: &CueParams) -> f64 {
    (1.0 / (1.0 + distance / params.opacity_reference)).max(params.opacity_floor)
}

pub fn compute_cone(viewpoint: &Viewpoint, probe: &Probe, params: &CueParams) -> Result<ConeCue, CueError> {
    if !probe.placed {
        return Err(CueError::NotPlaced);
    }
    let center = probe.ball.center;
    let w = center - viewpoint.position;
    let dist = w.length();
    if !(dist > 0.0) {
        return Err(CueError::DegenerateView);
    }
    let v = viewpoint.view_direction();
    let alpha = angle_between(v, w);
    let visible = alpha > params.alpha_threshold;

    // Rotation plane spanned by v and w; when they are (anti)parallel fall
    // back to the plane containing the viewpoint's up vector.
    let mut n = v.cross(w);
    if n.length() <= 1e-12 * dist {
        n = v.cross(viewpoint.up());
    }
    let n = n.normalize();
    let placement = rotate_about(v, n, params.cone_rotation);
    let apex = viewpoint.position + placement * params.cone_distance;
    let to_probe = center - apex;
    let axis = if to_probe.length() > 0.0 { to_probe.normalize() } else { w / dist };

    Ok(ConeCue {
        probe: probe.id,
        visible,
        apex,
        axis,
        opacity: cone_opacity(dist, params),
        color: probe.color,
        angle: alpha,
    })
}

pub fn compute_tunnel(probe: &Probe, content: &ContentView) -> Result<TunnelCue, CueError> {
    if !probe.placed {
        return Err(CueError::NotPlaced);
    }
    let from = content.world_center;
    let to = probe.ball.center;
    let d = to - from;
    let len = d.length();
    if !(len > 0.0) {
        return Err(CueError::DegenerateDirection);
    }
    let dir = d / len;
    Ok(TunnelCue {
        probe: probe.id,
        visible: probe.active,
        start: from + dir * content.display_radius,
        end: to - dir * probe.ball.radius,
        start_radius: content.display_radius,
        end_radius: probe.ball.radius,
        color: probe.color,
    })
}

/// One cone and one tunnel per placed probe, ordered by probe id (cone
/// first). Degenerate geometry yields a hidden cue rather than an error.
pub fn cue_set<'a>(
    viewpoint: &Viewpoint,
    probes: impl IntoIterator<Item = &'a Probe>,
    params: &CueParams,
) -> Vec<Cue> {
    let mut placed: Vec<&Probe> = probes.into_iter().filter(|p| p.placed).collect();
    placed.sort_by_key(|p| p.id);
    let mut out = Vec::with_capacity(placed.len() * 2);
    for probe in placed {
        let cone = compute_cone(viewpoint, probe, params).unwrap_or(ConeCue {
            probe: probe.id,
            visible: false,
            apex: viewpoint.position,
            axis: DVec3::ZERO,
            opacity: 1.0,
            color: probe.color,
            angle: 0.0,
        });
        out.push(Cue::Cone(cone));
        let content = probe.content.as_ref().expect("placed probes have content");
        let tunnel = compute_tunnel(probe, content).unwrap_or(TunnelCue {
            probe: probe.id,
            visible: false,
            start: content.world_center,
            end: probe.ball.center,
            start_radius: content.display_radius,
            end_radius: probe.ball.radius,
            color: probe.color,
        });
        out.push(Cue::Tunnel(tunnel));
    }
    out
}
