//! Probe-driven navigation and deformation.
//!
//! Every active probe contributes a unit direction from its content view
//! (in front of the user) to its ball center, scaled by the controller
//! input. A node inside one or more active balls moves by the mean of
//! their scaled directions; a node outside all of them moves by the
//! inverse-distance weighted mean over every active probe. With a single
//! active probe both branches reduce to the same vector, so the whole graph
//! translates rigidly.
//!
//! The field is discontinuous where a node crosses a ball surface. That is
//! inherent to the weighting rule and is left as is.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cues::Viewpoint;
use crate::geom::DVec3;
use crate::graph::Graph;
use crate::probe::{Probe, ProbeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DeformError {
    #[error("no active probes")]
    NoActiveProbes,
    #[error("content center of probe {0} coincides with its ball center")]
    DegenerateDirection(ProbeId),
    #[error("invalid deform input: {0}")]
    InvalidInput(&'static str),
    #[error("probe {0} is not placed")]
    NotPlaced(ProbeId),
    #[error("standoff must be non-negative")]
    NegativeStandoff,
}

/// Controller axis sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeformInput {
    /// Axis value in `[-1, 1]`.
    pub u: f64,
    /// Frame duration in seconds.
    pub dt: f64,
    /// World units per second at full deflection.
    #[serde(default = "default_speed")]
    pub speed: f64,
}

fn default_speed() -> f64 {
    1.0
}

impl DeformInput {
    pub fn new(u: f64, dt: f64) -> Self {
        Self { u, dt, speed: default_speed() }
    }

    pub fn validate(&self) -> Result<(), DeformError> {
        if !(-1.0..=1.0).contains(&self.u) {
            return Err(DeformError::InvalidInput("u must be in [-1, 1]"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(DeformError::InvalidInput("dt must be positive"));
        }
        if !(self.speed > 0.0) || !self.speed.is_finite() {
            return Err(DeformError::InvalidInput("speed must be positive"));
        }
        Ok(())
    }

    fn gain(&self) -> f64 {
        self.u * self.speed * self.dt
    }
}

/// One active probe's contribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldTerm {
    pub probe: ProbeId,
    pub center: DVec3,
    pub radius: f64,
    /// Unit direction from content center to ball center.
    pub direction: DVec3,
    /// `direction` scaled by `u * speed * dt`.
    pub step: DVec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformField {
    pub terms: Vec<FieldTerm>,
}

/// Builds the field from the active placed probes, in probe-id order.
pub fn build_field<'a>(
    probes: impl IntoIterator<Item = &'a Probe>,
    input: &DeformInput,
) -> Result<DeformField, DeformError> {
    input.validate()?;
    let gain = input.gain();
    let mut terms = Vec::new();
    for probe in probes.into_iter().filter(|p| p.active && p.placed) {
        let content = probe.content.as_ref().ok_or(DeformError::NotPlaced(probe.id))?;
        let d = probe.ball.center - content.world_center;
        let len = d.length();
        if !(len > 1e-9) {
            return Err(DeformError::DegenerateDirection(probe.id));
        }
        let direction = d / len;
        terms.push(FieldTerm {
            probe: probe.id,
            center: probe.ball.center,
            radius: probe.ball.radius,
            direction,
            step: direction * gain,
        });
    }
    if terms.is_empty() {
        return Err(DeformError::NoActiveProbes);
    }
    terms.sort_by_key(|t| t.probe);
    Ok(DeformField { terms })
}

/// Displaced position of a point under the field.
pub fn displace_node(p: DVec3, field: &DeformField) -> DVec3 {
    let mut sum = DVec3::ZERO;
    let mut inside = 0usize;
    for t in &field.terms {
        if (p - t.center).length() <= t.radius {
            sum += t.step;
            inside += 1;
        }
    }
    if inside > 0 {
        return p + sum / inside as f64;
    }
    let mut weight = 0.0;
    for t in &field.terms {
        let w = 1.0 / (p - t.center).length();
        sum += t.step * w;
        weight += w;
    }
    p + sum / weight
}

/// One deformation step. Nodes and active probe centers are all displaced
/// against the field built from the pre-step state.
pub fn deform_step(
    graph: &mut Graph,
    probes: &mut BTreeMap<ProbeId, Probe>,
    input: &DeformInput,
) -> Result<DeformField, DeformError> {
    let field = build_field(probes.values(), input)?;
    graph.update_positions(|n| displace_node(n.position, &field));
    for t in &field.terms {
        let probe = probes.get_mut(&t.probe).expect("field terms come from probes");
        probe.ball.center = displace_node(t.center, &field);
    }
    Ok(field)
}

/// Moves the viewpoint to `standoff` behind the probe center along the
/// current view direction. Orientation is unchanged.
pub fn teleport_to_probe(viewpoint: &mut Viewpoint, probe: &Probe, standoff: f64) -> Result<(), DeformError> {
    if !probe.placed {
        return Err(DeformError::NotPlaced(probe.id));
    }
    if !(standoff >= 0.0) || !standoff.is_finite() {
        return Err(DeformError::NegativeStandoff);
    }
    viewpoint.position = probe.ball.center - viewpoint.view_direction() * standoff;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::test_support::placed_probe;

    fn term(id: u32, center: DVec3, radius: f64, step: DVec3) -> FieldTerm {
        FieldTerm { probe: ProbeId(id), center, radius, direction: step.normalize_or_zero(), step }
    }

    fn active_probe(id: u32, center: DVec3, content_center: DVec3) -> Probe {
        let mut p = placed_probe(id, center, 1.0);
        p.active = true;
        p.content.as_mut().unwrap().world_center = content_center;
        p
    }

    #[test]
    fn field_directions() {
        let p = active_probe(1, DVec3::new(5.0, 0.0, 0.0), DVec3::ZERO);
        let f = build_field([&p], &DeformInput::new(1.0, 1.0)).unwrap();
        assert_eq!(f.terms[0].direction, DVec3::X);
        assert_eq!(f.terms[0].step, DVec3::X);
        let f = build_field([&p], &DeformInput::new(-0.5, 1.0)).unwrap();
        assert_eq!(f.terms[0].step, DVec3::new(-0.5, 0.0, 0.0));

        let q = active_probe(2, DVec3::ZERO, DVec3::ZERO);
        assert_eq!(
            build_field([&q], &DeformInput::new(1.0, 1.0)),
            Err(DeformError::DegenerateDirection(ProbeId(2)))
        );
        let mut idle = p.clone();
        idle.active = false;
        assert_eq!(build_field([&idle], &DeformInput::new(1.0, 1.0)), Err(DeformError::NoActiveProbes));
        assert!(build_field([&p], &DeformInput::new(1.5, 1.0)).is_err());
        assert!(build_field([&p], &DeformInput::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn inside_branch_single_probe() {
        let field = DeformField { terms: vec![term(1, DVec3::ZERO, 2.0, DVec3::X)] };
        let p = DVec3::new(0.3, -0.2, 1.0);
        assert_eq!(displace_node(p, &field), p + DVec3::X);
    }

    #[test]
    fn overlapping_probes_cancel() {
        let field = DeformField {
            terms: vec![
                term(1, DVec3::ZERO, 2.0, DVec3::X),
                term(2, DVec3::X, 2.0, -DVec3::X),
            ],
        };
        let p = DVec3::new(0.5, 0.0, 0.0);
        assert_eq!(displace_node(p, &field), p);
    }

    #[test]
    fn outside_branch_inverse_distance() {
        let field = DeformField {
            terms: vec![
                term(1, DVec3::new(1.0, 0.0, 0.0), 0.5, DVec3::X),
                term(2, DVec3::new(3.0, 0.0, 0.0), 0.5, DVec3::Y),
            ],
        };
        // Weights 1 and 1/3 -> (1*(1,0,0) + 1/3*(0,1,0)) / (4/3).
        let out = displace_node(DVec3::ZERO, &field);
        assert!((out - DVec3::new(0.75, 0.25, 0.0)).length() < 1e-15);
    }

    #[test]
    fn single_probe_translates_everything() {
        let mut g = Graph::new();
        for i in 0..20 {
            let p = DVec3::new(i as f64 * 0.7 - 5.0, (i * i) as f64 * 0.1, -(i as f64));
            g.add_node(format!("n{i}").as_str().into(), p, Default::default()).unwrap();
        }
        let before: Vec<DVec3> = g.nodes().map(|n| n.position).collect();
        let mut probes = BTreeMap::new();
        probes.insert(ProbeId(1), active_probe(1, DVec3::new(0.0, 1.0, -3.0), DVec3::new(0.0, 0.0, 1.0)));
        let field = deform_step(&mut g, &mut probes, &DeformInput::new(0.8, 0.5)).unwrap();
        let step = field.terms[0].step;
        for (a, n) in before.iter().zip(g.nodes()) {
            assert!((n.position - *a - step).length() <= 1e-9);
        }
        // The probe center itself moved with the graph.
        assert!((probes[&ProbeId(1)].ball.center - DVec3::new(0.0, 1.0, -3.0) - step).length() < 1e-12);
    }

    #[test]
    fn zero_input_is_identity() {
        let mut g = Graph::new();
        g.add_node("a".into(), DVec3::new(1.0, 2.0, 3.0), Default::default()).unwrap();
        let mut probes = BTreeMap::new();
        probes.insert(ProbeId(1), active_probe(1, DVec3::new(5.0, 0.0, 0.0), DVec3::ZERO));
        probes.insert(ProbeId(2), active_probe(2, DVec3::new(-5.0, 0.0, 0.0), DVec3::ZERO));
        deform_step(&mut g, &mut probes, &DeformInput::new(0.0, 0.016)).unwrap();
        assert_eq!(g.position(&"a".into()), Some(DVec3::new(1.0, 2.0, 3.0)));
    }

    #[test]
    fn inactive_probes_stay_put() {
        let mut g = Graph::new();
        g.add_node("a".into(), DVec3::ZERO, Default::default()).unwrap();
        let mut probes = BTreeMap::new();
        probes.insert(ProbeId(1), active_probe(1, DVec3::new(5.0, 0.0, 0.0), DVec3::ZERO));
        let mut idle = active_probe(2, DVec3::new(0.0, 5.0, 0.0), DVec3::ZERO);
        idle.active = false;
        probes.insert(ProbeId(2), idle);
        deform_step(&mut g, &mut probes, &DeformInput::new(1.0, 1.0)).unwrap();
        assert_eq!(probes[&ProbeId(2)].ball.center, DVec3::new(0.0, 5.0, 0.0));
    }

    #[test]
    fn teleport() {
        let probe = placed_probe(1, DVec3::new(3.0, 0.0, -4.0), 2.0);
        let mut vp = Viewpoint::default();
        teleport_to_probe(&mut vp, &probe, 0.0).unwrap();
        assert_eq!(vp.position, probe.ball.center);
        let mut vp = Viewpoint::default();
        teleport_to_probe(&mut vp, &probe, 3.0).unwrap();
        assert!((vp.position.distance(probe.ball.center) - 3.0).abs() < 1e-12);
        assert_eq!(vp.orientation, Viewpoint::default().orientation);

        let mut unplaced = probe.clone();
        unplaced.placed = false;
        assert_eq!(teleport_to_probe(&mut vp, &unplaced, 1.0), Err(DeformError::NotPlaced(ProbeId(1))));
    }
}
