use super::*;

fn node(id: &str, x: f64, y: f64, z: f64) -> String {
    format!(r#"{{"id":"{id}","pos":[{x},{y},{z}]}}"#)
}

/// Two clusters far apart, {a, b} around x=0 and {c, d} around x=10,
/// joined by a-b and c-d.
fn two_cluster_doc() -> GraphDocument {
    let text = format!(
        r#"{{"nodes":[{},{},{},{}],"links":[{{"source":"a","target":"b"}},{{"source":"c","target":"d"}}]}}"#,
        node("a", 0.0, 0.0, -5.0),
        node("b", 0.5, 0.0, -5.0),
        node("c", 10.0, 0.0, -5.0),
        node("d", 10.5, 0.0, -5.0),
    );
    GraphDocument::parse(&text, true).unwrap()
}

struct Log {
    state: SessionState,
    log: Vec<SessionCommand>,
}

impl Log {
    fn new() -> Self {
        Self { state: SessionState::new(), log: Vec::new() }
    }

    fn run(&mut self, command: Command) -> Result<Delta, SessionError> {
        let cmd = SessionCommand::new(self.state.applied_seq + 1, command);
        let out = self.state.apply(&cmd);
        if out.is_ok() {
            self.log.push(cmd);
        }
        out
    }

    fn ok(&mut self, command: Command) -> Delta {
        let kind = command.kind();
        let d = self.run(command).unwrap_or_else(|e| panic!("{kind} failed: {e}"));
        self.state.check_invariants().unwrap();
        d
    }
}

fn place_at(log: &mut Log, center: DVec3, radius: f64) -> ProbeId {
    log.ok(Command::BeginProbe { origin: DVec3::ZERO, direction: center, t: center.length(), radius });
    log.ok(Command::PlaceProbe {});
    ProbeId(log.state.next_probe - 1)
}

fn two_probe_session() -> (Log, ProbeId, ProbeId) {
    let mut log = Log::new();
    log.ok(Command::LoadGraph { source: GraphSource::Document(two_cluster_doc()) });
    let p1 = place_at(&mut log, DVec3::new(0.25, 0.0, -5.0), 1.0);
    let p2 = place_at(&mut log, DVec3::new(10.25, 0.0, -5.0), 1.0);
    (log, p1, p2)
}

fn id(s: &str) -> NodeId {
    NodeId::new(s)
}

#[test]
fn wire_format_of_commands() {
    let line = r#"{"seq":3,"kind":"BeginProbe","payload":{"origin":[0,0,0],"direction":[0,0,-1],"t":2,"radius":0.5}}"#;
    let cmd: SessionCommand = serde_json::from_str(line).unwrap();
    assert_eq!(cmd.seq, 3);
    assert_eq!(
        cmd.command,
        Command::BeginProbe { origin: DVec3::ZERO, direction: DVec3::NEG_Z, t: 2.0, radius: 0.5 }
    );
    let back: SessionCommand = serde_json::from_str(&cmd.to_json_line()).unwrap();
    assert_eq!(back, cmd);

    let place: SessionCommand = serde_json::from_str(r#"{"seq":1,"kind":"PlaceProbe","payload":{}}"#).unwrap();
    assert_eq!(place.command, Command::PlaceProbe {});

    let deform: SessionCommand =
        serde_json::from_str(r#"{"seq":1,"kind":"DeformInput","payload":{"u":0.5,"dt":0.1}}"#).unwrap();
    assert_eq!(deform.command, Command::DeformInput(DeformInput::new(0.5, 0.1)));

    let select: SessionCommand =
        serde_json::from_str(r#"{"seq":1,"kind":"SelectNode","payload":{"node":"a","source":{"probe":2}}}"#)
            .unwrap();
    assert_eq!(select.command, Command::SelectNode { node: id("a"), source: ViewSource::Probe(ProbeId(2)) });

    assert!(serde_json::from_str::<SessionCommand>(r#"{"seq":1,"kind":"Nope","payload":{}}"#).is_err());
    assert!(serde_json::from_str::<SessionCommand>(r#"{"seq":1,"kind":"AdjustProbe","payload":{"t":1}}"#).is_err());
}

#[test]
fn parse_log_skips_blank_and_comment_lines() {
    let text = "# demo\n\n{\"seq\":1,\"kind\":\"ClearSelection\",\"payload\":{}}\n";
    let log = parse_log(text).unwrap();
    assert_eq!(log.len(), 1);
    assert!(matches!(parse_log("{oops").unwrap_err(), SessionError::InvalidPayload(_)));
}

#[test]
fn cross_probe_link_propagates() {
    let (mut log, p1, p2) = two_probe_session();
    assert!(log.state.probes[&p1].contains_member(&id("a")));
    assert!(log.state.probes[&p2].contains_member(&id("c")));

    log.ok(Command::SelectNode { node: id("a"), source: ViewSource::Probe(p1) });
    log.ok(Command::SelectNode { node: id("c"), source: ViewSource::Probe(p2) });
    let delta = log.ok(Command::CreateLink {});

    let link = Link::new(id("a"), id("c"));
    assert!(log.state.graph.has_link(&id("a"), &id("c")));
    assert!(delta.changes.contains(&Change::LinkAdd { link: link.clone() }));
    for p in [p1, p2] {
        let c = log.state.probes[&p].content.as_ref().unwrap();
        assert!(c.crossing_links.contains(&link), "probe {p} does not show the new link");
    }
    assert!(log.state.selection.is_empty());

    // Re-extraction agrees with the propagated link sets.
    let mut refreshed = log.state.clone();
    for p in [p1, p2] {
        let cmd = SessionCommand::new(refreshed.applied_seq + 1, Command::RefreshContent { probe: p });
        refreshed.apply(&cmd).unwrap();
        assert_eq!(refreshed.probes[&p].content, log.state.probes[&p].content);
    }

    let replayed = replay(&log.log).unwrap();
    assert_eq!(replayed.state_hash(), log.state.state_hash());
}

#[test]
fn link_inside_one_probe_joins_its_induced_links() {
    let (mut log, p1, _) = two_probe_session();
    log.ok(Command::RemoveLink { a: id("a"), b: id("b"), source: ViewSource::Probe(p1) });
    assert!(log.state.probes[&p1].content.as_ref().unwrap().links.is_empty());
    log.ok(Command::SelectNode { node: id("b"), source: ViewSource::Probe(p1) });
    log.ok(Command::SelectNode { node: id("a"), source: ViewSource::Global });
    log.ok(Command::CreateLink {});
    let links = &log.state.probes[&p1].content.as_ref().unwrap().links;
    assert!(links.contains(&Link::new(id("a"), id("b"))));
}

#[test]
fn remove_node_through_a_probe() {
    let (mut log, p1, _) = two_probe_session();
    let delta = log.ok(Command::RemoveNode { node: id("b"), source: ViewSource::Probe(p1) });
    assert!(!log.state.graph.contains_node(&id("b")));
    assert!(!log.state.graph.has_link(&id("a"), &id("b")));
    let c = log.state.probes[&p1].content.as_ref().unwrap();
    assert!(!c.contains(&id("b")));
    assert!(c.links.is_empty());
    assert_eq!(delta.changes[0], Change::LinkRemove { link: Link::new(id("a"), id("b")) });
    assert_eq!(delta.changes[1], Change::NodeRemove { id: id("b") });

    // Removed ids are never reused.
    let err = log
        .run(Command::CreateNode { id: id("b"), position: DVec3::ZERO, attrs: Default::default(), source: ViewSource::Global })
        .unwrap_err();
    assert_eq!(err, SessionError::RetiredId(id("b")));
}

#[test]
fn remove_node_not_in_view_is_rejected() {
    let (mut log, p1, _) = two_probe_session();
    let before = log.state.snapshot();
    let err = log.run(Command::RemoveNode { node: id("c"), source: ViewSource::Probe(p1) }).unwrap_err();
    assert_eq!(err.code(), "not_in_view");
    assert_eq!(log.state.snapshot(), before);
}

#[test]
fn create_node_in_content_view() {
    let (mut log, p1, _) = two_probe_session();
    let c = log.state.probes[&p1].content.clone().unwrap();
    let display = c.display_position(&id("a")).unwrap() + DVec3::new(0.0, 0.05, 0.0);
    log.ok(Command::CreateNode { id: id("e"), position: display, attrs: Default::default(), source: ViewSource::Probe(p1) });
    let global = log.state.graph.position(&id("e")).unwrap();
    assert!((global - c.to_global(display)).length() < 1e-12);
    assert!(log.state.probes[&p1].contains_member(&id("e")));
}

#[test]
fn out_of_order_changes_nothing() {
    let (mut log, _, _) = two_probe_session();
    let before = log.state.snapshot();
    let seq = log.state.applied_seq;
    for bad in [seq, seq + 2, 0] {
        let err = log.state.apply(&SessionCommand::new(bad, Command::ClearSelection {})).unwrap_err();
        assert_eq!(err, SessionError::OutOfOrder { expected: seq + 1, got: bad });
    }
    assert_eq!(log.state.snapshot(), before);
}

#[test]
fn failed_commands_are_atomic() {
    let (mut log, p1, _) = two_probe_session();
    let before = log.state.snapshot();
    let bad = [
        Command::CreateLink {},
        Command::AdjustProbe { t: 1.0, radius: 1.0 },
        Command::RemoveProbe { probe: ProbeId(99) },
        Command::SelectNode { node: id("zz"), source: ViewSource::Global },
        Command::RepositionProbe { probe: p1, center: DVec3::ZERO, radius: -1.0 },
        Command::DeformInput(DeformInput::new(1.0, 0.1)),
        Command::SetViewpoint { position: DVec3::ZERO, orientation: DQuat::from_xyzw(0.0, 0.0, 0.0, 2.0) },
        Command::AutoPlaceProbe { attribute: "missing".into(), objective: Objective::Max, radius: 1.0 },
        Command::CreateNode { id: id("a"), position: DVec3::ZERO, attrs: Default::default(), source: ViewSource::Global },
    ];
    for cmd in bad {
        let kind = cmd.kind();
        assert!(log.run(cmd).is_err(), "{kind} should fail");
        assert_eq!(log.state.snapshot(), before, "{kind} changed state");
    }
}

#[test]
fn selection_discipline() {
    let (mut log, p1, _) = two_probe_session();
    assert_eq!(log.run(Command::CreateLink {}).unwrap_err().code(), "selection");
    log.ok(Command::SelectNode { node: id("a"), source: ViewSource::Probe(p1) });
    assert_eq!(log.run(Command::CreateLink {}).unwrap_err().code(), "selection");
    log.ok(Command::SelectNode { node: id("a"), source: ViewSource::Global });
    assert_eq!(log.run(Command::CreateLink {}).unwrap_err().code(), "selection");
    // A third pick evicts the oldest.
    log.ok(Command::SelectNode { node: id("d"), source: ViewSource::Global });
    assert_eq!(log.state.selection.len(), 2);
    assert_eq!(log.state.selection[0].source, ViewSource::Global);
    // Existing link is rejected.
    log.ok(Command::SelectNode { node: id("c"), source: ViewSource::Global });
    assert_eq!(log.run(Command::CreateLink {}).unwrap_err().code(), "duplicate_link");
    log.ok(Command::ClearSelection {});
    assert!(log.state.selection.is_empty());
}

#[test]
fn selection_pruned_when_probe_removed() {
    let (mut log, p1, _) = two_probe_session();
    log.ok(Command::SelectNode { node: id("a"), source: ViewSource::Probe(p1) });
    log.ok(Command::RemoveProbe { probe: p1 });
    assert!(log.state.selection.is_empty());
}

#[test]
fn replay_empty_and_prefix() {
    assert_eq!(replay(&[]).unwrap(), SessionState::default());
    let (log, _, _) = two_probe_session();
    let mut live = SessionState::new();
    for (i, cmd) in log.log.iter().enumerate() {
        live.apply(cmd).unwrap();
        let prefix = replay(&log.log[..=i]).unwrap();
        assert_eq!(prefix.snapshot(), live.snapshot());
    }
    let mut gap = log.log.clone();
    gap.remove(1);
    assert_eq!(replay(&gap).unwrap_err().0, gap[1].seq);
}

#[test]
fn snapshot_round_trip() {
    let empty = SessionState::default();
    let doc = empty.snapshot();
    assert_eq!(SessionState::restore(&doc).unwrap(), empty);

    let (mut log, p1, _) = two_probe_session();
    log.ok(Command::SelectNode { node: id("a"), source: ViewSource::Probe(p1) });
    log.ok(Command::BeginProbe { origin: DVec3::ZERO, direction: DVec3::NEG_Z, t: 1.0, radius: 0.3 });
    let doc = log.state.snapshot();
    let back = SessionState::restore(&doc).unwrap();
    assert_eq!(back, log.state);
    assert_eq!(back.snapshot(), doc);

    let truncated = &doc[..doc.len() / 2];
    assert!(matches!(SessionState::restore(truncated), Err(SessionError::MalformedSnapshot(_))));
}

#[test]
fn deltas_reproduce_state() {
    let (log, _, _) = two_probe_session();
    let mut server = SessionState::new();
    let mut client = SessionState::new();
    let mut run = |cmd: &SessionCommand| {
        let d = server.apply(cmd).unwrap();
        client.apply_changes(&d.changes).unwrap();
        assert_eq!(client.snapshot(), server.snapshot(), "diverged after {}", cmd.command.kind());
    };
    for cmd in &log.log {
        run(cmd);
    }
    let extra = [
        Command::SetProbeActive { probe: ProbeId(1), active: true },
        Command::DeformInput(DeformInput::new(1.0, 0.1)),
        Command::RemoveNode { node: id("d"), source: ViewSource::Global },
        Command::TeleportToProbe { probe: ProbeId(2), standoff: 1.0 },
        Command::SetViewMode { mode: ViewMode::Exocentric },
    ];
    for (i, c) in extra.into_iter().enumerate() {
        run(&SessionCommand::new(log.log.len() as u64 + 1 + i as u64, c));
    }
}

#[test]
fn haptic_tracks_in_hand_probe() {
    let mut log = Log::new();
    log.ok(Command::LoadGraph { source: GraphSource::Document(two_cluster_doc()) });
    let d = log.ok(Command::BeginProbe { origin: DVec3::ZERO, direction: DVec3::NEG_Z, t: 1.0, radius: 0.5 });
    assert!(!log.state.haptic.active);
    assert!(!d.changes.iter().any(|c| matches!(c, Change::Haptic { .. })));
    let d = log.ok(Command::AdjustProbe { t: 5.0, radius: 0.5 });
    assert!(log.state.haptic.active);
    assert!(d.changes.contains(&Change::Haptic { haptic: HapticSignal { active: true } }));
    log.ok(Command::PlaceProbe {});
    assert!(!log.state.haptic.active);
}

#[test]
fn placing_emits_cues() {
    let (mut log, p1, _) = two_probe_session();
    let d = log.ok(Command::SetProbeActive { probe: p1, active: true });
    let tunnels: Vec<_> = d
        .presentation
        .cues
        .iter()
        .filter_map(|c| match c {
            Cue::Tunnel(t) => Some((t.probe, t.visible)),
            _ => None,
        })
        .collect();
    assert_eq!(tunnels, vec![(ProbeId(1), true), (ProbeId(2), false)]);
    assert_eq!(d.presentation.node_highlights[&id("a")].probes, vec![p1]);
    assert!(!d.presentation.node_highlights.contains_key(&id("zz")));
}

#[test]
fn view_mode_presets() {
    let (mut log, _, _) = two_probe_session();
    let (center, radius) = log.state.graph.bounding_sphere().unwrap();
    log.ok(Command::SetViewMode { mode: ViewMode::Exocentric });
    let vp = log.state.viewpoint;
    let dist = vp.position.distance(center);
    assert!((dist - radius / (EXOCENTRIC_FOV / 2.0).sin()).abs() < 1e-9);
    assert!(((center - vp.position).normalize() - vp.view_direction()).length() < 1e-9);
    log.ok(Command::SetViewMode { mode: ViewMode::Egocentric });
    assert!((log.state.viewpoint.position - center).length() < 1e-12);
}

#[test]
fn contents_follow_the_viewpoint() {
    let (mut log, p1, _) = two_probe_session();
    let before = log.state.probes[&p1].content.as_ref().unwrap().world_center;
    log.ok(Command::SetViewpoint { position: DVec3::new(1.0, 2.0, 3.0), orientation: DQuat::IDENTITY });
    let after = log.state.probes[&p1].content.as_ref().unwrap().world_center;
    assert!((after - before - DVec3::new(1.0, 2.0, 3.0)).length() < 1e-12);
}

#[test]
fn synthetic_load_and_auto_place() {
    let mut log = Log::new();
    let spec = SynthSpec { nodes: 40, links: 120, attrs: 5, seed: 3 };
    log.ok(Command::LoadGraph { source: GraphSource::Synthetic(spec) });
    assert_eq!(log.state.graph.node_count(), 40);
    assert_eq!(log.state.graph.link_count(), 120);
    log.ok(Command::RunLayout { params: LayoutParams { max_iterations: 50, ..Default::default() }, incremental: false });
    log.ok(Command::AutoPlaceProbe { attribute: "goals".into(), objective: Objective::Max, radius: 1.5 });
    let p = &log.state.probes[&ProbeId(1)];
    assert!(!p.members().unwrap().is_empty());
}

#[test]
fn error_codes_are_distinct_per_kind() {
    assert_eq!(SessionError::NoProbeInHand.code(), "no_probe_in_hand");
    assert_eq!(SessionError::from(GraphError::UnknownId(id("x"))).code(), "unknown_id");
    assert_eq!(SessionError::OutOfOrder { expected: 1, got: 2 }.code(), "out_of_order");
}
