//! Event-sourced interaction session.
//!
//! A session is the fold of a command log over [`SessionState::default`].
//! Commands are applied strictly in sequence order; a command either
//! succeeds and yields a [`Delta`] describing every changed entity, or
//! fails and leaves the state untouched. Edits made through a probe's
//! content view act on the single global graph.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical;
use crate::cues::{cue_set, Cue, CueParams, ViewMode, Viewpoint};
use crate::deform::{self, DeformError, DeformInput};
use crate::geom::{is_finite, quat_is_unit, DQuat, DVec3};
use crate::graph::{AttrValue, Graph, GraphDocument, GraphError, Link, Node, NodeId};
use crate::layout::{self, LayoutError, LayoutParams, LayoutState};
use crate::probe::{self, palette_color, Color, ContentParams, HapticSignal, Objective, Probe, ProbeError, ProbeId};
use crate::spatial::{Ball, Ray, SpatialError, SpatialIndex};
use crate::synth::{self, SynthError, SynthSpec};

/// Vertical field of view used to frame the graph in the exocentric preset.
pub const EXOCENTRIC_FOV: f64 = std::f64::consts::FRAC_PI_3;

/// Quaternion inputs within this distance of unit length are normalized;
/// anything further off is rejected.
const QUAT_INPUT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("command seq {got} out of order (expected {expected})")]
    OutOfOrder { expected: u64, got: u64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Deform(#[from] DeformError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("no probe is being positioned")]
    NoProbeInHand,
    #[error("unknown probe {0}")]
    UnknownProbe(ProbeId),
    #[error("node `{node}` is not shown by probe {probe}")]
    NotInView { node: NodeId, probe: ProbeId },
    #[error("node id `{0}` was removed earlier in this session")]
    RetiredId(NodeId),
    #[error("selection: {0}")]
    Selection(&'static str),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),
}

impl SessionError {
    /// Stable machine-readable code for the wire protocol.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::OutOfOrder { .. } => "out_of_order",
            SessionError::Graph(e) => match e {
                GraphError::DuplicateId(_) => "duplicate_id",
                GraphError::NonFiniteCoordinate(_) => "non_finite_coordinate",
                GraphError::UnknownId(_) => "unknown_id",
                GraphError::SelfLoop(_) => "self_loop",
                GraphError::DuplicateLink(_) => "duplicate_link",
                GraphError::UnknownLink(_) => "unknown_link",
                _ => "bad_graph",
            },
            SessionError::Probe(e) => match e {
                ProbeError::NegativeParameter => "negative_parameter",
                ProbeError::NonPositiveRadius => "non_positive_radius",
                ProbeError::NotPlaced(_) => "not_placed",
                ProbeError::AlreadyPlaced(_) => "already_placed",
                ProbeError::UnknownAttribute(_) => "unknown_attribute",
                _ => "probe_error",
            },
            SessionError::Deform(e) => match e {
                DeformError::NoActiveProbes => "no_active_probes",
                DeformError::DegenerateDirection(_) => "degenerate_direction",
                DeformError::NotPlaced(_) => "not_placed",
                _ => "bad_deform_input",
            },
            SessionError::Layout(_) => "layout_error",
            SessionError::Spatial(_) => "spatial_error",
            SessionError::Synth(_) => "synth_error",
            SessionError::NoProbeInHand => "no_probe_in_hand",
            SessionError::UnknownProbe(_) => "unknown_probe",
            SessionError::NotInView { .. } => "not_in_view",
            SessionError::RetiredId(_) => "retired_id",
            SessionError::Selection(_) => "selection",
            SessionError::InvalidPayload(_) => "invalid_payload",
            SessionError::MalformedSnapshot(_) => "malformed_snapshot",
        }
    }
}

/// Where a node was picked: the full-scale graph or a probe's content view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSource {
    #[default]
    Global,
    Probe(ProbeId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeRef {
    pub node: NodeId,
    #[serde(default)]
    pub source: ViewSource,
}

/// Graph to load: an inline document or a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSource {
    Document(GraphDocument),
    Synthetic(SynthSpec),
}

/// Command payloads, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum Command {
    LoadGraph {
        source: GraphSource,
    },
    RunLayout {
        #[serde(default)]
        params: LayoutParams,
        /// Continue from current positions instead of reseeding.
        #[serde(default)]
        incremental: bool,
    },
    SetViewpoint {
        position: DVec3,
        orientation: DQuat,
    },
    SetViewMode {
        mode: ViewMode,
    },
    BeginProbe {
        origin: DVec3,
        direction: DVec3,
        t: f64,
        radius: f64,
    },
    AdjustProbe {
        t: f64,
        radius: f64,
    },
    PlaceProbe {},
    AutoPlaceProbe {
        attribute: String,
        objective: Objective,
        radius: f64,
    },
    RepositionProbe {
        probe: ProbeId,
        center: DVec3,
        radius: f64,
    },
    RemoveProbe {
        probe: ProbeId,
    },
    SetProbeActive {
        probe: ProbeId,
        active: bool,
    },
    MoveContentView {
        probe: ProbeId,
        offset: DVec3,
    },
    RotateContentView {
        probe: ProbeId,
        rotation: DQuat,
    },
    SelectNode {
        node: NodeId,
        #[serde(default)]
        source: ViewSource,
    },
    ClearSelection {},
    CreateLink {},
    CreateNode {
        id: NodeId,
        /// Global coordinates, or display coordinates when created in a
        /// content view.
        position: DVec3,
        #[serde(default)]
        attrs: BTreeMap<String, AttrValue>,
        #[serde(default)]
        source: ViewSource,
    },
    RemoveNode {
        node: NodeId,
        #[serde(default)]
        source: ViewSource,
    },
    RemoveLink {
        a: NodeId,
        b: NodeId,
        #[serde(default)]
        source: ViewSource,
    },
    DeformInput(DeformInput),
    TeleportToProbe {
        probe: ProbeId,
        #[serde(default)]
        standoff: f64,
    },
    RefreshContent {
        probe: ProbeId,
    },
}

impl Command {
    pub fn kind(&self) -> &'static str {
        match self {
            Command::LoadGraph { .. } => "LoadGraph",
            Command::RunLayout { .. } => "RunLayout",
            Command::SetViewpoint { .. } => "SetViewpoint",
            Command::SetViewMode { .. } => "SetViewMode",
            Command::BeginProbe { .. } => "BeginProbe",
            Command::AdjustProbe { .. } => "AdjustProbe",
            Command::PlaceProbe {} => "PlaceProbe",
            Command::AutoPlaceProbe { .. } => "AutoPlaceProbe",
            Command::RepositionProbe { .. } => "RepositionProbe",
            Command::RemoveProbe { .. } => "RemoveProbe",
            Command::SetProbeActive { .. } => "SetProbeActive",
            Command::MoveContentView { .. } => "MoveContentView",
            Command::RotateContentView { .. } => "RotateContentView",
            Command::SelectNode { .. } => "SelectNode",
            Command::ClearSelection {} => "ClearSelection",
            Command::CreateLink {} => "CreateLink",
            Command::CreateNode { .. } => "CreateNode",
            Command::RemoveNode { .. } => "RemoveNode",
            Command::RemoveLink { .. } => "RemoveLink",
            Command::DeformInput(_) => "DeformInput",
            Command::TeleportToProbe { .. } => "TeleportToProbe",
            Command::RefreshContent { .. } => "RefreshContent",
        }
    }

    fn edits_graph_structure(&self) -> bool {
        matches!(
            self,
            Command::LoadGraph { .. }
                | Command::CreateLink {}
                | Command::CreateNode { .. }
                | Command::RemoveNode { .. }
                | Command::RemoveLink { .. }
        )
    }
}

/// One log entry: `{"seq": 1, "kind": "PlaceProbe", "payload": {}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCommand {
    pub seq: u64,
    #[serde(flatten)]
    pub command: Command,
}

impl SessionCommand {
    pub fn new(seq: u64, command: Command) -> Self {
        Self { seq, command }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("commands always serialize")
    }
}

/// Parses a JSON-lines log. Blank lines and lines starting with `#` are
/// skipped.
pub fn parse_log(text: &str) -> Result<Vec<SessionCommand>, SessionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SessionError::InvalidPayload(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

/// Entity-level change. Applying a delta's changes in order to the prior
/// state reproduces the next state exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Change {
    LinkRemove { link: Link },
    NodeRemove { id: NodeId },
    NodeUpsert { node: Node },
    LinkAdd { link: Link },
    ProbeRemove { id: ProbeId },
    ProbeUpsert { probe: Box<Probe> },
    InHand { probe: Option<Box<Probe>> },
    Viewpoint { viewpoint: Viewpoint },
    Selection { selection: Vec<NodeRef> },
    Haptic { haptic: HapticSignal },
    /// Full set of retired ids.
    Retired { ids: Vec<NodeId> },
    Counters { applied_seq: u64, next_probe: u32, palette_cursor: u32 },
}

/// Render hint for a node or link enclosed by one or more probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Highlight {
    /// Enclosing probes in id order; the first one sets the color.
    pub probes: Vec<ProbeId>,
    pub color: Color,
    pub scale: f64,
}

/// Derived presentation data shipped with every delta so clients stay thin.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Presentation {
    pub cues: Vec<Cue>,
    pub node_highlights: BTreeMap<NodeId, Highlight>,
    pub link_highlights: Vec<(Link, Highlight)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub seq: u64,
    pub changes: Vec<Change>,
    pub presentation: Presentation,
}

/// Cached spatial index; never part of the state's value.
#[derive(Debug, Clone, Default)]
struct IndexCache(Option<SpatialIndex>);

impl IndexCache {
    fn get(&mut self, graph: &Graph) -> &SpatialIndex {
        let stale = self.0.as_ref().is_none_or(|i| i.revision() != graph.revision());
        if stale {
            self.0 = Some(SpatialIndex::build(graph, None));
        }
        self.0.as_ref().expect("just built")
    }
}

impl PartialEq for IndexCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub graph: Graph,
    pub probes: BTreeMap<ProbeId, Probe>,
    /// Probe currently being positioned along the pointing ray.
    pub in_hand: Option<Probe>,
    pub viewpoint: Viewpoint,
    /// Up to two picked nodes, oldest first.
    pub selection: Vec<NodeRef>,
    pub haptic: HapticSignal,
    pub cue_params: CueParams,
    pub content_params: ContentParams,
    pub applied_seq: u64,
    pub next_probe: u32,
    pub palette_cursor: u32,
    /// Node ids removed during the session; they may not be reused.
    pub retired: BTreeSet<NodeId>,
    #[serde(skip)]
    index: IndexCache,
}

impl Default for SessionState {
    fn default() -> Self {
        Self {
            graph: Graph::new(),
            probes: BTreeMap::new(),
            in_hand: None,
            viewpoint: Viewpoint::default(),
            selection: Vec::new(),
            haptic: HapticSignal::default(),
            cue_params: CueParams::default(),
            content_params: ContentParams::default(),
            applied_seq: 0,
            next_probe: 1,
            palette_cursor: 0,
            retired: BTreeSet::new(),
            index: IndexCache::default(),
        }
    }
}

impl SessionState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Empty session with a preloaded graph.
    pub fn with_graph(graph: Graph) -> Self {
        Self { graph, ..Self::default() }
    }

    /// Spatial index over current positions, rebuilt when the graph changed.
    pub fn index(&mut self) -> &SpatialIndex {
        self.index.get(&self.graph)
    }

    fn probe_mut(&mut self, id: ProbeId) -> Result<&mut Probe, SessionError> {
        self.probes.get_mut(&id).ok_or(SessionError::UnknownProbe(id))
    }

    fn content_of(&self, id: ProbeId) -> Result<&crate::probe::ContentView, SessionError> {
        let probe = self.probes.get(&id).ok_or(SessionError::UnknownProbe(id))?;
        probe.content.as_ref().ok_or(SessionError::Probe(ProbeError::NotPlaced(id)))
    }

    fn allocate_probe(&mut self) -> (ProbeId, Color) {
        let id = ProbeId(self.next_probe);
        let color = palette_color(self.palette_cursor);
        self.next_probe += 1;
        self.palette_cursor += 1;
        (id, color)
    }

    /// Checks that `node` can be addressed from `source`.
    fn check_visible(&self, node: &NodeId, source: ViewSource) -> Result<(), SessionError> {
        match source {
            ViewSource::Global => {
                if !self.graph.contains_node(node) {
                    return Err(GraphError::UnknownId(node.clone()).into());
                }
            }
            ViewSource::Probe(pid) => {
                if !self.content_of(pid)?.contains(node) {
                    return Err(SessionError::NotInView { node: node.clone(), probe: pid });
                }
            }
        }
        Ok(())
    }

    fn follow_viewpoint(&mut self) {
        let vp = self.viewpoint;
        for probe in self.probes.values_mut() {
            if let Some(c) = probe.content.as_mut() {
                c.follow(&vp);
            }
        }
    }

    /// Applies one command. On error the state is unchanged.
    pub fn apply(&mut self, cmd: &SessionCommand) -> Result<Delta, SessionError> {
        let expected = self.applied_seq + 1;
        if cmd.seq != expected {
            return Err(SessionError::OutOfOrder { expected, got: cmd.seq });
        }
        let mut next = self.clone();
        next.execute(&cmd.command)?;
        if cmd.command.edits_graph_structure() {
            let graph = &next.graph;
            for probe in next.probes.values_mut() {
                if let Some(c) = probe.content.as_mut() {
                    c.sync_links(graph);
                }
            }
        }
        next.prune_selection();
        next.update_haptic();
        next.applied_seq = cmd.seq;
        let changes = diff(self, &next);
        *self = next;
        Ok(Delta { seq: cmd.seq, changes, presentation: self.presentation() })
    }

    fn prune_selection(&mut self) {
        let keep: Vec<NodeRef> = self
            .selection
            .iter()
            .filter(|r| self.check_visible(&r.node, r.source).is_ok())
            .cloned()
            .collect();
        self.selection = keep;
    }

    fn update_haptic(&mut self) {
        let active = match &self.in_hand {
            Some(p) => {
                let ball = p.ball;
                self.index().any_in_ball(&ball)
            }
            None => false,
        };
        self.haptic = HapticSignal { active };
    }

    fn execute(&mut self, command: &Command) -> Result<(), SessionError> {
        match command {
            Command::LoadGraph { source } => {
                let doc = match source {
                    GraphSource::Document(doc) => doc.clone(),
                    GraphSource::Synthetic(spec) => synth::generate(spec)?,
                };
                self.graph = doc.into_graph()?;
                self.probes.clear();
                self.in_hand = None;
                self.selection.clear();
                self.retired.clear();
            }
            Command::RunLayout { params, incremental } => {
                params.validate()?;
                if *incremental {
                    let state = LayoutState::from_graph(&self.graph, params);
                    layout::run_from(state, &mut self.graph, params)?;
                } else {
                    layout::run_layout(&mut self.graph, params)?;
                }
            }
            Command::SetViewpoint { position, orientation } => {
                if !is_finite(*position) {
                    return Err(SessionError::InvalidPayload("viewpoint position must be finite".into()));
                }
                self.viewpoint.position = *position;
                self.viewpoint.orientation = unit_quat(*orientation)?;
                self.follow_viewpoint();
            }
            Command::SetViewMode { mode } => {
                let (center, radius) = self.graph.bounding_sphere().unwrap_or((DVec3::ZERO, 1.0));
                let v = self.viewpoint.view_direction();
                self.viewpoint.position = match mode {
                    ViewMode::Egocentric => center,
                    ViewMode::Exocentric => center - v * (radius.max(1e-3) / (EXOCENTRIC_FOV / 2.0).sin()),
                };
                self.viewpoint.mode = *mode;
                self.follow_viewpoint();
            }
            Command::BeginProbe { origin, direction, t, radius } => {
                let ray = Ray::new(*origin, *direction)?;
                let (id, color) = self.allocate_probe();
                self.in_hand = Some(probe::begin_probe(id, color, ray, *t, *radius)?);
            }
            Command::AdjustProbe { t, radius } => {
                let p = self.in_hand.as_mut().ok_or(SessionError::NoProbeInHand)?;
                probe::adjust_probe(p, *t, *radius)?;
            }
            Command::PlaceProbe {} => {
                let mut p = self.in_hand.take().ok_or(SessionError::NoProbeInHand)?;
                let index = self.index.get(&self.graph);
                probe::place_probe(&mut p, &self.graph, index, &self.viewpoint, &self.content_params)?;
                self.probes.insert(p.id, p);
            }
            Command::AutoPlaceProbe { attribute, objective, radius } => {
                let (id, color) = self.allocate_probe();
                let index = self.index.get(&self.graph);
                let p = probe::auto_place_probe(
                    id,
                    color,
                    &self.graph,
                    index,
                    attribute,
                    *objective,
                    *radius,
                    &self.viewpoint,
                    &self.content_params,
                )?;
                self.probes.insert(id, p);
            }
            Command::RepositionProbe { probe, center, radius } => {
                let ball = Ball { center: *center, radius: *radius };
                let index = self.index.get(&self.graph);
                let p = self.probes.get_mut(probe).ok_or(SessionError::UnknownProbe(*probe))?;
                probe::reposition_probe(p, ball, &self.graph, index, &self.viewpoint, &self.content_params)?;
            }
            Command::RemoveProbe { probe } => {
                if self.probes.remove(probe).is_none() {
                    match &self.in_hand {
                        Some(p) if p.id == *probe => self.in_hand = None,
                        _ => return Err(SessionError::UnknownProbe(*probe)),
                    }
                }
            }
            Command::SetProbeActive { probe, active } => {
                probe::set_probe_active(self.probe_mut(*probe)?, *active)?;
            }
            Command::MoveContentView { probe, offset } => {
                if !is_finite(*offset) {
                    return Err(SessionError::InvalidPayload("offset must be finite".into()));
                }
                let vp = self.viewpoint;
                let p = self.probe_mut(*probe)?;
                let c = p.content.as_mut().ok_or(ProbeError::NotPlaced(*probe))?;
                c.user_offset = *offset;
                c.follow(&vp);
            }
            Command::RotateContentView { probe, rotation } => {
                let q = unit_quat(*rotation)?;
                let p = self.probe_mut(*probe)?;
                let c = p.content.as_mut().ok_or(ProbeError::NotPlaced(*probe))?;
                c.rotation = q;
            }
            Command::SelectNode { node, source } => {
                self.check_visible(node, *source)?;
                self.selection.push(NodeRef { node: node.clone(), source: *source });
                if self.selection.len() > 2 {
                    self.selection.remove(0);
                }
            }
            Command::ClearSelection {} => self.selection.clear(),
            Command::CreateLink {} => {
                let [a, b] = self.selection.as_slice() else {
                    return Err(SessionError::Selection("creating a link needs exactly two selected nodes"));
                };
                if a.node == b.node {
                    return Err(SessionError::Selection("selected nodes must be distinct"));
                }
                let (a, b) = (a.node.clone(), b.node.clone());
                self.graph.add_link(&a, &b)?;
                self.selection.clear();
            }
            Command::CreateNode { id, position, attrs, source } => {
                if self.retired.contains(id) {
                    return Err(SessionError::RetiredId(id.clone()));
                }
                let global = match source {
                    ViewSource::Global => *position,
                    ViewSource::Probe(pid) => self.content_of(*pid)?.to_global(*position),
                };
                self.graph.add_node(id.clone(), global, attrs.clone())?;
                if let ViewSource::Probe(pid) = source {
                    let c = self.probe_mut(*pid)?.content.as_mut().expect("checked above");
                    c.members.insert(id.clone(), global);
                }
            }
            Command::RemoveNode { node, source } => {
                self.check_visible(node, *source)?;
                self.graph.remove_node(node)?;
                self.retired.insert(node.clone());
            }
            Command::RemoveLink { a, b, source } => {
                if let ViewSource::Probe(pid) = source {
                    let c = self.content_of(*pid)?;
                    if !c.contains(a) && !c.contains(b) {
                        return Err(SessionError::NotInView { node: a.clone(), probe: *pid });
                    }
                }
                self.graph.remove_link(a, b)?;
            }
            Command::DeformInput(input) => {
                deform::deform_step(&mut self.graph, &mut self.probes, input)?;
            }
            Command::TeleportToProbe { probe, standoff } => {
                let p = self.probes.get(probe).ok_or(SessionError::UnknownProbe(*probe))?;
                deform::teleport_to_probe(&mut self.viewpoint, p, *standoff)?;
                self.follow_viewpoint();
            }
            Command::RefreshContent { probe } => {
                let index = self.index.get(&self.graph);
                let p = self.probes.get_mut(probe).ok_or(SessionError::UnknownProbe(*probe))?;
                probe::refresh_content(p, &self.graph, index, &self.viewpoint, &self.content_params)?;
            }
        }
        Ok(())
    }

    /// Cue geometry and highlight hints for the current state.
    pub fn presentation(&self) -> Presentation {
        let cues = cue_set(&self.viewpoint, self.probes.values(), &self.cue_params);
        let mut node_highlights: BTreeMap<NodeId, Highlight> = BTreeMap::new();
        let mut links: BTreeMap<Link, Highlight> = BTreeMap::new();
        let scale = self.content_params.highlight_scale;
        for probe in self.probes.values() {
            let Some(c) = &probe.content else { continue };
            for id in c.members.keys() {
                node_highlights
                    .entry(id.clone())
                    .or_insert_with(|| Highlight { probes: Vec::new(), color: probe.color, scale })
                    .probes
                    .push(probe.id);
            }
            for l in &c.links {
                links
                    .entry(l.clone())
                    .or_insert_with(|| Highlight { probes: Vec::new(), color: probe.color, scale })
                    .probes
                    .push(probe.id);
            }
        }
        Presentation { cues, node_highlights, link_highlights: links.into_iter().collect() }
    }

    /// Canonical JSON snapshot.
    pub fn snapshot(&self) -> String {
        canonical::to_canonical_string(self).expect("session state always serializes")
    }

    pub fn restore(doc: &str) -> Result<Self, SessionError> {
        let state: SessionState =
            serde_json::from_str(doc).map_err(|e| SessionError::MalformedSnapshot(e.to_string()))?;
        state
            .check_invariants()
            .map_err(SessionError::MalformedSnapshot)?;
        Ok(state)
    }

    /// SHA-256 of the canonical snapshot.
    pub fn state_hash(&self) -> String {
        canonical::sha256_hex(&self.snapshot())
    }

    /// Applies a delta's changes (the client-side half of the protocol).
    pub fn apply_changes(&mut self, changes: &[Change]) -> Result<(), SessionError> {
        for change in changes {
            match change {
                Change::LinkRemove { link } => self.graph.remove_link(link.source(), link.target())?,
                Change::NodeRemove { id } => {
                    self.graph.remove_node(id)?;
                }
                Change::NodeUpsert { node } => self.graph.upsert_node(node.clone())?,
                Change::LinkAdd { link } => self.graph.add_link(link.source(), link.target())?,
                Change::ProbeRemove { id } => {
                    self.probes.remove(id).ok_or(SessionError::UnknownProbe(*id))?;
                }
                Change::ProbeUpsert { probe } => {
                    self.probes.insert(probe.id, (**probe).clone());
                }
                Change::InHand { probe } => self.in_hand = probe.as_deref().cloned(),
                Change::Viewpoint { viewpoint } => self.viewpoint = *viewpoint,
                Change::Selection { selection } => self.selection = selection.clone(),
                Change::Haptic { haptic } => self.haptic = *haptic,
                Change::Retired { ids } => self.retired = ids.iter().cloned().collect(),
                Change::Counters { applied_seq, next_probe, palette_cursor } => {
                    self.applied_seq = *applied_seq;
                    self.next_probe = *next_probe;
                    self.palette_cursor = *palette_cursor;
                }
            }
        }
        Ok(())
    }

    /// Checks every cross-module invariant; returns a description of the
    /// first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.graph.check_integrity().map_err(|e| format!("graph: {e}"))?;
        if !self.viewpoint.is_valid() {
            return Err("viewpoint position or orientation invalid".into());
        }
        for (id, probe) in &self.probes {
            if *id != probe.id {
                return Err(format!("probe keyed {id} has id {}", probe.id));
            }
            if probe.id.0 >= self.next_probe {
                return Err(format!("probe {id} not below next id {}", self.next_probe));
            }
            if !probe.placed {
                return Err(format!("probe {id} stored but not placed"));
            }
            if probe.ball.radius <= 0.0 {
                return Err(format!("probe {id} radius not positive"));
            }
            let c = probe.content.as_ref().ok_or_else(|| format!("placed probe {id} has no content"))?;
            c.check().map_err(|e| format!("probe {id}: {e}"))?;
            let ids: BTreeSet<NodeId> = c.members.keys().cloned().collect();
            if let Some(missing) = ids.iter().find(|n| !self.graph.contains_node(n)) {
                return Err(format!("probe {id} member {missing} not in graph"));
            }
            if c.links != self.graph.links_within(&ids) {
                return Err(format!("probe {id} content links differ from induced subgraph"));
            }
            if c.crossing_links != self.graph.links_crossing(&ids) {
                return Err(format!("probe {id} crossing links out of date"));
            }
            for (n, &captured) in &c.members {
                let back = c.to_global(c.to_display(captured));
                if (back - captured).length() > 1e-9 * (1.0 + captured.length()) {
                    return Err(format!("probe {id} content transform does not invert for {n}"));
                }
            }
        }
        if let Some(p) = &self.in_hand {
            if p.placed || p.active || p.content.is_some() {
                return Err("in-hand probe must be unplaced".into());
            }
        }
        let haptic = self
            .in_hand
            .as_ref()
            .is_some_and(|p| self.graph.nodes().any(|n| p.ball.contains(n.position)));
        if haptic != self.haptic.active {
            return Err(format!("haptic flag {} but expected {haptic}", self.haptic.active));
        }
        if self.selection.len() > 2 {
            return Err("more than two selected nodes".into());
        }
        for r in &self.selection {
            self.check_visible(&r.node, r.source).map_err(|e| format!("selection: {e}"))?;
        }
        if let Some(n) = self.retired.iter().find(|n| self.graph.contains_node(n)) {
            return Err(format!("retired id {n} present in graph"));
        }
        Ok(())
    }
}

fn unit_quat(q: DQuat) -> Result<DQuat, SessionError> {
    let finite = q.x.is_finite() && q.y.is_finite() && q.z.is_finite() && q.w.is_finite();
    if !finite || !quat_is_unit(q, QUAT_INPUT_TOLERANCE) {
        return Err(SessionError::InvalidPayload("orientation must be a unit quaternion".into()));
    }
    Ok(q.normalize())
}

/// Entity-level diff in application order.
fn diff(before: &SessionState, after: &SessionState) -> Vec<Change> {
    let mut out = Vec::new();
    let (bg, ag) = (&before.graph, &after.graph);

    let b_links: BTreeSet<&Link> = bg.links().collect();
    let a_links: BTreeSet<&Link> = ag.links().collect();
    for l in b_links.difference(&a_links) {
        out.push(Change::LinkRemove { link: (*l).clone() });
    }
    for id in bg.node_ids() {
        if !ag.contains_node(id) {
            out.push(Change::NodeRemove { id: id.clone() });
        }
    }
    for node in ag.nodes() {
        if bg.node(&node.id) != Some(node) {
            out.push(Change::NodeUpsert { node: node.clone() });
        }
    }
    for l in a_links.difference(&b_links) {
        out.push(Change::LinkAdd { link: (*l).clone() });
    }

    for id in before.probes.keys() {
        if !after.probes.contains_key(id) {
            out.push(Change::ProbeRemove { id: *id });
        }
    }
    for (id, p) in &after.probes {
        if before.probes.get(id) != Some(p) {
            out.push(Change::ProbeUpsert { probe: Box::new(p.clone()) });
        }
    }
    if before.in_hand != after.in_hand {
        out.push(Change::InHand { probe: after.in_hand.clone().map(Box::new) });
    }
    if before.viewpoint != after.viewpoint {
        out.push(Change::Viewpoint { viewpoint: after.viewpoint });
    }
    if before.selection != after.selection {
        out.push(Change::Selection { selection: after.selection.clone() });
    }
    if before.haptic != after.haptic {
        out.push(Change::Haptic { haptic: after.haptic });
    }
    if before.retired != after.retired {
        out.push(Change::Retired { ids: after.retired.iter().cloned().collect() });
    }
    out.push(Change::Counters {
        applied_seq: after.applied_seq,
        next_probe: after.next_probe,
        palette_cursor: after.palette_cursor,
    });
    out
}

/// Folds a log over the empty state.
pub fn replay(commands: &[SessionCommand]) -> Result<SessionState, (u64, SessionError)> {
    replay_from(SessionState::default(), commands)
}

/// Folds a log over an initial state; stops at the first failing command.
pub fn replay_from(mut state: SessionState, commands: &[SessionCommand]) -> Result<SessionState, (u64, SessionError)> {
    for cmd in commands {
        state.apply(cmd).map_err(|e| (cmd.seq, e))?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests;
