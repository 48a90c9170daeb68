//! Undirected attributed graph with 3D node positions.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::geom::{is_finite, DVec3};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("node id `{0}` already exists")]
    DuplicateId(NodeId),
    #[error("node `{0}` has a non-finite coordinate")]
    NonFiniteCoordinate(NodeId),
    #[error("unknown node id `{0}`")]
    UnknownId(NodeId),
    #[error("self-loop on `{0}` is not allowed")]
    SelfLoop(NodeId),
    #[error("link {0} already exists")]
    DuplicateLink(Link),
    #[error("no link {0}")]
    UnknownLink(Link),
    #[error("empty attribute key on node `{0}`")]
    EmptyAttributeKey(NodeId),
    #[error("directed graphs are not supported")]
    Directed,
    #[error("malformed graph document: {0}")]
    Malformed(String),
}

/// Stable node identifier. Integer ids in input documents become their
/// decimal string form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Token {
            Str(String),
            Int(i64),
        }
        Ok(match Token::deserialize(de)? {
            Token::Str(s) => NodeId(s),
            Token::Int(i) => NodeId(i.to_string()),
        })
    }
}

/// Scalar-or-string attribute value. Nested values are rejected on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Num(f64),
    Str(String),
}

impl AttrValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            AttrValue::Num(x) => Some(*x),
            AttrValue::Str(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub position: DVec3,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
}

/// Undirected link, stored with `source <= target`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLink")]
pub struct Link {
    source: NodeId,
    target: NodeId,
}

#[derive(Deserialize)]
struct RawLink {
    source: NodeId,
    target: NodeId,
}

impl TryFrom<RawLink> for Link {
    type Error = String;

    fn try_from(raw: RawLink) -> Result<Self, String> {
        if raw.source == raw.target {
            return Err(format!("self-loop on `{}`", raw.source));
        }
        Ok(Link::new(raw.source, raw.target))
    }
}

impl Link {
    /// Canonical link between `a` and `b` regardless of argument order.
    pub fn new(a: NodeId, b: NodeId) -> Self {
        if a <= b {
            Self { source: a, target: b }
        } else {
            Self { source: b, target: a }
        }
    }

    pub fn source(&self) -> &NodeId {
        &self.source
    }

    pub fn target(&self) -> &NodeId {
        &self.target
    }

    pub fn touches(&self, id: &NodeId) -> bool {
        &self.source == id || &self.target == id
    }

    /// The endpoint opposite `id`, if `id` is an endpoint.
    pub fn other(&self, id: &NodeId) -> Option<&NodeId> {
        if &self.source == id {
            Some(&self.target)
        } else if &self.target == id {
            Some(&self.source)
        } else {
            None
        }
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.source, self.target)
    }
}

static REVISION: AtomicU64 = AtomicU64::new(1);

/// Revisions are unique process-wide, so two different graphs never share
/// one.
fn next_revision() -> u64 {
    REVISION.fetch_add(1, Ordering::Relaxed)
}

/// Mutable undirected graph. Iteration order is by node id and by
/// canonical link, so every traversal is deterministic.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Graph {
    nodes: BTreeMap<NodeId, Node>,
    links: BTreeSet<Link>,
    /// Bumped on every structural or positional mutation. Not part of the
    /// graph's value.
    #[serde(skip, default = "next_revision")]
    revision: u64,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.links == other.links
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn contains_node(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn position(&self, id: &NodeId) -> Option<DVec3> {
        self.nodes.get(id).map(|n| n.position)
    }

    pub fn nodes(&self) -> impl ExactSizeIterator<Item = &Node> + '_ {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl ExactSizeIterator<Item = &NodeId> + '_ {
        self.nodes.keys()
    }

    pub fn links(&self) -> impl ExactSizeIterator<Item = &Link> + '_ {
        self.links.iter()
    }

    pub fn has_link(&self, a: &NodeId, b: &NodeId) -> bool {
        self.links.contains(&Link::new(a.clone(), b.clone()))
    }

    pub fn degree(&self, id: &NodeId) -> usize {
        self.links.iter().filter(|l| l.touches(id)).count()
    }

    pub fn add_node(
        &mut self,
        id: NodeId,
        position: DVec3,
        attributes: BTreeMap<String, AttrValue>,
    ) -> Result<(), GraphError> {
        if self.nodes.contains_key(&id) {
            return Err(GraphError::DuplicateId(id));
        }
        if !is_finite(position) {
            return Err(GraphError::NonFiniteCoordinate(id));
        }
        if attributes.keys().any(|k| k.is_empty()) {
            return Err(GraphError::EmptyAttributeKey(id));
        }
        self.nodes.insert(id.clone(), Node { id, position, attributes });
        self.revision = next_revision();
        Ok(())
    }

    /// Inserts or replaces a node wholesale, keeping its links.
    pub fn upsert_node(&mut self, node: Node) -> Result<(), GraphError> {
        if !is_finite(node.position) {
            return Err(GraphError::NonFiniteCoordinate(node.id));
        }
        self.nodes.insert(node.id.clone(), node);
        self.revision = next_revision();
        Ok(())
    }

    /// Removes the node and every link incident to it.
    pub fn remove_node(&mut self, id: &NodeId) -> Result<Node, GraphError> {
        let node = self
            .nodes
            .remove(id)
            .ok_or_else(|| GraphError::UnknownId(id.clone()))?;
        self.links.retain(|l| !l.touches(id));
        self.revision = next_revision();
        Ok(node)
    }

    pub fn add_link(&mut self, a: &NodeId, b: &NodeId) -> Result<(), GraphError> {
        for id in [a, b] {
            if !self.nodes.contains_key(id) {
                return Err(GraphError::UnknownId(id.clone()));
            }
        }
        if a == b {
            return Err(GraphError::SelfLoop(a.clone()));
        }
        let link = Link::new(a.clone(), b.clone());
        if self.links.contains(&link) {
            return Err(GraphError::DuplicateLink(link));
        }
        self.links.insert(link);
        self.revision = next_revision();
        Ok(())
    }

    pub fn remove_link(&mut self, a: &NodeId, b: &NodeId) -> Result<(), GraphError> {
        let link = Link::new(a.clone(), b.clone());
        if !self.links.remove(&link) {
            return Err(GraphError::UnknownLink(link));
        }
        self.revision = next_revision();
        Ok(())
    }

    pub fn set_position(&mut self, id: &NodeId, position: DVec3) -> Result<(), GraphError> {
        if !is_finite(position) {
            return Err(GraphError::NonFiniteCoordinate(id.clone()));
        }
        let node = self
            .nodes
            .get_mut(id)
            .ok_or_else(|| GraphError::UnknownId(id.clone()))?;
        node.position = position;
        self.revision = next_revision();
        Ok(())
    }

    /// Rewrites every position through `f`, in node-id order.
    pub fn update_positions(&mut self, mut f: impl FnMut(&Node) -> DVec3) {
        for node in self.nodes.values_mut() {
            node.position = f(node);
        }
        self.revision = next_revision();
    }

    /// Subgraph on `node_ids` holding every link whose endpoints are both in
    /// the set.
    pub fn induced_subgraph<'a, I>(&self, node_ids: I) -> Result<Subgraph, GraphError>
    where
        I: IntoIterator<Item = &'a NodeId>,
    {
        let mut nodes = BTreeSet::new();
        for id in node_ids {
            if !self.nodes.contains_key(id) {
                return Err(GraphError::UnknownId(id.clone()));
            }
            nodes.insert(id.clone());
        }
        let links = self.links_within(&nodes);
        Ok(Subgraph {
            parent_revision: self.revision,
            nodes,
            links,
            induced: true,
        })
    }

    /// Links with both endpoints in `nodes`.
    pub fn links_within(&self, nodes: &BTreeSet<NodeId>) -> BTreeSet<Link> {
        // Walk the smaller side: for small member sets the range lookups on
        // the ordered link set beat a full scan.
        if nodes.len() * 8 < self.links.len() {
            let mut out = BTreeSet::new();
            for id in nodes {
                for l in self.links_from(id) {
                    if nodes.contains(l.target()) {
                        out.insert(l.clone());
                    }
                }
            }
            out
        } else {
            self.links
                .iter()
                .filter(|l| nodes.contains(l.source()) && nodes.contains(l.target()))
                .cloned()
                .collect()
        }
    }

    /// Links with exactly one endpoint in `nodes`.
    pub fn links_crossing(&self, nodes: &BTreeSet<NodeId>) -> BTreeSet<Link> {
        self.links
            .iter()
            .filter(|l| nodes.contains(l.source()) != nodes.contains(l.target()))
            .cloned()
            .collect()
    }

    /// Links whose canonical source is `id`.
    fn links_from<'a>(&'a self, id: &NodeId) -> impl Iterator<Item = &'a Link> + 'a {
        let lo = Link { source: id.clone(), target: NodeId(String::new()) };
        let id = id.clone();
        self.links.range(lo..).take_while(move |l| l.source == id)
    }

    /// Checks link referential integrity and canonical form.
    pub fn check_integrity(&self) -> Result<(), GraphError> {
        for l in &self.links {
            if l.source >= l.target {
                return Err(GraphError::Malformed(format!("non-canonical link {l}")));
            }
            for id in [&l.source, &l.target] {
                if !self.nodes.contains_key(id) {
                    return Err(GraphError::UnknownId(id.clone()));
                }
            }
        }
        for (k, n) in &self.nodes {
            if k != &n.id {
                return Err(GraphError::Malformed(format!("node keyed `{k}` has id `{}`", n.id)));
            }
            if !is_finite(n.position) {
                return Err(GraphError::NonFiniteCoordinate(k.clone()));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounds of all node positions.
    pub fn bounds(&self) -> Option<(DVec3, DVec3)> {
        let mut it = self.nodes.values().map(|n| n.position);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| (lo.min(p), hi.max(p))))
    }

    /// Centroid and radius of a sphere enclosing all nodes.
    pub fn bounding_sphere(&self) -> Option<(DVec3, f64)> {
        let (lo, hi) = self.bounds()?;
        let center = (lo + hi) * 0.5;
        let radius = self
            .nodes
            .values()
            .map(|n| n.position.distance(center))
            .fold(0.0, f64::max);
        Some((center, radius))
    }
}

/// Subgraph of a parent graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    /// Revision of the parent at extraction time.
    pub parent_revision: u64,
    pub nodes: BTreeSet<NodeId>,
    pub links: BTreeSet<Link>,
    pub induced: bool,
}

impl Subgraph {
    pub fn empty() -> Self {
        Self {
            parent_revision: 0,
            nodes: BTreeSet::new(),
            links: BTreeSet::new(),
            induced: true,
        }
    }
}

// ---------------------------------------------------------------------------
// File format

/// On-disk graph document.
///
/// `{"directed": false, "nodes": [{"id": "n1", "pos": [x,y,z], "attrs": {..}}],
///   "links": [{"source": "n1", "target": "n2"}]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    #[serde(default)]
    pub directed: bool,
    pub nodes: Vec<NodeRecord>,
    #[serde(default)]
    pub links: Vec<LinkRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, AttrValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub source: NodeId,
    pub target: NodeId,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StrictDocument {
    #[serde(default)]
    directed: bool,
    nodes: Vec<StrictNode>,
    #[serde(default)]
    links: Vec<StrictLink>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StrictNode {
    id: NodeId,
    #[serde(default)]
    pos: Option<[f64; 3]>,
    #[serde(default)]
    attrs: BTreeMap<String, AttrValue>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StrictLink {
    source: NodeId,
    target: NodeId,
}

impl GraphDocument {
    /// Parses a document. In strict mode unknown fields are errors; otherwise
    /// they are ignored.
    pub fn parse(text: &str, strict: bool) -> Result<Self, GraphError> {
        let malformed = |e: serde_json::Error| GraphError::Malformed(e.to_string());
        if strict {
            let doc: StrictDocument = serde_json::from_str(text).map_err(malformed)?;
            Ok(GraphDocument {
                directed: doc.directed,
                nodes: doc
                    .nodes
                    .into_iter()
                    .map(|n| NodeRecord { id: n.id, pos: n.pos, attrs: n.attrs })
                    .collect(),
                links: doc
                    .links
                    .into_iter()
                    .map(|l| LinkRecord { source: l.source, target: l.target })
                    .collect(),
            })
        } else {
            serde_json::from_str(text).map_err(malformed)
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph documents always serialize")
    }

    pub fn from_graph(graph: &Graph) -> Self {
        GraphDocument {
            directed: false,
            nodes: graph
                .nodes()
                .map(|n| NodeRecord {
                    id: n.id.clone(),
                    pos: Some(n.position.to_array()),
                    attrs: n.attributes.clone(),
                })
                .collect(),
            links: graph
                .links()
                .map(|l| LinkRecord { source: l.source.clone(), target: l.target.clone() })
                .collect(),
        }
    }

    pub fn has_all_positions(&self) -> bool {
        self.nodes.iter().all(|n| n.pos.is_some())
    }

    /// Builds a graph. Nodes without `pos` take the matching entry of
    /// `fallback` (keyed by node id) or the origin.
    pub fn into_graph_with(
        self,
        fallback: impl Fn(&NodeId) -> Option<DVec3>,
    ) -> Result<Graph, GraphError> {
        if self.directed {
            return Err(GraphError::Directed);
        }
        let mut g = Graph::new();
        for n in self.nodes {
            let pos = match n.pos {
                Some(p) => DVec3::from_array(p),
                None => fallback(&n.id).unwrap_or(DVec3::ZERO),
            };
            g.add_node(n.id, pos, n.attrs)?;
        }
        for l in self.links {
            g.add_link(&l.source, &l.target)?;
        }
        Ok(g)
    }

    /// Builds a graph; nodes without positions are seeded deterministically
    /// (seed 0) so the result is always a valid embedding.
    pub fn into_graph(self) -> Result<Graph, GraphError> {
        if self.has_all_positions() {
            return self.into_graph_with(|_| None);
        }
        let ids: Vec<NodeId> = self.nodes.iter().map(|n| n.id.clone()).collect();
        let seeded = crate::layout::seed_points(ids.len(), 0);
        let lookup: BTreeMap<NodeId, DVec3> = ids.into_iter().zip(seeded).collect();
        self.into_graph_with(|id| lookup.get(id).copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> NodeId {
        NodeId::from(s)
    }

    fn triangle() -> Graph {
        let mut g = Graph::new();
        for (i, n) in ["A", "B", "C"].iter().enumerate() {
            g.add_node(id(n), DVec3::new(i as f64, 0.0, 0.0), BTreeMap::new()).unwrap();
        }
        g.add_link(&id("A"), &id("B")).unwrap();
        g.add_link(&id("B"), &id("C")).unwrap();
        g.add_link(&id("C"), &id("A")).unwrap();
        g
    }

    #[test]
    fn add_node_basics() {
        let mut g = Graph::new();
        g.add_node(id("A"), DVec3::ZERO, BTreeMap::new()).unwrap();
        assert_eq!((g.node_count(), g.link_count()), (1, 0));
        assert_eq!(
            g.add_node(id("A"), DVec3::ZERO, BTreeMap::new()),
            Err(GraphError::DuplicateId(id("A")))
        );
        assert_eq!(
            g.add_node(id("B"), DVec3::new(1.0, f64::NAN, 0.0), BTreeMap::new()),
            Err(GraphError::NonFiniteCoordinate(id("B")))
        );
        assert_eq!(g.node_count(), 1);
    }

    #[test]
    fn remove_node_drops_incident_links() {
        let mut g = triangle();
        g.remove_node(&id("B")).unwrap();
        let nodes: Vec<_> = g.node_ids().cloned().collect();
        assert_eq!(nodes, vec![id("A"), id("C")]);
        let links: Vec<_> = g.links().cloned().collect();
        assert_eq!(links, vec![Link::new(id("A"), id("C"))]);
        g.check_integrity().unwrap();

        let mut single = Graph::new();
        single.add_node(id("X"), DVec3::ZERO, BTreeMap::new()).unwrap();
        single.remove_node(&id("X")).unwrap();
        assert!(single.is_empty());
        assert_eq!(single.remove_node(&id("X")), Err(GraphError::UnknownId(id("X"))));
    }

    #[test]
    fn links_are_unordered() {
        let mut g = Graph::new();
        g.add_node(id("A"), DVec3::ZERO, BTreeMap::new()).unwrap();
        g.add_node(id("B"), DVec3::X, BTreeMap::new()).unwrap();
        g.add_link(&id("A"), &id("B")).unwrap();
        assert_eq!(g.link_count(), 1);
        assert!(g.has_link(&id("B"), &id("A")));
        assert_eq!(
            g.add_link(&id("B"), &id("A")),
            Err(GraphError::DuplicateLink(Link::new(id("A"), id("B"))))
        );
        assert_eq!(g.add_link(&id("A"), &id("A")), Err(GraphError::SelfLoop(id("A"))));
        assert_eq!(g.add_link(&id("A"), &id("X")), Err(GraphError::UnknownId(id("X"))));
        g.remove_link(&id("B"), &id("A")).unwrap();
        assert_eq!(g.link_count(), 0);
    }

    #[test]
    fn remove_link_twice() {
        let mut g = triangle();
        g.remove_link(&id("A"), &id("B")).unwrap();
        assert_eq!((g.node_count(), g.link_count()), (3, 2));
        assert!(matches!(g.remove_link(&id("A"), &id("B")), Err(GraphError::UnknownLink(_))));
    }

    #[test]
    fn induced_subgraph_cases() {
        let g = triangle();
        let sub = g.induced_subgraph(&[id("A"), id("B")]).unwrap();
        assert_eq!(sub.nodes.len(), 2);
        assert_eq!(sub.links.iter().cloned().collect::<Vec<_>>(), vec![Link::new(id("A"), id("B"))]);

        let empty = g.induced_subgraph(std::iter::empty()).unwrap();
        assert!(empty.nodes.is_empty() && empty.links.is_empty());

        let all: Vec<NodeId> = g.node_ids().cloned().collect();
        let whole = g.induced_subgraph(&all).unwrap();
        assert_eq!(whole.links.len(), g.link_count());

        assert_eq!(g.induced_subgraph(&[id("Z")]).unwrap_err(), GraphError::UnknownId(id("Z")));
    }

    #[test]
    fn add_then_remove_isolated_restores() {
        let g = triangle();
        let mut h = g.clone();
        h.add_node(id("fresh"), DVec3::ONE, BTreeMap::new()).unwrap();
        h.remove_node(&id("fresh")).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn document_strict_and_lenient() {
        let text = r#"{"directed": false,
            "nodes": [{"id": "n1", "pos": [0,0,0], "attrs": {"minutesPlayed": 540, "club": "X"}},
                      {"id": 2, "extra": true}],
            "links": [{"source": "n1", "target": 2}]}"#;
        assert!(matches!(GraphDocument::parse(text, true), Err(GraphError::Malformed(_))));
        let doc = GraphDocument::parse(text, false).unwrap();
        assert!(!doc.has_all_positions());
        let g = doc.into_graph().unwrap();
        assert_eq!(g.node_count(), 2);
        assert!(g.has_link(&id("2"), &id("n1")));
        assert_eq!(
            g.node(&id("n1")).unwrap().attributes["minutesPlayed"],
            AttrValue::Num(540.0)
        );
    }

    #[test]
    fn document_rejects_nested_attrs_and_directed() {
        let nested = r#"{"nodes": [{"id": "a", "attrs": {"x": {"y": 1}}}]}"#;
        assert!(GraphDocument::parse(nested, false).is_err());
        let directed = r#"{"directed": true, "nodes": []}"#;
        let doc = GraphDocument::parse(directed, true).unwrap();
        assert_eq!(doc.into_graph(), Err(GraphError::Directed));
        let self_loop = r#"{"nodes": [{"id": "a"}], "links": [{"source": "a", "target": "a"}]}"#;
        let doc = GraphDocument::parse(self_loop, true).unwrap();
        assert_eq!(doc.into_graph(), Err(GraphError::SelfLoop(id("a"))));
    }
}
