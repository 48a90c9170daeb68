//! Multi-focus probes for 3D node-link diagrams.
//!
//! A probe is a closed ball placed in a 3D graph. The nodes it encloses are
//! extracted as an induced subgraph and shown as a scaled, user-anchored
//! focus view that can be edited in place. Active probes drive navigation
//! (one probe) and deformation (several probes) of the whole layout, and
//! cone/tunnel cues keep every focus view tied to its origin.
//!
//! All interaction flows through [`session::SessionState::apply`], an
//! event-sourced state machine whose command logs replay bit-identically.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod canonical;
pub mod cues;
pub mod deform;
pub mod geom;
pub mod graph;
pub mod layout;
pub mod probe;
pub mod rng;
pub mod session;
pub mod spatial;
pub mod synth;

pub use cues::{ConeCue, CueParams, TunnelCue, ViewMode, Viewpoint};
pub use deform::{DeformField, DeformInput};
pub use geom::{DQuat, DVec3};
pub use graph::{AttrValue, Graph, GraphDocument, Link, Node, NodeId, Subgraph};
pub use layout::{LayoutParams, LayoutState};
pub use probe::{Color, ContentParams, ContentView, HapticSignal, Probe, ProbeId};
pub use session::{
    replay, Change, Command, Delta, GraphSource, NodeRef, SessionCommand, SessionError, SessionState, ViewSource,
};
pub use spatial::{Ball, Ray, SpatialIndex};
