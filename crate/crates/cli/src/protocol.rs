//! JSON messages exchanged over the WebSocket stream.

use probekit_core::session::{Delta, Presentation};
use probekit_core::{Change, SessionCommand, SessionError, SessionState};
use serde::{Deserialize, Serialize};

/// Client to server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// A `seq` of 0 asks the server to assign the next sequence number.
    Command {
        command: SessionCommand,
        /// Reserved for multi-session use; ignored.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<String>,
    },
    SyncRequest {},
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Delta {
        seq: u64,
        changes: Vec<Change>,
        presentation: Presentation,
    },
    FullState {
        /// Canonical snapshot text; parse with [`SessionState::restore`].
        snapshot: String,
        presentation: Presentation,
    },
    Error {
        /// Sequence number of the rejected command, when one was parsed.
        seq: Option<u64>,
        code: String,
        message: String,
    },
}

impl ServerMessage {
    pub fn delta(delta: Delta) -> Self {
        ServerMessage::Delta { seq: delta.seq, changes: delta.changes, presentation: delta.presentation }
    }

    pub fn full_state(state: &SessionState) -> Self {
        ServerMessage::FullState { snapshot: state.snapshot(), presentation: state.presentation() }
    }

    pub fn error(seq: Option<u64>, err: &SessionError) -> Self {
        ServerMessage::Error { seq, code: err.code().to_owned(), message: err.to_string() }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        ServerMessage::Error { seq: None, code: "malformed_message".into(), message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}
