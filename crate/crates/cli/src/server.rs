//! Single-session WebSocket service.
//!
//! Every connection shares one [`SessionState`]. Commands are applied under
//! a mutex and the resulting delta is broadcast before the lock is
//! released, so all clients see deltas in seq order. New clients get a
//! `full_state` message first.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use futures_util::{SinkExt, StreamExt};
use probekit_core::{SessionCommand, SessionState};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::broadcast;
use tokio_tungstenite::tungstenite::Message;
use tracing::{debug, info, warn};

use crate::protocol::{ClientMessage, ServerMessage};

const BROADCAST_CAPACITY: usize = 1024;

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("bad graph file: {0}")]
    BadGraphFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Shared {
    session: Mutex<SessionState>,
    deltas: broadcast::Sender<Arc<str>>,
}

impl Shared {
    /// Subscribes and captures the current state atomically, so the
    /// receiver holds exactly the deltas after the snapshot.
    fn sync(&self) -> (broadcast::Receiver<Arc<str>>, String) {
        let session = self.session.lock().expect("session lock poisoned");
        (self.deltas.subscribe(), ServerMessage::full_state(&session).to_json())
    }

    /// Applies a command and broadcasts its delta. Errors go back to the
    /// sender alone.
    fn command(&self, mut command: SessionCommand) -> Option<String> {
        let mut session = self.session.lock().expect("session lock poisoned");
        if command.seq == 0 {
            command.seq = session.applied_seq + 1;
        }
        match session.apply(&command) {
            Ok(delta) => {
                debug!(seq = delta.seq, kind = command.command.kind(), "applied");
                let _ = self.deltas.send(ServerMessage::delta(delta).to_json().into());
                None
            }
            Err(e) => {
                debug!(seq = command.seq, error = %e, "rejected");
                Some(ServerMessage::error(Some(command.seq), &e).to_json())
            }
        }
    }
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Server {
    pub async fn bind(addr: SocketAddr, initial: SessionState) -> Result<Self, ServeError> {
        let listener = TcpListener::bind(addr).await.map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse => ServeError::PortInUse(addr.port()),
            _ => ServeError::Io(e),
        })?;
        let (deltas, _) = broadcast::channel(BROADCAST_CAPACITY);
        Ok(Self { listener, shared: Arc::new(Shared { session: Mutex::new(initial), deltas }) })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Current canonical snapshot.
    pub fn snapshot(&self) -> String {
        self.shared.session.lock().expect("session lock poisoned").snapshot()
    }

    pub async fn run(self) -> std::io::Result<()> {
        info!(addr = %self.listener.local_addr()?, "listening");
        loop {
            let (stream, peer) = self.listener.accept().await?;
            let shared = self.shared.clone();
            tokio::spawn(async move {
                if let Err(e) = connection(stream, shared).await {
                    warn!(%peer, error = %e, "connection closed with error");
                }
            });
        }
    }
}

async fn connection(stream: TcpStream, shared: Arc<Shared>) -> Result<(), tokio_tungstenite::tungstenite::Error> {
    let ws = tokio_tungstenite::accept_async(stream).await?;
    let (mut sink, mut source) = ws.split();
    let (mut deltas, hello) = shared.sync();
    sink.send(Message::text(hello)).await?;
    loop {
        tokio::select! {
            incoming = source.next() => {
                let text = match incoming {
                    None | Some(Ok(Message::Close(_))) => break,
                    Some(Err(e)) => return Err(e),
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Binary(_))) => {
                        sink.send(Message::text(ServerMessage::malformed("binary frames are not supported").to_json())).await?;
                        continue;
                    }
                    Some(Ok(_)) => continue,
                };
                match serde_json::from_str::<ClientMessage>(&text) {
                    Err(e) => sink.send(Message::text(ServerMessage::malformed(e.to_string()).to_json())).await?,
                    Ok(ClientMessage::SyncRequest {}) => {
                        let (fresh, full) = shared.sync();
                        deltas = fresh;
                        sink.send(Message::text(full)).await?;
                    }
                    Ok(ClientMessage::Command { command, .. }) => {
                        if let Some(reply) = shared.command(command) {
                            sink.send(Message::text(reply)).await?;
                        }
                    }
                }
            }
            delta = deltas.recv() => match delta {
                Ok(text) => sink.send(Message::text(text.to_string())).await?,
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    warn!(skipped = n, "client lagged; resending full state");
                    let (fresh, full) = shared.sync();
                    deltas = fresh;
                    sink.send(Message::text(full)).await?;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
        }
    }
    Ok(())
}
