//! Subcommand implementations.

use std::fs;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use probekit_core::layout::{self, LayoutParams};
use probekit_core::session::{parse_log, replay_from};
use probekit_core::synth::{self, SynthSpec};
use probekit_core::{ContentParams, CueParams, Graph, GraphDocument, SessionCommand, SessionState};
use serde::Deserialize;
use thiserror::Error;

use crate::server::{ServeError, Server};

#[derive(Debug, Parser)]
#[command(name = "probekit", version, about = "Multi-focus probes for 3D node-link diagrams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Compute a 3D force-directed layout.
    Layout {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        iters: u32,
        #[arg(long)]
        out: PathBuf,
        /// Reject unknown fields in the graph file.
        #[arg(long)]
        strict: bool,
    },
    /// Replay a command log, writing canonical snapshots.
    Replay {
        #[command(flatten)]
        input: ScriptInput,
        /// Directory for frame files.
        #[arg(long)]
        out: PathBuf,
        /// Write a frame after every N commands.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        every: u64,
    },
    /// Replay a command log and check every invariant.
    Validate {
        #[command(flatten)]
        input: ScriptInput,
    },
    /// Serve a session over WebSocket.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = Ipv4Addr::LOCALHOST.into())]
        host: std::net::IpAddr,
    },
    /// Generate a synthetic clustered dataset.
    Gen {
        #[arg(long, default_value_t = 95)]
        nodes: usize,
        #[arg(long, default_value_t = 1046)]
        links: usize,
        #[arg(long, default_value_t = 39)]
        attrs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ScriptInput {
    /// JSON-lines command log.
    #[arg(long)]
    pub script: PathBuf,
    /// Graph loaded before the first command.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Session config (cue and content constants).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Session config file: `{"cue": {...}, "content": {...}}`, both optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub cue: CueParams,
    pub content: ContentParams,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Input(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Serve(#[from] ServeError),
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

pub fn load_graph(path: &Path, strict: bool) -> Result<Graph, CliError> {
    let text = read(path)?;
    GraphDocument::parse(&text, strict)
        .and_then(GraphDocument::into_graph)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn load_config(path: Option<&Path>) -> Result<SessionConfig, CliError> {
    let Some(path) = path else { return Ok(SessionConfig::default()) };
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn initial_state(graph: Option<&Path>, config: Option<&Path>) -> Result<SessionState, CliError> {
    let mut state = match graph {
        Some(p) => SessionState::with_graph(load_graph(p, false)?),
        None => SessionState::new(),
    };
    let config = load_config(config)?;
    state.cue_params = config.cue;
    state.content_params = config.content;
    Ok(state)
}

fn load_script(path: &Path) -> Result<Vec<SessionCommand>, CliError> {
    parse_log(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn frame_name(seq: u64) -> String {
    format!("frame-{seq:06}.json")
}

/// Runs a parsed command line; returns the text to print on success.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Cmd::Layout { graph, seed, iters, out, strict } => {
            let mut g = load_graph(&graph, strict)?;
            let params = LayoutParams { seed, max_iterations: iters, ..LayoutParams::default() };
            let ticks = layout::run_layout(&mut g, &params).map_err(|e| CliError::Input(e.to_string()))?;
            write(&out, &GraphDocument::from_graph(&g).to_json_pretty())?;
            Ok(format!("laid out {} nodes in {ticks} ticks", g.node_count()))
        }
        Cmd::Replay { input, out, every } => {
            let mut state = initial_state(input.graph.as_deref(), input.config.as_deref())?;
            let log = load_script(&input.script)?;
            fs::create_dir_all(&out).map_err(|source| CliError::Io { path: out.clone(), source })?;
            let mut frames = 0;
            for (i, cmd) in log.iter().enumerate() {
                state
                    .apply(cmd)
                    .map_err(|e| CliError::Validation(format!("command seq {}: {e}", cmd.seq)))?;
                if (i as u64 + 1).is_multiple_of(every) || i + 1 == log.len() {
                    write(&out.join(frame_name(cmd.seq)), &state.snapshot())?;
                    frames += 1;
                }
            }
            Ok(format!("{} commands, {frames} frames, final hash {}", log.len(), state.state_hash()))
        }
        Cmd::Validate { input } => {
            let initial = initial_state(input.graph.as_deref(), input.config.as_deref())?;
            let log = load_script(&input.script)?;
            let hash = validate(initial, &log)?;
            Ok(format!("ok: {} commands, final hash {hash}", log.len()))
        }
        Cmd::Serve { port, graph, config, host } => {
            let state = match &graph {
                Some(p) => initial_state(Some(p), config.as_deref())
                    .map_err(|e| ServeError::BadGraphFile(e.to_string()))?,
                None => initial_state(None, config.as_deref())?,
            };
            let runtime = tokio::runtime::Runtime::new().map_err(ServeError::Io)?;
            runtime.block_on(async {
                let server = Server::bind(SocketAddr::new(host, port), state).await?;
                eprintln!("listening on ws://{}", server.local_addr().map_err(ServeError::Io)?);
                server.run().await.map_err(ServeError::Io)
            })?;
            Ok(String::new())
        }
        Cmd::Gen { nodes, links, attrs, seed, out } => {
            let doc = synth::generate(&SynthSpec { nodes, links, attrs, seed })
                .map_err(|e| CliError::Input(e.to_string()))?;
            let text = doc.to_json_pretty();
            match out {
                Some(path) => {
                    write(&path, &text)?;
                    Ok(format!("wrote {nodes} nodes, {links} links"))
                }
                None => Ok(text),
            }
        }
    }
}

/// Replays `log` over `initial`, checking after every command that all
/// invariants hold, that the delta reproduces the new state on a mirror,
/// and that the snapshot round-trips. A second replay must reach the same
/// hash. Returns the final state hash.
pub fn validate(initial: SessionState, log: &[SessionCommand]) -> Result<String, CliError> {
    let fail = |seq: u64, what: String| CliError::Validation(format!("command seq {seq}: {what}"));
    let mut state = initial.clone();
    let mut mirror = initial.clone();
    for cmd in log {
        let delta = state.apply(cmd).map_err(|e| fail(cmd.seq, e.to_string()))?;
        state.check_invariants().map_err(|e| fail(cmd.seq, e))?;
        mirror.apply_changes(&delta.changes).map_err(|e| fail(cmd.seq, format!("delta does not apply: {e}")))?;
        let snapshot = state.snapshot();
        if mirror.snapshot() != snapshot {
            return Err(fail(cmd.seq, "delta does not reproduce state".into()));
        }
        let restored = SessionState::restore(&snapshot).map_err(|e| fail(cmd.seq, e.to_string()))?;
        if restored != state {
            return Err(fail(cmd.seq, "snapshot does not round-trip".into()));
        }
    }
    let hash = state.state_hash();
    let again = replay_from(initial, log).map_err(|(seq, e)| fail(seq, e.to_string()))?;
    if again.state_hash() != hash {
        return Err(CliError::Validation("replay is not deterministic".into()));
    }
    Ok(hash)
}
