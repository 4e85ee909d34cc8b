// SPDX-License-Identifier: Apache-2.0

//! Event logs and replay.
//!
//! A log is JSON Lines: a header carrying the log version, the world
//! document and the session config, then one [`SessionEvent`] per line in
//! the order the session applied them. Replaying the events into a fresh
//! session reproduces its state exactly.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::config::SessionConfig;
use crate::session::{Session, SessionEvent};
use crate::snapshot::StateSnapshot;
use crate::world::{World, WorldDoc};

pub const LOG_FORMAT: &str = "tourcast-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub version: u32,
    pub world: WorldDoc,
    pub config: SessionConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("log is empty")]
    Empty,
    #[error("bad log header: {0}")]
    Header(String),
    #[error("log version {found} not supported (expected {LOG_VERSION})")]
    Version { found: u32 },
    #[error("log header describes an invalid session: {0}")]
    Session(String),
    #[error("reading log: {0}")]
    Io(#[from] std::io::Error),
}

/// A session together with the log of every event it applied.
#[derive(Debug, Clone)]
pub struct Recorder {
    session: Session,
    header: LogHeader,
    events: Vec<SessionEvent>,
}

impl Recorder {
    pub fn new(session: Session) -> Self {
        let header = LogHeader {
            format: LOG_FORMAT.into(),
            version: LOG_VERSION,
            world: session.world().doc().clone(),
            config: session.config().clone(),
        };
        Recorder { session, header, events: Vec::new() }
    }

    pub fn apply(&mut self, event: SessionEvent) -> Vec<crate::session::Outbound> {
        let out = self.session.apply(&event);
        self.events.push(event);
        out
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    pub fn write_log(&self, mut w: impl Write) -> std::io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn log_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_log(&mut buf).expect("writing to memory");
        buf
    }
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub events_applied: usize,
    /// Set when the log ended in an unreadable line; replay stopped there.
    pub truncated_at_line: Option<usize>,
    pub snapshot: StateSnapshot,
    pub hash: String,
}

/// Replays a log without any network. A damaged tail is reported, not fatal.
pub fn replay(reader: impl BufRead) -> Result<ReplayOutcome, ReplayError> {
    let mut lines = reader.lines();
    let first = lines.next().ok_or(ReplayError::Empty)??;
    let raw: serde_json::Value = serde_json::from_str(&first).map_err(|e| ReplayError::Header(e.to_string()))?;
    let version = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if raw.get("format").and_then(|f| f.as_str()) != Some(LOG_FORMAT) {
        return Err(ReplayError::Header("not a tourcast log".into()));
    }
    if version != LOG_VERSION {
        return Err(ReplayError::Version { found: version });
    }
    let header: LogHeader = serde_json::from_value(raw).map_err(|e| ReplayError::Header(e.to_string()))?;
    let world = World::from_doc(header.world).map_err(|e| ReplayError::Session(e.to_string()))?;
    let mut session = Session::new(world, header.config).map_err(|e| ReplayError::Session(e.to_string()))?;

    let mut events_applied = 0;
    let mut truncated_at_line = None;
    for (i, line) in lines.enumerate() {
        let parsed = line.ok().and_then(|l| serde_json::from_str::<SessionEvent>(&l).ok());
        match parsed {
            Some(event) => {
                session.apply(&event);
                events_applied += 1;
            }
            None => {
                truncated_at_line = Some(i + 2);
                break;
            }
        }
    }
    let snapshot = session.snapshot();
    let hash = snapshot.hash();
    Ok(ReplayOutcome { events_applied, truncated_at_line, snapshot, hash })
}
