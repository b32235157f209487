//! Append-only persistence: the interaction event log and the session log.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use learnpath_core::ingest::{read_event_log, EventLogError, EventLogWriter};
use learnpath_core::{InteractionEvent, SessionId, UserId};
use serde::{Deserialize, Serialize};

/// One line of the session log. Together with the event log and the model
/// snapshots it is enough to replay what a session was served.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionRecord {
    Started {
        session_id: SessionId,
        user_id: UserId,
        topic: String,
        strategy: String,
        model_version: u64,
        seed: u64,
        length: usize,
        timestamp: i64,
    },
    Finished {
        session_id: SessionId,
        answered: usize,
        correct: usize,
        timestamp: i64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    EventLog(#[from] EventLogError),
    #[error("session log: {0}")]
    Io(#[from] std::io::Error),
    #[error("session log: {0}")]
    Json(#[from] serde_json::Error),
}

pub struct EventStore {
    events: Vec<InteractionEvent>,
    by_user: HashMap<UserId, Vec<usize>>,
    event_writer: EventLogWriter,
    session_writer: BufWriter<File>,
}

impl EventStore {
    /// Replays an existing event log, then appends to both files.
    pub fn open(event_log: &Path, session_log: &Path) -> Result<Self, StoreError> {
        let events = if event_log.exists() {
            read_event_log(event_log)?
        } else {
            Vec::new()
        };
        let mut by_user: HashMap<UserId, Vec<usize>> = HashMap::new();
        for (i, e) in events.iter().enumerate() {
            by_user.entry(e.user_id.clone()).or_default().push(i);
        }
        let session_file = OpenOptions::new().create(true).append(true).open(session_log)?;
        Ok(Self {
            events,
            by_user,
            event_writer: EventLogWriter::open(event_log)?,
            session_writer: BufWriter::new(session_file),
        })
    }

    pub fn events(&self) -> &[InteractionEvent] {
        &self.events
    }

    /// The user's events from sessions other than `current`, oldest first.
    pub fn prior_events(&self, user: &UserId, current: &SessionId) -> Vec<InteractionEvent> {
        self.by_user
            .get(user)
            .into_iter()
            .flatten()
            .map(|&i| &self.events[i])
            .filter(|e| &e.session_id != current)
            .cloned()
            .collect()
    }

    /// Written and flushed before the in-memory copy is updated.
    pub fn append_event(&mut self, event: InteractionEvent) -> Result<(), StoreError> {
        self.event_writer.append(&event)?;
        self.by_user.entry(event.user_id.clone()).or_default().push(self.events.len());
        self.events.push(event);
        Ok(())
    }

    pub fn append_session(&mut self, record: &SessionRecord) -> Result<(), StoreError> {
        serde_json::to_writer(&mut self.session_writer, record)?;
        self.session_writer.write_all(b"\n")?;
        self.session_writer.flush()?;
        Ok(())
    }
}
