//! Experiment sessions: condition assignment and the interaction event log,
//! persisted as an append-only JSON-lines file.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use immercity_core::cues::{assign_ar_condition, assign_test_sets, ArCondition, CueConfig, EventName};
use immercity_core::Clock;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("event {index}: {reason}")]
    NonMonotone { index: usize, reason: String },
    #[error("event {index} names session {found}, not {expected}")]
    WrongSession { index: usize, expected: String, found: String },
    #[error("session log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Platform {
    #[serde(rename = "VR")]
    Vr,
    #[serde(rename = "AR")]
    Ar,
    #[serde(rename = "Web")]
    Web,
}

/// One experimental condition, with the cue settings a client should use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Condition {
    TestSet { test_set: u8, cues: CueConfig },
    ArCondition { condition: ArCondition, cues: CueConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueEvent {
    #[serde(default)]
    pub session_id: String,
    /// Seconds since session start.
    pub t: f64,
    pub name: EventName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub participant_index: u64,
    pub platform: Platform,
    /// In the order the participant runs them.
    pub assigned: Vec<Condition>,
    /// Cue settings outside any assigned condition.
    pub cues: CueConfig,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub events: Vec<CueEvent>,
}

pub fn assign(platform: Platform, participant_index: u64, base: &CueConfig) -> Vec<Condition> {
    match platform {
        Platform::Vr => {
            let (a, b) = assign_test_sets(participant_index);
            [a, b].iter().map(|s| Condition::TestSet { test_set: s.id, cues: s.cue_config(base) }).collect()
        }
        Platform::Ar => {
            let (a, b) = assign_ar_condition(participant_index);
            [a, b].iter().map(|c| Condition::ArCondition { condition: *c, cues: c.cue_config(base) }).collect()
        }
        Platform::Web => Vec::new(),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogRecord {
    Create { session: Session },
    Events { session_id: String, events: Vec<CueEvent> },
}

struct Inner {
    sessions: BTreeMap<String, Session>,
    log: Option<File>,
}

impl Inner {
    fn apply(&mut self, record: LogRecord) {
        match record {
            LogRecord::Create { session } => {
                self.sessions.insert(session.id.clone(), session);
            }
            LogRecord::Events { session_id, events } => {
                if let Some(s) = self.sessions.get_mut(&session_id) {
                    s.events.extend(events);
                }
            }
        }
    }

    fn commit(&mut self, record: LogRecord) -> Result<(), SessionError> {
        if let Some(log) = &mut self.log {
            let mut line = serde_json::to_string(&record).expect("session records serialize");
            line.push('\n');
            log.write_all(line.as_bytes())?;
            log.flush()?;
        }
        self.apply(record);
        Ok(())
    }
}

/// All appends go through one lock, so events of a session are stored in
/// the order they were accepted.
pub struct SessionStore {
    inner: Mutex<Inner>,
    clock: Arc<dyn Clock>,
}

impl SessionStore {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self { inner: Mutex::new(Inner { sessions: BTreeMap::new(), log: None }), clock }
    }

    pub fn open(path: &Path, clock: Arc<dyn Clock>) -> Result<Self, SessionError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut inner = Inner { sessions: BTreeMap::new(), log: None };
        if path.exists() {
            for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: LogRecord = serde_json::from_str(&line)
                    .map_err(|e| SessionError::Corrupt { line: n + 1, reason: e.to_string() })?;
                inner.apply(record);
            }
        }
        inner.log = Some(OpenOptions::new().create(true).append(true).open(path)?);
        Ok(Self { inner: Mutex::new(inner), clock })
    }

    /// Creates `session-N`, N counting from 1.
    pub fn create(&self, participant_index: u64, platform: Platform, base: &CueConfig) -> Result<Session, SessionError> {
        let mut inner = self.inner.lock().unwrap();
        let session = Session {
            id: format!("session-{}", inner.sessions.len() + 1),
            participant_index,
            platform,
            assigned: assign(platform, participant_index, base),
            cues: *base,
            created_at: self.clock.now(),
            events: Vec::new(),
        };
        inner.commit(LogRecord::Create { session: session.clone() })?;
        Ok(session)
    }

    pub fn get(&self, id: &str) -> Option<Session> {
        self.inner.lock().unwrap().sessions.get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends a batch atomically: either every event is accepted or none.
    /// Times must be finite, non-negative and nondecreasing, continuing from
    /// the last stored event.
    pub fn append_events(&self, id: &str, mut events: Vec<CueEvent>) -> Result<usize, SessionError> {
        let mut inner = self.inner.lock().unwrap();
        let session = inner.sessions.get(id).ok_or_else(|| SessionError::UnknownSession(id.into()))?;
        let mut last = session.events.last().map_or(0.0, |e| e.t);
        for (index, e) in events.iter_mut().enumerate() {
            if e.session_id.is_empty() {
                e.session_id = id.to_string();
            } else if e.session_id != id {
                return Err(SessionError::WrongSession { index, expected: id.into(), found: e.session_id.clone() });
            }
            if !(e.t.is_finite() && e.t >= 0.0) {
                return Err(SessionError::NonMonotone { index, reason: format!("t = {} is not a valid time", e.t) });
            }
            if e.t < last {
                return Err(SessionError::NonMonotone { index, reason: format!("t = {} is earlier than {last}", e.t) });
            }
            last = e.t;
        }
        let n = events.len();
        if n > 0 {
            inner.commit(LogRecord::Events { session_id: id.to_string(), events })?;
        }
        Ok(n)
    }
}
