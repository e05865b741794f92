//! Shared MPC parameter set with atomic whole-set swaps and a journal of
//! every change.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::sync::{Arc, Mutex, RwLock};

use langdrive_core::adapter::{validate_and_clamp, ParamUpdate, RawParams};
use langdrive_core::mpc::{MpcParams, ParamSchema};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Adapter,
    Cli,
    Ui,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub t: f64,
    pub source: Source,
    pub update: BTreeMap<String, f64>,
    pub applied: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

const JOURNAL_MEMORY: usize = 1000;

pub struct ParamStore {
    current: RwLock<Arc<MpcParams>>,
    journal: Mutex<VecDeque<JournalEntry>>,
    sink: Mutex<Option<Box<dyn Write + Send>>>,
}

impl std::fmt::Debug for ParamStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParamStore").field("current", &*self.snapshot()).finish()
    }
}

impl ParamStore {
    pub fn new(initial: MpcParams) -> Self {
        Self { current: RwLock::new(Arc::new(initial)), journal: Mutex::new(VecDeque::new()), sink: Mutex::new(None) }
    }

    /// Also appends every journal entry as a JSON line to `sink`.
    pub fn with_sink(self, sink: Box<dyn Write + Send>) -> Self {
        *self.sink.lock().unwrap() = Some(sink);
        self
    }

    pub fn snapshot(&self) -> Arc<MpcParams> {
        self.current.read().unwrap().clone()
    }

    /// Writes a validated update over the current set in one swap and
    /// journals it. Empty updates are journaled too but change nothing.
    pub fn apply(&self, update: &ParamUpdate, source: Source, t: f64) -> JournalEntry {
        let mut guard = self.current.write().unwrap();
        let next = update.apply_to(&guard);
        debug_assert!(next.validate().is_ok());
        if next != **guard {
            *guard = Arc::new(next);
        }
        drop(guard);
        let entry = JournalEntry {
            t,
            source,
            update: update.raw.clone(),
            applied: update.accepted.clone(),
            warnings: update.warnings.clone(),
        };
        self.record(entry.clone());
        entry
    }

    /// Validates and clamps a raw map against the current set, then applies it.
    pub fn apply_raw(&self, raw: &RawParams, source: Source, t: f64) -> (ParamUpdate, JournalEntry) {
        let up = validate_and_clamp(raw, &ParamSchema, &self.snapshot());
        let entry = self.apply(&up, source, t);
        (up, entry)
    }

    fn record(&self, entry: JournalEntry) {
        if let Some(sink) = self.sink.lock().unwrap().as_mut() {
            if let Ok(line) = serde_json::to_string(&entry) {
                if writeln!(sink, "{line}").and_then(|_| sink.flush()).is_err() {
                    tracing::warn!("could not write parameter journal");
                }
            }
        }
        let mut j = self.journal.lock().unwrap();
        j.push_back(entry);
        if j.len() > JOURNAL_MEMORY {
            j.pop_front();
        }
    }

    pub fn journal(&self) -> Vec<JournalEntry> {
        self.journal.lock().unwrap().iter().cloned().collect()
    }
}
