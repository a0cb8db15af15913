//! Append-only JSONL audit log shared by the authorization server and proxy.
//!
//! One JSON object per line. Sensitive material (code verifiers, signing
//! keys) must never be passed in; callers are responsible for redaction.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};

enum Sink {
    File(File),
    Memory(Vec<String>),
    Discard,
}

/// Thread-safe JSONL sink.
#[derive(Clone)]
pub struct AuditLog {
    sink: Arc<Mutex<Sink>>,
}

impl AuditLog {
    /// Append to a file, creating it if needed.
    pub fn to_file(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            sink: Arc::new(Mutex::new(Sink::File(file))),
        })
    }

    /// Keep records in memory; used by tests to assert on audit content.
    pub fn in_memory() -> Self {
        Self {
            sink: Arc::new(Mutex::new(Sink::Memory(Vec::new()))),
        }
    }

    /// Drop all records.
    pub fn discard() -> Self {
        Self {
            sink: Arc::new(Mutex::new(Sink::Discard)),
        }
    }

    pub fn append(&self, record: &serde_json::Value) {
        let line = record.to_string();
        let mut sink = self.sink.lock().expect("audit log poisoned");
        match &mut *sink {
            Sink::File(f) => {
                // Audit failures are logged, not fatal: the protocol decision
                // has already been made by the time we record it.
                if writeln!(f, "{line}").is_err() {
                    tracing::warn!("failed to write audit record");
                }
            }
            Sink::Memory(v) => v.push(line),
            Sink::Discard => {}
        }
    }

    /// All records captured so far (memory sink only; empty otherwise).
    pub fn records(&self) -> Vec<serde_json::Value> {
        let sink = self.sink.lock().expect("audit log poisoned");
        match &*sink {
            Sink::Memory(v) => v
                .iter()
                .map(|l| serde_json::from_str(l).expect("audit record is valid JSON"))
                .collect(),
            _ => Vec::new(),
        }
    }
}
