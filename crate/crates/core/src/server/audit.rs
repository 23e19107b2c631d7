use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditDecision {
    Unauthenticated,
    Allow,
    Deny,
}

/// One line of the audit log. The subject is stored unmasked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp: String,
    pub request_id: String,
    pub subject: String,
    pub roles: BTreeSet<String>,
    pub scopes: BTreeSet<String>,
    pub tool: String,
    pub decision: AuditDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deny_reason: Option<String>,
    pub validation_latency_us: u64,
    pub total_latency_us: u64,
}

#[derive(Debug, Error)]
#[error("audit sink {path}: {source}")]
pub struct AuditSinkFailure {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

#[derive(Debug)]
enum Target {
    File {
        path: PathBuf,
        file: Mutex<Option<File>>,
    },
    Memory(Mutex<Vec<AuditRecord>>),
}

/// Append-only JSON Lines sink. Appends are serialized; each line is written
/// with a single `write_all` before the call returns.
#[derive(Debug)]
pub struct AuditSink {
    target: Target,
}

impl AuditSink {
    /// The file is opened on first append, so an unwritable path surfaces
    /// as a failed request rather than a failed start.
    pub fn file(path: impl Into<PathBuf>) -> Self {
        AuditSink {
            target: Target::File {
                path: path.into(),
                file: Mutex::new(None),
            },
        }
    }

    pub fn memory() -> Self {
        AuditSink {
            target: Target::Memory(Mutex::default()),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match &self.target {
            Target::File { path, .. } => Some(path),
            Target::Memory(_) => None,
        }
    }

    pub fn append(&self, record: &AuditRecord) -> Result<(), AuditSinkFailure> {
        match &self.target {
            Target::Memory(records) => {
                records.lock().expect("audit lock").push(record.clone());
                Ok(())
            }
            Target::File { path, file } => {
                let fail = |source| AuditSinkFailure {
                    path: path.clone(),
                    source,
                };
                let mut line = serde_json::to_vec(record).expect("audit record serializes");
                line.push(b'\n');
                let mut guard = file.lock().expect("audit lock");
                if guard.is_none() {
                    let opened = OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(path)
                        .map_err(fail)?;
                    *guard = Some(opened);
                }
                let handle = guard.as_mut().expect("opened above");
                handle.write_all(&line).map_err(fail)?;
                handle.flush().map_err(fail)
            }
        }
    }

    /// Records written so far (reads the file back for file sinks).
    pub fn records(&self) -> std::io::Result<Vec<AuditRecord>> {
        match &self.target {
            Target::Memory(records) => Ok(records.lock().expect("audit lock").clone()),
            Target::File { path, .. } => read_audit_file(path),
        }
    }
}

pub fn read_audit_file(path: &Path) -> std::io::Result<Vec<AuditRecord>> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize, decision: AuditDecision) -> AuditRecord {
        AuditRecord {
            timestamp: "2025-11-01T00:00:00Z".into(),
            request_id: format!("req-{i}"),
            subject: "alice".into(),
            roles: ["developer".to_string()].into(),
            scopes: ["openid".to_string()].into(),
            tool: "docs_search".into(),
            decision,
            deny_reason: None,
            validation_latency_us: 10,
            total_latency_us: 20,
        }
    }

    #[test]
    fn allow_line_carries_unmasked_subject() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let sink = AuditSink::file(&path);
        sink.append(&record(0, AuditDecision::Allow)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains(r#""decision":"allow""#));
        assert!(text.contains(r#""subject":"alice""#));
        assert!(!text.contains("deny_reason"));
    }

    #[test]
    fn thousand_appends_thousand_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.jsonl");
        let sink = AuditSink::file(&path);
        for i in 0..1000 {
            sink.append(&record(i, AuditDecision::Deny)).unwrap();
        }
        let records = sink.records().unwrap();
        assert_eq!(records.len(), 1000);
        assert_eq!(records[999].request_id, "req-999");
    }

    #[test]
    fn unwritable_path_fails() {
        let dir = tempfile::tempdir().unwrap();
        // a directory cannot be opened for append
        let sink = AuditSink::file(dir.path());
        assert!(sink.append(&record(0, AuditDecision::Allow)).is_err());
    }
}
