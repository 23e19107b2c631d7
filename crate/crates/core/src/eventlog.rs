//! Operator-facing log lines.
//!
//! The server's console output is part of its contract: the conformance run
//! checks the order of access-log and verification lines. Every line goes to
//! `tracing` and, when a [`RecordingLog`] is used, into memory as well.

use std::sync::{Arc, Mutex};

pub trait EventLog: Send + Sync {
    fn line(&self, line: &str);
}

/// Forwards lines to `tracing` at info level.
#[derive(Debug, Default, Clone, Copy)]
pub struct TracingLog;

impl EventLog for TracingLog {
    fn line(&self, line: &str) {
        tracing::info!("{line}");
    }
}

/// Keeps every line in order, and forwards to `tracing`.
#[derive(Debug, Default, Clone)]
pub struct RecordingLog {
    lines: Arc<Mutex<Vec<String>>>,
}

impl RecordingLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn lines(&self) -> Vec<String> {
        self.lines.lock().expect("log lock").clone()
    }

    pub fn clear(&self) {
        self.lines.lock().expect("log lock").clear();
    }
}

impl EventLog for RecordingLog {
    fn line(&self, line: &str) {
        tracing::info!("{line}");
        self.lines.lock().expect("log lock").push(line.to_string());
    }
}

/// Access-log line in the uvicorn-style layout, e.g.
/// `INFO  "POST /mcp HTTP/1.1" 401 Unauthorized`.
pub fn access_line(method: &str, path: &str, status: u16, reason: &str) -> String {
    format!("INFO  \"{method} {path} HTTP/1.1\" {status} {reason}")
}

/// Drops every line. For measurement loops.
#[derive(Debug, Default, Clone, Copy)]
pub struct DiscardLog;

impl EventLog for DiscardLog {
    fn line(&self, _line: &str) {}
}
