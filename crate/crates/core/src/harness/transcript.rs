use std::io::Write;

use serde::{Deserialize, Serialize};

/// One message of the thirteen-step authorization sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: u8,
    pub description: String,
    pub request_summary: String,
    pub response_summary: String,
    pub wall_latency_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowTranscript {
    pub steps: Vec<StepRecord>,
}

pub const STEP_DESCRIPTIONS: [&str; 13] = [
    "MCP request without token",
    "401 Unauthorized with WWW-Authenticate",
    "GET resource_metadata URI",
    "Resource metadata with authorization server URL",
    "GET /.well-known/oauth-protected-resource/<mcp path>",
    "Resource metadata with authorization server URL",
    "Authorization request (PKCE)",
    "Token request (PKCE)",
    "Access token (and claims)",
    "MCP request + Bearer token",
    "Token validation (JWKS)",
    "Validation result",
    "Authorized MCP response",
];

pub fn step_description(index: u8) -> &'static str {
    STEP_DESCRIPTIONS
        .get(usize::from(index).wrapping_sub(1))
        .copied()
        .unwrap_or("unknown step")
}

impl FlowTranscript {
    /// Append a step. Indices must be 1..=13 and strictly increasing.
    pub fn push(&mut self, index: u8, request: impl Into<String>, response: impl Into<String>, latency_us: u64) {
        assert!((1..=13).contains(&index), "step index {index} out of range");
        if let Some(last) = self.steps.last() {
            assert!(index > last.index, "step {index} after step {}", last.index);
        }
        self.steps.push(StepRecord {
            index,
            description: step_description(index).to_string(),
            request_summary: request.into(),
            response_summary: response.into(),
            wall_latency_us: latency_us,
        });
    }

    pub fn indices(&self) -> Vec<u8> {
        self.steps.iter().map(|s| s.index).collect()
    }

    pub fn step(&self, index: u8) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.index == index)
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for step in &self.steps {
            serde_json::to_writer(&mut out, step)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}
