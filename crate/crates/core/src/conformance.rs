//! Checks a harness run against the expected message sequence and the
//! server's console output.

use serde::Serialize;
use serde_json::Value;

use crate::eventlog::access_line;
use crate::harness::{FlowTranscript, HarnessClient, HarnessError, SequenceOutcome, TokenSource};
use crate::protocol::FORBIDDEN;
use crate::server::WELL_KNOWN_PATH;
use crate::token::mask_subject;

/// Process exit status of a conformance run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    /// The run completed but did not look as expected.
    ExpectationMismatch,
    /// Something could not be reached or the flow broke off.
    InfrastructureFailure,
}

impl Verdict {
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::InfrastructureFailure => 1,
            Verdict::ExpectationMismatch => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformanceReport {
    pub verdict: Verdict,
    pub checks: Vec<Check>,
    pub first_failing_step: Option<u8>,
    pub transcript: FlowTranscript,
    pub warm: bool,
}

impl ConformanceReport {
    /// One `PASS`/`FAIL` line per check.
    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                let mark = if c.passed { "PASS" } else { "FAIL" };
                if c.detail.is_empty() {
                    format!("{mark} {}", c.name)
                } else {
                    format!("{mark} {}: {}", c.name, c.detail)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ConformanceOptions {
    pub persona: String,
    pub tool: String,
    pub arguments: Value,
    /// The tool call is expected to come back as a policy deny.
    pub expect_deny: bool,
}

impl ConformanceOptions {
    pub fn new(persona: &str, tool: &str) -> Self {
        ConformanceOptions {
            persona: persona.to_string(),
            tool: tool.to_string(),
            arguments: serde_json::json!({ "query": "conformance" }),
            expect_deny: false,
        }
    }
}

/// Server lines a run must produce, in order. Other lines may interleave.
pub fn expected_log_sequence(subject: &str, warm: bool) -> Vec<String> {
    let masked = mask_subject(subject).unwrap_or_default();
    let mut lines = Vec::new();
    if !warm {
        lines.push(access_line("POST", "/mcp", 401, "Unauthorized"));
        lines.push(access_line("GET", WELL_KNOWN_PATH, 200, "OK"));
    }
    lines.push("Verifying token...".to_string());
    lines.push(format!("Authenticated user: {masked}"));
    lines.push(access_line("POST", "/mcp", 202, "Accepted"));
    lines.push(access_line("POST", "/mcp", 200, "OK"));
    lines
}

/// Position in `expected` of the first line not found, in order, in `actual`.
pub fn first_missing_in_order(actual: &[String], expected: &[String]) -> Option<usize> {
    let mut it = actual.iter();
    expected
        .iter()
        .position(|want| !it.by_ref().any(|line| line == want))
}

/// Indices of a complete cold or warm transcript.
pub fn expected_indices(warm: bool) -> Vec<u8> {
    if warm {
        (10..=13).collect()
    } else {
        (1..=13).collect()
    }
}

fn step_checks(transcript: &FlowTranscript) -> Vec<Check> {
    transcript
        .steps
        .iter()
        .map(|s| {
            Check::new(
                format!("step {:>2} {}", s.index, s.description),
                true,
                s.response_summary.clone(),
            )
        })
        .collect()
}

fn outcome_checks(outcome: &SequenceOutcome, options: &ConformanceOptions) -> Vec<Check> {
    let warm = outcome.token_source == TokenSource::Cached;
    let mut checks = Vec::new();
    let indices = outcome.transcript.indices();
    let want = expected_indices(warm);
    checks.push(Check::new(
        "transcript shape",
        indices == want,
        format!("steps {indices:?}"),
    ));

    let response = &outcome.response;
    let denied = response.as_error().is_some_and(|e| e.code == FORBIDDEN);
    let allowed = response
        .as_result()
        .is_some_and(|r| r.get("isError").and_then(Value::as_bool) != Some(true));
    let (passed, detail) = if options.expect_deny {
        (denied, "expected JSON-RPC -32001")
    } else {
        (allowed, "expected a non-error tool result")
    };
    let observed = match response.as_error() {
        Some(e) => format!("error {} {}", e.code, e.message),
        None => "result".to_string(),
    };
    checks.push(Check::new(
        format!("tools/call {} as {}", options.tool, options.persona),
        passed,
        if passed { observed } else { format!("{detail}, got {observed}") },
    ));
    checks
}

/// Check server lines against the expected order.
pub fn log_check(lines: &[String], subject: &str, warm: bool) -> Check {
    let expected = expected_log_sequence(subject, warm);
    match first_missing_in_order(lines, &expected) {
        None => Check::new("server log order", true, format!("{} lines in order", expected.len())),
        Some(i) => Check::new(
            "server log order",
            false,
            format!("missing or out of order: {:?}", expected[i]),
        ),
    }
}

/// Run the sequence and grade it. `server_log` reads the server's console
/// lines after the run, when they are available (self-contained mode).
pub async fn run_conformance(
    client: &HarnessClient,
    mcp_url: &str,
    options: &ConformanceOptions,
    server_log: Option<&dyn Fn() -> Vec<String>>,
) -> ConformanceReport {
    let outcome = client
        .run_sequence(mcp_url, &options.persona, &options.tool, options.arguments.clone())
        .await;
    let outcome = match outcome {
        Ok(outcome) => outcome,
        Err(e) => {
            let transcript = e.transcript().cloned().unwrap_or_default();
            let mut checks = step_checks(&transcript);
            let index = e.step_index();
            let name = match index {
                Some(i) => format!("step {i:>2} {}", crate::harness::step_description(i)),
                None => "sequence".to_string(),
            };
            checks.push(Check::new(name, false, e.to_string()));
            return ConformanceReport {
                verdict: Verdict::InfrastructureFailure,
                checks,
                first_failing_step: index.or(match e {
                    HarnessError::Unauthorized { .. } => Some(10),
                    _ => None,
                }),
                transcript,
                warm: false,
            };
        }
    };
    let warm = outcome.token_source == TokenSource::Cached;
    let mut checks = step_checks(&outcome.transcript);
    checks.extend(outcome_checks(&outcome, options));
    if let Some(read) = server_log {
        checks.push(log_check(&read(), &options.persona, warm));
    }
    let verdict = if checks.iter().all(|c| c.passed) {
        Verdict::Pass
    } else {
        Verdict::ExpectationMismatch
    };
    ConformanceReport {
        verdict,
        first_failing_step: checks
            .iter()
            .any(|c| !c.passed && c.name.starts_with("tools/call"))
            .then_some(13),
        checks,
        transcript: outcome.transcript,
        warm,
    }
}
