use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

use serde_json::Value;

fn mcpidg() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mcpidg"));
    cmd.args(["--log-level", "warn"]);
    cmd
}

fn run(args: &[&str]) -> Output {
    mcpidg().args(args).output().expect("spawn mcpidg")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn wait_for_port(port: u16) {
    let deadline = Instant::now() + Duration::from_secs(20);
    while TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(Instant::now() < deadline, "port {port} never opened");
        sleep(Duration::from_millis(50));
    }
}

fn terminate(mut child: Child) -> Option<i32> {
    Command::new("kill")
        .args(["-TERM", &child.id().to_string()])
        .status()
        .unwrap();
    child.wait().unwrap().code()
}

#[test]
fn self_contained_conformance_passes() {
    let out = run(&["conformance", "--self-contained"]);
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "{text}{}", stderr(&out));
    assert!(text.contains("PASS step 13"));
    assert!(text.contains("PASS server log order"));
    assert!(text.contains("verdict: pass (exit 0)"));
}

#[test]
fn unexpected_allow_is_a_mismatch() {
    let out = run(&[
        "conformance",
        "--self-contained",
        "--persona",
        "developer",
        "--tool",
        "docs_search",
        "--expect-deny",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL tools/call"));
}

#[test]
fn unreachable_server_is_an_infrastructure_failure() {
    let port = free_port();
    let url = format!("http://127.0.0.1:{port}/mcp");
    let out = run(&["conformance", "--mcp-url", &url]);
    assert_eq!(out.status.code(), Some(1), "{}", stdout(&out));
    assert!(stdout(&out).contains("FAIL step  1"), "{}", stdout(&out));
}

#[test]
fn repeated_runs_are_warm_and_transcript_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("steps.jsonl");
    let store = dir.path().join("tokens.json");
    let out = run(&[
        "conformance",
        "--self-contained",
        "--runs",
        "3",
        "--bearer",
        "body",
        "--token-store",
        store.to_str().unwrap(),
        "--transcript",
        transcript.to_str().unwrap(),
    ]);
    let text = stdout(&out);
    assert_eq!(out.status.code(), Some(0), "{text}");
    assert_eq!(text.matches("PASS warm start").count(), 2, "{text}");
    let lines: Vec<Value> = std::fs::read_to_string(&transcript)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let indices: Vec<u64> = lines.iter().map(|l| l["index"].as_u64().unwrap()).collect();
    assert_eq!(indices, vec![10, 11, 12, 13]);
    assert!(store.exists());
}

#[test]
fn policy_check_prints_the_matrix() {
    let policy = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/config/policy.json");
    let out = run(&["policy-check", policy.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["matrix"]["contractor"]["docs_search"], "allow");
    assert_eq!(report["matrix"]["contractor"]["code_search"], "deny");
    assert_eq!(report["matrix"]["operator"]["ops_status"], "allow");
    assert_eq!(report["roles"].as_array().unwrap().len(), 3);
}

#[test]
fn policy_check_rejects_unknown_tools() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.json");
    std::fs::write(
        &path,
        r#"{"rules":[{"role":"developer","granted_scopes":[],"allowed_tools":["deploy"]}]}"#,
    )
    .unwrap();
    let out = run(&["policy-check", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("deploy"));
    assert!(stdout(&out).is_empty());
}

#[test]
fn serve_mcp_names_a_bad_policy_path() {
    let out = run(&["serve-mcp", "--policy", "/definitely/missing/policy.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("/definitely/missing/policy.json"));
}

#[test]
fn bench_reports_json() {
    let out = run(&["bench", "--scenario", "cache_hit", "--iterations", "200", "--warmup", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let reports: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let hit = &reports[0];
    assert_eq!(hit["scenario"], "cache_hit");
    assert_eq!(hit["samples"], 200);
    assert!(hit["p50_us"].as_u64().unwrap() <= hit["p95_us"].as_u64().unwrap());

    let out = run(&["bench", "--scenario", "cache_miss", "--iterations", "3"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["bench", "--scenario", "warp"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn separate_processes_interoperate() {
    let (idp_port, mcp_port) = (free_port(), free_port());
    let issuer = format!("http://127.0.0.1:{idp_port}/realms/master");
    let resource = format!("http://127.0.0.1:{mcp_port}/mcp");
    let dir = tempfile::tempdir().unwrap();
    let audit = dir.path().join("audit.jsonl");
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        serde_json::json!({ "idp": { "audience": resource } }).to_string(),
    )
    .unwrap();

    let idp = mcpidg()
        .args(["--config", config.to_str().unwrap(), "serve-idp", "--issuer", &issuer])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mcp = mcpidg()
        .args([
            "serve-mcp",
            "--issuer",
            &issuer,
            "--resource",
            &resource,
            "--bind",
            &format!("127.0.0.1:{mcp_port}"),
            "--audit",
            audit.to_str().unwrap(),
        ])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    wait_for_port(idp_port);
    wait_for_port(mcp_port);

    let out = run(&["conformance", "--mcp-url", &resource, "--persona", "operator", "--tool", "ops_status"]);
    let deny = run(&[
        "conformance",
        "--mcp-url",
        &resource,
        "--persona",
        "operator",
        "--tool",
        "docs_search",
        "--expect-deny",
    ]);

    assert_eq!(terminate(mcp), Some(0));
    assert_eq!(terminate(idp), Some(0));
    assert_eq!(out.status.code(), Some(0), "{}", stdout(&out));
    assert_eq!(deny.status.code(), Some(0), "{}", stdout(&deny));
    let records = std::fs::read_to_string(&audit).unwrap();
    assert_eq!(records.lines().count(), 2);
}
