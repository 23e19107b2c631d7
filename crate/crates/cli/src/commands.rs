use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use mcpidg_core::conformance::{run_conformance, ConformanceOptions, Verdict};
use mcpidg_core::harness::BearerMode;
use mcpidg_core::idp::serve_idp as spawn_idp;
use mcpidg_core::latency::{run_bench, BenchOptions, Scenario};
use mcpidg_core::policy::{load_policy_file, policy_report, MatrixCell, PolicyDocument, PolicyTable};
use mcpidg_core::{
    load_policy, HarnessClient, HarnessConfig, LoopbackStack, McpServer, MockIdp, ServerHandle,
    StackOptions, TokenStore, ToolRegistry,
};

use crate::args::{BenchArgs, Bearer, ConformanceArgs, PolicyCheckArgs, ServeIdpArgs, ServeMcpArgs};
use crate::config::FileConfig;

const EXIT_OK: u8 = 0;
const EXIT_FAILURE: u8 = 1;

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

async fn run_until_signal(name: &str, handle: ServerHandle) -> u8 {
    shutdown_signal().await;
    tracing::info!("{name} shutting down");
    match handle.shutdown().await {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {name} did not stop cleanly: {e}");
            EXIT_FAILURE
        }
    }
}

pub async fn serve_idp(args: ServeIdpArgs, file: FileConfig) -> u8 {
    let mut config = file.idp;
    if let Some(issuer) = args.issuer {
        config.issuer = issuer;
    }
    if let Some(bind) = args.bind {
        config.bind = Some(bind);
    }
    if let Some(audience) = args.audience {
        config.audience = audience;
    }
    let address = match config.bind_address() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    let listener = match tokio::net::TcpListener::bind(&address).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot bind {address}: {e}");
            return EXIT_FAILURE;
        }
    };
    let idp = Arc::new(MockIdp::new(config));
    let handle = match spawn_idp(idp.clone(), listener) {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: cannot serve on {address}: {e}");
            return EXIT_FAILURE;
        }
    };
    tracing::info!("identity provider {} listening on {}", idp.issuer(), handle.local_addr());
    run_until_signal("identity provider", handle).await
}

fn load_server_policy(path: Option<&Path>, registry: &ToolRegistry) -> Result<PolicyTable, String> {
    match path {
        Some(path) => load_policy_file(path, registry).map_err(|e| format!("policy {}: {e}", path.display())),
        None => load_policy(&PolicyDocument::shipped(), registry).map_err(|e| e.to_string()),
    }
}

pub async fn serve_mcp(args: ServeMcpArgs, file: FileConfig) -> u8 {
    let mut config = file.server;
    config.apply_env(|key| std::env::var(key).ok());
    if let Some(policy) = args.policy {
        config.policy_path = Some(policy);
    }
    if let Some(issuer) = args.issuer {
        config.issuer_url = issuer;
    }
    if let Some(resource) = args.resource {
        config.resource_url = resource;
    }
    if let Some(bind) = args.bind {
        config.bind_address = bind;
    }
    if let Some(audit) = args.audit {
        config.audit_sink = audit;
    }

    let registry = Arc::new(ToolRegistry::stub());
    let policy = match load_server_policy(config.policy_path.as_deref(), &registry) {
        Ok(p) => p,
        Err(message) => {
            eprintln!("error: {message}");
            return EXIT_FAILURE;
        }
    };
    let server = Arc::new(McpServer::new(config, policy, registry));
    let handle = match server.clone().serve().await {
        Ok(h) => h,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_FAILURE;
        }
    };
    tracing::info!(
        "{} listening on {} (resource {}, issuer {})",
        server.config().server_name,
        handle.local_addr(),
        server.config().resource_url,
        server.config().issuer_url
    );
    run_until_signal("MCP server", handle).await
}

fn verdict_name(verdict: Verdict) -> &'static str {
    match verdict {
        Verdict::Pass => "pass",
        Verdict::ExpectationMismatch => "expectation mismatch",
        Verdict::InfrastructureFailure => "infrastructure failure",
    }
}

pub async fn conformance(args: ConformanceArgs) -> u8 {
    let started = Instant::now();
    let mut options = ConformanceOptions::new(&args.persona, &args.tool);
    options.expect_deny = args.expect_deny;
    if let Some(raw) = &args.arguments {
        match serde_json::from_str(raw) {
            Ok(v) => options.arguments = v,
            Err(e) => {
                eprintln!("error: --arguments is not JSON: {e}");
                return EXIT_FAILURE;
            }
        }
    }

    let stack = if args.self_contained {
        match LoopbackStack::start(StackOptions::default()).await {
            Ok(s) => Some(s),
            Err(e) => {
                eprintln!("error: cannot start loopback stack: {e}");
                return Verdict::InfrastructureFailure.exit_code() as u8;
            }
        }
    } else {
        None
    };
    let mcp_url = stack.as_ref().map_or(args.mcp_url.clone(), |s| s.mcp_url.clone());

    // Repeated runs need somewhere to keep the token between them.
    let scratch = if args.token_store.is_none() && args.runs > 1 {
        match tempfile::tempdir() {
            Ok(d) => Some(d),
            Err(e) => {
                eprintln!("error: cannot create token store: {e}");
                return EXIT_FAILURE;
            }
        }
    } else {
        None
    };
    let store_path = args
        .token_store
        .clone()
        .or_else(|| scratch.as_ref().map(|d| d.path().join("tokens.json")));

    let config = HarnessConfig {
        bearer_mode: match args.bearer {
            Bearer::Header => BearerMode::Header,
            Bearer::Body => BearerMode::Body,
        },
        ..HarnessConfig::default()
    };
    let mut client = HarnessClient::new(config);
    if let Some(path) = store_path {
        client = client.with_store(TokenStore::new(path));
    }

    let mut verdict = Verdict::Pass;
    let mut first_failing_step = None;
    for run in 1..=args.runs {
        let idp_before = stack.as_ref().map(|s| {
            s.log.clear();
            s.idp.stats().snapshot()
        });
        let read_log = || stack.as_ref().map(|s| s.log.lines()).unwrap_or_default();
        let reader: Option<&dyn Fn() -> Vec<String>> = match stack {
            Some(_) => Some(&read_log),
            None => None,
        };
        let report = run_conformance(&client, &mcp_url, &options, reader).await;

        println!("run {run} ({})", if report.warm { "warm" } else { "cold" });
        for line in report.lines() {
            println!("{line}");
        }
        let mut run_verdict = report.verdict;
        if run > 1 && run_verdict == Verdict::Pass {
            let idp_quiet = match (&stack, idp_before) {
                (Some(s), Some(before)) => s.idp.stats().snapshot() == before,
                _ => true,
            };
            let passed = report.warm && idp_quiet;
            println!(
                "{} warm start: {}",
                if passed { "PASS" } else { "FAIL" },
                if !report.warm {
                    "cached token was not used"
                } else if !idp_quiet {
                    "identity provider was contacted"
                } else {
                    "no identity provider requests"
                }
            );
            if !passed {
                run_verdict = Verdict::ExpectationMismatch;
            }
        }
        if let Some(path) = &args.transcript {
            let written = std::fs::File::create(path).and_then(|mut f| report.transcript.write_jsonl(&mut f));
            if let Err(e) = written {
                eprintln!("error: cannot write transcript {}: {e}", path.display());
            }
        }
        if verdict == Verdict::Pass && run_verdict != Verdict::Pass {
            verdict = run_verdict;
            first_failing_step = report.first_failing_step;
        }
        if run_verdict == Verdict::InfrastructureFailure {
            break;
        }
    }

    if let Some(step) = first_failing_step {
        println!("first failing step: {step}");
    }
    println!(
        "verdict: {} (exit {}) in {} ms",
        verdict_name(verdict),
        verdict.exit_code(),
        started.elapsed().as_millis()
    );
    if let Some(stack) = stack {
        if let Err(e) = stack.shutdown().await {
            tracing::warn!("loopback stack shutdown: {e}");
        }
    }
    verdict.exit_code() as u8
}

pub async fn bench(args: BenchArgs) -> u8 {
    let scenarios: Vec<Scenario> = if args.scenario == "all" {
        Scenario::ALL.to_vec()
    } else {
        match Scenario::parse(&args.scenario) {
            Some(s) => vec![s],
            None => {
                eprintln!(
                    "error: unknown scenario {:?}; expected cache_hit, cache_miss, end_to_end or all",
                    args.scenario
                );
                return EXIT_FAILURE;
            }
        }
    };
    let options = BenchOptions {
        iterations: args.iterations,
        warmup: args.warmup,
        concurrency: args.concurrency as usize,
    };
    match run_bench(&scenarios, &options).await {
        Ok(reports) => {
            println!("{}", serde_json::to_string_pretty(&reports).expect("report serializes"));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

pub fn policy_check(args: PolicyCheckArgs) -> u8 {
    let registry = ToolRegistry::stub();
    let table = match load_policy_file(&args.path, &registry) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: policy {}: {e}", args.path.display());
            return EXIT_FAILURE;
        }
    };
    let report = policy_report(&table, &registry);
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));

    let width = report.roles.iter().map(String::len).max().unwrap_or(4).max(4);
    let mut header = format!("{:width$}", "");
    for tool in &report.tools {
        header.push_str(&format!("  {tool}"));
    }
    eprintln!("{header}");
    for (role, row) in &report.matrix {
        let mut line = format!("{role:width$}");
        for tool in &report.tools {
            let cell = match row.get(tool) {
                Some(MatrixCell::Allow) => "allow",
                Some(MatrixCell::ScopeGap) => "gap",
                _ => "deny",
            };
            line.push_str(&format!("  {cell:<w$}", w = tool.len()));
        }
        eprintln!("{line}");
    }
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    EXIT_OK
}
