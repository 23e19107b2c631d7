use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "mcpidg", version, about = "Identity gateway for MCP servers")]
pub struct Cli {
    /// JSON file with optional "idp" and "server" sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Tracing filter, e.g. "info" or "mcpidg_core=debug".
    #[arg(long, global = true, default_value = "info", env = "MCPIDG_LOG")]
    pub log_level: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the mock identity provider.
    ServeIdp(ServeIdpArgs),
    /// Run the protected MCP server.
    ServeMcp(ServeMcpArgs),
    /// Drive the full authorization sequence and grade it.
    Conformance(ConformanceArgs),
    /// Measure validation and tool-call latency.
    Bench(BenchArgs),
    /// Load a policy file and print the role/tool matrix.
    PolicyCheck(PolicyCheckArgs),
}

#[derive(Debug, Args)]
pub struct ServeIdpArgs {
    #[arg(long)]
    pub issuer: Option<String>,
    /// host:port; defaults to the issuer's host and port.
    #[arg(long)]
    pub bind: Option<String>,
    /// Audience stamped into issued tokens.
    #[arg(long)]
    pub audience: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeMcpArgs {
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub issuer: Option<String>,
    /// Externally visible MCP endpoint URL.
    #[arg(long)]
    pub resource: Option<String>,
    #[arg(long)]
    pub bind: Option<String>,
    /// Audit log (JSON lines).
    #[arg(long)]
    pub audit: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Bearer {
    Header,
    Body,
}

#[derive(Debug, Args)]
pub struct ConformanceArgs {
    /// Start an identity provider and MCP server on loopback ports first.
    #[arg(long)]
    pub self_contained: bool,
    #[arg(long, default_value = "http://localhost:8000/mcp", conflicts_with = "self_contained")]
    pub mcp_url: String,
    #[arg(long, default_value = "developer")]
    pub persona: String,
    #[arg(long, default_value = "docs_search")]
    pub tool: String,
    /// JSON object passed as the tool arguments.
    #[arg(long)]
    pub arguments: Option<String>,
    /// The tool call must be refused by policy.
    #[arg(long)]
    pub expect_deny: bool,
    #[arg(long, value_enum, default_value = "header")]
    pub bearer: Bearer,
    /// Token cache file. Later runs reuse a cached token.
    #[arg(long)]
    pub token_store: Option<PathBuf>,
    /// Write the last run's step transcript here as JSON lines.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Repeat the sequence; runs after the first use the cached token.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub runs: u32,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// cache_hit, cache_miss, end_to_end or all.
    #[arg(long, default_value = "all")]
    pub scenario: String,
    /// Measured iterations per scenario; defaults to each scenario's minimum.
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = mcpidg_core::latency::DEFAULT_WARMUP)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub concurrency: u32,
}

#[derive(Debug, Args)]
pub struct PolicyCheckArgs {
    pub path: PathBuf,
}
