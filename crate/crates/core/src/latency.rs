//! Desk-scale latency measurements of bearer validation and authenticated
//! tool calls, run against a [`LoopbackStack`].

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::json;
use thiserror::Error;
use tokio::task::JoinSet;

use crate::clock::{Clock, SystemClock};
use crate::eventlog::DiscardLog;
use crate::harness::{HarnessClient, HarnessConfig};
use crate::pkce::PkcePair;
use crate::stack::{LoopbackStack, StackOptions};
use crate::token::{verify_bearer, BearerConfig, CacheStatsSnapshot, HttpJwksFetcher, JwksCache};

pub const DEFAULT_WARMUP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    CacheHit,
    CacheMiss,
    EndToEndToolCall,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::CacheHit, Scenario::CacheMiss, Scenario::EndToEndToolCall];

    pub fn minimum_samples(self) -> usize {
        match self {
            Scenario::CacheHit => 200,
            Scenario::CacheMiss => 20,
            Scenario::EndToEndToolCall => 50,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::CacheHit => "cache_hit",
            Scenario::CacheMiss => "cache_miss",
            Scenario::EndToEndToolCall => "end_to_end_tool_call",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "cache_hit" => Some(Scenario::CacheHit),
            "cache_miss" => Some(Scenario::CacheMiss),
            "end_to_end" | "end_to_end_tool_call" => Some(Scenario::EndToEndToolCall),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub scenario: Scenario,
    pub samples: usize,
    pub p50_us: u64,
    pub p95_us: u64,
    pub mean_us: u64,
    pub counter_snapshot: CacheStatsSnapshot,
    pub concurrency: usize,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("{scenario} needs at least {minimum} samples, got {samples}")]
    InsufficientSamples {
        scenario: &'static str,
        samples: usize,
        minimum: usize,
    },
    #[error("bench setup failed: {0}")]
    Setup(String),
    #[error("sample failed: {0}")]
    Sample(String),
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    /// Measured iterations; `None` uses the scenario minimum.
    pub iterations: Option<usize>,
    pub warmup: usize,
    pub concurrency: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            iterations: None,
            warmup: DEFAULT_WARMUP,
            concurrency: 1,
        }
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[u64], p: f64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn summarize(scenario: Scenario, mut samples: Vec<u64>, counters: CacheStatsSnapshot, concurrency: usize) -> BenchReport {
    samples.sort_unstable();
    let mean = if samples.is_empty() {
        0
    } else {
        samples.iter().sum::<u64>() / samples.len() as u64
    };
    BenchReport {
        scenario,
        samples: samples.len(),
        p50_us: percentile(&samples, 50.0),
        p95_us: percentile(&samples, 95.0),
        mean_us: mean,
        counter_snapshot: counters,
        concurrency,
    }
}

/// Everything a measurement needs: a running stack and a real token.
pub struct BenchFixture {
    pub stack: LoopbackStack,
    pub client: Arc<HarnessClient>,
    pub token: String,
}

impl BenchFixture {
    pub async fn start() -> Result<Self, BenchError> {
        let stack = LoopbackStack::start(StackOptions::default())
            .await
            .map_err(|e| BenchError::Setup(e.to_string()))?;
        let client = Arc::new(HarnessClient::new(HarnessConfig::default()));
        let discovery = client
            .discover(stack.issuer())
            .await
            .map_err(|e| BenchError::Setup(e.to_string()))?;
        let scopes: BTreeSet<String> = ["openid", "profile", "mcp.docs.read", "mcp.code.search"]
            .map(String::from)
            .into();
        let token = client
            .acquire_token(&discovery, "developer", &PkcePair::generate(), &scopes)
            .await
            .map_err(|e| BenchError::Setup(e.to_string()))?;
        Ok(BenchFixture {
            stack,
            client,
            token: token.access_token,
        })
    }

    pub async fn shutdown(self) {
        if let Err(e) = self.stack.shutdown().await {
            tracing::warn!(error = %e, "bench stack shutdown");
        }
    }

    /// Cache used by the scenario: the server's own for hits, a
    /// zero-TTL cache on the same IdP for misses.
    fn cache_for(&self, scenario: Scenario) -> Arc<JwksCache> {
        match scenario {
            Scenario::CacheMiss => Arc::new(JwksCache::new(
                Duration::ZERO,
                Arc::new(HttpJwksFetcher::default()),
            )),
            _ => self.stack.server.jwks_cache().clone(),
        }
    }

    pub async fn run(&self, scenario: Scenario, options: &BenchOptions) -> Result<BenchReport, BenchError> {
        let minimum = scenario.minimum_samples();
        let iterations = options.iterations.unwrap_or(minimum);
        if iterations < minimum {
            return Err(BenchError::InsufficientSamples {
                scenario: scenario.as_str(),
                samples: iterations,
                minimum,
            });
        }
        let concurrency = options.concurrency.max(1);
        let cache = self.cache_for(scenario);
        let probe = Probe {
            scenario,
            cache: cache.clone(),
            bearer: self.stack.server.bearer_config().clone(),
            client: self.client.clone(),
            mcp_url: self.stack.mcp_url.clone(),
            token: self.token.clone(),
        };
        for _ in 0..options.warmup {
            probe.sample().await?;
        }
        let before = cache.stats().snapshot();

        let mut workers = JoinSet::new();
        for worker in 0..concurrency {
            let share = iterations / concurrency + usize::from(worker < iterations % concurrency);
            let probe = probe.clone();
            workers.spawn(async move {
                let mut samples = Vec::with_capacity(share);
                for _ in 0..share {
                    samples.push(probe.sample().await?);
                }
                Ok::<_, BenchError>(samples)
            });
        }
        let mut samples = Vec::with_capacity(iterations);
        while let Some(joined) = workers.join_next().await {
            samples.extend(joined.map_err(|e| BenchError::Sample(e.to_string()))??);
        }
        let after = cache.stats().snapshot();
        let counters = CacheStatsSnapshot {
            hits: after.hits - before.hits,
            misses: after.misses - before.misses,
        };
        Ok(summarize(scenario, samples, counters, concurrency))
    }
}

#[derive(Clone)]
struct Probe {
    scenario: Scenario,
    cache: Arc<JwksCache>,
    bearer: BearerConfig,
    client: Arc<HarnessClient>,
    mcp_url: String,
    token: String,
}

impl Probe {
    /// One timed operation, in microseconds.
    async fn sample(&self) -> Result<u64, BenchError> {
        match self.scenario {
            Scenario::CacheHit | Scenario::CacheMiss => {
                let started = Instant::now();
                verify_bearer(&self.token, &self.bearer, &self.cache, SystemClock.now(), &DiscardLog)
                    .await
                    .map_err(|e| BenchError::Sample(e.to_string()))?;
                Ok(started.elapsed().as_micros() as u64)
            }
            Scenario::EndToEndToolCall => {
                let started = Instant::now();
                let reply = self
                    .client
                    .call_tool(&self.mcp_url, &self.token, "docs_search", json!({ "query": "bench" }))
                    .await
                    .map_err(|e| BenchError::Sample(e.to_string()))?;
                let elapsed = started.elapsed().as_micros() as u64;
                if let Some(e) = reply.as_error() {
                    return Err(BenchError::Sample(format!("tool call failed: {} {}", e.code, e.message)));
                }
                Ok(elapsed)
            }
        }
    }
}

/// Start a fixture, run the scenarios, shut down.
pub async fn run_bench(scenarios: &[Scenario], options: &BenchOptions) -> Result<Vec<BenchReport>, BenchError> {
    let fixture = BenchFixture::start().await?;
    let mut reports = Vec::new();
    for scenario in scenarios {
        match fixture.run(*scenario, options).await {
            Ok(report) => reports.push(report),
            Err(e) => {
                fixture.shutdown().await;
                return Err(e);
            }
        }
    }
    fixture.shutdown().await;
    Ok(reports)
}
