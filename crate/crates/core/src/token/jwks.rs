use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rsa::traits::PublicKeyParts;
use rsa::{BigUint, RsaPublicKey};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{TokenError, RS256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Jwk {
    pub kid: String,
    pub kty: String,
    pub alg: String,
    #[serde(rename = "use")]
    pub key_use: String,
    pub n: String,
    pub e: String,
}

impl Jwk {
    pub fn from_public_key(kid: &str, key: &RsaPublicKey) -> Self {
        Jwk {
            kid: kid.to_string(),
            kty: "RSA".to_string(),
            alg: RS256.to_string(),
            key_use: "sig".to_string(),
            n: URL_SAFE_NO_PAD.encode(key.n().to_bytes_be()),
            e: URL_SAFE_NO_PAD.encode(key.e().to_bytes_be()),
        }
    }

    pub fn to_public_key(&self) -> Result<RsaPublicKey, TokenError> {
        if self.kty != "RSA" {
            return Err(TokenError::MalformedToken(format!("unsupported kty {}", self.kty)));
        }
        let decode = |field: &str| {
            URL_SAFE_NO_PAD
                .decode(field)
                .map(|bytes| BigUint::from_bytes_be(&bytes))
                .map_err(|e| TokenError::MalformedToken(format!("bad JWK component: {e}")))
        };
        RsaPublicKey::new(decode(&self.n)?, decode(&self.e)?)
            .map_err(|e| TokenError::MalformedToken(format!("bad RSA key: {e}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JwkSet {
    pub keys: Vec<Jwk>,
}

impl JwkSet {
    pub fn find(&self, kid: &str) -> Option<&Jwk> {
        self.keys.iter().find(|k| k.kid == kid)
    }

    pub fn kids(&self) -> Vec<&str> {
        self.keys.iter().map(|k| k.kid.as_str()).collect()
    }
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("http error: {0}")]
    Http(String),
    #[error("unexpected status {0}")]
    Status(u16),
    #[error("invalid document: {0}")]
    Document(String),
}

/// Source of an issuer's published key set.
#[async_trait]
pub trait JwksFetcher: Send + Sync {
    async fn fetch(&self, issuer: &str) -> Result<JwkSet, FetchError>;
}

/// Resolves `jwks_uri` through the issuer's OIDC discovery document, then
/// fetches the key set. The discovered `jwks_uri` is remembered per issuer.
#[derive(Debug, Clone)]
pub struct HttpJwksFetcher {
    client: reqwest::Client,
    jwks_uris: Arc<Mutex<HashMap<String, String>>>,
}

impl Default for HttpJwksFetcher {
    fn default() -> Self {
        Self::new(reqwest::Client::new())
    }
}

impl HttpJwksFetcher {
    pub fn new(client: reqwest::Client) -> Self {
        HttpJwksFetcher {
            client,
            jwks_uris: Arc::default(),
        }
    }

    async fn get_json(&self, url: &str) -> Result<serde_json::Value, FetchError> {
        let resp = self
            .client
            .get(url)
            .send()
            .await
            .map_err(|e| FetchError::Http(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(FetchError::Status(resp.status().as_u16()));
        }
        resp.json()
            .await
            .map_err(|e| FetchError::Document(e.to_string()))
    }

    async fn jwks_uri(&self, issuer: &str) -> Result<String, FetchError> {
        if let Some(uri) = self.jwks_uris.lock().expect("jwks uri lock").get(issuer) {
            return Ok(uri.clone());
        }
        let url = format!(
            "{}/.well-known/openid-configuration",
            issuer.trim_end_matches('/')
        );
        let doc = self.get_json(&url).await?;
        if doc.get("issuer").and_then(|v| v.as_str()) != Some(issuer) {
            return Err(FetchError::Document(
                "discovery issuer does not match".into(),
            ));
        }
        let uri = doc
            .get("jwks_uri")
            .and_then(|v| v.as_str())
            .ok_or_else(|| FetchError::Document("discovery lacks jwks_uri".into()))?
            .to_string();
        self.jwks_uris
            .lock()
            .expect("jwks uri lock")
            .insert(issuer.to_string(), uri.clone());
        Ok(uri)
    }
}

#[async_trait]
impl JwksFetcher for HttpJwksFetcher {
    async fn fetch(&self, issuer: &str) -> Result<JwkSet, FetchError> {
        let uri = self.jwks_uri(issuer).await?;
        let doc = self.get_json(&uri).await?;
        serde_json::from_value(doc).map_err(|e| FetchError::Document(e.to_string()))
    }
}

const MAX_LATENCY_SAMPLES: usize = 100_000;

#[derive(Debug, Default)]
pub struct CacheStats {
    hits: AtomicU64,
    misses: AtomicU64,
    hit_latencies: Mutex<Vec<Duration>>,
    miss_latencies: Mutex<Vec<Duration>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStatsSnapshot {
    pub hits: u64,
    pub misses: u64,
}

impl CacheStats {
    fn record(&self, hit: bool, elapsed: Duration) {
        let (counter, samples) = if hit {
            (&self.hits, &self.hit_latencies)
        } else {
            (&self.misses, &self.miss_latencies)
        };
        counter.fetch_add(1, Ordering::Relaxed);
        let mut samples = samples.lock().expect("latency lock");
        if samples.len() < MAX_LATENCY_SAMPLES {
            samples.push(elapsed);
        }
    }

    pub fn snapshot(&self) -> CacheStatsSnapshot {
        CacheStatsSnapshot {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn hit_latencies(&self) -> Vec<Duration> {
        self.hit_latencies.lock().expect("latency lock").clone()
    }

    pub fn miss_latencies(&self) -> Vec<Duration> {
        self.miss_latencies.lock().expect("latency lock").clone()
    }
}

#[derive(Debug, Clone)]
struct CachedKeys {
    keys: Arc<JwkSet>,
    fetched_at: Instant,
}

/// Per-issuer JWKS cache.
///
/// Entries older than `ttl` are never used. Concurrent misses for one issuer
/// coalesce into a single fetch; hits only take a shared read lock.
pub struct JwksCache {
    ttl: Duration,
    fetcher: Arc<dyn JwksFetcher>,
    entries: RwLock<HashMap<String, CachedKeys>>,
    inflight: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    stats: CacheStats,
}

impl std::fmt::Debug for JwksCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JwksCache")
            .field("ttl", &self.ttl)
            .field("stats", &self.stats.snapshot())
            .finish()
    }
}

impl JwksCache {
    pub const DEFAULT_TTL: Duration = Duration::from_secs(300);

    pub fn new(ttl: Duration, fetcher: Arc<dyn JwksFetcher>) -> Self {
        JwksCache {
            ttl,
            fetcher,
            entries: RwLock::default(),
            inflight: Mutex::default(),
            stats: CacheStats::default(),
        }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    fn fresh(&self, issuer: &str) -> Option<CachedKeys> {
        let entries = self.entries.read().expect("cache lock");
        entries
            .get(issuer)
            .filter(|e| e.fetched_at.elapsed() < self.ttl)
            .cloned()
    }

    fn fetch_lock(&self, issuer: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.inflight
            .lock()
            .expect("inflight lock")
            .entry(issuer.to_string())
            .or_default()
            .clone()
    }

    async fn fetch_and_store(&self, issuer: &str) -> Result<CachedKeys, TokenError> {
        let keys = self
            .fetcher
            .fetch(issuer)
            .await
            .map_err(|e| TokenError::JwksUnreachable(e.to_string()))?;
        let entry = CachedKeys {
            keys: Arc::new(keys),
            fetched_at: Instant::now(),
        };
        self.entries
            .write()
            .expect("cache lock")
            .insert(issuer.to_string(), entry.clone());
        Ok(entry)
    }

    async fn lookup(&self, issuer: &str) -> Result<CachedKeys, TokenError> {
        let start = Instant::now();
        if let Some(entry) = self.fresh(issuer) {
            self.stats.record(true, start.elapsed());
            return Ok(entry);
        }
        let lock = self.fetch_lock(issuer);
        let _guard = lock.lock().await;
        // another task may have completed the fetch while we waited
        if let Some(entry) = self.fresh(issuer) {
            self.stats.record(true, start.elapsed());
            return Ok(entry);
        }
        let result = self.fetch_and_store(issuer).await;
        self.stats.record(false, start.elapsed());
        result
    }

    /// Refetch unless someone already refreshed after `seen`.
    async fn refresh_after(&self, issuer: &str, seen: Instant) -> Result<CachedKeys, TokenError> {
        let start = Instant::now();
        let lock = self.fetch_lock(issuer);
        let _guard = lock.lock().await;
        let newer = self
            .entries
            .read()
            .expect("cache lock")
            .get(issuer)
            .filter(|e| e.fetched_at > seen)
            .cloned();
        if let Some(entry) = newer {
            self.stats.record(true, start.elapsed());
            return Ok(entry);
        }
        let result = self.fetch_and_store(issuer).await;
        self.stats.record(false, start.elapsed());
        result
    }

    pub async fn get_keys(&self, issuer: &str) -> Result<Arc<JwkSet>, TokenError> {
        self.lookup(issuer).await.map(|e| e.keys)
    }

    /// Lookup returning the fetch time, for use with [`Self::force_refresh`].
    pub async fn get_keys_with_age(&self, issuer: &str) -> Result<(Arc<JwkSet>, Instant), TokenError> {
        self.lookup(issuer).await.map(|e| (e.keys, e.fetched_at))
    }

    /// Bypass the ttl once, e.g. after an unknown kid. Coalesces with any
    /// refresh that completed after `seen`.
    pub async fn force_refresh(&self, issuer: &str, seen: Instant) -> Result<Arc<JwkSet>, TokenError> {
        self.refresh_after(issuer, seen).await.map(|e| e.keys)
    }

    pub fn invalidate(&self, issuer: &str) {
        self.entries.write().expect("cache lock").remove(issuer);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    #[derive(Default)]
    struct CountingFetcher {
        calls: AtomicUsize,
        fail: bool,
        delay: Duration,
    }

    #[async_trait]
    impl JwksFetcher for CountingFetcher {
        async fn fetch(&self, _issuer: &str) -> Result<JwkSet, FetchError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if !self.delay.is_zero() {
                tokio::time::sleep(self.delay).await;
            }
            if self.fail {
                return Err(FetchError::Status(500));
            }
            Ok(JwkSet {
                keys: vec![Jwk {
                    kid: format!("k{n}"),
                    kty: "RSA".into(),
                    alg: RS256.into(),
                    key_use: "sig".into(),
                    n: "AQAB".into(),
                    e: "AQAB".into(),
                }],
            })
        }
    }

    const ISS: &str = "http://idp.test/realms/master";

    #[tokio::test]
    async fn miss_then_hit() {
        let fetcher = Arc::new(CountingFetcher::default());
        let cache = JwksCache::new(Duration::from_secs(300), fetcher.clone());
        cache.get_keys(ISS).await.unwrap();
        cache.get_keys(ISS).await.unwrap();
        assert_eq!(fetcher.calls.load(Ordering::SeqCst), 1);
        assert_eq!(cache.stats().snapshot(), CacheStatsSnapshot { hits: 1, misses: 1 });
        assert_eq!(cache.stats().hit_latencies().len(), 1);
        assert_eq!(cache.stats().miss_latencies().len(), 1);
    }

    #[tokio::test]
    async fn expired_entry_is_refetched() {
        let fetcher = Arc::new(CountingFetcher::default());
        let cache = JwksCache::new(Duration::from_millis(20), fetcher.clone());
        cache.get_keys(ISS).await.unwrap();
        tokio::time::sleep(Duration::from_millis(40)).await;
        cache.get_keys(ISS).await.unwrap();
        assert_eq!(fetcher.calls.load(Ordering::SeqCst), 2);
        assert_eq!(cache.stats().snapshot().misses, 2);
    }

    #[tokio::test]
    async fn zero_ttl_always_misses() {
        let fetcher = Arc::new(CountingFetcher::default());
        let cache = JwksCache::new(Duration::ZERO, fetcher.clone());
        for _ in 0..5 {
            cache.get_keys(ISS).await.unwrap();
        }
        assert_eq!(fetcher.calls.load(Ordering::SeqCst), 5);
        assert_eq!(cache.stats().snapshot(), CacheStatsSnapshot { hits: 0, misses: 5 });
    }

    #[tokio::test]
    async fn fetch_failure_with_empty_cache_is_unreachable() {
        let fetcher = Arc::new(CountingFetcher {
            fail: true,
            ..Default::default()
        });
        let cache = JwksCache::new(Duration::from_secs(300), fetcher);
        assert!(matches!(
            cache.get_keys(ISS).await,
            Err(TokenError::JwksUnreachable(_))
        ));
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn concurrent_misses_single_flight() {
        let fetcher = Arc::new(CountingFetcher {
            delay: Duration::from_millis(50),
            ..Default::default()
        });
        let cache = Arc::new(JwksCache::new(Duration::from_secs(300), fetcher.clone()));
        let tasks: Vec<_> = (0..32)
            .map(|_| {
                let cache = cache.clone();
                tokio::spawn(async move { cache.get_keys(ISS).await.unwrap() })
            })
            .collect();
        for t in tasks {
            t.await.unwrap();
        }
        assert_eq!(fetcher.calls.load(Ordering::SeqCst), 1);
        let snap = cache.stats().snapshot();
        assert_eq!(snap.hits + snap.misses, 32);
        assert_eq!(snap.misses, 1);
    }

    #[tokio::test(flavor = "multi_thread", worker_threads = 4)]
    async fn concurrent_forced_refreshes_coalesce() {
        let fetcher = Arc::new(CountingFetcher {
            delay: Duration::from_millis(20),
            ..Default::default()
        });
        let cache = Arc::new(JwksCache::new(Duration::from_secs(300), fetcher.clone()));
        let (_, seen) = cache.get_keys_with_age(ISS).await.unwrap();
        let tasks: Vec<_> = (0..8)
            .map(|_| {
                let cache = cache.clone();
                tokio::spawn(async move { cache.force_refresh(ISS, seen).await.unwrap() })
            })
            .collect();
        for t in tasks {
            assert_eq!(t.await.unwrap().kids(), vec!["k1"]);
        }
        assert_eq!(fetcher.calls.load(Ordering::SeqCst), 2);
    }
}
