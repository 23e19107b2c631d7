use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use mcpidg_bench::{developer_token, runtime, stack};
use mcpidg_core::token::{parse_compact, verify_signature};
use mcpidg_core::{verify_bearer, DiscardLog};

fn now() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap()
        .as_secs() as i64
}

fn validation(c: &mut Criterion) {
    let rt = runtime();
    let stack = rt.block_on(stack());
    let token = developer_token(&stack);
    let jwks = stack.idp.jwks();
    let config = stack.server.bearer_config().clone();
    let cache = stack.server.jwks_cache().clone();
    rt.block_on(verify_bearer(&token, &config, &cache, now(), &DiscardLog))
        .expect("token verifies");

    c.bench_function("parse_and_verify_signature", |b| {
        b.iter(|| {
            let jwt = parse_compact(black_box(&token)).unwrap();
            verify_signature(&jwt, &jwks).unwrap()
        })
    });

    c.bench_function("verify_bearer_cache_hit", |b| {
        b.to_async(&rt).iter(|| async {
            verify_bearer(black_box(&token), &config, &cache, now(), &DiscardLog)
                .await
                .unwrap()
        })
    });

    rt.block_on(async move {
        let _ = stack.shutdown().await;
    });
}

criterion_group!(benches, validation);
criterion_main!(benches);
