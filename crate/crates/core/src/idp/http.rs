use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Form, Json, Router};
use serde_json::json;
use tokio::net::TcpListener;

use super::provider::{AuthorizeParams, IdpError, MockIdp, TokenParams};
use crate::net::{spawn_server, ServerHandle};

fn oauth_error(err: &IdpError) -> Response {
    tracing::warn!(error = %err, "identity provider rejected request");
    (
        StatusCode::BAD_REQUEST,
        Json(json!({
            "error": err.oauth_code(),
            "error_description": err.to_string(),
        })),
    )
        .into_response()
}

async fn discovery(State(idp): State<Arc<MockIdp>>) -> Response {
    idp.stats().bump_discovery();
    Json(idp.discovery()).into_response()
}

async fn authorize(State(idp): State<Arc<MockIdp>>, Query(params): Query<AuthorizeParams>) -> Response {
    idp.stats().bump_authorize();
    match idp.authorize(&params) {
        Ok(location) => (StatusCode::FOUND, [(header::LOCATION, location)]).into_response(),
        Err(e) => oauth_error(&e),
    }
}

async fn token(State(idp): State<Arc<MockIdp>>, Form(params): Form<TokenParams>) -> Response {
    idp.stats().bump_token();
    match idp.token(&params) {
        Ok(resp) => {
            let body = serde_json::to_value(&resp).expect("token response serializes");
            idp.stats().observe_token_body(&body);
            ([(header::CACHE_CONTROL, "no-store")], Json(body)).into_response()
        }
        Err(e) => oauth_error(&e),
    }
}

async fn jwks(State(idp): State<Arc<MockIdp>>) -> Response {
    idp.stats().bump_jwks();
    Json(idp.jwks()).into_response()
}

/// Endpoints mounted under the issuer's path.
pub fn idp_router(idp: Arc<MockIdp>) -> Router {
    let base = idp.config().base_path();
    Router::new()
        .route(&format!("{base}/.well-known/openid-configuration"), get(discovery))
        .route(&format!("{base}/authorize"), get(authorize))
        .route(&format!("{base}/token"), post(token))
        .route(&format!("{base}/jwks"), get(jwks))
        .with_state(idp)
}

/// Serve `idp` on an already-bound listener.
pub fn serve_idp(idp: Arc<MockIdp>, listener: TcpListener) -> std::io::Result<ServerHandle> {
    spawn_server(listener, idp_router(idp))
}
