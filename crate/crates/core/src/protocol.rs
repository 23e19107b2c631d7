//! JSON-RPC 2.0 message model for the MCP subset served here.
//!
//! Only four methods are supported: `initialize`, the `notifications/initialized`
//! notification, `tools/list` and `tools/call`. Messages without an `id` are
//! notifications and never receive a reply body.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const JSONRPC_VERSION: &str = "2.0";

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;
/// Application error used when an authenticated caller is not allowed to run a tool.
pub const FORBIDDEN: i64 = -32001;

pub const METHOD_INITIALIZE: &str = "initialize";
pub const METHOD_INITIALIZED: &str = "notifications/initialized";
pub const METHOD_TOOLS_LIST: &str = "tools/list";
pub const METHOD_TOOLS_CALL: &str = "tools/call";

const METHODS: [&str; 4] = [
    METHOD_INITIALIZE,
    METHOD_INITIALIZED,
    METHOD_TOOLS_LIST,
    METHOD_TOOLS_CALL,
];

/// Request identifier. JSON-RPC allows integers and strings.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RequestId {
    Number(i64),
    Text(String),
}

impl From<i64> for RequestId {
    fn from(value: i64) -> Self {
        RequestId::Number(value)
    }
}

impl From<&str> for RequestId {
    fn from(value: &str) -> Self {
        RequestId::Text(value.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcRequest {
    pub id: Option<RequestId>,
    pub method: String,
    pub params: Option<Map<String, Value>>,
}

impl RpcRequest {
    pub fn new(id: impl Into<RequestId>, method: &str, params: Option<Value>) -> Self {
        RpcRequest {
            id: Some(id.into()),
            method: method.to_string(),
            params: params.and_then(|v| match v {
                Value::Object(map) => Some(map),
                _ => None,
            }),
        }
    }

    pub fn notification(method: &str) -> Self {
        RpcRequest {
            id: None,
            method: method.to_string(),
            params: None,
        }
    }

    pub fn is_notification(&self) -> bool {
        self.id.is_none()
    }

    pub fn param(&self, key: &str) -> Option<&Value> {
        self.params.as_ref().and_then(|p| p.get(key))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self.wire()).expect("request serializes")
    }

    fn wire(&self) -> WireRequest<'_> {
        WireRequest {
            jsonrpc: JSONRPC_VERSION,
            id: self.id.as_ref(),
            method: &self.method,
            params: self.params.as_ref(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(&self.wire()).expect("request serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Value>,
}

impl RpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        RpcError {
            code,
            message: message.into(),
            data: None,
        }
    }

    pub fn with_data(mut self, data: Value) -> Self {
        self.data = Some(data);
        self
    }

    pub fn method_not_found(method: &str) -> Self {
        RpcError::new(METHOD_NOT_FOUND, format!("method not found: {method}"))
    }
}

/// Exactly one of a result or an error, enforced by construction.
#[derive(Debug, Clone, PartialEq)]
pub enum RpcOutcome {
    Result(Value),
    Error(RpcError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RpcResponse {
    /// `None` only for errors raised before an id could be read (parse errors).
    pub id: Option<RequestId>,
    pub outcome: RpcOutcome,
}

impl RpcResponse {
    pub fn result(id: Option<RequestId>, result: Value) -> Self {
        RpcResponse {
            id,
            outcome: RpcOutcome::Result(result),
        }
    }

    pub fn error(id: Option<RequestId>, error: RpcError) -> Self {
        RpcResponse {
            id,
            outcome: RpcOutcome::Error(error),
        }
    }

    pub fn as_error(&self) -> Option<&RpcError> {
        match &self.outcome {
            RpcOutcome::Error(e) => Some(e),
            RpcOutcome::Result(_) => None,
        }
    }

    pub fn as_result(&self) -> Option<&Value> {
        match &self.outcome {
            RpcOutcome::Result(v) => Some(v),
            RpcOutcome::Error(_) => None,
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self.wire()).expect("response serializes")
    }

    fn wire(&self) -> WireResponse<'_> {
        let (result, error) = match &self.outcome {
            RpcOutcome::Result(v) => (Some(v), None),
            RpcOutcome::Error(e) => (None, Some(e)),
        };
        WireResponse {
            jsonrpc: JSONRPC_VERSION,
            id: self.id.as_ref(),
            result,
            error,
        }
    }
}

// Field order here is the wire order.
#[derive(Serialize)]
struct WireRequest<'a> {
    jsonrpc: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<&'a RequestId>,
    method: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<&'a Map<String, Value>>,
}

#[derive(Serialize)]
struct WireResponse<'a> {
    jsonrpc: &'a str,
    id: Option<&'a RequestId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<&'a Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a RpcError>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProtocolError {
    pub fn code(&self) -> i64 {
        match self {
            ProtocolError::Parse(_) => PARSE_ERROR,
            ProtocolError::InvalidRequest(_) => INVALID_REQUEST,
        }
    }

    pub fn to_rpc_error(&self) -> RpcError {
        RpcError::new(self.code(), self.to_string())
    }
}

pub fn decode_request(bytes: &[u8]) -> Result<RpcRequest, ProtocolError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| ProtocolError::Parse(e.to_string()))?;
    request_from_value(value)
}

pub fn request_from_value(value: Value) -> Result<RpcRequest, ProtocolError> {
    let Value::Object(mut obj) = value else {
        return Err(ProtocolError::InvalidRequest(
            "message must be a JSON object".into(),
        ));
    };
    match obj.get("jsonrpc") {
        Some(Value::String(v)) if v == JSONRPC_VERSION => {}
        Some(other) => {
            return Err(ProtocolError::InvalidRequest(format!(
                "unsupported jsonrpc version {other}"
            )))
        }
        None => return Err(ProtocolError::InvalidRequest("missing jsonrpc".into())),
    }
    let id = match obj.remove("id") {
        None => None,
        Some(v @ Value::Number(_)) | Some(v @ Value::String(_)) => {
            Some(serde_json::from_value::<RequestId>(v).map_err(|_| {
                ProtocolError::InvalidRequest("id must be an integer or string".into())
            })?)
        }
        Some(_) => {
            return Err(ProtocolError::InvalidRequest(
                "id must be an integer or string".into(),
            ))
        }
    };
    let method = match obj.remove("method") {
        Some(Value::String(m)) if !m.is_empty() => m,
        _ => {
            return Err(ProtocolError::InvalidRequest(
                "method must be a non-empty string".into(),
            ))
        }
    };
    let params = match obj.remove("params") {
        None | Some(Value::Null) => None,
        Some(Value::Object(p)) => Some(p),
        Some(_) => {
            return Err(ProtocolError::InvalidRequest(
                "params must be an object".into(),
            ))
        }
    };
    Ok(RpcRequest { id, method, params })
}

pub fn encode_response(resp: &RpcResponse) -> Vec<u8> {
    serde_json::to_vec(&resp.wire()).expect("response serializes")
}

pub fn decode_response(bytes: &[u8]) -> Result<RpcResponse, ProtocolError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| ProtocolError::Parse(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(ProtocolError::InvalidRequest("response must be an object".into()));
    };
    if obj.get("jsonrpc").and_then(Value::as_str) != Some(JSONRPC_VERSION) {
        return Err(ProtocolError::InvalidRequest("bad jsonrpc version".into()));
    }
    let id = match obj.remove("id") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            serde_json::from_value(v)
                .map_err(|_| ProtocolError::InvalidRequest("bad id".into()))?,
        ),
    };
    let outcome = match (obj.remove("result"), obj.remove("error")) {
        (Some(r), None) => RpcOutcome::Result(r),
        (None, Some(e)) => RpcOutcome::Error(
            serde_json::from_value(e)
                .map_err(|err| ProtocolError::InvalidRequest(err.to_string()))?,
        ),
        _ => {
            return Err(ProtocolError::InvalidRequest(
                "exactly one of result or error required".into(),
            ))
        }
    };
    Ok(RpcResponse { id, outcome })
}

pub fn method_table() -> &'static [&'static str] {
    &METHODS
}

pub fn is_supported_method(method: &str) -> bool {
    METHODS.contains(&method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    #[test]
    fn decodes_minimal_request() {
        let req = decode_request(br#"{"jsonrpc":"2.0","id":1,"method":"tools/list"}"#).unwrap();
        assert_eq!(req.id, Some(RequestId::Number(1)));
        assert_eq!(req.method, "tools/list");
        assert!(!req.is_notification());
    }

    #[test]
    fn notification_has_no_id() {
        let req =
            decode_request(br#"{"jsonrpc":"2.0","method":"notifications/initialized"}"#).unwrap();
        assert!(req.id.is_none());
        assert!(req.is_notification());
    }

    #[test]
    fn rejects_wrong_version() {
        let err = decode_request(br#"{"jsonrpc":"1.0","id":1,"method":"x"}"#).unwrap_err();
        assert!(matches!(err, ProtocolError::InvalidRequest(_)));
        assert_eq!(err.code(), INVALID_REQUEST);
    }

    #[test]
    fn malformed_json_is_parse_error() {
        let err = decode_request(b"{not json").unwrap_err();
        assert_eq!(err.code(), PARSE_ERROR);
    }

    #[test]
    fn shape_violations() {
        for body in [
            r#"[1,2]"#,
            r#"{"jsonrpc":"2.0","id":1}"#,
            r#"{"jsonrpc":"2.0","id":1,"method":""}"#,
            r#"{"jsonrpc":"2.0","id":{"a":1},"method":"x"}"#,
            r#"{"jsonrpc":"2.0","id":1,"method":"x","params":[1]}"#,
            r#"{"id":1,"method":"x"}"#,
        ] {
            let err = decode_request(body.as_bytes()).unwrap_err();
            assert_eq!(err.code(), INVALID_REQUEST, "{body}");
        }
    }

    #[test]
    fn encodes_canonical_result() {
        let resp = RpcResponse::result(Some(1.into()), json!({}));
        assert_eq!(
            String::from_utf8(encode_response(&resp)).unwrap(),
            r#"{"jsonrpc":"2.0","id":1,"result":{}}"#
        );
    }

    #[test]
    fn encodes_error_document() {
        let resp = RpcResponse::error(
            Some(2.into()),
            RpcError::new(METHOD_NOT_FOUND, "method not found"),
        );
        assert_eq!(
            String::from_utf8(encode_response(&resp)).unwrap(),
            r#"{"jsonrpc":"2.0","id":2,"error":{"code":-32601,"message":"method not found"}}"#
        );
    }

    #[test]
    fn method_table_is_the_four_supported_methods() {
        let methods = method_table();
        assert_eq!(methods.len(), 4);
        assert!(methods.contains(&"tools/call"));
        assert!(!methods.contains(&"resources/read"));
        assert!(is_supported_method("initialize"));
    }

    fn arb_id() -> impl Strategy<Value = RequestId> {
        prop_oneof![
            any::<i64>().prop_map(RequestId::Number),
            "[a-z0-9-]{0,12}".prop_map(RequestId::Text),
        ]
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::from),
            any::<i64>().prop_map(Value::from),
            "[ -~]{0,8}".prop_map(Value::from),
        ];
        leaf.prop_recursive(3, 16, 4, |inner| {
            prop_oneof![
                prop::collection::vec(inner.clone(), 0..4).prop_map(Value::from),
                prop::collection::btree_map("[a-z]{1,5}", inner, 0..4)
                    .prop_map(|m| Value::Object(m.into_iter().collect())),
            ]
        })
    }

    fn arb_response() -> impl Strategy<Value = RpcResponse> {
        let error = (any::<i64>(), "[ -~]{0,16}", prop::option::of(arb_value()))
            .prop_map(|(code, message, data)| RpcError {
                code,
                message,
                data: data.filter(|d| !d.is_null()),
            });
        (
            prop::option::of(arb_id()),
            prop_oneof![
                arb_value().prop_map(RpcOutcome::Result),
                error.prop_map(RpcOutcome::Error),
            ],
        )
            .prop_map(|(id, outcome)| RpcResponse { id, outcome })
    }

    proptest! {
        #[test]
        fn response_round_trip(resp in arb_response()) {
            let decoded = decode_response(&encode_response(&resp)).unwrap();
            prop_assert_eq!(decoded, resp);
        }

        #[test]
        fn request_round_trip(
            id in prop::option::of(arb_id()),
            method in "[a-z/]{1,20}",
            params in prop::option::of(prop::collection::btree_map("[a-z]{1,5}", arb_value(), 0..4)),
        ) {
            let req = RpcRequest {
                id,
                method,
                params: params.map(|m| m.into_iter().collect()),
            };
            prop_assert_eq!(decode_request(&req.encode()).unwrap(), req);
        }
    }
}
