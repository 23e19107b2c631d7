//! Identity-aware MCP resource server with an embedded OIDC provider and a
//! client harness that drives the full OAuth 2.0 authorization-code + PKCE
//! flow against it.

pub mod clock;
pub mod conformance;
pub mod eventlog;
pub mod harness;
pub mod idp;
pub mod latency;
mod net;
pub mod pkce;
pub mod policy;
pub mod protocol;
pub mod server;
pub mod stack;
pub mod token;

pub use clock::{Clock, ManualClock, SharedClock, SystemClock};
pub use eventlog::{DiscardLog, EventLog, RecordingLog, TracingLog};
pub use harness::{FlowTranscript, HarnessClient, HarnessConfig, HarnessError, TokenStore};
pub use idp::{IdpConfig, MockIdp};
pub use net::ServerHandle;
pub use policy::{authorize, load_policy, visible_tools, Decision, PolicyTable, ToolRegistry};
pub use server::{McpServer, ServerConfig};
pub use stack::{LoopbackStack, StackOptions};
pub use token::{verify_bearer, JwksCache, TokenError, ValidatedIdentity};
