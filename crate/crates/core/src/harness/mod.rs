//! MCP client that drives the authorization sequence end to end and records
//! a transcript of it.

mod flow;
mod store;
mod transcript;

pub use flow::{
    parse_challenge, AcquiredToken, BearerMode, Challenge, HarnessClient, HarnessConfig,
    HarnessError, OidcDiscovery, SequenceOutcome, TokenSource,
};
pub use store::{StoreError, StoredToken, TokenStore};
pub use transcript::{step_description, FlowTranscript, StepRecord, STEP_DESCRIPTIONS};
