//! Role and scope based tool authorization.
//!
//! A call is allowed only when some rule for one of the caller's roles lists
//! the tool AND the caller's token carries every scope the tool requires.
//! Anything else is denied.

mod lint;
mod tools;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::token::ValidatedIdentity;

pub use lint::{policy_report, MatrixCell, PolicyReport};
pub use tools::{
    RegistryError, ToolDescriptor, ToolRegistry, BUILD_STATUS, CODE_SEARCH, DOCS_SEARCH,
    OPS_STATUS,
};

/// The shipped developer/contractor/operator policy.
pub const DEFAULT_POLICY_JSON: &str = include_str!("../../config/policy.json");

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("cannot read policy file {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid policy document{}: {message}", path.as_ref().map(|p| format!(" {}", p.display())).unwrap_or_default())]
    Parse {
        path: Option<PathBuf>,
        message: String,
    },
    #[error("policy rule for role {role:?} names unknown tool {tool:?}")]
    UnknownToolInPolicy { role: String, tool: String },
    #[error("conflicting rules for role {0:?}")]
    DuplicateRuleConflict(String),
}

/// On-disk policy shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    #[serde(default = "deny_literal")]
    pub default_decision: String,
    #[serde(default)]
    pub rules: Vec<PolicyRule>,
}

fn deny_literal() -> String {
    "deny".to_string()
}

impl Default for PolicyDocument {
    fn default() -> Self {
        PolicyDocument {
            default_decision: deny_literal(),
            rules: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyRule {
    pub role: String,
    #[serde(default)]
    pub granted_scopes: BTreeSet<String>,
    #[serde(default)]
    pub allowed_tools: BTreeSet<String>,
}

impl PolicyDocument {
    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        serde_json::from_str(text).map_err(|e| PolicyError::Parse {
            path: None,
            message: e.to_string(),
        })
    }

    pub fn shipped() -> Self {
        Self::from_json(DEFAULT_POLICY_JSON).expect("shipped policy parses")
    }
}

/// Validated, immutable policy. Rules are keyed by role.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyTable {
    rules: BTreeMap<String, PolicyRule>,
}

impl PolicyTable {
    pub fn rules(&self) -> impl Iterator<Item = &PolicyRule> {
        self.rules.values()
    }

    pub fn rule(&self, role: &str) -> Option<&PolicyRule> {
        self.rules.get(role)
    }

    pub fn roles(&self) -> Vec<String> {
        self.rules.keys().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

pub fn load_policy(doc: &PolicyDocument, registry: &ToolRegistry) -> Result<PolicyTable, PolicyError> {
    if doc.default_decision != "deny" {
        return Err(PolicyError::Parse {
            path: None,
            message: format!(
                "default_decision must be \"deny\", found {:?}",
                doc.default_decision
            ),
        });
    }
    let mut rules: BTreeMap<String, PolicyRule> = BTreeMap::new();
    for rule in &doc.rules {
        if let Some(tool) = rule.allowed_tools.iter().find(|t| !registry.contains(t)) {
            return Err(PolicyError::UnknownToolInPolicy {
                role: rule.role.clone(),
                tool: tool.clone(),
            });
        }
        let merged = rules.entry(rule.role.clone()).or_insert_with(|| PolicyRule {
            role: rule.role.clone(),
            ..Default::default()
        });
        merged.granted_scopes.extend(rule.granted_scopes.iter().cloned());
        merged.allowed_tools.extend(rule.allowed_tools.iter().cloned());
    }
    Ok(PolicyTable { rules })
}

pub fn load_policy_file(path: &Path, registry: &ToolRegistry) -> Result<PolicyTable, PolicyError> {
    let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let doc = PolicyDocument::from_json(&text).map_err(|e| match e {
        PolicyError::Parse { message, .. } => PolicyError::Parse {
            path: Some(path.to_path_buf()),
            message,
        },
        other => other,
    })?;
    load_policy(&doc, registry)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenyReason {
    Ok,
    NoMatchingRole,
    MissingScope(BTreeSet<String>),
    UnknownTool,
}

impl DenyReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DenyReason::Ok => "ok",
            DenyReason::NoMatchingRole => "no_matching_role",
            DenyReason::MissingScope(_) => "missing_scope",
            DenyReason::UnknownTool => "unknown_tool",
        }
    }
}

impl std::fmt::Display for DenyReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DenyReason::MissingScope(missing) => {
                let list: Vec<&str> = missing.iter().map(String::as_str).collect();
                write!(f, "missing_scope({})", list.join(","))
            }
            other => f.write_str(other.as_str()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub outcome: Outcome,
    pub reason: DenyReason,
}

impl Decision {
    fn allow() -> Self {
        Decision {
            outcome: Outcome::Allow,
            reason: DenyReason::Ok,
        }
    }

    fn deny(reason: DenyReason) -> Self {
        Decision {
            outcome: Outcome::Deny,
            reason,
        }
    }

    pub fn is_allow(&self) -> bool {
        self.outcome == Outcome::Allow
    }
}

/// Decide whether `identity` may call `tool`.
///
/// Failing checks are reported in the order unknown tool, role, scope.
pub fn authorize(
    identity: &ValidatedIdentity,
    tool: &str,
    table: &PolicyTable,
    registry: &ToolRegistry,
) -> Decision {
    authorize_parts(identity.roles(), identity.scopes(), tool, table, registry)
}

/// [`authorize`] on bare role and scope sets, e.g. when replaying audit records.
pub fn authorize_parts(
    roles: &BTreeSet<String>,
    scopes: &BTreeSet<String>,
    tool: &str,
    table: &PolicyTable,
    registry: &ToolRegistry,
) -> Decision {
    let Some(descriptor) = registry.get(tool) else {
        return Decision::deny(DenyReason::UnknownTool);
    };
    let granted = roles
        .iter()
        .filter_map(|role| table.rule(role))
        .any(|rule| rule.allowed_tools.contains(tool));
    if !granted {
        return Decision::deny(DenyReason::NoMatchingRole);
    }
    let missing: BTreeSet<String> = descriptor
        .required_scopes
        .difference(scopes)
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Decision::deny(DenyReason::MissingScope(missing));
    }
    Decision::allow()
}

/// Tools `identity` may call, sorted by name.
pub fn visible_tools(
    identity: &ValidatedIdentity,
    table: &PolicyTable,
    registry: &ToolRegistry,
) -> Vec<ToolDescriptor> {
    registry
        .tools()
        .filter(|t| authorize(identity, &t.name, table, registry).is_allow())
        .cloned()
        .collect()
}
