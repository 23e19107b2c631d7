use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{PolicyTable, ToolRegistry};

/// One role × tool cell. `ScopeGap` means the role is granted the tool but
/// its granted scopes do not cover what the tool requires.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixCell {
    Allow,
    Deny,
    ScopeGap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PolicyReport {
    pub roles: Vec<String>,
    pub tools: Vec<String>,
    /// role → tool → cell
    pub matrix: BTreeMap<String, BTreeMap<String, MatrixCell>>,
    pub unreachable_tools: Vec<String>,
    pub unused_scopes: Vec<String>,
    pub warnings: Vec<String>,
}

/// Structural lint of a loaded policy against the registry.
pub fn policy_report(table: &PolicyTable, registry: &ToolRegistry) -> PolicyReport {
    let tools = registry.names();
    let mut matrix = BTreeMap::new();
    for rule in table.rules() {
        let row: BTreeMap<String, MatrixCell> = registry
            .tools()
            .map(|tool| {
                let cell = if !rule.allowed_tools.contains(&tool.name) {
                    MatrixCell::Deny
                } else if tool.required_scopes.is_subset(&rule.granted_scopes) {
                    MatrixCell::Allow
                } else {
                    MatrixCell::ScopeGap
                };
                (tool.name.clone(), cell)
            })
            .collect();
        matrix.insert(rule.role.clone(), row);
    }

    let unreachable_tools: Vec<String> = tools
        .iter()
        .filter(|t| !table.rules().any(|r| r.allowed_tools.contains(*t)))
        .cloned()
        .collect();

    let required: BTreeSet<&String> = registry
        .tools()
        .flat_map(|t| t.required_scopes.iter())
        .collect();
    let unused_scopes: Vec<String> = table
        .rules()
        .flat_map(|r| r.granted_scopes.iter())
        .filter(|s| !required.contains(s))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut warnings = Vec::new();
    if !tools.is_empty() && unreachable_tools.len() == tools.len() {
        warnings.push("all tools unreachable".to_string());
    } else {
        warnings.extend(
            unreachable_tools
                .iter()
                .map(|t| format!("tool {t} is not granted to any role")),
        );
    }
    warnings.extend(
        unused_scopes
            .iter()
            .map(|s| format!("scope {s} is granted but no tool requires it")),
    );
    for (role, row) in &matrix {
        for (tool, cell) in row {
            if *cell == MatrixCell::ScopeGap {
                warnings.push(format!(
                    "role {role} is granted {tool} but not the scopes it requires"
                ));
            }
        }
    }

    PolicyReport {
        roles: table.roles(),
        tools,
        matrix,
        unreachable_tools,
        unused_scopes,
        warnings,
    }
}
