//! JSON policy documents.
//!
//! ```json
//! {
//!   "version": 1,
//!   "defaults": { "CRITICAL": "DENY", "NORMAL": "GRANT" },
//!   "rules": [
//!     { "id": "r1", "priority": 100, "app": "com.game.*", "resource": "MICROPHONE",
//!       "action": "*", "decision": "DENY" }
//!   ]
//! }
//! ```
//!
//! The canonical form is two-space indented, keys in the order above, rules
//! sorted by (priority desc, id asc), with empty `when`/`constraints` omitted.

use serde::{Deserialize, Serialize};

use super::{
    ActionSelector, AppSelector, Constraints, Context, Defaults, PolicyError, PolicyRule, PolicySet,
    RateLimit, ResourceSelector, RuleDecision, TimeWindow,
};
use crate::resource::AppState;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<u64>,
    defaults: Defaults,
    #[serde(default)]
    rules: Vec<RawRule>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    id: String,
    priority: i64,
    app: String,
    resource: String,
    action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    when: Option<RawWhen>,
    decision: RuleDecision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    constraints: Option<Constraints>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWhen {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    app_state: Option<AppState>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_window: Option<[u64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_per_window: Option<RateLimit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    device: Option<String>,
}

pub fn parse_policy_document(text: &str) -> Result<PolicySet, PolicyError> {
    let raw: RawDocument = serde_json::from_str(text).map_err(|e| PolicyError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;

    let version = raw.version.unwrap_or(1);
    let mut rules = Vec::with_capacity(raw.rules.len());
    for (index, raw_rule) in raw.rules.into_iter().enumerate() {
        let line = rule_line(text, index);
        let id = raw_rule.id.clone();
        let rule = convert_rule(raw_rule).map_err(|reason| PolicyError::InvalidRule {
            rule_id: id.clone(),
            reason,
            line,
        })?;
        rules.push(rule);
    }

    // Re-anchor set-level errors to the offending rule's line.
    PolicySet::new(version, rules, raw.defaults).map_err(|err| match err {
        PolicyError::DuplicateRule { rule_id, .. } => {
            let line = duplicate_line(text, &rule_id);
            PolicyError::DuplicateRule { rule_id, line }
        }
        PolicyError::InvalidRule { rule_id, reason, .. } => {
            let line = id_occurrences(text, &rule_id).first().copied();
            PolicyError::InvalidRule { rule_id, reason, line }
        }
        other => other,
    })
}

fn convert_rule(raw: RawRule) -> Result<PolicyRule, String> {
    let when = raw.when.unwrap_or_default();
    let rule = PolicyRule {
        id: raw.id,
        priority: raw.priority,
        app: AppSelector::parse(&raw.app)?,
        resource: ResourceSelector::parse(&raw.resource)?,
        action: ActionSelector::parse(&raw.action)?,
        when: Context {
            app_state: when.app_state,
            time_window: when.time_window.map(|[start_ms, end_ms]| TimeWindow { start_ms, end_ms }),
            max_per_window: when.max_per_window,
            device: when.device,
        },
        decision: raw.decision,
        constraints: raw.constraints.unwrap_or_default(),
    };
    rule.validate()?;
    Ok(rule)
}

pub fn serialize_policy_document(set: &PolicySet) -> String {
    let raw = RawDocument {
        version: Some(set.version()),
        defaults: set.defaults(),
        rules: set.rules().iter().map(raw_rule).collect(),
    };
    let mut out = serde_json::to_string_pretty(&raw).expect("policy documents always serialize");
    out.push('\n');
    out
}

fn raw_rule(rule: &PolicyRule) -> RawRule {
    let when = (!rule.when.is_empty()).then(|| RawWhen {
        app_state: rule.when.app_state,
        time_window: rule.when.time_window.map(|tw| [tw.start_ms, tw.end_ms]),
        max_per_window: rule.when.max_per_window,
        device: rule.when.device.clone(),
    });
    RawRule {
        id: rule.id.clone(),
        priority: rule.priority,
        app: rule.app.to_string(),
        resource: rule.resource.to_string(),
        action: rule.action.to_string(),
        when,
        decision: rule.decision,
        constraints: (!rule.constraints.is_empty()).then(|| rule.constraints.clone()),
    }
}

/// 1-based line numbers of each `"id": ...` key, in document order.
fn id_lines(text: &str) -> Vec<usize> {
    let mut lines = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut rest = line;
        while let Some(pos) = rest.find("\"id\"") {
            let after = rest[pos + 4..].trim_start();
            if after.starts_with(':') {
                lines.push(lineno + 1);
            }
            rest = &rest[pos + 4..];
        }
    }
    lines
}

fn rule_line(text: &str, index: usize) -> Option<usize> {
    id_lines(text).get(index).copied()
}

fn id_occurrences(text: &str, rule_id: &str) -> Vec<usize> {
    let Ok(quoted) = serde_json::to_string(rule_id) else {
        return Vec::new();
    };
    text.lines()
        .enumerate()
        .filter(|(_, line)| {
            line.find("\"id\"")
                .map(|pos| line[pos + 4..].trim_start().trim_start_matches(':').trim_start().starts_with(&quoted))
                .unwrap_or(false)
        })
        .map(|(i, _)| i + 1)
        .collect()
}

fn duplicate_line(text: &str, rule_id: &str) -> Option<usize> {
    id_occurrences(text, rule_id).get(1).copied()
}
