//! Reconfigurable access policies and their evaluation.
//!
//! A [`PolicySet`] is an immutable, versioned snapshot. Evaluation picks the
//! winning matching rule by the total order (priority desc, specificity
//! desc, rule id asc) and falls back to the per-criticality default when no
//! rule matches.

mod document;
mod store;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::MitigationAction;
use crate::resource::{AccessEvent, Action, AppId, AppState, Category, Criticality, Resource};

pub use document::{parse_policy_document, serialize_policy_document};
pub use store::{apply_update, PolicyStore};

/// `matched_rule_id` when no rule matched.
pub const DEFAULT_RULE: &str = "DEFAULT";
/// `matched_rule_id` of an on-device fail-closed decision.
pub const FALLBACK_RULE: &str = "FALLBACK_DEFAULT";
/// `matched_rule_id` of a decision forced by app quarantine.
pub const QUARANTINE_RULE: &str = "QUARANTINE";

const RESERVED_IDS: [&str; 3] = [DEFAULT_RULE, FALLBACK_RULE, QUARANTINE_RULE];

pub const DAY_MS: u64 = 86_400_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("duplicate rule id `{rule_id}`")]
    DuplicateRule { rule_id: String, line: Option<usize> },
    #[error("invalid rule `{rule_id}`: {reason}")]
    InvalidRule { rule_id: String, reason: String, line: Option<usize> },
}

impl PolicyError {
    /// Line of the document the error is anchored to, when known.
    pub fn line(&self) -> Option<usize> {
        match self {
            PolicyError::Parse { line, .. } => Some(*line),
            PolicyError::DuplicateRule { line, .. } | PolicyError::InvalidRule { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AppSelector {
    Any,
    /// `com.game.*` is stored as the prefix `com.game.`.
    Prefix(String),
    Exact(AppId),
}

impl AppSelector {
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "*" {
            return Ok(AppSelector::Any);
        }
        match s.find('*') {
            None => AppId::new(s).map(AppSelector::Exact).map_err(|e| e.to_string()),
            Some(pos) if pos == s.len() - 1 => {
                let prefix = &s[..pos];
                if prefix.chars().any(char::is_whitespace) {
                    return Err(format!("invalid app selector {s:?}"));
                }
                Ok(AppSelector::Prefix(prefix.to_string()))
            }
            Some(_) => Err(format!("`*` is only allowed at the end of an app selector: {s:?}")),
        }
    }

    pub fn matches(&self, app: &AppId) -> bool {
        match self {
            AppSelector::Any => true,
            AppSelector::Prefix(p) => app.as_str().starts_with(p.as_str()),
            AppSelector::Exact(id) => id == app,
        }
    }

    fn score(&self) -> u32 {
        match self {
            AppSelector::Exact(_) => 4,
            AppSelector::Prefix(_) => 2,
            AppSelector::Any => 0,
        }
    }
}

impl fmt::Display for AppSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppSelector::Any => f.write_str("*"),
            AppSelector::Prefix(p) => write!(f, "{p}*"),
            AppSelector::Exact(id) => write!(f, "{id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResourceSelector {
    Any,
    Category(Category),
    Exact(Resource),
}

impl ResourceSelector {
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "*" {
            return Ok(ResourceSelector::Any);
        }
        if let Some(cat) = s.strip_prefix("category:") {
            return cat
                .parse()
                .map(ResourceSelector::Category)
                .map_err(|_| format!("unknown category {cat:?}"));
        }
        s.parse().map(ResourceSelector::Exact).map_err(|e: crate::resource::ResourceError| e.to_string())
    }

    pub fn matches(&self, resource: Resource) -> bool {
        match self {
            ResourceSelector::Any => true,
            ResourceSelector::Category(c) => resource.category() == *c,
            ResourceSelector::Exact(r) => *r == resource,
        }
    }

    fn score(&self) -> u32 {
        match self {
            ResourceSelector::Exact(_) => 4,
            ResourceSelector::Category(_) => 2,
            ResourceSelector::Any => 0,
        }
    }
}

impl fmt::Display for ResourceSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResourceSelector::Any => f.write_str("*"),
            ResourceSelector::Category(c) => write!(f, "category:{}", c.as_str()),
            ResourceSelector::Exact(r) => f.write_str(r.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionSelector {
    Any,
    Exact(Action),
}

impl ActionSelector {
    pub fn parse(s: &str) -> Result<Self, String> {
        if s == "*" {
            Ok(ActionSelector::Any)
        } else {
            s.parse().map(ActionSelector::Exact).map_err(|e: crate::resource::ResourceError| e.to_string())
        }
    }

    pub fn matches(&self, action: Action) -> bool {
        match self {
            ActionSelector::Any => true,
            ActionSelector::Exact(a) => *a == action,
        }
    }
}

impl fmt::Display for ActionSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionSelector::Any => f.write_str("*"),
            ActionSelector::Exact(a) => f.write_str(a.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateLimit {
    pub count: u32,
    pub window_s: u32,
}

impl RateLimit {
    pub fn validate(&self) -> Result<(), String> {
        if self.count == 0 {
            return Err("max_per_window.count must be at least 1".into());
        }
        if self.window_s == 0 || u64::from(self.window_s) * 1000 > DAY_MS {
            return Err("max_per_window.window_s must be within 1..=86400".into());
        }
        Ok(())
    }
}

/// Half-open `[start_ms, end_ms)` on the device's time of day. Wraps past
/// midnight when `start_ms > end_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeWindow {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl TimeWindow {
    pub fn validate(&self) -> Result<(), String> {
        if self.start_ms >= DAY_MS || self.end_ms > DAY_MS {
            return Err("time_window bounds must lie within one day".into());
        }
        if self.start_ms == self.end_ms {
            return Err("time_window must not be empty".into());
        }
        Ok(())
    }

    pub fn contains(&self, at_ms: u64) -> bool {
        let t = at_ms % DAY_MS;
        if self.start_ms < self.end_ms {
            self.start_ms <= t && t < self.end_ms
        } else {
            t >= self.start_ms || t < self.end_ms
        }
    }
}

/// Conjunction of optional context predicates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Context {
    pub app_state: Option<AppState>,
    pub time_window: Option<TimeWindow>,
    pub max_per_window: Option<RateLimit>,
    /// Restricts the rule to one device; used by per-device quick rules.
    pub device: Option<String>,
}

impl Context {
    pub fn is_empty(&self) -> bool {
        self.kinds() == 0
    }

    pub fn kinds(&self) -> u32 {
        u32::from(self.app_state.is_some())
            + u32::from(self.time_window.is_some())
            + u32::from(self.max_per_window.is_some())
            + u32::from(self.device.is_some())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleDecision {
    Grant,
    Deny,
    Selective,
}

impl RuleDecision {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleDecision::Grant => "GRANT",
            RuleDecision::Deny => "DENY",
            RuleDecision::Selective => "SELECTIVE",
        }
    }
}

/// Bounds attached to a selective permission.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constraints {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_per_window: Option<RateLimit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreground_only: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub redact: Option<bool>,
}

impl Constraints {
    pub fn is_empty(&self) -> bool {
        self.max_per_window.is_none() && self.foreground_only.is_none() && self.redact.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PolicyRule {
    pub id: String,
    pub priority: i64,
    pub app: AppSelector,
    pub resource: ResourceSelector,
    pub action: ActionSelector,
    pub when: Context,
    pub decision: RuleDecision,
    pub constraints: Constraints,
}

impl PolicyRule {
    pub fn validate(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("rule id must not be empty".into());
        }
        if RESERVED_IDS.contains(&self.id.as_str()) {
            return Err(format!("rule id `{}` is reserved", self.id));
        }
        if let Some(tw) = &self.when.time_window {
            tw.validate()?;
        }
        if let Some(rl) = &self.when.max_per_window {
            rl.validate()?;
        }
        if let Some(rl) = &self.constraints.max_per_window {
            rl.validate()?;
        }
        if matches!(&self.when.device, Some(d) if d.is_empty()) {
            return Err("when.device must not be empty".into());
        }
        match (self.decision, self.constraints.is_empty()) {
            (RuleDecision::Selective, true) => Err("SELECTIVE rule requires constraints".into()),
            (RuleDecision::Grant | RuleDecision::Deny, false) => {
                Err(format!("{} rule must not carry constraints", self.decision.as_str()))
            }
            _ => Ok(()),
        }
    }

    /// Largest frequency window this rule looks at, in seconds.
    pub fn window_s(&self) -> Option<u32> {
        self.when.max_per_window.map(|r| r.window_s)
    }
}

/// Tie-break score: exact selectors beat globs/categories beat wildcards, and
/// each context predicate kind adds one.
pub fn specificity(rule: &PolicyRule) -> u32 {
    let action = match rule.action {
        ActionSelector::Exact(_) => 1,
        ActionSelector::Any => 0,
    };
    rule.app.score() + rule.resource.score() + action + rule.when.kinds()
}

/// Total order used to pick a winner among matching rules: `Less` wins.
pub fn precedence(a: &PolicyRule, b: &PolicyRule) -> Ordering {
    b.priority
        .cmp(&a.priority)
        .then_with(|| specificity(b).cmp(&specificity(a)))
        .then_with(|| a.id.cmp(&b.id))
}

/// `window_count` is the number of prior accesses by the event's
/// (device, app, resource) inside the rule's frequency window.
pub fn match_rule(rule: &PolicyRule, event: &AccessEvent, window_count: u32) -> bool {
    if !(rule.app.matches(&event.app_id)
        && rule.resource.matches(event.resource)
        && rule.action.matches(event.action))
    {
        return false;
    }
    let ctx = &rule.when;
    if ctx.app_state.is_some_and(|s| s != event.app_state) {
        return false;
    }
    if ctx.time_window.is_some_and(|tw| !tw.contains(event.at_ms)) {
        return false;
    }
    if ctx.max_per_window.is_some_and(|rl| window_count >= rl.count) {
        return false;
    }
    if ctx.device.as_deref().is_some_and(|d| d != event.device_id) {
        return false;
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DefaultVerdict {
    #[serde(alias = "ALLOW")]
    Grant,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    #[serde(rename = "CRITICAL")]
    pub critical: DefaultVerdict,
    #[serde(rename = "NORMAL")]
    pub normal: DefaultVerdict,
}

impl Defaults {
    pub fn for_criticality(&self, c: Criticality) -> DefaultVerdict {
        match c {
            Criticality::Critical => self.critical,
            Criticality::Normal => self.normal,
        }
    }
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults { critical: DefaultVerdict::Deny, normal: DefaultVerdict::Grant }
    }
}

/// An immutable, versioned rule set.
///
/// Rules are kept in canonical order (priority desc, id asc).
#[derive(Debug, Clone)]
pub struct PolicySet {
    version: u64,
    rules: Vec<PolicyRule>,
    defaults: Defaults,
    /// Rule indices in precedence order; first match wins.
    eval_order: Vec<usize>,
}

impl PartialEq for PolicySet {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version && self.defaults == other.defaults && self.rules == other.rules
    }
}

impl Eq for PolicySet {}

impl PolicySet {
    pub fn new(version: u64, mut rules: Vec<PolicyRule>, defaults: Defaults) -> Result<Self, PolicyError> {
        if version == 0 {
            return Err(PolicyError::InvalidRule {
                rule_id: String::new(),
                reason: "policy version must be positive".into(),
                line: None,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for rule in &rules {
            rule.validate().map_err(|reason| PolicyError::InvalidRule {
                rule_id: rule.id.clone(),
                reason,
                line: None,
            })?;
            if !seen.insert(rule.id.as_str()) {
                return Err(PolicyError::DuplicateRule { rule_id: rule.id.clone(), line: None });
            }
        }
        rules.sort_by(|a, b| b.priority.cmp(&a.priority).then_with(|| a.id.cmp(&b.id)));
        let mut eval_order: Vec<usize> = (0..rules.len()).collect();
        eval_order.sort_by(|&a, &b| precedence(&rules[a], &rules[b]));
        Ok(PolicySet { version, rules, defaults, eval_order })
    }

    pub fn empty(version: u64, defaults: Defaults) -> Self {
        PolicySet::new(version, Vec::new(), defaults).expect("empty set is valid")
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn rules(&self) -> &[PolicyRule] {
        &self.rules
    }

    pub fn defaults(&self) -> Defaults {
        self.defaults
    }

    pub fn rule(&self, id: &str) -> Option<&PolicyRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    /// Same rules and defaults under another version number.
    pub fn with_version(&self, version: u64) -> Result<Self, PolicyError> {
        PolicySet::new(version, self.rules.clone(), self.defaults)
    }

    /// Distinct frequency windows referenced by any rule, in seconds.
    pub fn frequency_windows(&self) -> Vec<u32> {
        let mut ws: Vec<u32> = self.rules.iter().filter_map(PolicyRule::window_s).collect();
        ws.sort_unstable();
        ws.dedup();
        ws
    }
}

/// Prior access counts keyed by frequency window length in seconds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WindowCounts(BTreeMap<u32, u32>);

impl WindowCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, window_s: u32, count: u32) {
        self.0.insert(window_s, count);
    }

    pub fn get(&self, window_s: u32) -> u32 {
        self.0.get(&window_s).copied().unwrap_or(0)
    }

    pub fn for_rule(&self, rule: &PolicyRule) -> u32 {
        rule.window_s().map_or(0, |w| self.get(w))
    }
}

impl FromIterator<(u32, u32)> for WindowCounts {
    fn from_iter<I: IntoIterator<Item = (u32, u32)>>(iter: I) -> Self {
        WindowCounts(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Allow,
    Deny,
    AllowConstrained,
}

/// The engine's verdict for one event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub device_id: String,
    pub event_seq: u64,
    pub verdict: Verdict,
    pub matched_rule_id: String,
    pub policy_version: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints_applied: Option<Constraints>,
    /// Mitigation amendment attached when the event raised a threat.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mitigation: Option<MitigationAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threat_id: Option<String>,
    /// Reused from the device's fallback cache while disconnected.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub stale: bool,
}

impl Decision {
    pub fn is_default(&self) -> bool {
        self.matched_rule_id == DEFAULT_RULE
    }
}

pub fn evaluate(set: &PolicySet, event: &AccessEvent, counts: &WindowCounts) -> Decision {
    let winner = set
        .eval_order
        .iter()
        .map(|&i| &set.rules[i])
        .find(|rule| match_rule(rule, event, counts.for_rule(rule)));

    let (verdict, matched, constraints) = match winner {
        Some(rule) => match rule.decision {
            RuleDecision::Grant => (Verdict::Allow, rule.id.clone(), None),
            RuleDecision::Deny => (Verdict::Deny, rule.id.clone(), None),
            RuleDecision::Selective => {
                (Verdict::AllowConstrained, rule.id.clone(), Some(rule.constraints.clone()))
            }
        },
        None => {
            let verdict = match set.defaults.for_criticality(event.resource.criticality()) {
                DefaultVerdict::Grant => Verdict::Allow,
                DefaultVerdict::Deny => Verdict::Deny,
            };
            (verdict, DEFAULT_RULE.to_string(), None)
        }
    };

    Decision {
        device_id: event.device_id.clone(),
        event_seq: event.event_seq,
        verdict,
        matched_rule_id: matched,
        policy_version: set.version,
        constraints_applied: constraints,
        mitigation: None,
        threat_id: None,
        stale: false,
    }
}
