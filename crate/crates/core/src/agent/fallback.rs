use std::collections::HashMap;

use crate::policy::{Decision, Verdict, FALLBACK_RULE};
use crate::resource::{AccessEvent, Action, AppId, AppState, Criticality, Resource};

/// What makes two accesses "identical" for caching and pre-blocking.
pub type AccessKey = (AppId, Resource, Action, AppState);

pub fn access_key(event: &AccessEvent) -> AccessKey {
    (event.app_id.clone(), event.resource, event.action, event.app_state)
}

/// Last effective server decision per access key, used while the cloud is
/// unreachable.
#[derive(Debug, Clone, Default)]
pub struct FallbackCache {
    entries: HashMap<AccessKey, Decision>,
    /// Newest policy version the agent has heard of.
    pub policy_version: u64,
}

impl FallbackCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Remember a server decision. A blocking mitigation is folded into the
    /// verdict so a stale replay still refuses the access.
    pub fn record(&mut self, key: AccessKey, decision: &Decision) {
        let mut d = decision.clone();
        if d.mitigation.as_ref().is_some_and(|m| m.blocks()) {
            d.verdict = Verdict::Deny;
        }
        d.mitigation = None;
        d.threat_id = None;
        self.entries.insert(key, d);
    }

    pub fn get(&self, key: &AccessKey) -> Option<&Decision> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Decide without the cloud: replay a cached decision marked stale, or
/// fail closed (CRITICAL denied, NORMAL allowed).
pub fn fallback_decision(event: &AccessEvent, cache: &FallbackCache) -> Decision {
    match cache.get(&access_key(event)) {
        Some(hit) => Decision {
            device_id: event.device_id.clone(),
            event_seq: event.event_seq,
            stale: true,
            ..hit.clone()
        },
        None => Decision {
            device_id: event.device_id.clone(),
            event_seq: event.event_seq,
            verdict: match event.resource.criticality() {
                Criticality::Critical => Verdict::Deny,
                Criticality::Normal => Verdict::Allow,
            },
            matched_rule_id: FALLBACK_RULE.to_string(),
            policy_version: cache.policy_version,
            constraints_applied: None,
            mitigation: None,
            threat_id: None,
            stale: false,
        },
    }
}
