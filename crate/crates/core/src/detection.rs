//! Cloud-side monitoring, threat detection, and mitigation.
//!
//! Every accepted event goes through [`Pipeline::process`]: window
//! maintenance, policy evaluation (or a forced deny for quarantined apps),
//! trigger classification, and mitigation. A triggering event yields exactly
//! one [`ThreatReport`], already mitigated.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::policy::{
    evaluate, Decision, PolicySet, RateLimit, RuleDecision, Verdict, WindowCounts, QUARANTINE_RULE,
};
use crate::resource::{AccessEvent, AppId, AppState, Criticality, Resource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionConfig {
    /// Accesses per frequency window above which a burst is anomalous.
    pub anomaly_threshold: u32,
    pub frequency_window_s: u32,
    /// Window state retention.
    pub horizon_s: u32,
    /// HIGH threats by one (device, app) before quarantine.
    pub repeat_threshold: u32,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig { anomaly_threshold: 30, frequency_window_s: 60, horizon_s: 300, repeat_threshold: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WindowKey {
    pub device_id: String,
    pub app_id: AppId,
    pub resource: Resource,
}

impl WindowKey {
    pub fn of(event: &AccessEvent) -> Self {
        WindowKey { device_id: event.device_id.clone(), app_id: event.app_id.clone(), resource: event.resource }
    }
}

/// Recent access timestamps for one (device, app, resource).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowState {
    timestamps: VecDeque<u64>,
}

impl WindowState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Record an access at `at_ms`, evict entries at least `horizon_ms` old,
    /// and return the number of accesses in the trailing `window_ms`
    /// including this one.
    pub fn monitor_update(&mut self, at_ms: u64, horizon_ms: u64, window_ms: u64) -> u32 {
        let pos = self.timestamps.partition_point(|&t| t <= at_ms);
        self.timestamps.insert(pos, at_ms);
        let latest = *self.timestamps.back().expect("just inserted");
        while self.timestamps.front().is_some_and(|&t| latest - t >= horizon_ms) {
            self.timestamps.pop_front();
        }
        self.count_within(at_ms, window_ms)
    }

    /// Accesses with `at_ms - window_ms < t <= at_ms`.
    pub fn count_within(&self, at_ms: u64, window_ms: u64) -> u32 {
        self.timestamps.iter().rev().filter(|&&t| t <= at_ms).take_while(|&&t| at_ms - t < window_ms).count() as u32
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ThreatType {
    PolicyViolation,
    AnomalousFrequency,
    BackgroundExfiltration,
}

impl ThreatType {
    pub fn severity(self) -> Severity {
        match self {
            ThreatType::PolicyViolation | ThreatType::BackgroundExfiltration => Severity::High,
            ThreatType::AnomalousFrequency => Severity::Medium,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ThreatType::PolicyViolation => "POLICY_VIOLATION",
            ThreatType::AnomalousFrequency => "ANOMALOUS_FREQUENCY",
            ThreatType::BackgroundExfiltration => "BACKGROUND_EXFILTRATION",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Severity {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ThreatStatus {
    Detected,
    Mitigated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MitigationKind {
    None,
    Block,
    RateLimit,
    RevokePermission,
    QuarantineApp,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MitigationAction {
    pub kind: MitigationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<RateLimit>,
}

impl MitigationAction {
    pub const NONE: MitigationAction = MitigationAction { kind: MitigationKind::None, params: None };

    pub fn new(kind: MitigationKind) -> Self {
        MitigationAction { kind, params: None }
    }

    /// Whether the device must refuse the access.
    pub fn blocks(&self) -> bool {
        matches!(
            self.kind,
            MitigationKind::Block | MitigationKind::RevokePermission | MitigationKind::QuarantineApp
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatReport {
    pub threat_id: String,
    pub device_id: String,
    pub app_id: AppId,
    pub resource: Resource,
    pub event_seqs: Vec<u64>,
    pub threat_type: ThreatType,
    pub severity: Severity,
    pub status: ThreatStatus,
    pub mitigation: MitigationAction,
    /// Server clock.
    pub detected_at_ms: u64,
}

/// Classify one decided event. Triggers are tried in order: rule-matched
/// deny, frequency anomaly, background access to a critical resource without
/// an explicit grant.
pub fn detect(
    event: &AccessEvent,
    decision: &Decision,
    window_count: u32,
    policy: &PolicySet,
    config: &DetectionConfig,
    now_ms: u64,
) -> Option<ThreatReport> {
    let threat_type = if decision.verdict == Verdict::Deny && !decision.is_default() {
        ThreatType::PolicyViolation
    } else if window_count > config.anomaly_threshold {
        ThreatType::AnomalousFrequency
    } else if event.app_state == AppState::Background
        && event.resource.criticality() == Criticality::Critical
        && !explicitly_permitted(decision, policy)
    {
        ThreatType::BackgroundExfiltration
    } else {
        return None;
    };

    Some(ThreatReport {
        threat_id: format!("thr-{}-{}", event.device_id, event.event_seq),
        device_id: event.device_id.clone(),
        app_id: event.app_id.clone(),
        resource: event.resource,
        event_seqs: vec![event.event_seq],
        threat_type,
        severity: threat_type.severity(),
        status: ThreatStatus::Detected,
        mitigation: MitigationAction::NONE,
        detected_at_ms: now_ms,
    })
}

fn explicitly_permitted(decision: &Decision, policy: &PolicySet) -> bool {
    policy
        .rule(&decision.matched_rule_id)
        .is_some_and(|r| matches!(r.decision, RuleDecision::Grant | RuleDecision::Selective))
}

/// Choose and record the mitigation for a detected threat. `history` is the
/// number of earlier HIGH threats by the same (device, app).
pub fn mitigate(threat: &mut ThreatReport, history: u32, config: &DetectionConfig) -> MitigationAction {
    let action = match threat.threat_type {
        ThreatType::PolicyViolation => MitigationAction::new(MitigationKind::Block),
        ThreatType::AnomalousFrequency => MitigationAction {
            kind: MitigationKind::RateLimit,
            params: Some(RateLimit { count: config.anomaly_threshold, window_s: config.frequency_window_s }),
        },
        ThreatType::BackgroundExfiltration if history + 1 >= config.repeat_threshold => {
            MitigationAction::new(MitigationKind::QuarantineApp)
        }
        ThreatType::BackgroundExfiltration => MitigationAction::new(MitigationKind::RevokePermission),
    };
    threat.mitigation = action.clone();
    threat.status = ThreatStatus::Mitigated;
    action
}

/// Result of running one event through the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub decision: Decision,
    pub threat: Option<ThreatReport>,
    /// Accesses in the frequency window including this one.
    pub window_count: u32,
    /// The app was quarantined by this event's mitigation.
    pub quarantined: bool,
}

/// Mutable detection state: window rings, HIGH-threat history and the
/// quarantine set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pipeline {
    config: DetectionConfig,
    #[serde(with = "map_as_pairs")]
    windows: BTreeMap<WindowKey, WindowState>,
    #[serde(with = "map_as_pairs")]
    high_history: BTreeMap<(String, AppId), u32>,
    quarantine: BTreeSet<(String, AppId)>,
}

impl Pipeline {
    pub fn new(config: DetectionConfig) -> Self {
        Pipeline { config, ..Default::default() }
    }

    pub fn config(&self) -> &DetectionConfig {
        &self.config
    }

    fn horizon_ms(&self, policy: &PolicySet) -> u64 {
        let longest = policy.frequency_windows().last().copied().unwrap_or(0);
        u64::from(self.config.horizon_s.max(longest).max(self.config.frequency_window_s)) * 1000
    }

    /// Window maintenance only; returns the in-window count (including this
    /// event) and the prior counts for every window the policy references.
    pub fn observe(&mut self, event: &AccessEvent, policy: &PolicySet) -> (u32, WindowCounts) {
        let horizon = self.horizon_ms(policy);
        let window_ms = u64::from(self.config.frequency_window_s) * 1000;
        let state = self.windows.entry(WindowKey::of(event)).or_default();
        let count = state.monitor_update(event.at_ms, horizon, window_ms);
        let counts = policy
            .frequency_windows()
            .into_iter()
            .map(|w| (w, state.count_within(event.at_ms, u64::from(w) * 1000).saturating_sub(1)))
            .collect();
        (count, counts)
    }

    pub fn process(&mut self, event: &AccessEvent, policy: &PolicySet, now_ms: u64) -> Outcome {
        let (window_count, counts) = self.observe(event, policy);
        let who = (event.device_id.clone(), event.app_id.clone());

        let mut decision = if self.quarantine.contains(&who) {
            Decision {
                device_id: event.device_id.clone(),
                event_seq: event.event_seq,
                verdict: Verdict::Deny,
                matched_rule_id: QUARANTINE_RULE.to_string(),
                policy_version: policy.version(),
                constraints_applied: None,
                mitigation: None,
                threat_id: None,
                stale: false,
            }
        } else {
            evaluate(policy, event, &counts)
        };

        let mut quarantined = false;
        let threat = detect(event, &decision, window_count, policy, &self.config, now_ms).map(|mut threat| {
            let history = self.high_history.get(&who).copied().unwrap_or(0);
            let action = mitigate(&mut threat, history, &self.config);
            if threat.severity == Severity::High {
                *self.high_history.entry(who.clone()).or_insert(0) += 1;
            }
            if action.kind == MitigationKind::QuarantineApp {
                quarantined = self.quarantine.insert(who.clone());
            }
            decision.mitigation = Some(action);
            decision.threat_id = Some(threat.threat_id.clone());
            threat
        });

        Outcome { decision, threat, window_count, quarantined }
    }

    pub fn is_quarantined(&self, device_id: &str, app: &AppId) -> bool {
        self.quarantine.contains(&(device_id.to_string(), app.clone()))
    }

    pub fn quarantined(&self) -> impl Iterator<Item = &(String, AppId)> {
        self.quarantine.iter()
    }

    /// Restore a quarantine entry from the log.
    pub fn quarantine(&mut self, device_id: &str, app: &AppId) {
        self.quarantine.insert((device_id.to_string(), app.clone()));
    }

    /// Lift a quarantine and clear the app's HIGH history.
    pub fn lift(&mut self, device_id: &str, app: &AppId) -> bool {
        let key = (device_id.to_string(), app.clone());
        self.high_history.remove(&key);
        self.quarantine.remove(&key)
    }

    pub fn window(&self, key: &WindowKey) -> Option<&WindowState> {
        self.windows.get(key)
    }
}

mod map_as_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(
        map: &BTreeMap<K, V>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}
