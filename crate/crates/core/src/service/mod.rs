//! The cloud back end: sessions, the active policy, the detection pipeline,
//! persistence, and the admin surface.
//!
//! All mutable state sits behind one lock. Policy mutations are therefore
//! serialized (single writer) and every batch is evaluated against one
//! immutable policy snapshot.

pub mod admin;
mod connection;
pub mod log;
pub mod net;

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

use crate::clock::{Clock, SystemClock};
use crate::detection::{DetectionConfig, Pipeline, ThreatReport};
use crate::harness::TrialReport;
use crate::policy::{
    parse_policy_document, serialize_policy_document, AppSelector, Constraints, Context, Decision, PolicyError,
    PolicyRule, PolicySet, PolicyStore, ActionSelector, ResourceSelector, RuleDecision,
};
use crate::protocol::{ErrorCode, Message, Session, HEARTBEAT_TIMEOUT_MS};
use crate::resource::{validate_event, AccessEvent, AppId, DeviceDescriptor, Resource, Validated};

pub use connection::Connection;
use log::{EventLog, EventLogRecord, PolicyChange, QuarantineChange, Record};

pub const ADMIN_PORT: u16 = 7741;
/// Priority of per-user quick rules; the admin range is 0..=9_999.
pub const QUICK_RULE_PRIORITY: i64 = 10_000;
pub const PAGE_LIMIT: usize = 500;

/// The policy pack a fresh server starts with.
pub const DEFAULT_POLICY_PACK: &str = include_str!("../../data/policy/default_pack.json");

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("storage: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub detection: DetectionConfig,
    pub heartbeat_timeout_ms: u64,
    /// Log records between snapshots; 0 disables snapshots.
    pub snapshot_every: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            detection: DetectionConfig::default(),
            heartbeat_timeout_ms: HEARTBEAT_TIMEOUT_MS,
            snapshot_every: 5_000,
        }
    }
}

/// One page of an append-ordered feed. `cursor` is the sequence of the last
/// item returned (or the request cursor when the page is empty).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    pub cursor: u64,
}

fn page<T: Clone>(items: &[T], since: u64) -> Page<T> {
    let start = (since as usize).min(items.len());
    let end = (start + PAGE_LIMIT).min(items.len());
    Page { items: items[start..end].to_vec(), cursor: since.max(end as u64) }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct DeviceRecord {
    descriptor: DeviceDescriptor,
    last_seq: u64,
    last_at_ms: u64,
    events: Vec<AccessEvent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviceView {
    pub device_id: String,
    pub agent_version: String,
    pub resource_inventory: Vec<Resource>,
    pub last_seq: u64,
    pub events: usize,
    pub session: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct PermissionRequest {
    pub device_id: String,
    pub app_id: String,
    pub resource: String,
    pub verdict: String,
    #[serde(default)]
    pub constraints: Option<Constraints>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PermissionChange {
    pub version: u64,
    pub rule_id: String,
}

/// Everything needed to rebuild the service, as stored in a snapshot.
#[derive(Debug, Serialize, Deserialize)]
struct Snapshot {
    log_seq: u64,
    policies: Vec<PolicyChange>,
    devices: BTreeMap<String, DeviceRecord>,
    pipeline: Pipeline,
    threats: Vec<ThreatReport>,
    decisions: Vec<Decision>,
}

/// Outcome of opening a data directory.
#[derive(Debug, Default, Clone)]
pub struct RecoveryReport {
    pub from_snapshot: bool,
    pub replayed_records: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug)]
struct State {
    policies: PolicyStore,
    devices: BTreeMap<String, DeviceRecord>,
    sessions: HashMap<String, Session>,
    pipeline: Pipeline,
    threats: Vec<ThreatReport>,
    decisions: Vec<Decision>,
    decision_index: HashMap<(String, u64), usize>,
    trials: Vec<TrialReport>,
    log: Option<EventLog>,
    data_dir: Option<PathBuf>,
    records_since_snapshot: u64,
    sid_counter: u64,
    sid_nonce: u32,
}

impl State {
    fn fresh(policy: PolicySet, config: &ServiceConfig) -> Self {
        State {
            policies: PolicyStore::new(policy),
            devices: BTreeMap::new(),
            sessions: HashMap::new(),
            pipeline: Pipeline::new(config.detection),
            threats: Vec::new(),
            decisions: Vec::new(),
            decision_index: HashMap::new(),
            trials: Vec::new(),
            log: None,
            data_dir: None,
            records_since_snapshot: 0,
            sid_counter: 0,
            sid_nonce: rand::random(),
        }
    }

    fn append(&mut self, ts_ms: u64, record: Record) -> io::Result<()> {
        if let Some(log) = self.log.as_mut() {
            log.append(ts_ms, record)?;
            self.records_since_snapshot += 1;
        }
        Ok(())
    }

    fn flush(&mut self, config: &ServiceConfig) -> io::Result<()> {
        if let Some(log) = self.log.as_mut() {
            log.flush()?;
        }
        if config.snapshot_every > 0 && self.records_since_snapshot >= config.snapshot_every {
            self.write_snapshot()?;
        }
        Ok(())
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            log_seq: self.log.as_ref().map_or(0, EventLog::last_seq),
            policies: self
                .policies
                .history()
                .map(|p| PolicyChange { version: p.version(), document: serialize_policy_document(p) })
                .collect(),
            devices: self.devices.clone(),
            pipeline: self.pipeline.clone(),
            threats: self.threats.clone(),
            decisions: self.decisions.clone(),
        }
    }

    fn write_snapshot(&mut self) -> io::Result<()> {
        if let Some(dir) = self.data_dir.clone() {
            log::write_snapshot(&dir, &self.snapshot())?;
            self.records_since_snapshot = 0;
        }
        Ok(())
    }

    fn store_decision(&mut self, decision: Decision) {
        self.decision_index
            .insert((decision.device_id.clone(), decision.event_seq), self.decisions.len());
        self.decisions.push(decision);
    }

    fn live_session(&mut self, sid: &str, now_ms: u64) -> Option<&mut Session> {
        let expired = self.sessions.get(sid).is_some_and(|s| s.deadline_ms < now_ms);
        if expired {
            self.sessions.remove(sid);
        }
        self.sessions.get_mut(sid)
    }

    fn session_for_device(&self, device_id: &str) -> Option<&Session> {
        self.sessions.values().find(|s| s.device.device_id == device_id)
    }
}

/// Rebuild state from an optional snapshot plus the committed log records
/// after it.
fn recover_state(
    snapshot: Option<Snapshot>,
    records: &[EventLogRecord],
    default_policy: PolicySet,
    config: &ServiceConfig,
) -> Result<(State, RecoveryReport), ServiceError> {
    let mut report = RecoveryReport { from_snapshot: snapshot.is_some(), ..Default::default() };
    let mut state = State::fresh(default_policy, config);
    let mut seen_policy = false;
    let mut after = 0;

    if let Some(snap) = snapshot {
        after = snap.log_seq;
        let mut versions = snap.policies.into_iter();
        if let Some(first) = versions.next() {
            state.policies = PolicyStore::new(parse_policy_document(&first.document)?.with_version(first.version)?);
            seen_policy = true;
        }
        for change in versions {
            state.policies.restore(parse_policy_document(&change.document)?.with_version(change.version)?)?;
        }
        state.devices = snap.devices;
        state.pipeline = snap.pipeline;
        state.threats = snap.threats;
        for d in snap.decisions {
            state.store_decision(d);
        }
    }

    let mut pending_event: Option<AccessEvent> = None;
    let mut pending_threat: Option<ThreatReport> = None;

    for rec in records.iter().filter(|r| r.seq > after) {
        report.replayed_records += 1;
        match &rec.record {
            Record::PolicyChange(change) => {
                let set = parse_policy_document(&change.document)?.with_version(change.version)?;
                if !seen_policy {
                    state.policies = PolicyStore::new(set);
                    seen_policy = true;
                } else {
                    state.policies.restore(set)?;
                }
            }
            Record::Session(descriptor) => {
                state
                    .devices
                    .entry(descriptor.device_id.clone())
                    .and_modify(|d| d.descriptor = descriptor.clone())
                    .or_insert_with(|| DeviceRecord {
                        descriptor: descriptor.clone(),
                        last_seq: 0,
                        last_at_ms: 0,
                        events: Vec::new(),
                    });
            }
            Record::Event(event) => pending_event = Some(event.clone()),
            Record::Threat(threat) => pending_threat = Some(threat.clone()),
            Record::Quarantine(q) if q.event_seq.is_none() => {
                if q.lifted {
                    state.pipeline.lift(&q.device_id, &q.app_id);
                } else {
                    state.pipeline.quarantine(&q.device_id, &q.app_id);
                }
            }
            // Mitigation-driven quarantines are re-derived by the replay below.
            Record::Quarantine(_) => {}
            Record::Decision(decision) => {
                let Some(event) = pending_event.take() else {
                    report.warnings.push(format!("decision record {} without its event; skipped", rec.seq));
                    continue;
                };
                let policy = state.policies.get(decision.policy_version).ok_or_else(|| {
                    ServiceError::BadRequest(format!("decision references unknown policy version {}", decision.policy_version))
                })?;
                let outcome = state.pipeline.process(&event, &policy, rec.ts_ms);
                if &outcome.decision != decision {
                    report
                        .warnings
                        .push(format!("replayed decision for {}:{} differs from the log", event.device_id, event.event_seq));
                }
                if let Some(threat) = pending_threat.take() {
                    state.threats.push(threat);
                }
                let device = state.devices.entry(event.device_id.clone()).or_insert_with(|| DeviceRecord {
                    descriptor: DeviceDescriptor::full(event.device_id.clone()),
                    last_seq: 0,
                    last_at_ms: 0,
                    events: Vec::new(),
                });
                device.last_seq = device.last_seq.max(event.event_seq);
                device.last_at_ms = device.last_at_ms.max(event.at_ms);
                device.events.push(event);
                state.store_decision(decision.clone());
            }
        }
    }
    Ok((state, report))
}

#[derive(Debug)]
pub struct Service {
    state: Mutex<State>,
    clock: Arc<dyn Clock>,
    config: ServiceConfig,
    policy_tx: watch::Sender<u64>,
}

impl Service {
    /// A service without persistence.
    pub fn in_memory(policy: PolicySet, config: ServiceConfig, clock: Arc<dyn Clock>) -> Arc<Self> {
        Self::from_state(State::fresh(policy, &config), config, clock)
    }

    /// Built-in default pack, system clock, no persistence.
    pub fn with_defaults() -> Arc<Self> {
        Self::in_memory(default_policy_pack(), ServiceConfig::default(), Arc::new(SystemClock))
    }

    /// Open (or initialize) a persistent service in `dir`, recovering from
    /// the snapshot and log found there. `policy` seeds a fresh directory.
    pub fn open(
        dir: &Path,
        policy: Option<PolicySet>,
        config: ServiceConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<(Arc<Self>, RecoveryReport), ServiceError> {
        let (log, scan) = EventLog::open(dir)?;
        let snapshot: Option<Snapshot> = log::read_snapshot(dir)?;
        let snapshot = snapshot.filter(|s| s.log_seq <= log.last_seq());
        let fresh = scan.records.is_empty() && snapshot.is_none();
        let seed = policy.clone().unwrap_or_else(default_policy_pack);

        let (mut state, mut report) = recover_state(snapshot, &scan.records, seed.clone(), &config)?;
        report.warnings.splice(0..0, scan.warnings);
        for w in &report.warnings {
            tracing::warn!("recovery: {w}");
        }
        state.log = Some(log);
        state.data_dir = Some(dir.to_path_buf());

        let now = clock.now_ms();
        if fresh {
            let set = state.policies.active();
            state.append(now, Record::PolicyChange(PolicyChange { version: set.version(), document: serialize_policy_document(&set) }))?;
        } else if let Some(requested) = policy {
            // A different --policy on restart becomes the next version.
            let active = state.policies.active();
            if requested.rules() != active.rules() || requested.defaults() != active.defaults() {
                let set = state.policies.install(requested)?;
                state.append(now, Record::PolicyChange(PolicyChange { version: set.version(), document: serialize_policy_document(&set) }))?;
            }
        }
        state.flush(&config)?;
        Ok((Self::from_state(state, config, clock), report))
    }

    fn from_state(state: State, config: ServiceConfig, clock: Arc<dyn Clock>) -> Arc<Self> {
        let (policy_tx, _) = watch::channel(state.policies.version());
        Arc::new(Service { state: Mutex::new(state), clock, config, policy_tx })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    /// Notified with the new version on every policy change.
    pub fn subscribe_policy(&self) -> watch::Receiver<u64> {
        self.policy_tx.subscribe()
    }

    pub fn active_policy(&self) -> Arc<PolicySet> {
        self.lock().policies.active()
    }

    pub fn policy_version(&self) -> u64 {
        self.lock().policies.version()
    }

    pub fn policy_at(&self, version: u64) -> Option<Arc<PolicySet>> {
        self.lock().policies.get(version)
    }

    pub fn handshake(&self, hello: &Message) -> Result<(Session, Message), Message> {
        let Message::Hello { device } = hello else {
            return Err(Message::err(None, ErrorCode::BadHello, format!("expected hello, got {}", hello.kind())));
        };
        device
            .validate()
            .map_err(|e| Message::err(None, ErrorCode::BadHello, e.to_string()))?;

        let now = self.now_ms();
        let mut st = self.lock();
        st.sessions.retain(|_, s| s.device.device_id != device.device_id);
        let record = st.devices.entry(device.device_id.clone()).or_insert_with(|| DeviceRecord {
            descriptor: device.clone(),
            last_seq: 0,
            last_at_ms: 0,
            events: Vec::new(),
        });
        record.descriptor = device.clone();
        let last_seq = record.last_seq;

        st.sid_counter += 1;
        let sid = format!("s{:08x}-{}", st.sid_nonce, st.sid_counter);
        let policy = st.policies.active();
        let session = Session {
            sid: sid.clone(),
            device: device.clone(),
            last_seq,
            policy_version_acked: 0,
            deadline_ms: now + self.config.heartbeat_timeout_ms,
        };
        st.sessions.insert(sid.clone(), session.clone());
        let logged = st.append(now, Record::Session(device.clone())).and_then(|_| st.flush(&self.config));
        if let Err(e) = logged {
            tracing::error!("event log: {e}");
        }

        let ack = Message::HelloAck { sid, version: policy.version(), policy: serialize_policy_document(&policy) };
        Ok((session, ack))
    }

    pub fn session(&self, sid: &str) -> Option<Session> {
        let now = self.now_ms();
        self.lock().live_session(sid, now).cloned()
    }

    /// Refresh liveness; `None` if the session is gone.
    pub fn heartbeat(&self, sid: &str) -> Option<Message> {
        let now = self.now_ms();
        let timeout = self.config.heartbeat_timeout_ms;
        let mut st = self.lock();
        let session = st.live_session(sid, now)?;
        session.deadline_ms = now + timeout;
        Some(Message::HbAck { sid: sid.to_string() })
    }

    pub fn policy_ack(&self, sid: &str, version: u64) -> bool {
        let now = self.now_ms();
        let timeout = self.config.heartbeat_timeout_ms;
        let mut st = self.lock();
        match st.live_session(sid, now) {
            Some(session) => {
                session.policy_version_acked = session.policy_version_acked.max(version);
                session.deadline_ms = now + timeout;
                true
            }
            None => false,
        }
    }

    pub fn close_session(&self, sid: &str) -> bool {
        self.lock().sessions.remove(sid).is_some()
    }

    /// Close sessions whose deadline passed. Returns how many were closed.
    pub fn reap_expired(&self) -> usize {
        let now = self.now_ms();
        let mut st = self.lock();
        let before = st.sessions.len();
        st.sessions.retain(|_, s| s.deadline_ms >= now);
        before - st.sessions.len()
    }

    /// Decide a batch of events. Duplicates get their stored decision back;
    /// any ordering or validation failure rejects the whole batch.
    pub fn process_event_batch(&self, sid: &str, events: &[AccessEvent]) -> Message {
        let now = self.now_ms();
        let timeout = self.config.heartbeat_timeout_ms;
        let mut guard = self.lock();
        let st = &mut *guard;
        let reply_err = |code, detail: String| Message::err(Some(sid.to_string()), code, detail);

        let Some(session) = st.live_session(sid, now) else {
            return reply_err(ErrorCode::NoSession, format!("no live session `{sid}`"));
        };
        session.deadline_ms = now + timeout;
        let descriptor = session.device.clone();
        let device_id = descriptor.device_id.clone();

        if let Some(w) = events.windows(2).find(|w| w[0].event_seq >= w[1].event_seq) {
            return reply_err(
                ErrorCode::BadBatch,
                format!("event_seq {} follows {}; batches must be strictly increasing", w[1].event_seq, w[0].event_seq),
            );
        }

        let (last_seq, mut last_at) = st
            .devices
            .get(&device_id)
            .map_or((0, 0), |d| (d.last_seq, d.last_at_ms));
        let mut plan = Vec::with_capacity(events.len());
        for event in events {
            match validate_event(event.clone(), &descriptor, last_seq) {
                Err(e) => return reply_err(ErrorCode::BadEvent, format!("event {}: {e}", event.event_seq)),
                Ok(Validated::Duplicate(e)) => {
                    let Some(&idx) = st.decision_index.get(&(device_id.clone(), e.event_seq)) else {
                        return reply_err(
                            ErrorCode::BadBatch,
                            format!("event_seq {} is at or below last_seq {last_seq} but was never decided", e.event_seq),
                        );
                    };
                    plan.push(Err(idx));
                }
                Ok(Validated::Accepted(e)) => {
                    if e.at_ms < last_at {
                        return reply_err(
                            ErrorCode::BadBatch,
                            format!("event {} at_ms {} goes back in time (last {last_at})", e.event_seq, e.at_ms),
                        );
                    }
                    last_at = e.at_ms;
                    plan.push(Ok(e));
                }
            }
        }

        let policy = st.policies.active();
        let mut decisions = Vec::with_capacity(plan.len());
        for step in plan {
            match step {
                Err(idx) => decisions.push(st.decisions[idx].clone()),
                Ok(event) => {
                    let outcome = st.pipeline.process(&event, &policy, now);
                    let mut log_result = st.append(now, Record::Event(event.clone()));
                    if let Some(threat) = &outcome.threat {
                        log_result = log_result.and_then(|_| st.append(now, Record::Threat(threat.clone())));
                        if outcome.quarantined {
                            let q = QuarantineChange {
                                device_id: event.device_id.clone(),
                                app_id: event.app_id.clone(),
                                lifted: false,
                                event_seq: Some(event.event_seq),
                            };
                            log_result = log_result.and_then(|_| st.append(now, Record::Quarantine(q)));
                        }
                        st.threats.push(threat.clone());
                    }
                    log_result = log_result.and_then(|_| st.append(now, Record::Decision(outcome.decision.clone())));
                    if let Err(e) = log_result {
                        tracing::error!("event log: {e}");
                    }
                    let device = st.devices.get_mut(&device_id).expect("handshake registered the device");
                    device.last_seq = event.event_seq;
                    device.last_at_ms = event.at_ms;
                    device.events.push(event);
                    st.store_decision(outcome.decision.clone());
                    decisions.push(outcome.decision);
                }
            }
        }
        if let Err(e) = st.flush(&self.config) {
            tracing::error!("event log flush: {e}");
        }
        if let Some(session) = st.sessions.get_mut(sid) {
            session.last_seq = st.devices[&device_id].last_seq;
        }
        Message::Decisions { sid: sid.to_string(), decisions }
    }

    /// Replace the admin policy document; the result is the next version.
    pub fn put_policy(&self, document: &str) -> Result<u64, ServiceError> {
        let mut st = self.lock();
        let set = st.policies.apply_update(document)?;
        self.publish(&mut st, &set)?;
        Ok(set.version())
    }

    fn publish(&self, st: &mut State, set: &PolicySet) -> Result<(), ServiceError> {
        let now = self.now_ms();
        st.append(now, Record::PolicyChange(PolicyChange { version: set.version(), document: serialize_policy_document(set) }))?;
        st.flush(&self.config)?;
        self.policy_tx.send_replace(set.version());
        Ok(())
    }

    /// Install or replace the quick rule for one (device, app, resource).
    pub fn set_permission(&self, req: &PermissionRequest) -> Result<PermissionChange, ServiceError> {
        let resource: Resource = req.resource.parse().map_err(|e| ServiceError::BadRequest(format!("{e}")))?;
        let app = AppId::new(req.app_id.clone()).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        if req.device_id.is_empty() || req.device_id.chars().any(char::is_whitespace) {
            return Err(ServiceError::BadRequest("device_id must be a non-empty token".into()));
        }
        let decision = match req.verdict.as_str() {
            "GRANT" | "ALLOW" => RuleDecision::Grant,
            "DENY" => RuleDecision::Deny,
            "SELECTIVE" => RuleDecision::Selective,
            other => return Err(ServiceError::BadRequest(format!("unknown verdict `{other}`"))),
        };
        let rule_id = format!("user:{}:{}:{}", req.device_id, app, resource);
        let rule = PolicyRule {
            id: rule_id.clone(),
            priority: QUICK_RULE_PRIORITY,
            app: AppSelector::Exact(app),
            resource: ResourceSelector::Exact(resource),
            action: ActionSelector::Any,
            when: Context { device: Some(req.device_id.clone()), ..Context::default() },
            decision,
            constraints: req.constraints.clone().unwrap_or_default(),
        };
        rule.validate().map_err(ServiceError::BadRequest)?;

        let mut st = self.lock();
        let active = st.policies.active();
        let mut rules: Vec<PolicyRule> = active.rules().iter().filter(|r| r.id != rule_id).cloned().collect();
        rules.push(rule);
        let set = st.policies.install(PolicySet::new(active.version(), rules, active.defaults())?)?;
        self.publish(&mut st, &set)?;
        Ok(PermissionChange { version: set.version(), rule_id })
    }

    pub fn lift_quarantine(&self, device_id: &str, app_id: &str) -> Result<bool, ServiceError> {
        let app = AppId::new(app_id).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        let now = self.now_ms();
        let mut st = self.lock();
        let lifted = st.pipeline.lift(device_id, &app);
        if lifted {
            let q = QuarantineChange { device_id: device_id.to_string(), app_id: app, lifted: true, event_seq: None };
            st.append(now, Record::Quarantine(q))?;
            st.flush(&self.config)?;
        }
        Ok(lifted)
    }

    /// A `policy_update` for `sid` if its device has not been sent the
    /// active version yet.
    pub(crate) fn pending_push(&self, sid: &str, sent_version: u64) -> Option<Message> {
        let st = self.lock();
        let policy = st.policies.active();
        (st.sessions.contains_key(sid) && policy.version() > sent_version).then(|| Message::PolicyUpdate {
            sid: sid.to_string(),
            version: policy.version(),
            policy: serialize_policy_document(&policy),
        })
    }

    pub fn list_threats(&self, since: u64) -> Page<ThreatReport> {
        page(&self.lock().threats, since)
    }

    pub fn list_decisions(&self, since: u64) -> Page<Decision> {
        page(&self.lock().decisions, since)
    }

    pub fn list_device_events(&self, device_id: &str, since: u64) -> Option<Page<AccessEvent>> {
        self.lock().devices.get(device_id).map(|d| page(&d.events, since))
    }

    pub fn devices(&self) -> Vec<DeviceView> {
        let st = self.lock();
        st.devices
            .values()
            .map(|d| DeviceView {
                device_id: d.descriptor.device_id.clone(),
                agent_version: d.descriptor.agent_version.clone(),
                resource_inventory: d.descriptor.resource_inventory.iter().copied().collect(),
                last_seq: d.last_seq,
                events: d.events.len(),
                session: st.session_for_device(&d.descriptor.device_id).map(|s| s.sid.clone()),
            })
            .collect()
    }

    /// Full threat store in append order.
    pub fn threats(&self) -> Vec<ThreatReport> {
        self.lock().threats.clone()
    }

    /// Full decision store in append order.
    pub fn decisions(&self) -> Vec<Decision> {
        self.lock().decisions.clone()
    }

    pub fn decision(&self, device_id: &str, event_seq: u64) -> Option<Decision> {
        let st = self.lock();
        st.decision_index.get(&(device_id.to_string(), event_seq)).map(|&i| st.decisions[i].clone())
    }

    pub fn device_events(&self, device_id: &str) -> Vec<AccessEvent> {
        self.lock().devices.get(device_id).map(|d| d.events.clone()).unwrap_or_default()
    }

    pub fn quarantined(&self) -> Vec<(String, AppId)> {
        self.lock().pipeline.quarantined().cloned().collect()
    }

    pub fn record_trial(&self, report: TrialReport) {
        self.lock().trials.push(report);
    }

    pub fn trials(&self) -> Vec<TrialReport> {
        self.lock().trials.clone()
    }

    pub fn snapshot_now(&self) -> Result<(), ServiceError> {
        let mut st = self.lock();
        if let Some(log) = st.log.as_mut() {
            log.flush()?;
        }
        st.write_snapshot()?;
        Ok(())
    }
}

pub fn default_policy_pack() -> PolicySet {
    parse_policy_document(DEFAULT_POLICY_PACK).expect("built-in policy pack is valid")
}
