//! The on-device agent.
//!
//! An agent replays a [`ScenarioScript`] as access events. In
//! [`Mode::Offloaded`] it ships them to the cloud in batches and applies the
//! returned decisions; in [`Mode::Local`] it evaluates its cached policy
//! itself. Either way every unit of device work lands in a [`WorkLedger`].
//!
//! Accesses identical to one already denied are refused on the device
//! without waiting for the cloud ("pre-blocked"), but are still reported so
//! server-side detection sees them.

mod fallback;
mod ledger;
mod script;
mod transport;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{DetectionConfig, MitigationKind, Pipeline};
use crate::policy::{evaluate, parse_policy_document, Decision, PolicySet, Verdict};
use crate::protocol::{ErrorCode, Message, HEARTBEAT_INTERVAL_MS};
use crate::resource::{AccessEvent, AppId, DeviceDescriptor};

pub use fallback::{access_key, fallback_decision, AccessKey, FallbackCache};
pub use ledger::{account_work, LedgerError, Mode, WorkBreakdown, WorkLedger, WorkStep};
pub use script::{Label, ScenarioError, ScenarioScript, ScriptedEvent};
pub use transport::{
    Connector, Faults, Loopback, LoopbackConnector, TcpConnector, TcpTransport, Transport, TransportError,
};

pub const AGENT_VERSION: &str = concat!("seaas-agent/", env!("CARGO_PKG_VERSION"));
pub const BATCH_SIZE: usize = 32;
pub const DECISION_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("server rejected {what}: {code:?}: {detail}")]
    Rejected { what: &'static str, code: ErrorCode, detail: String },
    #[error("protocol: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub device: DeviceDescriptor,
    pub batch_size: usize,
    pub decision_timeout: Duration,
    pub heartbeat_interval: Duration,
}

impl AgentConfig {
    pub fn new(device_id: impl Into<String>) -> Self {
        let mut device = DeviceDescriptor::full(device_id);
        device.agent_version = AGENT_VERSION.to_string();
        AgentConfig {
            device,
            batch_size: BATCH_SIZE,
            decision_timeout: DECISION_TIMEOUT,
            heartbeat_interval: Duration::from_millis(HEARTBEAT_INTERVAL_MS),
        }
    }
}

/// Where an applied decision came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Server,
    Local,
    /// Cached server decision reused while disconnected.
    Stale,
    /// No connection and no cache entry.
    FailClosed,
    PreBlocked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Applied {
    pub event_seq: u64,
    /// What the device enforced, after folding in blocking mitigations.
    pub verdict: Verdict,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub allow: u64,
    pub deny: u64,
    pub allow_constrained: u64,
}

impl VerdictCounts {
    fn add(&mut self, v: Verdict) {
        match v {
            Verdict::Allow => self.allow += 1,
            Verdict::Deny => self.deny += 1,
            Verdict::AllowConstrained => self.allow_constrained += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.allow + self.deny + self.allow_constrained
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackCounts {
    pub stale: u64,
    pub fail_closed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRunReport {
    pub device_id: String,
    pub mode: Mode,
    pub events_emitted: u64,
    pub pre_blocked: u64,
    /// Enforced verdicts, one per emitted event.
    pub decisions: VerdictCounts,
    pub fallback: FallbackCounts,
    pub reconnects: u64,
    pub policy_version: u64,
    pub work: WorkLedger,
}

struct Link {
    transport: Box<dyn Transport>,
    sid: String,
}

pub struct Agent {
    config: AgentConfig,
    mode: Mode,
    script: Vec<ScriptedEvent>,
    cursor: usize,
    next_seq: u64,
    policy: Arc<PolicySet>,
    windows: Pipeline,
    cache: FallbackCache,
    blocked: HashSet<AccessKey>,
    quarantined: HashSet<AppId>,
    ledger: WorkLedger,
    connector: Option<Box<dyn Connector>>,
    link: Option<Link>,
    last_sent: Instant,
    connects: u64,
    applied: Vec<Applied>,
    counts: VerdictCounts,
    fallback: FallbackCounts,
    pre_blocked: u64,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("device", &self.config.device.device_id)
            .field("mode", &self.mode)
            .field("cursor", &self.cursor)
            .field("connected", &self.link.is_some())
            .finish_non_exhaustive()
    }
}

impl Agent {
    /// `policy` is the cached policy: evaluated directly in local mode, and
    /// replaced by the server's on connect in offloaded mode.
    pub fn new(config: AgentConfig, mode: Mode, script: ScenarioScript, policy: Arc<PolicySet>) -> Self {
        let mut cache = FallbackCache::new();
        cache.policy_version = policy.version();
        Agent {
            config,
            mode,
            script: script.events,
            cursor: 0,
            next_seq: 1,
            policy,
            windows: Pipeline::new(DetectionConfig::default()),
            cache,
            blocked: HashSet::new(),
            quarantined: HashSet::new(),
            ledger: WorkLedger::new(mode),
            connector: None,
            link: None,
            last_sent: Instant::now(),
            connects: 0,
            applied: Vec::new(),
            counts: VerdictCounts::default(),
            fallback: FallbackCounts::default(),
            pre_blocked: 0,
        }
    }

    pub fn with_connector(mut self, connector: Box<dyn Connector>) -> Self {
        self.connector = Some(connector);
        self
    }

    /// First sequence number to use (continuing an earlier run).
    pub fn starting_seq(mut self, seq: u64) -> Self {
        self.next_seq = seq.max(1);
        self
    }

    pub fn device_id(&self) -> &str {
        &self.config.device.device_id
    }

    pub fn is_done(&self) -> bool {
        self.cursor >= self.script.len()
    }

    pub fn is_connected(&self) -> bool {
        self.link.is_some()
    }

    pub fn policy(&self) -> &Arc<PolicySet> {
        &self.policy
    }

    pub fn ledger(&self) -> &WorkLedger {
        &self.ledger
    }

    pub fn applied(&self) -> &[Applied] {
        &self.applied
    }

    pub fn cache(&self) -> &FallbackCache {
        &self.cache
    }

    /// Run the whole script.
    pub fn run(mut self) -> Result<AgentRunReport, AgentError> {
        while self.step()? {}
        Ok(self.finish())
    }

    /// Process one batch. Returns whether any events were left to process.
    pub fn step(&mut self) -> Result<bool, AgentError> {
        if self.is_done() {
            return Ok(false);
        }
        let end = (self.cursor + self.config.batch_size.max(1)).min(self.script.len());
        let mut batch = Vec::with_capacity(end - self.cursor);
        for scripted in &self.script[self.cursor..end] {
            let mut event = AccessEvent {
                event_seq: self.next_seq,
                device_id: self.config.device.device_id.clone(),
                app_id: scripted.app.clone(),
                resource: scripted.resource,
                action: scripted.action,
                app_state: scripted.app_state,
                at_ms: scripted.at_ms,
                payload_bytes: scripted.payload_bytes,
                pre_blocked: false,
            };
            event.pre_blocked = self.quarantined.contains(&event.app_id) || self.blocked.contains(&access_key(&event));
            self.next_seq += 1;
            batch.push(event);
        }
        self.cursor = end;
        match self.mode {
            Mode::Local => self.step_local(&batch),
            Mode::Offloaded => self.step_offloaded(&batch)?,
        }
        Ok(true)
    }

    fn rules(&self) -> usize {
        self.policy.rules().len()
    }

    fn enforce(&mut self, event: &AccessEvent, verdict: Verdict, source: Source) {
        if verdict == Verdict::Deny {
            self.blocked.insert(access_key(event));
        }
        self.counts.add(verdict);
        self.applied.push(Applied { event_seq: event.event_seq, verdict, source });
    }

    fn pre_block(&mut self, event: &AccessEvent) {
        self.ledger.charge(WorkStep::Apply, self.rules());
        self.pre_blocked += 1;
        self.counts.add(Verdict::Deny);
        self.applied.push(Applied { event_seq: event.event_seq, verdict: Verdict::Deny, source: Source::PreBlocked });
    }

    fn step_local(&mut self, batch: &[AccessEvent]) {
        let rules = self.rules();
        for event in batch {
            // Decided one at a time, so a denial earlier in this batch counts.
            if event.pre_blocked || self.blocked.contains(&access_key(event)) {
                self.pre_block(event);
                continue;
            }
            self.ledger.charge(WorkStep::Generate, rules);
            self.ledger.charge(WorkStep::Window, rules);
            let (_, counts) = self.windows.observe(event, &self.policy);
            self.ledger.charge(WorkStep::Evaluate, rules);
            let decision = evaluate(&self.policy, event, &counts);
            self.enforce(event, decision.verdict, Source::Local);
        }
    }

    fn step_offloaded(&mut self, batch: &[AccessEvent]) -> Result<(), AgentError> {
        let rules = self.rules();
        let live = batch.iter().filter(|e| !e.pre_blocked).count();
        for _ in 0..live {
            self.ledger.charge(WorkStep::Generate, rules);
        }

        let decisions = self.exchange(batch)?;
        for event in batch {
            if event.pre_blocked {
                self.pre_block(event);
                continue;
            }
            self.ledger.charge(WorkStep::Apply, rules);
            let found = decisions.as_ref().and_then(|ds| ds.iter().find(|d| d.event_seq == event.event_seq));
            match found {
                Some(decision) => {
                    if let Some(m) = &decision.mitigation {
                        if m.kind == MitigationKind::QuarantineApp {
                            self.quarantined.insert(event.app_id.clone());
                        }
                    }
                    let verdict = if decision.mitigation.as_ref().is_some_and(|m| m.blocks()) {
                        Verdict::Deny
                    } else {
                        decision.verdict
                    };
                    self.cache.record(access_key(event), decision);
                    self.enforce(event, verdict, Source::Server);
                }
                None => {
                    let d = fallback_decision(event, &self.cache);
                    let source = if d.stale {
                        self.fallback.stale += 1;
                        Source::Stale
                    } else {
                        self.fallback.fail_closed += 1;
                        Source::FailClosed
                    };
                    self.enforce(event, d.verdict, source);
                }
            }
        }
        Ok(())
    }

    /// Send a batch and wait for its decisions. `None` means the cloud was
    /// unreachable and the caller must fall back.
    fn exchange(&mut self, batch: &[AccessEvent]) -> Result<Option<Vec<Decision>>, AgentError> {
        for attempt in 0..2 {
            if self.link.is_none() && !self.connect()? {
                return Ok(None);
            }
            self.heartbeat_if_due();
            let sid = self.link.as_ref().expect("connected").sid.clone();
            let msg = Message::Events { sid, events: batch.to_vec() };
            if self.send(&msg).is_err() {
                self.link = None;
                continue;
            }
            let rules = self.rules();
            for _ in batch.iter().filter(|e| !e.pre_blocked) {
                self.ledger.charge(WorkStep::Encode, rules);
            }
            match self.await_decisions()? {
                Reply::Decisions(ds) => return Ok(Some(ds)),
                Reply::Lost => return Ok(None),
                Reply::NoSession if attempt == 0 => {
                    self.link = None;
                }
                Reply::NoSession => return Ok(None),
            }
        }
        Ok(None)
    }

    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let link = self.link.as_mut().ok_or(TransportError::Closed)?;
        link.transport.send(msg)?;
        self.last_sent = Instant::now();
        Ok(())
    }

    fn heartbeat_if_due(&mut self) {
        if self.last_sent.elapsed() >= self.config.heartbeat_interval {
            if let Some(sid) = self.link.as_ref().map(|l| l.sid.clone()) {
                if self.send(&Message::Hb { sid }).is_err() {
                    self.link = None;
                }
            }
        }
    }

    fn await_decisions(&mut self) -> Result<Reply, AgentError> {
        let deadline = Instant::now() + self.config.decision_timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let Some(link) = self.link.as_mut() else {
                return Ok(Reply::Lost);
            };
            let msg = match link.transport.recv(left) {
                Ok(m) => m,
                Err(e) => {
                    tracing::debug!("{}: {e}; falling back", self.config.device.device_id);
                    self.link = None;
                    return Ok(Reply::Lost);
                }
            };
            match msg {
                Message::Decisions { decisions, .. } => return Ok(Reply::Decisions(decisions)),
                Message::PolicyUpdate { version, policy, .. } => self.on_policy(version, &policy),
                Message::HbAck { .. } => {}
                Message::Err { code: ErrorCode::NoSession, .. } => return Ok(Reply::NoSession),
                Message::Err { code, detail, .. } => {
                    return Err(AgentError::Rejected { what: "event batch", code, detail })
                }
                other => return Err(AgentError::Protocol(format!("unexpected `{}` from server", other.kind()))),
            }
        }
    }

    /// Adopt a pushed or handshake policy and acknowledge it.
    fn on_policy(&mut self, version: u64, document: &str) {
        match parse_policy_document(document).and_then(|p| p.with_version(version)) {
            Ok(set) => {
                self.policy = Arc::new(set);
                self.cache.policy_version = version;
                // Earlier denials may no longer hold.
                self.blocked.clear();
            }
            Err(e) => tracing::warn!("ignoring unparsable policy v{version}: {e}"),
        }
        if let Some(sid) = self.link.as_ref().map(|l| l.sid.clone()) {
            if self.send(&Message::PolicyAck { sid, version }).is_err() {
                self.link = None;
            }
        }
    }

    /// Open a link and handshake. `Ok(false)` when the cloud is unreachable.
    fn connect(&mut self) -> Result<bool, AgentError> {
        let Some(connector) = self.connector.as_mut() else {
            return Ok(false);
        };
        let mut transport = match connector.connect() {
            Ok(t) => t,
            Err(e) => {
                tracing::debug!("connect: {e}");
                return Ok(false);
            }
        };
        if transport.send(&Message::Hello { device: self.config.device.clone() }).is_err() {
            return Ok(false);
        }
        match transport.recv(self.config.decision_timeout) {
            Ok(Message::HelloAck { sid, version, policy }) => {
                self.connects += 1;
                self.last_sent = Instant::now();
                self.link = Some(Link { transport, sid });
                self.on_policy(version, &policy);
                // The policy ack can fail and drop the link again.
                Ok(self.link.is_some())
            }
            Ok(Message::Err { code, detail, .. }) => Err(AgentError::Rejected { what: "hello", code, detail }),
            Ok(other) => Err(AgentError::Protocol(format!("expected hello_ack, got `{}`", other.kind()))),
            Err(_) => Ok(false),
        }
    }

    /// Say goodbye (best effort) and produce the run report.
    pub fn finish(mut self) -> AgentRunReport {
        if let Some(sid) = self.link.as_ref().map(|l| l.sid.clone()) {
            let _ = self.send(&Message::Bye { sid });
        }
        AgentRunReport {
            device_id: self.config.device.device_id.clone(),
            mode: self.mode,
            events_emitted: self.applied.len() as u64,
            pre_blocked: self.pre_blocked,
            decisions: self.counts,
            fallback: self.fallback,
            reconnects: self.connects.saturating_sub(1),
            policy_version: self.policy.version(),
            work: self.ledger,
        }
    }
}

enum Reply {
    Decisions(Vec<Decision>),
    NoSession,
    Lost,
}

/// Replay `script` as `device_id` and report. Offloaded runs go through
/// `connector`; without one they run fully disconnected.
pub fn run_scenario(
    script: ScenarioScript,
    mode: Mode,
    device_id: &str,
    policy: Arc<PolicySet>,
    connector: Option<Box<dyn Connector>>,
) -> Result<AgentRunReport, AgentError> {
    script.validate()?;
    let mut agent = Agent::new(AgentConfig::new(device_id), mode, script, policy);
    if let Some(c) = connector {
        agent = agent.with_connector(c);
    }
    agent.run()
}
