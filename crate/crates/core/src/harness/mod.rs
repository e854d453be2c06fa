//! Evaluation harness: run labeled scenario suites against the service and
//! score detection and device work.
//!
//! A trial replays every user's script twice. The offloaded pass talks to a
//! live service (embedded or remote) and produces threat reports; the local
//! pass only exists to price on-device evaluation. Threat reports are joined
//! back to script labels by `(device_id, event_seq)`.

mod export;
mod suite;

use std::collections::{HashMap, HashSet};
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    Agent, AgentConfig, AgentError, Connector, Label, LoopbackConnector, Mode, ScenarioScript, TcpConnector,
};
use crate::clock::ManualClock;
use crate::detection::ThreatReport;
use crate::policy::{serialize_policy_document, PolicySet};
use crate::service::{Service, ServiceConfig};

pub use export::{export_results, render_csv, ExportError, CSV_COLUMNS};
pub use suite::{
    default_pack, generate_suite, generate_trial, Suite, SuiteError, DEFAULT_SUITE_SEED, DEFAULT_TRIALS,
    EVASIVE_EVERY, MIN_THREATS_PER_TRIAL, USERS_PER_TRIAL,
};

/// Offloaded/local work ceiling for packs of at least [`EFFICIENCY_MIN_RULES`].
pub const EFFICIENCY_THRESHOLD: f64 = 0.25;
pub const EFFICIENCY_MIN_RULES: usize = 64;

#[derive(Debug, Error)]
pub enum TrialError {
    #[error("trial aborted: {0}")]
    Aborted(String),
    #[error("trial invalid: {0}")]
    Invalid(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("negative count: {0}")]
pub struct MetricError(pub i64);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ComparisonError {
    #[error("no local baseline: the local pass did no work")]
    MissingBaseline,
}

/// Where the offloaded pass runs.
#[derive(Debug, Clone, Default)]
pub enum Target {
    /// A fresh in-process service per trial, reached through the loopback
    /// transport (full codec, no sockets).
    #[default]
    Embedded,
    /// A running `seaas-server`.
    Remote { protocol: SocketAddr, admin: SocketAddr },
}

#[derive(Debug, Clone)]
pub struct TrialConfig {
    pub trial_id: u32,
    /// One script per simulated user.
    pub scripts: Vec<ScenarioScript>,
    pub policy: PolicySet,
    pub seed: u64,
    pub target: Target,
}

impl TrialConfig {
    pub fn new(trial_id: u32, scripts: Vec<ScenarioScript>, policy: PolicySet, seed: u64) -> Self {
        TrialConfig { trial_id, scripts, policy, seed, target: Target::Embedded }
    }

    pub fn agents(&self) -> usize {
        self.scripts.len()
    }

    pub fn device_id(&self, user: usize) -> String {
        format!("t{}-u{}", self.trial_id, user + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_id: u32,
    pub users: u32,
    pub policy_rules: u32,
    pub events_total: u64,
    pub threats_injected: u64,
    pub detected: u64,
    pub undetected: u64,
    /// Threat reports raised on events labeled benign.
    pub false_positives: u64,
    /// `None` when nothing went undetected.
    pub detection_ratio: Option<f64>,
    pub detection_rate: Option<f64>,
    pub work_units_local: u64,
    pub work_units_offloaded: u64,
    pub work_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMetrics {
    /// detected / undetected; `None` when undetected is 0.
    pub ratio: Option<f64>,
    /// detected / (detected + undetected); `None` when both are 0.
    pub rate: Option<f64>,
}

pub fn compute_detection_metrics(detected: i64, undetected: i64) -> Result<DetectionMetrics, MetricError> {
    if detected < 0 {
        return Err(MetricError(detected));
    }
    if undetected < 0 {
        return Err(MetricError(undetected));
    }
    let (d, u) = (detected as f64, undetected as f64);
    Ok(DetectionMetrics {
        ratio: (undetected > 0).then(|| d / u),
        rate: (detected + undetected > 0).then(|| d / (d + u)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyVerdict {
    pub work_ratio: f64,
    /// `None` below [`EFFICIENCY_MIN_RULES`], where only `offloaded < local`
    /// is required.
    pub threshold: Option<f64>,
    pub pass: bool,
}

pub fn compare_cpu_modes(report: &TrialReport) -> Result<EfficiencyVerdict, ComparisonError> {
    compare_cpu_modes_with(report, EFFICIENCY_THRESHOLD)
}

pub fn compare_cpu_modes_with(report: &TrialReport, threshold: f64) -> Result<EfficiencyVerdict, ComparisonError> {
    if report.work_units_local == 0 {
        return Err(ComparisonError::MissingBaseline);
    }
    let work_ratio = report.work_units_offloaded as f64 / report.work_units_local as f64;
    let gated = report.policy_rules as usize >= EFFICIENCY_MIN_RULES;
    let pass = if gated { work_ratio <= threshold } else { report.work_units_offloaded < report.work_units_local };
    Ok(EfficiencyVerdict { work_ratio, threshold: gated.then_some(threshold), pass })
}

/// Labels of every scripted event, keyed the way threat reports are.
pub fn label_index(config: &TrialConfig) -> HashMap<(String, u64), Label> {
    let mut labels = HashMap::new();
    for (u, script) in config.scripts.iter().enumerate() {
        let device = config.device_id(u);
        for (i, ev) in script.events.iter().enumerate() {
            labels.insert((device.clone(), i as u64 + 1), ev.label);
        }
    }
    labels
}

pub fn run_trial(config: &TrialConfig) -> Result<TrialReport, TrialError> {
    for script in &config.scripts {
        script.validate().map_err(|e| TrialError::Invalid(e.to_string()))?;
    }
    let policy = Arc::new(config.policy.clone());

    let (threats, offloaded_work) = match &config.target {
        Target::Embedded => {
            let service = Service::in_memory(config.policy.clone(), ServiceConfig::default(), Arc::new(ManualClock::new(0)));
            let work = run_offloaded(config, &policy, |_| Box::new(LoopbackConnector::new(Arc::clone(&service))))?;
            (service.threats(), work)
        }
        Target::Remote { protocol, admin } => {
            let admin = remote::Admin::new(*admin)?;
            admin.ensure_policy(&config.policy)?;
            let proto = *protocol;
            std::net::TcpStream::connect_timeout(&proto, Duration::from_secs(2))
                .map_err(|e| TrialError::Aborted(format!("protocol endpoint {proto}: {e}")))?;
            let work = run_offloaded(config, &policy, |_| Box::new(TcpConnector::new(proto)))?;
            (admin.threats()?, work)
        }
    };

    let mut local_work = 0;
    for (u, script) in config.scripts.iter().enumerate() {
        let agent = Agent::new(AgentConfig::new(config.device_id(u)), Mode::Local, script.clone(), Arc::clone(&policy));
        local_work += agent.run()?.work.total;
    }

    let report = score(config, &threats, local_work, offloaded_work)?;
    if let Target::Remote { admin, .. } = &config.target {
        remote::Admin::new(*admin)?.record_trial(&report)?;
    }
    Ok(report)
}

/// Offloaded pass; agents take turns one batch at a time in a seeded order.
fn run_offloaded(
    config: &TrialConfig,
    policy: &Arc<PolicySet>,
    connector: impl Fn(usize) -> Box<dyn Connector>,
) -> Result<u64, TrialError> {
    let mut agents: Vec<Agent> = config
        .scripts
        .iter()
        .enumerate()
        .map(|(u, script)| {
            Agent::new(AgentConfig::new(config.device_id(u)), Mode::Offloaded, script.clone(), Arc::clone(policy))
                .with_connector(connector(u))
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::from(config.trial_id));
    let mut active: Vec<usize> = (0..agents.len()).collect();
    while !active.is_empty() {
        let pick = rng.random_range(0..active.len());
        let agent = &mut agents[active[pick]];
        if !agent.step()? {
            active.swap_remove(pick);
        }
    }

    let mut work = 0;
    for agent in agents {
        let report = agent.finish();
        let offline = report.fallback.stale + report.fallback.fail_closed;
        if offline > 0 {
            return Err(TrialError::Aborted(format!(
                "{} decided {offline} events without the server",
                report.device_id
            )));
        }
        work += report.work.total;
    }
    Ok(work)
}

fn score(config: &TrialConfig, threats: &[ThreatReport], local: u64, offloaded: u64) -> Result<TrialReport, TrialError> {
    let labels = label_index(config);
    let devices: HashSet<String> = (0..config.scripts.len()).map(|u| config.device_id(u)).collect();

    let mut flagged = HashSet::new();
    let mut false_positives = 0;
    for threat in threats.iter().filter(|t| devices.contains(&t.device_id)) {
        for &seq in &threat.event_seqs {
            let key = (threat.device_id.clone(), seq);
            match labels.get(&key) {
                None => {
                    return Err(TrialError::Invalid(format!(
                        "threat {} refers to {}:{seq}, which no script produced",
                        threat.threat_id, threat.device_id
                    )))
                }
                Some(Label::Benign) => false_positives += 1,
                Some(Label::Threat(_)) => {
                    flagged.insert(key);
                }
            }
        }
    }

    let injected = labels.values().filter(|l| l.is_threat()).count() as u64;
    let detected = flagged.len() as u64;
    let undetected = injected - detected;
    if detected + undetected != injected {
        return Err(TrialError::Invalid("detected + undetected != threats_injected".into()));
    }
    let metrics = compute_detection_metrics(detected as i64, undetected as i64).expect("counts are non-negative");

    Ok(TrialReport {
        trial_id: config.trial_id,
        users: config.scripts.len() as u32,
        policy_rules: config.policy.rules().len() as u32,
        events_total: labels.len() as u64,
        threats_injected: injected,
        detected,
        undetected,
        false_positives,
        detection_ratio: metrics.ratio,
        detection_rate: metrics.rate,
        work_units_local: local,
        work_units_offloaded: offloaded,
        work_ratio: (local > 0).then(|| offloaded as f64 / local as f64),
    })
}

/// Run `trials` trials of `suite` in order. Trial ids are 1-based.
pub fn run_suite(
    suite: &Suite,
    policy: &PolicySet,
    trials: usize,
    seed: u64,
    target: &Target,
) -> Result<Vec<TrialReport>, TrialError> {
    if trials > suite.trials.len() {
        return Err(TrialError::Invalid(format!(
            "{trials} trials requested but the suite has {}",
            suite.trials.len()
        )));
    }
    suite.trials[..trials]
        .iter()
        .enumerate()
        .map(|(t, scripts)| {
            let mut config = TrialConfig::new(t as u32 + 1, scripts.clone(), policy.clone(), seed);
            config.target = target.clone();
            run_trial(&config)
        })
        .collect()
}

mod remote {
    use std::net::SocketAddr;
    use std::time::Duration;

    use reqwest::blocking::Client;
    use serde::Deserialize;

    use super::{serialize_policy_document, PolicySet, ThreatReport, TrialError, TrialReport};
    use crate::policy::parse_policy_document;

    #[derive(Deserialize)]
    struct ThreatPage {
        threats: Vec<ThreatReport>,
        cursor: u64,
    }

    #[derive(Deserialize)]
    struct PolicyView {
        document: String,
    }

    pub(super) struct Admin {
        client: Client,
        base: String,
    }

    fn aborted(e: reqwest::Error) -> TrialError {
        TrialError::Aborted(format!("admin API: {e}"))
    }

    impl Admin {
        pub(super) fn new(addr: SocketAddr) -> Result<Self, TrialError> {
            let client = Client::builder().timeout(Duration::from_secs(10)).build().map_err(aborted)?;
            Ok(Admin { client, base: format!("http://{addr}") })
        }

        /// Upload `policy` unless the server already runs the same rules.
        pub(super) fn ensure_policy(&self, policy: &PolicySet) -> Result<(), TrialError> {
            let view: PolicyView = self
                .client
                .get(format!("{}/policies", self.base))
                .send()
                .and_then(|r| r.error_for_status())
                .and_then(|r| r.json())
                .map_err(aborted)?;
            let active = parse_policy_document(&view.document)
                .map_err(|e| TrialError::Aborted(format!("server policy does not parse: {e}")))?;
            if active.rules() == policy.rules() && active.defaults() == policy.defaults() {
                return Ok(());
            }
            self.client
                .put(format!("{}/policies", self.base))
                .body(serialize_policy_document(policy))
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(aborted)?;
            Ok(())
        }

        pub(super) fn threats(&self) -> Result<Vec<ThreatReport>, TrialError> {
            let mut all = Vec::new();
            let mut since = 0;
            loop {
                let page: ThreatPage = self
                    .client
                    .get(format!("{}/threats?since={since}", self.base))
                    .send()
                    .and_then(|r| r.error_for_status())
                    .and_then(|r| r.json())
                    .map_err(aborted)?;
                if page.threats.is_empty() {
                    return Ok(all);
                }
                since = page.cursor;
                all.extend(page.threats);
            }
        }

        pub(super) fn record_trial(&self, report: &TrialReport) -> Result<(), TrialError> {
            self.client
                .post(format!("{}/metrics/trials", self.base))
                .json(report)
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(aborted)?;
            Ok(())
        }
    }
}
