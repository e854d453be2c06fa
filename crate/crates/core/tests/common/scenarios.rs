//! End-to-end drivers shared by the service tests and the acceptance run.

use std::fs::OpenOptions;
use std::path::Path;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{app, brute_force_count};
use seaas::clock::ManualClock;
use seaas::policy::{evaluate, Decision, RuleDecision, Verdict, WindowCounts, DEFAULT_RULE, QUARANTINE_RULE};
use seaas::protocol::Message;
use seaas::resource::{AccessEvent, Action, AppState, DeviceDescriptor, Resource};
use seaas::service::log::LOG_FILE;
use seaas::service::{default_policy_pack, Connection, PermissionRequest, Service, ServiceConfig};

fn decisions_of(msg: Message) -> Result<Vec<Decision>, String> {
    match msg {
        Message::Decisions { decisions, .. } => Ok(decisions),
        other => Err(format!("expected decisions, got {other:?}")),
    }
}

fn hello(service: &Service, device: &str) -> Result<String, String> {
    let (session, _) = service
        .handshake(&Message::Hello { device: DeviceDescriptor::full(device) })
        .map_err(|e| format!("{e:?}"))?;
    Ok(session.sid)
}

// ---------------------------------------------------------------- crash recovery

#[derive(Debug, Clone)]
enum Op {
    Batch(usize, Vec<AccessEvent>),
    Permission(PermissionRequest),
}

const CRASH_DEVICES: [&str; 3] = ["pixel-7", "galaxy-s9", "moto-g"];
const CRASH_APPS: [&str; 5] = ["com.util.cleaner", "com.chat.messenger", "com.game.puzzle", "com.maps.nav", "org.fitness.run"];

/// Three devices, interleaved batches, and a few runtime permission changes.
fn crash_workload(seed: u64) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = [0u64; 3];
    let mut at = [8 * 3_600_000u64; 3];
    let mut ops = Vec::new();
    for i in 0..36 {
        if i % 9 == 4 {
            ops.push(Op::Permission(PermissionRequest {
                device_id: CRASH_DEVICES[rng.random_range(0..3)].into(),
                app_id: CRASH_APPS[rng.random_range(0..CRASH_APPS.len())].into(),
                resource: ["MICROPHONE", "CONTACTS", "GPS"][rng.random_range(0..3)].into(),
                verdict: ["DENY", "GRANT"][rng.random_range(0..2)].into(),
                constraints: None,
            }));
            continue;
        }
        let d = rng.random_range(0..3);
        let n = rng.random_range(1..=8);
        let events = (0..n)
            .map(|_| {
                seq[d] += 1;
                at[d] += rng.random_range(200..6_000);
                AccessEvent {
                    event_seq: seq[d],
                    device_id: CRASH_DEVICES[d].into(),
                    app_id: app(CRASH_APPS.choose(&mut rng).unwrap()),
                    resource: *[Resource::Contacts, Resource::Microphone, Resource::Gps, Resource::Sms]
                        .choose(&mut rng)
                        .unwrap(),
                    action: *Action::ALL.choose(&mut rng).unwrap(),
                    app_state: if rng.random_bool(0.4) { AppState::Background } else { AppState::Foreground },
                    at_ms: at[d],
                    payload_bytes: 256,
                    pre_blocked: false,
                }
            })
            .collect();
        ops.push(Op::Batch(d, events));
    }
    ops
}

fn config() -> ServiceConfig {
    // Frequent snapshots so a crash can land on either side of one.
    ServiceConfig { snapshot_every: 40, ..ServiceConfig::default() }
}

fn open(dir: &Path) -> Result<Arc<Service>, String> {
    let clock = Arc::new(ManualClock::new(1_000));
    Service::open(dir, None, config(), clock).map(|(s, _)| s).map_err(|e| e.to_string())
}

fn apply(service: &Service, sids: &mut [Option<String>; 3], op: &Op) -> Result<(), String> {
    match op {
        Op::Batch(d, events) => {
            if sids[*d].is_none() {
                sids[*d] = Some(hello(service, CRASH_DEVICES[*d])?);
            }
            decisions_of(service.process_event_batch(sids[*d].as_ref().unwrap(), events))?;
        }
        Op::Permission(req) => {
            service.set_permission(req).map_err(|e| e.to_string())?;
        }
    }
    Ok(())
}

fn log_len(dir: &Path) -> u64 {
    std::fs::metadata(dir.join(LOG_FILE)).map(|m| m.len()).unwrap_or(0)
}

/// Run the workload uninterrupted, then again with a crash at a random byte
/// inside a random operation's log writes; recover, reconnect, resend from
/// the interrupted operation on, and compare the decision and threat stores.
/// Returns how many decisions the crash destroyed.
pub fn crash_recovery_case(workload_seed: u64, kill_seed: u64) -> Result<usize, String> {
    let ops = crash_workload(workload_seed);

    let reference_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let reference = open(reference_dir.path())?;
    let mut sids = [None, None, None];
    let mut versions_after = Vec::new();
    for op in &ops {
        apply(&reference, &mut sids, op)?;
        versions_after.push(reference.policy_version());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(kill_seed);
    let kill_at = rng.random_range(0..ops.len());
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    {
        let service = open(dir.path())?;
        let mut sids = [None, None, None];
        for op in &ops[..kill_at] {
            apply(&service, &mut sids, op)?;
        }
        let before = log_len(dir.path());
        apply(&service, &mut sids, &ops[kill_at])?;
        let after = log_len(dir.path());
        drop(service);
        let cut = before + rng.random_range(0..=after - before);
        OpenOptions::new()
            .write(true)
            .open(dir.path().join(LOG_FILE))
            .and_then(|f| f.set_len(cut))
            .map_err(|e| e.to_string())?;
    }

    let service = open(dir.path())?;
    let lost = decided_through(&ops, kill_at) - service.decisions().len();
    let mut sids: [Option<String>; 3] = [None, None, None];
    for (i, op) in ops.iter().enumerate().skip(kill_at) {
        match op {
            Op::Batch(d, events) => {
                if sids[*d].is_none() {
                    // Whole batches are resent; whatever the server kept comes
                    // back as stored decisions.
                    sids[*d] = Some(hello(&service, CRASH_DEVICES[*d])?);
                }
                decisions_of(service.process_event_batch(sids[*d].as_ref().unwrap(), events))?;
            }
            Op::Permission(_) if service.policy_version() >= versions_after[i] => {}
            Op::Permission(req) => {
                service.set_permission(req).map_err(|e| e.to_string())?;
            }
        }
    }

    if service.decisions() != reference.decisions() {
        return Err(format!(
            "kill at op {kill_at}: decision stores differ ({} vs {})",
            service.decisions().len(),
            reference.decisions().len()
        ));
    }
    if service.threats() != reference.threats() {
        return Err(format!("kill at op {kill_at}: threat stores differ"));
    }
    if service.policy_version() != reference.policy_version() {
        return Err(format!("kill at op {kill_at}: policy versions differ"));
    }
    Ok(lost)
}

fn decided_through(ops: &[Op], k: usize) -> usize {
    ops[..=k].iter().map(|op| if let Op::Batch(_, e) = op { e.len() } else { 0 }).sum()
}

// ---------------------------------------------------------------- reconfiguration

const DEVICE: &str = "pixel-7";
const CHAT: &str = "com.chat.messenger";

#[derive(Debug, Default)]
pub struct ReconfigStats {
    pub denials_checked: usize,
    pub decisions: usize,
}

/// Random interleaving of event batches, DENY/GRANT toggles for the chat
/// app's microphone, and (possibly delayed) policy push delivery.
pub fn reconfiguration_case(seed: u64) -> Result<ReconfigStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clock = Arc::new(ManualClock::new(0));
    let service = Service::in_memory(default_policy_pack(), ServiceConfig::default(), clock.clone());
    let mut conn = Connection::new(Arc::clone(&service));
    let replies = conn.handle(Message::Hello { device: DeviceDescriptor::full(DEVICE) });
    let sid = match replies.first() {
        Some(Message::HelloAck { sid, .. }) => sid.clone(),
        other => return Err(format!("no hello_ack: {other:?}")),
    };

    let mut stats = ReconfigStats::default();
    let mut history: Vec<AccessEvent> = Vec::new();
    let mut seq = 0;
    let mut at = 9 * 3_600_000;
    let mut acked = 0;
    let mut last_version = 0;
    // Version installed by the latest DENY toggle still in force.
    let mut deny_since: Option<u64> = None;
    let mut checked_since_deny = false;

    for _ in 0..60 {
        match rng.random_range(0..10) {
            0..=1 => {
                let verdict = if rng.random_bool(0.6) { "DENY" } else { "GRANT" };
                let change = service
                    .set_permission(&PermissionRequest {
                        device_id: DEVICE.into(),
                        app_id: CHAT.into(),
                        resource: "MICROPHONE".into(),
                        verdict: verdict.into(),
                        constraints: None,
                    })
                    .map_err(|e| e.to_string())?;
                deny_since = (verdict == "DENY").then_some(change.version);
                checked_since_deny = false;
            }
            2 => {
                // Deliver the pending push and ack it.
                if let Some(Message::PolicyUpdate { version, .. }) = conn.push() {
                    conn.handle(Message::PolicyAck { sid: sid.clone(), version });
                    acked = version;
                }
            }
            _ => {
                let n = rng.random_range(1..=4);
                let batch: Vec<AccessEvent> = (0..n)
                    .map(|_| {
                        seq += 1;
                        at += rng.random_range(2_500..8_000);
                        let chat_mic = rng.random_bool(0.6);
                        AccessEvent {
                            event_seq: seq,
                            device_id: DEVICE.into(),
                            app_id: app(if chat_mic { CHAT } else { ["com.maps.nav", "com.weather.now"][rng.random_range(0..2)] }),
                            resource: if chat_mic { Resource::Microphone } else { Resource::Gps },
                            action: Action::Record,
                            app_state: AppState::Foreground,
                            at_ms: at,
                            payload_bytes: 64,
                            pre_blocked: false,
                        }
                    })
                    .collect();
                let active = service.policy_version();
                let mut replies = conn.handle(Message::Events { sid: sid.clone(), events: batch.clone() });
                replies.retain(|m| matches!(m, Message::Decisions { .. }));
                let decisions = decisions_of(replies.remove(0))?;

                for (event, d) in batch.iter().zip(&decisions) {
                    history.push(event.clone());
                    stats.decisions += 1;
                    if d.policy_version != active {
                        return Err(format!("event {} decided under v{} while v{active} was active", d.event_seq, d.policy_version));
                    }
                    if d.policy_version < last_version || d.policy_version < acked {
                        return Err(format!("event {} went back to v{}", d.event_seq, d.policy_version));
                    }
                    last_version = d.policy_version;

                    // The decision must be exactly what its version's rules say.
                    let set = service.policy_at(d.policy_version).ok_or("decision names an unknown version")?;
                    let counts: WindowCounts = set
                        .frequency_windows()
                        .into_iter()
                        .map(|w| (w, brute_force_count(&history, event, u64::from(w) * 1000) - 1))
                        .collect();
                    let expect = evaluate(&set, event, &counts);
                    if d.matched_rule_id != QUARANTINE_RULE && (d.verdict, &d.matched_rule_id) != (expect.verdict, &expect.matched_rule_id) {
                        return Err(format!("event {}: {d:?} disagrees with v{} ({expect:?})", d.event_seq, d.policy_version));
                    }
                    if d.matched_rule_id != DEFAULT_RULE && d.matched_rule_id != QUARANTINE_RULE {
                        let rule = set.rule(&d.matched_rule_id).ok_or("matched rule missing from its version")?;
                        let want = match rule.decision {
                            RuleDecision::Grant => Verdict::Allow,
                            RuleDecision::Deny => Verdict::Deny,
                            RuleDecision::Selective => Verdict::AllowConstrained,
                        };
                        if want != d.verdict {
                            return Err(format!("event {}: verdict from another version's rule", d.event_seq));
                        }
                    }

                    if let Some(v) = deny_since {
                        if !checked_since_deny && event.app_id.as_str() == CHAT && event.resource == Resource::Microphone {
                            checked_since_deny = true;
                            stats.denials_checked += 1;
                            if d.verdict != Verdict::Deny || d.policy_version < v {
                                return Err(format!("first chat mic event after DENY v{v} got {d:?}"));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(stats)
}
