//! Shared generators and reference implementations for the integration tests.
//!
//! The oracle below deliberately re-derives rule matching from the rule
//! grammar instead of calling into `seaas::policy`: selectors are matched on
//! their printed form, specificity is recomputed from scratch, and the winner
//! is found by a plain linear scan.
#![allow(dead_code)]

pub mod scenarios;

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;

use seaas::detection::{MitigationAction, MitigationKind};
use seaas::policy::{
    ActionSelector, AppSelector, Constraints, Context, Decision, DefaultVerdict, Defaults, PolicyRule, PolicySet,
    RateLimit, ResourceSelector, RuleDecision, TimeWindow, Verdict, WindowCounts,
};
use seaas::protocol::{ErrorCode, Message};
use seaas::resource::{
    AccessEvent, Action, AppId, AppState, Category, Criticality, DeviceDescriptor, Resource,
};

pub const DAY: u64 = 86_400_000;

pub const APPS: [&str; 8] = [
    "com.game.puzzle",
    "com.game.racer",
    "com.chat.messenger",
    "com.chat.lite",
    "com.maps.nav",
    "org.fitness.run",
    "com.android.dialer",
    "net.ads.sdk",
];
const PREFIXES: [&str; 5] = ["com.", "com.game.", "com.chat.", "org.", "com.android."];
pub const DEVICES: [&str; 2] = ["dev-a", "dev-b"];
pub const WINDOWS_S: [u32; 3] = [10, 60, 300];

pub fn app(id: &str) -> AppId {
    AppId::new(id).unwrap()
}

// ---------------------------------------------------------------- oracle

fn resource_category(r: Resource) -> &'static str {
    // Independent restatement of the inventory table.
    match r.as_str() {
        "MICROPHONE" | "GPS" | "CAMERA" | "ACCELEROMETER" | "GYROSCOPE" | "WIFI_RADIO" | "DEVICE_IDENTITY" => {
            "HARDWARE"
        }
        _ => "SOFTWARE",
    }
}

fn resource_is_critical(r: Resource) -> bool {
    !matches!(r.as_str(), "ACCELEROMETER" | "GYROSCOPE" | "WIFI_RADIO" | "CALENDAR")
}

fn oracle_app_matches(sel: &str, app: &str) -> bool {
    match sel.strip_suffix('*') {
        Some(prefix) => app.starts_with(prefix),
        None => sel == app,
    }
}

fn oracle_resource_matches(sel: &str, r: Resource) -> bool {
    sel == "*" || sel == r.as_str() || sel.strip_prefix("category:") == Some(resource_category(r))
}

fn oracle_action_matches(sel: &str, a: Action) -> bool {
    sel == "*" || sel == a.as_str()
}

pub fn oracle_specificity(rule: &PolicyRule) -> u32 {
    let app = rule.app.to_string();
    let app_score = if app == "*" {
        0
    } else if app.ends_with('*') {
        2
    } else {
        4
    };
    let res = rule.resource.to_string();
    let res_score = if res == "*" {
        0
    } else if res.starts_with("category:") {
        2
    } else {
        4
    };
    let act_score = u32::from(rule.action.to_string() != "*");
    let w = &rule.when;
    let ctx = [w.app_state.is_some(), w.time_window.is_some(), w.max_per_window.is_some(), w.device.is_some()]
        .into_iter()
        .filter(|b| *b)
        .count() as u32;
    app_score + res_score + act_score + ctx
}

fn oracle_in_window(tw: &TimeWindow, at_ms: u64) -> bool {
    let t = at_ms % DAY;
    if tw.start_ms <= tw.end_ms {
        (tw.start_ms..tw.end_ms).contains(&t)
    } else {
        // wraps midnight
        !(tw.end_ms..tw.start_ms).contains(&t)
    }
}

pub fn oracle_matches(rule: &PolicyRule, e: &AccessEvent, prior_count: impl Fn(u32) -> u32) -> bool {
    if !oracle_app_matches(&rule.app.to_string(), e.app_id.as_str())
        || !oracle_resource_matches(&rule.resource.to_string(), e.resource)
        || !oracle_action_matches(&rule.action.to_string(), e.action)
    {
        return false;
    }
    let w = &rule.when;
    if let Some(s) = w.app_state {
        if s != e.app_state {
            return false;
        }
    }
    if let Some(tw) = &w.time_window {
        if !oracle_in_window(tw, e.at_ms) {
            return false;
        }
    }
    if let Some(rl) = &w.max_per_window {
        if prior_count(rl.window_s) >= rl.count {
            return false;
        }
    }
    if let Some(d) = &w.device {
        if *d != e.device_id {
            return false;
        }
    }
    true
}

/// (verdict, matched rule id) by linear scan over every rule.
pub fn oracle_evaluate(
    rules: &[PolicyRule],
    defaults: Defaults,
    e: &AccessEvent,
    prior_count: impl Fn(u32) -> u32,
) -> (Verdict, String) {
    let mut best: Option<&PolicyRule> = None;
    for r in rules {
        if !oracle_matches(r, e, &prior_count) {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let key = |x: &PolicyRule| (std::cmp::Reverse(x.priority), std::cmp::Reverse(oracle_specificity(x)));
                (key(r), r.id.as_str()) < (key(b), b.id.as_str())
            }
        };
        if better {
            best = Some(r);
        }
    }
    match best {
        Some(r) => {
            let v = match r.decision {
                RuleDecision::Grant => Verdict::Allow,
                RuleDecision::Deny => Verdict::Deny,
                RuleDecision::Selective => Verdict::AllowConstrained,
            };
            (v, r.id.clone())
        }
        None => {
            let d = if resource_is_critical(e.resource) { defaults.critical } else { defaults.normal };
            let v = match d {
                DefaultVerdict::Grant => Verdict::Allow,
                DefaultVerdict::Deny => Verdict::Deny,
            };
            (v, "DEFAULT".to_string())
        }
    }
}

/// Accesses by the same (device, app, resource) with `at - window < t <= at`,
/// counted over the whole history.
pub fn brute_force_count(history: &[AccessEvent], e: &AccessEvent, window_ms: u64) -> u32 {
    history
        .iter()
        .filter(|h| h.device_id == e.device_id && h.app_id == e.app_id && h.resource == e.resource)
        .filter(|h| h.at_ms <= e.at_ms && e.at_ms - h.at_ms < window_ms)
        .count() as u32
}

// ---------------------------------------------------------------- generators

fn pick<T: Copy>(rng: &mut impl Rng, xs: &[T]) -> T {
    *xs.choose(rng).unwrap()
}

pub fn random_app_selector(rng: &mut impl Rng) -> AppSelector {
    match rng.random_range(0..10) {
        0..=1 => AppSelector::Any,
        2..=4 => AppSelector::parse(&format!("{}*", pick(rng, &PREFIXES))).unwrap(),
        _ => AppSelector::Exact(app(pick(rng, &APPS))),
    }
}

pub fn random_resource_selector(rng: &mut impl Rng) -> ResourceSelector {
    match rng.random_range(0..10) {
        0..=1 => ResourceSelector::Any,
        2..=3 => ResourceSelector::Category(pick(rng, &[Category::Hardware, Category::Software])),
        _ => ResourceSelector::Exact(pick(rng, &Resource::ALL)),
    }
}

pub fn random_time_window(rng: &mut impl Rng) -> TimeWindow {
    loop {
        let start = rng.random_range(0..DAY);
        let end = rng.random_range(1..=DAY);
        if start != end {
            return TimeWindow { start_ms: start, end_ms: end };
        }
    }
}

pub fn random_rate(rng: &mut impl Rng) -> RateLimit {
    RateLimit { count: rng.random_range(1..8), window_s: pick(rng, &WINDOWS_S) }
}

pub fn random_rule(rng: &mut impl Rng, id: String) -> PolicyRule {
    let when = Context {
        app_state: rng.random_bool(0.25).then(|| pick(rng, &[AppState::Foreground, AppState::Background])),
        time_window: rng.random_bool(0.2).then(|| random_time_window(rng)),
        max_per_window: rng.random_bool(0.2).then(|| random_rate(rng)),
        device: rng.random_bool(0.1).then(|| pick(rng, &DEVICES).to_string()),
    };
    let decision = pick(rng, &[RuleDecision::Grant, RuleDecision::Deny, RuleDecision::Selective]);
    let constraints = if decision == RuleDecision::Selective {
        Constraints {
            max_per_window: Some(random_rate(rng)),
            foreground_only: rng.random_bool(0.5).then_some(true),
            redact: rng.random_bool(0.5).then_some(rng.random_bool(0.5)),
        }
    } else {
        Constraints::default()
    };
    PolicyRule {
        id,
        // A narrow priority range forces plenty of ties.
        priority: rng.random_range(0..6) * 100,
        app: random_app_selector(rng),
        resource: random_resource_selector(rng),
        action: if rng.random_bool(0.4) { ActionSelector::Exact(pick(rng, &Action::ALL)) } else { ActionSelector::Any },
        when,
        decision,
        constraints,
    }
}

pub fn random_defaults(rng: &mut impl Rng) -> Defaults {
    let v = |rng: &mut dyn rand::RngCore| if rng.random_bool(0.5) { DefaultVerdict::Grant } else { DefaultVerdict::Deny };
    Defaults { critical: v(rng), normal: v(rng) }
}

pub fn random_policy(rng: &mut impl Rng, max_rules: usize) -> PolicySet {
    let n = rng.random_range(0..=max_rules);
    policy_with_rules(rng, n)
}

pub fn policy_with_rules(rng: &mut impl Rng, n: usize) -> PolicySet {
    let rules = (0..n)
        .map(|i| {
            let id = format!("r{:03}-{}", i, rng.random_range(0..1000));
            random_rule(rng, id)
        })
        .collect();
    PolicySet::new(rng.random_range(1..50), rules, random_defaults(rng)).unwrap()
}

pub fn random_event(rng: &mut impl Rng, seq: u64) -> AccessEvent {
    AccessEvent {
        event_seq: seq,
        device_id: pick(rng, &DEVICES).to_string(),
        app_id: app(pick(rng, &APPS)),
        resource: pick(rng, &Resource::ALL),
        action: pick(rng, &Action::ALL),
        app_state: pick(rng, &[AppState::Foreground, AppState::Background]),
        at_ms: rng.random_range(0..7 * DAY),
        payload_bytes: rng.random_range(0..1 << 20),
        pre_blocked: rng.random_bool(0.05),
    }
}

pub fn random_counts(rng: &mut impl Rng) -> WindowCounts {
    WINDOWS_S.iter().map(|&w| (w, rng.random_range(0..10))).collect()
}

fn random_text(rng: &mut impl Rng) -> String {
    const ALPHABET: [char; 12] = ['a', 'Z', '0', '-', '.', '"', '\\', '\n', 'é', '漢', '🙂', ' '];
    let n = rng.random_range(1..16);
    (0..n).map(|_| pick(rng, &ALPHABET)).collect()
}

fn random_token(rng: &mut impl Rng) -> String {
    format!("s{:x}", rng.random::<u64>())
}

pub fn random_decision(rng: &mut impl Rng) -> Decision {
    let mitigation = rng.random_bool(0.3).then(|| MitigationAction {
        kind: pick(
            rng,
            &[
                MitigationKind::None,
                MitigationKind::Block,
                MitigationKind::RateLimit,
                MitigationKind::RevokePermission,
                MitigationKind::QuarantineApp,
            ],
        ),
        params: rng.random_bool(0.3).then(|| random_rate(rng)),
    });
    Decision {
        device_id: pick(rng, &DEVICES).to_string(),
        event_seq: rng.random(),
        verdict: pick(rng, &[Verdict::Allow, Verdict::Deny, Verdict::AllowConstrained]),
        matched_rule_id: random_text(rng),
        policy_version: rng.random(),
        constraints_applied: rng.random_bool(0.3).then(|| Constraints {
            max_per_window: rng.random_bool(0.5).then(|| random_rate(rng)),
            foreground_only: rng.random_bool(0.5).then(|| rng.random_bool(0.5)),
            redact: rng.random_bool(0.5).then(|| rng.random_bool(0.5)),
        }),
        threat_id: rng.random_bool(0.3).then(|| random_text(rng)),
        mitigation,
        stale: rng.random_bool(0.1),
    }
}

pub fn random_message(rng: &mut impl Rng) -> Message {
    let sid = random_token(rng);
    match rng.random_range(0..10) {
        0 => {
            let inventory: BTreeSet<Resource> = Resource::ALL.into_iter().filter(|_| rng.random_bool(0.7)).collect();
            Message::Hello {
                device: DeviceDescriptor {
                    device_id: random_text(rng),
                    resource_inventory: inventory,
                    agent_version: random_text(rng),
                },
            }
        }
        1 => Message::HelloAck { sid, version: rng.random(), policy: random_text(rng) },
        2 => {
            let n = rng.random_range(0..=100);
            Message::Events { sid, events: (0..n).map(|i| random_event(rng, i + 1)).collect() }
        }
        3 => {
            let n = rng.random_range(0..=40);
            Message::Decisions { sid, decisions: (0..n).map(|_| random_decision(rng)).collect() }
        }
        4 => Message::PolicyUpdate { sid, version: rng.random(), policy: random_text(rng) },
        5 => Message::PolicyAck { sid, version: rng.random() },
        6 => Message::Hb { sid },
        7 => Message::HbAck { sid },
        8 => Message::Bye { sid },
        _ => Message::Err {
            sid: rng.random_bool(0.5).then_some(sid),
            code: pick(
                rng,
                &[
                    ErrorCode::BadHello,
                    ErrorCode::NoSession,
                    ErrorCode::BadBatch,
                    ErrorCode::BadEvent,
                    ErrorCode::Malformed,
                    ErrorCode::Unexpected,
                ],
            ),
            detail: random_text(rng),
        },
    }
}

/// A well-formed event for `device` with a strictly increasing timeline.
pub fn timeline_event(rng: &mut impl Rng, device: &str, seq: u64, at_ms: u64) -> AccessEvent {
    AccessEvent {
        event_seq: seq,
        device_id: device.to_string(),
        app_id: app(pick(rng, &APPS)),
        resource: pick(rng, &[Resource::Microphone, Resource::Contacts, Resource::Gps, Resource::Accelerometer]),
        action: pick(rng, &Action::ALL),
        app_state: pick(rng, &[AppState::Foreground, AppState::Background]),
        at_ms,
        payload_bytes: 128,
        pre_blocked: false,
    }
}

/// A labelled script of `n` events over the shared app pool.
pub fn random_script(rng: &mut impl Rng, n: usize) -> seaas::agent::ScenarioScript {
    use seaas::agent::{Label, ScenarioScript, ScriptedEvent};
    let mut at = rng.random_range(0..DAY);
    let events = (0..n)
        .map(|_| {
            at += rng.random_range(0..20_000);
            ScriptedEvent {
                at_ms: at,
                app: app(pick(rng, &APPS)),
                resource: pick(rng, &Resource::ALL),
                action: pick(rng, &Action::ALL),
                app_state: pick(rng, &[AppState::Foreground, AppState::Background]),
                payload_bytes: rng.random_range(0..4096),
                label: Label::Benign,
            }
        })
        .collect();
    ScenarioScript::new(events).unwrap()
}

pub fn criticality_sanity() {
    // The oracle's restated tables must agree with the inventory.
    for r in Resource::ALL {
        assert_eq!(resource_is_critical(r), r.criticality() == Criticality::Critical, "{r}");
        assert_eq!(resource_category(r), r.category().as_str(), "{r}");
    }
}

/// Serve `service` on loopback ports from a background runtime.
pub fn spawn_server(service: std::sync::Arc<seaas::service::Service>) -> seaas::service::net::Bound {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let any = "127.0.0.1:0".parse().unwrap();
            let (bound, handle) = seaas::service::net::start(service, any, any, None).await.unwrap();
            tx.send(bound).unwrap();
            let _ = handle.await;
        });
    });
    rx.recv().unwrap()
}
