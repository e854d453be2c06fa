//! Parse a policy document and evaluate a few accesses against it.

use seaas::policy::{evaluate, parse_policy_document, WindowCounts};
use seaas::resource::{AccessEvent, Action, AppId, AppState, Resource};

const DOC: &str = r#"{
  "version": 1,
  "defaults": { "CRITICAL": "DENY", "NORMAL": "GRANT" },
  "rules": [
    { "id": "deny-game-mic", "priority": 900, "app": "com.game.*", "resource": "MICROPHONE",
      "action": "*", "decision": "DENY" },
    { "id": "grant-maps-gps", "priority": 300, "app": "com.maps.nav", "resource": "GPS",
      "action": "*", "decision": "GRANT" },
    { "id": "sel-social-photos", "priority": 300, "app": "com.social.feed", "resource": "PHOTOS",
      "action": "*", "when": { "app_state": "FOREGROUND" }, "decision": "SELECTIVE",
      "constraints": { "max_per_window": { "count": 20, "window_s": 60 }, "redact": true } }
  ]
}"#;

fn access(seq: u64, app: &str, resource: Resource, state: AppState) -> AccessEvent {
    AccessEvent {
        event_seq: seq,
        device_id: "pixel-7".into(),
        app_id: AppId::new(app).unwrap(),
        resource,
        action: Action::Read,
        app_state: state,
        at_ms: 9 * 3_600_000,
        payload_bytes: 0,
        pre_blocked: false,
    }
}

fn main() {
    let policy = parse_policy_document(DOC).expect("valid document");
    let accesses = [
        access(1, "com.game.puzzle", Resource::Microphone, AppState::Background),
        access(2, "com.maps.nav", Resource::Gps, AppState::Foreground),
        access(3, "com.social.feed", Resource::Photos, AppState::Foreground),
        access(4, "com.social.feed", Resource::Photos, AppState::Background),
        access(5, "com.unknown.app", Resource::Accelerometer, AppState::Background),
    ];
    for e in &accesses {
        let d = evaluate(&policy, e, &WindowCounts::new());
        println!("{:<16} {:<13} {:<10} -> {:?} via {}", e.app_id, e.resource, e.app_state, d.verdict, d.matched_rule_id);
    }
}
