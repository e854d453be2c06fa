//! Drive the detection pipeline directly: background exfiltration escalates
//! to quarantine, and a burst trips the frequency detector.

use seaas::detection::{DetectionConfig, Pipeline};
use seaas::harness::default_pack;
use seaas::resource::{AccessEvent, Action, AppId, AppState, Resource};

fn main() {
    let policy = default_pack();
    let mut pipeline = Pipeline::new(DetectionConfig::default());
    let mut seq = 0;
    let mut next = |app: &str, resource, at_ms| {
        seq += 1;
        AccessEvent {
            event_seq: seq,
            device_id: "pixel-7".into(),
            app_id: AppId::new(app).unwrap(),
            resource,
            action: Action::Read,
            app_state: AppState::Background,
            at_ms,
            payload_bytes: 2048,
            pre_blocked: false,
        }
    };

    println!("-- a flashlight app reading private data in the background");
    for (i, r) in [Resource::Sms, Resource::Contacts, Resource::CallLog, Resource::Photos].into_iter().enumerate() {
        let e = next("com.flash.light", r, 1_000 * i as u64);
        let out = pipeline.process(&e, &policy, e.at_ms);
        let threat = out.threat.map(|t| format!("{:?} -> {:?}", t.threat_type, t.mitigation.kind));
        println!("#{} {:<9} {:?} ({}) {}", e.event_seq, r, out.decision.verdict, out.decision.matched_rule_id, threat.unwrap_or_default());
    }

    println!("-- a weather widget polling GPS 35 times in half a minute");
    let mut flagged = 0;
    for i in 0..35 {
        let e = next("com.weather.live", Resource::Gps, 60_000 + 800 * i);
        if pipeline.process(&e, &policy, e.at_ms).threat.is_some() {
            flagged += 1;
        }
    }
    println!("{flagged} accesses flagged as anomalous (those beyond 30 per minute)");
}
