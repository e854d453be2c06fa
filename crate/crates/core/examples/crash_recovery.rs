//! Persist to a data directory, tear the tail off the log as a crash would,
//! and reopen: committed decisions survive, the torn batch is dropped.

use std::fs::OpenOptions;
use std::sync::Arc;

use seaas::clock::ManualClock;
use seaas::protocol::Message;
use seaas::resource::{AccessEvent, Action, AppId, AppState, DeviceDescriptor, Resource};
use seaas::service::{Service, ServiceConfig};

fn batch(from: u64, n: u64) -> Vec<AccessEvent> {
    (from..from + n)
        .map(|seq| AccessEvent {
            event_seq: seq,
            device_id: "pixel-7".into(),
            app_id: AppId::new("com.util.cleaner").unwrap(),
            resource: Resource::Contacts,
            action: Action::Read,
            app_state: AppState::Background,
            at_ms: seq * 10_000,
            payload_bytes: 512,
            pre_blocked: false,
        })
        .collect()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let clock = Arc::new(ManualClock::new(0));
    let hello = Message::Hello { device: DeviceDescriptor::full("pixel-7") };

    let (service, _) = Service::open(dir.path(), None, ServiceConfig::default(), clock.clone())?;
    let (session, _) = service.handshake(&hello).map_err(|e| format!("{e:?}"))?;
    service.process_event_batch(&session.sid, &batch(1, 4));
    let committed = std::fs::metadata(dir.path().join("events.log"))?.len();
    service.process_event_batch(&session.sid, &batch(5, 4));
    println!("before crash: {} decisions, {} threats", service.decisions().len(), service.threats().len());
    drop(service);

    // Crash partway through writing the second batch.
    let log = OpenOptions::new().write(true).open(dir.path().join("events.log"))?;
    log.set_len(committed + 40)?;

    let (service, recovery) = Service::open(dir.path(), None, ServiceConfig::default(), clock)?;
    println!("replayed {} records; warnings: {:?}", recovery.replayed_records, recovery.warnings);
    println!("after recovery: {} decisions, quarantined: {:?}", service.decisions().len(), service.quarantined());
    Ok(())
}
