//! Change a permission while a device is connected: the next matching event
//! is decided under the new version, and the device is pushed the update.

use std::sync::Arc;

use seaas::agent::{Loopback, Transport};
use seaas::protocol::Message;
use seaas::resource::{AccessEvent, Action, AppId, AppState, DeviceDescriptor, Resource};
use seaas::service::{PermissionRequest, Service};

fn mic(seq: u64) -> AccessEvent {
    AccessEvent {
        event_seq: seq,
        device_id: "pixel-7".into(),
        app_id: AppId::new("com.chat.messenger").unwrap(),
        resource: Resource::Microphone,
        action: Action::Record,
        app_state: AppState::Foreground,
        at_ms: seq * 1_000,
        payload_bytes: 16_384,
        pre_blocked: false,
    }
}

fn exchange(link: &mut Loopback, msg: Message) -> Vec<Message> {
    link.send(&msg).unwrap();
    std::iter::from_fn(|| link.recv(std::time::Duration::ZERO).ok()).collect()
}

fn main() {
    let service = Service::with_defaults();
    let mut link = Loopback::new(Arc::clone(&service));
    let replies = exchange(&mut link, Message::Hello { device: DeviceDescriptor::full("pixel-7") });
    let Message::HelloAck { sid, version, .. } = &replies[0] else { panic!("no hello_ack") };
    println!("connected as {sid} on policy v{version}");

    for reply in exchange(&mut link, Message::Events { sid: sid.clone(), events: vec![mic(1)] }) {
        if let Message::Decisions { decisions, .. } = reply {
            println!("before: {:?} via {} (v{})", decisions[0].verdict, decisions[0].matched_rule_id, decisions[0].policy_version);
        }
    }

    service
        .set_permission(&PermissionRequest {
            device_id: "pixel-7".into(),
            app_id: "com.chat.messenger".into(),
            resource: "MICROPHONE".into(),
            verdict: "DENY".into(),
            constraints: None,
        })
        .unwrap();

    for reply in exchange(&mut link, Message::Events { sid: sid.clone(), events: vec![mic(2)] }) {
        match reply {
            Message::Decisions { decisions, .. } => {
                println!("after:  {:?} via {} (v{})", decisions[0].verdict, decisions[0].matched_rule_id, decisions[0].policy_version)
            }
            Message::PolicyUpdate { version, .. } => println!("pushed policy v{version}"),
            other => println!("{}", other.kind()),
        }
    }
}
