//! Replay a script twice, on-device and offloaded to an in-process service,
//! and compare the work each mode costs the device.

use std::sync::Arc;

use seaas::agent::{run_scenario, LoopbackConnector, Mode, ScenarioScript};
use seaas::harness::default_pack;
use seaas::service::Service;

const SCRIPT: &str = include_str!("../data/suite/trial_1/user_1.jsonl");

fn main() {
    let script = ScenarioScript::parse_jsonl(SCRIPT).unwrap();
    let policy = Arc::new(default_pack());

    let local = run_scenario(script.clone(), Mode::Local, "pixel-7", Arc::clone(&policy), None).unwrap();
    let service = Service::with_defaults();
    let connector = Box::new(LoopbackConnector::new(Arc::clone(&service)));
    let offloaded = run_scenario(script, Mode::Offloaded, "pixel-7", policy, Some(connector)).unwrap();

    for r in [&local, &offloaded] {
        println!("{:?}: {} events, {:?}", r.mode, r.events_emitted, r.decisions);
        println!("  {}", r.work);
    }
    println!(
        "offloaded/local = {:.3}; the service raised {} threats",
        offloaded.work.total as f64 / local.work.total as f64,
        service.threats().len()
    );
}
