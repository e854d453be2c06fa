//! Lose the link halfway through a run: the agent keeps enforcing from its
//! decision cache and fails closed on anything it has not seen.

use std::sync::Arc;

use seaas::agent::{Agent, AgentConfig, Faults, LoopbackConnector, Mode, ScenarioScript};
use seaas::harness::default_pack;
use seaas::service::Service;

const SCRIPT: &str = include_str!("../data/suite/trial_1/user_2.jsonl");

fn main() {
    let script = ScenarioScript::parse_jsonl(SCRIPT).unwrap();
    let service = Service::with_defaults();
    // Four sends get through (hello, its policy ack, two batches), then the
    // link drops for good.
    let connector = LoopbackConnector::new(Arc::clone(&service))
        .with_faults([Faults { sever_after_sends: Some(4), ..Faults::default() }])
        .max_connections(1);
    let agent = Agent::new(AgentConfig::new("pixel-7"), Mode::Offloaded, script, Arc::new(default_pack()))
        .with_connector(Box::new(connector));
    let report = agent.run().unwrap();
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
}
