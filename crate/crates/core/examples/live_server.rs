//! Start the TCP service on loopback, connect an agent over a real socket,
//! then read the threat feed and flip a permission through the admin API.

use std::sync::Arc;

use seaas::agent::{Agent, AgentConfig, Mode, ScenarioScript, TcpConnector};
use seaas::harness::default_pack;
use seaas::service::{net, Service};
use serde_json::{json, Value};

const SCRIPT: &str = include_str!("../data/suite/trial_2/user_3.jsonl");

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let service = Service::with_defaults();
    let any = "127.0.0.1:0".parse()?;
    let (bound, _server) = net::start(Arc::clone(&service), any, any, None).await?;
    println!("protocol on {}, admin on {}", bound.protocol, bound.admin);

    let script = ScenarioScript::parse_jsonl(SCRIPT)?;
    let report = tokio::task::spawn_blocking(move || {
        Agent::new(AgentConfig::new("pixel-7"), Mode::Offloaded, script, Arc::new(default_pack()))
            .with_connector(Box::new(TcpConnector::new(bound.protocol)))
            .run()
    })
    .await??;
    println!("agent: {} events, {:?}", report.events_emitted, report.decisions);

    let http = reqwest::Client::new();
    let admin = format!("http://{}", bound.admin);
    let feed: Value = http.get(format!("{admin}/threats?since=0")).send().await?.json().await?;
    let threats = feed["threats"].as_array().map_or(0, Vec::len);
    println!("threat feed: {threats} entries, cursor {}", feed["cursor"]);

    let change: Value = http
        .post(format!("{admin}/permissions"))
        .json(&json!({"device_id": "pixel-7", "app_id": "com.maps.nav", "resource": "GPS", "verdict": "DENY"}))
        .send()
        .await?
        .json()
        .await?;
    println!("quick rule {} is live as policy v{}", change["rule_id"], change["version"]);
    Ok(())
}
