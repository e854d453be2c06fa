//! Simulated device agent: replay one scenario script.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context as _;
use clap::{Parser, Subcommand};
use seaas::agent::{Agent, AgentConfig, Mode, ScenarioScript, TcpConnector};
use seaas::harness::default_pack;
use seaas::policy::parse_policy_document;

#[derive(Parser)]
#[command(version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay a user script against the server or the cached policy
    Run {
        /// JSONL script of timed accesses
        #[arg(long)]
        script: PathBuf,
        /// local or offloaded
        #[arg(long, default_value = "offloaded")]
        mode: Mode,
        /// Server protocol address (offloaded mode).
        #[arg(long, default_value = "127.0.0.1:7740")]
        server: SocketAddr,
        #[arg(long, default_value = "device-1")]
        device_id: String,
        /// Cached policy for local mode (defaults to the built-in pack).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Where to write the JSON run report; stdout if omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let Command::Run { script, mode, server, device_id, policy, report } = Args::parse().command;

    let script = ScenarioScript::load(&script)?;
    let policy = match policy {
        Some(path) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            parse_policy_document(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => default_pack(),
    };
    let mut agent = Agent::new(AgentConfig::new(device_id), mode, script, Arc::new(policy));
    if mode == Mode::Offloaded {
        agent = agent.with_connector(Box::new(TcpConnector::new(server)));
    }
    let run = agent.run()?;
    let json = serde_json::to_string_pretty(&run)?;
    match report {
        Some(path) => std::fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}
