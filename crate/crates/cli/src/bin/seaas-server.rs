//! Run the policy/detection service: device protocol plus admin HTTP API.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context as _;
use clap::Parser;
use seaas::clock::SystemClock;
use seaas::policy::parse_policy_document;
use seaas::service::{default_policy_pack, net, Service, ServiceConfig};

#[derive(Parser)]
#[command(version, about)]
struct Args {
    /// Device protocol address.
    #[arg(long, default_value = "0.0.0.0:7740")]
    listen: SocketAddr,
    /// Admin HTTP address.
    #[arg(long, default_value = "0.0.0.0:7741")]
    admin: SocketAddr,
    /// Event log and snapshot directory. Without it nothing is persisted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Policy document to start with (defaults to the built-in pack).
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Static console build, served under /ui.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let args = Args::parse();

    let policy = match &args.policy {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Some(parse_policy_document(&text).with_context(|| format!("in {}", path.display()))?)
        }
        None => None,
    };

    let service = match &args.data {
        Some(dir) => {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let (service, recovery) = Service::open(dir, policy, ServiceConfig::default(), Arc::new(SystemClock))?;
            eprintln!(
                "recovered {} log records{}",
                recovery.replayed_records,
                if recovery.from_snapshot { " on top of a snapshot" } else { "" }
            );
            service
        }
        None => Service::in_memory(
            policy.unwrap_or_else(default_policy_pack),
            ServiceConfig::default(),
            Arc::new(SystemClock),
        ),
    };

    let (bound, server) = net::start(Arc::clone(&service), args.listen, args.admin, args.ui_dir).await?;
    eprintln!(
        "policy v{} | devices on {} | admin on http://{}",
        service.policy_version(),
        bound.protocol,
        bound.admin
    );

    tokio::select! {
        r = server => r??,
        _ = tokio::signal::ctrl_c() => {
            eprintln!("shutting down");
            service.snapshot_now()?;
        }
    }
    Ok(())
}
