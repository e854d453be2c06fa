//! Run labeled trial suites and export the results table.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context as _};
use clap::{Parser, Subcommand};
use seaas::harness::{
    compare_cpu_modes, default_pack, export_results, generate_suite, run_suite, Suite, Target, DEFAULT_SUITE_SEED,
    DEFAULT_TRIALS,
};
use seaas::policy::{parse_policy_document, serialize_policy_document};

#[derive(Parser)]
#[command(version, about)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run trials and write a CSV.
    Run {
        /// Directory of trial_<n>/user_<m>.jsonl scripts.
        #[arg(long)]
        suite: PathBuf,
        /// Policy pack (defaults to the built-in one).
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        /// Drives agent interleaving.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "results.csv")]
        out: PathBuf,
        /// Device protocol address of a running server; omit to use an
        /// embedded one.
        #[arg(long, requires = "admin")]
        server: Option<SocketAddr>,
        /// Admin address of that server.
        #[arg(long, requires = "server")]
        admin: Option<SocketAddr>,
    },
    /// Write a freshly generated suite.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SUITE_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
    },
    /// Print the built-in policy pack.
    Pack,
}

fn main() -> anyhow::Result<()> {
    match Args::parse().command {
        Command::Run { suite, policy, trials, seed, out, server, admin } => {
            let suite = Suite::load(&suite)?;
            let policy = match policy {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    parse_policy_document(&text).with_context(|| format!("in {}", path.display()))?
                }
                None => default_pack(),
            };
            let target = match (server, admin) {
                (Some(protocol), Some(admin)) => Target::Remote { protocol, admin },
                _ => Target::Embedded,
            };

            let started = Instant::now();
            let reports = run_suite(&suite, &policy, trials, seed, &target)?;
            let elapsed = started.elapsed();

            println!("trial  events  threats  detected  undetected  fp  ratio   rate    work(off/local)");
            let mut failed = false;
            for r in &reports {
                let efficiency = compare_cpu_modes(r)?;
                failed |= !efficiency.pass;
                println!(
                    "{:>5}  {:>6}  {:>7}  {:>8}  {:>10}  {:>2}  {:>6}  {:>6}  {}/{} = {:.3}{}",
                    r.trial_id,
                    r.events_total,
                    r.threats_injected,
                    r.detected,
                    r.undetected,
                    r.false_positives,
                    r.detection_ratio.map_or("N/A".into(), |x| format!("{x:.2}")),
                    r.detection_rate.map_or("N/A".into(), |x| format!("{x:.3}")),
                    r.work_units_offloaded,
                    r.work_units_local,
                    efficiency.work_ratio,
                    if efficiency.pass { "" } else { "  (over budget)" },
                );
            }
            export_results(&reports, &out)?;
            println!("{} trials in {:.2?}; wrote {}", reports.len(), elapsed, out.display());
            if failed {
                bail!("offloading did not meet the efficiency budget");
            }
        }
        Command::Generate { out, seed, trials } => {
            let suite = generate_suite(seed, trials);
            suite.write(&out)?;
            println!("wrote {} trials, {} events to {}", suite.trials.len(), suite.events(), out.display());
        }
        Command::Pack => print!("{}", serialize_policy_document(&default_pack())),
    }
    Ok(())
}
