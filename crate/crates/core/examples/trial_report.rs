//! Run the first shipped trial on an embedded service and print its CSV row.

use std::path::Path;

use seaas::harness::{compare_cpu_modes, default_pack, render_csv, run_trial, Suite, TrialConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let suite = Suite::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("data/suite"))?;
    let config = TrialConfig::new(1, suite.trials[0].clone(), default_pack(), 42);
    let report = run_trial(&config)?;
    print!("{}", render_csv(std::slice::from_ref(&report)));
    let verdict = compare_cpu_modes(&report)?;
    println!("offloaded/local work {:.3}, within budget: {}", verdict.work_ratio, verdict.pass);
    Ok(())
}
