//! Deterministic device work accounting.
//!
//! Costs per step: generate 1, evaluate 4 + ⌈rules/4⌉, window 2, encode 2,
//! apply 1. Local evaluation grows with the policy; offloading does not.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown work category `{0}`")]
pub struct LedgerError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Local,
    Offloaded,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "local" => Ok(Mode::Local),
            "offloaded" => Ok(Mode::Offloaded),
            other => Err(format!("unknown mode `{other}` (expected local or offloaded)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkStep {
    Generate,
    Evaluate,
    Window,
    Encode,
    Apply,
}

impl WorkStep {
    pub fn cost(self, rules_count: usize) -> u64 {
        match self {
            WorkStep::Generate | WorkStep::Apply => 1,
            WorkStep::Evaluate => 4 + rules_count.div_ceil(4) as u64,
            WorkStep::Window | WorkStep::Encode => 2,
        }
    }
}

impl FromStr for WorkStep {
    type Err = LedgerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generate" => Ok(WorkStep::Generate),
            "evaluate" => Ok(WorkStep::Evaluate),
            "window" => Ok(WorkStep::Window),
            "encode" => Ok(WorkStep::Encode),
            "apply" => Ok(WorkStep::Apply),
            other => Err(LedgerError(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkBreakdown {
    pub generate: u64,
    pub evaluate: u64,
    pub window: u64,
    pub encode: u64,
    pub apply: u64,
}

impl WorkBreakdown {
    pub fn sum(&self) -> u64 {
        self.generate + self.evaluate + self.window + self.encode + self.apply
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkLedger {
    pub mode: Mode,
    pub total: u64,
    pub breakdown: WorkBreakdown,
}

impl WorkLedger {
    pub fn new(mode: Mode) -> Self {
        WorkLedger { mode, total: 0, breakdown: WorkBreakdown::default() }
    }

    pub fn charge(&mut self, step: WorkStep, rules_count: usize) {
        let cost = step.cost(rules_count);
        let slot = match step {
            WorkStep::Generate => &mut self.breakdown.generate,
            WorkStep::Evaluate => &mut self.breakdown.evaluate,
            WorkStep::Window => &mut self.breakdown.window,
            WorkStep::Encode => &mut self.breakdown.encode,
            WorkStep::Apply => &mut self.breakdown.apply,
        };
        *slot += cost;
        self.total += cost;
    }
}

impl fmt::Display for WorkLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.breakdown;
        write!(
            f,
            "{} units (generate {}, evaluate {}, window {}, encode {}, apply {})",
            self.total, b.generate, b.evaluate, b.window, b.encode, b.apply
        )
    }
}

/// Pure form of [`WorkLedger::charge`] taking the category by name.
pub fn account_work(ledger: &WorkLedger, step: &str, rules_count: usize) -> Result<WorkLedger, LedgerError> {
    let step: WorkStep = step.parse()?;
    let mut next = ledger.clone();
    next.charge(step, rules_count);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_costs() {
        let l = WorkLedger::new(Mode::Local);
        assert_eq!(account_work(&l, "generate", 0).unwrap().total, 1);
        assert_eq!(account_work(&l, "evaluate", 64).unwrap().total, 20);
        assert_eq!(account_work(&l, "evaluate", 0).unwrap().total, 4);
        assert_eq!(account_work(&l, "evaluate", 65).unwrap().total, 21);
        assert_eq!(account_work(&l, "window", 0).unwrap().total, 2);
        assert_eq!(account_work(&l, "encode", 0).unwrap().total, 2);
        assert_eq!(account_work(&l, "apply", 0).unwrap().total, 1);
        assert_eq!(account_work(&l, "teleport", 0), Err(LedgerError("teleport".into())));
        assert_eq!(l.total, 0, "account_work is pure");
    }

    #[test]
    fn breakdown_sums_to_total() {
        let mut l = WorkLedger::new(Mode::Offloaded);
        for step in [WorkStep::Generate, WorkStep::Encode, WorkStep::Apply, WorkStep::Evaluate, WorkStep::Window] {
            l.charge(step, 16);
        }
        assert_eq!(l.total, l.breakdown.sum());
        assert_eq!(l.total, 1 + 2 + 1 + 8 + 2);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("offloaded".parse::<Mode>(), Ok(Mode::Offloaded));
        assert_eq!("LOCAL".parse::<Mode>(), Ok(Mode::Local));
        assert!("cloud".parse::<Mode>().is_err());
    }
}
