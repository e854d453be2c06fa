//! One PASS/FAIL line per acceptance criterion. Tolerances and time budgets
//! are pinned below; the process exits non-zero if any line fails.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use common::scenarios::{crash_recovery_case, reconfiguration_case};
use common::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seaas::clock::ManualClock;
use seaas::harness::{
    compare_cpu_modes, compute_detection_metrics, default_pack, run_suite, Suite, Target, TrialReport,
    DEFAULT_TRIALS,
};
use seaas::policy::evaluate;
use seaas::protocol::{decode_frame, encode_frame, DecodeError, Message};
use seaas::resource::DeviceDescriptor;
use seaas::service::{default_policy_pack, Service, ServiceConfig};

const RATIO_TARGET: f64 = 13.17;
const RATIO_TOL: f64 = 0.01;
const RATE_TARGET: f64 = 0.929;
const RATE_TOL: f64 = 0.001;
const METRIC_BUDGET: Duration = Duration::from_millis(1);

const MIN_RATE: f64 = 0.928;
const MIN_RATIO: f64 = 13.0;
const SUITE_BUDGET: Duration = Duration::from_secs(60);
const SUITE_SEED: u64 = 42;

const ORACLE_CASES: usize = 1_000;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);

const CODEC_CASES: usize = 10_000;
const DUPLICATE_CASES: usize = 100;

const WORK_RATIO_CEILING: f64 = 0.25;
const RECONFIG_CASES: u64 = 100;
const KILL_POINTS: u64 = 20;

struct Outcome {
    failed: usize,
}

impl Outcome {
    fn line(&mut self, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn metric_arithmetic(out: &mut Outcome) {
    let start = Instant::now();
    let m = compute_detection_metrics(6850, 520);
    let took = start.elapsed();
    let (ratio, rate) = match m {
        Ok(m) => (m.ratio.unwrap_or(f64::NAN), m.rate.unwrap_or(f64::NAN)),
        Err(_) => (f64::NAN, f64::NAN),
    };
    let pass = (ratio - RATIO_TARGET).abs() <= RATIO_TOL && (rate - RATE_TARGET).abs() <= RATE_TOL && took < METRIC_BUDGET;
    out.line(
        "metric arithmetic",
        pass,
        format!(
            "(6850, 520) -> ratio {ratio:.4} (want {RATIO_TARGET}±{RATIO_TOL}), rate {rate:.4} (want {RATE_TARGET}±{RATE_TOL}), {took:?} (< {METRIC_BUDGET:?})"
        ),
    );
}

fn conserved(reports: &[TrialReport]) -> bool {
    reports.iter().all(|r| r.detected + r.undetected == r.threats_injected)
}

fn desk_scale(out: &mut Outcome) -> Vec<TrialReport> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/suite");
    let suite = match Suite::load(&dir) {
        Ok(s) => s,
        Err(e) => {
            out.line("desk-scale trials", false, format!("cannot load the shipped suite: {e}"));
            return Vec::new();
        }
    };
    let start = Instant::now();
    let first = run_suite(&suite, &default_pack(), DEFAULT_TRIALS, SUITE_SEED, &Target::Embedded);
    let took = start.elapsed();
    let second = run_suite(&suite, &default_pack(), DEFAULT_TRIALS, SUITE_SEED, &Target::Embedded);
    let (Ok(first), Ok(second)) = (first, second) else {
        out.line("desk-scale trials", false, "a trial aborted".into());
        return Vec::new();
    };

    let mut pass = first.len() == DEFAULT_TRIALS && took < SUITE_BUDGET && first == second;
    for r in &first {
        let rate = r.detection_rate.unwrap_or(0.0);
        let ratio = r.detection_ratio.unwrap_or(f64::INFINITY);
        pass &= rate >= MIN_RATE && ratio >= MIN_RATIO && r.threats_injected >= 100;
        println!(
            "     trial {}: {} threats, {} detected, {} undetected, {} false positives, ratio {}, rate {rate:.4}",
            r.trial_id,
            r.threats_injected,
            r.detected,
            r.undetected,
            r.false_positives,
            r.detection_ratio.map_or("N/A".into(), |x| format!("{x:.2}")),
        );
    }
    out.line(
        "desk-scale trials",
        pass,
        format!(
            "{} trials, every rate >= {MIN_RATE} and ratio >= {MIN_RATIO}, identical rerun: {}, {took:?} (< {SUITE_BUDGET:?})",
            first.len(),
            first == second
        ),
    );
    first
}

fn oracle_equivalence(out: &mut Outcome) {
    let start = Instant::now();
    let mut agree = 0;
    for case in 0..ORACLE_CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(case as u64);
        let set = random_policy(&mut rng, 100);
        let event = random_event(&mut rng, 1);
        let counts = random_counts(&mut rng);
        let got = evaluate(&set, &event, &counts);
        let want = oracle_evaluate(set.rules(), set.defaults(), &event, |w| counts.get(w));
        if (got.verdict, got.matched_rule_id) == want {
            agree += 1;
        }
    }
    let took = start.elapsed();
    out.line(
        "policy oracle equivalence",
        agree == ORACLE_CASES && took < ORACLE_BUDGET,
        format!("{agree}/{ORACLE_CASES} agree, {took:?} (< {ORACLE_BUDGET:?})"),
    );
}

fn codec(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(2019);
    let mut identical = 0;
    for _ in 0..CODEC_CASES {
        let msg = random_message(&mut rng);
        if let Ok(bytes) = encode_frame(&msg) {
            if decode_frame(&bytes).is_ok_and(|(m, n)| m == msg && n == bytes.len()) {
                identical += 1;
            }
        }
    }

    let mut controlled = 0;
    for i in 0..CODEC_CASES {
        let len = rng.random_range(0..512);
        let mut bytes = vec![0u8; len];
        rng.fill_bytes(&mut bytes);
        if i % 2 == 0 && len >= 4 {
            // An honest length prefix so the body parser is reached.
            bytes[..4].copy_from_slice(&((len - 4) as u32).to_be_bytes());
        }
        let result = std::panic::catch_unwind(|| decode_frame(&bytes));
        if matches!(
            result,
            Ok(Ok(_) | Err(DecodeError::NeedMoreData | DecodeError::Framing(_) | DecodeError::Malformed { .. }))
        ) {
            controlled += 1;
        }
    }

    let mut exact = 0;
    for case in 0..DUPLICATE_CASES {
        if duplicate_batches_are_identical(case as u64) {
            exact += 1;
        }
    }
    out.line(
        "protocol codec",
        identical == CODEC_CASES && controlled == CODEC_CASES && exact == DUPLICATE_CASES,
        format!(
            "round trip {identical}/{CODEC_CASES}, random bytes controlled {controlled}/{CODEC_CASES}, duplicate batches byte-identical {exact}/{DUPLICATE_CASES}"
        ),
    );
}

fn duplicate_batches_are_identical(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let svc = Service::in_memory(default_policy_pack(), ServiceConfig::default(), std::sync::Arc::new(ManualClock::new(0)));
    let Ok((session, _)) = svc.handshake(&Message::Hello { device: DeviceDescriptor::full("d1") }) else {
        return false;
    };
    let mut at = 0;
    let events: Vec<_> = (1..=40)
        .map(|s| {
            at += rng.random_range(0..3_000);
            timeline_event(&mut rng, "d1", s, at)
        })
        .collect();
    let mut first: Vec<Option<Vec<u8>>> = vec![None; events.len()];
    let mut next = 0;
    while next < events.len() {
        let start = rng.random_range(0..=next);
        let end = (next + rng.random_range(1..=6)).min(events.len());
        let Message::Decisions { decisions, .. } = svc.process_event_batch(&session.sid, &events[start..end]) else {
            return false;
        };
        if decisions.len() != end - start {
            return false;
        }
        for d in decisions {
            let i = d.event_seq as usize - 1;
            let Ok(bytes) = encode_frame(&Message::Decisions { sid: String::new(), decisions: vec![d] }) else {
                return false;
            };
            match &first[i] {
                Some(b) if *b != bytes => return false,
                Some(_) => {}
                None => first[i] = Some(bytes),
            }
        }
        next = end;
    }
    svc.decisions().len() == events.len()
}

fn efficiency(out: &mut Outcome, reports: &[TrialReport]) {
    let ratios: Vec<String> = reports.iter().map(|r| r.work_ratio.map_or("N/A".into(), |x| format!("{x:.4}"))).collect();
    let pass = !reports.is_empty()
        && reports.iter().all(|r| {
            r.policy_rules == 64
                && r.work_ratio.is_some_and(|x| x <= WORK_RATIO_CEILING)
                && compare_cpu_modes(r).is_ok_and(|v| v.pass)
        });
    out.line(
        "offloading efficiency",
        pass,
        format!("offloaded/local per trial [{}] (<= {WORK_RATIO_CEILING})", ratios.join(", ")),
    );
}

fn reconfiguration(out: &mut Outcome) {
    let mut ok = 0;
    let mut denials = 0;
    let mut first_error = None;
    for seed in 0..RECONFIG_CASES {
        match reconfiguration_case(seed) {
            Ok(stats) => {
                ok += 1;
                denials += stats.denials_checked;
            }
            Err(e) => {
                first_error.get_or_insert(format!("seed {seed}: {e}"));
            }
        }
    }
    out.line(
        "runtime reconfiguration",
        ok == RECONFIG_CASES && denials > 0,
        format!(
            "{ok}/{RECONFIG_CASES} interleavings consistent, {denials} post-DENY events checked{}",
            first_error.map_or(String::new(), |e| format!("; {e}"))
        ),
    );
}

fn crash_recovery(out: &mut Outcome) {
    let mut ok = 0;
    let mut lost = 0;
    let mut first_error = None;
    for k in 0..KILL_POINTS {
        match crash_recovery_case(k, 7_000 + k) {
            Ok(n) => {
                ok += 1;
                lost += n;
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    out.line(
        "crash recovery",
        ok == KILL_POINTS,
        format!(
            "{ok}/{KILL_POINTS} kill points recover to the uninterrupted decision store ({lost} torn decisions redone){}",
            first_error.map_or(String::new(), |e| format!("; {e}"))
        ),
    );
}

fn main() {
    let mut out = Outcome { failed: 0 };
    metric_arithmetic(&mut out);
    let reports = desk_scale(&mut out);
    oracle_equivalence(&mut out);
    codec(&mut out);
    efficiency(&mut out, &reports);
    reconfiguration(&mut out);
    crash_recovery(&mut out);
    out.line(
        "conservation",
        !reports.is_empty() && conserved(&reports),
        format!("detected + undetected = threats_injected in {}/{} reports", reports.iter().filter(|r| r.detected + r.undetected == r.threats_injected).count(), reports.len()),
    );

    if out.failed > 0 {
        println!("{} criteria failed", out.failed);
        std::process::exit(1);
    }
}
