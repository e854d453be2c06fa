//! The shipped evaluation material: a 64-rule policy pack and a seeded
//! generator for labeled scenario suites.
//!
//! The suite models a working morning on ten phones. Benign apps only touch
//! what the pack grants them. Malicious apps fall into three families that
//! the pipeline is built to catch (denied resources, background reads of
//! critical data, bursts), plus a small share of evasive threats: a trusted
//! app abusing a permission it legitimately holds. Those are invisible to a
//! permission-based policy by construction and set the undetected count.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{Label, ScenarioError, ScenarioScript, ScriptedEvent};
use crate::detection::ThreatType;
use crate::policy::{
    ActionSelector, AppSelector, Constraints, Context, Defaults, PolicyRule, PolicySet, RateLimit, ResourceSelector,
    RuleDecision, TimeWindow,
};
use crate::resource::{Action, AppId, AppState, Resource};

pub const DEFAULT_SUITE_SEED: u64 = 20_190_527;
pub const DEFAULT_TRIALS: usize = 5;
pub const USERS_PER_TRIAL: usize = 10;
/// Floor on labeled threats per generated trial.
pub const MIN_THREATS_PER_TRIAL: usize = 110;
/// One evasive threat per this many detectable ones.
pub const EVASIVE_EVERY: usize = 15;

const ANOMALY_THRESHOLD: usize = 30;
const WINDOW_MS: u64 = 60_000;
const HOUR_MS: u64 = 3_600_000;

use AppState::{Background as BG, Foreground as FG};
const ANY: &[AppState] = &[FG, BG];
const FG_ONLY: &[AppState] = &[FG];
const BG_ONLY: &[AppState] = &[BG];

// ---------------------------------------------------------------------------
// policy pack

fn rule(id: &str, priority: i64, app: &str, resource: &str, action: &str, decision: RuleDecision) -> PolicyRule {
    PolicyRule {
        id: id.to_string(),
        priority,
        app: AppSelector::parse(app).expect("pack selector"),
        resource: ResourceSelector::parse(resource).expect("pack selector"),
        action: ActionSelector::parse(action).expect("pack selector"),
        when: Context::default(),
        decision,
        constraints: Constraints::default(),
    }
}

fn deny(id: &str, priority: i64, app: &str, resource: &str, action: &str) -> PolicyRule {
    rule(id, priority, app, resource, action, RuleDecision::Deny)
}

fn grant(id: &str, priority: i64, app: &str, resource: &str) -> PolicyRule {
    rule(id, priority, app, resource, "*", RuleDecision::Grant)
}

fn in_state(mut r: PolicyRule, state: AppState) -> PolicyRule {
    r.when.app_state = Some(state);
    r
}

fn fg(r: PolicyRule) -> PolicyRule {
    in_state(r, FG)
}

fn selective(id: &str, app: &str, resource: &str, constraints: Constraints) -> PolicyRule {
    let mut r = fg(rule(id, 300, app, resource, "*", RuleDecision::Selective));
    r.constraints = constraints;
    r
}

/// The default 64-rule pack.
pub fn default_pack() -> PolicySet {
    let throttled = Constraints {
        max_per_window: Some(RateLimit { count: 20, window_s: 60 }),
        foreground_only: None,
        redact: Some(true),
    };
    let fg_redacted = Constraints { max_per_window: None, foreground_only: Some(true), redact: Some(true) };

    let mut night_camera = deny("deny-night-social-camera", 700, "com.social.*", "CAMERA", "*");
    night_camera.when.time_window = Some(TimeWindow { start_ms: 0, end_ms: 5 * HOUR_MS });
    let mut weather = grant("grant-weather-gps", 300, "com.weather.live", "GPS");
    weather.when.max_per_window = Some(RateLimit { count: 40, window_s: 60 });
    let mut grant_bank_sms = fg(grant("grant-bank-sms", 300, "com.bank.secure", "SMS"));
    grant_bank_sms.action = ActionSelector::Exact(Action::Read);

    let rules = vec![
        // known-bad families
        deny("deny-game-mic", 900, "com.game.*", "MICROPHONE", "*"),
        deny("deny-game-contacts", 900, "com.game.*", "CONTACTS", "*"),
        deny("deny-game-sms", 900, "com.game.*", "SMS", "*"),
        deny("deny-game-calllog", 900, "com.game.*", "CALL_LOG", "*"),
        deny("deny-game-identity", 850, "com.game.*", "DEVICE_IDENTITY", "*"),
        deny("deny-game-gps", 800, "com.game.*", "GPS", "*"),
        deny("deny-game-camera", 800, "com.game.*", "CAMERA", "*"),
        deny("deny-ads-identity", 900, "com.ads.*", "DEVICE_IDENTITY", "*"),
        deny("deny-ads-transmit", 900, "com.ads.*", "*", "TRANSMIT"),
        deny("deny-ads-gps", 850, "com.ads.*", "GPS", "*"),
        deny("deny-ads-software", 850, "com.ads.*", "category:SOFTWARE", "*"),
        deny("deny-ads-mic", 850, "com.ads.*", "MICROPHONE", "*"),
        deny("deny-keyboard-mic", 900, "com.keyboard.*", "MICROPHONE", "*"),
        deny("deny-keyboard-transmit", 900, "com.keyboard.*", "*", "TRANSMIT"),
        deny("deny-keyboard-contacts", 800, "com.keyboard.*", "CONTACTS", "*"),
        deny("deny-wallpaper-hardware", 800, "com.wallpaper.*", "category:HARDWARE", "*"),
        deny("deny-wallpaper-software", 800, "com.wallpaper.*", "category:SOFTWARE", "*"),
        deny("deny-vpn-sms", 800, "com.vpn.*", "SMS", "*"),
        deny("deny-vpn-calllog", 800, "com.vpn.*", "CALL_LOG", "*"),
        in_state(deny("deny-bg-mic", 600, "*", "MICROPHONE", "RECORD"), BG),
        in_state(deny("deny-bg-camera", 600, "*", "CAMERA", "*"), BG),
        night_camera,
        deny("deny-social-sms", 700, "com.social.*", "SMS", "*"),
        // trusted apps
        grant("grant-maps-gps", 300, "com.maps.nav", "GPS"),
        grant("grant-maps-wifi", 300, "com.maps.nav", "WIFI_RADIO"),
        fg(grant("grant-maps-contacts", 300, "com.maps.nav", "CONTACTS")),
        fg(grant("grant-camera-camera", 300, "com.camera.pro", "CAMERA")),
        grant("grant-camera-photos", 300, "com.camera.pro", "PHOTOS"),
        fg(grant("grant-camera-mic", 300, "com.camera.pro", "MICROPHONE")),
        fg(grant("grant-camera-gps", 300, "com.camera.pro", "GPS")),
        fg(grant("grant-chat-contacts", 300, "com.chat.messenger", "CONTACTS")),
        fg(grant("grant-chat-mic", 300, "com.chat.messenger", "MICROPHONE")),
        fg(grant("grant-chat-camera", 300, "com.chat.messenger", "CAMERA")),
        selective("sel-chat-photos", "com.chat.messenger", "PHOTOS", throttled.clone()),
        selective("sel-social-photos", "com.social.feed", "PHOTOS", throttled),
        fg(grant("grant-social-camera", 300, "com.social.feed", "CAMERA")),
        selective("sel-social-contacts", "com.social.feed", "CONTACTS", fg_redacted),
        grant("grant-fitness-gps", 300, "com.fitness.tracker", "GPS"),
        grant("grant-fitness-accel", 300, "com.fitness.tracker", "ACCELEROMETER"),
        grant("grant-fitness-gyro", 300, "com.fitness.tracker", "GYROSCOPE"),
        fg(grant("grant-bank-identity", 300, "com.bank.secure", "DEVICE_IDENTITY")),
        grant_bank_sms,
        fg(grant("grant-bank-camera", 300, "com.bank.secure", "CAMERA")),
        // above the background-recording ban: calls continue off screen
        grant("grant-dialer-contacts", 650, "com.phone.dialer", "CONTACTS"),
        grant("grant-dialer-calllog", 650, "com.phone.dialer", "CALL_LOG"),
        grant("grant-dialer-mic", 650, "com.phone.dialer", "MICROPHONE"),
        grant("grant-sms-sms", 400, "com.sms.inbox", "SMS"),
        grant("grant-sms-contacts", 400, "com.sms.inbox", "CONTACTS"),
        weather,
        grant("grant-mail-contacts", 300, "com.mail.client", "CONTACTS"),
        fg(grant("grant-mail-photos", 300, "com.mail.client", "PHOTOS")),
        grant("grant-mail-calendar", 300, "com.mail.client", "CALENDAR"),
        grant("grant-ride-gps", 300, "com.ride.share", "GPS"),
        fg(grant("grant-ride-sms", 300, "com.ride.share", "SMS")),
        fg(grant("grant-ride-contacts", 300, "com.ride.share", "CONTACTS")),
        fg(grant("grant-browser-gps", 300, "com.web.browser", "GPS")),
        fg(grant("grant-browser-camera", 300, "com.web.browser", "CAMERA")),
        fg(grant("grant-browser-mic", 300, "com.web.browser", "MICROPHONE")),
        fg(grant("grant-notes-mic", 300, "com.notes.app", "MICROPHONE")),
        fg(grant("grant-notes-photos", 300, "com.notes.app", "PHOTOS")),
        fg(grant("grant-music-photos", 300, "com.music.player", "PHOTOS")),
        grant("grant-os-all", 50, "com.android.*", "*"),
        grant("grant-health-gps", 300, "com.health.*", "GPS"),
        fg(grant("grant-calendar-contacts", 300, "com.calendar.app", "CONTACTS")),
    ];
    PolicySet::new(1, rules, Defaults::default()).expect("default pack is valid")
}

// ---------------------------------------------------------------------------
// app catalog

type Use = (Resource, Action, &'static [AppState]);

fn benign_apps() -> Vec<(&'static str, Vec<Use>)> {
    use Action::*;
    use Resource::*;
    vec![
        ("com.maps.nav", vec![(Gps, Read, ANY), (WifiRadio, Read, ANY), (Contacts, Read, FG_ONLY)]),
        (
            "com.camera.pro",
            vec![
                (Camera, Record, FG_ONLY),
                (Photos, Write, ANY),
                (Photos, Read, FG_ONLY),
                (Microphone, Record, FG_ONLY),
                (Gps, Read, FG_ONLY),
            ],
        ),
        (
            "com.chat.messenger",
            vec![
                (Contacts, Read, FG_ONLY),
                (Microphone, Record, FG_ONLY),
                (Camera, Record, FG_ONLY),
                (Photos, Read, FG_ONLY),
                (WifiRadio, Transmit, BG_ONLY),
            ],
        ),
        (
            "com.social.feed",
            vec![(Photos, Read, FG_ONLY), (Camera, Record, FG_ONLY), (Contacts, Read, FG_ONLY), (WifiRadio, Transmit, ANY)],
        ),
        ("com.fitness.tracker", vec![(Gps, Read, ANY), (Accelerometer, Read, BG_ONLY), (Gyroscope, Read, BG_ONLY)]),
        ("com.bank.secure", vec![(DeviceIdentity, Read, FG_ONLY), (Sms, Read, FG_ONLY), (Camera, Record, FG_ONLY)]),
        (
            "com.phone.dialer",
            vec![(Contacts, Read, ANY), (CallLog, Read, ANY), (CallLog, Write, ANY), (Microphone, Record, ANY)],
        ),
        ("com.sms.inbox", vec![(Sms, Read, ANY), (Sms, Write, ANY), (Contacts, Read, ANY)]),
        ("com.weather.live", vec![(Gps, Read, BG_ONLY), (WifiRadio, Read, BG_ONLY)]),
        (
            "com.mail.client",
            vec![(Contacts, Read, ANY), (Photos, Read, FG_ONLY), (Calendar, Read, BG_ONLY), (Calendar, Write, FG_ONLY)],
        ),
        ("com.ride.share", vec![(Gps, Read, ANY), (Sms, Read, FG_ONLY), (Contacts, Read, FG_ONLY)]),
        (
            "com.web.browser",
            vec![(Gps, Read, FG_ONLY), (Camera, Record, FG_ONLY), (Microphone, Record, FG_ONLY), (WifiRadio, Transmit, ANY)],
        ),
        ("com.music.player", vec![(Photos, Read, FG_ONLY), (WifiRadio, Read, BG_ONLY), (Accelerometer, Read, FG_ONLY)]),
        ("com.calendar.app", vec![(Calendar, Read, ANY), (Calendar, Write, FG_ONLY), (Contacts, Read, FG_ONLY)]),
        ("com.android.settings", vec![(WifiRadio, Write, FG_ONLY), (DeviceIdentity, Read, ANY)]),
    ]
}

fn malicious_apps() -> Vec<(&'static str, ThreatType, Vec<Use>)> {
    use Action::*;
    use Resource::*;
    use ThreatType::*;
    let game = vec![
        (Microphone, Record, ANY),
        (Contacts, Read, ANY),
        (Sms, Read, ANY),
        (DeviceIdentity, Read, ANY),
        (Gps, Read, ANY),
    ];
    let exfil = vec![
        (Sms, Read, BG_ONLY),
        (CallLog, Read, BG_ONLY),
        (Contacts, Read, BG_ONLY),
        (Photos, Read, BG_ONLY),
        (DeviceIdentity, Read, BG_ONLY),
    ];
    vec![
        ("com.game.puzzle", PolicyViolation, game.clone()),
        ("com.game.racer", PolicyViolation, game),
        (
            "com.ads.tracker",
            PolicyViolation,
            vec![
                (DeviceIdentity, Read, ANY),
                (Gps, Read, ANY),
                (Contacts, Read, ANY),
                (WifiRadio, Transmit, ANY),
                (Photos, Transmit, ANY),
            ],
        ),
        (
            "com.keyboard.fancy",
            PolicyViolation,
            vec![(Microphone, Record, ANY), (Contacts, Read, ANY), (Contacts, Transmit, ANY)],
        ),
        ("com.util.cleaner", BackgroundExfiltration, exfil.clone()),
        ("com.flash.light", BackgroundExfiltration, exfil),
    ]
}

/// Trusted apps misusing permissions they hold.
fn evasive_uses() -> Vec<(&'static str, Resource, Action)> {
    vec![
        ("com.phone.dialer", Resource::Contacts, Action::Transmit),
        ("com.sms.inbox", Resource::Sms, Action::Transmit),
        ("com.phone.dialer", Resource::CallLog, Action::Transmit),
    ]
}

// ---------------------------------------------------------------------------
// generation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    /// Labeled by the burst rule: benign unless it is the 31st+ access in a
    /// minute.
    Ordinary,
    /// Ground truth benign even when bursty (a workout sampling sensors).
    LegitBurst,
    Threat(ThreatType),
}

#[derive(Debug, Clone)]
struct Draft {
    at_ms: u64,
    app: &'static str,
    resource: Resource,
    action: Action,
    state: AppState,
    payload_bytes: u64,
    kind: Kind,
}

#[derive(Debug)]
struct User {
    start_ms: u64,
    end_ms: u64,
    drafts: Vec<Draft>,
}

fn payload(rng: &mut ChaCha8Rng, action: Action) -> u64 {
    match action {
        Action::Transmit => rng.random_range(4_096..262_144),
        Action::Record => rng.random_range(16_384..524_288),
        Action::Write => rng.random_range(512..65_536),
        Action::Read => rng.random_range(0..8_192),
    }
}

fn draft(rng: &mut ChaCha8Rng, at_ms: u64, app: &'static str, use_: &Use, kind: Kind) -> Draft {
    let (resource, action, states) = *use_;
    Draft {
        at_ms,
        app,
        resource,
        action,
        state: *states.choose(rng).expect("non-empty states"),
        payload_bytes: payload(rng, action),
        kind,
    }
}

fn generate_user(rng: &mut ChaCha8Rng) -> User {
    let catalog = benign_apps();
    let start_ms = 8 * HOUR_MS + rng.random_range(0..90 * 60_000);
    let n = rng.random_range(5..=8);
    let mut apps: Vec<_> = catalog.choose_multiple(rng, n).collect();
    apps.sort_by_key(|(name, _)| *name);

    let mut drafts = Vec::new();
    let mut t = start_ms;
    for _ in 0..rng.random_range(170..=230) {
        t += rng.random_range(8_000..50_000);
        let (app, uses) = apps.choose(rng).expect("apps");
        let use_ = uses.choose(rng).expect("uses");
        drafts.push(draft(rng, t, app, use_, Kind::Ordinary));
    }
    let end_ms = t;
    let mut user = User { start_ms, end_ms, drafts };

    let malicious = malicious_apps();
    let n = rng.random_range(1..=2);
    for (app, kind, uses) in malicious.choose_multiple(rng, n) {
        inject_malicious(rng, &mut user, app, *kind, uses);
    }
    if rng.random_bool(0.5) {
        inject_burst(rng, &mut user, "com.weather.live", Resource::Gps, Kind::Ordinary, 36..=46);
    }
    if rng.random_bool(0.2) {
        inject_burst(rng, &mut user, "com.fitness.tracker", Resource::Accelerometer, Kind::LegitBurst, 31..=34);
    }
    user
}

fn inject_malicious(rng: &mut ChaCha8Rng, user: &mut User, app: &'static str, kind: ThreatType, uses: &[Use]) {
    for _ in 0..rng.random_range(3..=7) {
        let at = rng.random_range(user.start_ms..=user.end_ms);
        let use_ = uses.choose(rng).expect("uses");
        let d = draft(rng, at, app, use_, Kind::Threat(kind));
        user.drafts.push(d);
    }
}

fn inject_burst(
    rng: &mut ChaCha8Rng,
    user: &mut User,
    app: &'static str,
    resource: Resource,
    kind: Kind,
    size: std::ops::RangeInclusive<usize>,
) {
    let mut at = rng.random_range(user.start_ms..=user.end_ms);
    for _ in 0..rng.random_range(size) {
        at += rng.random_range(600..=1_200);
        let use_: Use = (resource, Action::Read, BG_ONLY);
        user.drafts.push(draft(rng, at, app, &use_, kind));
    }
}

fn inject_evasive(rng: &mut ChaCha8Rng, user: &mut User) {
    let uses = evasive_uses();
    let (app, resource, action) = *uses.choose(rng).expect("evasive uses");
    let at = rng.random_range(user.start_ms..=user.end_ms);
    let use_: Use = (resource, action, BG_ONLY);
    user.drafts.push(draft(rng, at, app, &use_, Kind::Threat(ThreatType::BackgroundExfiltration)));
}

/// Order the drafts, make timestamps strictly increasing and label them.
fn finalize(drafts: &[Draft]) -> ScenarioScript {
    let mut sorted = drafts.to_vec();
    sorted.sort_by_key(|d| d.at_ms);
    for i in 1..sorted.len() {
        if sorted[i].at_ms <= sorted[i - 1].at_ms {
            sorted[i].at_ms = sorted[i - 1].at_ms + 1;
        }
    }
    let mut events = Vec::with_capacity(sorted.len());
    for (i, d) in sorted.iter().enumerate() {
        // Plain scan: accesses to the same (app, resource) in the trailing
        // minute, this one included.
        let in_window = sorted[..=i]
            .iter()
            .filter(|o| o.app == d.app && o.resource == d.resource && o.at_ms + WINDOW_MS > d.at_ms)
            .count();
        let label = match d.kind {
            Kind::Threat(t) => Label::Threat(t),
            Kind::LegitBurst => Label::Benign,
            Kind::Ordinary if in_window > ANOMALY_THRESHOLD => Label::Threat(ThreatType::AnomalousFrequency),
            Kind::Ordinary => Label::Benign,
        };
        events.push(ScriptedEvent {
            at_ms: d.at_ms,
            app: AppId::new(d.app).expect("catalog app ids are valid"),
            resource: d.resource,
            action: d.action,
            app_state: d.state,
            payload_bytes: d.payload_bytes,
            label,
        });
    }
    ScenarioScript::new(events).expect("generated scripts are ordered")
}

fn detectable(users: &[User]) -> usize {
    users
        .iter()
        .map(|u| finalize(&u.drafts).events.iter().filter(|e| e.label.is_threat()).count())
        .sum()
}

/// One trial's scripts, one per user.
pub fn generate_trial(seed: u64, trial: usize) -> Vec<ScenarioScript> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let mut users: Vec<User> = (0..USERS_PER_TRIAL).map(|_| generate_user(&mut rng)).collect();

    let malicious = malicious_apps();
    while detectable(&users) < MIN_THREATS_PER_TRIAL {
        let i = rng.random_range(0..users.len());
        let (app, kind, uses) = malicious.choose(&mut rng).expect("apps");
        inject_malicious(&mut rng, &mut users[i], app, *kind, uses);
    }
    let evasive = (detectable(&users) / EVASIVE_EVERY).max(1);
    for _ in 0..evasive {
        let i = rng.random_range(0..users.len());
        inject_evasive(&mut rng, &mut users[i]);
    }
    users.iter().map(|u| finalize(&u.drafts)).collect()
}

/// `trials` trials of [`USERS_PER_TRIAL`] scripts each.
pub fn generate_suite(seed: u64, trials: usize) -> Suite {
    Suite { trials: (0..trials).map(|t| generate_trial(seed, t)).collect() }
}

// ---------------------------------------------------------------------------
// on-disk layout: <dir>/trial_<n>/user_<m>.jsonl, both 1-based

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Script { path: PathBuf, source: ScenarioError },
    #[error("{0}")]
    Layout(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Suite {
    pub trials: Vec<Vec<ScenarioScript>>,
}

fn numbered(dir: &Path, prefix: &str, suffix: &str) -> Result<BTreeMap<usize, PathBuf>, SuiteError> {
    let io_err = |source| SuiteError::Io { path: dir.to_path_buf(), source };
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(n) = name.strip_prefix(prefix).and_then(|r| r.strip_suffix(suffix)) {
            if let Ok(n) = n.parse::<usize>() {
                out.insert(n, path);
            }
        }
    }
    Ok(out)
}

impl Suite {
    /// Load a suite directory. Trials and users are ordered numerically.
    pub fn load(dir: &Path) -> Result<Suite, SuiteError> {
        let mut trials = Vec::new();
        for (_, trial_dir) in numbered(dir, "trial_", "")? {
            let mut scripts = Vec::new();
            for (_, path) in numbered(&trial_dir, "user_", ".jsonl")? {
                let script = ScenarioScript::load(&path).map_err(|source| SuiteError::Script { path, source })?;
                scripts.push(script);
            }
            trials.push(scripts);
        }
        if trials.is_empty() {
            return Err(SuiteError::Layout(format!("no trial_<n> directories in {}", dir.display())));
        }
        Ok(Suite { trials })
    }

    pub fn write(&self, dir: &Path) -> Result<(), SuiteError> {
        for (t, scripts) in self.trials.iter().enumerate() {
            let trial_dir = dir.join(format!("trial_{}", t + 1));
            fs::create_dir_all(&trial_dir).map_err(|source| SuiteError::Io { path: trial_dir.clone(), source })?;
            for (u, script) in scripts.iter().enumerate() {
                let path = trial_dir.join(format!("user_{}.jsonl", u + 1));
                fs::write(&path, script.to_jsonl()).map_err(|source| SuiteError::Io { path, source })?;
            }
        }
        Ok(())
    }

    pub fn events(&self) -> usize {
        self.trials.iter().flatten().map(ScenarioScript::len).sum()
    }
}
