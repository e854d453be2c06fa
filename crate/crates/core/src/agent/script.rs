//! Scenario scripts: JSON lines, one scripted access per line.
//!
//! ```text
//! {"at_ms":28800000,"app":"com.game.puzzle","resource":"MICROPHONE","action":"RECORD","app_state":"BACKGROUND","payload_bytes":4096,"label":"threat:POLICY_VIOLATION"}
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::detection::ThreatType;
use crate::resource::{Action, AppId, AppState, Resource};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: {detail}")]
    Line { line: usize, detail: String },
    #[error("line {line}: at_ms {at_ms} is earlier than the previous event ({previous})")]
    Order { line: usize, at_ms: u64, previous: u64 },
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Ground truth attached to each scripted access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Benign,
    Threat(ThreatType),
}

impl Label {
    pub fn is_threat(self) -> bool {
        matches!(self, Label::Threat(_))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Benign => f.write_str("benign"),
            Label::Threat(t) => write!(f, "threat:{}", t.as_str()),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "benign" => Ok(Label::Benign),
            "threat:POLICY_VIOLATION" => Ok(Label::Threat(ThreatType::PolicyViolation)),
            "threat:ANOMALOUS_FREQUENCY" => Ok(Label::Threat(ThreatType::AnomalousFrequency)),
            "threat:BACKGROUND_EXFILTRATION" => Ok(Label::Threat(ThreatType::BackgroundExfiltration)),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    pub at_ms: u64,
    pub app: AppId,
    pub resource: Resource,
    pub action: Action,
    pub app_state: AppState,
    pub payload_bytes: u64,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScenarioScript {
    pub events: Vec<ScriptedEvent>,
}

impl ScenarioScript {
    pub fn new(events: Vec<ScriptedEvent>) -> Result<Self, ScenarioError> {
        let script = ScenarioScript { events };
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (i, w) in self.events.windows(2).enumerate() {
            if w[1].at_ms < w[0].at_ms {
                return Err(ScenarioError::Order { line: i + 2, at_ms: w[1].at_ms, previous: w[0].at_ms });
            }
        }
        Ok(())
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, ScenarioError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(line).map_err(|e| ScenarioError::Line { line: i + 1, detail: e.to_string() })?;
            events.push(ev);
        }
        Self::new(events)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("scripted events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn threats(&self) -> usize {
        self.events.iter().filter(|e| e.label.is_threat()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO: &str = r#"{"at_ms":10,"app":"com.game.puzzle","resource":"MICROPHONE","action":"RECORD","app_state":"BACKGROUND","payload_bytes":1,"label":"threat:POLICY_VIOLATION"}
{"at_ms":20,"app":"com.maps.nav","resource":"GPS","action":"READ","app_state":"FOREGROUND","payload_bytes":0,"label":"benign"}
"#;

    #[test]
    fn parses_and_round_trips() {
        let s = ScenarioScript::parse_jsonl(TWO).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.threats(), 1);
        assert_eq!(s.events[0].label, Label::Threat(ThreatType::PolicyViolation));
        assert_eq!(s.to_jsonl(), TWO);
    }

    #[test]
    fn rejects_unknown_label() {
        let bad = TWO.replace("benign", "suspicious");
        assert!(matches!(ScenarioScript::parse_jsonl(&bad), Err(ScenarioError::Line { line: 2, .. })));
    }

    #[test]
    fn rejects_time_travel() {
        let bad = TWO.replace("\"at_ms\":20", "\"at_ms\":5");
        assert!(matches!(ScenarioScript::parse_jsonl(&bad), Err(ScenarioError::Order { line: 2, .. })));
    }

    #[test]
    fn empty_script() {
        assert!(ScenarioScript::parse_jsonl("").unwrap().is_empty());
    }
}
