//! Device resource inventory, apps, and access events.
//!
//! Everything here is a plain value type. The inventory is closed: twelve
//! built-in resources split into hardware and software, each with a fixed
//! criticality.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResourceError {
    #[error("unknown resource `{0}`")]
    UnknownResource(String),
    #[error("resource {resource} is not in the inventory of device `{device_id}`")]
    InventoryMismatch { device_id: String, resource: Resource },
    #[error("malformed event: {0}")]
    MalformedEvent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    Hardware,
    Software,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Hardware => "HARDWARE",
            Category::Software => "SOFTWARE",
        }
    }
}

impl FromStr for Category {
    type Err = ResourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "HARDWARE" => Ok(Category::Hardware),
            "SOFTWARE" => Ok(Category::Software),
            other => Err(ResourceError::UnknownResource(other.to_string())),
        }
    }
}

/// A built-in device resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Resource {
    Microphone,
    Gps,
    Camera,
    Accelerometer,
    Gyroscope,
    WifiRadio,
    /// UDID / IMEI reads.
    DeviceIdentity,
    Contacts,
    Photos,
    Sms,
    CallLog,
    Calendar,
}

impl Resource {
    pub const ALL: [Resource; 12] = [
        Resource::Microphone,
        Resource::Gps,
        Resource::Camera,
        Resource::Accelerometer,
        Resource::Gyroscope,
        Resource::WifiRadio,
        Resource::DeviceIdentity,
        Resource::Contacts,
        Resource::Photos,
        Resource::Sms,
        Resource::CallLog,
        Resource::Calendar,
    ];

    pub fn category(self) -> Category {
        use Resource::*;
        match self {
            Microphone | Gps | Camera | Accelerometer | Gyroscope | WifiRadio | DeviceIdentity => {
                Category::Hardware
            }
            Contacts | Photos | Sms | CallLog | Calendar => Category::Software,
        }
    }

    pub fn criticality(self) -> Criticality {
        use Resource::*;
        match self {
            Microphone | Gps | Camera | Contacts | Photos | Sms | CallLog | DeviceIdentity => {
                Criticality::Critical
            }
            Accelerometer | Gyroscope | WifiRadio | Calendar => Criticality::Normal,
        }
    }

    pub fn as_str(self) -> &'static str {
        use Resource::*;
        match self {
            Microphone => "MICROPHONE",
            Gps => "GPS",
            Camera => "CAMERA",
            Accelerometer => "ACCELEROMETER",
            Gyroscope => "GYROSCOPE",
            WifiRadio => "WIFI_RADIO",
            DeviceIdentity => "DEVICE_IDENTITY",
            Contacts => "CONTACTS",
            Photos => "PHOTOS",
            Sms => "SMS",
            CallLog => "CALL_LOG",
            Calendar => "CALENDAR",
        }
    }

    /// The full built-in inventory.
    pub fn inventory() -> BTreeSet<Resource> {
        Resource::ALL.into_iter().collect()
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Resource {
    type Err = ResourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Resource::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| ResourceError::UnknownResource(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Criticality {
    Critical,
    Normal,
}

/// Criticality of a resource given by name.
pub fn classify_criticality(resource: &str) -> Result<Criticality, ResourceError> {
    Ok(resource.parse::<Resource>()?.criticality())
}

/// Reverse-domain application identifier, e.g. `com.game.puzzle`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct AppId(String);

impl AppId {
    pub fn new(id: impl Into<String>) -> Result<Self, ResourceError> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(ResourceError::MalformedEvent(format!("invalid app id {id:?}")));
        }
        Ok(AppId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for AppId {
    type Err = ResourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AppId::new(s)
    }
}

impl<'de> Deserialize<'de> for AppId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        AppId::new(s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Read,
    Write,
    Record,
    Transmit,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Read, Action::Write, Action::Record, Action::Transmit];

    pub fn as_str(self) -> &'static str {
        match self {
            Action::Read => "READ",
            Action::Write => "WRITE",
            Action::Record => "RECORD",
            Action::Transmit => "TRANSMIT",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = ResourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| ResourceError::MalformedEvent(format!("unknown action `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AppState {
    Foreground,
    Background,
}

impl AppState {
    pub fn as_str(self) -> &'static str {
        match self {
            AppState::Foreground => "FOREGROUND",
            AppState::Background => "BACKGROUND",
        }
    }
}

impl fmt::Display for AppState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AppState {
    type Err = ResourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "FOREGROUND" => Ok(AppState::Foreground),
            "BACKGROUND" => Ok(AppState::Background),
            other => Err(ResourceError::MalformedEvent(format!("unknown app state `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub device_id: String,
    pub resource_inventory: BTreeSet<Resource>,
    pub agent_version: String,
}

impl DeviceDescriptor {
    /// A device carrying the full built-in inventory.
    pub fn full(device_id: impl Into<String>) -> Self {
        DeviceDescriptor {
            device_id: device_id.into(),
            resource_inventory: Resource::inventory(),
            agent_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), ResourceError> {
        if self.device_id.is_empty() {
            return Err(ResourceError::MalformedEvent("empty device_id".into()));
        }
        Ok(())
    }
}

/// One attempt by an app to use a device resource.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessEvent {
    pub event_seq: u64,
    pub device_id: String,
    pub app_id: AppId,
    pub resource: Resource,
    pub action: Action,
    pub app_state: AppState,
    pub at_ms: u64,
    pub payload_bytes: u64,
    /// Set by the agent when it already blocked this access locally; the
    /// event is forwarded for monitoring only.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub pre_blocked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validated {
    Accepted(AccessEvent),
    /// `event_seq` at or below the last accepted sequence; replay.
    Duplicate(AccessEvent),
}

impl Validated {
    pub fn event(&self) -> &AccessEvent {
        match self {
            Validated::Accepted(e) | Validated::Duplicate(e) => e,
        }
    }

    pub fn is_duplicate(&self) -> bool {
        matches!(self, Validated::Duplicate(_))
    }
}

pub fn validate_event(
    event: AccessEvent,
    device: &DeviceDescriptor,
    last_seq: u64,
) -> Result<Validated, ResourceError> {
    if event.device_id != device.device_id {
        return Err(ResourceError::MalformedEvent(format!(
            "event for device `{}` on session of `{}`",
            event.device_id, device.device_id
        )));
    }
    // AppId's constructor is the only gate; re-check in case of a struct literal.
    if event.app_id.0.is_empty() || event.app_id.0.chars().any(char::is_whitespace) {
        return Err(ResourceError::MalformedEvent(format!("invalid app id {:?}", event.app_id.0)));
    }
    if !device.resource_inventory.contains(&event.resource) {
        return Err(ResourceError::InventoryMismatch {
            device_id: device.device_id.clone(),
            resource: event.resource,
        });
    }
    if event.event_seq <= last_seq {
        Ok(Validated::Duplicate(event))
    } else {
        Ok(Validated::Accepted(event))
    }
}
