//! Device ↔ cloud wire contract.
//!
//! Every message travels as a frame: a 32-bit big-endian length followed by
//! that many bytes of compact JSON. The `t` field carries the message type.

mod frame;

use serde::{Deserialize, Serialize};

use crate::policy::Decision;
use crate::resource::{AccessEvent, DeviceDescriptor};

pub use frame::{
    decode_frame, encode_body, encode_frame, read_message, write_message, DecodeError, FrameError, FrameReader,
    MAX_FRAME_LEN,
};

pub const DEFAULT_PORT: u16 = 7740;
pub const HEARTBEAT_INTERVAL_MS: u64 = 5_000;
pub const HEARTBEAT_TIMEOUT_MS: u64 = 3 * HEARTBEAT_INTERVAL_MS;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "snake_case", deny_unknown_fields)]
pub enum Message {
    Hello {
        device: DeviceDescriptor,
    },
    /// Carries the active policy document so the agent can seed its
    /// fallback cache.
    HelloAck {
        sid: String,
        version: u64,
        policy: String,
    },
    Events {
        sid: String,
        events: Vec<AccessEvent>,
    },
    Decisions {
        sid: String,
        decisions: Vec<Decision>,
    },
    PolicyUpdate {
        sid: String,
        version: u64,
        policy: String,
    },
    PolicyAck {
        sid: String,
        version: u64,
    },
    Hb {
        sid: String,
    },
    HbAck {
        sid: String,
    },
    Bye {
        sid: String,
    },
    Err {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sid: Option<String>,
        code: ErrorCode,
        detail: String,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "hello",
            Message::HelloAck { .. } => "hello_ack",
            Message::Events { .. } => "events",
            Message::Decisions { .. } => "decisions",
            Message::PolicyUpdate { .. } => "policy_update",
            Message::PolicyAck { .. } => "policy_ack",
            Message::Hb { .. } => "hb",
            Message::HbAck { .. } => "hb_ack",
            Message::Bye { .. } => "bye",
            Message::Err { .. } => "err",
        }
    }

    pub fn sid(&self) -> Option<&str> {
        match self {
            Message::Hello { .. } => None,
            Message::Err { sid, .. } => sid.as_deref(),
            Message::HelloAck { sid, .. }
            | Message::Events { sid, .. }
            | Message::Decisions { sid, .. }
            | Message::PolicyUpdate { sid, .. }
            | Message::PolicyAck { sid, .. }
            | Message::Hb { sid }
            | Message::HbAck { sid }
            | Message::Bye { sid } => Some(sid),
        }
    }

    pub fn err(sid: Option<String>, code: ErrorCode, detail: impl Into<String>) -> Self {
        Message::Err { sid, code, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadHello,
    NoSession,
    BadBatch,
    BadEvent,
    Malformed,
    Unexpected,
}

/// Server-side view of one connected device.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub sid: String,
    pub device: DeviceDescriptor,
    pub last_seq: u64,
    pub policy_version_acked: u64,
    /// Server-clock deadline; the session closes when it passes without
    /// traffic.
    pub deadline_ms: u64,
}
