use std::sync::Arc;

use super::Service;
use crate::protocol::{DecodeError, ErrorCode, Message};

/// Protocol state for one device connection.
///
/// Transport-agnostic: the TCP server and the in-process loopback both feed
/// decoded messages in and write whatever comes back.
#[derive(Debug)]
pub struct Connection {
    service: Arc<Service>,
    sid: Option<String>,
    /// Highest policy version this connection has delivered.
    sent_version: u64,
    closed: bool,
}

impl Connection {
    pub fn new(service: Arc<Service>) -> Self {
        Connection { service, sid: None, sent_version: 0, closed: false }
    }

    pub fn sid(&self) -> Option<&str> {
        self.sid.as_deref()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    fn owns(&self, sid: &str) -> bool {
        self.sid.as_deref() == Some(sid)
    }

    fn no_session(sid: &str) -> Message {
        Message::err(Some(sid.to_string()), ErrorCode::NoSession, format!("no live session `{sid}`"))
    }

    /// Handle one inbound message; replies are returned in send order.
    pub fn handle(&mut self, msg: Message) -> Vec<Message> {
        let mut out = Vec::new();
        match &msg {
            Message::Hello { .. } => match self.service.handshake(&msg) {
                Ok((session, ack)) => {
                    if let Message::HelloAck { version, .. } = &ack {
                        self.sent_version = *version;
                    }
                    self.sid = Some(session.sid);
                    out.push(ack);
                }
                Err(err) => out.push(err),
            },
            Message::Events { sid, events } => {
                if self.owns(sid) {
                    out.push(self.service.process_event_batch(sid, events));
                } else {
                    out.push(Self::no_session(sid));
                }
            }
            Message::Hb { sid } => {
                let ack = self.owns(sid).then(|| self.service.heartbeat(sid)).flatten();
                out.push(ack.unwrap_or_else(|| Self::no_session(sid)));
            }
            Message::PolicyAck { sid, version } => {
                if !(self.owns(sid) && self.service.policy_ack(sid, *version)) {
                    out.push(Self::no_session(sid));
                }
            }
            Message::Bye { sid } => {
                if self.owns(sid) {
                    self.service.close_session(sid);
                }
                self.closed = true;
            }
            other => out.push(Message::err(
                other.sid().map(str::to_string),
                ErrorCode::Unexpected,
                format!("`{}` is not a device-to-server message", other.kind()),
            )),
        }
        out.extend(self.push());
        out
    }

    /// A `policy_update` if the active version moved past what this
    /// connection last delivered.
    pub fn push(&mut self) -> Option<Message> {
        let sid = self.sid.as_deref()?;
        let msg = self.service.pending_push(sid, self.sent_version)?;
        if let Message::PolicyUpdate { version, .. } = &msg {
            self.sent_version = *version;
        }
        Some(msg)
    }

    /// Reply for an undecodable frame. The connection is closed afterwards.
    pub fn on_decode_error(&mut self, err: &DecodeError) -> Option<Message> {
        self.closed = true;
        match err {
            DecodeError::NeedMoreData => {
                self.closed = false;
                None
            }
            DecodeError::Framing(len) => Some(Message::err(
                self.sid.clone(),
                ErrorCode::Malformed,
                format!("invalid frame length {len}"),
            )),
            DecodeError::Malformed { detail, tag, .. } => {
                let code = if tag.as_deref() == Some("hello") { ErrorCode::BadHello } else { ErrorCode::Malformed };
                Some(Message::err(self.sid.clone(), code, detail.clone()))
            }
        }
    }
}
