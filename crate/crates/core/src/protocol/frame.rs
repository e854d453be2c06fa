use std::io::{self, Read, Write};

use thiserror::Error;

use super::Message;

/// Largest accepted frame body: 1 MiB.
pub const MAX_FRAME_LEN: usize = 1_048_576;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame body of {0} bytes exceeds the 1 MiB limit")]
    FrameTooLarge(usize),
    #[error("empty frame body")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("need more data")]
    NeedMoreData,
    /// Invalid length prefix; the connection must be closed.
    #[error("invalid frame length {0}")]
    Framing(u32),
    /// A complete frame whose body is not a valid message.
    #[error("malformed message: {detail}")]
    Malformed {
        consumed: usize,
        detail: String,
        /// The body's `t` field, when the body was at least a JSON object.
        tag: Option<String>,
    },
}

/// Prefix an already-encoded body with its length.
pub fn encode_body(body: &[u8]) -> Result<Vec<u8>, FrameError> {
    if body.is_empty() {
        return Err(FrameError::Empty);
    }
    if body.len() > MAX_FRAME_LEN {
        return Err(FrameError::FrameTooLarge(body.len()));
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    Ok(out)
}

pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, FrameError> {
    let body = serde_json::to_vec(msg).expect("messages always serialize");
    encode_body(&body)
}

/// Decode the first frame in `buf`, returning the message and the number of
/// bytes it occupied.
pub fn decode_frame(buf: &[u8]) -> Result<(Message, usize), DecodeError> {
    let Some(prefix) = buf.get(..4) else {
        return Err(DecodeError::NeedMoreData);
    };
    let len = u32::from_be_bytes(prefix.try_into().expect("4 bytes"));
    if len == 0 || len as usize > MAX_FRAME_LEN {
        return Err(DecodeError::Framing(len));
    }
    let end = 4 + len as usize;
    let Some(body) = buf.get(4..end) else {
        return Err(DecodeError::NeedMoreData);
    };
    let text = std::str::from_utf8(body)
        .map_err(|e| DecodeError::Malformed { consumed: end, detail: e.to_string(), tag: None })?;
    let msg = serde_json::from_str(text).map_err(|e| DecodeError::Malformed {
        consumed: end,
        detail: e.to_string(),
        tag: serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("t").and_then(|t| t.as_str()).map(str::to_string)),
    })?;
    Ok((msg, end))
}

/// Accumulates stream bytes and yields complete messages.
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete message, `Ok(None)` if more bytes are needed.
    pub fn next_message(&mut self) -> Result<Option<Message>, DecodeError> {
        match decode_frame(&self.buf) {
            Ok((msg, used)) => {
                self.buf.drain(..used);
                Ok(Some(msg))
            }
            Err(DecodeError::NeedMoreData) => Ok(None),
            Err(e @ DecodeError::Malformed { consumed, .. }) => {
                self.buf.drain(..consumed);
                Err(e)
            }
            Err(e) => Err(e),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

fn invalid(e: impl std::error::Error + Send + Sync + 'static) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e)
}

/// Blocking read of exactly one frame.
pub fn read_message<R: Read>(reader: &mut R) -> io::Result<Message> {
    let mut prefix = [0u8; 4];
    reader.read_exact(&mut prefix)?;
    let len = u32::from_be_bytes(prefix);
    if len == 0 || len as usize > MAX_FRAME_LEN {
        return Err(invalid(DecodeError::Framing(len)));
    }
    let mut frame = vec![0u8; 4 + len as usize];
    frame[..4].copy_from_slice(&prefix);
    reader.read_exact(&mut frame[4..])?;
    decode_frame(&frame).map(|(msg, _)| msg).map_err(invalid)
}

pub fn write_message<W: Write>(writer: &mut W, msg: &Message) -> io::Result<()> {
    let bytes = encode_frame(msg).map_err(invalid)?;
    writer.write_all(&bytes)?;
    writer.flush()
}
