//! How an agent reaches the cloud.
//!
//! [`Loopback`] drives an in-process [`Connection`] but still pushes every
//! message through the frame codec in both directions, so it exercises the
//! same bytes a socket would carry. [`TcpTransport`] is the real thing.

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::protocol::{encode_frame, DecodeError, FrameError, FrameReader, Message};
use crate::service::{Connection, Service};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection closed")]
    Closed,
    #[error("timed out waiting for the server")]
    Timeout,
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("decode: {0}")]
    Decode(#[from] DecodeError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

pub trait Transport: Send {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    /// Next inbound message, waiting at most `timeout`.
    fn recv(&mut self, timeout: Duration) -> Result<Message, TransportError>;
}

/// Opens fresh transports; used for the initial connect and reconnects.
pub trait Connector: Send {
    fn connect(&mut self) -> Result<Box<dyn Transport>, TransportError>;
}

/// Failure injection for [`Loopback`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// Sends after which the link drops (the message that crosses the line
    /// is lost).
    pub sever_after_sends: Option<usize>,
    /// Sends after which the server stops answering (requests still land).
    pub silent_after_sends: Option<usize>,
}

#[derive(Debug)]
pub struct Loopback {
    conn: Connection,
    server_in: FrameReader,
    client_in: FrameReader,
    faults: Faults,
    sends: usize,
    severed: bool,
}

impl Loopback {
    pub fn new(service: Arc<Service>) -> Self {
        Self::with_faults(service, Faults::default())
    }

    pub fn with_faults(service: Arc<Service>, faults: Faults) -> Self {
        Loopback {
            conn: Connection::new(service),
            server_in: FrameReader::new(),
            client_in: FrameReader::new(),
            faults,
            sends: 0,
            severed: false,
        }
    }

    pub fn sever(&mut self) {
        self.severed = true;
    }

    fn deliver(&mut self, reply: &Message) -> Result<(), TransportError> {
        self.client_in.extend(&encode_frame(reply)?);
        Ok(())
    }
}

impl Transport for Loopback {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        if self.severed || self.conn.is_closed() {
            return Err(TransportError::Closed);
        }
        self.sends += 1;
        if self.faults.sever_after_sends.is_some_and(|n| self.sends > n) {
            self.severed = true;
            return Err(TransportError::Closed);
        }
        let silent = self.faults.silent_after_sends.is_some_and(|n| self.sends > n);

        self.server_in.extend(&encode_frame(msg)?);
        loop {
            match self.server_in.next_message() {
                Ok(Some(inbound)) => {
                    for reply in self.conn.handle(inbound) {
                        if !silent {
                            self.deliver(&reply)?;
                        }
                    }
                }
                Ok(None) => return Ok(()),
                Err(e) => {
                    if let Some(reply) = self.conn.on_decode_error(&e) {
                        self.deliver(&reply)?;
                    }
                    return Ok(());
                }
            }
        }
    }

    fn recv(&mut self, _timeout: Duration) -> Result<Message, TransportError> {
        if let Some(msg) = self.client_in.next_message()? {
            return Ok(msg);
        }
        if self.severed {
            return Err(TransportError::Closed);
        }
        // Nothing in flight; only a policy push can still show up.
        if let Some(push) = self.conn.push() {
            return Ok(push);
        }
        Err(TransportError::Timeout)
    }
}

/// Hands out [`Loopback`] links to one service.
#[derive(Debug)]
pub struct LoopbackConnector {
    service: Arc<Service>,
    /// Faults for the n-th connection; later ones are clean.
    faults: VecDeque<Faults>,
    remaining: Option<usize>,
}

impl LoopbackConnector {
    pub fn new(service: Arc<Service>) -> Self {
        LoopbackConnector { service, faults: VecDeque::new(), remaining: None }
    }

    pub fn with_faults(mut self, faults: impl IntoIterator<Item = Faults>) -> Self {
        self.faults = faults.into_iter().collect();
        self
    }

    /// Refuse connections after `n` have been opened.
    pub fn max_connections(mut self, n: usize) -> Self {
        self.remaining = Some(n);
        self
    }
}

impl Connector for LoopbackConnector {
    fn connect(&mut self) -> Result<Box<dyn Transport>, TransportError> {
        match self.remaining.as_mut() {
            Some(0) => return Err(TransportError::Closed),
            Some(n) => *n -= 1,
            None => {}
        }
        let faults = self.faults.pop_front().unwrap_or_default();
        Ok(Box::new(Loopback::with_faults(Arc::clone(&self.service), faults)))
    }
}

#[derive(Debug)]
pub struct TcpTransport {
    stream: TcpStream,
    reader: FrameReader,
}

impl TcpTransport {
    pub fn connect(addr: SocketAddr, timeout: Duration) -> io::Result<Self> {
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_nodelay(true)?;
        Ok(TcpTransport { stream, reader: FrameReader::new() })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError> {
        let bytes = encode_frame(msg)?;
        self.stream.write_all(&bytes).map_err(closed_or_io)?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Message, TransportError> {
        let deadline = Instant::now() + timeout;
        let mut buf = [0u8; 16 * 1024];
        loop {
            if let Some(msg) = self.reader.next_message()? {
                return Ok(msg);
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(TransportError::Timeout);
            }
            self.stream.set_read_timeout(Some(left))?;
            match self.stream.read(&mut buf) {
                Ok(0) => return Err(TransportError::Closed),
                Ok(n) => self.reader.extend(&buf[..n]),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Err(TransportError::Timeout)
                }
                Err(e) => return Err(closed_or_io(e)),
            }
        }
    }
}

fn closed_or_io(e: io::Error) -> TransportError {
    match e.kind() {
        io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted => {
            TransportError::Closed
        }
        _ => TransportError::Io(e),
    }
}

#[derive(Debug, Clone)]
pub struct TcpConnector {
    pub addr: SocketAddr,
    pub connect_timeout: Duration,
}

impl TcpConnector {
    pub fn new(addr: SocketAddr) -> Self {
        TcpConnector { addr, connect_timeout: Duration::from_secs(2) }
    }
}

impl Connector for TcpConnector {
    fn connect(&mut self) -> Result<Box<dyn Transport>, TransportError> {
        Ok(Box::new(TcpTransport::connect(self.addr, self.connect_timeout)?))
    }
}
