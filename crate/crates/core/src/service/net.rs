//! TCP front end for the offload protocol.

use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpListener, TcpStream};

use super::{admin, Connection, Service};
use crate::protocol::{encode_frame, FrameReader, Message};

async fn write(wr: &mut OwnedWriteHalf, msg: &Message) -> io::Result<()> {
    let bytes = encode_frame(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    wr.write_all(&bytes).await
}

async fn handle_socket(sock: TcpStream, service: Arc<Service>) -> io::Result<()> {
    sock.set_nodelay(true)?;
    let (mut rd, mut wr) = sock.into_split();
    let mut conn = Connection::new(Arc::clone(&service));
    let mut policy_rx = service.subscribe_policy();
    let mut reader = FrameReader::new();
    let mut buf = vec![0u8; 64 * 1024];

    loop {
        tokio::select! {
            n = rd.read(&mut buf) => {
                let n = n?;
                if n == 0 {
                    return Ok(());
                }
                reader.extend(&buf[..n]);
                loop {
                    match reader.next_message() {
                        Ok(Some(msg)) => {
                            for reply in conn.handle(msg) {
                                write(&mut wr, &reply).await?;
                            }
                            if conn.is_closed() {
                                return Ok(());
                            }
                        }
                        Ok(None) => break,
                        Err(e) => {
                            if let Some(reply) = conn.on_decode_error(&e) {
                                write(&mut wr, &reply).await?;
                            }
                            return wr.shutdown().await;
                        }
                    }
                }
            }
            changed = policy_rx.changed() => {
                if changed.is_err() {
                    return Ok(());
                }
                if let Some(push) = conn.push() {
                    write(&mut wr, &push).await?;
                }
            }
        }
    }
}

/// Accept device connections until the listener fails.
pub async fn serve_protocol(listener: TcpListener, service: Arc<Service>) -> io::Result<()> {
    let reaper = Arc::clone(&service);
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(1));
        loop {
            tick.tick().await;
            reaper.reap_expired();
        }
    });
    loop {
        let (sock, peer) = listener.accept().await?;
        let service = Arc::clone(&service);
        tokio::spawn(async move {
            if let Err(e) = handle_socket(sock, service).await {
                tracing::debug!("connection {peer}: {e}");
            }
        });
    }
}

/// Addresses of a running server.
#[derive(Debug, Clone, Copy)]
pub struct Bound {
    pub protocol: SocketAddr,
    pub admin: SocketAddr,
}

/// Bind both listeners and serve them on the current runtime.
pub async fn start(
    service: Arc<Service>,
    listen: SocketAddr,
    admin_addr: SocketAddr,
    ui_dir: Option<PathBuf>,
) -> io::Result<(Bound, tokio::task::JoinHandle<io::Result<()>>)> {
    let proto = TcpListener::bind(listen).await?;
    let admin_listener = TcpListener::bind(admin_addr).await?;
    let bound = Bound { protocol: proto.local_addr()?, admin: admin_listener.local_addr()? };
    let router = admin::router(Arc::clone(&service), ui_dir);
    let handle = tokio::spawn(async move {
        tokio::select! {
            r = serve_protocol(proto, service) => r,
            r = async { axum::serve(admin_listener, router).await } => r,
        }
    });
    Ok((bound, handle))
}
