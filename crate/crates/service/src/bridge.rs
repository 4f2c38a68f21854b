//! WebSocket bridge for browser consoles. Each text message carries one
//! protocol body; the bridge adds and strips the length prefix and keeps
//! one service connection per client.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};
use tungstenite::{Error as WsError, Message as WsMessage};

use crate::protocol::{FrameDecoder, HEADER_BYTES, MAX_FRAME};

const POLL: Duration = Duration::from_millis(5);

/// Listens on `ws_addr` and relays each client to the service at `service`.
pub fn spawn_bridge(
    ws_addr: impl ToSocketAddrs,
    service: SocketAddr,
    shutdown: Arc<AtomicBool>,
) -> io::Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(ws_addr)?;
    let local = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let handle = thread::Builder::new().name("ws-bridge".into()).spawn(move || {
        while !shutdown.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    info!("console connected from {peer}");
                    let stop = Arc::clone(&shutdown);
                    let _ = thread::Builder::new().name(format!("ws-{peer}")).spawn(move || {
                        if let Err(e) = relay(stream, service, &stop) {
                            debug!("console {peer} closed: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(e) => warn!("ws accept failed: {e}"),
            }
        }
    })?;
    Ok((local, handle))
}

fn frame(body: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_BYTES + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body.as_bytes());
    out
}

fn relay(stream: TcpStream, service: SocketAddr, shutdown: &AtomicBool) -> Result<(), Box<dyn std::error::Error>> {
    stream.set_nonblocking(false)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| e.to_string())?;
    ws.get_mut().set_read_timeout(Some(POLL))?;
    let mut upstream = TcpStream::connect(service)?;
    upstream.set_nodelay(true)?;
    let mut rx_side = upstream.try_clone()?;
    let (tx, rx) = mpsc::channel::<String>();
    thread::spawn(move || {
        let mut dec = FrameDecoder::default();
        let mut buf = vec![0u8; 64 << 10];
        loop {
            let n = match rx_side.read(&mut buf) {
                Ok(0) | Err(_) => return,
                Ok(n) => n,
            };
            dec.push(&buf[..n]);
            loop {
                match dec.next_body() {
                    Ok(Some(body)) => {
                        if tx.send(body).is_err() {
                            return;
                        }
                    }
                    Ok(None) => break,
                    Err(_) => return,
                }
            }
        }
    });
    let result = loop {
        if shutdown.load(Ordering::SeqCst) {
            break Ok(());
        }
        match ws.read() {
            Ok(WsMessage::Text(t)) => {
                if t.len() > MAX_FRAME {
                    break Err("console frame too large".into());
                }
                upstream.write_all(&frame(t.as_str()))?;
            }
            Ok(WsMessage::Close(_)) => break Ok(()),
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(WsError::ConnectionClosed) | Err(WsError::AlreadyClosed) => break Ok(()),
            Err(e) => break Err(e.into()),
        }
        let mut dead = false;
        loop {
            match rx.try_recv() {
                Ok(body) => ws.send(WsMessage::text(body))?,
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => {
                    dead = true;
                    break;
                }
            }
        }
        if dead {
            let _ = ws.close(None);
            break Ok(());
        }
    };
    let _ = upstream.shutdown(std::net::Shutdown::Both);
    result
}
