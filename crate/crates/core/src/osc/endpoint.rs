use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use log::{debug, warn};
use thiserror::Error;

use super::codec::{decode_packet, encode_message, OscMessage};

pub const DEFAULT_LISTEN_PORT: u16 = 9000;
pub const DEFAULT_NOTIFY_PORT: u16 = 9001;

const MAX_DATAGRAM: usize = 65_536;
const POLL: Duration = Duration::from_millis(25);

#[derive(Debug, Error)]
pub enum EndpointError {
    #[error("cannot bind {addr}: {source}")]
    BindFailed { addr: String, source: io::Error },
}

#[derive(Debug, Default)]
struct Counters {
    datagrams: AtomicU64,
    messages: AtomicU64,
    malformed: AtomicU64,
}

/// A running receive loop. Dropping it stops the loop as well.
pub struct Endpoint {
    local: SocketAddr,
    stop: Arc<AtomicBool>,
    counters: Arc<Counters>,
    thread: Option<JoinHandle<()>>,
}

impl Endpoint {
    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn malformed(&self) -> u64 {
        self.counters.malformed.load(Ordering::Relaxed)
    }

    pub fn datagrams(&self) -> u64 {
        self.counters.datagrams.load(Ordering::Relaxed)
    }

    pub fn messages(&self) -> u64 {
        self.counters.messages.load(Ordering::Relaxed)
    }

    /// Stops receiving and releases the socket.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Binds `bind` and hands every decoded message, in arrival order, to
/// `dispatch` on the receive thread. Malformed datagrams are counted and
/// dropped.
pub fn run_endpoint<F>(bind: impl ToSocketAddrs + std::fmt::Debug, mut dispatch: F) -> Result<Endpoint, EndpointError>
where
    F: FnMut(OscMessage, SocketAddr) + Send + 'static,
{
    let bind_err = |source| EndpointError::BindFailed {
        addr: format!("{bind:?}"),
        source,
    };
    let socket = UdpSocket::bind(&bind).map_err(bind_err)?;
    socket.set_read_timeout(Some(POLL)).map_err(bind_err)?;
    let local = socket.local_addr().map_err(bind_err)?;
    let stop = Arc::new(AtomicBool::new(false));
    let counters = Arc::new(Counters::default());
    let (s, c) = (stop.clone(), counters.clone());
    let thread = std::thread::Builder::new()
        .name("osc-rx".into())
        .spawn(move || {
            let mut buf = vec![0u8; MAX_DATAGRAM];
            while !s.load(Ordering::Acquire) {
                let (n, from) = match socket.recv_from(&mut buf) {
                    Ok(x) => x,
                    Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
                    Err(e) => {
                        debug!("osc receive error: {e}");
                        continue;
                    }
                };
                c.datagrams.fetch_add(1, Ordering::Relaxed);
                match decode_packet(&buf[..n]) {
                    Ok(msgs) => {
                        for m in msgs {
                            c.messages.fetch_add(1, Ordering::Relaxed);
                            dispatch(m, from);
                        }
                    }
                    Err(e) => {
                        c.malformed.fetch_add(1, Ordering::Relaxed);
                        debug!("dropping malformed datagram from {from}: {e}");
                    }
                }
            }
        })
        .expect("spawn osc receiver");
    Ok(Endpoint {
        local,
        stop,
        counters,
        thread: Some(thread),
    })
}

/// Sends notifications to a fixed set of UDP targets.
pub struct Notifier {
    socket: UdpSocket,
    targets: Vec<SocketAddr>,
}

impl Notifier {
    pub fn new(targets: Vec<SocketAddr>) -> io::Result<Self> {
        let any: SocketAddr = if targets.iter().any(SocketAddr::is_ipv6) {
            "[::]:0".parse().expect("literal")
        } else {
            "0.0.0.0:0".parse().expect("literal")
        };
        Ok(Self {
            socket: UdpSocket::bind(any)?,
            targets,
        })
    }

    pub fn send(&self, msg: &OscMessage) {
        let Ok(bytes) = encode_message(msg) else {
            warn!("not sending unencodable message {msg}");
            return;
        };
        for t in &self.targets {
            if let Err(e) = self.socket.send_to(&bytes, t) {
                debug!("notification to {t} failed: {e}");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::osc::codec::OscArg;
    use std::sync::mpsc;
    use std::time::Instant;

    fn wait_for(mut f: impl FnMut() -> bool) -> bool {
        let deadline = Instant::now() + Duration::from_secs(5);
        while Instant::now() < deadline {
            if f() {
                return true;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        false
    }

    #[test]
    fn garbage_is_counted_and_valid_messages_dispatch() {
        let (tx, rx) = mpsc::channel();
        let ep = run_endpoint("127.0.0.1:0", move |m, _| tx.send(m).unwrap()).unwrap();
        let client = UdpSocket::bind("127.0.0.1:0").unwrap();
        for junk in [&b"xx"[..], b"\0\0\0\0", b"/a\0\0,q\0\0", b"#bundle\0\0\0\0\0\0\0\0\x01\0\0\0\x05"] {
            client.send_to(junk, ep.local_addr()).unwrap();
        }
        let ok = OscMessage::new("/seat", vec![OscArg::Str("A1".into())]);
        client.send_to(&encode_message(&ok).unwrap(), ep.local_addr()).unwrap();
        assert_eq!(rx.recv_timeout(Duration::from_secs(5)).unwrap(), ok);
        assert!(wait_for(|| ep.malformed() == 4));
        let addr = ep.local_addr();
        ep.stop();
        // the port is free again
        UdpSocket::bind(addr).unwrap();
    }

    #[test]
    fn bind_failure_is_reported() {
        let held = UdpSocket::bind("127.0.0.1:0").unwrap();
        let r = run_endpoint(held.local_addr().unwrap(), |_, _| {});
        assert!(matches!(r, Err(EndpointError::BindFailed { .. })));
    }
}
