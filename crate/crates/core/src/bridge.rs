//! WebSocket bridge for browser clients.
//!
//! Each text frame carries one JSON object shaped like [`ClientEvent`];
//! outgoing frames are [`Notification`]s or a state snapshot, all tagged by
//! `"type"`. Plain HTTP requests on the same port get static files from the
//! web root.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{unbounded, Receiver, Sender};
use log::{debug, warn};
use tungstenite::{Message, WebSocket};

use crate::osc::{ClientEvent, EndpointError, Notification};

const POLL: Duration = Duration::from_millis(50);
const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

/// Called for every decoded client event. The returned strings go back to
/// the sending client only.
pub type EventHandler = dyn Fn(ClientEvent) -> Vec<String> + Send + Sync;
/// Produces the JSON greeting for a new client.
pub type Greeting = dyn Fn() -> String + Send + Sync;

/// Fan-out to every connected WebSocket client. Cheap to clone; can be
/// created before the bridge that feeds it.
#[derive(Clone, Default)]
pub struct Broadcaster(Arc<Mutex<Vec<Sender<String>>>>);

impl Broadcaster {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(&self, n: &Notification) {
        self.send_json(serde_json::to_string(n).expect("notification serializes"));
    }

    pub fn send_json(&self, json: String) {
        let mut clients = self.0.lock().unwrap_or_else(|p| p.into_inner());
        clients.retain(|c| c.send(json.clone()).is_ok());
    }

    pub fn client_count(&self) -> usize {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    fn add(&self, tx: Sender<String>) {
        self.0.lock().unwrap_or_else(|p| p.into_inner()).push(tx);
    }
}

struct Shared {
    clients: Broadcaster,
    stop: AtomicBool,
    connections: AtomicU64,
    malformed: AtomicU64,
    web_root: Option<PathBuf>,
    on_event: Box<EventHandler>,
    greeting: Box<Greeting>,
}

pub struct Bridge {
    local: SocketAddr,
    shared: Arc<Shared>,
    thread: Option<JoinHandle<()>>,
}

impl Bridge {
    pub fn start(
        bind: impl ToSocketAddrs + std::fmt::Debug,
        web_root: Option<PathBuf>,
        clients: Broadcaster,
        greeting: Box<Greeting>,
        on_event: Box<EventHandler>,
    ) -> Result<Self, EndpointError> {
        let bind_err = |source| EndpointError::BindFailed {
            addr: format!("{bind:?}"),
            source,
        };
        let listener = TcpListener::bind(&bind).map_err(bind_err)?;
        listener.set_nonblocking(true).map_err(bind_err)?;
        let local = listener.local_addr().map_err(bind_err)?;
        let shared = Arc::new(Shared {
            clients,
            stop: AtomicBool::new(false),
            connections: AtomicU64::new(0),
            malformed: AtomicU64::new(0),
            web_root,
            on_event,
            greeting,
        });
        let s = shared.clone();
        let thread = std::thread::Builder::new()
            .name("ws-accept".into())
            .spawn(move || accept_loop(listener, s))
            .expect("spawn websocket acceptor");
        Ok(Self {
            local,
            shared,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local
    }

    pub fn connections(&self) -> u64 {
        self.shared.connections.load(Ordering::Relaxed)
    }

    /// Text frames that were not a valid client event.
    pub fn malformed(&self) -> u64 {
        self.shared.malformed.load(Ordering::Relaxed)
    }

    pub fn clients(&self) -> &Broadcaster {
        &self.shared.clients
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::Release);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Bridge {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut workers = Vec::new();
    while !shared.stop.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let s = shared.clone();
                let spawned = std::thread::Builder::new()
                    .name(format!("ws-{peer}"))
                    .spawn(move || {
                        if let Err(e) = serve_connection(stream, &s) {
                            debug!("connection {peer} ended: {e}");
                        }
                    });
                match spawned {
                    Ok(h) => workers.push(h),
                    Err(e) => warn!("cannot spawn client thread: {e}"),
                }
                workers.retain(|h: &JoinHandle<()>| !h.is_finished());
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(POLL / 2),
            Err(e) => debug!("accept failed: {e}"),
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn serve_connection(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(HANDSHAKE_TIMEOUT))?;
    let mut head = [0u8; 2048];
    let n = stream.peek(&mut head)?;
    let request = String::from_utf8_lossy(&head[..n]).to_ascii_lowercase();
    if request.contains("upgrade: websocket") {
        let ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
        ws.get_ref().set_read_timeout(Some(POLL))?;
        shared.connections.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = unbounded();
        tx.send((shared.greeting)()).ok();
        shared.clients.add(tx.clone());
        websocket_loop(ws, tx, rx, shared)
    } else {
        serve_static(stream, shared.web_root.as_deref())
    }
}

fn websocket_loop(
    mut ws: WebSocket<TcpStream>,
    own: Sender<String>,
    outgoing: Receiver<String>,
    shared: &Shared,
) -> io::Result<()> {
    let to_io = |e: tungstenite::Error| io::Error::other(e.to_string());
    let result = exchange(&mut ws, &own, &outgoing, shared);
    let _ = ws.close(None);
    let _ = ws.flush();
    result.map_err(to_io)
}

fn exchange(
    ws: &mut WebSocket<TcpStream>,
    own: &Sender<String>,
    outgoing: &Receiver<String>,
    shared: &Shared,
) -> tungstenite::Result<()> {
    while !shared.stop.load(Ordering::Acquire) {
        for json in outgoing.try_iter() {
            ws.send(Message::text(json))?;
        }
        match ws.read() {
            Ok(Message::Text(text)) => match serde_json::from_str::<ClientEvent>(text.as_str()) {
                Ok(ev) => {
                    for reply in (shared.on_event)(ev) {
                        own.send(reply).ok();
                    }
                }
                Err(e) => {
                    shared.malformed.fetch_add(1, Ordering::Relaxed);
                    let n = Notification::Error {
                        message: format!("bad message: {e}"),
                    };
                    own.send(serde_json::to_string(&n).expect("serializes")).ok();
                }
            },
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

/// Maps a request path onto a file under `root`, refusing anything that
/// climbs out of it.
fn resolve(root: &Path, url: &str) -> Option<PathBuf> {
    let path = url.split(['?', '#']).next().unwrap_or("/");
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let full = root.join(rel);
    let full = if full.is_dir() { full.join("index.html") } else { full };
    full.is_file().then_some(full)
}

fn serve_static(mut stream: TcpStream, root: Option<&Path>) -> io::Result<()> {
    let mut buf = [0u8; 4096];
    let n = stream.read(&mut buf)?;
    let req = String::from_utf8_lossy(&buf[..n]);
    let mut parts = req.split_whitespace();
    let (method, url) = (parts.next().unwrap_or(""), parts.next().unwrap_or("/"));
    let found = (method == "GET")
        .then(|| root.and_then(|r| resolve(r, url)))
        .flatten()
        .and_then(|p| std::fs::read(&p).ok().map(|body| (p, body)));
    match found {
        Some((p, body)) => {
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                content_type(&p),
                body.len()
            )?;
            stream.write_all(&body)?;
        }
        None => {
            let body = b"not found\n";
            write!(
                stream,
                "HTTP/1.1 404 Not Found\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                body.len()
            )?;
            stream.write_all(body)?;
        }
    }
    stream.flush()
}
