//! Fan-out server: one publisher, any number of subscribers over plain TCP
//! (NDJSON) or WebSocket (one text frame per line). Every subscriber owns a
//! drop-oldest queue, so a stalled reader costs the publisher one push.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use tungstenite::Message;

use super::{decode_message, encode_message, PoseMessage, WireError};
use crate::queue::{DropOldestQueue, Pop};

type Line = Arc<[u8]>;

const POLL: Duration = Duration::from_millis(20);
/// A peer that accepts nothing for this long is disconnected.
const WRITE_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Plain NDJSON listener; `None` disables it.
    pub tcp_addr: Option<String>,
    /// WebSocket listener; `None` disables it.
    pub ws_addr: Option<String>,
    /// Per-subscriber queue capacity.
    pub queue_capacity: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            tcp_addr: Some("0.0.0.0:7071".into()),
            ws_addr: Some("0.0.0.0:7072".into()),
            queue_capacity: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct ServerStats {
    pub published: u64,
    pub subscribers: usize,
    /// Messages evicted from subscriber queues, including closed subscriptions.
    pub dropped: u64,
}

struct SubscriberSlot {
    queue: DropOldestQueue<Line>,
}

#[derive(Default)]
struct Hub {
    subscribers: Mutex<Vec<Arc<SubscriberSlot>>>,
    published: AtomicU64,
    retired_drops: AtomicU64,
}

impl Hub {
    fn register(&self, capacity: usize) -> Arc<SubscriberSlot> {
        let slot = Arc::new(SubscriberSlot {
            queue: DropOldestQueue::new(capacity),
        });
        self.subscribers.lock().unwrap().push(slot.clone());
        slot
    }

    fn publish(&self, line: Line) {
        let mut subs = self.subscribers.lock().unwrap();
        subs.retain(|s| {
            if s.queue.is_closed() {
                self.retired_drops.fetch_add(s.queue.dropped(), Ordering::Relaxed);
                false
            } else {
                true
            }
        });
        for s in subs.iter() {
            s.queue.push(line.clone());
        }
        self.published.fetch_add(1, Ordering::Relaxed);
    }

    fn stats(&self) -> ServerStats {
        let subs = self.subscribers.lock().unwrap();
        ServerStats {
            published: self.published.load(Ordering::Relaxed),
            subscribers: subs.iter().filter(|s| !s.queue.is_closed()).count(),
            dropped: self.retired_drops.load(Ordering::Relaxed) + subs.iter().map(|s| s.queue.dropped()).sum::<u64>(),
        }
    }

    fn close_all(&self) {
        for s in self.subscribers.lock().unwrap().iter() {
            s.queue.close();
        }
    }
}

/// In-process subscriber with the same queueing semantics as a socket client.
pub struct Subscription {
    slot: Arc<SubscriberSlot>,
}

impl Subscription {
    /// Next raw line, or `None` on timeout or after the server stops.
    pub fn recv_line(&self, timeout: Duration) -> Option<Line> {
        match self.slot.queue.pop_timeout(timeout) {
            Pop::Item(l) => Some(l),
            _ => None,
        }
    }

    pub fn recv(&self, timeout: Duration) -> Option<Result<PoseMessage, WireError>> {
        self.recv_line(timeout).map(|l| decode_message(&l))
    }

    pub fn try_recv_line(&self) -> Option<Line> {
        self.slot.queue.try_pop()
    }

    pub fn dropped(&self) -> u64 {
        self.slot.queue.dropped()
    }

    pub fn pending(&self) -> usize {
        self.slot.queue.len()
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.slot.queue.close();
    }
}

pub struct StreamServer {
    hub: Arc<Hub>,
    capacity: usize,
    shutdown: Arc<AtomicBool>,
    threads: Arc<Mutex<Vec<JoinHandle<()>>>>,
    tcp_addr: Option<SocketAddr>,
    ws_addr: Option<SocketAddr>,
}

fn bind(addr: &str) -> io::Result<TcpListener> {
    let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
    let listener = TcpListener::bind(&addrs[..])?;
    listener.set_nonblocking(true)?;
    Ok(listener)
}

impl StreamServer {
    pub fn start(config: ServerConfig) -> io::Result<Self> {
        let tcp = config.tcp_addr.as_deref().map(bind).transpose()?;
        let ws = config.ws_addr.as_deref().map(bind).transpose()?;
        let server = Self {
            hub: Arc::new(Hub::default()),
            capacity: config.queue_capacity.max(1),
            shutdown: Arc::new(AtomicBool::new(false)),
            threads: Arc::new(Mutex::new(Vec::new())),
            tcp_addr: tcp.as_ref().map(|l| l.local_addr()).transpose()?,
            ws_addr: ws.as_ref().map(|l| l.local_addr()).transpose()?,
        };
        if let Some(l) = tcp {
            server.spawn_acceptor(l, false);
        }
        if let Some(l) = ws {
            server.spawn_acceptor(l, true);
        }
        Ok(server)
    }

    /// A server with no listeners; only in-process subscriptions.
    pub fn local() -> Self {
        Self::start(ServerConfig {
            tcp_addr: None,
            ws_addr: None,
            queue_capacity: 64,
        })
        .expect("no sockets to bind")
    }

    pub fn tcp_addr(&self) -> Option<SocketAddr> {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> Option<SocketAddr> {
        self.ws_addr
    }

    pub fn subscribe_local(&self, capacity: usize) -> Subscription {
        Subscription {
            slot: self.hub.register(capacity.max(1)),
        }
    }

    /// Encodes once and enqueues for every live subscriber. Never waits on a reader.
    pub fn publish(&self, message: &PoseMessage) -> Result<(), WireError> {
        let line: Line = encode_message(message)?.into();
        self.publish_line(line);
        Ok(())
    }

    pub fn publish_line(&self, line: Line) {
        if !self.shutdown.load(Ordering::Acquire) {
            self.hub.publish(line);
        }
    }

    pub fn stats(&self) -> ServerStats {
        self.hub.stats()
    }

    /// Idempotent; closes every subscription and joins the server threads.
    pub fn stop(&self) {
        self.shutdown.store(true, Ordering::Release);
        self.hub.close_all();
        let handles: Vec<JoinHandle<()>> = self.threads.lock().unwrap().drain(..).collect();
        for h in handles {
            let _ = h.join();
        }
        // Connections accepted while stopping.
        self.hub.close_all();
    }

    fn spawn_acceptor(&self, listener: TcpListener, websocket: bool) {
        let hub = self.hub.clone();
        let shutdown = self.shutdown.clone();
        let threads = self.threads.clone();
        let capacity = self.capacity;
        let handle = std::thread::spawn(move || {
            while !shutdown.load(Ordering::Acquire) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let slot = hub.register(capacity);
                        let shutdown = shutdown.clone();
                        let writer = std::thread::spawn(move || {
                            let result = if websocket {
                                serve_websocket(stream, &slot, &shutdown)
                            } else {
                                serve_tcp(stream, &slot)
                            };
                            if let Err(e) = result {
                                log_disconnect(&e);
                            }
                            slot.queue.close();
                        });
                        threads.lock().unwrap().push(writer);
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(POLL),
                    Err(_) => std::thread::sleep(POLL),
                }
            }
        });
        self.threads.lock().unwrap().push(handle);
    }
}

impl Drop for StreamServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn log_disconnect(e: &WireError) {
    if std::env::var_os("SONOPIPE_DEBUG").is_some() {
        eprintln!("subscriber closed: {e}");
    }
}

fn serve_tcp(stream: TcpStream, slot: &SubscriberSlot) -> Result<(), WireError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true).ok();
    stream.set_write_timeout(Some(WRITE_TIMEOUT))?;
    let mut out = stream;
    while let Some(line) = slot.queue.pop() {
        out.write_all(&line)?;
    }
    Ok(())
}

fn serve_websocket(stream: TcpStream, slot: &SubscriberSlot, shutdown: &AtomicBool) -> Result<(), WireError> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    stream.set_write_timeout(Some(WRITE_TIMEOUT))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| WireError::WebSocket(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(1)))?;
    loop {
        if shutdown.load(Ordering::Acquire) && slot.queue.is_empty() {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        match slot.queue.pop_timeout(POLL) {
            Pop::Item(line) => {
                let text = String::from_utf8_lossy(&line).into_owned();
                ws.send(Message::text(text)).map_err(ws_err)?;
            }
            Pop::Closed => {
                let _ = ws.close(None);
                let _ = ws.flush();
                return Ok(());
            }
            Pop::Timeout => {}
        }
        // Service pings and close frames from the peer.
        match ws.read() {
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(e) => return Err(ws_err(e)),
        }
    }
}

fn ws_err(e: tungstenite::Error) -> WireError {
    WireError::WebSocket(e.to_string())
}

/// Blocking NDJSON client for the plain TCP endpoint.
pub struct NdjsonSubscriber {
    reader: BufReader<TcpStream>,
}

impl NdjsonSubscriber {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        Ok(Self {
            reader: BufReader::new(stream),
        })
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.reader.get_ref().set_read_timeout(timeout)
    }

    /// Next raw line including its LF; `None` at end of stream.
    pub fn next_line(&mut self) -> io::Result<Option<Vec<u8>>> {
        let mut buf = Vec::new();
        match self.reader.read_until(b'\n', &mut buf)? {
            0 => Ok(None),
            _ => Ok(Some(buf)),
        }
    }

    pub fn next_message(&mut self) -> Result<Option<PoseMessage>, WireError> {
        match self.next_line()? {
            Some(line) => decode_message(&line).map(Some),
            None => Ok(None),
        }
    }
}
