//! WebSocket command endpoint for steering the driven synthetic source.
//!
//! Each text frame carries one JSON command and gets one JSON reply:
//!
//! ```text
//! -> {"cmd":"set_gesture","gesture":"power_grip"}
//! <- {"gesture":"power_grip","ok":true}
//! -> {"cmd":"set_gesture","gesture":"fist"}
//! <- {"error":"unknown gesture \"fist\"","ok":false}
//! ```

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Deserialize;
use tungstenite::Message;

use crate::frame::DriveHandle;
use crate::templates::GestureLabel;

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
enum Command {
    SetGesture { gesture: String },
}

/// Applies one command line to the drive handle and returns the reply text.
pub fn handle_command(text: &str, drive: &DriveHandle) -> String {
    let reply = match serde_json::from_str::<Command>(text) {
        Ok(Command::SetGesture { gesture }) => match gesture.parse::<GestureLabel>() {
            Ok(label) => {
                drive.set(label);
                serde_json::json!({"ok": true, "gesture": label.name()})
            }
            Err(e) => serde_json::json!({"ok": false, "error": e.to_string()}),
        },
        Err(e) => serde_json::json!({"ok": false, "error": format!("bad command: {e}")}),
    };
    reply.to_string()
}

pub struct CommandServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    threads: Arc<Mutex<Vec<JoinHandle<()>>>>,
}

impl CommandServer {
    pub fn start(addr: impl ToSocketAddrs, drive: DriveHandle) -> io::Result<Self> {
        let addrs: Vec<SocketAddr> = addr.to_socket_addrs()?.collect();
        let listener = TcpListener::bind(&addrs[..])?;
        listener.set_nonblocking(true)?;
        let server = Self {
            addr: listener.local_addr()?,
            shutdown: Arc::new(AtomicBool::new(false)),
            threads: Arc::new(Mutex::new(Vec::new())),
        };
        let shutdown = server.shutdown.clone();
        let threads = server.threads.clone();
        let acceptor = std::thread::spawn(move || {
            while !shutdown.load(Ordering::Acquire) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let drive = drive.clone();
                        let shutdown = shutdown.clone();
                        let h = std::thread::spawn(move || {
                            if let Err(e) = serve(stream, &drive, &shutdown) {
                                if std::env::var_os("SONOPIPE_DEBUG").is_some() {
                                    eprintln!("command client closed: {e}");
                                }
                            }
                        });
                        threads.lock().unwrap().push(h);
                    }
                    Err(_) => std::thread::sleep(POLL),
                }
            }
        });
        server.threads.lock().unwrap().push(acceptor);
        Ok(server)
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(&self) {
        self.shutdown.store(true, Ordering::Release);
        let handles: Vec<_> = self.threads.lock().unwrap().drain(..).collect();
        for h in handles {
            let _ = h.join();
        }
    }
}

impl Drop for CommandServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve(stream: TcpStream, drive: &DriveHandle, shutdown: &AtomicBool) -> Result<(), Box<tungstenite::Error>> {
    stream.set_nonblocking(false).map_err(io_boxed)?;
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .map_err(io_boxed)?;
    stream
        .set_write_timeout(Some(Duration::from_secs(1)))
        .map_err(io_boxed)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => Box::new(e),
        tungstenite::HandshakeError::Interrupted(_) => Box::new(tungstenite::Error::ConnectionClosed),
    })?;
    ws.get_ref().set_read_timeout(Some(POLL)).map_err(io_boxed)?;
    loop {
        if shutdown.load(Ordering::Acquire) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                ws.send(Message::text(handle_command(text.as_str(), drive)))
                    .map_err(Box::new)?;
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Err(e) => return Err(Box::new(e)),
        }
    }
}

fn io_boxed(e: io::Error) -> Box<tungstenite::Error> {
    Box::new(tungstenite::Error::Io(e))
}
