//! TCP transport for the console protocol.
//!
//! Every connection gets a reader thread (commands in, ack/error out) and a
//! telemetry thread fed by its own drop-oldest subscription. Neither touches
//! engine state directly; everything goes through the [`CommandHandle`].

use std::io::{self, BufReader};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::protocol::{decode_command, read_frame, write_message, Outbound};
use crate::session::CommandHandle;
use crate::telemetry::{TelemetryHub, DEFAULT_QUEUE_CAPACITY};

pub struct Server {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, commands: CommandHandle, hub: TelemetryHub) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shutdown = Arc::new(AtomicBool::new(false));
        let stop = Arc::clone(&shutdown);
        let accept = std::thread::Builder::new()
            .name("console-accept".into())
            .spawn(move || accept_loop(listener, commands, hub, stop))?;
        Ok(Self {
            addr,
            shutdown,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        if let Some(j) = self.accept.take() {
            let _ = j.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, commands: CommandHandle, hub: TelemetryHub, stop: Arc<AtomicBool>) {
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let commands = commands.clone();
                let hub = hub.clone();
                let stop = Arc::clone(&stop);
                let _ = std::thread::Builder::new()
                    .name("console-conn".into())
                    .spawn(move || {
                        let _ = serve_connection(stream, commands, hub, stop);
                    });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(_) => std::thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn serve_connection(
    stream: TcpStream,
    commands: CommandHandle,
    hub: TelemetryHub,
    stop: Arc<AtomicBool>,
) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let writer = Arc::new(Mutex::new(stream.try_clone()?));
    let closed = Arc::new(AtomicBool::new(false));

    {
        let status = commands.status();
        let mut w = writer.lock().unwrap_or_else(|e| e.into_inner());
        write_message(&mut *w, &Outbound::State { phase: status.phase })?;
    }

    let rx = hub.subscribe(DEFAULT_QUEUE_CAPACITY);
    let tele = {
        let writer = Arc::clone(&writer);
        let closed = Arc::clone(&closed);
        let stop = Arc::clone(&stop);
        let rx = rx.clone();
        std::thread::Builder::new()
            .name("console-telemetry".into())
            .spawn(move || {
                while !closed.load(Ordering::Relaxed) && !stop.load(Ordering::Relaxed) {
                    if let Some(msg) = rx.recv_timeout(Duration::from_millis(50)) {
                        let out: Outbound = msg.into();
                        let mut w = writer.lock().unwrap_or_else(|e| e.into_inner());
                        if write_message(&mut *w, &out).is_err() {
                            closed.store(true, Ordering::Relaxed);
                        }
                    }
                }
            })?
    };

    let mut reader = BufReader::new(stream);
    let result = loop {
        if stop.load(Ordering::Relaxed) {
            break Ok(());
        }
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => break Ok(()),
            Err(e) => break Err(e),
        };
        let reply = match decode_command(&frame) {
            Ok(cmd) => Outbound::reply(&commands.send(cmd)),
            Err(err) => err,
        };
        let mut w = writer.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = write_message(&mut *w, &reply) {
            break Err(e);
        }
    };
    closed.store(true, Ordering::Relaxed);
    rx.close();
    let _ = tele.join();
    if let Ok(w) = writer.lock() {
        let _ = w.shutdown(std::net::Shutdown::Both);
    }
    result
}
