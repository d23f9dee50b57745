//! Newline-delimited JSON over TCP, one thread per connection.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::protocol::{Request, Response};
use crate::service::Service;

pub struct Server {
    listener: TcpListener,
    service: Arc<Service>,
    stop: Arc<AtomicBool>,
    tick_interval: Option<Duration>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, service: Arc<Service>) -> std::io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            service,
            stop: Arc::new(AtomicBool::new(false)),
            tick_interval: None,
        })
    }

    /// Runs a consolidation tick over all namespaces every `interval`.
    pub fn with_tick_interval(mut self, interval: Option<Duration>) -> Self {
        self.tick_interval = interval.filter(|d| !d.is_zero());
        self
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until stopped.
    pub fn run(self) -> std::io::Result<()> {
        let ticker = self.tick_interval.map(|every| {
            let service = self.service.clone();
            let stop = self.stop.clone();
            std::thread::spawn(move || {
                let step = Duration::from_millis(50).min(every);
                let mut waited = Duration::ZERO;
                while !stop.load(Ordering::SeqCst) {
                    std::thread::sleep(step);
                    waited += step;
                    if waited >= every {
                        waited = Duration::ZERO;
                        if let Err(e) = service.tick_all(None) {
                            log::warn!("scheduled tick failed: {e}");
                        }
                    }
                }
            })
        });
        for conn in self.listener.incoming() {
            if self.stop.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let service = self.service.clone();
                    std::thread::spawn(move || {
                        let peer = stream.peer_addr().ok();
                        if let Err(e) = serve_connection(&service, stream) {
                            log::debug!("connection {peer:?} closed: {e}");
                        }
                    });
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        if let Some(t) = ticker {
            let _ = t.join();
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> std::io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = self.stop.clone();
        let thread = std::thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }
}

fn serve_connection(service: &Service, stream: TcpStream) -> std::io::Result<()> {
    let reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let out = service.handle_line(&line);
        writer.write_all(out.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

/// Stops the server when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> std::io::Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

/// Blocking client holding one connection.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> std::io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
        })
    }

    /// Sends one raw line and returns the raw response line.
    pub fn call_raw(&mut self, line: &str) -> std::io::Result<String> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        let mut out = String::new();
        if self.reader.read_line(&mut out)? == 0 {
            return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed the connection"));
        }
        Ok(out.trim_end().to_owned())
    }

    pub fn call(&mut self, req: &Request) -> std::io::Result<Response> {
        let line = serde_json::to_string(req)?;
        let out = self.call_raw(&line)?;
        Ok(serde_json::from_str(&out)?)
    }
}
