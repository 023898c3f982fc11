use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::agent::AgentRegistry;
use super::wire::Connection;
use super::PoetError;

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub export_dir: Option<PathBuf>,
}

/// Reads client frames line by line and writes one reply frame per line.
pub fn serve_lines<R: BufRead, W: Write>(reader: R, mut writer: W, mut conn: Connection) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = conn.handle_line(&line);
        let mut out = serde_json::to_string(&reply).expect("frames serialize");
        out.push('\n');
        writer.write_all(out.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

pub fn serve_stdio(registry: Arc<AgentRegistry>, options: ServeOptions) -> io::Result<()> {
    let conn = Connection::new(registry).with_export_dir(options.export_dir);
    serve_lines(io::stdin().lock(), io::stdout().lock(), conn)
}

pub struct ServerHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting connections; open connections finish on their own.
    pub fn shutdown(mut self) {
        self.stop_acceptor();
    }

    /// Blocks until the acceptor stops.
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    fn stop_acceptor(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_acceptor();
    }
}

fn handle_stream(stream: TcpStream, registry: Arc<AgentRegistry>, options: ServeOptions) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    let reader = BufReader::new(stream.try_clone()?);
    serve_lines(reader, stream, Connection::new(registry).with_export_dir(options.export_dir))
}

/// Binds `addr` and serves each connection on its own thread.
pub fn serve(
    addr: impl ToSocketAddrs,
    registry: Arc<AgentRegistry>,
    options: ServeOptions,
) -> Result<ServerHandle, PoetError> {
    let listener = TcpListener::bind(addr).map_err(|e| PoetError::Bind(e.to_string()))?;
    let local_addr = listener.local_addr().map_err(|e| PoetError::Bind(e.to_string()))?;
    listener.set_nonblocking(true).map_err(|e| PoetError::Bind(e.to_string()))?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let acceptor = thread::spawn(move || {
        while !flag.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let registry = registry.clone();
                    let options = options.clone();
                    thread::spawn(move || {
                        let _ = handle_stream(stream, registry, options);
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                Err(_) => thread::sleep(Duration::from_millis(5)),
            }
        }
    });
    Ok(ServerHandle { local_addr, stop, acceptor: Some(acceptor) })
}
