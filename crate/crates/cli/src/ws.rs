use std::io::ErrorKind;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use tungstenite::{Message, WebSocket};

use flowguard::datapipe::write_dataset;
use flowguard::harness::DriveSession;

pub struct DriveServerConfig {
    pub tick_hz: f64,
    /// Session dataset is written here on every disconnect and at exit.
    pub record_out: Option<PathBuf>,
    /// Stop after this many simulated ticks.
    pub max_ticks: Option<u64>,
    pub stop: Arc<AtomicBool>,
}

enum Read {
    Idle,
    Closed,
}

fn drain(ws: &mut WebSocket<TcpStream>, session: &mut DriveSession, replies: &mut Vec<String>) -> Read {
    loop {
        match ws.read() {
            Ok(Message::Text(t)) => {
                for line in t.as_str().lines().map(str::trim).filter(|l| !l.is_empty()) {
                    if let Some(err) = session.handle_line(line) {
                        replies.push(err.to_line());
                    }
                }
            }
            Ok(Message::Close(_)) => return Read::Closed,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                return Read::Idle
            }
            Err(_) => return Read::Closed,
        }
    }
}

fn save(session: &DriveSession, cfg: &DriveServerConfig) -> Result<()> {
    if let Some(p) = &cfg.record_out {
        if !session.dataset().is_empty() {
            write_dataset(session.dataset(), p).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    Ok(())
}

fn accept(listener: &TcpListener) -> Option<WebSocket<TcpStream>> {
    let (stream, _) = listener.accept().ok()?;
    stream.set_nonblocking(false).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(2))).ok()?;
    let ws = tungstenite::accept(stream).ok()?;
    ws.get_ref().set_read_timeout(Some(Duration::from_millis(1))).ok()?;
    ws.get_ref().set_nodelay(true).ok()?;
    Some(ws)
}

/// Host `session` for one websocket client at a time. Every tick drains the
/// client's newline-delimited JSON, advances the simulation and sends the
/// resulting messages as one text frame. With no client the session is
/// paused. Returns the session when stopped.
pub fn run_drive_server(listener: TcpListener, mut session: DriveSession, cfg: &DriveServerConfig) -> Result<DriveSession> {
    listener.set_nonblocking(true)?;
    let period = Duration::from_secs_f64(1.0 / cfg.tick_hz.max(1e-3));
    let mut client: Option<WebSocket<TcpStream>> = None;
    let mut next = Instant::now();
    while !cfg.stop.load(Ordering::Relaxed) && cfg.max_ticks.map_or(true, |m| session.stats().ticks < m) {
        if client.is_none() {
            if let Some(mut ws) = accept(&listener) {
                if ws.send(Message::text(session.world_message().to_line() + "\n")).is_ok() {
                    session.set_connected(true);
                    client = Some(ws);
                }
            }
        }
        let mut closed = false;
        if let Some(ws) = client.as_mut() {
            let mut lines = Vec::new();
            closed = matches!(drain(ws, &mut session, &mut lines), Read::Closed);
            if !closed {
                if let Some(msgs) = session.tick() {
                    lines.extend(msgs.iter().map(|m| m.to_line()));
                }
                if !lines.is_empty() {
                    closed = ws.send(Message::text(lines.join("\n") + "\n")).is_err();
                }
            }
        }
        if closed {
            client = None;
            session.set_connected(false);
            save(&session, cfg)?;
        }
        next += period;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else {
            next = now;
        }
    }
    if let Some(mut ws) = client {
        let _ = ws.close(None);
        let _ = ws.flush();
    }
    save(&session, cfg)?;
    Ok(session)
}
