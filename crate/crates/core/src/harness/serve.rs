use std::collections::HashMap;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::avoidproxy::{Mailbox, Model, ParsedFrame, ProxyModel};
use crate::datapipe::{frame_input, DEFAULT_FLOW_SCALE};
use crate::error::{Error, Result};
use crate::flowcore::MaskSpec;
use crate::linkproto::{decode_datagram, encode_datagram, DatagramKind, SteerCommand, MAX_PAYLOAD};
use crate::mvcodec::{parse_mv_frame, serialize_mv_frame, GridSpec, MotionVectorFrame};

const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub grid: GridSpec,
    pub mask: MaskSpec,
    pub flow_scale: f64,
    /// Operator steer assumed for "no correction" replies.
    pub desired_steer: f64,
    pub stop: Arc<AtomicBool>,
}

impl ServeConfig {
    pub fn new(grid: GridSpec, mask: MaskSpec) -> Self {
        Self { grid, mask, flow_scale: DEFAULT_FLOW_SCALE, desired_steer: 0.5, stop: Arc::new(AtomicBool::new(false)) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServeStats {
    pub datagrams: u64,
    pub malformed: u64,
    pub duplicates: u64,
    pub superseded: u64,
    pub inferred: u64,
    pub replies: u64,
    pub heartbeats: u64,
}

struct Job {
    peer: SocketAddr,
    seq: u32,
    payload: Vec<u8>,
}

/// Answer FGRI flow frames with steer commands echoing their seq. One
/// inference at a time; under backlog the newest frame wins; a seq at or
/// below the last one seen from the same peer is dropped. Runs until
/// `cfg.stop` is set.
pub fn serve_inference(socket: UdpSocket, mut model: ProxyModel, cfg: ServeConfig) -> Result<ServeStats> {
    socket.set_read_timeout(Some(POLL))?;
    let reply = socket.try_clone()?;
    let stats = Mutex::new(ServeStats::default());
    let jobs: Mailbox<Job> = Mailbox::new();
    let bump = |f: fn(&mut ServeStats)| f(&mut stats.lock().unwrap());
    let mut io_error: Option<Error> = None;

    std::thread::scope(|s| {
        s.spawn(|| {
            while let Ok(job) = jobs.take_timeout(POLL) {
                let Some(job) = job else { continue };
                let parsed = parse_mv_frame(&job.payload, cfg.grid).and_then(|f| frame_input(&f, &cfg.mask, cfg.flow_scale));
                let input = match parsed {
                    Ok(i) => i,
                    Err(_) => {
                        bump(|s| s.malformed += 1);
                        continue;
                    }
                };
                let frame = ParsedFrame { seq: job.seq, desired_steer: cfg.desired_steer, input };
                let Ok(d) = model.decide(&frame) else { continue };
                bump(|s| s.inferred += 1);
                let cmd = SteerCommand::new(job.seq, d.final_steer, d.klass);
                if reply.send_to(&cmd.to_datagram(job.seq), job.peer).is_ok() {
                    bump(|s| s.replies += 1);
                }
            }
        });

        let mut last_seq: HashMap<SocketAddr, u32> = HashMap::new();
        let mut buf = vec![0u8; MAX_PAYLOAD + 64];
        while !cfg.stop.load(Ordering::Relaxed) {
            let (n, peer) = match socket.recv_from(&mut buf) {
                Ok(x) => x,
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => continue,
                Err(e) => {
                    io_error = Some(e.into());
                    break;
                }
            };
            bump(|s| s.datagrams += 1);
            let d = match decode_datagram(&buf[..n]) {
                Ok(d) => d,
                Err(_) => {
                    bump(|s| s.malformed += 1);
                    continue;
                }
            };
            match d.kind {
                DatagramKind::Heartbeat => {
                    bump(|s| s.heartbeats += 1);
                    let _ = socket.send_to(&buf[..n], peer);
                }
                DatagramKind::SteerCommand => bump(|s| s.malformed += 1),
                DatagramKind::FlowFrame => {
                    if d.payload.len() != cfg.grid.payload_len() {
                        bump(|s| s.malformed += 1);
                        continue;
                    }
                    if last_seq.get(&peer).is_some_and(|&l| d.seq <= l) {
                        bump(|s| s.duplicates += 1);
                        continue;
                    }
                    last_seq.insert(peer, d.seq);
                    if jobs.put(Job { peer, seq: d.seq, payload: d.payload }) {
                        bump(|s| s.superseded += 1);
                    }
                }
            }
        }
        jobs.close();
    });
    match io_error {
        Some(e) => Err(e),
        None => Ok(stats.into_inner().unwrap()),
    }
}

/// Vehicle-side end of the remote inference link.
pub struct InferenceClient {
    socket: UdpSocket,
    peer: SocketAddr,
    next_seq: u32,
}

impl InferenceClient {
    pub fn connect(server: impl ToSocketAddrs) -> Result<Self> {
        let peer = server
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| Error::InvalidArgument("server address resolves to nothing".into()))?;
        let bind = if peer.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
        let socket = UdpSocket::bind(bind)?;
        Ok(Self { socket, peer, next_seq: 1 })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.socket.local_addr()?)
    }

    /// Send a flow frame under a fresh seq; returns that seq.
    pub fn send_frame(&mut self, frame: &MotionVectorFrame) -> Result<u32> {
        let seq = self.next_seq;
        self.send_raw(&encode_datagram(DatagramKind::FlowFrame, seq, &serialize_mv_frame(frame))?)?;
        self.next_seq = self.next_seq.wrapping_add(1);
        Ok(seq)
    }

    pub fn send_raw(&self, bytes: &[u8]) -> Result<()> {
        self.socket.send_to(bytes, self.peer)?;
        Ok(())
    }

    /// Next steer command, or `None` on timeout. Other datagrams are skipped.
    pub fn recv_command(&self, timeout: Duration) -> Result<Option<(u32, SteerCommand)>> {
        let deadline = std::time::Instant::now() + timeout;
        let mut buf = [0u8; 256];
        loop {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            self.socket.set_read_timeout(Some(left))?;
            match self.socket.recv_from(&mut buf) {
                Ok((n, _)) => {
                    if let Ok(d) = decode_datagram(&buf[..n]) {
                        if d.kind == DatagramKind::SteerCommand {
                            return Ok(Some((d.seq, SteerCommand::decode(&d.payload)?)));
                        }
                    }
                }
                Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => return Ok(None),
                Err(e) => return Err(e.into()),
            }
        }
    }

    /// Send one frame and wait for its answer.
    pub fn infer(&mut self, frame: &MotionVectorFrame, timeout: Duration) -> Result<Option<SteerCommand>> {
        let seq = self.send_frame(frame)?;
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            match self.recv_command(left)? {
                Some((_, cmd)) if cmd.echo_seq == seq => return Ok(Some(cmd)),
                Some(_) => continue,
                None => return Ok(None),
            }
        }
    }
}
