//! Wire protocols.
//!
//! Remote inference datagrams (`FGRI`), little-endian:
//! ```text
//! "FGRI" | u8 version | u8 kind | u32 seq | payload
//! kind 0 flow frame:    FGMV payload (no framing header)
//! kind 1 steer command: u32 echo_seq | u16 steer (0..=10000) | u8 klass
//! kind 2 heartbeat:     empty
//! ```
//! Controller link frames: `0xA5 | type | len | payload | crc8`, CRC-8 with
//! polynomial 0x07 and init 0 over type, len and payload. This message set is
//! our own stand-in for a small microcontroller UART protocol.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::{Class, STEER_SCALE};
use crate::error::{Error, Result};

pub const DATAGRAM_MAGIC: &[u8; 4] = b"FGRI";
pub const DATAGRAM_VERSION: u8 = 1;
pub const DATAGRAM_HEADER_BYTES: usize = 10;
pub const MAX_PAYLOAD: usize = 60 * 1024;
pub const STEER_PAYLOAD_BYTES: usize = 7;
pub const DEFAULT_FAILSAFE_AFTER_US: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatagramKind {
    FlowFrame = 0,
    SteerCommand = 1,
    Heartbeat = 2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteDatagram {
    pub kind: DatagramKind,
    pub seq: u32,
    pub payload: Vec<u8>,
}

fn proto(msg: impl Into<String>) -> Error {
    Error::Protocol(msg.into())
}

pub fn encode_datagram(kind: DatagramKind, seq: u32, payload: &[u8]) -> Result<Vec<u8>> {
    if payload.len() > MAX_PAYLOAD {
        return Err(proto(format!("payload of {} bytes exceeds {MAX_PAYLOAD}", payload.len())));
    }
    let mut out = Vec::with_capacity(DATAGRAM_HEADER_BYTES + payload.len());
    out.extend_from_slice(DATAGRAM_MAGIC);
    out.push(DATAGRAM_VERSION);
    out.push(kind as u8);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn decode_datagram(bytes: &[u8]) -> Result<RemoteDatagram> {
    if bytes.len() < DATAGRAM_HEADER_BYTES {
        return Err(proto(format!("datagram of {} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != DATAGRAM_MAGIC {
        return Err(proto("bad datagram magic"));
    }
    if bytes[4] != DATAGRAM_VERSION {
        return Err(proto(format!("unsupported datagram version {}", bytes[4])));
    }
    let kind = match bytes[5] {
        0 => DatagramKind::FlowFrame,
        1 => DatagramKind::SteerCommand,
        2 => DatagramKind::Heartbeat,
        k => return Err(proto(format!("unknown datagram kind {k}"))),
    };
    let payload = &bytes[DATAGRAM_HEADER_BYTES..];
    match kind {
        DatagramKind::SteerCommand if payload.len() != STEER_PAYLOAD_BYTES => {
            return Err(proto(format!("steer command payload is {} bytes", payload.len())))
        }
        DatagramKind::Heartbeat if !payload.is_empty() => return Err(proto("heartbeat carries a payload")),
        _ if payload.len() > MAX_PAYLOAD => return Err(proto("payload too large")),
        _ => {}
    }
    Ok(RemoteDatagram {
        kind,
        seq: u32::from_le_bytes(bytes[6..10].try_into().unwrap()),
        payload: payload.to_vec(),
    })
}

/// Payload of a steer-command datagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SteerCommand {
    /// Seq of the flow frame this answers.
    pub echo_seq: u32,
    /// Fixed point, 0..=10000.
    pub steer: u16,
    pub klass: Class,
}

impl SteerCommand {
    pub fn new(echo_seq: u32, steer: f64, klass: Class) -> Self {
        Self { echo_seq, steer: (steer.clamp(0.0, 1.0) * STEER_SCALE).round() as u16, klass }
    }

    pub fn steer_f64(&self) -> f64 {
        f64::from(self.steer) / STEER_SCALE
    }

    pub fn encode(&self) -> [u8; STEER_PAYLOAD_BYTES] {
        let mut b = [0u8; STEER_PAYLOAD_BYTES];
        b[..4].copy_from_slice(&self.echo_seq.to_le_bytes());
        b[4..6].copy_from_slice(&self.steer.to_le_bytes());
        b[6] = self.klass as u8;
        b
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        if payload.len() != STEER_PAYLOAD_BYTES {
            return Err(proto(format!("steer command payload is {} bytes", payload.len())));
        }
        let steer = u16::from_le_bytes([payload[4], payload[5]]);
        if f64::from(steer) > STEER_SCALE {
            return Err(proto(format!("steer {steer} above {STEER_SCALE}")));
        }
        let klass = Class::from_index(payload[6] as usize).ok_or_else(|| proto(format!("bad class {}", payload[6])))?;
        Ok(Self { echo_seq: u32::from_le_bytes(payload[..4].try_into().unwrap()), steer, klass })
    }

    pub fn to_datagram(&self, seq: u32) -> Vec<u8> {
        encode_datagram(DatagramKind::SteerCommand, seq, &self.encode()).expect("fixed-size payload")
    }
}

/// A steer command accepted by the link, with its datagram seq.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AppliedCommand {
    pub seq: u32,
    pub command: SteerCommand,
    pub received_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkState {
    pub last_applied: Option<AppliedCommand>,
    pub failsafe_after_us: u64,
}

impl Default for LinkState {
    fn default() -> Self {
        Self { last_applied: None, failsafe_after_us: DEFAULT_FAILSAFE_AFTER_US }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    Applied(AppliedCommand),
    /// seq not newer than the last applied one (duplicate, stale or reordered).
    Rejected { seq: u32, last_applied_seq: u32 },
}

/// What the vehicle should do right now.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveCommand {
    pub steer: f64,
    /// When true the speed setpoint is forced to zero.
    pub stop: bool,
    pub failsafe: bool,
}

impl LinkState {
    pub fn new(failsafe_after_us: u64) -> Result<Self> {
        if failsafe_after_us == 0 {
            return Err(crate::error::invalid("failsafe_after_us must be > 0"));
        }
        Ok(Self { last_applied: None, failsafe_after_us })
    }

    pub fn last_applied_seq(&self) -> Option<u32> {
        self.last_applied.map(|a| a.seq)
    }

    pub fn ingest_command(&self, seq: u32, command: SteerCommand, now_us: u64) -> (LinkState, Ingest) {
        match self.last_applied {
            Some(last) if seq <= last.seq => (*self, Ingest::Rejected { seq, last_applied_seq: last.seq }),
            _ => {
                let applied = AppliedCommand { seq, command, received_us: now_us };
                (LinkState { last_applied: Some(applied), ..*self }, Ingest::Applied(applied))
            }
        }
    }

    /// Decode and ingest a raw datagram; non-command datagrams are errors.
    pub fn ingest_datagram(&self, bytes: &[u8], now_us: u64) -> Result<(LinkState, Ingest)> {
        let d = decode_datagram(bytes)?;
        if d.kind != DatagramKind::SteerCommand {
            return Err(proto(format!("expected a steer command, got {:?}", d.kind)));
        }
        Ok(self.ingest_command(d.seq, SteerCommand::decode(&d.payload)?, now_us))
    }

    /// The last command if it is fresh enough; otherwise stop, steering as
    /// the operator asks. Before any command arrives the failsafe is active.
    pub fn failsafe_check(&self, now_us: u64, desired_steer: f64) -> ActiveCommand {
        match self.last_applied {
            Some(a) if now_us.saturating_sub(a.received_us) <= self.failsafe_after_us => {
                ActiveCommand { steer: a.command.steer_f64(), stop: false, failsafe: false }
            }
            _ => ActiveCommand { steer: desired_steer.clamp(0.0, 1.0), stop: true, failsafe: true },
        }
    }
}

/// CRC-8, polynomial 0x07, init 0, no reflection, no final xor.
pub fn crc8(data: &[u8]) -> u8 {
    let mut crc = 0u8;
    for &b in data {
        crc ^= b;
        for _ in 0..8 {
            crc = if crc & 0x80 != 0 { (crc << 1) ^ 0x07 } else { crc << 1 };
        }
    }
    crc
}

pub const CONTROL_SYNC: u8 = 0xA5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControlFrame {
    SetDrive { steer: u16, speed_mm_s: i16 },
    Telemetry { speed_mm_s: i16, rc_desired: u16, rc_override: u16, override_active: bool },
    Heartbeat,
}

impl ControlFrame {
    pub fn type_code(&self) -> u8 {
        match self {
            ControlFrame::SetDrive { .. } => 0x01,
            ControlFrame::Telemetry { .. } => 0x02,
            ControlFrame::Heartbeat => 0x03,
        }
    }

    /// Payload length for a type code, if the type is known.
    pub fn payload_len(type_code: u8) -> Option<usize> {
        match type_code {
            0x01 => Some(4),
            0x02 => Some(7),
            0x03 => Some(0),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = vec![self.type_code(), 0];
        match *self {
            ControlFrame::SetDrive { steer, speed_mm_s } => {
                body.extend_from_slice(&steer.to_le_bytes());
                body.extend_from_slice(&speed_mm_s.to_le_bytes());
            }
            ControlFrame::Telemetry { speed_mm_s, rc_desired, rc_override, override_active } => {
                body.extend_from_slice(&speed_mm_s.to_le_bytes());
                body.extend_from_slice(&rc_desired.to_le_bytes());
                body.extend_from_slice(&rc_override.to_le_bytes());
                body.push(u8::from(override_active));
            }
            ControlFrame::Heartbeat => {}
        }
        body[1] = (body.len() - 2) as u8;
        let mut out = Vec::with_capacity(body.len() + 2);
        out.push(CONTROL_SYNC);
        out.extend_from_slice(&body);
        out.push(crc8(&body));
        out
    }

    fn decode_body(type_code: u8, p: &[u8]) -> Option<ControlFrame> {
        let u16_at = |i: usize| u16::from_le_bytes([p[i], p[i + 1]]);
        Some(match type_code {
            0x01 => ControlFrame::SetDrive { steer: u16_at(0), speed_mm_s: u16_at(2) as i16 },
            0x02 => ControlFrame::Telemetry {
                speed_mm_s: u16_at(0) as i16,
                rc_desired: u16_at(2),
                rc_override: u16_at(4),
                override_active: match p[6] {
                    0 => false,
                    1 => true,
                    _ => return None,
                },
            },
            0x03 => ControlFrame::Heartbeat,
            _ => return None,
        })
    }
}

/// Streaming controller-link decoder: scans for sync, validates length and
/// CRC, and drops bytes that cannot start a valid frame. Output does not
/// depend on how the input is chunked.
#[derive(Debug, Default, Clone)]
pub struct ControlDecoder {
    buf: Vec<u8>,
    pub frames_ok: u64,
    pub crc_failures: u64,
    pub bytes_skipped: u64,
}

impl ControlDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    fn skip(&mut self, n: usize) {
        self.buf.drain(..n);
        self.bytes_skipped += n as u64;
    }

    pub fn next_frame(&mut self) -> Option<ControlFrame> {
        loop {
            match self.buf.iter().position(|&b| b == CONTROL_SYNC) {
                Some(p) => self.skip(p),
                None => {
                    let n = self.buf.len();
                    self.skip(n);
                    return None;
                }
            }
            if self.buf.len() < 3 {
                return None;
            }
            let (ty, len) = (self.buf[1], self.buf[2] as usize);
            if ControlFrame::payload_len(ty) != Some(len) {
                self.skip(1);
                continue;
            }
            let total = 3 + len + 1;
            if self.buf.len() < total {
                return None;
            }
            if crc8(&self.buf[1..3 + len]) != self.buf[3 + len] {
                self.crc_failures += 1;
                self.skip(1);
                continue;
            }
            match ControlFrame::decode_body(ty, &self.buf[3..3 + len]) {
                Some(f) => {
                    self.buf.drain(..total);
                    self.frames_ok += 1;
                    return Some(f);
                }
                None => self.skip(1),
            }
        }
    }

    /// Push `bytes` and collect every frame now complete.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<ControlFrame> {
        self.push(bytes);
        std::iter::from_fn(|| self.next_frame()).collect()
    }
}

/// Simulated command link: commands every `command_period_us`, each lost
/// with probability `loss`, some duplicated or delivered late (reordered);
/// one full outage of `outage_us` starting at `outage_start_us`. The vehicle
/// checks the failsafe every `tick_us`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossyLinkConfig {
    pub loss: f64,
    pub duplicate: f64,
    pub reorder: f64,
    pub command_period_us: u64,
    pub tick_us: u64,
    pub duration_us: u64,
    pub outage_start_us: u64,
    pub outage_us: u64,
    pub failsafe_after_us: u64,
    pub seed: u64,
}

impl Default for LossyLinkConfig {
    fn default() -> Self {
        Self {
            loss: 0.2,
            duplicate: 0.05,
            reorder: 0.05,
            command_period_us: 33_333,
            tick_us: 10_000,
            duration_us: 5_000_000,
            outage_start_us: 2_000_000,
            outage_us: 600_000,
            failsafe_after_us: DEFAULT_FAILSAFE_AFTER_US,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossyTrialReport {
    pub sent: u64,
    pub delivered: u64,
    pub applied: u64,
    pub rejected: u64,
    /// Applied commands whose seq was not above the previous applied seq.
    pub stale_applied: u64,
    /// Starvation periods longer than the threshold.
    pub starvations: u64,
    /// Worst time from the last applied command to failsafe engagement.
    pub worst_engage_us: u64,
    /// Ticks where the failsafe was active although a fresh command existed.
    pub false_engagements: u64,
    /// True if every starvation engaged within threshold + one tick.
    pub ok: bool,
}

pub fn run_lossy_trial(cfg: &LossyLinkConfig) -> LossyTrialReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Deliveries as (arrival_us, datagram bytes).
    let mut deliveries: Vec<(u64, Vec<u8>)> = Vec::new();
    let mut report = LossyTrialReport::default();
    let mut seq = 0u32;
    let mut t = 0u64;
    while t < cfg.duration_us {
        seq += 1;
        report.sent += 1;
        let bytes = SteerCommand::new(seq, rng.gen_range(0.0..1.0), Class::None).to_datagram(seq);
        let in_outage = t >= cfg.outage_start_us && t < cfg.outage_start_us + cfg.outage_us;
        if !in_outage && !rng.gen_bool(cfg.loss) {
            let late = if rng.gen_bool(cfg.reorder) { cfg.command_period_us * rng.gen_range(1..4) } else { 0 };
            let arrival = t + rng.gen_range(0..2_000) + late;
            if rng.gen_bool(cfg.duplicate) {
                deliveries.push((arrival + rng.gen_range(0..20_000), bytes.clone()));
            }
            deliveries.push((arrival, bytes));
        }
        t += cfg.command_period_us;
    }
    deliveries.sort_by_key(|d| d.0);
    report.delivered = deliveries.len() as u64;

    let mut link = LinkState::new(cfg.failsafe_after_us).expect("positive threshold");
    let mut next = 0;
    let mut last_applied_seq: Option<u32> = None;
    let mut starved_since: Option<u64> = None;
    let mut engaged_in_this_starvation = false;
    let mut ok = true;
    let mut tick = 0u64;
    while tick <= cfg.duration_us + cfg.failsafe_after_us + cfg.tick_us {
        while next < deliveries.len() && deliveries[next].0 <= tick {
            let (arrival, bytes) = &deliveries[next];
            if let Ok((state, outcome)) = link.ingest_datagram(bytes, *arrival) {
                link = state;
                match outcome {
                    Ingest::Applied(a) => {
                        report.applied += 1;
                        if last_applied_seq.is_some_and(|l| a.seq <= l) {
                            report.stale_applied += 1;
                        }
                        last_applied_seq = Some(a.seq);
                    }
                    Ingest::Rejected { .. } => report.rejected += 1,
                }
            }
            next += 1;
        }
        let active = link.failsafe_check(tick, 0.5);
        if let Some(a) = link.last_applied {
            let quiet = tick - a.received_us;
            if quiet > cfg.failsafe_after_us {
                if starved_since != Some(a.received_us) {
                    starved_since = Some(a.received_us);
                    engaged_in_this_starvation = false;
                    report.starvations += 1;
                }
                if active.failsafe && !engaged_in_this_starvation {
                    engaged_in_this_starvation = true;
                    report.worst_engage_us = report.worst_engage_us.max(quiet);
                }
                if quiet > cfg.failsafe_after_us + cfg.tick_us && !engaged_in_this_starvation {
                    ok = false;
                }
            } else if active.failsafe {
                report.false_engagements += 1;
            }
        }
        tick += cfg.tick_us;
    }
    report.ok = ok && report.stale_applied == 0 && report.false_engagements == 0 && report.starvations > 0;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crc8_reference(data: &[u8]) -> u8 {
        // Polynomial long division over the message followed by 8 zero bits.
        let mut bits: Vec<u8> = data.iter().flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1)).collect();
        bits.extend([0; 8]);
        let poly = [1u8, 0, 0, 0, 0, 0, 1, 1, 1];
        for i in 0..bits.len() - 8 {
            if bits[i] == 1 {
                for (j, p) in poly.iter().enumerate() {
                    bits[i + j] ^= p;
                }
            }
        }
        bits[bits.len() - 8..].iter().fold(0u8, |acc, b| (acc << 1) | b)
    }

    #[test]
    fn crc8_check_value() {
        assert_eq!(crc8(b"123456789"), 0xF4);
        assert_eq!(crc8_reference(b"123456789"), 0xF4);
        for data in [&b""[..], b"\x00", b"\xff\x01", b"flowguard"] {
            assert_eq!(crc8(data), crc8_reference(data));
        }
    }

    #[test]
    fn heartbeat_datagram() {
        let b = encode_datagram(DatagramKind::Heartbeat, 7, &[]).unwrap();
        assert_eq!(b.len(), 10);
        let d = decode_datagram(&b).unwrap();
        assert_eq!((d.kind, d.seq, d.payload.len()), (DatagramKind::Heartbeat, 7, 0));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_datagram(&bad).is_err());
        let mut bad = b;
        bad[4] = 2;
        assert!(decode_datagram(&bad).is_err());
        assert!(encode_datagram(DatagramKind::FlowFrame, 0, &vec![0; MAX_PAYLOAD + 1]).is_err());
    }

    #[test]
    fn flow_datagram_size() {
        let grid = crate::mvcodec::GridSpec::new(40, 30, true).unwrap();
        let b = encode_datagram(DatagramKind::FlowFrame, 1, &vec![0; grid.payload_len()]).unwrap();
        assert_eq!(b.len(), 10 + 4920);
    }

    #[test]
    fn ingest_rules() {
        let link = LinkState::default();
        let cmd = SteerCommand::new(1, 0.25, Class::Left);
        let (link, r) = link.ingest_command(5, cmd, 1_000);
        assert!(matches!(r, Ingest::Applied(_)));
        let (link, r) = link.ingest_command(5, cmd, 2_000);
        assert_eq!(r, Ingest::Rejected { seq: 5, last_applied_seq: 5 });
        let (link, r) = link.ingest_command(3, cmd, 3_000);
        assert!(matches!(r, Ingest::Rejected { .. }));
        assert_eq!(link.last_applied_seq(), Some(5));
        assert_eq!(link.last_applied.unwrap().received_us, 1_000);
    }

    #[test]
    fn failsafe_threshold() {
        let (link, _) = LinkState::default().ingest_command(1, SteerCommand::new(1, 0.25, Class::Left), 0);
        let a = link.failsafe_check(50_000, 0.8);
        assert_eq!((a.steer, a.stop, a.failsafe), (0.25, false, false));
        let a = link.failsafe_check(250_000, 0.8);
        assert_eq!((a.steer, a.stop, a.failsafe), (0.8, true, true));
        assert!(LinkState::default().failsafe_check(0, 0.5).failsafe);
        assert!(LinkState::new(0).is_err());
    }

    #[test]
    fn set_drive_round_trip_and_bit_flip() {
        let f = ControlFrame::SetDrive { steer: 5000, speed_mm_s: 1000 };
        let bytes = f.encode();
        assert_eq!(bytes.len(), 3 + 4 + 1);
        assert_eq!(ControlDecoder::new().feed(&bytes), vec![f]);
        for bit in 0..32 {
            let mut b = bytes.clone();
            b[3 + bit / 8] ^= 1 << (bit % 8);
            let mut d = ControlDecoder::new();
            assert!(d.feed(&b).is_empty());
            assert_eq!(d.crc_failures, 1);
        }
    }
}
