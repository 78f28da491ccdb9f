use base64::Engine;
use serde::{Deserialize, Serialize};

use super::sim::{scenario_setup, FrameSource, ScenarioSetup, SimVehicle, DEFAULT_SPEED};
use crate::avoidproxy::{Decision, ProxyModel, SyncProxy};
use crate::datapipe::{Class, DatasetFile, Sample};
use crate::error::{invalid, Result};
use crate::flowcore::MaskSpec;
use crate::mvcodec::{encode_framed, serialize_mv_frame};
use crate::simworld::{Obstacle, Rect, VehicleParams, VehicleState, DEFAULT_DT};
use crate::synthflow::CameraRig;
use crate::tinynet::Network;

/// Operator to simulator, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Input { steer: f64, speed: f64, proxy_on: bool },
    Reset,
    Label { start: usize, end: usize, klass: Class },
    Record { on: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionView {
    pub klass: Class,
    pub probs: [f64; 3],
    /// `proxy` or `passthrough`.
    pub source: String,
    pub override_active: bool,
    pub source_seq: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStats {
    pub ticks: u64,
    pub collisions: u64,
    pub overrides: u64,
    pub frames_inferred: u64,
    pub frames_skipped: u64,
    pub recorded: usize,
    pub labeled: usize,
}

/// Simulator to operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State {
        tick: u64,
        pose: Pose,
        desired_steer: f64,
        final_steer: f64,
        speed_setpoint: f64,
        decision: DecisionView,
        /// Base64 of the tick's FGMV payload (pad column included).
        flow: String,
        cols: usize,
        rows: usize,
        has_pad_column: bool,
        events: Vec<String>,
        recording: bool,
        recorded: usize,
    },
    World { name: String, obstacles: Vec<Obstacle>, bounds: Rect },
    Stats(SessionStats),
    Error { message: String },
}

impl ServerMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveConfig {
    pub scenario: String,
    pub rig: CameraRig,
    pub params: VehicleParams,
    pub noise_counts: i32,
    pub dt: f64,
    pub mask: MaskSpec,
    pub inference_every: u32,
    /// Stats messages every this many ticks.
    pub stats_every: u64,
    pub seed: u64,
}

impl DriveConfig {
    pub fn new(scenario: &str, mask: MaskSpec) -> Self {
        Self {
            scenario: scenario.into(),
            rig: CameraRig::default(),
            params: VehicleParams::default(),
            noise_counts: 1,
            dt: DEFAULT_DT,
            mask,
            inference_every: 1,
            stats_every: 30,
            seed: 0,
        }
    }
}

/// Interactive drive: all world mutation happens in `tick`. The session
/// pauses while no client is connected.
pub struct DriveSession {
    cfg: DriveConfig,
    setup: ScenarioSetup,
    start: VehicleState,
    vehicle: SimVehicle,
    frames: FrameSource,
    net: Option<Network<f32>>,
    proxy: Option<SyncProxy<ProxyModel>>,
    steer: f64,
    speed: f64,
    proxy_on: bool,
    connected: bool,
    recording: bool,
    dataset: DatasetFile,
    pending_events: Vec<String>,
    stats: SessionStats,
}

impl DriveSession {
    pub fn new(cfg: DriveConfig, net: Option<Network<f32>>) -> Result<Self> {
        let setup = scenario_setup(&cfg.scenario)?;
        cfg.mask.validate(cfg.rig.grid().rows, cfg.rig.grid().cols)?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
        let start = setup.envelope.sample(&mut rng);
        let proxy = net.clone().map(|n| Self::make_proxy(&cfg, n)).transpose()?;
        Ok(Self {
            vehicle: SimVehicle::new(start, cfg.params),
            frames: FrameSource::new(cfg.rig, cfg.params, cfg.noise_counts, cfg.seed, cfg.dt),
            dataset: DatasetFile::new(cfg.rig.grid().without_pad()),
            proxy_on: proxy.is_some(),
            cfg,
            setup,
            start,
            net,
            proxy,
            steer: 0.5,
            speed: 0.0,
            connected: false,
            recording: false,
            pending_events: Vec::new(),
            stats: SessionStats { ticks: 0, collisions: 0, overrides: 0, frames_inferred: 0, frames_skipped: 0, recorded: 0, labeled: 0 },
        })
    }

    fn make_proxy(cfg: &DriveConfig, net: Network<f32>) -> Result<SyncProxy<ProxyModel>> {
        let mut p = SyncProxy::new(ProxyModel::new(net)?, cfg.rig.grid(), cfg.mask);
        p.inference_every = cfg.inference_every.max(1);
        Ok(p)
    }

    pub fn set_connected(&mut self, connected: bool) {
        self.connected = connected;
    }

    pub fn is_paused(&self) -> bool {
        !self.connected
    }

    pub fn dataset(&self) -> &DatasetFile {
        &self.dataset
    }

    pub fn stats(&self) -> &SessionStats {
        &self.stats
    }

    pub fn world_message(&self) -> ServerMessage {
        let w = &self.setup.world;
        ServerMessage::World { name: w.name.clone(), obstacles: w.obstacles.clone(), bounds: w.bounds }
    }

    /// Parse and apply one line; errors come back as an `error` message.
    pub fn handle_line(&mut self, line: &str) -> Option<ServerMessage> {
        let result = serde_json::from_str::<ClientMessage>(line)
            .map_err(|e| invalid(format!("bad message: {e}")))
            .and_then(|m| self.handle(m));
        result.err().map(|e| ServerMessage::Error { message: e.to_string() })
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Result<()> {
        match msg {
            ClientMessage::Input { steer, speed, proxy_on } => {
                if !steer.is_finite() || !speed.is_finite() {
                    return Err(invalid("steer and speed must be finite"));
                }
                self.steer = steer.clamp(0.0, 1.0);
                self.speed = speed.clamp(0.0, 3.0 * DEFAULT_SPEED);
                self.proxy_on = proxy_on && self.proxy.is_some();
            }
            ClientMessage::Reset => self.reset("reset"),
            ClientMessage::Label { start, end, klass } => {
                let n = self.dataset.samples.len();
                if start > end || end >= n {
                    return Err(invalid(format!("label range {start}..={end} outside 0..{n}")));
                }
                for s in &mut self.dataset.samples[start..=end] {
                    s.manual_label = Some(klass);
                }
                self.stats.labeled = self.dataset.samples.iter().filter(|s| s.manual_label.is_some()).count();
                self.pending_events.push(format!("labeled {start}..={end} {}", klass.name()));
            }
            ClientMessage::Record { on } => {
                self.recording = on;
                self.pending_events.push(if on { "recording on" } else { "recording off" }.into());
            }
        }
        Ok(())
    }

    fn reset(&mut self, why: &str) {
        self.vehicle = SimVehicle::new(self.start, self.cfg.params);
        self.frames = FrameSource::new(self.cfg.rig, self.cfg.params, self.cfg.noise_counts, self.cfg.seed, self.cfg.dt);
        if let Some(net) = &self.net {
            self.proxy = Self::make_proxy(&self.cfg, net.clone()).ok();
        }
        self.pending_events.push(why.into());
    }

    /// Advance one tick. Returns nothing while paused.
    pub fn tick(&mut self) -> Option<Vec<ServerMessage>> {
        if !self.connected {
            return None;
        }
        let world = &self.setup.world;
        let state = self.vehicle.state;
        let frame = self.frames.current();
        let decision = match (self.proxy_on, self.proxy.as_mut()) {
            (true, Some(p)) => p.step(&encode_framed(&frame), self.steer),
            _ => Decision::passthrough(self.steer, frame.seq),
        };
        let source = if self.proxy_on { "proxy" } else { "passthrough" };
        if let Some(p) = &self.proxy {
            self.stats.frames_inferred = p.stats.frames_inferred;
            self.stats.frames_skipped = p.stats.frames_skipped;
        }
        self.stats.overrides += u64::from(decision.is_override());
        if self.recording {
            let mut flow = frame.clone();
            flow.grid = self.dataset.grid;
            flow.seq = self.dataset.samples.len() as u32;
            let q = |s: f64| (s.clamp(0.0, 1.0) * 10000.0).round() / 10000.0;
            self.dataset.samples.push(Sample {
                timestamp_us: flow.timestamp_us,
                flow,
                desired_steer: q(self.steer),
                corrected_steer: q(decision.final_steer),
                override_active: decision.is_override(),
                speed: (state.speed * 1000.0).round() / 1000.0,
                manual_label: None,
            });
            self.stats.recorded = self.dataset.samples.len();
        }
        let speed = self.vehicle.step(decision.final_steer, self.speed, self.cfg.dt);
        self.frames.observe(&state, decision.final_steer, speed, world);
        let mut events = std::mem::take(&mut self.pending_events);
        if self.vehicle.collision(world).is_some() {
            self.stats.collisions += 1;
            events.push("collision".into());
            self.reset("reset");
            events.append(&mut self.pending_events);
        }
        self.stats.ticks += 1;
        let s = self.vehicle.state;
        let grid = frame.grid;
        let mut out = vec![ServerMessage::State {
            tick: self.stats.ticks,
            pose: Pose { x: s.x, y: s.y, heading: s.heading, speed: s.speed },
            desired_steer: self.steer,
            final_steer: decision.final_steer,
            speed_setpoint: self.speed,
            decision: DecisionView {
                klass: decision.klass,
                probs: decision.probs,
                source: source.into(),
                override_active: decision.is_override(),
                source_seq: decision.source_seq,
            },
            flow: base64::engine::general_purpose::STANDARD.encode(serialize_mv_frame(&frame)),
            cols: grid.cols,
            rows: grid.rows,
            has_pad_column: grid.has_pad_column,
            events,
            recording: self.recording,
            recorded: self.dataset.samples.len(),
        }];
        if self.cfg.stats_every > 0 && self.stats.ticks % self.cfg.stats_every == 0 {
            out.push(ServerMessage::Stats(self.stats.clone()));
        }
        Some(out)
    }
}

/// Decode the flow carried by a state message.
pub fn decode_state_flow(flow_b64: &str, cols: usize, rows: usize, has_pad_column: bool) -> Result<crate::mvcodec::MotionVectorFrame> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(flow_b64)
        .map_err(|e| invalid(format!("bad base64 flow: {e}")))?;
    crate::mvcodec::parse_mv_frame(&bytes, crate::mvcodec::GridSpec::new(cols, rows, has_pad_column)?)
}
