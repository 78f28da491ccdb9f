use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sim::{scenario_setup, FrameSource, SimVehicle, DEFAULT_SPEED};
use crate::avoidproxy::{ProxyModel, SyncProxy};
use crate::error::{invalid, Result};
use crate::flowcore::MaskSpec;
use crate::mvcodec::encode_framed;
use crate::simworld::{forward_cone_scan, DriverConfig, OracleDriver, VehicleParams, DEFAULT_DT};
use crate::synthflow::CameraRig;
use crate::tinynet::Network;

pub enum Policy {
    Passthrough,
    Oracle(DriverConfig),
    Proxy { net: Network<f32>, mask: MaskSpec, inference_every: u32 },
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Passthrough => "passthrough",
            Policy::Oracle(_) => "oracle_driver",
            Policy::Proxy { .. } => "proxy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopConfig {
    pub runs: usize,
    pub max_ticks: usize,
    pub speed: f64,
    /// Operator command; held constant for the whole run.
    pub desired_steer: f64,
    pub rig: CameraRig,
    pub params: VehicleParams,
    pub noise_counts: i32,
    /// Frames whose forward cone is clear out to this distance count as
    /// obstacle-free.
    pub clear_distance: f64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for ClosedLoopConfig {
    fn default() -> Self {
        Self {
            runs: 50,
            max_ticks: 300,
            speed: DEFAULT_SPEED,
            desired_steer: 0.5,
            rig: CameraRig::default(),
            params: VehicleParams::default(),
            noise_counts: 1,
            clear_distance: 2.0 * DriverConfig::default().trigger_distance,
            dt: DEFAULT_DT,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub collided: bool,
    pub ticks: usize,
    pub overrides: usize,
    pub obstacle_free_frames: usize,
    pub false_overrides: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub scenario: String,
    pub policy: String,
    pub runs: usize,
    pub collisions: usize,
    pub collision_free_fraction: f64,
    pub mean_overrides_per_run: f64,
    /// Overrides on obstacle-free frames over all obstacle-free frames.
    pub false_override_rate: f64,
    pub obstacle_free_frames: usize,
    /// Over colliding runs only; `None` if no run collided.
    pub mean_time_to_first_collision_s: Option<f64>,
    pub outcomes: Vec<RunOutcome>,
}

impl ClosedLoopReport {
    pub fn summary(&self) -> String {
        format!(
            "{} {}: {}/{} collision-free ({:.1}%), {:.1} overrides/run, false-override rate {:.2}% over {} clear frames",
            self.scenario,
            self.policy,
            self.runs - self.collisions,
            self.runs,
            100.0 * self.collision_free_fraction,
            self.mean_overrides_per_run,
            100.0 * self.false_override_rate,
            self.obstacle_free_frames
        )
    }
}

/// Drive `runs` randomized starts under `policy`. Proxy runs push every
/// rendered frame through the FGMV byte codec and the steering proxy.
pub fn closed_loop_eval(scenario: &str, policy: &Policy, cfg: &ClosedLoopConfig) -> Result<ClosedLoopReport> {
    if cfg.runs == 0 || cfg.max_ticks == 0 {
        return Err(invalid("runs and max_ticks must be > 0"));
    }
    let setup = scenario_setup(scenario)?;
    let world = &setup.world;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut outcomes = Vec::with_capacity(cfg.runs);
    for _ in 0..cfg.runs {
        let start = setup.envelope.sample(&mut rng);
        let frame_seed: u64 = rng.gen();
        let mut vehicle = SimVehicle::new(start, cfg.params);
        let mut frames = FrameSource::new(cfg.rig, cfg.params, cfg.noise_counts, frame_seed, cfg.dt);
        let mut oracle = match policy {
            Policy::Oracle(d) => Some(OracleDriver::new(*d, Vec::new(), false)),
            _ => None,
        };
        let mut proxy = match policy {
            Policy::Proxy { net, mask, inference_every } => {
                let mut p = SyncProxy::new(ProxyModel::new(net.clone())?, cfg.rig.grid(), *mask);
                p.inference_every = (*inference_every).max(1);
                Some(p)
            }
            _ => None,
        };
        let mut out = RunOutcome { collided: false, ticks: 0, overrides: 0, obstacle_free_frames: 0, false_overrides: 0 };
        for _ in 0..cfg.max_ticks {
            let state = vehicle.state;
            let desired = cfg.desired_steer;
            let (steer, overriding) = if let Some(p) = proxy.as_mut() {
                let d = p.step(&encode_framed(&frames.current()), desired);
                (d.final_steer, d.is_override())
            } else if let Some(o) = oracle.as_mut() {
                let o = o.step(&state, world, &cfg.params);
                (o.applied_steer(), o.override_active)
            } else {
                (desired, false)
            };
            let clear = forward_cone_scan(&state, world, DriverConfig::default().cone_half_angle, DriverConfig::default().cone_rays)
                .map_or(true, |h| h.distance >= cfg.clear_distance);
            out.overrides += usize::from(overriding);
            if clear {
                out.obstacle_free_frames += 1;
                out.false_overrides += usize::from(overriding);
            }
            let speed = vehicle.step(steer, cfg.speed, cfg.dt);
            frames.observe(&state, steer, speed, world);
            out.ticks += 1;
            if vehicle.collision(world).is_some() {
                out.collided = true;
                break;
            }
        }
        outcomes.push(out);
    }
    Ok(aggregate(scenario, policy.name(), outcomes, cfg.dt))
}

fn aggregate(scenario: &str, policy: &str, outcomes: Vec<RunOutcome>, dt: f64) -> ClosedLoopReport {
    let runs = outcomes.len();
    let collided: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.collided).collect();
    let clear: usize = outcomes.iter().map(|o| o.obstacle_free_frames).sum();
    let false_overrides: usize = outcomes.iter().map(|o| o.false_overrides).sum();
    ClosedLoopReport {
        scenario: scenario.to_string(),
        policy: policy.to_string(),
        runs,
        collisions: collided.len(),
        collision_free_fraction: (runs - collided.len()) as f64 / runs as f64,
        mean_overrides_per_run: outcomes.iter().map(|o| o.overrides).sum::<usize>() as f64 / runs as f64,
        false_override_rate: if clear == 0 { 0.0 } else { false_overrides as f64 / clear as f64 },
        obstacle_free_frames: clear,
        mean_time_to_first_collision_s: (!collided.is_empty())
            .then(|| collided.iter().map(|o| o.ticks as f64 * dt).sum::<f64>() / collided.len() as f64),
        outcomes,
    }
}
