use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::KvConfig;
use super::sim::{scenario_setup, wander_waypoints, FrameSource, SimVehicle, DEFAULT_SPEED};
use crate::datapipe::{Class, DatasetFile, Sample};
use crate::error::{invalid, Result};
use crate::simworld::{DriverConfig, OracleDriver, VehicleParams, DEFAULT_DT, SCENARIO_NAMES};
use crate::synthflow::CameraRig;

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub scenarios: Vec<String>,
    pub n_frames: usize,
    pub driver: DriverConfig,
    pub rig: CameraRig,
    pub params: VehicleParams,
    pub speed: f64,
    /// Episode time limit in ticks.
    pub episode_ticks: usize,
    pub noise_counts: i32,
    pub dt: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            scenarios: SCENARIO_NAMES.iter().map(|s| s.to_string()).collect(),
            n_frames: 2000,
            driver: DriverConfig::default(),
            rig: CameraRig::default(),
            params: VehicleParams::default(),
            speed: DEFAULT_SPEED,
            episode_ticks: 240,
            noise_counts: 1,
            dt: DEFAULT_DT,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let driver = DriverConfig {
            trigger_distance: kv.get_or("trigger_distance", d.driver.trigger_distance)?,
            hold_extra_frames: kv.get_or("hold_extra_frames", d.driver.hold_extra_frames)?,
            ..d.driver
        };
        Ok(Self {
            scenarios: kv.get_list("scenarios").unwrap_or(d.scenarios),
            n_frames: kv.get_or("n_frames", d.n_frames)?,
            driver,
            speed: kv.get_or("speed", d.speed)?,
            episode_ticks: kv.get_or("episode_ticks", d.episode_ticks)?,
            noise_counts: kv.get_or("noise_counts", d.noise_counts)?,
            seed: kv.get_or("seed", d.seed)?,
            ..d
        })
    }
}

/// Side the operator would correct to, judged from geometry alone: the
/// trigger rule without any hold.
pub fn exact_label(trigger: Option<f64>) -> Class {
    match trigger {
        Some(s) if s < 0.5 => Class::Left,
        Some(_) => Class::Right,
        None => Class::None,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GenStats {
    pub episodes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub override_frames: usize,
}

/// Record scripted-operator drives. Episodes rotate through the scenarios
/// and restart on collision or timeout.
pub fn generate_data(cfg: &GenConfig) -> Result<(DatasetFile, GenStats)> {
    if cfg.n_frames == 0 {
        return Err(invalid("n_frames must be > 0"));
    }
    if cfg.scenarios.is_empty() || cfg.episode_ticks == 0 {
        return Err(invalid("need at least one scenario and a positive episode length"));
    }
    let setups = cfg.scenarios.iter().map(|s| scenario_setup(s)).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ds = DatasetFile::new(cfg.rig.grid().without_pad());
    let mut stats = GenStats::default();

    while ds.samples.len() < cfg.n_frames {
        let k = stats.episodes % setups.len();
        let (name, setup) = (&cfg.scenarios[k], &setups[k]);
        stats.episodes += 1;
        let start = setup.envelope.sample(&mut rng);
        let mut driver = OracleDriver::new(cfg.driver, wander_waypoints(name, &mut rng), true);
        let mut vehicle = SimVehicle::new(start, cfg.params);
        let mut frames = FrameSource::new(cfg.rig, cfg.params, cfg.noise_counts, rng.gen(), cfg.dt);
        let mut ended = false;
        for _ in 0..cfg.episode_ticks {
            if ds.samples.len() >= cfg.n_frames {
                ended = true;
                break;
            }
            let state = vehicle.state;
            let label = exact_label(driver.trigger(&state, &setup.world));
            let out = driver.step(&state, &setup.world, &cfg.params);
            let applied = out.applied_steer();
            let index = ds.samples.len();
            let mut flow = frames.current();
            flow.grid = ds.grid;
            flow.seq = index as u32;
            let timestamp_us = (index as f64 * cfg.dt * 1e6).round() as u64;
            flow.timestamp_us = timestamp_us;
            stats.override_frames += usize::from(out.override_active);
            ds.samples.push(Sample {
                flow,
                desired_steer: quantize_steer(out.desired_steer),
                corrected_steer: quantize_steer(applied),
                override_active: out.override_active,
                speed: (state.speed * 1000.0).round() / 1000.0,
                manual_label: Some(label),
                timestamp_us,
            });
            let speed = vehicle.step(applied, cfg.speed, cfg.dt);
            frames.observe(&state, applied, speed, &setup.world);
            if vehicle.collision(&setup.world).is_some() {
                stats.collisions += 1;
                ended = true;
                break;
            }
        }
        if !ended {
            stats.timeouts += 1;
        }
    }
    Ok((ds, stats))
}

/// Steer as stored on disk, so in-memory datasets equal decoded ones.
fn quantize_steer(s: f64) -> f64 {
    (s.clamp(0.0, 1.0) * crate::datapipe::STEER_SCALE).round() / crate::datapipe::STEER_SCALE
}
