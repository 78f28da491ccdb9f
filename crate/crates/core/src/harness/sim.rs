use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mvcodec::MotionVectorFrame;
use crate::simworld::{
    check_collision, pi_speed_update, scenario, step_vehicle, Contact, FirstOrderMotor, PIState, VehicleParams, VehicleState,
    WorldSpec,
};
use crate::synthflow::{CameraRig, FrameRenderer};

/// Cruise speed setpoint (m/s).
pub const DEFAULT_SPEED: f64 = 1.0;

/// Box of start poses for randomized runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartEnvelope {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub heading: (f64, f64),
}

impl StartEnvelope {
    pub fn sample(&self, rng: &mut impl Rng) -> VehicleState {
        let pick = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        VehicleState::at(pick(rng, self.x), pick(rng, self.y), pick(rng, self.heading))
    }
}

/// A built-in world with where runs start and how the scripted operator
/// wanders through it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSetup {
    pub world: WorldSpec,
    pub envelope: StartEnvelope,
}

pub fn scenario_setup(name: &str) -> Result<ScenarioSetup> {
    let world = scenario(name)?;
    let h = 0.3;
    let envelope = match name {
        "perimeter" => StartEnvelope { x: (3.0, 7.0), y: (2.0, 4.0), heading: (-std::f64::consts::PI, std::f64::consts::PI) },
        "frontal_wall" => StartEnvelope { x: (0.0, 2.0), y: (-3.0, 3.0), heading: (-0.2, 0.2) },
        "spheres" | "pollers" => StartEnvelope { x: (-1.0, 1.0), y: (-1.5, 1.5), heading: (-h, h) },
        _ => StartEnvelope { x: (-5.0, 5.0), y: (-5.0, 5.0), heading: (-std::f64::consts::PI, std::f64::consts::PI) },
    };
    Ok(ScenarioSetup { world, envelope })
}

/// Waypoint tour for data collection, randomized per episode. Tours are
/// looped.
pub fn wander_waypoints(name: &str, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let mut r = |lo: f64, hi: f64| rng.gen_range(lo..hi);
    match name {
        // Behind the wall and back, so every pass meets it.
        "frontal_wall" => vec![(12.0, r(-4.0, 4.0)), (-4.0, r(-6.0, 6.0))],
        "spheres" | "pollers" => vec![(10.0, r(-2.5, 2.5)), (-3.0, r(-2.5, 2.5))],
        "perimeter" => {
            let mut tour = vec![(r(1.8, 2.6), r(1.5, 2.0)), (r(7.4, 8.2), r(1.5, 2.0)), (r(7.4, 8.2), r(4.0, 4.5)), (r(1.8, 2.6), r(4.0, 4.5))];
            if r(0.0, 1.0) < 0.5 {
                tour.reverse();
            }
            tour
        }
        _ => (0..4).map(|_| (r(-10.0, 10.0), r(-10.0, 10.0))).collect(),
    }
}

/// Vehicle with a PI speed loop driving a first-order motor.
#[derive(Debug, Clone)]
pub struct SimVehicle {
    pub state: VehicleState,
    pub params: VehicleParams,
    pub pi: PIState,
    pub motor: FirstOrderMotor,
}

impl SimVehicle {
    pub fn new(state: VehicleState, params: VehicleParams) -> Self {
        let mut motor = FirstOrderMotor::new(2.0, 0.2);
        motor.speed = state.speed;
        Self { state, params, pi: PIState::default(), motor }
    }

    /// Advance one tick; returns the speed commanded to the kinematics.
    pub fn step(&mut self, steer: f64, speed_setpoint: f64, dt: f64) -> f64 {
        let (pi, throttle) = pi_speed_update(&self.pi, speed_setpoint, self.motor.speed, dt);
        self.pi = pi;
        let speed = self.motor.step(throttle, dt);
        self.state = step_vehicle(&self.state, steer, speed, &self.params, dt);
        speed
    }

    pub fn collision(&self, world: &WorldSpec) -> Option<Contact> {
        check_collision(&self.state, world, &self.params)
    }
}

/// Produces the camera's motion-vector frame for each tick: the frame shown
/// at tick `t` is the motion between `t - 1` and `t`.
#[derive(Debug, Clone)]
pub struct FrameSource {
    pub renderer: FrameRenderer,
    last: Option<MotionVectorFrame>,
    seq: u32,
    pub dt: f64,
}

impl FrameSource {
    pub fn new(rig: CameraRig, params: VehicleParams, noise_counts: i32, seed: u64, dt: f64) -> Self {
        Self { renderer: FrameRenderer::new(rig, params, seed).with_noise(noise_counts), last: None, seq: 0, dt }
    }

    /// Frame for the current tick. Before any motion the camera sees nothing
    /// move.
    pub fn current(&mut self) -> MotionVectorFrame {
        let mut f = self.last.clone().unwrap_or_else(|| MotionVectorFrame::zeros(self.renderer.grid));
        f.seq = self.seq;
        f.timestamp_us = (f64::from(self.seq) * self.dt * 1e6).round() as u64;
        f
    }

    /// Record the motion the vehicle is about to make from `state`.
    pub fn observe(&mut self, state: &VehicleState, steer: f64, speed: f64, world: &WorldSpec) {
        self.last = Some(self.renderer.render(state, steer, speed, world, self.dt).frame);
        self.seq = self.seq.wrapping_add(1);
    }
}
