//! Ground-plane vehicle simulation: kinematic bicycle model, obstacle worlds,
//! collision checks, PI speed control and a scripted operator.
//!
//! World frame is north-east-down: `x` forward/north, `y` right/east, `z` down.
//! Heading grows clockwise seen from above, so a positive wheel angle turns
//! right. Normalized steer 0.0 is full left, 0.5 straight, 1.0 full right.

mod collision;
mod driver;
mod pi;
mod vehicle;
mod world;

pub use collision::{check_collision, Contact, ContactTarget};
pub use driver::{forward_cone_scan, ConeHit, DriverConfig, OperatorOutput, OracleDriver};
pub use pi::{pi_speed_update, FirstOrderMotor, PIState};
pub use vehicle::{step_vehicle, VehicleParams, VehicleState};
pub use world::{parse_world_file, scenario, Obstacle, Rect, WorldSpec, SCENARIO_NAMES};

/// Fixed simulation tick (30 Hz).
pub const DEFAULT_DT: f64 = 1.0 / 30.0;

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut a = a % tau;
    if a <= -std::f64::consts::PI {
        a += tau;
    } else if a > std::f64::consts::PI {
        a -= tau;
    }
    a
}
