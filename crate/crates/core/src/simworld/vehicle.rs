use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub steer: f64,
}

impl VehicleState {
    pub fn at(x: f64, y: f64, heading: f64) -> Self {
        Self {
            x,
            y,
            heading,
            speed: 0.0,
            steer: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_steer_angle: f64,
    pub body_radius: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase: 0.25,
            max_steer_angle: 0.35,
            body_radius: 0.15,
        }
    }
}

impl VehicleParams {
    /// Front wheel angle for a normalized steer command.
    pub fn wheel_angle(&self, steer: f64) -> f64 {
        (2.0 * steer - 1.0) * self.max_steer_angle
    }

    /// Normalized steer producing `angle`, clamped to `[0, 1]`.
    pub fn steer_for_angle(&self, angle: f64) -> f64 {
        (0.5 + angle / (2.0 * self.max_steer_angle)).clamp(0.0, 1.0)
    }

    pub fn yaw_rate(&self, speed: f64, steer: f64) -> f64 {
        speed / self.wheelbase * self.wheel_angle(steer).tan()
    }

    /// Turning radius; infinite for straight steer.
    pub fn turning_radius(&self, steer: f64) -> f64 {
        self.wheelbase / self.wheel_angle(steer).tan().abs()
    }
}

/// One explicit-Euler step of the kinematic bicycle model. Steer and speed
/// are applied instantaneously.
pub fn step_vehicle(
    state: &VehicleState,
    steer_cmd: f64,
    speed_cmd: f64,
    params: &VehicleParams,
    dt: f64,
) -> VehicleState {
    debug_assert!(dt > 0.0);
    let steer = steer_cmd.clamp(0.0, 1.0);
    let speed = speed_cmd.max(0.0);
    let (s, c) = state.heading.sin_cos();
    VehicleState {
        x: state.x + speed * c * dt,
        y: state.y + speed * s * dt,
        heading: state.heading + params.yaw_rate(speed, steer) * dt,
        speed,
        steer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line() {
        let p = VehicleParams::default();
        let s0 = VehicleState::at(1.0, 2.0, 0.3);
        let s1 = step_vehicle(&s0, 0.5, 1.0, &p, 1.0);
        assert_eq!(s1.heading, s0.heading);
        assert!((s1.x - (1.0 + 0.3f64.cos())).abs() < 1e-12);
        assert!((s1.y - (2.0 + 0.3f64.sin())).abs() < 1e-12);
        let d = (s1.x - s0.x).hypot(s1.y - s0.y);
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stationary_is_fixed_point() {
        let p = VehicleParams::default();
        let s0 = VehicleState::at(1.0, 2.0, 0.3);
        let s1 = step_vehicle(&s0, 0.9, 0.0, &p, 0.1);
        assert_eq!((s1.x, s1.y, s1.heading), (s0.x, s0.y, s0.heading));
    }

    // Closed form: R = L / tan(delta); a full lap of arc 2*pi*R returns home.
    #[test]
    fn full_circle_returns_to_start() {
        let p = VehicleParams::default();
        let delta: f64 = 0.3;
        let steer = p.steer_for_angle(delta);
        assert!((p.wheel_angle(steer) - delta).abs() < 1e-12);
        let radius = p.wheelbase / delta.tan();
        assert!((radius - 0.8082).abs() < 1e-4);
        let dt = 1e-3;
        let steps = (std::f64::consts::TAU * radius / dt).round() as usize;
        let mut s = VehicleState::at(0.0, 0.0, 0.0);
        for _ in 0..steps {
            s = step_vehicle(&s, steer, 1.0, &p, dt);
        }
        assert!(s.x.hypot(s.y) < 1e-2, "ended at ({}, {})", s.x, s.y);
        // Positive wheel angle turns right (clockwise from above).
        let s = step_vehicle(&VehicleState::at(0.0, 0.0, 0.0), steer, 1.0, &p, 0.1);
        assert!(s.heading > 0.0);
    }

    #[test]
    fn displacement_bounded_by_speed() {
        let p = VehicleParams::default();
        let mut s = VehicleState::at(0.0, 0.0, 0.0);
        for i in 0..100 {
            let steer = (i as f64 * 0.37).sin() * 0.5 + 0.5;
            let n = step_vehicle(&s, steer, 1.3, &p, 0.05);
            let d = (n.x - s.x).hypot(n.y - s.y);
            assert!(d <= 1.3 * 0.05 + 1e-12);
            s = n;
        }
    }
}
