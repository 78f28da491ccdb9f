use super::{wrap_angle, VehicleParams, VehicleState, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverConfig {
    /// Override fires when an obstacle in the cone is closer than this (m).
    pub trigger_distance: f64,
    /// Frames the override is held after the trigger condition clears.
    pub hold_extra_frames: u32,
    pub cone_half_angle: f64,
    /// Rays sampled across the cone.
    pub cone_rays: usize,
    /// Wheel angle per radian of heading error toward the waypoint.
    pub heading_gain: f64,
    /// Waypoint counts as reached inside this radius (m).
    pub waypoint_radius: f64,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            trigger_distance: 1.5,
            hold_extra_frames: 3,
            cone_half_angle: 25f64.to_radians(),
            cone_rays: 51,
            heading_gain: 1.0,
            waypoint_radius: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorOutput {
    pub desired_steer: f64,
    pub override_active: bool,
    pub override_steer: f64,
}

impl OperatorOutput {
    /// Steer actually sent to the vehicle.
    pub fn applied_steer(&self) -> f64 {
        if self.override_active {
            self.override_steer
        } else {
            self.desired_steer
        }
    }
}

/// Nearest obstacle hit inside the forward cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeHit {
    pub distance: f64,
    /// Relative to heading; positive is to the right.
    pub bearing: f64,
    pub obstacle: usize,
}

/// Scan a fan of rays across `[-half_angle, half_angle]` around the heading.
pub fn forward_cone_scan(state: &VehicleState, world: &WorldSpec, half_angle: f64, rays: usize) -> Option<ConeHit> {
    let rays = rays.max(2);
    let mut best: Option<ConeHit> = None;
    for k in 0..rays {
        let bearing = -half_angle + 2.0 * half_angle * k as f64 / (rays - 1) as f64;
        let (dy, dx) = (state.heading + bearing).sin_cos();
        for (i, o) in world.obstacles.iter().enumerate() {
            if let Some(t) = o.ray_hit(state.x, state.y, dx, dy) {
                // Ties resolve to the leftmost ray scanned first.
                if best.map_or(true, |b| t < b.distance) {
                    best = Some(ConeHit { distance: t, bearing, obstacle: i });
                }
            }
        }
    }
    best
}

/// Summed ray clearance, clipped at twice the trigger distance, over the left
/// and right half-planes ahead of the vehicle. The centre ray belongs to
/// neither side.
fn half_cone_openness(state: &VehicleState, world: &WorldSpec, cfg: &DriverConfig) -> (f64, f64) {
    let horizon = 2.0 * cfg.trigger_distance;
    let half = std::f64::consts::FRAC_PI_2;
    let rays = 2 * cfg.cone_rays.max(2) + 1;
    let (mut left, mut right) = (0.0, 0.0);
    for k in 0..rays {
        let bearing = -half + 2.0 * half * k as f64 / (rays - 1) as f64;
        let (dy, dx) = (state.heading + bearing).sin_cos();
        let t = world
            .obstacles
            .iter()
            .filter_map(|o| o.ray_hit(state.x, state.y, dx, dy))
            .fold(horizon, f64::min);
        if bearing < 0.0 {
            left += t;
        } else if bearing > 0.0 {
            right += t;
        }
    }
    (left, right)
}

/// Scripted operator: follows waypoints with a proportional heading law and
/// fires a full-deflection override when an obstacle enters the cone.
#[derive(Debug, Clone)]
pub struct OracleDriver {
    pub cfg: DriverConfig,
    pub waypoints: Vec<(f64, f64)>,
    pub loop_waypoints: bool,
    next_wp: usize,
    hold_left: u32,
    latched: Option<f64>,
}

impl OracleDriver {
    pub fn new(cfg: DriverConfig, waypoints: Vec<(f64, f64)>, loop_waypoints: bool) -> Self {
        Self {
            cfg,
            waypoints,
            loop_waypoints,
            next_wp: 0,
            hold_left: 0,
            latched: None,
        }
    }

    pub fn current_waypoint(&self) -> Option<(f64, f64)> {
        self.waypoints.get(self.next_wp).copied()
    }

    /// Side the operator would steer right now, ignoring hold: `Some(0.0)`
    /// (left) or `Some(1.0)` (right) if an obstacle is inside trigger range.
    pub fn trigger(&self, state: &VehicleState, world: &WorldSpec) -> Option<f64> {
        let hit = forward_cone_scan(state, world, self.cfg.cone_half_angle, self.cfg.cone_rays)
            .filter(|h| h.distance < self.cfg.trigger_distance)?;
        let (left, right) = half_cone_openness(state, world, &self.cfg);
        Some(if right < left {
            0.0
        } else if left < right {
            1.0
        } else if hit.bearing >= 0.0 {
            0.0
        } else {
            1.0
        })
    }

    pub fn desired_steer(&mut self, state: &VehicleState, params: &VehicleParams) -> f64 {
        while let Some((wx, wy)) = self.current_waypoint() {
            if (wx - state.x).hypot(wy - state.y) > self.cfg.waypoint_radius {
                break;
            }
            self.next_wp += 1;
            if self.loop_waypoints && self.next_wp >= self.waypoints.len() {
                self.next_wp = 0;
            }
            if self.waypoints.len() <= 1 && self.loop_waypoints {
                break;
            }
        }
        match self.current_waypoint() {
            Some((wx, wy)) => {
                let err = wrap_angle((wy - state.y).atan2(wx - state.x) - state.heading);
                params.steer_for_angle(self.cfg.heading_gain * err)
            }
            None => 0.5,
        }
    }

    pub fn step(&mut self, state: &VehicleState, world: &WorldSpec, params: &VehicleParams) -> OperatorOutput {
        let desired_steer = self.desired_steer(state, params);
        let side = match (self.trigger(state, world), self.latched) {
            (Some(_), Some(latched)) => {
                self.hold_left = self.cfg.hold_extra_frames;
                Some(latched)
            }
            (Some(fresh), None) => {
                self.hold_left = self.cfg.hold_extra_frames;
                self.latched = Some(fresh);
                Some(fresh)
            }
            (None, Some(latched)) if self.hold_left > 0 => {
                self.hold_left -= 1;
                Some(latched)
            }
            (None, _) => {
                self.latched = None;
                None
            }
        };
        OperatorOutput {
            desired_steer,
            override_active: side.is_some(),
            override_steer: side.unwrap_or(desired_steer),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{Obstacle, Rect};

    fn world(obstacles: Vec<Obstacle>) -> WorldSpec {
        WorldSpec {
            name: "t".into(),
            obstacles,
            bounds: Rect::new(-50.0, -50.0, 50.0, 50.0),
        }
    }

    #[test]
    fn empty_world_follows_waypoint() {
        let p = VehicleParams::default();
        let mut d = OracleDriver::new(DriverConfig::default(), vec![(10.0, 10.0)], false);
        let out = d.step(&VehicleState::at(0.0, 0.0, 0.0), &world(vec![]), &p);
        assert!(!out.override_active);
        // Waypoint is 45 deg to the right.
        assert!(out.desired_steer > 0.5);
        let mut d = OracleDriver::new(DriverConfig::default(), vec![(10.0, -10.0)], false);
        assert!(d.step(&VehicleState::at(0.0, 0.0, 0.0), &world(vec![]), &p).desired_steer < 0.5);
    }

    #[test]
    fn obstacle_ahead_right_steers_left() {
        let p = VehicleParams::default();
        let cfg = DriverConfig::default();
        let w = world(vec![Obstacle::Circle { cx: cfg.trigger_distance / 2.0 + 0.2, cy: 0.05, r: 0.2 }]);
        let mut d = OracleDriver::new(cfg, vec![(20.0, 0.0)], false);
        let out = d.step(&VehicleState::at(0.0, 0.0, 0.0), &w, &p);
        assert!(out.override_active);
        assert_eq!(out.override_steer, 0.0);
        assert_eq!(out.applied_steer(), 0.0);

        let w = world(vec![Obstacle::Circle { cx: 0.9, cy: -0.1, r: 0.2 }]);
        let mut d = OracleDriver::new(cfg, vec![(20.0, 0.0)], false);
        assert_eq!(d.step(&VehicleState::at(0.0, 0.0, 0.0), &w, &p).override_steer, 1.0);
    }

    #[test]
    fn hold_persists_exact_frames() {
        let p = VehicleParams::default();
        let cfg = DriverConfig { hold_extra_frames: 5, ..DriverConfig::default() };
        let near = world(vec![Obstacle::Circle { cx: 1.0, cy: 0.0, r: 0.2 }]);
        let clear = world(vec![]);
        let s = VehicleState::at(0.0, 0.0, 0.0);
        let mut d = OracleDriver::new(cfg, vec![(20.0, 0.0)], false);
        assert!(d.step(&s, &near, &p).override_active);
        for i in 0..5 {
            assert!(d.step(&s, &clear, &p).override_active, "hold frame {i}");
        }
        assert!(!d.step(&s, &clear, &p).override_active);
    }

    #[test]
    fn deterministic() {
        let p = VehicleParams::default();
        let w = world(vec![Obstacle::Wall { x1: 1.2, y1: -3.0, x2: 1.2, y2: 3.0 }]);
        let s = VehicleState::at(0.0, 0.1, 0.2);
        let mut a = OracleDriver::new(DriverConfig::default(), vec![(5.0, 1.0)], false);
        let mut b = a.clone();
        for _ in 0..10 {
            assert_eq!(a.step(&s, &w, &p), b.step(&s, &w, &p));
        }
    }
}
