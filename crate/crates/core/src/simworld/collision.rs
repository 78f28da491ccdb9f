use super::{Obstacle, VehicleParams, VehicleState, WorldSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactTarget {
    Obstacle(usize),
    Bounds,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub target: ContactTarget,
    pub penetration: f64,
}

/// Deepest contact between the vehicle disc and the world, if any. Contact
/// requires strict overlap; touching at exactly the combined radius is clear.
pub fn check_collision(state: &VehicleState, world: &WorldSpec, params: &VehicleParams) -> Option<Contact> {
    let mut best: Option<Contact> = None;
    let mut consider = |target, penetration: f64| {
        if penetration > 0.0 && best.map_or(true, |b| penetration > b.penetration) {
            best = Some(Contact { target, penetration });
        }
    };
    for (i, o) in world.obstacles.iter().enumerate() {
        let reach = match *o {
            Obstacle::Circle { cx, cy, r } => params.body_radius + r - (state.x - cx).hypot(state.y - cy),
            Obstacle::Wall { .. } => params.body_radius - o.distance_to(state.x, state.y),
        };
        consider(ContactTarget::Obstacle(i), reach);
    }
    consider(
        ContactTarget::Bounds,
        params.body_radius - world.bounds.clearance(state.x, state.y),
    );
    best
}
