use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Obstacle {
    Circle { cx: f64, cy: f64, r: f64 },
    Wall { x1: f64, y1: f64, x2: f64, y2: f64 },
}

impl Obstacle {
    /// Distance from a point to the obstacle's boundary (0 inside circles).
    pub fn distance_to(&self, px: f64, py: f64) -> f64 {
        match *self {
            Obstacle::Circle { cx, cy, r } => ((px - cx).hypot(py - cy) - r).max(0.0),
            Obstacle::Wall { x1, y1, x2, y2 } => point_segment_distance(px, py, x1, y1, x2, y2),
        }
    }

    /// Distance along a unit-direction ray to the first intersection.
    pub fn ray_hit(&self, ox: f64, oy: f64, dx: f64, dy: f64) -> Option<f64> {
        match *self {
            Obstacle::Circle { cx, cy, r } => ray_circle(ox, oy, dx, dy, cx, cy, r),
            Obstacle::Wall { x1, y1, x2, y2 } => ray_segment(ox, oy, dx, dy, x1, y1, x2, y2),
        }
    }
}

pub(crate) fn point_segment_distance(px: f64, py: f64, x1: f64, y1: f64, x2: f64, y2: f64) -> f64 {
    let (ex, ey) = (x2 - x1, y2 - y1);
    let len2 = ex * ex + ey * ey;
    let t = (((px - x1) * ex + (py - y1) * ey) / len2).clamp(0.0, 1.0);
    (px - (x1 + t * ex)).hypot(py - (y1 + t * ey))
}

/// Smallest non-negative `t` along a (not necessarily unit) ray. A ray
/// starting inside the circle reports its exit point.
pub(crate) fn ray_circle(ox: f64, oy: f64, dx: f64, dy: f64, cx: f64, cy: f64, r: f64) -> Option<f64> {
    let (fx, fy) = (ox - cx, oy - cy);
    let a = dx * dx + dy * dy;
    if a == 0.0 {
        return None;
    }
    let b = fx * dx + fy * dy;
    let c = fx * fx + fy * fy - r * r;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = (-b - sq) / a;
    let t1 = (-b + sq) / a;
    if t0 >= 0.0 {
        Some(t0)
    } else if t1 >= 0.0 {
        Some(t1)
    } else {
        None
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn ray_segment(
    ox: f64,
    oy: f64,
    dx: f64,
    dy: f64,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
) -> Option<f64> {
    let (ex, ey) = (x2 - x1, y2 - y1);
    let denom = dx * ey - dy * ex;
    if denom.abs() < 1e-15 {
        return None;
    }
    let (wx, wy) = (x1 - ox, y1 - oy);
    let t = (wx * ey - wy * ex) / denom;
    let s = (wx * dy - wy * dx) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&s)).then_some(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl Rect {
    pub fn new(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self {
            min_x,
            min_y,
            max_x,
            max_y,
        }
    }

    /// Signed clearance of a point from the nearest edge (negative outside).
    pub fn clearance(&self, x: f64, y: f64) -> f64 {
        (x - self.min_x)
            .min(self.max_x - x)
            .min(y - self.min_y)
            .min(self.max_y - y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub name: String,
    pub obstacles: Vec<Obstacle>,
    pub bounds: Rect,
}

impl WorldSpec {
    pub fn empty(name: &str, half_extent: f64) -> Self {
        Self {
            name: name.to_string(),
            obstacles: Vec::new(),
            bounds: Rect::new(-half_extent, -half_extent, half_extent, half_extent),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, o) in self.obstacles.iter().enumerate() {
            match *o {
                Obstacle::Circle { r, .. } if !(r > 0.0) => {
                    return Err(invalid(format!("obstacle {i}: radius must be > 0")))
                }
                Obstacle::Wall { x1, y1, x2, y2 } if x1 == x2 && y1 == y2 => {
                    return Err(invalid(format!("obstacle {i}: degenerate wall")))
                }
                _ => {}
            }
        }
        if !(self.bounds.max_x > self.bounds.min_x && self.bounds.max_y > self.bounds.min_y) {
            return Err(invalid("bounds must have positive area"));
        }
        Ok(())
    }
}

pub const SCENARIO_NAMES: [&str; 4] = ["perimeter", "frontal_wall", "spheres", "pollers"];

/// Built-in obstacle worlds modelled on the four recording locations, plus
/// `empty` (obstacle-free plane).
pub fn scenario(name: &str) -> Result<WorldSpec> {
    let world = match name {
        "perimeter" => {
            // Parking area ringed by a building and border stones.
            let (w, h) = (10.0, 6.0);
            let mut obstacles = vec![
                Obstacle::Wall { x1: 0.0, y1: 0.0, x2: w, y2: 0.0 },
                Obstacle::Wall { x1: w, y1: 0.0, x2: w, y2: h },
                Obstacle::Wall { x1: w, y1: h, x2: 0.0, y2: h },
                Obstacle::Wall { x1: 0.0, y1: h, x2: 0.0, y2: 0.0 },
            ];
            for i in 0..4 {
                obstacles.push(Obstacle::Circle {
                    cx: 2.0 + 2.0 * f64::from(i),
                    cy: h - 0.2,
                    r: 0.12,
                });
            }
            WorldSpec {
                name: name.into(),
                obstacles,
                bounds: Rect::new(-0.5, -0.5, w + 0.5, h + 0.5),
            }
        }
        "frontal_wall" => WorldSpec {
            name: name.into(),
            obstacles: vec![Obstacle::Wall { x1: 6.0, y1: -10.0, x2: 6.0, y2: 10.0 }],
            bounds: Rect::new(-20.0, -20.0, 20.0, 20.0),
        },
        "spheres" => WorldSpec {
            name: name.into(),
            obstacles: vec![
                Obstacle::Circle { cx: 5.0, cy: -1.0, r: 0.3 },
                Obstacle::Circle { cx: 5.0, cy: 1.0, r: 0.3 },
            ],
            bounds: Rect::new(-20.0, -20.0, 20.0, 20.0),
        },
        "pollers" => WorldSpec {
            name: name.into(),
            obstacles: vec![
                Obstacle::Circle { cx: 5.0, cy: -0.65, r: 0.15 },
                Obstacle::Circle { cx: 5.0, cy: 0.65, r: 0.15 },
            ],
            bounds: Rect::new(-20.0, -20.0, 20.0, 20.0),
        },
        "empty" => WorldSpec::empty("empty", 50.0),
        other => return Err(Error::NotFound(format!("scenario '{other}'"))),
    };
    Ok(world)
}

/// Parse a `key = value` world file. Keys: `name`, `base` (a built-in
/// scenario to start from), `bounds = minx,miny,maxx,maxy`, `circle = cx,cy,r`,
/// `wall = x1,y1,x2,y2`, `clear = true` (drop inherited obstacles).
/// `#` starts a comment.
pub fn parse_world_file(text: &str) -> Result<WorldSpec> {
    let mut world = WorldSpec::empty("custom", 20.0);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| invalid(format!("world file line {}: expected key=value", lineno + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        let nums = || -> Result<Vec<f64>> {
            value
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        invalid(format!("world file line {}: bad number '{s}'", lineno + 1))
                    })
                })
                .collect()
        };
        let want = |n: usize, v: Vec<f64>| -> Result<Vec<f64>> {
            if v.len() == n {
                Ok(v)
            } else {
                Err(invalid(format!(
                    "world file line {}: '{key}' takes {n} values",
                    lineno + 1
                )))
            }
        };
        match key {
            "name" => world.name = value.to_string(),
            "base" => {
                let name = world.name.clone();
                world = scenario(value)?;
                if name != "custom" {
                    world.name = name;
                }
            }
            "clear" => {
                if value == "true" {
                    world.obstacles.clear();
                }
            }
            "bounds" => {
                let v = want(4, nums()?)?;
                world.bounds = Rect::new(v[0], v[1], v[2], v[3]);
            }
            "circle" => {
                let v = want(3, nums()?)?;
                world.obstacles.push(Obstacle::Circle { cx: v[0], cy: v[1], r: v[2] });
            }
            "wall" => {
                let v = want(4, nums()?)?;
                world.obstacles.push(Obstacle::Wall { x1: v[0], y1: v[1], x2: v[2], y2: v[3] });
            }
            other => {
                return Err(invalid(format!(
                    "world file line {}: unknown key '{other}'",
                    lineno + 1
                )))
            }
        }
    }
    world.validate()?;
    Ok(world)
}
