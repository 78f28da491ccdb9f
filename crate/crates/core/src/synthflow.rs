//! Synthetic macroblock motion vectors from simulated camera egomotion.
//!
//! The camera rides on the vehicle at `rig.height`, facing along the heading
//! and pitched down by `rig.pitch`. Camera axes: `x` right, `y` down,
//! `z` forward. Depth comes from raycasting the ground plane, vertical
//! cylinders (circle obstacles) and vertical wall panels, all 1 m tall.
//! Flow uses the instantaneous perspective motion field; the two-frame
//! projection in [`two_frame_oracle`] is the reference it is checked against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::flowcore::FlowField;
use crate::mvcodec::{grid_for_resolution, GridSpec, MotionVector, MotionVectorFrame, MACROBLOCK_PX};
use crate::simworld::{Obstacle, VehicleParams, VehicleState, WorldSpec};

/// Height of obstacle cylinders and walls (m).
pub const OBSTACLE_HEIGHT: f64 = 1.0;
/// SAD reported for cells that see structure.
pub const DEFAULT_SAD: u16 = 500;

type Vec3 = [f64; 3];
type Mat3 = [[f64; 3]; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    pub height: f64,
    pub pitch: f64,
    pub focal_px: f64,
    pub image_w: u32,
    pub image_h: u32,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            height: 0.12,
            pitch: 0.1,
            focal_px: 320.0,
            image_w: 640,
            image_h: 480,
            cx: 320.0,
            cy: 240.0,
        }
    }
}

impl CameraRig {
    /// Macroblock grid of the rig's image, with the encoder pad column.
    pub fn grid(&self) -> GridSpec {
        grid_for_resolution(i64::from(self.image_w), i64::from(self.image_h))
            .expect("rig resolution is positive")
    }

    /// Pixel offset from the principal point of a macroblock's center.
    pub fn cell_offset(&self, row: usize, col: usize) -> (f64, f64) {
        let half = f64::from(MACROBLOCK_PX) / 2.0;
        (
            col as f64 * f64::from(MACROBLOCK_PX) + half - self.cx,
            row as f64 * f64::from(MACROBLOCK_PX) + half - self.cy,
        )
    }
}

/// Camera position and orientation. `rotation` maps camera coordinates to
/// world coordinates (its columns are the camera axes in the world frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub rotation: Mat3,
}

impl CameraPose {
    pub fn from_vehicle(state: &VehicleState, rig: &CameraRig) -> Self {
        let (sh, ch) = state.heading.sin_cos();
        let (sp, cp) = rig.pitch.sin_cos();
        let forward = [ch, sh, 0.0];
        let down = [0.0, 0.0, 1.0];
        let x_axis = [-sh, ch, 0.0];
        let y_axis = add(scale(down, cp), scale(forward, -sp));
        let z_axis = add(scale(forward, cp), scale(down, sp));
        Self {
            position: [state.x, state.y, -rig.height],
            rotation: from_columns(x_axis, y_axis, z_axis),
        }
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        mat_t_vec(&self.rotation, sub(p, self.position))
    }

    pub fn to_world(&self, p: Vec3) -> Vec3 {
        add(mat_vec(&self.rotation, p), self.position)
    }

    /// Pose after moving with `twist` (camera-frame velocities) for `dt`.
    pub fn advance(&self, twist: &CameraTwist, dt: f64) -> Self {
        let step = rodrigues(scale(twist.angular, dt));
        Self {
            position: add(self.position, mat_vec(&self.rotation, scale(twist.linear, dt))),
            rotation: mat_mul(&self.rotation, &step),
        }
    }
}

/// Camera-frame linear (m/s) and angular (rad/s) velocity.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CameraTwist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl CameraTwist {
    /// Twist of a rig carried by a vehicle moving at `speed` with yaw rate
    /// `yaw_rate` (positive turns right).
    pub fn from_vehicle(speed: f64, yaw_rate: f64, rig: &CameraRig) -> Self {
        let (sp, cp) = rig.pitch.sin_cos();
        Self {
            linear: [0.0, -speed * sp, speed * cp],
            angular: [0.0, yaw_rate * cp, yaw_rate * sp],
        }
    }
}

/// Optical-axis depth per macroblock center ray; `None` where the ray
/// escapes to the sky.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub rows: usize,
    pub cols: usize,
    pub depth: Vec<Option<f64>>,
}

impl DepthMap {
    pub fn at(&self, row: usize, col: usize) -> Option<f64> {
        self.depth[row * self.cols + col]
    }

    pub fn hits(&self) -> usize {
        self.depth.iter().filter(|d| d.is_some()).count()
    }
}

/// Nearest intersection depth along one camera ray.
pub fn cast_ray(pose: &CameraPose, world: &WorldSpec, x: f64, y: f64, f: f64) -> Option<f64> {
    let dir = mat_vec(&pose.rotation, [x / f, y / f, 1.0]);
    let pz = pose.position[2];
    let mut best = f64::INFINITY;
    if dir[2] > 0.0 {
        best = -pz / dir[2];
    }
    for o in &world.obstacles {
        if let Some(t) = obstacle_hit(o, pose.position, dir) {
            if t < best {
                best = t;
            }
        }
    }
    best.is_finite().then_some(best)
}

fn obstacle_hit(o: &Obstacle, origin: Vec3, dir: Vec3) -> Option<f64> {
    let (ox, oy) = (origin[0], origin[1]);
    let (dx, dy) = (dir[0], dir[1]);
    let in_height = |t: f64| {
        let z = origin[2] + t * dir[2];
        (-OBSTACLE_HEIGHT..=0.0).contains(&z)
    };
    match *o {
        Obstacle::Circle { cx, cy, r } => {
            // Outer surface only: entry point of the infinite cylinder.
            let (fx, fy) = (ox - cx, oy - cy);
            let a = dx * dx + dy * dy;
            if a == 0.0 {
                return None;
            }
            let b = fx * dx + fy * dy;
            let c = fx * fx + fy * fy - r * r;
            let disc = b * b - a * c;
            if disc < 0.0 || c < 0.0 {
                return None;
            }
            let t = (-b - disc.sqrt()) / a;
            (t > 0.0 && in_height(t)).then_some(t)
        }
        Obstacle::Wall { x1, y1, x2, y2 } => {
            let (ex, ey) = (x2 - x1, y2 - y1);
            let denom = dx * ey - dy * ex;
            if denom.abs() < 1e-15 {
                return None;
            }
            let (wx, wy) = (x1 - ox, y1 - oy);
            let t = (wx * ey - wy * ex) / denom;
            let s = (wx * dy - wy * dx) / denom;
            (t > 0.0 && (0.0..=1.0).contains(&s) && in_height(t)).then_some(t)
        }
    }
}

pub fn raycast_depth(pose: &CameraPose, world: &WorldSpec, grid: GridSpec, rig: &CameraRig) -> DepthMap {
    let mut depth = Vec::with_capacity(grid.cells());
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let (x, y) = rig.cell_offset(r, c);
            depth.push(cast_ray(pose, world, x, y, rig.focal_px));
        }
    }
    DepthMap {
        rows: grid.rows,
        cols: grid.cols,
        depth,
    }
}

/// Instantaneous motion field at pixel offset `(x, y)` and depth `z`, scaled
/// to a displacement over `dt`.
pub fn motion_field(twist: &CameraTwist, x: f64, y: f64, z: f64, f: f64, dt: f64) -> (f64, f64) {
    let [tx, ty, tz] = twist.linear;
    let [wx, wy, wz] = twist.angular;
    let u = (x * tz - f * tx) / z + x * y * wx / f - (f + x * x / f) * wy + y * wz;
    let v = (y * tz - f * ty) / z + (f + y * y / f) * wx - x * y * wy / f - x * wz;
    (u * dt, v * dt)
}

/// Flow in px/frame per macroblock; sky cells get zero flow.
pub fn egomotion_flow(twist: &CameraTwist, depth: &DepthMap, rig: &CameraRig, dt: f64) -> FlowField {
    let mut field = FlowField::zeros(depth.rows, depth.cols);
    for r in 0..depth.rows {
        for c in 0..depth.cols {
            if let Some(z) = depth.at(r, c) {
                let (x, y) = rig.cell_offset(r, c);
                let (u, v) = motion_field(twist, x, y, z, rig.focal_px, dt);
                field.u[r * depth.cols + c] = u;
                field.v[r * depth.cols + c] = v;
            }
        }
    }
    field
}

/// Pixel offset from the principal point of a camera-frame point.
pub fn project(p: Vec3, f: f64) -> Result<(f64, f64)> {
    if !(p[2] > 0.0) {
        return Err(invalid("point is behind the camera"));
    }
    Ok((f * p[0] / p[2], f * p[1] / p[2]))
}

/// Reference flow: project `point` from two camera poses separated by a
/// `twist * dt` motion and return the pixel displacement. The pair is
/// centered on `pose` (`-dt/2` and `+dt/2`), so the displacement is the
/// flow at `pose` itself rather than at the start of the interval.
pub fn two_frame_oracle(pose: &CameraPose, twist: &CameraTwist, dt: f64, point: Vec3, f: f64) -> Result<(f64, f64)> {
    project(pose.to_camera(point), f)?;
    let a = project(pose.advance(twist, -dt / 2.0).to_camera(point), f)?;
    let b = project(pose.advance(twist, dt / 2.0).to_camera(point), f)?;
    Ok((b.0 - a.0, b.1 - a.1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizeConfig {
    /// Pixels per count.
    pub q: f64,
    pub sad_structure: u16,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        Self {
            q: 0.5,
            sad_structure: DEFAULT_SAD,
        }
    }
}

/// Round flow to integer counts and clamp to the i8 range. Cells without a
/// depth hit get `sad = 0`; with no map every cell counts as structured.
pub fn quantize_flow(field: &FlowField, cfg: &QuantizeConfig, depth: Option<&DepthMap>, grid: GridSpec) -> MotionVectorFrame {
    debug_assert!(cfg.q > 0.0);
    debug_assert_eq!((grid.rows, grid.cols), (field.rows, field.cols));
    let count = |x: f64| (x / cfg.q).round().clamp(-128.0, 127.0) as i8;
    let vectors = (0..field.rows * field.cols)
        .map(|i| {
            let hit = depth.map_or(true, |d| d.depth[i].is_some());
            MotionVector {
                dx: count(field.u[i]),
                dy: count(field.v[i]),
                sad: if hit { cfg.sad_structure } else { 0 },
            }
        })
        .collect();
    MotionVectorFrame {
        grid,
        vectors,
        seq: 0,
        timestamp_us: 0,
    }
}

/// Renders motion-vector frames for a vehicle driving through a world.
#[derive(Debug, Clone)]
pub struct FrameRenderer {
    pub rig: CameraRig,
    pub grid: GridSpec,
    pub params: VehicleParams,
    pub quant: QuantizeConfig,
    /// Uniform integer noise in `[-n, n]` counts added to structured cells.
    pub noise_counts: i32,
    rng: ChaCha8Rng,
}

/// Everything computed for one rendered frame.
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub frame: MotionVectorFrame,
    pub flow: FlowField,
    pub depth: DepthMap,
}

impl FrameRenderer {
    pub fn new(rig: CameraRig, params: VehicleParams, seed: u64) -> Self {
        Self {
            grid: rig.grid(),
            rig,
            params,
            quant: QuantizeConfig::default(),
            noise_counts: 1,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn with_noise(mut self, counts: i32) -> Self {
        self.noise_counts = counts;
        self
    }

    /// Frame seen while the vehicle moves from `state` under the given
    /// commands for `dt`.
    pub fn render(&mut self, state: &VehicleState, steer_cmd: f64, speed_cmd: f64, world: &WorldSpec, dt: f64) -> RenderedFrame {
        let pose = CameraPose::from_vehicle(state, &self.rig);
        let speed = speed_cmd.max(0.0);
        let twist = CameraTwist::from_vehicle(speed, self.params.yaw_rate(speed, steer_cmd.clamp(0.0, 1.0)), &self.rig);
        let depth = raycast_depth(&pose, world, self.grid, &self.rig);
        let flow = egomotion_flow(&twist, &depth, &self.rig, dt);
        let mut frame = quantize_flow(&flow, &self.quant, Some(&depth), self.grid);
        if self.noise_counts > 0 {
            let n = self.noise_counts;
            for (mv, d) in frame.vectors.iter_mut().zip(&depth.depth) {
                if d.is_some() {
                    mv.dx = (i32::from(mv.dx) + self.rng.gen_range(-n..=n)).clamp(-128, 127) as i8;
                    mv.dy = (i32::from(mv.dy) + self.rng.gen_range(-n..=n)).clamp(-128, 127) as i8;
                }
            }
        }
        RenderedFrame { frame, flow, depth }
    }
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn from_columns(x: Vec3, y: Vec3, z: Vec3) -> Mat3 {
    [[x[0], y[0], z[0]], [x[1], y[1], z[1]], [x[2], y[2], z[2]]]
}

fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_t_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Rotation matrix for rotation vector `w` (axis * angle).
fn rodrigues(w: Vec3) -> Mat3 {
    let theta = (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]).sqrt();
    let mut m = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    if theta == 0.0 {
        return m;
    }
    let k = scale(w, 1.0 / theta);
    let (s, c) = theta.sin_cos();
    let kx = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    for i in 0..3 {
        for j in 0..3 {
            let kk: f64 = (0..3).map(|l| kx[i][l] * kx[l][j]).sum();
            m[i][j] += s * kx[i][j] + (1.0 - c) * kk;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowcore::mv_to_flowfield;
    use crate::simworld::scenario;

    fn rig() -> CameraRig {
        CameraRig::default()
    }

    #[test]
    fn level_camera_sees_sky_above_horizon() {
        let rig = CameraRig { pitch: 0.0, ..rig() };
        let pose = CameraPose::from_vehicle(&VehicleState::at(0.0, 0.0, 0.4), &rig);
        let d = raycast_depth(&pose, &WorldSpec::empty("e", 100.0), rig.grid(), &rig);
        for r in 0..d.rows {
            let (_, y) = rig.cell_offset(r, 0);
            for c in 0..d.cols {
                assert_eq!(d.at(r, c).is_none(), y <= 0.0, "row {r}");
            }
        }
    }

    #[test]
    fn ground_depth_matches_closed_form() {
        let rig = CameraRig { height: 0.1, pitch: 0.2, ..rig() };
        let state = VehicleState::at(1.0, -2.0, 0.7);
        let pose = CameraPose::from_vehicle(&state, &rig);
        let grid = rig.grid();
        let d = raycast_depth(&pose, &WorldSpec::empty("e", 100.0), grid, &rig);
        let (r, c) = (grid.rows - 1, grid.cols / 2);
        let (x, y) = rig.cell_offset(r, c);
        let elev = (y / rig.focal_px).atan();
        let z = d.at(r, c).unwrap();
        // Optical-axis depth and forward ground distance of the hit point.
        assert!((z - rig.height * elev.cos() / (rig.pitch + elev).sin()).abs() < 1e-12);
        let hit = pose.to_world([x / rig.focal_px * z, y / rig.focal_px * z, z]);
        assert!(hit[2].abs() < 1e-12);
        let forward = (hit[0] - state.x) * state.heading.cos() + (hit[1] - state.y) * state.heading.sin();
        assert!((forward - rig.height / (rig.pitch + elev).tan()).abs() < 1e-12);
    }

    #[test]
    fn nearer_obstacle_wins() {
        let rig = rig();
        let state = VehicleState::at(0.0, 0.0, 0.0);
        let pose = CameraPose::from_vehicle(&state, &rig);
        let world = WorldSpec {
            obstacles: vec![Obstacle::Wall { x1: 1.0, y1: -5.0, x2: 1.0, y2: 5.0 }],
            ..WorldSpec::empty("w", 20.0)
        };
        let grid = rig.grid();
        let open = raycast_depth(&pose, &WorldSpec::empty("e", 20.0), grid, &rig);
        let walled = raycast_depth(&pose, &world, grid, &rig);
        // Row 12 is the first row above the horizon (pitch 0.1 rad).
        let horizon = 12;
        assert!(open.at(horizon, 20).is_none());
        let z = walled.at(horizon, 20).unwrap();
        let (x, y) = rig.cell_offset(horizon, 20);
        let dir = mat_vec(&pose.rotation, [x / rig.focal_px, y / rig.focal_px, 1.0]);
        assert!((z * dir[0] - 1.0).abs() < 1e-9);
        for (a, b) in open.depth.iter().zip(&walled.depth) {
            if let (Some(a), Some(b)) = (a, b) {
                assert!(b <= a);
            }
        }
    }

    #[test]
    fn zero_twist_zero_flow_and_foe() {
        let rig = rig();
        let pose = CameraPose::from_vehicle(&VehicleState::at(0.0, 0.0, 0.0), &rig);
        let d = raycast_depth(&pose, &scenario("frontal_wall").unwrap(), rig.grid(), &rig);
        let f = egomotion_flow(&CameraTwist::default(), &d, &rig, 1.0 / 30.0);
        assert!(f.u.iter().chain(&f.v).all(|x| *x == 0.0));

        let fwd = CameraTwist { linear: [0.0, 0.0, 1.0], angular: [0.0; 3] };
        assert_eq!(motion_field(&fwd, 0.0, 0.0, 3.0, 320.0, 0.1), (0.0, 0.0));
        for (x, y) in [(50.0, 0.0), (-30.0, 20.0), (10.0, -90.0)] {
            let (u, v) = motion_field(&fwd, x, y, 3.0, 320.0, 0.1);
            // Radially outward from the focus of expansion.
            assert!(u * x + v * y > 0.0);
            assert!((u * y - v * x).abs() < 1e-12);
        }
    }

    #[test]
    fn oracle_basic_identities() {
        let rig = rig();
        let pose = CameraPose::from_vehicle(&VehicleState::at(0.5, 0.5, 1.0), &rig);
        let point = pose.to_world([0.3, 0.1, 4.0]);
        assert_eq!(two_frame_oracle(&pose, &CameraTwist::default(), 0.01, point, 320.0).unwrap(), (0.0, 0.0));

        // Camera yaw to the right about its own y axis; point on optical axis.
        let w = 0.5;
        let dt = 1e-3;
        let yaw = CameraTwist { linear: [0.0; 3], angular: [0.0, w, 0.0] };
        for depth in [1.0, 5.0, 40.0] {
            let p = pose.to_world([0.0, 0.0, depth]);
            let (du, dv) = two_frame_oracle(&pose, &yaw, dt, p, rig.focal_px).unwrap();
            assert!((du + rig.focal_px * w * dt).abs() < 1e-6, "du {du}");
            assert!(dv.abs() < 1e-9);
        }
        let behind = pose.to_world([0.0, 0.0, -1.0]);
        assert!(two_frame_oracle(&pose, &yaw, dt, behind, 320.0).is_err());
    }

    #[test]
    fn quantization_rules() {
        let grid = GridSpec::new(3, 1, false).unwrap();
        let mut f = FlowField::zeros(1, 3);
        let cfg = QuantizeConfig::default();
        f.u[0] = 300.0 * cfg.q;
        f.u[1] = -300.0 * cfg.q;
        f.v[2] = 0.74;
        let depth = DepthMap { rows: 1, cols: 3, depth: vec![Some(1.0), None, Some(2.0)] };
        let m = quantize_flow(&f, &cfg, Some(&depth), grid);
        assert_eq!(m.vectors[0], MotionVector::new(127, 0, DEFAULT_SAD));
        assert_eq!(m.vectors[1], MotionVector::new(-128, 0, 0));
        assert_eq!(m.vectors[2], MotionVector::new(0, 1, DEFAULT_SAD));

        let zero = quantize_flow(&FlowField::zeros(1, 3), &cfg, Some(&depth), grid);
        assert_eq!(zero.vectors.iter().map(|v| v.sad).collect::<Vec<_>>(), vec![500, 0, 500]);
        assert!(zero.vectors.iter().all(|v| v.dx == 0 && v.dy == 0));
    }

    #[test]
    fn quantize_dequantize_fixpoint() {
        let grid = GridSpec::new(16, 16, false).unwrap();
        let mut frame = MotionVectorFrame::zeros(grid);
        for (i, v) in frame.vectors.iter_mut().enumerate() {
            *v = MotionVector::new((i as i32 - 128) as i8, (127 - i as i32) as i8, DEFAULT_SAD);
        }
        for q in [1.0, 0.5, 0.25] {
            let back = quantize_flow(&mv_to_flowfield(&frame, q), &QuantizeConfig { q, ..Default::default() }, None, grid);
            assert_eq!(back.vectors, frame.vectors);
        }
    }

    #[test]
    fn stationary_vehicle_renders_zero_flow() {
        let mut r = FrameRenderer::new(rig(), VehicleParams::default(), 1).with_noise(0);
        let out = r.render(&VehicleState::at(0.0, 0.0, 0.0), 0.2, 0.0, &scenario("frontal_wall").unwrap(), 1.0 / 30.0);
        assert!(out.frame.vectors.iter().all(|v| v.dx == 0 && v.dy == 0));
        assert_eq!(out.frame.grid, rig().grid());
    }

    #[test]
    fn wall_approach_flow_grows() {
        let world = scenario("frontal_wall").unwrap();
        let mut r = FrameRenderer::new(rig(), VehicleParams::default(), 1).with_noise(0);
        let mut last = 0.0;
        for x in [1.0, 2.0, 3.0, 4.0, 4.8] {
            let out = r.render(&VehicleState::at(x, 0.0, 0.0), 0.5, 1.0, &world, 1.0 / 30.0);
            // Restrict to around-horizon rows, where the wall dominates.
            let mut sum = 0.0;
            for row in 8..16 {
                for col in 0..40 {
                    sum += out.flow.magnitude(row, col);
                }
            }
            assert!(sum > last, "flow should grow approaching the wall");
            last = sum;
            // Expanding: left half flows left, right half flows right, at the horizon.
            let (ul, _) = out.flow.at(12, 5);
            let (ur, _) = out.flow.at(12, 34);
            assert!(ul < 0.0 && ur > 0.0);
        }
    }

    #[test]
    fn turning_adds_depth_free_rotation() {
        let rig = rig();
        let p = VehicleParams::default();
        let world = WorldSpec::empty("e", 50.0);
        let state = VehicleState::at(0.0, 0.0, 0.0);
        let mut r = FrameRenderer::new(rig, p, 1).with_noise(0);
        let dt = 1.0 / 30.0;
        let straight = r.render(&state, 0.5, 1.0, &world, dt);
        let turning = r.render(&state, 1.0, 1.0, &world, dt);
        let yaw_rate = p.yaw_rate(1.0, 1.0);
        let rot_only = CameraTwist { linear: [0.0; 3], ..CameraTwist::from_vehicle(1.0, yaw_rate, &rig) };
        let pose = CameraPose::from_vehicle(&state, &rig);
        for row in 16..30 {
            for col in 0..40 {
                let (du, dv) = (
                    turning.flow.at(row, col).0 - straight.flow.at(row, col).0,
                    turning.flow.at(row, col).1 - straight.flow.at(row, col).1,
                );
                // Turning right moves the whole band left.
                assert!(du < 0.0);
                let (x, y) = rig.cell_offset(row, col);
                let far = pose.to_world([x / rig.focal_px * 50.0, y / rig.focal_px * 50.0, 50.0]);
                let (ou, ov) = two_frame_oracle(&pose, &rot_only, 1e-4, far, rig.focal_px).unwrap();
                let k = dt / 1e-4;
                assert!((du - ou * k).abs() < 1e-2 && (dv - ov * k).abs() < 1e-2);
            }
        }
    }
}
