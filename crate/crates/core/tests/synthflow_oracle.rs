use flowguard::simworld::{Obstacle, VehicleParams, VehicleState, WorldSpec};
use flowguard::synthflow::{
    egomotion_flow, motion_field, raycast_depth, two_frame_oracle, CameraPose, CameraRig, CameraTwist, DepthMap,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Six-dof twist box around the car's operating point (1 m/s cruise,
// up to 1 rad/s about any axis).
fn random_twist(rng: &mut ChaCha8Rng) -> CameraTwist {
    let mut r = || rng.gen_range(-1.0..1.0);
    CameraTwist {
        linear: [r(), r(), r()],
        angular: [r(), r(), r()],
    }
}

fn random_pose(rng: &mut ChaCha8Rng) -> (CameraPose, CameraRig) {
    let rig = CameraRig {
        height: rng.gen_range(0.05..0.5),
        pitch: rng.gen_range(-0.2..0.4),
        ..CameraRig::default()
    };
    let state = VehicleState::at(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-3.2..3.2));
    (CameraPose::from_vehicle(&state, &rig), rig)
}

#[test]
fn closed_form_matches_two_frame_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dt = 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (pose, rig) = random_pose(&mut rng);
        let twist = random_twist(&mut rng);
        for _ in 0..20 {
            let x = rng.gen_range(-320.0..320.0);
            let y = rng.gen_range(-240.0..240.0);
            let z = rng.gen_range(1.0..20.0);
            let point = pose.to_world([x / rig.focal_px * z, y / rig.focal_px * z, z]);
            let (ou, ov) = two_frame_oracle(&pose, &twist, dt, point, rig.focal_px).unwrap();
            let (u, v) = motion_field(&twist, x, y, z, rig.focal_px, dt);
            worst = worst.max((u - ou).abs()).max((v - ov).abs());
        }
    }
    println!("max closed-form vs oracle error: {worst:.3e} px");
    assert!(worst < 1e-3, "max error {worst} px");
}

#[test]
fn agreement_is_first_order_in_dt() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (pose, rig) = random_pose(&mut rng);
    let twist = random_twist(&mut rng);
    let point = pose.to_world([0.6, -0.2, 3.0]);
    let err = |dt: f64| {
        let (ou, ov) = two_frame_oracle(&pose, &twist, dt, point, rig.focal_px).unwrap();
        let (u, v) = motion_field(&twist, 0.6 / 3.0 * rig.focal_px, -0.2 / 3.0 * rig.focal_px, 3.0, rig.focal_px, dt);
        (u - ou).hypot(v - ov)
    };
    let (e1, e2) = (err(1e-2), err(1e-3));
    // Displacement error is O(dt^2): a 10x smaller step is ~100x more accurate.
    assert!(e2 < e1 / 50.0, "{e1} -> {e2}");
}

#[test]
fn depth_scaling_and_rotation_invariance() {
    let rig = CameraRig::default();
    let state = VehicleState::at(0.0, 0.0, 0.0);
    let pose = CameraPose::from_vehicle(&state, &rig);
    let world = WorldSpec {
        obstacles: vec![
            Obstacle::Circle { cx: 2.0, cy: 0.3, r: 0.3 },
            Obstacle::Wall { x1: 4.0, y1: -3.0, x2: 4.0, y2: 3.0 },
        ],
        ..WorldSpec::empty("t", 20.0)
    };
    let depth = raycast_depth(&pose, &world, rig.grid(), &rig);
    let doubled = DepthMap {
        depth: depth.depth.iter().map(|d| d.map(|z| 2.0 * z)).collect(),
        ..depth.clone()
    };
    let rotation_only = CameraTwist { linear: [0.0; 3], angular: [0.1, -0.7, 0.3] };
    let a = egomotion_flow(&rotation_only, &depth, &rig, 1.0 / 30.0);
    let b = egomotion_flow(&rotation_only, &doubled, &rig, 1.0 / 30.0);
    assert_eq!(a, b, "pure rotation must be exactly depth independent");

    let translation = CameraTwist::from_vehicle(1.0, 0.0, &rig);
    let a = egomotion_flow(&translation, &depth, &rig, 1.0 / 30.0);
    let b = egomotion_flow(&translation, &doubled, &rig, 1.0 / 30.0);
    for i in 0..a.u.len() {
        assert!((a.u[i] - 2.0 * b.u[i]).abs() < 1e-12);
        assert!((a.v[i] - 2.0 * b.v[i]).abs() < 1e-12);
    }

    // Same pixel, different depth: rotational part identical.
    let params = VehicleParams::default();
    let rot = CameraTwist { linear: [0.0; 3], ..CameraTwist::from_vehicle(1.0, params.yaw_rate(1.0, 0.9), &rig) };
    assert_eq!(motion_field(&rot, 40.0, 60.0, 1.0, 320.0, 0.1), motion_field(&rot, 40.0, 60.0, 9.0, 320.0, 0.1));
}
