use cholec_core::env::{CholecEnv, EnvConfig, DT};
use cholec_core::geometry::Vec3;
use cholec_core::kinematics::TipTransform;
use cholec_core::scene::Scene;
use cholec_core::softbody::*;
use proptest::prelude::*;

fn no_grasp_tip() -> TipTransform {
    TipTransform { rotation: nalgebra::Matrix3::identity(), position: Vec3::zeros() }
}

#[test]
fn rest_state_is_a_fixed_point_without_gravity() {
    let scene = Scene::procedural();
    let mut body = scene.gallbladder.clone();
    let before = body.vertices.clone();
    let params = PhysicsParams { gravity: Vec3::zeros(), ..PhysicsParams::default() };
    for _ in 0..50 {
        step_physics(&mut body, &[], &no_grasp_tip(), DT, 4, &params).unwrap();
    }
    let worst = body.vertices.iter().zip(&before).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "drift {worst}");
}

#[test]
fn free_hanging_volume_and_fixed_vertices() {
    let scene = Scene::procedural();
    let mut body = scene.gallbladder.clone();
    let fixed_before: Vec<Vec3> = body.fixed_vertices.iter().map(|&i| body.vertices[i as usize]).collect();
    let params = PhysicsParams::default();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        step_physics(&mut body, &[], &no_grasp_tip(), DT, 4, &params).unwrap();
        worst = worst.max((body.volume() / body.rest_volume - 1.0).abs());
        for (k, &i) in body.fixed_vertices.iter().enumerate() {
            assert_eq!(body.vertices[i as usize], fixed_before[k]);
        }
    }
    assert!(worst <= 0.10, "volume deviation {worst}");
}

#[test]
fn pinned_vertex_follows_tip_exactly() {
    let env = CholecEnv::new(EnvConfig::default()).unwrap();
    let t = env.template();
    let base = env.gripper_tip();
    let mut body = t.settled.clone();
    let grasp: Vec<GraspBinding> = t.scene.grasp_vertices.iter().map(|&v| GraspBinding::attach(&body, v, &base)).collect();
    let mut tip = base;
    tip.position.y += 20.0;
    step_physics(&mut body, &grasp, &tip, DT, 4, &t.physics).unwrap();
    for b in &grasp {
        assert_eq!(body.vertices[b.vertex_id as usize], b.target(&tip));
    }
}

#[test]
fn stationary_tip_keeps_every_binding() {
    let env = CholecEnv::new(EnvConfig::default()).unwrap();
    let t = env.template();
    let tip = env.gripper_tip();
    let mut body = t.settled.clone();
    let mut grasp: Vec<GraspBinding> = t.scene.grasp_vertices.iter().map(|&v| GraspBinding::attach(&body, v, &tip)).collect();
    for _ in 0..100 {
        step_physics(&mut body, &grasp, &tip, DT, 4, &t.physics).unwrap();
        assert_eq!(update_grasp(&mut grasp, &body, &tip, 5.0, &t.physics), 0);
    }
    // residual sag under gravity stays well below the threshold
    assert!(grasp.iter().all(|b| b.elongation_mm < 2.5), "{grasp:?}");
}

#[test]
fn teleported_tip_breaks_every_binding() {
    let env = CholecEnv::new(EnvConfig::default()).unwrap();
    let t = env.template();
    let base = env.gripper_tip();
    let mut body = t.settled.clone();
    let mut grasp: Vec<GraspBinding> = t.scene.grasp_vertices.iter().map(|&v| GraspBinding::attach(&body, v, &base)).collect();
    let mut tip = base;
    tip.position += Vec3::new(-30.0, 40.0, 0.0);
    step_physics(&mut body, &grasp, &tip, DT, 4, &t.physics).unwrap();
    assert_eq!(update_grasp(&mut grasp, &body, &tip, 5.0, &t.physics), 4);
    assert!(grasp.iter().all(|b| b.broken));
}

/// Runs a tip trajectory and returns (max elongation, broken count).
fn run_trajectory(offsets: &[Vec3], substeps: u32) -> (f64, usize) {
    let env = CholecEnv::new(EnvConfig::default()).unwrap();
    let t = env.template();
    let base = env.gripper_tip();
    let mut body = t.settled.clone();
    let mut grasp: Vec<GraspBinding> = t.scene.grasp_vertices.iter().map(|&v| GraspBinding::attach(&body, v, &base)).collect();
    let (mut max_el, mut broken) = (0.0f64, 0);
    for off in offsets {
        let mut tip = base;
        tip.position += off;
        step_physics(&mut body, &grasp, &tip, DT, substeps, &t.physics).unwrap();
        broken += update_grasp(&mut grasp, &body, &tip, 5.0, &t.physics);
        max_el = max_el.max(grasp.iter().map(|b| b.elongation_mm).fold(0.0, f64::max));
    }
    (max_el, broken)
}

#[test]
fn slow_tip_motion_breaks_nothing() {
    let straight: Vec<Vec3> = (1..=100).map(|k| Vec3::new(0.5 * k as f64, 0.0, 0.0)).collect();
    // back-and-forth sweeps: 25 steps out, 25 back, twice
    let sweep = |dir: Vec3| -> Vec<Vec3> {
        (1..=100)
            .map(|k| {
                let ph = (k % 50) as f64;
                dir * (0.5 * if ph <= 25.0 { ph } else { 50.0 - ph })
            })
            .collect()
    };
    for traj in [straight, sweep(Vec3::y()), sweep(-Vec3::x()), sweep(Vec3::z())] {
        let (oracle_el, _) = run_trajectory(&traj, 40);
        assert!(oracle_el < 5.0, "oracle elongation {oracle_el}");
        let (el, broken) = run_trajectory(&traj, 4);
        assert_eq!(broken, 0, "max elongation {el}");
    }
}

#[test]
fn physics_is_deterministic() {
    let traj: Vec<Vec3> = (1..=60).map(|k| Vec3::new(-0.3, 0.7, 0.1) * k as f64).collect();
    let env = CholecEnv::new(EnvConfig::default()).unwrap();
    let t = env.template();
    let base = env.gripper_tip();
    let run = || {
        let mut body = t.settled.clone();
        let mut grasp: Vec<GraspBinding> = t.scene.grasp_vertices.iter().map(|&v| GraspBinding::attach(&body, v, &base)).collect();
        for off in &traj {
            let mut tip = base;
            tip.position += off;
            step_physics(&mut body, &grasp, &tip, DT, 4, &t.physics).unwrap();
            update_grasp(&mut grasp, &body, &tip, 5.0, &t.physics);
        }
        (body, grasp)
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_input_reports_divergence() {
    let scene = Scene::procedural();
    let mut body = scene.gallbladder.clone();
    body.vertices[100].x = f64::NAN;
    let err = step_physics(&mut body, &[], &no_grasp_tip(), DT, 4, &PhysicsParams::default()).unwrap_err();
    assert!(err.vertex < body.vertices.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn broken_set_is_monotone(steps in proptest::collection::vec((-3.0..3.0f64, -1.0..4.0f64, -3.0..3.0f64), 40)) {
        let env = CholecEnv::new(EnvConfig::default()).unwrap();
        let t = env.template();
        let base = env.gripper_tip();
        let mut body = t.settled.clone();
        let mut grasp: Vec<GraspBinding> =
            t.scene.grasp_vertices.iter().map(|&v| GraspBinding::attach(&body, v, &base)).collect();
        let mut tip = base;
        let mut prev: Vec<bool> = grasp.iter().map(|b| b.broken).collect();
        for (dx, dy, dz) in steps {
            tip.position += Vec3::new(dx, dy, dz);
            step_physics(&mut body, &grasp, &tip, DT, 4, &t.physics).unwrap();
            update_grasp(&mut grasp, &body, &tip, 5.0, &t.physics);
            let now: Vec<bool> = grasp.iter().map(|b| b.broken).collect();
            for (p, n) in prev.iter().zip(&now) {
                prop_assert!(!p || *n);
            }
            prop_assert!(grasp.iter().all(|b| b.elongation_mm >= 0.0));
            prev = now;
        }
    }
}
