use deeppco::pose::{
    compose, integrate_trajectory, invert, orthonormality_error, pose_to_vec6, relative_pose,
    relative_poses, vec6_to_pose, Axis, EulerConvention, Pose, PoseVector6, RotationFrame,
};
use nalgebra::Vector3;
use proptest::prelude::*;

const CASES: u32 = 1000;

// Pitch-like middle angle stays clear of ±π/2 so the decomposition is unique.
fn vec6() -> impl Strategy<Value = PoseVector6> {
    (
        prop::array::uniform3(-50.0f64..50.0),
        -3.1f64..3.1,
        -1.5f64..1.5,
        -3.1f64..3.1,
    )
        .prop_map(|(p, a, b, c)| PoseVector6::new(Vector3::from(p), Vector3::new(c, b, a)))
}

fn pose() -> impl Strategy<Value = Pose> {
    vec6().prop_map(|v| vec6_to_pose(&v, EulerConvention::default()))
}

fn max_diff(a: &Pose, b: &Pose) -> f64 {
    (a.to_homogeneous() - b.to_homogeneous()).abs().max()
}

fn conventions() -> Vec<EulerConvention> {
    let orders = [
        [Axis::Z, Axis::Y, Axis::X],
        [Axis::X, Axis::Y, Axis::Z],
        [Axis::Y, Axis::X, Axis::Z],
    ];
    orders
        .iter()
        .flat_map(|&o| {
            [RotationFrame::Intrinsic, RotationFrame::Extrinsic]
                .map(|f| EulerConvention::new(o, f).unwrap())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn vec6_round_trip(v in vec6()) {
        let conv = EulerConvention::default();
        let back = pose_to_vec6(&vec6_to_pose(&v, conv), conv).unwrap();
        for (a, b) in v.to_array().iter().zip(back.to_array()) {
            prop_assert!((a - b).abs() < 1e-9, "{v:?} -> {back:?}");
        }
    }

    #[test]
    fn pose_round_trip_any_convention(t in pose()) {
        for conv in conventions() {
            let back = vec6_to_pose(&pose_to_vec6(&t, conv).unwrap(), conv);
            prop_assert!(max_diff(&t, &back) < 1e-9, "{conv}");
        }
    }

    #[test]
    fn compose_is_associative(a in pose(), b in pose(), c in pose()) {
        let left = compose(&compose(&a, &b), &c);
        let right = compose(&a, &compose(&b, &c));
        // translations reach ~150 m, so scale the bound with magnitude
        let scale = 1.0 + left.translation().norm();
        prop_assert!(max_diff(&left, &right) < 1e-12 * scale);
    }

    #[test]
    fn invert_is_an_involution(a in pose()) {
        prop_assert!(max_diff(&invert(&invert(&a)), &a) < 1e-12 * (1.0 + a.translation().norm()));
    }

    #[test]
    fn relative_pose_recovers_target(a in pose(), b in pose()) {
        let r = relative_pose(&a, &b);
        prop_assert!(max_diff(&compose(&a, &r), &b) < 1e-9);
    }

    #[test]
    fn trajectory_reconstruction(steps in prop::collection::vec(pose(), 2..20)) {
        let conv = EulerConvention::default();
        let traj: Vec<Pose> = steps.iter().scan(Pose::identity(), |acc, s| { *acc = compose(acc, s); Some(*acc) }).collect();
        let rels: Vec<PoseVector6> = relative_poses(&traj).iter().map(|r| pose_to_vec6(r, conv).unwrap()).collect();
        let rebuilt = integrate_trajectory(&traj[0], &rels, conv);
        prop_assert_eq!(rebuilt.len(), traj.len());
        for (x, y) in rebuilt.iter().zip(&traj) {
            prop_assert!(max_diff(x, y) < 1e-6);
        }
    }
}

#[test]
fn rotation_stays_orthonormal_over_long_chains() {
    let step = vec6_to_pose(
        &PoseVector6::new(
            Vector3::new(0.3, -0.1, 0.02),
            Vector3::new(0.011, -0.007, 0.013),
        ),
        EulerConvention::default(),
    );
    let mut acc = Pose::identity();
    for _ in 0..10_000 {
        acc = compose(&acc, &step);
    }
    assert!(orthonormality_error(acc.rotation()) < 1e-6);
}
