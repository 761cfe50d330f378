use delta_core::allocation::{
    build_allocation, command_components, components_to_command, distribute_flight, FrameTag,
    ThrustComponents, WrenchTarget,
};
use delta_core::math::{rot_x, rot_y, rot_z};
use delta_core::model::{contact_point, forward_kinematics_at_cog, FrameSet, JointState, RobotModel};
use nalgebra::{Vector3, Vector6};
use proptest::prelude::*;

/// Per-rotor wrench sum about the CoG, or about the contact point when `about_contact`.
fn brute_force_wrench(fs: &FrameSet, model: &RobotModel, lambda: &Vector6<f64>, about_contact: bool) -> Vector6<f64> {
    let shift = if about_contact { fs.p_cp_cog.unwrap() } else { Vector3::zeros() };
    let mut w = Vector6::zeros();
    for i in 0..3 {
        let f = fs.link_rotations[i] * Vector3::new(0.0, lambda[2 * i], lambda[2 * i + 1]);
        let arm = fs.rotor_positions[i] + shift;
        let t = arm.cross(&f) + f * model.links[i].sigma();
        w += Vector6::new(f.x, f.y, f.z, t.x, t.y, t.z);
    }
    w
}

proptest! {
    #[test]
    fn matrix_equals_per_rotor_sum(q1 in -2.3f64..2.3, q2 in -2.3f64..2.3,
                                   a in -3.0f64..3.0, b in -1.5f64..1.5, c in -3.0f64..3.0,
                                   l in proptest::array::uniform6(-20.0f64..20.0)) {
        let model = RobotModel::prototype();
        let fs = forward_kinematics_at_cog(&model, &JointState::new(q1, q2), &(rot_z(a) * rot_y(b) * rot_x(c)), &Vector3::zeros()).unwrap();
        let lambda = Vector6::from_row_slice(&l);
        let q = build_allocation(&fs, &model, FrameTag::Cog).unwrap();
        prop_assert!((q.apply(&ThrustComponents(lambda)) - brute_force_wrench(&fs, &model, &lambda, false)).amax() < 1e-12);
    }

    #[test]
    fn contact_matrix_equals_per_rotor_sum(q1 in 2.05f64..2.14, a in -3.0f64..3.0, b in 0.3f64..1.6,
                                           l in proptest::array::uniform6(-20.0f64..20.0)) {
        let model = RobotModel::prototype();
        let fs = forward_kinematics_at_cog(&model, &JointState::new(q1, q1), &(rot_x(b) * rot_z(a)), &Vector3::zeros()).unwrap();
        let fs = contact_point(&model, &fs).unwrap();
        let lambda = Vector6::from_row_slice(&l);
        let q = build_allocation(&fs, &model, FrameTag::ContactPoint).unwrap();
        prop_assert!((q.apply(&ThrustComponents(lambda)) - brute_force_wrench(&fs, &model, &lambda, true)).amax() < 1e-12);
    }

    #[test]
    fn distribution_reproduces_the_target(q1 in 1.0f64..2.3, q2 in 1.0f64..2.3,
                                          w in proptest::array::uniform6(-30.0f64..30.0)) {
        let model = RobotModel::prototype();
        let fs = forward_kinematics_at_cog(&model, &JointState::new(q1, q2), &nalgebra::Rotation3::identity(), &Vector3::zeros()).unwrap();
        let q = build_allocation(&fs, &model, FrameTag::Cog).unwrap();
        let target = WrenchTarget::new(Vector3::new(w[0], w[1], w[2]), Vector3::new(w[3], w[4], w[5]), FrameTag::Cog);
        let lambda = distribute_flight(&target, &q, 1e8).unwrap();
        prop_assert!((q.apply(&lambda) - target.stacked()).amax() < 1e-9);
    }

    #[test]
    fn command_conversion_round_trips(l in proptest::array::uniform6(-10.0f64..10.0), t in proptest::array::uniform3(-0.5f64..0.5)) {
        let lambda = ThrustComponents(Vector6::from_row_slice(&l));
        let d = components_to_command(&lambda, &t, 1e6).unwrap();
        prop_assert!(!d.saturated);
        for i in 0..3 {
            let (y, z) = command_components(d.command.thrust[i], d.command.vectoring[i], t[i]).unwrap();
            prop_assert!((y - l[2 * i]).abs() < 1e-12 && (z - l[2 * i + 1]).abs() < 1e-12);
        }
    }
}
