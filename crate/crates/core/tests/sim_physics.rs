use delta_core::allocation::{
    build_allocation, command_components, components_to_command, distribute_flight, ActuatorCommand,
    FrameTag, ThrustComponents, WrenchTarget,
};
use delta_core::math::{log_so3, orthonormality_defect, rot_x};
use delta_core::model::{forward_kinematics, inertia_at_cog, JointState, RobotModel};
use delta_core::sim::{step, ContactState, ExternalWrench, NoiseSettings, SimSettings, SimState};
use nalgebra::{Isometry3, UnitQuaternion, Vector3, Vector6};
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_2;

fn quiet() -> SimSettings {
    SimSettings { noise: NoiseSettings::none(), ..Default::default() }
}

fn untilted() -> RobotModel {
    RobotModel::prototype().with_tilts([0.0; 3])
}

/// Actuator state that produces `wrench` about the CoG of a level body.
fn settled_command(model: &RobotModel, joints: &JointState, wrench: Vector6<f64>) -> ActuatorCommand {
    let fs = forward_kinematics(model, joints, &Isometry3::identity()).unwrap();
    let q = build_allocation(&fs, model, FrameTag::Cog).unwrap();
    let target = WrenchTarget::new(wrench.fixed_rows::<3>(0).into(), wrench.fixed_rows::<3>(3).into(), FrameTag::Cog);
    let lambda = distribute_flight(&target, &q, 1e8).unwrap();
    components_to_command(&lambda, &model.tilts(), model.thrust_max).unwrap().command
}

fn with_actuators(mut s: SimState, c: &ActuatorCommand) -> SimState {
    s.thrust = c.thrust;
    s.vectoring = c.vectoring;
    s
}

fn stance() -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&rot_x(FRAC_PI_2))
}

#[test]
fn weight_balancing_thrust_holds_a_hover() {
    let model = untilted();
    let s = quiet();
    let joints = JointState::rolling();
    let mg = model.total_mass() * model.gravity;
    let cmd = settled_command(&model, &joints, Vector6::new(0.0, 0.0, mg, 0.0, 0.0, 0.0));
    let mut st = with_actuators(SimState::airborne(Vector3::new(0.0, 0.0, 2.0), UnitQuaternion::identity(), joints), &cmd);
    for _ in 0..2000 {
        st = step(&model, &s, &st, &cmd, &ExternalWrench::default(), 1e-3).unwrap().0;
        assert!(st.velocity.norm() < 1e-9, "{}", st.velocity);
    }
    assert!(st.omega.norm() < 1e-9);
}

#[test]
fn unpowered_body_falls_half_g_t_squared() {
    let model = RobotModel::prototype();
    let s = quiet();
    let mut st = SimState::airborne(Vector3::new(0.0, 0.0, 50.0), UnitQuaternion::identity(), JointState::rolling());
    for _ in 0..1000 {
        st = step(&model, &s, &st, &ActuatorCommand::zero(), &ExternalWrench::default(), 1e-3).unwrap().0;
    }
    assert!((50.0 - st.position.z - 4.905).abs() < 1e-6, "{}", st.position.z);
    assert!((st.velocity.z + 9.81).abs() < 1e-9);
    assert!(st.position.xy().norm() < 1e-12 && st.omega.norm() < 1e-12);
}

#[test]
fn torque_free_tumble_conserves_energy_and_momentum() {
    let model = RobotModel::prototype();
    let s = quiet();
    let joints = JointState::new(1.3, 1.9);
    let inertia = inertia_at_cog(&model, &joints).unwrap();
    let mut st = SimState::airborne(Vector3::new(0.0, 0.0, 50.0), UnitQuaternion::identity(), joints);
    st.omega = Vector3::new(1.5, -0.7, 2.2);
    let energy = |st: &SimState| 0.5 * st.omega.dot(&(inertia * st.omega));
    let momentum = |st: &SimState| st.orientation * (inertia * st.omega);
    let (e0, h0) = (energy(&st), momentum(&st));
    for _ in 0..2000 {
        st = step(&model, &s, &st, &ActuatorCommand::zero(), &ExternalWrench::default(), 1e-3).unwrap().0;
    }
    assert!((energy(&st) - e0).abs() / e0 < 1e-6, "{} vs {e0}", energy(&st));
    assert!((momentum(&st) - h0).norm() / h0.norm() < 1e-6);
    assert!(orthonormality_defect(st.orientation.to_rotation_matrix().matrix()) < 1e-9);
}

#[test]
fn balanced_stance_normal_force_is_the_weight() {
    let model = RobotModel::prototype();
    let s = quiet();
    let st = SimState::on_ground(&model, &s, 0.0, 0.0, stance(), JointState::rolling()).unwrap();
    let mg = model.total_mass() * model.gravity;
    let mut st2 = st;
    for _ in 0..100 {
        let (next, info) = step(&model, &s, &st2, &ActuatorCommand::zero(), &ExternalWrench::default(), 1e-3).unwrap();
        assert!((info.contact_force.force.z - mg).abs() < 1e-6);
        assert!(info.contact_force.force.xy().norm() < 1e-9);
        st2 = next;
    }
    assert!((st2.position - st.position).norm() < 1e-12);
}

/// A torque about the ring axis rolls the frame; the CoG travels one radius per radian.
#[test]
fn rolling_covers_radius_times_angle() {
    let model = RobotModel::prototype();
    let s = quiet();
    let start = SimState::on_ground(&model, &s, 0.0, 0.0, stance(), JointState::rolling()).unwrap();
    let ext = ExternalWrench { force: Vector3::zeros(), torque: Vector3::new(0.0, 2.0, 0.0) };
    let mut st = start;
    let mut max_pen: f64 = 0.0;
    for _ in 0..1500 {
        let (next, info) = step(&model, &s, &st, &ActuatorCommand::zero(), &ext, 1e-3).unwrap();
        assert_eq!(next.contact, ContactState::Stick);
        max_pen = max_pen.max(info.penetration);
        st = next;
    }
    let turned = log_so3(&(st.orientation * start.orientation.inverse()).to_rotation_matrix());
    assert!(turned.y > 0.5, "{turned}");
    assert!(turned.x.abs() < 1e-9 && turned.z.abs() < 1e-9);
    let travelled = st.position.x - start.position.x;
    assert!((travelled - model.frame_radius * turned.y).abs() < 1e-4, "{travelled} vs {}", model.frame_radius * turned.y);
    assert!(max_pen < 1e-4);
}

/// Pushing the CoG sideways while cancelling the push's moment about the contact point
/// leaves friction to carry the whole push: it holds below `μN` and slides above.
#[test]
fn friction_cone_separates_stick_from_slip() {
    let model = RobotModel::prototype();
    let s = quiet();
    let mg = model.total_mass() * model.gravity;
    for (fraction, slips) in [(0.9, false), (1.1, true)] {
        let mut st = SimState::on_ground(&model, &s, 0.0, 0.0, stance(), JointState::rolling()).unwrap();
        let push = fraction * s.friction * mg;
        let h = st.position.z;
        let ext = ExternalWrench { force: Vector3::new(push, 0.0, 0.0), torque: Vector3::new(0.0, -h * push, 0.0) };
        let mut slipped = false;
        for _ in 0..50 {
            let (next, info) = step(&model, &s, &st, &ActuatorCommand::zero(), &ext, 1e-3).unwrap();
            slipped |= info.slipping;
            if !slips {
                assert!((info.contact_force.force.x + push).abs() < 1e-6);
            }
            st = next;
        }
        assert_eq!(slipped, slips, "push {fraction} μmg");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Equal vertical thrusts on a level ring produce no tilting torque, so the
    /// momentum change is exactly (thrust − weight)·t.
    #[test]
    fn airborne_momentum_follows_net_force(t in 5.0f64..20.0) {
        let model = untilted();
        let s = quiet();
        let cmd = ActuatorCommand { thrust: [t; 3], vectoring: [0.0; 3] };
        let mut st = with_actuators(SimState::airborne(Vector3::new(0.0, 0.0, 20.0), UnitQuaternion::identity(), JointState::rolling()), &cmd);
        let m = model.total_mass();
        for _ in 0..500 {
            st = step(&model, &s, &st, &cmd, &ExternalWrench::default(), 1e-3).unwrap().0;
        }
        let expected = (3.0 * t - m * model.gravity) * 0.5;
        prop_assert!((m * st.velocity.z - expected).abs() < 1e-9 * expected.abs().max(1.0));
        prop_assert!(st.velocity.xy().norm() < 1e-9);
    }

    /// The applied rotor wrench equals the linear allocation of the commanded `(y, z)`
    /// components plus the `λ sinθ` forces along each link axis.
    #[test]
    fn applied_wrench_exceeds_linear_model_only_along_link_axes(
        q1 in 1.2f64..2.3, q2 in 1.2f64..2.3,
        l1 in 0.0f64..20.0, l2 in 0.0f64..20.0, l3 in 0.0f64..20.0,
        p1 in -3.0f64..3.0, p2 in -3.0f64..3.0, p3 in -3.0f64..3.0,
    ) {
        let model = RobotModel::prototype();
        let s = quiet();
        let joints = JointState::new(q1, q2);
        let cmd = ActuatorCommand { thrust: [l1, l2, l3], vectoring: [p1, p2, p3] };
        let st = with_actuators(SimState::airborne(Vector3::new(0.0, 0.0, 5.0), UnitQuaternion::identity(), joints), &cmd);
        let (_, info) = step(&model, &s, &st, &cmd, &ExternalWrench::default(), 1e-3).unwrap();
        let fs = forward_kinematics(&model, &joints, &Isometry3::identity()).unwrap();
        let q = build_allocation(&fs, &model, FrameTag::Cog).unwrap();
        let mut comps = Vector6::zeros();
        let mut extra = Vector6::zeros();
        for i in 0..3 {
            let theta = model.links[i].rotor_tilt;
            let (y, z) = command_components(cmd.thrust[i], cmd.vectoring[i], theta).unwrap();
            comps[2 * i] = y;
            comps[2 * i + 1] = z;
            let axis = fs.link_rotations[i] * Vector3::x();
            let f = axis * cmd.thrust[i] * theta.sin();
            let t = fs.rotor_positions[i].cross(&f) + f * model.links[i].sigma();
            extra += Vector6::new(f.x, f.y, f.z, t.x, t.y, t.z);
        }
        let linear = q.apply(&ThrustComponents(comps));
        prop_assert!((info.rotor_wrench - linear - extra).amax() < 1e-12);
    }
}
