use delta_core::math::skew;
use delta_core::model::{forward_kinematics, inertia_at_cog, inertia_at_contact_point, JointState, RobotModel};
use nalgebra::{Isometry3, Matrix3, Vector3};
use proptest::prelude::*;
use std::f64::consts::FRAC_PI_2;

/// Whole-body inertia from the link list, written with the skew-product form of the
/// parallel-axis term.
fn inertia_oracle(model: &RobotModel, q: &JointState) -> Matrix3<f64> {
    let fs = forward_kinematics(model, q, &Isometry3::identity()).unwrap();
    let mut total = Matrix3::zeros();
    for (i, link) in model.links.iter().enumerate() {
        let r = fs.link_rotations[i].matrix();
        let d = skew(&fs.link_coms[i]);
        total += r * link.inertia * r.transpose() + d * d.transpose() * link.mass;
    }
    total
}

#[test]
fn opened_links_match_the_reported_inertia() {
    // reported for the opened configuration of the flight experiment
    let reported = [0.155, 0.245, 0.389];
    let i = inertia_at_cog(&RobotModel::prototype(), &JointState::new(FRAC_PI_2, FRAC_PI_2)).unwrap();
    for k in 0..3 {
        let rel = (i[(k, k)] - reported[k]).abs() / reported[k];
        assert!(rel < 0.05, "axis {k}: {} vs {}", i[(k, k)], reported[k]);
    }
    assert!((i - Matrix3::from_diagonal(&i.diagonal())).amax() < 1e-12);
}

#[test]
fn ring_inertia_is_axisymmetric() {
    let i = inertia_at_cog(&RobotModel::prototype(), &JointState::rolling()).unwrap();
    assert!((i[(0, 0)] - i[(1, 1)]).abs() < 1e-12);
    // thin planar body: perpendicular-axis theorem up to the links' own thickness terms
    assert!((i[(2, 2)] - i[(0, 0)] - i[(1, 1)]).abs() < 1e-3);
}

proptest! {
    #[test]
    fn inertia_matches_skew_form_and_is_spd(q1 in -2.3f64..2.3, q2 in -2.3f64..2.3) {
        let model = RobotModel::prototype();
        let q = JointState::new(q1, q2);
        let i = inertia_at_cog(&model, &q).unwrap();
        prop_assert!((i - inertia_oracle(&model, &q)).amax() < 1e-12);
        prop_assert_eq!(i, i.transpose());
        prop_assert!(i.cholesky().is_some());
    }

    #[test]
    fn contact_inertia_is_the_parallel_axis_shift(q1 in 1.5f64..2.3, px in -0.5f64..0.5, py in -0.5f64..0.5, pz in -0.5f64..0.5) {
        let model = RobotModel::prototype();
        let q = JointState::new(q1, q1);
        let p = Vector3::new(px, py, pz);
        let m = model.total_mass();
        let expected = inertia_at_cog(&model, &q).unwrap() + (Matrix3::identity() * p.norm_squared() - p * p.transpose()) * m;
        let got = inertia_at_contact_point(&model, &q, &p).unwrap();
        prop_assert!((got - expected).amax() < 1e-12);
        prop_assert!(got.cholesky().is_some());
    }
}
