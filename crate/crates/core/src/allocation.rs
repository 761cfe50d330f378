//! Linear map between per-rotor thrust components and body wrenches, and the
//! inverse distribution to thrust magnitudes and vectoring angles.

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::math::skew;
use crate::model::{FrameSet, RobotModel};

/// Which point the wrench is taken about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameTag {
    Cog,
    ContactPoint,
}

/// Stacked `(λ_{i,y}, λ_{i,z})` for the three rotors, newtons in each link frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustComponents(pub Vector6<f64>);

impl ThrustComponents {
    pub fn zeros() -> Self {
        Self(Vector6::zeros())
    }

    pub fn lateral(&self, i: usize) -> f64 {
        self.0[2 * i]
    }

    pub fn normal(&self, i: usize) -> f64 {
        self.0[2 * i + 1]
    }

    /// Thrust magnitude implied for rotor `i` with tilt `theta`.
    pub fn magnitude(&self, i: usize, theta: f64) -> f64 {
        self.lateral(i).hypot(self.normal(i)) / theta.cos().abs()
    }
}

/// A force/torque goal and the frame it is expressed about.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchTarget {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
    pub frame: FrameTag,
}

impl WrenchTarget {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>, frame: FrameTag) -> Self {
        Self {
            force,
            torque,
            frame,
        }
    }

    pub fn stacked(&self) -> Vector6<f64> {
        Vector6::new(
            self.force.x,
            self.force.y,
            self.force.z,
            self.torque.x,
            self.torque.y,
            self.torque.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|x| x.is_finite())
    }
}

/// `Q′`: rows are force then torque, columns are `λ′`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationMatrix {
    pub matrix: Matrix6<f64>,
    pub frame: FrameTag,
}

impl AllocationMatrix {
    pub fn translational(&self) -> Matrix3x6<f64> {
        self.matrix.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotational(&self) -> Matrix3x6<f64> {
        self.matrix.fixed_rows::<3>(3).into_owned()
    }

    pub fn apply(&self, lambda: &ThrustComponents) -> Vector6<f64> {
        self.matrix * lambda.0
    }

    /// Ratio of extreme singular values; infinite when rank deficient.
    pub fn condition_number(&self) -> f64 {
        let sv = self.matrix.singular_values();
        let max = sv.max();
        let min = sv.min();
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// Comma-separated rows, for debugging dumps.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,l1y,l1z,l2y,l2z,l3y,l3z\n");
        let names = ["fx", "fy", "fz", "tx", "ty", "tz"];
        for (r, name) in names.iter().enumerate() {
            out.push_str(name);
            for c in 0..6 {
                out.push_str(&format!(",{:.17e}", self.matrix[(r, c)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Selects the y and z columns of a link rotation.
fn yz_columns(r: &Matrix3<f64>) -> nalgebra::Matrix3x2<f64> {
    r.fixed_columns::<2>(1).into_owned()
}

/// Builds `Q′` about the CoG or the contact point.
pub fn build_allocation(
    frames: &FrameSet,
    model: &RobotModel,
    frame: FrameTag,
) -> Result<AllocationMatrix> {
    let shift = match frame {
        FrameTag::Cog => Vector3::zeros(),
        FrameTag::ContactPoint => frames.p_cp_cog.ok_or_else(|| {
            Error::Mode("contact-point allocation requested without a ground contact".into())
        })?,
    };
    let mut matrix = Matrix6::zeros();
    for i in 0..3 {
        let rs = yz_columns(frames.link_rotations[i].matrix());
        let arm = frames.rotor_positions[i] + shift;
        let moment = skew(&arm) + Matrix3::identity() * model.links[i].sigma();
        matrix.fixed_view_mut::<3, 2>(0, 2 * i).copy_from(&rs);
        matrix.fixed_view_mut::<3, 2>(3, 2 * i).copy_from(&(moment * rs));
    }
    Ok(AllocationMatrix { matrix, frame })
}

/// Default cap on the condition number accepted by [`distribute_flight`].
pub const DEFAULT_CONDITION_CAP: f64 = 1e8;

/// `λ′ = Q′⁻¹ w` for a CoG wrench target.
pub fn distribute_flight(
    target: &WrenchTarget,
    q: &AllocationMatrix,
    condition_cap: f64,
) -> Result<ThrustComponents> {
    if q.frame != FrameTag::Cog || target.frame != FrameTag::Cog {
        return Err(Error::Mode("flight distribution needs CoG-frame matrix and target".into()));
    }
    let condition = q.condition_number();
    if !(condition <= condition_cap) {
        return Err(Error::Allocation { condition });
    }
    let lu = q.matrix.lu();
    let w = target.stacked();
    let mut x = lu.solve(&w).ok_or(Error::Allocation { condition })?;
    // one step of iterative refinement
    let r = w - q.matrix * x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(ThrustComponents(x))
}

/// Force of rotor `i` in its link frame: `(λ sinθ, −λ cosθ sinφ, λ cosθ cosφ)`.
pub fn rotor_force_components(thrust: f64, phi: f64, theta: f64) -> Result<Vector3<f64>> {
    if !(thrust >= 0.0) {
        return Err(Error::Domain(format!("thrust must be non-negative, got {thrust}")));
    }
    Ok(Vector3::new(
        thrust * theta.sin(),
        -thrust * theta.cos() * phi.sin(),
        thrust * theta.cos() * phi.cos(),
    ))
}

/// Per-rotor thrust magnitude λᵢ and vectoring angle φᵢ ∈ (−π, π].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorCommand {
    pub thrust: [f64; 3],
    pub vectoring: [f64; 3],
}

impl ActuatorCommand {
    pub fn zero() -> Self {
        Self {
            thrust: [0.0; 3],
            vectoring: [0.0; 3],
        }
    }

    pub fn thrust_sum(&self) -> f64 {
        self.thrust.iter().sum()
    }
}

/// Result of converting `λ′` to actuator commands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution {
    pub command: ActuatorCommand,
    /// The components actually commanded (after any downscaling).
    pub components: ThrustComponents,
    /// Set when `λ′` was scaled down to respect the thrust limit.
    pub saturated: bool,
    pub scale: f64,
}

/// Converts thrust components to `(λᵢ, φᵢ)`, uniformly scaling `λ′` down when any
/// rotor would exceed `thrust_max`.
pub fn components_to_command(
    lambda: &ThrustComponents,
    tilts: &[f64; 3],
    thrust_max: f64,
) -> Result<Distribution> {
    for (i, t) in tilts.iter().enumerate() {
        if !(t.cos().abs() > 1e-6) {
            return Err(Error::Domain(format!("rotor {} tilt {t} too close to pi/2", i + 1)));
        }
    }
    let peak = (0..3)
        .map(|i| lambda.magnitude(i, tilts[i]))
        .fold(0.0_f64, f64::max);
    let (components, saturated, scale) = if peak > thrust_max {
        let s = thrust_max / peak;
        (ThrustComponents(lambda.0 * s), true, s)
    } else {
        (*lambda, false, 1.0)
    };
    let mut command = ActuatorCommand::zero();
    for i in 0..3 {
        command.thrust[i] = components.magnitude(i, tilts[i]).min(thrust_max);
        command.vectoring[i] = (-components.lateral(i)).atan2(components.normal(i));
    }
    Ok(Distribution {
        command,
        components,
        saturated,
        scale,
    })
}

/// Shifts a wrench taken about the CoG to the contact point: `τ_cp = τ + p_cp_cog × f`.
pub fn shift_wrench(w: &Vector6<f64>, p_cp_cog: &Vector3<f64>) -> Vector6<f64> {
    let f = w.fixed_rows::<3>(0).into_owned();
    let t = w.fixed_rows::<3>(3).into_owned() + p_cp_cog.cross(&f);
    Vector6::new(f.x, f.y, f.z, t.x, t.y, t.z)
}

/// Wrench about the CoG produced by the actual rotor forces, including the
/// `λ sinθ` components the linear allocation leaves out.
pub fn actual_wrench(
    frames: &FrameSet,
    model: &RobotModel,
    thrust: &[f64; 3],
    vectoring: &[f64; 3],
) -> Result<Vector6<f64>> {
    let mut w = Vector6::zeros();
    for i in 0..3 {
        let f_link = rotor_force_components(thrust[i], vectoring[i], model.links[i].rotor_tilt)?;
        let f = frames.link_rotations[i] * f_link;
        let t = frames.rotor_positions[i].cross(&f) + f * model.links[i].sigma();
        w += Vector6::new(f.x, f.y, f.z, t.x, t.y, t.z);
    }
    Ok(w)
}

/// The `(y, z)` pair recovered from a command, inverse of [`components_to_command`].
pub fn command_components(thrust: f64, phi: f64, theta: f64) -> Result<(f64, f64)> {
    let f = rotor_force_components(thrust, phi, theta)?;
    Ok((f.y, f.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward_kinematics, JointState, RobotModel};
    use nalgebra::{Isometry3, Rotation3, Translation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn rotor_force_basic_cases() {
        let f = rotor_force_components(1.0, 0.0, 0.0).unwrap();
        assert!((f - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
        let f = rotor_force_components(1.0, PI / 2.0, 0.0).unwrap();
        assert!((f - Vector3::new(0.0, -1.0, 0.0)).norm() < 1e-15);
        assert!(rotor_force_components(-0.1, 0.0, 0.0).is_err());
    }

    #[test]
    fn rotor_force_matches_spherical_evaluation() {
        let (lam, phi, theta) = (2.0, PI / 4.0, 0.179);
        let f = rotor_force_components(lam, phi, theta).unwrap();
        // axis: tilt θ toward link x, then rotate by φ about link x
        let axis = Rotation3::from_axis_angle(&Vector3::x_axis(), phi)
            * Rotation3::from_axis_angle(&Vector3::y_axis(), theta)
            * Vector3::z();
        assert!((f - axis * lam).norm() < 1e-14);
        assert!((f.norm() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn command_conversion_cases() {
        let tilts = [0.0; 3];
        let l = ThrustComponents(Vector6::new(0.0, 1.0, -1.0, 0.0, -0.5, 0.5));
        let d = components_to_command(&l, &tilts, 10.0).unwrap();
        assert!((d.command.thrust[0] - 1.0).abs() < 1e-15 && d.command.vectoring[0].abs() < 1e-15);
        assert!((d.command.thrust[1] - 1.0).abs() < 1e-15);
        assert!((d.command.vectoring[1] - PI / 2.0).abs() < 1e-15);

        let theta = 0.179;
        let d = components_to_command(&l, &[theta; 3], 10.0).unwrap();
        assert!((d.command.thrust[2] - 0.5f64.sqrt() / theta.cos()).abs() < 1e-14);
        assert!((d.command.vectoring[2] - PI / 4.0).abs() < 1e-14);
        let (y, z) = command_components(d.command.thrust[2], d.command.vectoring[2], theta).unwrap();
        assert!((y + 0.5).abs() < 1e-12 && (z - 0.5).abs() < 1e-12);
    }

    #[test]
    fn saturation_scales_uniformly_and_flags() {
        let l = ThrustComponents(Vector6::new(0.0, 30.0, 0.0, 10.0, -5.0, 5.0));
        let d = components_to_command(&l, &[0.0; 3], 26.5).unwrap();
        assert!(d.saturated);
        assert!((d.command.thrust[0] - 26.5).abs() < 1e-12);
        assert!((d.components.0 - l.0 * (26.5 / 30.0)).norm() < 1e-12);
        // direction of each rotor preserved
        assert!((d.command.vectoring[2] - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn tilt_near_half_pi_is_domain_error() {
        let l = ThrustComponents::zeros();
        assert!(components_to_command(&l, &[0.0, PI / 2.0, 0.0], 1.0).is_err());
    }

    fn single_rotor_frames() -> (FrameSet, RobotModel) {
        let mut model = RobotModel::prototype();
        for l in &mut model.links {
            l.drag_ratio = 0.0;
        }
        let mut fs = forward_kinematics(&model, &JointState::rolling(), &Isometry3::identity()).unwrap();
        fs.link_rotations = [Rotation3::identity(); 3];
        fs.rotor_positions[0] = Vector3::new(0.5, 0.0, 0.0);
        (fs, model)
    }

    #[test]
    fn hand_expanded_single_rotor() {
        let (fs, model) = single_rotor_frames();
        let q = build_allocation(&fs, &model, FrameTag::Cog).unwrap();
        let mut l = ThrustComponents::zeros();
        l.0[1] = 1.0;
        let w = q.apply(&l);
        // p × f = (0.5,0,0) × (0,0,1) = (0·1 − 0·0, 0·0 − 0.5·1, 0) = (0, −0.5, 0)
        let expected = Vector6::new(0.0, 0.0, 1.0, 0.0, -0.5, 0.0);
        assert!((w - expected).norm() < 1e-15);
        assert_eq!(q.apply(&ThrustComponents::zeros()), Vector6::zeros());
    }

    #[test]
    fn contact_allocation_requires_contact() {
        let (fs, model) = single_rotor_frames();
        assert!(matches!(
            build_allocation(&fs, &model, FrameTag::ContactPoint),
            Err(Error::Mode(_))
        ));
    }

    #[test]
    fn flight_round_trip_and_hover_feasibility() {
        let model = RobotModel::prototype();
        let fs = forward_kinematics(&model, &JointState::rolling(), &Isometry3::identity()).unwrap();
        let q = build_allocation(&fs, &model, FrameTag::Cog).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l0 = ThrustComponents(Vector6::from_fn(|_, _| rng.random_range(-5.0..5.0)));
        let w = q.apply(&l0);
        let t = WrenchTarget::new(w.fixed_rows::<3>(0).into(), w.fixed_rows::<3>(3).into(), FrameTag::Cog);
        let l = distribute_flight(&t, &q, DEFAULT_CONDITION_CAP).unwrap();
        assert!((l.0 - l0.0).abs().max() < 1e-9);

        let zero = WrenchTarget::new(Vector3::zeros(), Vector3::zeros(), FrameTag::Cog);
        assert_eq!(distribute_flight(&zero, &q, DEFAULT_CONDITION_CAP).unwrap().0, Vector6::zeros());

        let mg = model.total_mass() * model.gravity;
        let hover = WrenchTarget::new(Vector3::new(0.0, 0.0, mg), Vector3::zeros(), FrameTag::Cog);
        let l = distribute_flight(&hover, &q, DEFAULT_CONDITION_CAP).unwrap();
        for i in 0..3 {
            let lam = l.magnitude(i, model.links[i].rotor_tilt);
            assert!(lam > 0.0 && lam <= 26.5, "rotor {i}: {lam}");
        }
    }

    #[test]
    fn straight_chain_is_rejected_as_singular() {
        let model = RobotModel::prototype();
        let fs = forward_kinematics(&model, &JointState::new(0.0, 0.0), &Isometry3::identity()).unwrap();
        let q = build_allocation(&fs, &model, FrameTag::Cog).unwrap();
        let t = WrenchTarget::new(Vector3::z(), Vector3::zeros(), FrameTag::Cog);
        assert!(matches!(
            distribute_flight(&t, &q, DEFAULT_CONDITION_CAP),
            Err(Error::Allocation { .. })
        ));
    }

    #[test]
    fn contact_matrix_equals_shifted_cog_wrench() {
        let model = RobotModel::prototype();
        let base = Isometry3::from_parts(Translation3::new(0.0, 0.0, 0.4), UnitQuaternion::from_euler_angles(1.2, 0.1, -0.4));
        let fs = forward_kinematics(&model, &JointState::new(2.1, 2.05), &base).unwrap();
        let fs = crate::model::contact_point(&model, &fs).unwrap();
        let q_cog = build_allocation(&fs, &model, FrameTag::Cog).unwrap();
        let q_cp = build_allocation(&fs, &model, FrameTag::ContactPoint).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let l = ThrustComponents(Vector6::from_fn(|_, _| rng.random_range(-10.0..10.0)));
            let shifted = shift_wrench(&q_cog.apply(&l), fs.p_cp_cog.as_ref().unwrap());
            assert!((shifted - q_cp.apply(&l)).abs().max() < 1e-10);
        }
    }

    #[test]
    fn actual_wrench_differs_only_by_link_axis_components() {
        let model = RobotModel::prototype();
        let fs = forward_kinematics(&model, &JointState::rolling(), &Isometry3::identity()).unwrap();
        let q = build_allocation(&fs, &model, FrameTag::Cog).unwrap();
        let thrust = [10.0, 12.0, 9.0];
        let vectoring = [0.2, -0.4, 1.0];
        let mut l = ThrustComponents::zeros();
        let mut expected_gap = Vector6::zeros();
        for i in 0..3 {
            let theta = model.links[i].rotor_tilt;
            let (y, z) = command_components(thrust[i], vectoring[i], theta).unwrap();
            l.0[2 * i] = y;
            l.0[2 * i + 1] = z;
            let fx = fs.link_rotations[i] * Vector3::x() * (thrust[i] * theta.sin());
            let tx = fs.rotor_positions[i].cross(&fx) + fx * model.links[i].sigma();
            expected_gap += Vector6::new(fx.x, fx.y, fx.z, tx.x, tx.y, tx.z);
        }
        let gap = actual_wrench(&fs, &model, &thrust, &vectoring).unwrap() - q.apply(&l);
        assert!((gap - expected_gap).abs().max() < 1e-12);
    }
}
