//! Rigid-body simulation of the robot: Newton–Euler dynamics about the CoG with
//! actual rotor forces, first-order motor lag, gimbal rate limits and a single-point
//! rolling contact between the circular frame and a flat floor.
//!
//! Contact handling: while sticking, the accelerations and the contact force solve one
//! linear system together with the rolling-without-slipping constraint on the
//! material contact point. When the required friction leaves the cone the tangential
//! rows are replaced by Coulomb friction. A negative normal force lifts the body off;
//! touching down applies a plastic impulse that zeroes the contact-point velocity.
//! Lying flat on the frame (tilt below `rest_tilt`) is treated as resting until the
//! applied wrench tips the body up or lifts it.

pub mod log;
pub mod scenario;

use nalgebra::{Matrix3, SMatrix, SVector, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::allocation::{actual_wrench, ActuatorCommand};
use crate::math::{is_finite3, skew};
use crate::model::{
    forward_kinematics, inertia_at_cog, ring, ring_contact, FrameSet, JointState, Ring,
    RobotModel, ROLLING_TOLERANCE,
};
use crate::{Error, Result};

pub use log::{compute_metrics, LogRow, MetricsWindow, RunMetrics};
pub use scenario::{run_scenario, RunOutput, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSettings {
    /// Standard deviations of the measurement noise.
    pub position: f64,
    pub velocity: f64,
    pub attitude: f64,
    pub omega: f64,
}

impl NoiseSettings {
    pub fn none() -> Self {
        Self { position: 0.0, velocity: 0.0, attitude: 0.0, omega: 0.0 }
    }
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self { position: 1e-3, velocity: 5e-3, attitude: 2e-3, omega: 1e-2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    /// Physics step, s.
    pub dt: f64,
    /// Controller period, s; an integer multiple of `dt`.
    pub control_period: f64,
    /// First-order thrust time constant, s.
    pub motor_time_constant: f64,
    /// True floor friction coefficient.
    pub friction: f64,
    /// Coulomb yaw-friction torque per newton of normal force, m.
    pub yaw_friction: f64,
    /// Rolling-resistance torque per newton of normal force, m.
    pub rolling_resistance: f64,
    /// Angular speed over which the Coulomb torques ramp to full strength, rad/s.
    pub friction_smoothing: f64,
    /// Tilt below which the frame lies flat on the floor, rad.
    pub rest_tilt: f64,
    /// Tangential speed below which slipping ends, m/s.
    pub slip_speed_threshold: f64,
    pub joint_torque_limit: f64,
    pub noise: NoiseSettings,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            control_period: 1e-2,
            motor_time_constant: 0.05,
            friction: 0.6,
            yaw_friction: 0.02,
            rolling_resistance: 0.004,
            friction_smoothing: 0.05,
            rest_tilt: 0.02,
            slip_speed_threshold: 1e-3,
            joint_torque_limit: 6.8,
            noise: NoiseSettings::default(),
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt <= 0.01) {
            return Err(Error::Config(format!("physics dt {} outside (0, 0.01]", self.dt)));
        }
        let ratio = self.control_period / self.dt;
        if !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Config("control period must be an integer multiple of dt".into()));
        }
        if !(self.motor_time_constant >= 0.0) || !(self.friction >= 0.0) || !(self.rest_tilt >= 0.0) {
            return Err(Error::Config("negative actuator or contact parameter".into()));
        }
        Ok(())
    }

    pub fn control_decimation(&self) -> usize {
        (self.control_period / self.dt).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactState {
    Air,
    /// Rolling contact without slip.
    Stick,
    /// Sliding contact; friction opposes the unit tangential direction.
    Slip { direction: [f64; 2] },
    /// Lying flat on the frame.
    Resting,
}

impl ContactState {
    pub fn as_str(&self) -> &'static str {
        match self {
            ContactState::Air => "air",
            ContactState::Stick => "stick",
            ContactState::Slip { .. } => "slip",
            ContactState::Resting => "resting",
        }
    }

    pub fn in_contact(&self) -> bool {
        !matches!(self, ContactState::Air)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub t: f64,
    /// CoG position in {W}.
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Body orientation ({cog} to {W}).
    pub orientation: UnitQuaternion<f64>,
    /// Body-frame angular velocity.
    pub omega: Vector3<f64>,
    pub joints: JointState,
    /// Actual rotor thrusts, N.
    pub thrust: [f64; 3],
    /// Actual vectoring angles, rad.
    pub vectoring: [f64; 3],
    pub contact: ContactState,
}

impl SimState {
    pub fn airborne(position: Vector3<f64>, orientation: UnitQuaternion<f64>, joints: JointState) -> Self {
        Self {
            t: 0.0,
            position,
            velocity: Vector3::zeros(),
            orientation,
            omega: Vector3::zeros(),
            joints,
            thrust: [0.0; 3],
            vectoring: [0.0; 3],
            contact: ContactState::Air,
        }
    }

    /// At rest on the floor at horizontal position `(x, y)`, with the CoG height set
    /// by the contact geometry.
    pub fn on_ground(
        model: &RobotModel,
        settings: &SimSettings,
        x: f64,
        y: f64,
        orientation: UnitQuaternion<f64>,
        joints: JointState,
    ) -> Result<Self> {
        let geo = BodyGeometry::new(model, &joints)?;
        let ring = geo.ring.ok_or_else(|| Error::Mode("ground start needs the rolling configuration".into()))?;
        let rho = contact_kinematics(&ring, &orientation, &Vector3::zeros()).rho;
        let mut s = Self::airborne(Vector3::new(x, y, rho.z), orientation, joints);
        let tilt = crate::math::tilt_from_vertical(&orientation.to_rotation_matrix());
        s.contact = if tilt <= settings.rest_tilt { ContactState::Resting } else { ContactState::Stick };
        Ok(s)
    }

    pub fn is_finite(&self) -> bool {
        is_finite3(&self.position)
            && is_finite3(&self.velocity)
            && is_finite3(&self.omega)
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.thrust.iter().chain(&self.vectoring).all(|v| v.is_finite())
    }

    /// Height of the lowest frame point above the floor (negative when penetrating).
    pub fn clearance(&self, model: &RobotModel) -> Result<Option<f64>> {
        let geo = BodyGeometry::new(model, &self.joints)?;
        Ok(geo.ring.map(|ring| self.position.z - contact_kinematics(&ring, &self.orientation, &Vector3::zeros()).rho.z))
    }
}

/// External disturbance: a force at the CoG in {W} and a torque in {W}.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExternalWrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

/// Body-relative quantities that depend only on the joint angles.
#[derive(Debug, Clone)]
pub struct BodyGeometry {
    pub frames: FrameSet,
    pub inertia: Matrix3<f64>,
    pub inertia_inv: Matrix3<f64>,
    pub mass: f64,
    /// Present when the frames form the rolling circle.
    pub ring: Option<Ring>,
}

impl BodyGeometry {
    pub fn new(model: &RobotModel, joints: &JointState) -> Result<Self> {
        let frames = forward_kinematics(model, joints, &nalgebra::Isometry3::identity())?;
        let inertia = inertia_at_cog(model, joints)?;
        let inertia_inv = inertia
            .try_inverse()
            .ok_or_else(|| Error::Domain("singular body inertia".into()))?;
        let ring = ring(model, &frames, ROLLING_TOLERANCE).ok();
        Ok(Self { frames, inertia, inertia_inv, mass: model.total_mass(), ring })
    }
}

/// Contact-point geometry in {W}: `rho` is CoG minus contact point.
#[derive(Debug, Clone, Copy)]
struct ContactKinematics {
    rho: Vector3<f64>,
    rho_dot: Vector3<f64>,
    /// Ring normal in {W}.
    normal: Vector3<f64>,
}

fn contact_kinematics(ring: &Ring, q: &UnitQuaternion<f64>, omega_w: &Vector3<f64>) -> ContactKinematics {
    let rot = q.to_rotation_matrix();
    let contact = ring_contact(ring, &rot);
    let rho = -(rot * contact.point_body);
    let n = rot * ring.normal;
    let c = rot * ring.center;
    let d = rot * contact.direction_body;
    let s = (1.0 - n.z * n.z).max(0.0).sqrt();
    let d_dot = if contact.unique && s > 1e-9 {
        let n_dot = omega_w.cross(&n);
        let u_dot = n * n_dot.z + n_dot * n.z;
        (u_dot - d * d.dot(&u_dot)) / s
    } else {
        omega_w.cross(&d)
    };
    let rho_dot = -omega_w.cross(&c) - d_dot * ring.radius;
    ContactKinematics { rho, rho_dot, normal: n }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ContactForce {
    /// Contact force on the body, {W}.
    pub force: Vector3<f64>,
    /// Yaw friction and rolling resistance torque, {W}.
    pub torque: Vector3<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Kin {
    r: Vector3<f64>,
    v: Vector3<f64>,
    q: UnitQuaternion<f64>,
    w: Vector3<f64>,
}

struct Deriv {
    r: Vector3<f64>,
    v: Vector3<f64>,
    q: nalgebra::Vector4<f64>,
    w: Vector3<f64>,
}

struct Inputs<'a> {
    geo: &'a BodyGeometry,
    settings: &'a SimSettings,
    /// Rotor wrench about the CoG, {cog}.
    rotor: Vector6<f64>,
    ext: ExternalWrench,
    gravity: f64,
}

fn quat_rate(q: &UnitQuaternion<f64>, w: &Vector3<f64>) -> nalgebra::Vector4<f64> {
    let wq = nalgebra::Quaternion::new(0.0, w.x, w.y, w.z);
    (q.quaternion() * wq).coords * 0.5
}

/// Applied force (world) and torque (body) excluding contact.
fn applied(k: &Kin, inp: &Inputs) -> (Vector3<f64>, Vector3<f64>) {
    let rot = k.q.to_rotation_matrix();
    let f_rotor = Vector3::new(inp.rotor[0], inp.rotor[1], inp.rotor[2]);
    let t_rotor = Vector3::new(inp.rotor[3], inp.rotor[4], inp.rotor[5]);
    let force = rot * f_rotor + inp.ext.force - Vector3::new(0.0, 0.0, inp.geo.mass * inp.gravity);
    let torque = t_rotor + rot.inverse() * inp.ext.torque;
    (force, torque)
}

/// Accelerations and contact force for a contact mode. Unknowns: `r̈` (W), `ω̇`
/// (body) and `f_c` (W).
fn contact_solve(
    k: &Kin,
    inp: &Inputs,
    mode: &ContactState,
) -> (Vector3<f64>, Vector3<f64>, ContactForce) {
    let geo = inp.geo;
    let (force, torque) = applied(k, inp);
    let gyro = k.w.cross(&(geo.inertia * k.w));
    let rot = k.q.to_rotation_matrix();
    let rot_m = *rot.matrix();
    let Some(ring) = geo.ring.as_ref().filter(|_| mode.in_contact()) else {
        return (force / geo.mass, geo.inertia_inv * (torque - gyro), ContactForce::default());
    };
    let w_w = rot * k.w;
    let ck = contact_kinematics(ring, &k.q, &w_w);
    let s = inp.settings;
    let smooth = |x: f64| (x / s.friction_smoothing.max(1e-9)).tanh();
    // Coulomb torques proportional to the normal force
    let k_vec = -Vector3::z() * s.yaw_friction * smooth(w_w.z) - ck.normal * s.rolling_resistance * smooth(w_w.dot(&ck.normal));

    let mut a = SMatrix::<f64, 9, 9>::zeros();
    let mut b = SVector::<f64, 9>::zeros();
    // m r̈ − f = F
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&(Matrix3::identity() * geo.mass));
    a.fixed_view_mut::<3, 3>(0, 6).copy_from(&(-Matrix3::identity()));
    b.fixed_rows_mut::<3>(0).copy_from(&force);
    // I ω̇ + Rᵀ[ρ×] f − Rᵀ k f_z = τ − ω × Iω
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&geo.inertia);
    let coupling = rot_m.transpose() * skew(&ck.rho) - rot_m.transpose() * k_vec * Vector3::z().transpose();
    a.fixed_view_mut::<3, 3>(3, 6).copy_from(&coupling);
    b.fixed_rows_mut::<3>(3).copy_from(&(torque - gyro));
    // r̈ + [ρ×] R ω̇ = ω × ρ̇
    a.fixed_view_mut::<3, 3>(6, 0).copy_from(&Matrix3::identity());
    a.fixed_view_mut::<3, 3>(6, 3).copy_from(&(skew(&ck.rho) * rot_m));
    b.fixed_rows_mut::<3>(6).copy_from(&w_w.cross(&ck.rho_dot));
    if let ContactState::Slip { direction } = mode {
        // tangential rows become f_t + μ t̂ f_z = 0
        for (row, t) in [(6usize, direction[0]), (7, direction[1])] {
            a.row_mut(row).fill(0.0);
            a[(row, row)] = 1.0;
            a[(row, 8)] = s.friction * t;
            b[row] = 0.0;
        }
    }
    let x = a.lu().solve(&b).unwrap_or_else(SVector::zeros);
    let acc = Vector3::new(x[0], x[1], x[2]);
    let alpha = Vector3::new(x[3], x[4], x[5]);
    let f = Vector3::new(x[6], x[7], x[8]);
    (acc, alpha, ContactForce { force: f, torque: k_vec * f.z })
}

fn derivative(k: &Kin, inp: &Inputs, mode: &ContactState) -> Deriv {
    if matches!(mode, ContactState::Resting) {
        return Deriv { r: Vector3::zeros(), v: Vector3::zeros(), q: nalgebra::Vector4::zeros(), w: Vector3::zeros() };
    }
    let (acc, alpha, _) = contact_solve(k, inp, mode);
    Deriv { r: k.v, v: acc, q: quat_rate(&k.q, &k.w), w: alpha }
}

fn advance(k: &Kin, d: &Deriv, h: f64) -> Kin {
    Kin {
        r: k.r + d.r * h,
        v: k.v + d.v * h,
        q: UnitQuaternion::new_unchecked(nalgebra::Quaternion::from(k.q.coords + d.q * h)),
        w: k.w + d.w * h,
    }
}

/// Events raised by a physics step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactEvent {
    LiftOff,
    Landing,
    SlipStart,
    SlipEnd,
    Rest,
    TipUp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub contact_force: ContactForce,
    /// Rotor wrench about the CoG in {cog} actually applied during the step.
    pub rotor_wrench: Vector6<f64>,
    /// Floor penetration after the step, m (zero when clear).
    pub penetration: f64,
    /// Tangential speed of the material contact point, m/s.
    pub contact_speed: f64,
    pub slipping: bool,
    pub event: Option<ContactEvent>,
}

fn slip_velocity(k: &Kin, ck: &ContactKinematics) -> Vector3<f64> {
    let w_w = k.q * k.w;
    let v_c = k.v - w_w.cross(&ck.rho);
    Vector3::new(v_c.x, v_c.y, 0.0)
}

fn project_stick(k: &mut Kin, ring: &Ring, tangential: bool) {
    let w_w = k.q * k.w;
    let ck = contact_kinematics(ring, &k.q, &w_w);
    k.r.z = ck.rho.z;
    let v_body = w_w.cross(&ck.rho);
    if tangential {
        k.v = v_body;
    } else {
        k.v.z = v_body.z;
    }
}

/// Advances the state by `dt` with the actuator command held constant.
pub fn step(
    model: &RobotModel,
    settings: &SimSettings,
    state: &SimState,
    command: &ActuatorCommand,
    ext: &ExternalWrench,
    dt: f64,
) -> Result<(SimState, StepInfo)> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(Error::Domain(format!("dt {dt} outside (0, 0.01]")));
    }
    let geo = BodyGeometry::new(model, &state.joints)?;
    let rotor = actual_wrench(&geo.frames, model, &state.thrust, &state.vectoring)?;
    let inp = Inputs { geo: &geo, settings, rotor, ext: *ext, gravity: model.gravity };
    let mut mode = state.contact;
    if mode.in_contact() && geo.ring.is_none() {
        return Err(Error::Mode("ground contact requires the rolling configuration".into()));
    }
    let k0 = Kin { r: state.position, v: state.velocity, q: state.orientation, w: state.omega };
    let mut event = None;

    if matches!(mode, ContactState::Resting) {
        let (_, alpha, cf) = contact_solve(&k0, &inp, &ContactState::Stick);
        let ring = geo.ring.as_ref().expect("checked above");
        let n = state.orientation * ring.normal;
        let tip_rate = (state.orientation * alpha).cross(&n).z;
        if cf.force.z < 0.0 {
            mode = ContactState::Air;
            event = Some(ContactEvent::LiftOff);
        } else if tip_rate < 0.0 {
            mode = ContactState::Stick;
            event = Some(ContactEvent::TipUp);
        }
    }

    let d1 = derivative(&k0, &inp, &mode);
    let k1 = advance(&k0, &d1, dt / 2.0);
    let d2 = derivative(&k1, &inp, &mode);
    let k2 = advance(&k0, &d2, dt / 2.0);
    let d3 = derivative(&k2, &inp, &mode);
    let k3 = advance(&k0, &d3, dt);
    let d4 = derivative(&k3, &inp, &mode);
    let comb = |a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>, d: Vector3<f64>| (a + (b + c) * 2.0 + d) * (dt / 6.0);
    let mut k = Kin {
        r: k0.r + comb(d1.r, d2.r, d3.r, d4.r),
        v: k0.v + comb(d1.v, d2.v, d3.v, d4.v),
        q: UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(
            k0.q.coords + (d1.q + (d2.q + d3.q) * 2.0 + d4.q) * (dt / 6.0),
        )),
        w: k0.w + comb(d1.w, d2.w, d3.w, d4.w),
    };

    // constraint projection and mode transitions at the end of the step
    let mut contact_force = ContactForce::default();
    let mut contact_speed = 0.0;
    let mut penetration = 0.0;
    if let Some(ring) = geo.ring.as_ref() {
        match mode {
            ContactState::Air => {
                let ck = contact_kinematics(ring, &k.q, &(k.q * k.w));
                let clearance = k.r.z - ck.rho.z;
                if clearance <= 0.0 {
                    // plastic impact: K P = −v_c at the contact point
                    let w_w = k.q * k.w;
                    let rot = k.q.to_rotation_matrix();
                    let inv_w = rot.matrix() * geo.inertia_inv * rot.matrix().transpose();
                    let rho_x = skew(&ck.rho);
                    let kmat = Matrix3::identity() / geo.mass - rho_x * inv_w * rho_x;
                    let v_c = k.v - w_w.cross(&ck.rho);
                    if let Some(p) = kmat.lu().solve(&(-v_c)) {
                        k.v += p / geo.mass;
                        k.w -= rot.inverse() * (inv_w * ck.rho.cross(&p));
                    }
                    mode = ContactState::Stick;
                    event = Some(ContactEvent::Landing);
                    project_stick(&mut k, ring, true);
                }
            }
            ContactState::Stick | ContactState::Slip { .. } => {
                project_stick(&mut k, ring, matches!(mode, ContactState::Stick));
            }
            ContactState::Resting => {}
        }

        if mode.in_contact() && !matches!(mode, ContactState::Resting) {
            let (_, _, cf) = contact_solve(&k, &inp, &ContactState::Stick);
            let w_w = k.q * k.w;
            let ck = contact_kinematics(ring, &k.q, &w_w);
            let v_slip = slip_velocity(&k, &ck);
            let ft = Vector3::new(cf.force.x, cf.force.y, 0.0);
            let mu = settings.friction;
            match mode {
                ContactState::Stick => {
                    if cf.force.z < 0.0 {
                        mode = ContactState::Air;
                        event = Some(ContactEvent::LiftOff);
                    } else if ft.norm() > mu * cf.force.z * (1.0 + 1e-9) {
                        let t = -ft / ft.norm();
                        mode = ContactState::Slip { direction: [t.x, t.y] };
                        event = Some(ContactEvent::SlipStart);
                    }
                }
                ContactState::Slip { .. } => {
                    if cf.force.z < 0.0 {
                        mode = ContactState::Air;
                        event = Some(ContactEvent::LiftOff);
                    } else if v_slip.norm() < settings.slip_speed_threshold && ft.norm() <= mu * cf.force.z {
                        mode = ContactState::Stick;
                        event = Some(ContactEvent::SlipEnd);
                        project_stick(&mut k, ring, true);
                    } else if v_slip.norm() >= settings.slip_speed_threshold {
                        let t = v_slip / v_slip.norm();
                        mode = ContactState::Slip { direction: [t.x, t.y] };
                    }
                }
                _ => {}
            }
            let tilt = crate::math::tilt_from_vertical(&k.q.to_rotation_matrix());
            let n = k.q * ring.normal;
            let tilt_rate = -(w_w.cross(&n)).z;
            if mode.in_contact() && tilt <= settings.rest_tilt && tilt_rate <= 0.0 {
                mode = ContactState::Resting;
                event = Some(ContactEvent::Rest);
                k.v = Vector3::zeros();
                k.w = Vector3::zeros();
            }
            if mode.in_contact() {
                let (_, _, cf) = contact_solve(&k, &inp, &mode);
                contact_force = cf;
                let ck = contact_kinematics(ring, &k.q, &(k.q * k.w));
                contact_speed = slip_velocity(&k, &ck).norm();
            }
        } else if matches!(mode, ContactState::Resting) {
            let (_, _, cf) = contact_solve(&k, &inp, &ContactState::Stick);
            contact_force = cf;
        }
        let ck = contact_kinematics(ring, &k.q, &Vector3::zeros());
        penetration = (ck.rho.z - k.r.z).max(0.0);
    }

    // actuators: exact first-order lag on thrust, rate-limited gimbals
    let decay = if settings.motor_time_constant > 0.0 { (-dt / settings.motor_time_constant).exp() } else { 0.0 };
    let max_step = model.vectoring_speed_max * dt;
    let thrust = std::array::from_fn(|i| {
        (command.thrust[i] + (state.thrust[i] - command.thrust[i]) * decay).clamp(0.0, model.thrust_max)
    });
    let vectoring = std::array::from_fn(|i| {
        let diff = crate::math::wrap_angle(command.vectoring[i] - state.vectoring[i]);
        crate::math::wrap_angle(state.vectoring[i] + diff.clamp(-max_step, max_step))
    });

    let next = SimState {
        t: state.t + dt,
        position: k.r,
        velocity: k.v,
        orientation: k.q,
        omega: k.w,
        joints: state.joints,
        thrust,
        vectoring,
        contact: mode,
    };
    if !next.is_finite() {
        return Err(Error::Diverged { t: next.t, reason: "non-finite state".into() });
    }
    Ok((
        next,
        StepInfo {
            contact_force,
            rotor_wrench: rotor,
            penetration,
            contact_speed,
            slipping: matches!(mode, ContactState::Slip { .. }),
            event,
        },
    ))
}

/// Static joint torques about the joint axes from the distal links' gravity and
/// rotor forces, N·m.
pub fn joint_torques(model: &RobotModel, state: &SimState) -> Result<[f64; 2]> {
    let fs = forward_kinematics(model, &state.joints, &nalgebra::Isometry3::identity())?;
    let g_body = state.orientation.inverse() * Vector3::new(0.0, 0.0, -model.gravity);
    let mut out = [0.0; 2];
    for (j, link) in [(0usize, 0usize), (1, 2)] {
        // joint 1 sits at link 2's origin, joint 2 at link 3's origin
        let pivot = if j == 0 { fs.link_origins[1] } else { fs.link_origins[2] };
        let f_rotor = fs.link_rotations[link]
            * crate::allocation::rotor_force_components(state.thrust[link], state.vectoring[link], model.links[link].rotor_tilt)?;
        let m = (fs.rotor_positions[link] - pivot).cross(&f_rotor)
            + (fs.link_coms[link] - pivot).cross(&(g_body * model.links[link].mass));
        out[j] = m.z;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rot_x;

    fn quiet() -> SimSettings {
        SimSettings { noise: NoiseSettings::none(), ..Default::default() }
    }

    #[test]
    fn free_fall_matches_closed_form() {
        let model = RobotModel::prototype();
        let s = quiet();
        let mut st = SimState::airborne(Vector3::new(0.0, 0.0, 10.0), UnitQuaternion::identity(), JointState::rolling());
        for _ in 0..1000 {
            st = step(&model, &s, &st, &ActuatorCommand::zero(), &ExternalWrench::default(), 1e-3).unwrap().0;
        }
        assert!((10.0 - st.position.z - 4.905).abs() < 1e-6, "{}", st.position.z);
    }

    #[test]
    fn vertical_stance_carries_its_weight() {
        let model = RobotModel::prototype();
        let s = quiet();
        let q = UnitQuaternion::from_rotation_matrix(&rot_x(std::f64::consts::FRAC_PI_2));
        let st = SimState::on_ground(&model, &s, 0.0, 0.0, q, JointState::rolling()).unwrap();
        assert_eq!(st.contact, ContactState::Stick);
        let (_, info) = step(&model, &s, &st, &ActuatorCommand::zero(), &ExternalWrench::default(), 1e-3).unwrap();
        let mg = model.total_mass() * model.gravity;
        assert!((info.contact_force.force.z - mg).abs() < 1e-6);
        assert!(st.position.z > 0.39 && st.position.z < 0.41);
    }

    #[test]
    fn lying_flat_stays_put() {
        let model = RobotModel::prototype();
        let s = quiet();
        let q = UnitQuaternion::from_rotation_matrix(&rot_x(0.01));
        let mut st = SimState::on_ground(&model, &s, 0.0, 0.0, q, JointState::rolling()).unwrap();
        assert_eq!(st.contact, ContactState::Resting);
        let p0 = st.position;
        for _ in 0..100 {
            st = step(&model, &s, &st, &ActuatorCommand::zero(), &ExternalWrench::default(), 1e-3).unwrap().0;
        }
        assert_eq!(st.contact, ContactState::Resting);
        assert_eq!(st.position, p0);
    }
}
