//! Flight and ground controllers, the locomotion mode machine and the final
//! distribution to actuator commands.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::allocation::{
    build_allocation, components_to_command, distribute_flight, ActuatorCommand, AllocationMatrix,
    FrameTag, ThrustComponents, WrenchTarget, DEFAULT_CONDITION_CAP,
};
use crate::math::{is_finite3, tilt_from_vertical, vee, wrap_angle};
use crate::model::{
    contact_point, forward_kinematics_at_cog, inertia_at_cog, shift_inertia, JointState, RobotModel,
};
use crate::qp::{solve_warm, QpProblem, QpSettings, QpStatus};
use crate::{Error, Result};

/// Below this commanded thrust (N) a rotor counts as idle.
const IDLE_THRUST: f64 = 0.1;

/// Diagonal PID gains for one loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    pub kd: [f64; 3],
    /// Per-axis bound on the integrator state.
    pub integral_limit: [f64; 3],
}

impl PidGains {
    pub fn uniform(kp: f64, ki: f64, kd: f64, limit: f64) -> Self {
        Self { kp: [kp; 3], ki: [ki; 3], kd: [kd; 3], integral_limit: [limit; 3] }
    }

    pub fn zero() -> Self {
        Self::uniform(0.0, 0.0, 0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.kp.iter().chain(&self.ki).chain(&self.kd);
        if all.clone().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::Config("PID gains must be finite and non-negative".into()));
        }
        if self.integral_limit.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("integrator limits must be positive".into()));
        }
        Ok(())
    }

    /// `K_p e + K_i ∫e + K_d ė`.
    pub fn apply(&self, e: &Vector3<f64>, integral: &Vector3<f64>, de: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|k, _| self.kp[k] * e[k] + self.ki[k] * integral[k] + self.kd[k] * de[k])
    }

    fn clamp_integral(&self, v: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|k, _| v[k].clamp(-self.integral_limit[k], self.integral_limit[k]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub attitude: PidGains,
    pub position: PidGains,
}

impl GainSet {
    pub fn validate(&self) -> Result<()> {
        self.attitude.validate()?;
        self.position.validate()
    }

    pub fn default_flight() -> Self {
        Self {
            attitude: PidGains::uniform(40.0, 4.0, 8.0, 0.5),
            position: PidGains { kp: [4.0, 4.0, 6.0], ki: [2.0, 2.0, 1.0], kd: [3.5, 3.5, 4.5], integral_limit: [3.0; 3] },
        }
    }

    /// Soft enough that the torque needed to rise stays within what upward thrust can
    /// give under `f_z ≤ mg`.
    pub fn default_standing() -> Self {
        Self { attitude: PidGains::uniform(6.0, 0.5, 7.0, 0.5), position: PidGains::zero() }
    }

    pub fn default_rolling() -> Self {
        Self { attitude: PidGains::uniform(10.0, 1.0, 10.0, 0.5), position: PidGains::zero() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocomotionMode {
    Flight,
    Standing,
    Rolling,
}

impl LocomotionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LocomotionMode::Flight => "flight",
            LocomotionMode::Standing => "standing",
            LocomotionMode::Rolling => "rolling",
        }
    }

    pub fn is_ground(self) -> bool {
        self != LocomotionMode::Flight
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSettings {
    pub flight: GainSet,
    pub standing: GainSet,
    pub rolling: GainSet,
    /// Friction coefficient assumed by the ground QPs.
    pub mu: f64,
    /// Band around the vertical stance that switches standing to rolling, rad.
    pub phi_alpha: f64,
    /// Extra band required to leave rolling, rad.
    pub hysteresis: f64,
    /// Margin that realises the strict ground inequalities, N.
    pub eps_c: f64,
    pub condition_cap: f64,
    /// Weight on the torque slack of the fallback ground QP, used when the exact torque
    /// target cannot be met within the contact constraints.
    pub torque_slack_weight: f64,
    pub qp: QpSettings,
}

impl Default for ControlSettings {
    fn default() -> Self {
        Self {
            flight: GainSet::default_flight(),
            standing: GainSet::default_standing(),
            rolling: GainSet::default_rolling(),
            mu: 0.6,
            phi_alpha: 0.2,
            hysteresis: 0.05,
            eps_c: 1e-6,
            condition_cap: DEFAULT_CONDITION_CAP,
            torque_slack_weight: 1e4,
            qp: QpSettings::default(),
        }
    }
}

impl ControlSettings {
    pub fn validate(&self) -> Result<()> {
        self.flight.validate()?;
        self.standing.validate()?;
        self.rolling.validate()?;
        if !(self.phi_alpha > 0.0) || !(self.hysteresis >= 0.0) {
            return Err(Error::Config("phi_alpha must be positive and hysteresis non-negative".into()));
        }
        if !(self.mu >= 0.0) || !(self.eps_c >= 0.0) || !(self.condition_cap > 1.0)
            || !(self.torque_slack_weight > 0.0)
        {
            return Err(Error::Config("mu, eps_c must be non-negative, condition_cap > 1 and torque_slack_weight positive".into()));
        }
        Ok(())
    }

    pub fn gains(&self, mode: LocomotionMode) -> &GainSet {
        match mode {
            LocomotionMode::Flight => &self.flight,
            LocomotionMode::Standing => &self.standing,
            LocomotionMode::Rolling => &self.rolling,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttitudeError {
    pub e_r: Vector3<f64>,
    pub e_omega: Vector3<f64>,
    /// Set when the rotation error is within 1e-6 rad of π, where `e_R` vanishes.
    pub degenerate: bool,
}

/// `e_R = ½[RᵀR_d − R_dᵀR]^∨`, `e_ω = RᵀR_d ω_d − ω`.
pub fn attitude_error(
    r: &Rotation3<f64>,
    r_des: &Rotation3<f64>,
    omega: &Vector3<f64>,
    omega_des: &Vector3<f64>,
) -> AttitudeError {
    let rt_rd = r.matrix().transpose() * r_des.matrix();
    let e_r = 0.5 * vee(&(rt_rd - rt_rd.transpose()));
    let cos_angle = ((rt_rd.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    AttitudeError {
        e_r,
        e_omega: rt_rd * omega_des - omega,
        degenerate: cos_angle.acos() > std::f64::consts::PI - 1e-6,
    }
}

/// `τ = I(K_p e_R + K_i ∫e_R + K_d e_ω) + ω × Iω`.
pub fn flight_torque(
    err: &AttitudeError,
    integral: &Vector3<f64>,
    inertia: &Matrix3<f64>,
    omega: &Vector3<f64>,
    gains: &PidGains,
) -> Vector3<f64> {
    inertia * gains.apply(&err.e_r, integral, &err.e_omega) + omega.cross(&(inertia * omega))
}

/// `f = m Rᵀ(K_p e_r + K_i ∫e_r + K_d ė_r + g e_z)` in {cog}, where the `g e_z` term
/// is the constant gravity bias.
pub fn flight_force(
    e_pos: &Vector3<f64>,
    integral: &Vector3<f64>,
    e_vel: &Vector3<f64>,
    gains: &PidGains,
    r: &Rotation3<f64>,
    mass: f64,
    gravity: f64,
) -> Vector3<f64> {
    let acc = gains.apply(e_pos, integral, e_vel) + Vector3::new(0.0, 0.0, gravity);
    r.inverse() * acc * mass
}

/// Torque about the contact point, {cp} axes:
/// `τ = I_cp(PID) + ω × I_cp ω + p_cp_cog × m Rᵀ g`, with `g = (0, 0, g)`.
#[allow(clippy::too_many_arguments)]
pub fn ground_torque(
    err: &AttitudeError,
    integral: &Vector3<f64>,
    inertia_cp: &Matrix3<f64>,
    omega: &Vector3<f64>,
    p_cp_cog: &Vector3<f64>,
    r: &Rotation3<f64>,
    mass: f64,
    gravity: f64,
    gains: &PidGains,
) -> Vector3<f64> {
    let g_body = r.inverse() * Vector3::new(0.0, 0.0, gravity);
    inertia_cp * gains.apply(&err.e_r, integral, &err.e_omega)
        + omega.cross(&(inertia_cp * omega))
        + p_cp_cog.cross(&(g_body * mass))
}

/// Standing QP: minimise `‖λ′‖²` subject to `Q′_rot,cp λ′ = τ`, the friction box
/// `|f_x|, |f_y| ≤ μ(mg − f_z)` and `f_z ≤ mg − ε_c`, where `f = R Q′_trans,cp λ′` is
/// the thrust force in world axes.
pub fn build_standing_qp(
    tau_cp: &Vector3<f64>,
    q_cp: &AllocationMatrix,
    rotation: &Rotation3<f64>,
    mass: f64,
    gravity: f64,
    mu: f64,
    eps_c: f64,
) -> Result<QpProblem> {
    if q_cp.frame != FrameTag::ContactPoint {
        return Err(Error::Mode("ground QP needs the contact-point allocation".into()));
    }
    let rot = q_cp.rotational();
    let trans = rotation.matrix() * q_cp.translational();
    let mg = mass * gravity;
    let fx = trans.row(0);
    let fy = trans.row(1);
    let fz = trans.row(2);
    let rows = [fx + fz * mu, -fx + fz * mu, fy + fz * mu, -fy + fz * mu, fz.into_owned()];
    let mut a_in = DMatrix::zeros(5, 6);
    for (i, r) in rows.iter().enumerate() {
        a_in.row_mut(i).copy_from(r);
    }
    let upper = DVector::from_vec(vec![mu * mg, mu * mg, mu * mg, mu * mg, mg - eps_c]);
    QpProblem::new(
        DMatrix::identity(6, 6) * 2.0,
        DVector::zeros(6),
        DMatrix::from_iterator(3, 6, rot.iter().copied()),
        DVector::from_column_slice(tau_cp.as_slice()),
        a_in,
        DVector::from_element(5, f64::NEG_INFINITY),
        upper,
    )
}

/// Rolling QP: the standing QP plus `λ_{i,y} ≤ −ε_c`, keeping every rotor turned
/// outward (`φ_i ∈ (0, π)`).
pub fn build_rolling_qp(
    tau_cp: &Vector3<f64>,
    q_cp: &AllocationMatrix,
    rotation: &Rotation3<f64>,
    mass: f64,
    gravity: f64,
    mu: f64,
    eps_c: f64,
) -> Result<QpProblem> {
    let base = build_standing_qp(tau_cp, q_cp, rotation, mass, gravity, mu, eps_c)?;
    let m = base.a_in.nrows();
    let mut a_in = DMatrix::zeros(m + 3, 6);
    a_in.rows_mut(0, m).copy_from(&base.a_in);
    let mut lower = DVector::from_element(m + 3, f64::NEG_INFINITY);
    let mut upper = DVector::zeros(m + 3);
    upper.rows_mut(0, m).copy_from(&base.upper);
    lower.rows_mut(0, m).copy_from(&base.lower);
    for i in 0..3 {
        a_in[(m + i, 2 * i)] = 1.0;
        upper[m + i] = -eps_c;
    }
    QpProblem::new(base.p, base.q, base.a_eq, base.b_eq, a_in, lower, upper)
}

/// Soft-torque variant of a ground QP: the torque equality gains a slack `s` costed at
/// `weight·‖s‖²`. Always feasible, since `λ′ = 0` satisfies every inequality except the
/// rolling rows, which only need small outward components.
pub fn relax_torque(problem: &QpProblem, weight: f64) -> Result<QpProblem> {
    let n = problem.n();
    let me = problem.a_eq.nrows();
    let mut p = DMatrix::zeros(n + me, n + me);
    p.view_mut((0, 0), (n, n)).copy_from(&problem.p);
    p.view_mut((n, n), (me, me)).fill_diagonal(2.0 * weight);
    let mut q = DVector::zeros(n + me);
    q.rows_mut(0, n).copy_from(&problem.q);
    let mut a_eq = DMatrix::zeros(me, n + me);
    a_eq.view_mut((0, 0), (me, n)).copy_from(&problem.a_eq);
    a_eq.view_mut((0, n), (me, me)).fill_diagonal(1.0);
    let mi = problem.a_in.nrows();
    let mut a_in = DMatrix::zeros(mi, n + me);
    a_in.view_mut((0, 0), (mi, n)).copy_from(&problem.a_in);
    QpProblem::new(p, q, a_eq, problem.b_eq.clone(), a_in, problem.lower.clone(), problem.upper.clone())
}

/// Next locomotion mode. `ground` is the scenario's flight/ground command and `tilt`
/// the angle of the body z axis from vertical (π/2 when standing).
pub fn update_mode(
    current: LocomotionMode,
    tilt: f64,
    ground: bool,
    phi_alpha: f64,
    hysteresis: f64,
) -> LocomotionMode {
    use LocomotionMode::*;
    if !ground {
        return Flight;
    }
    let off = (tilt - std::f64::consts::FRAC_PI_2).abs();
    match current {
        Flight => Standing,
        Standing if off < phi_alpha => Rolling,
        Rolling if off > phi_alpha + hysteresis => Standing,
        m => m,
    }
}

/// Sensor snapshot consumed by [`control_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    /// Body-frame angular velocity.
    pub omega: Vector3<f64>,
    pub joints: JointState,
}

impl Measurement {
    pub fn is_finite(&self) -> bool {
        is_finite3(&self.position)
            && is_finite3(&self.velocity)
            && is_finite3(&self.omega)
            && self.rotation.matrix().iter().all(|v| v.is_finite())
            && self.joints.q.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Targets {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    /// Body-frame angular velocity target.
    pub omega: Vector3<f64>,
    /// Scenario command: on the ground (`true`) or airborne.
    pub ground: bool,
}

impl Targets {
    pub fn hold(position: Vector3<f64>, rotation: Rotation3<f64>, ground: bool) -> Self {
        Self { position, velocity: Vector3::zeros(), rotation, omega: Vector3::zeros(), ground }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub mode: LocomotionMode,
    pub attitude_integral: Vector3<f64>,
    pub position_integral: Vector3<f64>,
    pub last_feasible: ThrustComponents,
    pub last_command: ActuatorCommand,
    /// Stacked duals of the last solved ground QP, used to warm-start the next one.
    warm: Option<(DVector<f64>, DVector<f64>)>,
}

impl ControllerState {
    pub fn new(mode: LocomotionMode, command: ActuatorCommand) -> Self {
        Self {
            mode,
            attitude_integral: Vector3::zeros(),
            position_integral: Vector3::zeros(),
            last_feasible: ThrustComponents::zeros(),
            last_command: command,
            warm: None,
        }
    }

    fn reset_integrators(&mut self) {
        self.attitude_integral = Vector3::zeros();
        self.position_integral = Vector3::zeros();
        self.warm = None;
    }
}

/// Per-step record appended to the run log.
#[derive(Debug, Clone, PartialEq)]
pub struct Telemetry {
    pub mode: LocomotionMode,
    pub attitude: AttitudeError,
    pub position_error: Vector3<f64>,
    /// Wrench target about the CoG (flight) or the contact point (ground).
    pub wrench: Vector6<f64>,
    pub components: ThrustComponents,
    pub qp_status: Option<QpStatus>,
    pub saturated: bool,
    /// The pipeline failed and the last feasible `λ′` was reused.
    pub degraded: bool,
    pub mode_switched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub command: ActuatorCommand,
    pub telemetry: Telemetry,
}

/// Slews each vectoring angle towards its target by at most `rate·dt`, along the
/// shorter arc.
pub fn rate_limit_vectoring(previous: &[f64; 3], target: &[f64; 3], rate: f64, dt: f64) -> [f64; 3] {
    let step = rate * dt;
    std::array::from_fn(|i| wrap_angle(previous[i] + wrap_angle(target[i] - previous[i]).clamp(-step, step)))
}

/// One control update: errors, wrench target, distribution and actuator commands.
pub fn control_step(
    state: &mut ControllerState,
    model: &RobotModel,
    settings: &ControlSettings,
    meas: &Measurement,
    targets: &Targets,
    dt: f64,
) -> Result<ControlOutput> {
    if !meas.is_finite() {
        return Err(Error::Domain("non-finite measurement".into()));
    }
    let tilt = tilt_from_vertical(&meas.rotation);
    let mode = update_mode(state.mode, tilt, targets.ground, settings.phi_alpha, settings.hysteresis);
    let mode_switched = mode != state.mode;
    if mode_switched {
        state.reset_integrators();
        state.mode = mode;
    }
    let gains = settings.gains(mode);
    let mass = model.total_mass();
    let err = attitude_error(&meas.rotation, &targets.rotation, &meas.omega, &targets.omega);
    let position_error = targets.position - meas.position;
    state.attitude_integral = gains.attitude.clamp_integral(&(state.attitude_integral + err.e_r * dt));
    if mode == LocomotionMode::Flight {
        state.position_integral = gains.position.clamp_integral(&(state.position_integral + position_error * dt));
    }

    let mut qp_status = None;
    let mut torque_relaxed = false;
    let attempt: Result<(Vector6<f64>, ThrustComponents)> = (|| {
        let fs = forward_kinematics_at_cog(model, &meas.joints, &meas.rotation, &meas.position)?;
        let i_cog = inertia_at_cog(model, &meas.joints)?;
        if mode == LocomotionMode::Flight {
            let tau = flight_torque(&err, &state.attitude_integral, &i_cog, &meas.omega, &gains.attitude);
            let f = flight_force(
                &position_error,
                &state.position_integral,
                &(targets.velocity - meas.velocity),
                &gains.position,
                &meas.rotation,
                mass,
                model.gravity,
            );
            let target = WrenchTarget::new(f, tau, FrameTag::Cog);
            if !target.is_finite() {
                return Err(Error::Domain("non-finite wrench target".into()));
            }
            let q = build_allocation(&fs, model, FrameTag::Cog)?;
            let lambda = distribute_flight(&target, &q, settings.condition_cap)?;
            Ok((target.stacked(), lambda))
        } else {
            let fs = contact_point(model, &fs)?;
            let p = fs.p_cp_cog.expect("set by contact_point");
            let i_cp = shift_inertia(&i_cog, mass, &p);
            let tau = ground_torque(
                &err,
                &state.attitude_integral,
                &i_cp,
                &meas.omega,
                &p,
                &meas.rotation,
                mass,
                model.gravity,
                &gains.attitude,
            );
            if !is_finite3(&tau) {
                return Err(Error::Domain("non-finite torque target".into()));
            }
            let q = build_allocation(&fs, model, FrameTag::ContactPoint)?;
            let build = if mode == LocomotionMode::Rolling { build_rolling_qp } else { build_standing_qp };
            let problem = build(&tau, &q, &meas.rotation, mass, model.gravity, settings.mu, settings.eps_c)?;
            let (x0, y0) = match &state.warm {
                Some((x, y)) if y.len() == problem.a_eq.nrows() + problem.a_in.nrows() => (Some(x), Some(y)),
                _ => (None, None),
            };
            let sol = solve_warm(&problem, &settings.qp, x0, y0);
            qp_status = Some(sol.status);
            let sol = if sol.status == QpStatus::Solved {
                let y = DVector::from_iterator(
                    sol.y_eq.len() + sol.y_in.len(),
                    sol.y_eq.iter().chain(sol.y_in.iter()).copied(),
                );
                state.warm = Some((sol.x.clone(), y));
                sol
            } else {
                state.warm = None;
                let relaxed = relax_torque(&problem, settings.torque_slack_weight)?;
                let sol = solve_warm(&relaxed, &settings.qp, None, None);
                if sol.status != QpStatus::Solved {
                    return Err(Error::Qp(format!("ground QP {}", sol.status.as_str())));
                }
                torque_relaxed = true;
                sol
            };
            let lambda = ThrustComponents(Vector6::from_iterator(sol.x.iter().take(6).copied()));
            Ok((Vector6::new(0.0, 0.0, 0.0, tau.x, tau.y, tau.z), lambda))
        }
    })();

    let (wrench, lambda, degraded) = match attempt {
        Ok((w, l)) => (w, l, false),
        Err(_) => (Vector6::zeros(), state.last_feasible, true),
    };
    let dist = components_to_command(&lambda, &model.tilts(), model.thrust_max)?;
    if !degraded {
        state.last_feasible = dist.components;
    }
    if torque_relaxed {
        // the torque target was not met: hold the integrator where it was
        state.attitude_integral = gains.attitude.clamp_integral(&(state.attitude_integral - err.e_r * dt));
    }
    if dist.saturated {
        // back-calculation: bleed the integrators in proportion to the saturation
        state.attitude_integral *= dist.scale;
        state.position_integral *= dist.scale;
    }
    let mut target_phi = dist.command.vectoring;
    for i in 0..3 {
        // an idle rotor has no meaningful direction; while rolling, park it mid-range so
        // either normal direction is at most a quarter turn away
        if dist.command.thrust[i] < IDLE_THRUST {
            target_phi[i] = if mode == LocomotionMode::Rolling { FRAC_PI_2 } else { state.last_command.vectoring[i] };
        }
    }
    let vectoring = rate_limit_vectoring(&state.last_command.vectoring, &target_phi, model.vectoring_speed_max, dt);
    // while a gimbal is still slewing, only the part of the thrust along its current
    // heading is useful; the rest would push in the wrong direction
    let thrust = std::array::from_fn(|i| dist.command.thrust[i] * wrap_angle(target_phi[i] - vectoring[i]).cos().max(0.0));
    let command = ActuatorCommand { thrust, vectoring };
    state.last_command = command;
    Ok(ControlOutput {
        command,
        telemetry: Telemetry {
            mode,
            attitude: err,
            position_error,
            wrench,
            components: dist.components,
            qp_status,
            saturated: dist.saturated || torque_relaxed,
            degraded,
            mode_switched,
        },
    })
}
