//! Scripted experiments: a start state plus a time-ordered list of target and
//! disturbance events, run in closed loop with the controller.

use nalgebra::{Rotation3, UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use super::log::{compute_metrics, LogRow, MetricsWindow, RunMetrics};
use super::{joint_torques, step, ContactState, ExternalWrench, NoiseSettings, SimSettings, SimState};
use crate::allocation::ActuatorCommand;
use crate::control::{control_step, ControlSettings, ControllerState, LocomotionMode, Measurement, Targets};
use crate::math::{log_so3, rot_x, rot_y, rot_z, tilt_from_vertical};
use crate::model::{JointState, RobotModel, ROLLING_JOINT_ANGLE};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartState {
    pub position: [f64; 3],
    /// Roll, pitch, yaw (applied as `Rz(yaw) Ry(pitch) Rx(roll)`), rad.
    pub attitude: [f64; 3],
    pub joints: [f64; 2],
    /// Start on the floor; the CoG height then follows from the contact geometry.
    pub ground: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// Switch between flight and ground control.
    Ground { on: bool },
    Position { target: [f64; 3] },
    /// Base attitude target; the rolling phase is applied on top about body z.
    Attitude { roll: f64, pitch: f64, yaw: f64 },
    /// Linear joint ramp from the current angles.
    Joints { target: [f64; 2], duration: f64 },
    /// Rolling-phase rate about the rolling axis, rad/s, reached by a linear ramp
    /// lasting `ramp` seconds.
    Roll {
        rate: f64,
        #[serde(default)]
        ramp: f64,
    },
    /// Constant world-frame disturbance applied for `duration`.
    Disturbance { force: [f64; 3], torque: [f64; 3], duration: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub seed: u64,
    pub start: StartState,
    pub events: Vec<Event>,
    /// Window used for the headline metrics.
    pub window: MetricsWindow,
}

/// Commanded references at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub targets: Targets,
    pub joints: JointState,
    pub disturbance: ExternalWrench,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Config("scenario duration must be positive".into()));
        }
        if self.events.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(Error::Config(format!("events of scenario '{}' are not time-ordered", self.name)));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["hover-transform", "standup", "disturbance", "roll"]
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let rolling = [ROLLING_JOINT_ANGLE; 2];
        let stand = [FRAC_PI_2, 0.0, 0.0];
        let ev = |t: f64, action: Action| Event { t, action };
        let s = match name {
            "hover-transform" => Scenario {
                name: name.into(),
                duration: 30.0,
                seed: 1,
                start: StartState { position: [0.0, 0.0, 1.0], attitude: [0.0; 3], joints: rolling, ground: false },
                events: vec![
                    ev(0.0, Action::Position { target: [0.0, 0.0, 1.0] }),
                    ev(5.0, Action::Joints { target: [FRAC_PI_2; 2], duration: 5.0 }),
                    ev(17.0, Action::Joints { target: rolling, duration: 5.0 }),
                ],
                window: MetricsWindow { start: 3.0, end: 30.0 },
            },
            "standup" => Scenario {
                name: name.into(),
                duration: 10.0,
                seed: 2,
                start: StartState { position: [0.0; 3], attitude: [0.01, 0.0, 0.0], joints: rolling, ground: true },
                events: vec![ev(0.5, Action::Attitude { roll: stand[0], pitch: stand[1], yaw: stand[2] })],
                window: MetricsWindow { start: 6.0, end: 10.0 },
            },
            "disturbance" => Scenario {
                name: name.into(),
                duration: 14.0,
                seed: 3,
                start: StartState { position: [0.0; 3], attitude: stand, joints: rolling, ground: true },
                events: vec![
                    ev(0.0, Action::Attitude { roll: stand[0], pitch: stand[1], yaw: stand[2] }),
                    ev(3.0, Action::Disturbance { force: [0.0; 3], torque: [1.5, 0.0, 0.0], duration: 0.2 }),
                    ev(8.0, Action::Disturbance { force: [0.0; 3], torque: [0.0, 1.5, 0.0], duration: 0.2 }),
                ],
                window: MetricsWindow { start: 1.0, end: 14.0 },
            },
            "roll" => Scenario {
                name: name.into(),
                duration: 12.0,
                seed: 4,
                start: StartState { position: [0.0; 3], attitude: stand, joints: rolling, ground: true },
                events: vec![
                    ev(0.0, Action::Attitude { roll: stand[0], pitch: stand[1], yaw: stand[2] }),
                    // the sense the outward-thrust couples can drive directly
                    ev(2.0, Action::Roll { rate: -1.0, ramp: 1.0 }),
                ],
                window: MetricsWindow { start: 4.0, end: 12.0 },
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown scenario '{other}' (built-in: {})",
                    Self::builtin_names().join(", ")
                )))
            }
        };
        Ok(s)
    }

    /// References at time `t`.
    pub fn reference(&self, t: f64) -> Reference {
        let mut ground = self.start.ground;
        let mut position = Vector3::from(self.start.position);
        let mut attitude = self.start.attitude;
        let mut joints = self.start.joints;
        let mut ramp: Option<([f64; 2], [f64; 2], f64, f64)> = None;
        let mut phase = 0.0;
        let mut roll = RateRamp::default();
        let mut last_t = 0.0;
        let mut disturbance = ExternalWrench::default();
        for e in self.events.iter().filter(|e| e.t <= t) {
            phase += roll.integral(e.t) - roll.integral(last_t);
            last_t = e.t;
            match e.action {
                Action::Ground { on } => ground = on,
                Action::Position { target } => position = Vector3::from(target),
                Action::Attitude { roll, pitch, yaw } => attitude = [roll, pitch, yaw],
                Action::Joints { target, duration } => {
                    if let Some((from, to, t0, d)) = ramp {
                        joints = ramp_at(from, to, t0, d, e.t);
                    }
                    ramp = Some((joints, target, e.t, duration));
                }
                Action::Roll { rate, ramp } => roll = RateRamp { from: roll.at(e.t), to: rate, t0: e.t, duration: ramp },
                Action::Disturbance { force, torque, duration } => {
                    if t < e.t + duration {
                        disturbance.force += Vector3::from(force);
                        disturbance.torque += Vector3::from(torque);
                    }
                }
            }
        }
        phase += roll.integral(t) - roll.integral(last_t);
        if let Some((from, to, t0, d)) = ramp {
            joints = ramp_at(from, to, t0, d, t);
        }
        let base = rot_z(attitude[2]) * rot_y(attitude[1]) * rot_x(attitude[0]);
        Reference {
            targets: Targets {
                position,
                velocity: Vector3::zeros(),
                rotation: base * rot_z(phase),
                omega: Vector3::new(0.0, 0.0, roll.at(t)),
                ground,
            },
            joints: JointState::new(joints[0], joints[1]),
            disturbance,
        }
    }
}

/// Piecewise-linear rate: `from` at `t0`, `to` after `t0 + duration`.
#[derive(Debug, Clone, Copy, Default)]
struct RateRamp {
    from: f64,
    to: f64,
    t0: f64,
    duration: f64,
}

impl RateRamp {
    fn at(&self, t: f64) -> f64 {
        if t >= self.t0 + self.duration {
            self.to
        } else {
            self.from + (self.to - self.from) * ((t - self.t0) / self.duration).max(0.0)
        }
    }

    /// `∫ rate dt` from `t0` to `t` (only used for `t ≥ t0`).
    fn integral(&self, t: f64) -> f64 {
        let s = t - self.t0;
        if s <= self.duration {
            self.from * s + 0.5 * (self.to - self.from) * s * s / self.duration.max(f64::MIN_POSITIVE)
        } else {
            self.from * self.duration + 0.5 * (self.to - self.from) * self.duration + self.to * (s - self.duration)
        }
    }
}

fn ramp_at(from: [f64; 2], to: [f64; 2], t0: f64, duration: f64, t: f64) -> [f64; 2] {
    let s = if duration > 0.0 { ((t - t0) / duration).clamp(0.0, 1.0) } else { 1.0 };
    [from[0] + (to[0] - from[0]) * s, from[1] + (to[1] - from[1]) * s]
}

/// Orientation error `log(R_d Rᵀ)` in world axes (roll, pitch, yaw components).
pub fn world_orientation_error(r: &Rotation3<f64>, r_des: &Rotation3<f64>) -> Vector3<f64> {
    log_so3(&(r_des * r.inverse()))
}

fn noisy(state: &SimState, noise: &NoiseSettings, rng: &mut ChaCha8Rng) -> Measurement {
    let mut g = |sigma: f64| -> Vector3<f64> {
        if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("positive sigma");
            Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
        } else {
            Vector3::zeros()
        }
    };
    let dp = g(noise.position);
    let dv = g(noise.velocity);
    let da = g(noise.attitude);
    let dw = g(noise.omega);
    Measurement {
        position: state.position + dp,
        velocity: state.velocity + dv,
        rotation: state.orientation.to_rotation_matrix() * Rotation3::new(da),
        omega: state.omega + dw,
        joints: state.joints,
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scenario: Scenario,
    pub log: Vec<LogRow>,
    pub metrics: Option<RunMetrics>,
    pub final_state: SimState,
    /// Set when the run stopped early; the log holds everything up to that point.
    pub abort: Option<Error>,
}

const PRIME_PERIOD: f64 = 10.0;

/// Runs a scenario in closed loop. Deterministic for a given seed.
pub fn run_scenario(
    scenario: &Scenario,
    model: &RobotModel,
    control: &ControlSettings,
    sim: &SimSettings,
) -> Result<RunOutput> {
    scenario.validate()?;
    model.validate()?;
    control.validate()?;
    sim.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let start = &scenario.start;
    let r0 = rot_z(start.attitude[2]) * rot_y(start.attitude[1]) * rot_x(start.attitude[0]);
    let q0 = UnitQuaternion::from_rotation_matrix(&r0);
    let joints0 = JointState::new(start.joints[0], start.joints[1]);
    let mut state = if start.ground {
        SimState::on_ground(model, sim, start.position[0], start.position[1], q0, joints0)?
    } else {
        SimState::airborne(Vector3::from(start.position), q0, joints0)
    };
    let mode0 = if start.ground { LocomotionMode::Standing } else { LocomotionMode::Flight };
    let mut ctrl = ControllerState::new(mode0, ActuatorCommand::zero());
    {
        // start with the actuators settled on the first command: a throwaway step with
        // a long period lifts the gimbal slew limit
        let reference = scenario.reference(0.0);
        let meas = Measurement {
            position: state.position,
            velocity: state.velocity,
            rotation: state.orientation.to_rotation_matrix(),
            omega: state.omega,
            joints: state.joints,
        };
        let mut probe = ctrl.clone();
        let settle = control_step(&mut probe, model, control, &meas, &reference.targets, PRIME_PERIOD)?;
        ctrl = ControllerState::new(mode0, settle.command);
        state.thrust = settle.command.thrust;
        state.vectoring = settle.command.vectoring;
    }

    let decimation = sim.control_decimation();
    let n_ticks = (scenario.duration / sim.control_period).round() as usize;
    let mut log = Vec::with_capacity(n_ticks + 1);
    let mut abort = None;
    'outer: for tick in 0..=n_ticks {
        let t = tick as f64 * sim.control_period;
        let reference = scenario.reference(t);
        state.joints = reference.joints;
        let meas = noisy(&state, &sim.noise, &mut rng);
        let out = match control_step(&mut ctrl, model, control, &meas, &reference.targets, sim.control_period) {
            Ok(o) => o,
            Err(e) => {
                abort = Some(e);
                break;
            }
        };
        let mut slip = false;
        let mut penetration: f64 = 0.0;
        let mut contact_speed: f64 = 0.0;
        let mut normal_force = 0.0;
        let torques = joint_torques(model, &state).unwrap_or([f64::NAN; 2]);
        let row_state = state;
        if tick < n_ticks {
            for k in 0..decimation {
                let tp = t + k as f64 * sim.dt;
                let r = scenario.reference(tp);
                state.joints = r.joints;
                match step(model, sim, &state, &out.command, &r.disturbance, sim.dt) {
                    Ok((next, info)) => {
                        state = next;
                        slip |= info.slipping;
                        penetration = penetration.max(info.penetration);
                        if matches!(state.contact, ContactState::Stick) {
                            contact_speed = contact_speed.max(info.contact_speed);
                        }
                        normal_force = info.contact_force.force.z;
                    }
                    Err(e) => {
                        log.push(LogRow::new(&row_state, &reference.targets, &out, torques, slip, penetration, contact_speed, normal_force));
                        abort = Some(e);
                        break 'outer;
                    }
                }
            }
        }
        log.push(LogRow::new(&row_state, &reference.targets, &out, torques, slip, penetration, contact_speed, normal_force));
    }
    let metrics = compute_metrics(&log, &scenario.window).ok();
    Ok(RunOutput { scenario: scenario.clone(), log, metrics, final_state: state, abort })
}

/// Tilt of the body from its flat pose; π/2 standing.
pub fn stance_tilt(state: &SimState) -> f64 {
    tilt_from_vertical(&state.orientation.to_rotation_matrix())
}
