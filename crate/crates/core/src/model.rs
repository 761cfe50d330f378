//! Kinematic and inertial model of the three-link chain.
//!
//! Conventions used throughout the crate:
//!
//! * The base link is link 2. Its frame has x along the link and z normal to the
//!   plane the links move in; both joints rotate about that z axis.
//! * Each link frame {Lᵢ} has its origin at the proximal end of the link (in chain
//!   order 1 → 2 → 3) and x pointing along the chain. With both joints at 2π/3 the
//!   links close into a counter-clockwise equilateral triangle, so each link's +y
//!   points into the triangle and −y points outward.
//! * The {cog} frame has its origin at the centre of gravity and the orientation of
//!   the base link. The contact-point frame {cp} shares that orientation.
//!
//! Joint motion is treated quasi-statically: nothing here consumes joint velocities.

use std::f64::consts::PI;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::math::rot_z;

/// Direction a propeller spins; sets the sign of its drag-to-thrust ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Spin {
    Ccw,
    Cw,
}

impl Spin {
    pub fn sign(self) -> f64 {
        match self {
            Spin::Ccw => 1.0,
            Spin::Cw => -1.0,
        }
    }

    pub fn from_sign(s: i32) -> Result<Self> {
        match s {
            1 => Ok(Spin::Ccw),
            -1 => Ok(Spin::Cw),
            other => Err(Error::Config(format!("spin direction must be +1 or -1, got {other}"))),
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Spin::Ccw => Spin::Cw,
            Spin::Cw => Spin::Ccw,
        }
    }
}

/// One link of the chain with its rotor.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub length: f64,
    pub mass: f64,
    /// Centre of mass in the link frame.
    pub com_offset: Vector3<f64>,
    /// Inertia about the link centre of mass, link-frame axes.
    pub inertia: Matrix3<f64>,
    /// Rotor origin in the link frame.
    pub rotor_offset: Vector3<f64>,
    /// Fixed propeller tilt θᵢ.
    pub rotor_tilt: f64,
    pub spin: Spin,
    /// Magnitude of the drag-moment to thrust ratio, metres.
    pub drag_ratio: f64,
}

impl LinkSpec {
    /// Signed drag ratio σᵢ.
    pub fn sigma(&self) -> f64 {
        self.spin.sign() * self.drag_ratio
    }

    /// A link built from a thin-walled pipe spanning `[0, length]` on x plus lumped
    /// point masses. Returns mass, centre of mass and inertia about it.
    pub fn composite(
        length: f64,
        pipe_mass: f64,
        pipe_radius: f64,
        lumps: &[(f64, Vector3<f64>)],
    ) -> (f64, Vector3<f64>, Matrix3<f64>) {
        let pipe_com = Vector3::new(0.5 * length, 0.0, 0.0);
        let mass = pipe_mass + lumps.iter().map(|(m, _)| m).sum::<f64>();
        let com = (pipe_com * pipe_mass
            + lumps.iter().fold(Vector3::zeros(), |acc, (m, p)| acc + p * *m))
            / mass;

        let transverse = pipe_mass * (length * length / 12.0 + 0.5 * pipe_radius * pipe_radius);
        let pipe_own = Matrix3::from_diagonal(&Vector3::new(
            pipe_mass * pipe_radius * pipe_radius,
            transverse,
            transverse,
        ));
        let mut inertia = pipe_own + point_inertia(pipe_mass, &(pipe_com - com));
        for (m, p) in lumps {
            inertia += point_inertia(*m, &(p - com));
        }
        (mass, com, inertia)
    }

    fn validate(&self, idx: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("link {}: {msg}", idx + 1)));
        if !(self.length > 0.0) {
            return bad("length must be positive");
        }
        if !(self.mass > 0.0) {
            return bad("mass must be positive");
        }
        if (self.inertia - self.inertia.transpose()).abs().max() > 1e-12 {
            return bad("inertia must be symmetric");
        }
        if self.inertia.cholesky().is_none() {
            return bad("inertia must be positive definite");
        }
        if !(self.rotor_tilt.abs() < 0.5 * PI) {
            return bad("|rotor tilt| must be below pi/2");
        }
        if !(self.drag_ratio >= 0.0) {
            return bad("drag ratio magnitude must be non-negative");
        }
        Ok(())
    }
}

/// Point-mass contribution `m [d×][d×]ᵀ` to an inertia tensor.
pub fn point_inertia(mass: f64, d: &Vector3<f64>) -> Matrix3<f64> {
    mass * (Matrix3::identity() * d.norm_squared() - d * d.transpose())
}

/// Geometric and inertial description of the robot.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub links: [LinkSpec; 3],
    /// (lower, upper) for the two actuated joints.
    pub joint_limits: [(f64, f64); 2],
    /// Radius of the circle formed by the outer frames in the rolling configuration.
    pub frame_radius: f64,
    pub gravity: f64,
    pub thrust_max: f64,
    pub vectoring_speed_max: f64,
}

/// Both joints at 2π/3: the links form an equilateral triangle.
pub const ROLLING_JOINT_ANGLE: f64 = 2.0 * PI / 3.0;

impl RobotModel {
    pub fn new(
        links: [LinkSpec; 3],
        joint_limits: [(f64, f64); 2],
        frame_radius: f64,
        gravity: f64,
        thrust_max: f64,
        vectoring_speed_max: f64,
    ) -> Result<Self> {
        let model = Self {
            links,
            joint_limits,
            frame_radius,
            gravity,
            thrust_max,
            vectoring_speed_max,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.links.iter().enumerate() {
            l.validate(i)?;
        }
        for (j, (lo, hi)) in self.joint_limits.iter().enumerate() {
            if !(lo <= hi) {
                return Err(Error::Config(format!("joint {} limits inverted", j + 1)));
            }
        }
        if !(self.frame_radius > 0.0) {
            return Err(Error::Config("frame radius must be positive".into()));
        }
        if !(self.gravity >= 0.0) {
            return Err(Error::Config("gravity must be non-negative".into()));
        }
        if !(self.thrust_max > 0.0) {
            return Err(Error::Config("thrust_max must be positive".into()));
        }
        if !(self.vectoring_speed_max > 0.0) {
            return Err(Error::Config("vectoring_speed_max must be positive".into()));
        }
        Ok(())
    }

    /// The desk-scale prototype: 4.1 kg, 0.55 m links, 0.4 m frame radius,
    /// 26.5 N rotors and 3.2 rad/s vectoring.
    pub fn prototype() -> Self {
        let length = 0.55;
        let link_mass = 4.1 / 3.0;
        let rotor_mass = 0.3;
        let rotor_x = 0.75 * length;
        // joint actuator mass balances the rotor so the link CoM sits at mid-length
        let joint_mass = rotor_mass * (rotor_x - 0.5 * length) / (0.5 * length);
        let pipe_mass = link_mass - rotor_mass - joint_mass;
        let (mass, com, inertia) = LinkSpec::composite(
            length,
            pipe_mass,
            0.01,
            &[
                (rotor_mass, Vector3::new(rotor_x, 0.0, 0.0)),
                (joint_mass, Vector3::zeros()),
            ],
        );
        let tilts = [-0.0728, 0.179, -0.0802];
        let spins = [Spin::Ccw, Spin::Cw, Spin::Ccw];
        let links = std::array::from_fn(|i| LinkSpec {
            length,
            mass,
            com_offset: com,
            inertia,
            rotor_offset: Vector3::new(rotor_x, 0.0, 0.0),
            rotor_tilt: tilts[i],
            spin: spins[i],
            drag_ratio: 0.02,
        });
        let lim = 0.75 * PI;
        Self {
            links,
            joint_limits: [(-lim, lim), (-lim, lim)],
            frame_radius: 0.4,
            gravity: 9.81,
            thrust_max: 26.5,
            vectoring_speed_max: 3.2,
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn tilts(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.links[i].rotor_tilt)
    }

    pub fn with_tilts(mut self, tilts: [f64; 3]) -> Self {
        for (l, t) in self.links.iter_mut().zip(tilts) {
            l.rotor_tilt = t;
        }
        self
    }
}

/// Angles of the two actuated joints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: Vector2<f64>,
}

impl JointState {
    pub fn new(q1: f64, q2: f64) -> Self {
        Self {
            q: Vector2::new(q1, q2),
        }
    }

    pub fn rolling() -> Self {
        Self::new(ROLLING_JOINT_ANGLE, ROLLING_JOINT_ANGLE)
    }

    pub fn check(&self, model: &RobotModel) -> Result<()> {
        for j in 0..2 {
            let (lower, upper) = model.joint_limits[j];
            let angle = self.q[j];
            if !(angle >= lower && angle <= upper) {
                return Err(Error::JointLimit {
                    joint: j,
                    angle,
                    lower,
                    upper,
                });
            }
        }
        Ok(())
    }
}

/// All frames needed by allocation and control for one joint configuration and pose.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    pub q: JointState,
    /// Orientation of {cog} in {W}.
    pub rotation: Rotation3<f64>,
    /// CoG position in {W}.
    pub cog_world: Vector3<f64>,
    /// CoG position in the base-link frame.
    pub cog_in_base: Vector3<f64>,
    /// `R_{cog←Lᵢ}`.
    pub link_rotations: [Rotation3<f64>; 3],
    /// Link-frame origins in {cog}.
    pub link_origins: [Vector3<f64>; 3],
    /// Link centres of mass in {cog}.
    pub link_coms: [Vector3<f64>; 3],
    /// Rotor origins pᵢ in {cog}.
    pub rotor_positions: [Vector3<f64>; 3],
    /// CoG position in {cp}, set once the contact point is known.
    pub p_cp_cog: Option<Vector3<f64>>,
}

/// Link poses relative to the base-link frame.
fn link_poses_in_base(model: &RobotModel, q: &JointState) -> [(Rotation3<f64>, Vector3<f64>); 3] {
    let r1 = rot_z(-q.q[0]);
    let o1 = -(r1 * Vector3::new(model.links[0].length, 0.0, 0.0));
    let r3 = rot_z(q.q[1]);
    let o3 = Vector3::new(model.links[1].length, 0.0, 0.0);
    [(r1, o1), (Rotation3::identity(), Vector3::zeros()), (r3, o3)]
}

/// Forward kinematics given the base-link pose in {W}.
pub fn forward_kinematics(
    model: &RobotModel,
    q: &JointState,
    base_pose: &Isometry3<f64>,
) -> Result<FrameSet> {
    q.check(model)?;
    let poses = link_poses_in_base(model, q);
    let coms_base: [Vector3<f64>; 3] =
        std::array::from_fn(|i| poses[i].1 + poses[i].0 * model.links[i].com_offset);
    let total = model.total_mass();
    let cog_in_base = coms_base
        .iter()
        .zip(&model.links)
        .fold(Vector3::zeros(), |acc, (c, l)| acc + c * l.mass)
        / total;

    Ok(FrameSet {
        q: *q,
        rotation: base_pose.rotation.to_rotation_matrix(),
        cog_world: (base_pose * nalgebra::Point3::from(cog_in_base)).coords,
        cog_in_base,
        link_rotations: std::array::from_fn(|i| poses[i].0),
        link_origins: std::array::from_fn(|i| poses[i].1 - cog_in_base),
        link_coms: std::array::from_fn(|i| coms_base[i] - cog_in_base),
        rotor_positions: std::array::from_fn(|i| {
            poses[i].1 + poses[i].0 * model.links[i].rotor_offset - cog_in_base
        }),
        p_cp_cog: None,
    })
}

/// Forward kinematics with the pose given as CoG position and body orientation.
pub fn forward_kinematics_at_cog(
    model: &RobotModel,
    q: &JointState,
    rotation: &Rotation3<f64>,
    cog_world: &Vector3<f64>,
) -> Result<FrameSet> {
    let cog_in_base = {
        let poses = link_poses_in_base(model, q);
        let total = model.total_mass();
        (0..3).fold(Vector3::zeros(), |acc, i| {
            acc + (poses[i].1 + poses[i].0 * model.links[i].com_offset) * model.links[i].mass
        }) / total
    };
    let base = Isometry3::from_parts(
        Translation3::from(cog_world - rotation * cog_in_base),
        UnitQuaternion::from_rotation_matrix(rotation),
    );
    let mut fs = forward_kinematics(model, q, &base)?;
    fs.rotation = *rotation;
    fs.cog_world = *cog_world;
    Ok(fs)
}

/// Whole-body inertia about the CoG, {cog} axes.
pub fn inertia_at_cog(model: &RobotModel, q: &JointState) -> Result<Matrix3<f64>> {
    let fs = forward_kinematics(model, q, &Isometry3::identity())?;
    Ok(inertia_from_frames(model, &fs))
}

pub(crate) fn inertia_from_frames(model: &RobotModel, fs: &FrameSet) -> Matrix3<f64> {
    let mut total = Matrix3::zeros();
    for (i, link) in model.links.iter().enumerate() {
        let r = fs.link_rotations[i].matrix();
        total += r * link.inertia * r.transpose() + point_inertia(link.mass, &fs.link_coms[i]);
    }
    0.5 * (total + total.transpose())
}

/// Inertia about the contact point: the CoG inertia shifted by the parallel-axis
/// theorem with the total mass and offset `p_cp_cog`.
pub fn inertia_at_contact_point(
    model: &RobotModel,
    q: &JointState,
    p_cp_cog: &Vector3<f64>,
) -> Result<Matrix3<f64>> {
    Ok(shift_inertia(&inertia_at_cog(model, q)?, model.total_mass(), p_cp_cog))
}

pub fn shift_inertia(i_cog: &Matrix3<f64>, mass: f64, offset: &Vector3<f64>) -> Matrix3<f64> {
    i_cog + point_inertia(mass, offset)
}

/// Joint deviation from 2π/3 beyond which the frames are not treated as a circle.
pub const ROLLING_TOLERANCE: f64 = 0.05;

/// The circle traced by the outer frames, in {cog}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ring {
    pub center: Vector3<f64>,
    /// Unit normal of the ring plane (the rolling axis).
    pub normal: Vector3<f64>,
    pub radius: f64,
}

/// Ring geometry; fails unless both joints are within `tolerance` of 2π/3.
pub fn ring(model: &RobotModel, fs: &FrameSet, tolerance: f64) -> Result<Ring> {
    for j in 0..2 {
        let dev = (fs.q.q[j] - ROLLING_JOINT_ANGLE).abs();
        if dev > tolerance {
            return Err(Error::Mode(format!(
                "not in rolling configuration: joint {} deviates {dev:.3} rad from 2pi/3",
                j + 1
            )));
        }
    }
    let mids = (0..3).fold(Vector3::zeros(), |acc, i| {
        acc + fs.link_origins[i]
            + fs.link_rotations[i] * Vector3::new(0.5 * model.links[i].length, 0.0, 0.0)
    });
    Ok(Ring {
        center: mids / 3.0,
        normal: Vector3::z(),
        radius: model.frame_radius,
    })
}

/// Contact of the ring with the ground plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactGeometry {
    pub ring: Ring,
    /// Contact point in {cog}.
    pub point_body: Vector3<f64>,
    /// Unit in-plane direction from ring centre to the contact point, {cog}.
    pub direction_body: Vector3<f64>,
    /// CoG relative to the contact point, {cp} axes (same as {cog} axes).
    pub p_cp_cog: Vector3<f64>,
    /// `false` when the ring lies flat and the lowest point is not unique.
    pub unique: bool,
}

/// Lowest point of `ring` for body orientation `rotation`.
pub fn ring_contact(ring: &Ring, rotation: &Rotation3<f64>) -> ContactGeometry {
    let down = rotation.inverse() * -Vector3::z();
    let in_plane = down - ring.normal * down.dot(&ring.normal);
    let norm = in_plane.norm();
    let (direction_body, unique) = if norm > 1e-9 {
        (in_plane / norm, true)
    } else {
        // flat: default to tipping over the body −y edge
        (-Vector3::y(), false)
    };
    let point_body = ring.center + direction_body * ring.radius;
    ContactGeometry {
        ring: *ring,
        point_body,
        direction_body,
        p_cp_cog: -point_body,
        unique,
    }
}

/// Locates the ground contact point and stores `p_cp_cog` in the returned frames.
pub fn contact_point(model: &RobotModel, fs: &FrameSet) -> Result<FrameSet> {
    contact_point_with_tolerance(model, fs, ROLLING_TOLERANCE)
}

pub fn contact_point_with_tolerance(
    model: &RobotModel,
    fs: &FrameSet,
    tolerance: f64,
) -> Result<FrameSet> {
    let ring = ring(model, fs, tolerance)?;
    let contact = ring_contact(&ring, &fs.rotation);
    let mut out = fs.clone();
    out.p_cp_cog = Some(contact.p_cp_cog);
    Ok(out)
}
