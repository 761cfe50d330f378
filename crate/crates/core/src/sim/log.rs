//! Per-control-tick log rows, the `log.csv` format, and summary metrics.

use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

use super::scenario::world_orientation_error;
use super::SimState;
use crate::control::{ControlOutput, Targets};
use crate::math::tilt_from_vertical;
use crate::{Error, Result};

/// One row of `log.csv`, sampled at the control rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub mode: String,
    pub contact: String,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// `w, x, y, z`.
    pub quaternion: [f64; 4],
    pub omega: [f64; 3],
    pub joints: [f64; 2],
    pub thrust_cmd: [f64; 3],
    pub vectoring_cmd: [f64; 3],
    pub thrust: [f64; 3],
    pub vectoring: [f64; 3],
    pub position_error: [f64; 3],
    /// World-frame log map of `R_d Rᵀ`: roll, pitch, yaw components.
    pub orientation_error: [f64; 3],
    pub tilt: f64,
    pub qp_status: String,
    pub degraded: bool,
    pub saturated: bool,
    /// Any physics step in this control period was slipping.
    pub slip: bool,
    pub normal_force: f64,
    /// Largest floor penetration in this control period.
    pub penetration: f64,
    /// Largest contact-point speed while sticking in this control period.
    pub contact_speed: f64,
    pub joint_torque: [f64; 2],
}

const HEADER: &[&str] = &[
    "t", "mode", "contact", "x", "y", "z", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz", "q1", "q2",
    "lambda_cmd1", "lambda_cmd2", "lambda_cmd3", "phi_cmd1", "phi_cmd2", "phi_cmd3", "lambda1", "lambda2", "lambda3",
    "phi1", "phi2", "phi3", "ex", "ey", "ez", "eroll", "epitch", "eyaw", "tilt", "qp_status", "degraded", "saturated",
    "slip", "normal_force", "penetration", "contact_speed", "joint_torque1", "joint_torque2",
];

impl LogRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state: &SimState,
        targets: &Targets,
        out: &ControlOutput,
        joint_torque: [f64; 2],
        slip: bool,
        penetration: f64,
        contact_speed: f64,
        normal_force: f64,
    ) -> Self {
        let r = state.orientation.to_rotation_matrix();
        let q = state.orientation.quaternion();
        let ep = targets.position - state.position;
        let eo = world_orientation_error(&r, &targets.rotation);
        Self {
            t: state.t,
            mode: out.telemetry.mode.as_str().to_string(),
            contact: state.contact.as_str().to_string(),
            position: state.position.into(),
            velocity: state.velocity.into(),
            quaternion: [q.w, q.i, q.j, q.k],
            omega: state.omega.into(),
            joints: [state.joints.q[0], state.joints.q[1]],
            thrust_cmd: out.command.thrust,
            vectoring_cmd: out.command.vectoring,
            thrust: state.thrust,
            vectoring: state.vectoring,
            position_error: ep.into(),
            orientation_error: eo.into(),
            tilt: tilt_from_vertical(&r),
            qp_status: out.telemetry.qp_status.map_or("none", |s| s.as_str()).to_string(),
            degraded: out.telemetry.degraded,
            saturated: out.telemetry.saturated,
            slip,
            normal_force,
            penetration,
            contact_speed,
            joint_torque,
        }
    }

    fn fields(&self) -> Vec<String> {
        let mut f = vec![self.t.to_string(), self.mode.clone(), self.contact.clone()];
        let nums = self
            .position
            .iter()
            .chain(&self.velocity)
            .chain(&self.quaternion)
            .chain(&self.omega)
            .chain(&self.joints)
            .chain(&self.thrust_cmd)
            .chain(&self.vectoring_cmd)
            .chain(&self.thrust)
            .chain(&self.vectoring)
            .chain(&self.position_error)
            .chain(&self.orientation_error)
            .chain(std::iter::once(&self.tilt));
        f.extend(nums.map(|v| v.to_string()));
        f.push(self.qp_status.clone());
        for b in [self.degraded, self.saturated, self.slip] {
            f.push(u8::from(b).to_string());
        }
        for v in [self.normal_force, self.penetration, self.contact_speed, self.joint_torque[0], self.joint_torque[1]] {
            f.push(v.to_string());
        }
        f
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != HEADER.len() {
            return Err(Error::Metrics(format!("line {lineno}: expected {} columns, got {}", HEADER.len(), cols.len())));
        }
        let num = |i: usize| -> Result<f64> {
            cols[i].trim().parse::<f64>().map_err(|_| Error::Metrics(format!("line {lineno}: bad number in column '{}'", HEADER[i])))
        };
        let flag = |i: usize| -> Result<bool> {
            match cols[i].trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::Metrics(format!("line {lineno}: bad flag in column '{}'", HEADER[i]))),
            }
        };
        let arr3 = |i: usize| -> Result<[f64; 3]> { Ok([num(i)?, num(i + 1)?, num(i + 2)?]) };
        Ok(Self {
            t: num(0)?,
            mode: cols[1].to_string(),
            contact: cols[2].to_string(),
            position: arr3(3)?,
            velocity: arr3(6)?,
            quaternion: [num(9)?, num(10)?, num(11)?, num(12)?],
            omega: arr3(13)?,
            joints: [num(16)?, num(17)?],
            thrust_cmd: arr3(18)?,
            vectoring_cmd: arr3(21)?,
            thrust: arr3(24)?,
            vectoring: arr3(27)?,
            position_error: arr3(30)?,
            orientation_error: arr3(33)?,
            tilt: num(36)?,
            qp_status: cols[37].to_string(),
            degraded: flag(38)?,
            saturated: flag(39)?,
            slip: flag(40)?,
            normal_force: num(41)?,
            penetration: num(42)?,
            contact_speed: num(43)?,
            joint_torque: [num(44)?, num(45)?],
        })
    }
}

/// Column names of `log.csv`, in order.
pub fn csv_header() -> &'static [&'static str] {
    HEADER
}

pub fn write_csv(rows: &[LogRow]) -> String {
    let mut s = HEADER.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.fields().join(","));
        s.push('\n');
    }
    s
}

pub fn read_csv(text: &str) -> Result<Vec<LogRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Metrics("empty log".into()))?;
    if header.trim() != HEADER.join(",") {
        return Err(Error::Metrics("unexpected log header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| LogRow::parse(l, i + 2))
        .collect()
}

/// Closed time interval `[start, end]` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsWindow {
    pub start: f64,
    pub end: f64,
}

impl MetricsWindow {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeChange {
    pub t: f64,
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub window: MetricsWindow,
    pub samples: usize,
    pub position_rms: [f64; 3],
    pub position_max: [f64; 3],
    /// Roll, pitch, yaw.
    pub orientation_rms: [f64; 3],
    pub orientation_max: [f64; 3],
    /// Horizontal CoG displacement over the window divided by its length.
    pub mean_speed: f64,
    pub mean_thrust_sum: f64,
    pub slip_samples: usize,
    pub degraded_samples: usize,
    pub max_penetration: f64,
    pub max_joint_torque: f64,
    /// Mode changes over the whole log.
    pub mode_timeline: Vec<ModeChange>,
}

pub fn compute_metrics(log: &[LogRow], window: &MetricsWindow) -> Result<RunMetrics> {
    let rows: Vec<&LogRow> = log.iter().filter(|r| window.contains(r.t)).collect();
    if rows.is_empty() {
        return Err(Error::Metrics(format!("no samples in window [{}, {}]", window.start, window.end)));
    }
    let n = rows.len() as f64;
    let mut position_rms = [0.0; 3];
    let mut position_max = [0.0f64; 3];
    let mut orientation_rms = [0.0; 3];
    let mut orientation_max = [0.0f64; 3];
    for r in &rows {
        for k in 0..3 {
            position_rms[k] += r.position_error[k].powi(2);
            position_max[k] = position_max[k].max(r.position_error[k].abs());
            orientation_rms[k] += r.orientation_error[k].powi(2);
            orientation_max[k] = orientation_max[k].max(r.orientation_error[k].abs());
        }
    }
    for k in 0..3 {
        position_rms[k] = (position_rms[k] / n).sqrt();
        orientation_rms[k] = (orientation_rms[k] / n).sqrt();
    }
    let (first, last) = (rows[0], rows[rows.len() - 1]);
    let span = last.t - first.t;
    let mean_speed = if span > 0.0 {
        (last.position[0] - first.position[0]).hypot(last.position[1] - first.position[1]) / span
    } else {
        0.0
    };
    let mut mode_timeline: Vec<ModeChange> = Vec::new();
    for r in log {
        if mode_timeline.last().map_or(true, |m| m.mode != r.mode) {
            mode_timeline.push(ModeChange { t: r.t, mode: r.mode.clone() });
        }
    }
    Ok(RunMetrics {
        window: *window,
        samples: rows.len(),
        position_rms,
        position_max,
        orientation_rms,
        orientation_max,
        mean_speed,
        mean_thrust_sum: rows.iter().map(|r| r.thrust_cmd.iter().sum::<f64>()).sum::<f64>() / n,
        slip_samples: rows.iter().filter(|r| r.slip).count(),
        degraded_samples: rows.iter().filter(|r| r.degraded).count(),
        max_penetration: rows.iter().map(|r| r.penetration).fold(0.0, f64::max),
        max_joint_torque: rows
            .iter()
            .flat_map(|r| r.joint_torque)
            .filter(|v| v.is_finite())
            .map(f64::abs)
            .fold(0.0, f64::max),
        mode_timeline,
    })
}

/// Gnuplot script plotting the main traces of `csv` into `png`.
pub fn gnuplot_script(csv: &str, png: &str) -> String {
    let col = |name: &str| HEADER.iter().position(|h| *h == name).expect("known column") + 1;
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set terminal pngcairo size 1200,1000");
    let _ = writeln!(s, "set output '{png}'");
    let _ = writeln!(s, "set key autotitle columnhead");
    let _ = writeln!(s, "set multiplot layout 4,1");
    let panels: [(&str, &[&str]); 4] = [
        ("position error [m]", &["ex", "ey", "ez"]),
        ("orientation error [rad]", &["eroll", "epitch", "eyaw"]),
        ("thrust [N]", &["lambda_cmd1", "lambda_cmd2", "lambda_cmd3"]),
        ("joint angle [rad]", &["q1", "q2"]),
    ];
    for (label, cols) in panels {
        let _ = writeln!(s, "set ylabel '{label}'");
        let plots: Vec<String> =
            cols.iter().map(|c| format!("'{csv}' using {}:{} with lines", col("t"), col(c))).collect();
        let _ = writeln!(s, "plot {}", plots.join(", "));
    }
    let _ = writeln!(s, "unset multiplot");
    s
}
