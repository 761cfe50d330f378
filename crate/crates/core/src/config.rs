//! TOML configuration: model parameters, controller and simulator settings, and the
//! rotor design weights.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::control::ControlSettings;
use crate::design::DesignSettings;
use crate::model::{LinkSpec, RobotModel, Spin};
use crate::sim::SimSettings;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub length: f64,
    pub mass: f64,
    pub com_offset: [f64; 3],
    /// Row-major inertia about the link CoM.
    pub inertia: [[f64; 3]; 3],
    pub rotor_offset: [f64; 3],
    pub rotor_tilt: f64,
    /// +1 counter-clockwise, -1 clockwise.
    pub spin: i32,
    pub drag_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub links: [LinkConfig; 3],
    pub joint_limits: [[f64; 2]; 2],
    pub frame_radius: f64,
    pub gravity: f64,
    pub thrust_max: f64,
    pub vectoring_speed_max: f64,
}

impl From<&RobotModel> for ModelConfig {
    fn from(m: &RobotModel) -> Self {
        let links = std::array::from_fn(|i| {
            let l = &m.links[i];
            LinkConfig {
                length: l.length,
                mass: l.mass,
                com_offset: l.com_offset.into(),
                inertia: std::array::from_fn(|r| std::array::from_fn(|c| l.inertia[(r, c)])),
                rotor_offset: l.rotor_offset.into(),
                rotor_tilt: l.rotor_tilt,
                spin: l.spin.sign() as i32,
                drag_ratio: l.drag_ratio,
            }
        });
        Self {
            links,
            joint_limits: m.joint_limits.map(|(lo, hi)| [lo, hi]),
            frame_radius: m.frame_radius,
            gravity: m.gravity,
            thrust_max: m.thrust_max,
            vectoring_speed_max: m.vectoring_speed_max,
        }
    }
}

impl ModelConfig {
    pub fn to_model(&self) -> Result<RobotModel> {
        let mut links = Vec::with_capacity(3);
        for l in &self.links {
            links.push(LinkSpec {
                length: l.length,
                mass: l.mass,
                com_offset: Vector3::from(l.com_offset),
                inertia: Matrix3::from_fn(|r, c| l.inertia[r][c]),
                rotor_offset: Vector3::from(l.rotor_offset),
                rotor_tilt: l.rotor_tilt,
                spin: Spin::from_sign(l.spin)?,
                drag_ratio: l.drag_ratio,
            });
        }
        let links: [LinkSpec; 3] = links.try_into().expect("three links");
        RobotModel::new(
            links,
            self.joint_limits.map(|[lo, hi]| (lo, hi)),
            self.frame_radius,
            self.gravity,
            self.thrust_max,
            self.vectoring_speed_max,
        )
    }
}

/// Everything the CLI reads from `--config`. Missing sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub model: ModelConfig,
    pub control: ControlSettings,
    pub sim: SimSettings,
    pub design: DesignSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: ModelConfig::from(&RobotModel::prototype()),
            control: ControlSettings::default(),
            sim: SimSettings::default(),
            design: DesignSettings::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.to_model()?;
        self.control.validate()?;
        self.sim.validate()
    }

    pub fn robot(&self) -> Result<RobotModel> {
        self.model.to_model()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = Config::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(Config::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.robot().unwrap(), RobotModel::prototype());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = Config::from_toml("[design]\nw1 = 2.0\nw2 = 1.0\nbound = 0.3\nmu = 15\nlambda = 105\nmax_evaluations = 500\npf = 0.45\ngamma = 0.85\nalpha = 0.2\nseed = 9\n").unwrap();
        assert_eq!(cfg.design.w1, 2.0);
        assert_eq!(cfg.design.optimizer.seed, 9);
        assert_eq!(cfg.sim, SimSettings::default());
    }

    #[test]
    fn bad_spin_rejected() {
        let mut cfg = Config::default();
        cfg.model.links[1].spin = 0;
        assert!(matches!(Config::from_toml(&cfg.to_toml().unwrap()), Err(Error::Config(_))));
    }
}
