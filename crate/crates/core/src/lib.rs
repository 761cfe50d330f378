//! Control and simulation workbench for a three-link thrust-vectoring multirotor that
//! flies, transforms in mid-air, stands up and rolls on its outer frames.

pub mod allocation;
pub mod config;
pub mod control;
pub mod design;
pub mod error;
pub mod math;
pub mod model;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
