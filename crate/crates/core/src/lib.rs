//! Grid-following inverter synchronization lab.
//!
//! Discrete-time models of a grid-following inverter behind an LCL filter,
//! a Kalman-filter phase estimator with grid-impedance line-drop
//! compensation, an LQR current controller and three SRF-PLL baselines,
//! plus the scenario runner and trace metrics used to compare them.

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod frames;
pub mod io;
pub mod kalman_sync;
pub mod lqr;
pub mod numerics;
pub mod plant;
pub mod pll_sync;
pub mod report;
pub mod scenario;

pub use error::{Error, Result};
