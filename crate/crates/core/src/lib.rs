//! Simulation, training and reality-gap evaluation for a Minitaur-like quadruped.

pub mod actuator;
pub mod cli;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod gapeval;
pub mod learner;
pub mod randomize;
pub mod sensing;

pub use error::{Error, Result};
