//! Fine-grained air-quality field estimation and adaptive UAV monitoring.
//!
//! The crate reconstructs 5 m resolution AQI fields from sparse mobile-sensor
//! measurements using a hybrid estimator that sums a line-source Gaussian
//! plume column and a fixed random-feature hidden layer, and plans
//! battery-efficient measurement trajectories over a cube grid.

pub mod dataset;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod planner;
pub mod plume;
pub mod sim;

pub use error::{Error, Result};
