//! Fault-injection laboratory for an LSTM battery state-of-charge estimator.
//!
//! The pipeline: [`battery_sim`] produces discharge traces with coulomb-counted
//! ground truth, [`dataset`] normalizes and windows them, [`estimator`] is the
//! LSTM under test, [`fault_injector`] forces bits of the normalized inputs,
//! [`safety_monitor`] is the non-AI cage around the estimator, [`metrics`]
//! quantifies deviations and [`campaign`] runs full sweeps and writes reports.

pub mod battery_sim;
pub mod campaign;
pub mod dataset;
pub mod estimator;
pub mod fault_injector;
pub mod metrics;
pub mod safety_monitor;
