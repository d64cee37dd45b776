//! Predictive delay-compensating state observers for planar rigid-body
//! localization from landmark measurements.
//!
//! The library covers the full pipeline:
//!
//! * [`se2`] — planar kinematics, the R⁶ embedding and its closed-form
//!   transition matrix;
//! * [`landmarks`] — output matrix, measurements, observability, noise;
//! * [`riccati`] — the observer gain flow and its excitation bounds;
//! * [`delay`] — fixed-step histories and the distributed-delay convolution;
//! * [`observer`] — the predictive and the standard observer;
//! * [`transport`] — the transport-grid co-simulation used for validation;
//! * [`margin`] — Lambert-W gain intervals, decay rates and delay margins;
//! * [`sim`] — scenario runs, parameter sweeps, noise studies;
//! * [`config`] / [`report`] — scenario files and run artifacts.

pub mod config;
pub mod delay;
pub mod landmarks;
pub mod margin;
pub mod observer;
pub mod profile;
pub mod report;
pub mod riccati;
pub mod se2;
pub mod sim;
pub mod transport;

pub use config::ScenarioConfig;
pub use sim::{run, sweep, ObserverChoice, RunOptions, Scenario, Verdict};
