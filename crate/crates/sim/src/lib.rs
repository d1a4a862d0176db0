//! Closed-loop harness for the bilevel gait controller: scenario files, an
//! SRB plant, disturbance matrices, gradient checks, and timing tables.

pub mod bench;
pub mod check;
pub mod matrix;
pub mod plant;
pub mod run;
pub mod scenario;
pub mod trace;

pub use matrix::{run_matrix, Axis, MatrixReport};
pub use plant::SrbPlant;
pub use run::{run_scenario, run_with, HlEvent, RunError, Summary, TraceRecord};
pub use scenario::{Disturbance, InitialState, Scenario, ScenarioError};
