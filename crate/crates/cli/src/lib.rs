//! Simulation and reporting harness around the mtloop engine.

pub mod compare;
pub mod report;
pub mod sim;
pub mod synth;

pub use compare::{compare_strategies, ComparisonReport};
pub use sim::{run_simulation, SimError, SimulationConfig, SimulationReport, SimulationRun};
