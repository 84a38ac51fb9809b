//! Configuration, experiment orchestration and report emission.

pub mod config;
pub mod demo;
pub mod run;
pub mod svg;
pub mod sweep;

pub use config::{ExperimentConfig, SensorKind, SensorSpec};
pub use demo::{demo_phase_alignment, DemoReport};
pub use run::{decode_file, gen_sensor_waveform, run_once, simulate, simulate_with, RunOutput, RunReport, Simulation};
pub use sweep::{run_sweep, SweepRow, SweepSpec};
