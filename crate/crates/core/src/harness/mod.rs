//! Experiment configuration, orchestration, and report emission.

pub mod benchmark;
pub mod config;
pub mod emit;
pub mod experiment;

pub use config::{AgentsSpec, ExperimentConfig, InitialGain, Setup};
pub use emit::{emit, load_report, EmitFormat};
pub use experiment::{
    reference_checks, reproduce_reference, run_experiment, AgentReport, CheckRow, Gaps,
    ObserverReport, PostReport, ResultsReport,
};
