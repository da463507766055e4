//! Config-driven experiment harness: trials, sweeps, CSV tables and plots.

pub mod config;
pub mod output;
pub mod plot;
pub mod runner;

pub use config::{AlgorithmSpec, ExperimentConfig, ExperimentKind, OracleKind, PolicyConfig, Reference, SweepConfig};
pub use output::{write_outputs, AGGREGATES_HEADER, TRIALS_HEADER};
pub use plot::{emit_plots, plot_dir, render_svg};
pub use runner::{
    run_experiment, run_stochasticity_sweep, AggregateRecord, ExperimentOutput, RatioRecord, SweepRecord, TrialRecord,
};
