//! Experiment configuration, optimizer drivers, reference optima and trace output.

mod config;
mod reference;
mod runner;
mod trace;

pub use config::{parse_key_values, parse_synth_spec, DataSource, ExperimentConfig, Method};
pub use reference::{
    compute_reference, compute_reference_partial, ReferenceOptimum, ReferenceOptions, AGREEMENT_TOL, DEFAULT_REFERENCE_TOL,
};
pub use runner::{default_alpha, default_alpha_grid, grid_sweep, reference_for, run_experiment, run_on, SweepResult};
pub use trace::{emit_csv, emit_svg, render_svg, Trace, TraceRow, CSV_HEADER};
