//! Experiments, file formats and run management on top of `brownot-core`.
//!
//! Each experiment reads an [`ExperimentConfig`], runs its replicas in
//! parallel, streams per-replica rows to `results.csv` and writes a
//! [`RunRecord`] to `record.json`. An interrupted run picks up from the
//! rows already on disk.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod plot;
pub mod record;
pub mod runner;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{LabError, LabResult};
pub use experiments::{
    concentration_trend, run_concentration, run_constant_estimation, run_cube_subadditivity, run_fixed_n_limit,
    run_hitting_validation, run_torus_rate, ConcentrationReport, RunOptions, RunOutput,
};
pub use plot::{emit_plot_data, PlotKind};
pub use record::RunRecord;

/// Runs the experiment named by `kind` and returns its record.
pub fn run_experiment(kind: ExperimentKind, config: &ExperimentConfig, opts: &RunOptions) -> LabResult<RunRecord> {
    Ok(match kind {
        ExperimentKind::Constant => run_constant_estimation(config, opts)?.1.record,
        ExperimentKind::FixedN => run_fixed_n_limit(config, opts)?.record,
        ExperimentKind::TorusRate => run_torus_rate(config, opts)?.record,
        ExperimentKind::Concentration => run_concentration(config, opts)?.1.record,
        ExperimentKind::Subadd => run_cube_subadditivity(config, opts)?.record,
        ExperimentKind::Hitting => run_hitting_validation(config, opts)?.record,
    })
}
