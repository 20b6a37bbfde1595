//! Experiment harness: configs, single runs, sweeps and reports.

pub mod config;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{ResolvedNets, RunConfig, UpdateSchedule};
pub use report::{
    build_report, emit_plot_data, load_runs, report, Report, SeriesPoint, SummaryRow,
};
pub use run::{content_hash, run, Checkpoint, RunOutcome, RunStatus, CSV_COLUMNS};
pub use sweep::{cells, jobs, sweep, Cell, Preset, SweepOutcome, SweepSpec};
