//! Run configuration, run directories, sweeps, and figure/table emission.
//!
//! A run directory holds `config.cfg` (canonical config), `telemetry.log`
//! (one JSON object per epoch), `checkpoints/`, `metrics.txt`, `scores/`,
//! `record.txt`, and `plots/` once a report has been drawn.

mod config;
pub mod plots;
mod report;
mod run;
mod sweep;

pub use config::{Algorithm, DataSource, RunConfig, Seeds};
pub use report::{
    emit_plots, expected_schedule, read_scores, runs_table, schedule_points, PlotOptions,
};
pub use run::{
    build_split, default_run_root, evaluate_checkpoint, execute_run, load_corpus_for,
    metrics_file_text, parse_metrics_file, read_telemetry, run_id, train_model, RdEpoch,
    RunOutcome, RunRecord, TelemetryLine, Trained, CHECKPOINT_DIR, CONFIG_FILE, FAILED_FILE,
    FINAL_CHECKPOINT, METRICS_FILE, PLOTS_DIR, RECORD_FILE, RUN_ROOT_ENV, SCORES_DIR,
    TELEMETRY_FILE,
};
pub use sweep::{
    cell_config, cells, mean, median, results_csv, results_table, run_sweep, runs_csv, Axis,
    CellResult, Metric, ReplicateResult, SweepResult, SweepSpec,
};
