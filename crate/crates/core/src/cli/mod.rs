//! Command implementations behind the `npga` binary.

mod checkpoint;
mod commands;
mod config;
mod gradcheck;

pub use checkpoint::{checkpoint_to_string, parse_checkpoint, read_checkpoint, write_checkpoint};
pub use commands::{
    cmd_eval, cmd_export_latent, cmd_gen_synth, cmd_gradcheck, cmd_grid, cmd_train, evaluate_model, load_model,
    load_splits, parse_grid_rows, probe_split_accuracies, summarize_grid, summary_to_text, trace_to_text, GridRow,
    GridSummaryRow, Metrics, Splits, TrainArtifacts,
};
pub use config::{DataConfig, DataFormat, GradcheckConfig, GridConfig, ProbeConfig, ProbeUnits, RunConfig, Term};
pub use gradcheck::{relative_error, run_gradcheck, TermReport, RELATIVE_ERROR_FLOOR};
