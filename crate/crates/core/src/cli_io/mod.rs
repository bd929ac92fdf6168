//! Configuration files, run orchestration and CSV artifacts.

mod artifacts;
mod config;

pub use artifacts::{
    convergence_csv, diagnostics_csv, field_csv, fmt_f64, load_run, read_diagnostics_csv, read_field_csv, run,
    run_oracle, sweep, verify, DiagnosticRow, RunSummary, StoredRun, CONVERGENCE_HEADER, DIAGNOSTICS_HEADER,
};
pub use config::{config_to_text, parse_config, ProbeConfig, RunConfig, KEYS};
