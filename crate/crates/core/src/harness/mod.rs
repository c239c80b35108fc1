//! Configuration, file-based commands and the study runner behind the
//! `lrsm` command-line tool.

pub mod commands;
pub mod config;
pub mod study;

pub use commands::{
    cmd_diagnose, cmd_fit, cmd_predict, cmd_score, cmd_simulate, Dataset, DatasetMeta, DiagnoseOptions, FitOptions,
    FitSummary, PredictOptions,
};
pub use config::{BackendSpec, ScenarioConfig, StudyConfig};
pub use study::{run_study, CellResult, CellStatus, StudyOptions, StudyOutcome};

use crate::error::Error;

/// Process exit code for an error: 2 usage, 3 data or files, 4 numerical.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        _ => 4,
    }
}
