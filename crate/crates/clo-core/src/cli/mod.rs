//! Config-driven pipeline orchestration and exit-code policy.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    cmd_ablate, cmd_eval, cmd_gen_data, cmd_prepare, cmd_pretrain, cmd_replay, cmd_sweep,
    cmd_train, parse_sizes, AblateStudy, TrainOverrides,
};
pub use config::{default_config, save_config, RunConfig};
pub use manifest::{Manifest, manifest_path_for};

use crate::error::Error;

/// Distinct process exit codes per failure class.
pub mod exit_codes {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const INTEGRITY: i32 = 4;
    pub const NUMERIC: i32 = 5;
}

/// Maps an error to its exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => exit_codes::CONFIG,
        Error::Io(_) | Error::Json(_) => exit_codes::IO,
        Error::Integrity(_)
        | Error::SchemaVersion { .. }
        | Error::MixedLanguage { .. }
        | Error::Pairing(_)
        | Error::IndeterminateLanguage
        | Error::Autodiff(_) => exit_codes::INTEGRITY,
        Error::NonFinite { .. } => exit_codes::NUMERIC,
    }
}
