//! Library surface of the `svqa` command-line harness; the binary is a
//! thin argument-parsing wrapper over these functions so tests can drive
//! the exact same code paths.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_ablation, cmd_cache_features, cmd_eval, cmd_gen_data, cmd_inspect_gating, cmd_predict,
    cmd_train, AblationCell, TrainOutcome, ABLATION_REFERENCE,
};
pub use config::{Overrides, RunConfig};
