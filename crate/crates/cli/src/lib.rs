//! Library side of the `otflow` binary: run configuration and subcommands.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_eval, cmd_generate, cmd_interpolate, cmd_train, eval_paths, interp_dir, load_run_model,
    InterpArgs, Method, TrainArgs,
};
pub use config::RunConfig;
