//! Experiment configuration, matrix expansion and process orchestration
//! behind the `sslhar` binary.

pub mod config;
pub mod jobs;
pub mod matrix;
pub mod orchestrate;

pub use config::{parse_config, parse_config_str, ExperimentConfig, RESULTS_ENV};
pub use jobs::{execute, Job, JobFile};
pub use matrix::{expand_matrix, pending, FinetuneJob, Plan, PretrainJob};
pub use orchestrate::{orchestrate, Failure, Launcher, Summary};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
