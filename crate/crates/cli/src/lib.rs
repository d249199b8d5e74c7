//! Library half of the `copdnet` command-line tool: configuration parsing,
//! the cache lock, and one function per subcommand.

pub mod commands;
pub mod config;
pub mod error;
pub mod lock;

pub use commands::{
    cmd_calibrate, cmd_cv, cmd_features, cmd_index, cmd_predict, cmd_segment, cmd_train, CalibrationOutput,
    FeatureSummary, IndexSummary, Prediction, TrainOutcome, TrainSummary,
};
pub use config::{ConfigError, RunConfig, CACHE_DIR_ENV};
pub use error::{CliError, Result};
pub use lock::CacheLock;
