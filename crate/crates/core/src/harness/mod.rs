//! Closed-loop experiment runner.

mod config;
mod episode;
mod matrix;

pub use config::{ExperimentConfig, Method};
pub use episode::{
    run_episode, run_episode_on, EpisodeOutput, ImportanceLearner, LearnerPolicy, MetricsRecord, Sequence,
};
pub use matrix::{render_summary, run_matrix, write_records_csv, MatrixResult};
