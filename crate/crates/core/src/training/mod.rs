//! Corpus handling, the truncated-BPTT training loop, evaluation and
//! checkpoints.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod trainer;
pub mod window;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::TrainConfig;
pub use corpus::{Corpus, Split};
pub use trainer::{
    evaluate_bpc, sample_training_chunks, train, Cursor, LogRecord, StepStats, TrainOutputs, Trainer,
};
pub use window::{run_tbptt_window, ReplayStep, WindowMasks, WindowOutput};
