//! # jmlab
//!
//! A desk-scale toolkit for full-duplex spoken dialogue modeling on discrete
//! audio tokens.
//!
//! The crate is organised around one data model, the multi-stream
//! [`TokenGrid`](token_grid::TokenGrid): a time-major matrix of token ids at
//! 12.5 frames per second holding one text stream (the model's inner
//! monologue) and eight codec streams for each side of a stereo dialogue.
//!
//! - [`token_grid`]: schemas, per-stream delays, slicing and the binary grid format
//! - [`alignment`]: diarization and timed transcripts to training grids, a
//!   deterministic pseudo-codec, manifests and splits
//! - [`model`]: a small RQ-Transformer (temporal + depth transformer) with
//!   hand-written backpropagation, weighted loss, AdamW and checkpoints
//! - [`generation`]: temperature sampling, dialogue continuation, multi-stream
//!   TTS with best-of-N selection by WER
//! - [`turn_taking`]: IPU, pause, gap and overlap statistics per minute
//! - [`eval`]: prompted-continuation experiments with mock ASR/LM adapters
//! - [`synth`]: a scripted two-speaker process for building toy corpora
//! - [`cli`]: the `jmlab` command surface
//!
//! Runnable walkthroughs live in the crate's `examples/` directory:
//!
//! ```bash
//! cargo run --release -p jmlab --example delay_algebra
//! cargo run --release -p jmlab --example prep_corpus
//! cargo run --release -p jmlab --example train_toy_model
//! cargo run --release -p jmlab --example continue_dialogue
//! cargo run --release -p jmlab --example tts_best_of_n
//! cargo run --release -p jmlab --example turn_taking_report
//! cargo run --release -p jmlab --example continuation_experiment
//! ```

pub mod alignment;
pub mod cli;
pub mod error;
pub mod eval;
pub mod generation;
pub mod model;
pub mod rng;
pub mod synth;
pub mod token_grid;
pub mod turn_taking;

pub use error::{Error, Result};
pub use token_grid::{Channel, GridSchema, SchemaKind, StreamRole, StreamSpec, TokenGrid};

/// Codec frame rate in frames per second.
pub const FRAME_RATE_HZ: f64 = 12.5;

/// Number of seconds covered by `frames` frames.
pub fn frames_to_seconds(frames: usize) -> f64 {
    frames as f64 / FRAME_RATE_HZ
}

/// Nearest whole frame count for a duration in seconds.
pub fn seconds_to_frames(seconds: f64) -> usize {
    (seconds * FRAME_RATE_HZ).round().max(0.0) as usize
}

/// `"2048 frames = 163.84 s (2.7 min)"`.
pub fn describe_frames(frames: usize) -> String {
    let s = frames_to_seconds(frames);
    format!("{frames} frames = {s:.2} s ({:.1} min)", s / 60.0)
}
