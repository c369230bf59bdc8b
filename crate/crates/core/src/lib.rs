//! Deterministic core of a character-centric movie audio-description pipeline.
//!
//! Everything here operates on precomputed embeddings and timed-text records:
//!
//! * [`query_bank`] builds a per-movie best-query bank from portrait embeddings.
//! * [`recognition`] labels face embeddings against a bank with an open-set threshold.
//! * [`track`] propagates recognized anchors across keyframes with a FIFO memory bank.
//! * [`prompt`] assembles the dynamic instruction template and the text prior.
//! * [`token_merge`] compresses character tokens by merging similar neighbours.
//! * [`redundancy`] scores generated descriptions for content absent from the reference.
//! * [`segment`] finds dialogue-free clips, keyframes and AD types.
//! * [`config`] holds the run parameters shared by every stage.
//! * [`synth`] generates seeded fixtures for tests and demos.
//! * [`pipeline`] chains the stages over a movie manifest.

pub mod config;
pub mod embedding;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod prompt;
pub mod query_bank;
pub mod recognition;
pub mod redundancy;
pub mod segment;
pub mod synth;
pub mod token_merge;
pub mod track;

mod kmeans;

pub use config::PipelineConfig;
pub use embedding::{cosine_similarity, l2_distance, l2_distance_sq, normalize, Embedding};
pub use error::{Error, Result};
pub use prompt::{PromptTemplateSet, TextKind, TimedText};
pub use query_bank::{PortraitSet, QueryBank};
pub use recognition::{BBox, FaceDetection, Label, RecognitionResult};
pub use segment::{AdType, ClipSpec};
pub use track::{DetectionTimeline, Track};
