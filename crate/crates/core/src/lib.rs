//! Multi-problem question answering toolkit: compose several questions into
//! one prompt, probe a model to find which sub-answers it gets right, turn
//! that into "I am sure"/"I am unsure" supervision for two-stage tuning, and
//! score calibrated confidence with AP, ECE and accuracy among certain
//! answers.
//!
//! The stages map onto modules:
//!
//! | stage    | module |
//! |----------|--------|
//! | ingest   | [`data_model`] |
//! | compose  | [`composer`] |
//! | probe    | [`boundary`] over [`model_client`] |
//! | emit     | [`sft_emitter`] |
//! | evaluate | [`metrics`] |
//! | run      | [`pipeline`] |

pub mod boundary;
pub mod composer;
pub mod data_model;
pub mod hashing;
pub mod metrics;
pub mod model_client;
pub mod pipeline;
pub mod sft_emitter;

pub use boundary::{BoundaryRecord, ConfidenceLabel};
pub use composer::{compose, MultiProblem, PromptTemplate};
pub use data_model::{load_dataset, validate, Dataset, Format, Problem, Setting};
pub use metrics::{CalibrationReport, PredictionRecord};
pub use model_client::{
    CompletionRequest, CompletionResponse, MockModel, MockModelSpec, ModelClient,
};
pub use pipeline::{run, RunConfig, RunSummary};
pub use sft_emitter::{Stage, TuningRecord};
