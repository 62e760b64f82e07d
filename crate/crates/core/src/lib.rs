//! Sentence classification with convolutions over dependency-tree windows.
//!
//! Pipeline: [`ingest`] parses CoNLL trees, [`patterns`] turns each word into
//! ancestor, sibling and sequential windows, [`model`] convolves, max-pools
//! and classifies, and [`training`] fits the parameters with Adadelta.

pub mod checkpoint;
pub mod embeddings;
pub mod error;
pub mod ingest;
pub mod model;
pub mod numerics;
pub mod patterns;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result, TreeProblem};
pub use ingest::{Dataset, DepSentence, Token};
pub use model::{init_params, ModelConfig, ModelParams};
pub use numerics::{Activation, Precision, Real};
pub use patterns::{TemplateSet, WindowTemplate};
pub use training::{evaluate, fit, TrainConfig};
