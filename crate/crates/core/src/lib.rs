//! Query-driven graph convolutional network for attributed community
//! search: data loading, query generation, the model, training and
//! evaluation.

pub mod datasets;
pub mod error;
pub mod evaluator;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod querygen;
pub mod rng;
pub mod synthetic;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
pub use evaluator::EvalReport;
pub use graph::{AttributedGraph, NormalizedViews};
pub use linalg::{Csr, Matrix};
pub use metrics::Counts;
pub use model::{Aggregation, Model, ModelConfig, Variant};
pub use querygen::{GenConfig, Query, QueryMode, QuerySet};
pub use trainer::{Checkpoint, TrainConfig};
