//! The network: graph, structure and attribute encoders joined by a
//! per-layer fusion, with a learned logistic output head.

mod config;
mod forward;
mod infer;
mod params;

pub use config::{Aggregation, Components, ModelConfig, Variant};
pub use forward::{BnUpdate, Forward, ForwardTrace, GraphCache, LayerTrace, LayerVars, QueryInput};
pub use params::{glorot, Affine, BnSlot, Gcn, Layer, LayerStats, Model, Weights};
