//! Traffic flow forecasting on road graphs with importance-sampled graph
//! convolutions feeding a GRU encoder-decoder.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod evalbench;
mod fsutil;
pub mod graph;
pub mod ingest;
pub mod layers;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
pub use fsutil::write_atomic;
pub use graph::{normalize_adjacency, NormAdj, RoadGraph, SamplerDist, SamplerMode};
pub use ingest::{FlowMatrix, Interval};
pub use layers::{GcnLayer, GruCell, SampleDraw, SpatialExtractor};
pub use model::{Checkpoint, FastGcrnnModel, ModelConfig, TrainConfig};
pub use numerics::{Activation, Matrix, Param};
