//! Graph-transformer multiple-instance learning on bags of patch features.
//!
//! Each bag becomes a k-NN graph over patch coordinates. A stack of GTI
//! blocks adds a GENConv message-passing branch to an exact multi-head
//! self-attention branch, attention pooling collapses the instances to a
//! bag embedding, and a small MLP classifies it. Everything runs on a
//! small tape-based autodiff engine over dense row-major matrices, in
//! `f32` or `f64`.

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod data;
pub mod dd;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod harness;
pub mod layers;
pub mod metrics;
pub mod mil;
pub mod model;
pub mod optim;
pub mod real;
pub mod tensor;

pub use autodiff::{OpKind, Tape, Var};
pub use data::{generate, Bag, BagDataset, GeneratedDataset, InstanceKind, Manifest, Split, SynthSpec, SynthTask};
pub use error::{IgtError, Result};
pub use graph::{build_graph, knn_adjacency, permute_graph, Csr, GraphConfig, NeighborSpace, WsiGraph};
pub use harness::{ablate, train, AblationTable, PreparedData, RunRecord, TrainConfig};
pub use layers::{AttentionKernel, BlockMode};
pub use metrics::EvalReport;
pub use model::{IgtModel, ModelDims};
pub use optim::{LrSchedule, RAdamConfig, RAdamState};
pub use real::{Precision, Real};
pub use tensor::Tensor;
