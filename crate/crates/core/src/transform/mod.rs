//! Graph rewrites: the merge primitives, aux inlining and the fusion pass.

mod fusion;
mod inline;
mod merge;

use thiserror::Error;

use crate::graph::{GraphError, NodeId};

pub use fusion::{fuse_graph, fusion_pass, FusionStep, MergeKind};
pub use inline::{inline_aux, inline_routine};
pub use merge::{merge_alloc_compute, merge_dependent, merge_independent, Merged};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TransformError {
    #[error("routine `{0}` is recursive")]
    Recursion(String),
    #[error("no routine `{0}`")]
    UnknownRoutine(String),
    #[error("no node {0}")]
    UnknownNode(NodeId),
    #[error("`{0}` is not a leaf")]
    NotLeaf(String),
    #[error("`{0}` and `{1}` do not share a parent")]
    NotSiblings(String, String),
    #[error("cannot merge `{0}` with itself")]
    SameNode(String),
    #[error("grids of `{a}` and `{b}` differ: {detail}")]
    GridMismatch { a: String, b: String, detail: String },
    #[error("`{0}` and `{1}` have different target hints")]
    TargetMismatch(String, String),
    #[error("a path leads from `{0}` to `{1}`")]
    PathBetween(String, String),
    #[error("edges from `{0}` to `{1}` must all be one-to-one and non-streaming")]
    NotOneToOne(String, String),
    #[error("`{0}` feeds `{1}`; merge them in the other order")]
    ReverseEdge(String, String),
    #[error("no edge from `{0}` to `{1}`")]
    NoDependence(String, String),
    #[error("`{0}` does not hold exactly one allocation leaf and one compute leaf")]
    NotAllocCompute(String),
    #[error("`{0}` and `{1}` are connected")]
    Connected(String, String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}
