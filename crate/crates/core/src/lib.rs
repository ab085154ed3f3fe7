//! Hierarchical dataflow graphs as a portable parallel program
//! representation.

pub mod analysis;
pub mod document;
pub mod graph;
pub mod kernel;
pub mod runtime;
pub mod text;
pub mod transform;
pub mod verify;

#[cfg(doctest)]
mod book;

pub use document::IrDocument;
pub use graph::{DFEdge, DFGraph, DFNode, Extent, NodeId, NodeKind, Port, Replication, TargetHint};
