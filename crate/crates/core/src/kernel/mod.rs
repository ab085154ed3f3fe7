//! The kernel language: syntax, static checking, and an interpreter that
//! executes leaf-node instances.

pub mod ast;
pub mod compile;
pub mod interp;
pub mod memory;

use thiserror::Error;

pub use ast::*;
pub use compile::{check, compile, CompiledKernel, KernelError};
pub use interp::{
    derive_seed, interpret_instance, run_group, Access, AccessKind, GroupOutcome, GroupSpec, InstanceContext, Level,
    QueryKind, ScheduleOptions, VectorWidths,
};
pub use memory::{malloc_len, BufferData, BufferId, Memory, SimpleMemory, Storage, Value, DEFAULT_MAX_ALLOC_BYTES};

/// Failure while executing kernel code.
#[derive(Clone, Debug, PartialEq, Error)]
pub enum ExecError {
    #[error("index {index} out of bounds for {buffer} of length {len}")]
    OutOfBounds { buffer: BufferId, index: i64, len: usize },
    #[error("integer division by zero")]
    DivisionByZero,
    #[error("unknown buffer {0}")]
    UnknownBuffer(BufferId),
    #[error("malloc of zero or negative size")]
    ZeroAllocation,
    #[error("malloc of {bytes} bytes exceeds the {cap}-byte limit")]
    AllocationTooLarge { bytes: u64, cap: u64 },
    #[error("malloc of {bytes} bytes is not a multiple of the {elem} element size")]
    MisalignedAllocation { bytes: u64, elem: ScalarType },
    #[error("query of dimension {dim} at depth {depth}, which has {dims} dimension(s)")]
    DimOutOfRange { dim: &'static str, depth: u32, dims: u8 },
    #[error("query at depth {depth}, but only {levels} level(s) enclose this instance")]
    DepthOutOfRange { depth: u32, levels: usize },
    #[error("vector_length of unsupported type size {0}")]
    UnsupportedTypeSize(i64),
    #[error(
        "barrier deadlock: {waiting} instance(s) wait at a barrier that {finished} finished instance(s) never reach"
    )]
    BarrierDeadlock { waiting: usize, finished: usize },
    #[error("instances of one group wait at different barriers")]
    DivergentBarrier,
    #[error("barrier reached outside a multi-instance group")]
    BarrierOutsideGroup,
    #[error("kernel `{kernel}` expects {expected} argument(s), got {got}")]
    ArgumentCount {
        kernel: String,
        expected: usize,
        got: usize,
    },
    #[error("argument `{param}` expects {expected}, got {got}")]
    ArgumentKind {
        param: String,
        expected: ValueKind,
        got: Value,
    },
    #[error("buffer argument `{param}` has element type {got}, expected {expected}")]
    BufferElemMismatch {
        param: String,
        expected: ScalarType,
        got: ScalarType,
    },
    #[error("instance {id:?}: {error}")]
    Instance { id: [u32; 3], error: Box<ExecError> },
}

impl ExecError {
    /// The error without instance attribution.
    pub fn root(&self) -> &ExecError {
        match self {
            ExecError::Instance { error, .. } => error.root(),
            e => e,
        }
    }
}
