//! Executes graphs on a simulated machine: devices with separate address
//! spaces, a memory tracker that elides redundant copies, one-shot launches
//! and streaming pipelines.

mod device;
mod exec;
mod mapping;
mod stats;
mod store;
mod stream;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

pub use device::{DeviceId, DeviceModel, Machine, SpaceId};
pub use exec::Executable;
pub use mapping::{map_targets, stage_mappings, Mapping, MappingError};
pub use stats::{CopyCount, RunStats};
pub use store::{MemError, TrackerEntry};

use crate::kernel::{
    BufferData, BufferId, ExecError, KernelError, ScalarType, Value, ValueKind, DEFAULT_MAX_ALLOC_BYTES,
};
use crate::verify::Diagnostic;
use exec::{RunCtx, StatsSink};
use store::{BufferStore, Demand};
use stream::Pipeline;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RuntimeError {
    #[error("graph failed verification: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Diagnostic>),
    #[error("no graph `{0}` (name one when a document holds several)")]
    NoGraph(String),
    #[error(transparent)]
    Compile(#[from] KernelError),
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Memory(#[from] MemError),
    #[error("node `{node}`: {error}")]
    Kernel { node: String, error: ExecError },
    #[error("grid extent `{extent}` of `{node}` is {value}; it must be at least 1")]
    BadExtent {
        node: String,
        extent: String,
        value: String,
    },
    #[error("grid of `{node}` uses `{param}`, which arrives on a stream")]
    StreamingExtent { node: String, param: String },
    #[error("instances of `{node}` returned different values on output {port}")]
    ConflictingOutputs { node: String, port: usize },
    #[error("input `{port}` of `{node}` is not fed")]
    MissingInput { node: String, port: String },
    #[error("expected {expected} argument(s), got {got}")]
    ArgumentCount { expected: usize, got: usize },
    #[error("argument `{port}` expects {expected}, got {got}")]
    ArgumentKind {
        port: String,
        expected: ValueKind,
        got: Value,
    },
    #[error("the graph {} streaming edges; launch it with streaming = {}", if *.graph_streams { "has" } else { "has no" }, .graph_streams)]
    StreamingMismatch { graph_streams: bool },
    #[error("the executable was built for a different machine")]
    MachineMismatch,
    #[error("unknown graph handle {0}")]
    UnknownHandle(u64),
    #[error("handle {0} is not a streaming launch")]
    NotStreaming(u64),
    #[error("handle {0} is a streaming launch")]
    IsStreaming(u64),
    #[error("the input stream is still open; close it before waiting")]
    StreamOpen,
    #[error("the input stream is closed")]
    StreamClosed,
    #[error("the launch has not been waited for")]
    NotFinished,
    #[error("a worker thread panicked")]
    WorkerPanic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RuntimeConfig {
    /// Upper bound on concurrently executing internal-node instances and on
    /// concurrently firing pipeline stages.
    pub workers: usize,
    /// Seeds every barrier-group schedule.
    pub seed: u64,
    /// Capacity of each streaming edge buffer.
    pub stream_capacity: usize,
    /// Extra time spent by every pipeline stage firing.
    pub stage_delay: Option<Duration>,
    pub max_alloc_bytes: u64,
    /// Longest run of operations one instance executes before the scheduler
    /// may switch.
    pub max_quantum: u32,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()),
            seed: 0,
            stream_capacity: 8,
            stage_delay: None,
            max_alloc_bytes: DEFAULT_MAX_ALLOC_BYTES,
            max_quantum: 16,
        }
    }
}

/// A launched graph. Handles are plain ids and may be passed between
/// threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GraphHandle {
    pub id: u64,
    pub streaming: bool,
}

type Outcome = Result<Vec<Value>, RuntimeError>;

enum Launch {
    OneShot {
        thread: Mutex<Option<JoinHandle<Outcome>>>,
        result: Mutex<Option<Outcome>>,
    },
    Stream(Pipeline),
}

struct HandleState {
    launch: Launch,
    stats: Arc<Mutex<RunStats>>,
}

/// Host side of the machine: owns buffers, tracks their copies and runs
/// launched graphs.
pub struct Runtime {
    machine: Machine,
    config: RuntimeConfig,
    store: Arc<BufferStore>,
    stats: Arc<Mutex<RunStats>>,
    handles: Mutex<HashMap<u64, Arc<HandleState>>>,
    next: AtomicU64,
}

impl Runtime {
    pub fn new(machine: Machine, config: RuntimeConfig) -> Self {
        Runtime {
            machine,
            store: Arc::new(BufferStore::new(config.max_alloc_bytes)),
            config,
            stats: Arc::default(),
            handles: Mutex::new(HashMap::new()),
            next: AtomicU64::new(1),
        }
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    /// A new host buffer holding `data`. It is untracked until
    /// [`Runtime::track_mem`] is called.
    pub fn alloc(&self, data: &BufferData) -> BufferId {
        self.store.alloc_host(data)
    }

    pub fn free(&self, id: BufferId) -> Result<(), RuntimeError> {
        Ok(self.store.free(id)?)
    }

    /// Host view of a buffer. A tracked buffer last written on a device must
    /// be requested first.
    pub fn read(&self, id: BufferId) -> Result<BufferData, RuntimeError> {
        Ok(self.store.read_host(id)?)
    }

    pub fn write(&self, id: BufferId, data: &BufferData) -> Result<(), RuntimeError> {
        Ok(self.store.write_host(id, data)?)
    }

    /// Element type and length of a buffer.
    pub fn buffer_shape(&self, id: BufferId) -> Result<(ScalarType, usize), RuntimeError> {
        Ok(self.store.elem(id)?)
    }

    pub fn track_mem(&self, id: BufferId, size: u64) -> Result<(), RuntimeError> {
        Ok(self.store.track(id, size)?)
    }

    pub fn untrack_mem(&self, id: BufferId) -> Result<(), RuntimeError> {
        Ok(self.store.untrack(id)?)
    }

    pub fn tracker_entry(&self, id: BufferId) -> Option<TrackerEntry> {
        self.store.tracker_entry(id)
    }

    /// Brings the latest version of a tracked buffer to the host, copying
    /// only if the host copy is stale.
    pub fn request_mem(&self, id: BufferId) -> Result<(), RuntimeError> {
        if self.store.tracker_entry(id).is_none() {
            return Err(MemError::NotTracked(id).into());
        }
        let host = self.machine.host();
        let mut s = self.stats.lock().unwrap();
        match self.store.demand(id, crate::kernel::AccessMode::In, host.space)? {
            Demand::None => {}
            Demand::Elided => s.record_elided(),
            Demand::Copied { from, to, bytes } => {
                s.record_copy(&self.machine.space_name(from), &self.machine.space_name(to), bytes)
            }
        }
        Ok(())
    }

    /// Number of live buffers, including kernel allocations still referenced
    /// by outputs.
    pub fn live_buffers(&self) -> usize {
        self.store.live()
    }

    /// Starts executing `exe`. A one-shot launch takes a value for every
    /// root input; a streaming launch takes values for the root inputs that
    /// are not streams, and the rest arrive through [`Runtime::push`].
    pub fn launch(
        &self,
        exe: &Arc<Executable>,
        args: Vec<Value>,
        streaming: bool,
    ) -> Result<GraphHandle, RuntimeError> {
        if exe.machine() != &self.machine {
            return Err(RuntimeError::MachineMismatch);
        }
        if exe.is_streaming() != streaming {
            return Err(RuntimeError::StreamingMismatch {
                graph_streams: exe.is_streaming(),
            });
        }
        exe.check_args(&exe.launch_inputs(), &args)?;
        let id = self.next.fetch_add(1, Ordering::Relaxed);
        let sink = StatsSink {
            launch: Arc::default(),
            global: self.stats.clone(),
        };
        let launch = if streaming {
            Launch::Stream(Pipeline::start(
                exe.clone(),
                self.store.clone(),
                self.config.clone(),
                sink.clone(),
                &args,
            )?)
        } else {
            let (exe, store, config, sink) = (exe.clone(), self.store.clone(), self.config.clone(), sink.clone());
            let thread = std::thread::spawn(move || {
                let ctx = RunCtx {
                    exe: &exe,
                    store: &store,
                    config: &config,
                    stats: &sink,
                };
                ctx.run_graph(&args)
            });
            Launch::OneShot {
                thread: Mutex::new(Some(thread)),
                result: Mutex::new(None),
            }
        };
        self.handles.lock().unwrap().insert(
            id,
            Arc::new(HandleState {
                launch,
                stats: sink.launch,
            }),
        );
        Ok(GraphHandle { id, streaming })
    }

    fn state(&self, h: GraphHandle) -> Result<Arc<HandleState>, RuntimeError> {
        self.handles
            .lock()
            .unwrap()
            .get(&h.id)
            .cloned()
            .ok_or(RuntimeError::UnknownHandle(h.id))
    }

    fn pipeline<'s>(&self, h: GraphHandle, st: &'s HandleState) -> Result<&'s Pipeline, RuntimeError> {
        match &st.launch {
            Launch::Stream(p) => Ok(p),
            Launch::OneShot { .. } => Err(RuntimeError::NotStreaming(h.id)),
        }
    }

    /// Blocks until the launch completes. Waiting again returns the same
    /// result at once. A streaming launch must have its input closed.
    pub fn wait(&self, h: GraphHandle) -> Result<(), RuntimeError> {
        let st = self.state(h)?;
        match &st.launch {
            Launch::OneShot { thread, result } => {
                let mut result = result.lock().unwrap();
                if result.is_none() {
                    let t = thread.lock().unwrap().take().expect("joined once");
                    *result = Some(t.join().unwrap_or(Err(RuntimeError::WorkerPanic)));
                }
                result.as_ref().unwrap().as_ref().map(|_| ()).map_err(Clone::clone)
            }
            Launch::Stream(p) => p.join(),
        }
    }

    /// Root outputs of a finished one-shot launch.
    pub fn outputs(&self, h: GraphHandle) -> Result<Vec<Value>, RuntimeError> {
        let st = self.state(h)?;
        match &st.launch {
            Launch::OneShot { result, .. } => match result.lock().unwrap().as_ref() {
                Some(r) => r.clone(),
                None => Err(RuntimeError::NotFinished),
            },
            Launch::Stream(_) => Err(RuntimeError::IsStreaming(h.id)),
        }
    }

    pub fn push(&self, h: GraphHandle, args: Vec<Value>) -> Result<(), RuntimeError> {
        let st = self.state(h)?;
        self.pipeline(h, &st)?.push(&args)
    }

    /// Next output record of a streaming launch; `None` at end of stream.
    pub fn pop(&self, h: GraphHandle) -> Result<Option<Vec<Value>>, RuntimeError> {
        let st = self.state(h)?;
        self.pipeline(h, &st)?.pop()
    }

    /// Ends the input stream. Stages finish the tokens already pushed.
    pub fn close(&self, h: GraphHandle) -> Result<(), RuntimeError> {
        let st = self.state(h)?;
        self.pipeline(h, &st)?.close();
        Ok(())
    }

    /// Counters of one launch so far.
    pub fn stats_snapshot(&self, h: GraphHandle) -> Result<RunStats, RuntimeError> {
        Ok(self.state(h)?.stats.lock().unwrap().clone())
    }

    /// Counters of everything this runtime did, including `request_mem`.
    pub fn stats(&self) -> RunStats {
        self.stats.lock().unwrap().clone()
    }

    /// Forgets a finished launch.
    pub fn release(&self, h: GraphHandle) -> Result<(), RuntimeError> {
        self.handles
            .lock()
            .unwrap()
            .remove(&h.id)
            .map(|_| ())
            .ok_or(RuntimeError::UnknownHandle(h.id))
    }

    /// Launches, waits and returns the outputs.
    pub fn run(&self, exe: &Arc<Executable>, args: Vec<Value>) -> Result<Vec<Value>, RuntimeError> {
        let h = self.launch(exe, args, false)?;
        self.wait(h)?;
        let out = self.outputs(h);
        self.release(h)?;
        out
    }
}
