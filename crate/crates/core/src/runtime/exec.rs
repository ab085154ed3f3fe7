use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use super::device::{DeviceId, Machine};
use super::mapping::{map_targets, Mapping};
use super::stats::RunStats;
use super::store::{BufferStore, Demand, SpaceMemory};
use super::{RuntimeConfig, RuntimeError};
use crate::document::IrDocument;
use crate::graph::{BindDirection, DFGraph, Extent, NodeId, NodeKind, Replication};
use crate::kernel::{
    compile, derive_seed, run_group, AccessMode, BufferId, CompiledKernel, GroupSpec, Level, ScheduleOptions, Value,
    ValueKind,
};
use crate::verify::{has_errors, verify_graph, Severity};

type Slot = Mutex<Option<Result<Vec<Value>, RuntimeError>>>;

/// A verified graph with compiled kernels and a device for every leaf.
#[derive(Debug)]
pub struct Executable {
    graph: DFGraph,
    kernels: HashMap<NodeId, Arc<CompiledKernel>>,
    mapping: Mapping,
    machine: Machine,
    stream_inputs: Vec<usize>,
    stream_outputs: Vec<usize>,
    streaming: bool,
}

impl Executable {
    /// Prepares graph `graph` of `doc`, or its only graph.
    pub fn new(
        doc: &IrDocument,
        graph: Option<&str>,
        machine: &Machine,
        overrides: &[(String, String)],
    ) -> Result<Self, RuntimeError> {
        let g = doc
            .select_graph(graph)
            .ok_or_else(|| RuntimeError::NoGraph(graph.unwrap_or("").to_string()))?;
        Self::from_graph(g.clone(), machine, overrides)
    }

    pub fn from_graph(graph: DFGraph, machine: &Machine, overrides: &[(String, String)]) -> Result<Self, RuntimeError> {
        let diags = verify_graph(&graph);
        if has_errors(&diags) {
            return Err(RuntimeError::Invalid(
                diags.into_iter().filter(|d| d.severity == Severity::Error).collect(),
            ));
        }
        let mut kernels = HashMap::new();
        let mut cache: HashMap<*const crate::kernel::KernelProgram, Arc<CompiledKernel>> = HashMap::new();
        for leaf in graph.leaves() {
            let k = leaf.kernel().unwrap();
            let compiled = match cache.get(&Arc::as_ptr(k)) {
                Some(c) => c.clone(),
                None => {
                    let c = Arc::new(compile(k)?);
                    cache.insert(Arc::as_ptr(k), c.clone());
                    c
                }
            };
            kernels.insert(leaf.id, compiled);
        }
        let mapping = map_targets(&graph, machine, overrides)?;
        let root = graph.root();
        let port_streams = |dir: BindDirection, port: usize| {
            graph.bindings().iter().any(|b| {
                b.direction == dir && b.parent_port == port && b.streaming && graph.parent(b.child) == Some(root)
            })
        };
        let stream_inputs = (0..graph.root_node().inputs.len())
            .filter(|p| port_streams(BindDirection::Input, *p))
            .collect();
        let stream_outputs = (0..graph.root_node().outputs.len())
            .filter(|p| port_streams(BindDirection::Output, *p))
            .collect();
        let streaming = graph.edges().iter().any(|e| e.streaming) || graph.bindings().iter().any(|b| b.streaming);
        Ok(Executable {
            graph,
            kernels,
            mapping,
            machine: machine.clone(),
            stream_inputs,
            stream_outputs,
            streaming,
        })
    }

    pub fn graph(&self) -> &DFGraph {
        &self.graph
    }

    pub fn mapping(&self) -> &Mapping {
        &self.mapping
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    /// True if the graph has streaming edges or bindings and must be
    /// launched as a pipeline.
    pub fn is_streaming(&self) -> bool {
        self.streaming
    }

    /// Root input ports fed by `push`, in order.
    pub fn stream_inputs(&self) -> &[usize] {
        &self.stream_inputs
    }

    /// Root output ports read by `pop`, in order.
    pub fn stream_outputs(&self) -> &[usize] {
        &self.stream_outputs
    }

    /// Root input ports given at launch, in order.
    pub fn launch_inputs(&self) -> Vec<usize> {
        (0..self.graph.root_node().inputs.len())
            .filter(|p| !self.stream_inputs.contains(p))
            .collect()
    }

    pub(crate) fn check_args(&self, ports: &[usize], args: &[Value]) -> Result<(), RuntimeError> {
        if ports.len() != args.len() {
            return Err(RuntimeError::ArgumentCount {
                expected: ports.len(),
                got: args.len(),
            });
        }
        let root = self.graph.root_node();
        for (&p, a) in ports.iter().zip(args) {
            let port = &root.inputs[p];
            if !a.matches_kind(port.kind) {
                return Err(RuntimeError::ArgumentKind {
                    port: port.name.clone(),
                    expected: port.kind,
                    got: *a,
                });
            }
        }
        Ok(())
    }
}

/// Everything a running launch shares.
pub(crate) struct RunCtx<'a> {
    pub exe: &'a Executable,
    pub store: &'a BufferStore,
    pub config: &'a RuntimeConfig,
    pub stats: &'a StatsSink,
}

/// Stats of one launch, mirrored into the runtime-wide totals.
#[derive(Clone, Default)]
pub(crate) struct StatsSink {
    pub launch: Arc<Mutex<RunStats>>,
    pub global: Arc<Mutex<RunStats>>,
}

impl StatsSink {
    pub fn record(&self, f: impl Fn(&mut RunStats)) {
        f(&mut self.launch.lock().unwrap());
        f(&mut self.global.lock().unwrap());
    }
}

/// Where the value of one input port of a node comes from.
enum Feed<'r> {
    Value(Value),
    PerInstance { outputs: &'r [Vec<Value>], port: usize },
}

impl Feed<'_> {
    fn get(&self, instance: u64) -> Value {
        match self {
            Feed::Value(v) => *v,
            Feed::PerInstance { outputs, port } => outputs[instance as usize][*port],
        }
    }
}

/// The value every instance of `node` returned on `port`.
fn agreed(g: &DFGraph, node: NodeId, outputs: &[Vec<Value>], port: usize) -> Result<Value, RuntimeError> {
    let first = outputs[0][port];
    if outputs.iter().any(|o| !o[port].bit_eq(&first)) {
        return Err(RuntimeError::ConflictingOutputs {
            node: g.get(node).name.clone(),
            port,
        });
    }
    Ok(first)
}

/// One instance of an internal node: its position and input values.
/// `inputs[p]` is `None` for ports whose values arrive later on a stream.
pub(crate) struct Frame<'a> {
    pub node: NodeId,
    /// Levels of this instance and its ancestors, innermost first.
    pub levels: &'a [Level],
    pub inputs: &'a [Option<Value>],
    /// Seed path identifying this instance.
    pub path: &'a [u64],
}

impl RunCtx<'_> {
    fn grid(&self, frame: &Frame<'_>, child: NodeId) -> Result<Vec<u32>, RuntimeError> {
        let g = &self.exe.graph;
        let parent = g.get(frame.node);
        let node = g.get(child);
        node.grid
            .iter()
            .map(|e| match e {
                Extent::Const(c) => Ok(*c),
                Extent::Param(p) => {
                    let idx = parent.input_index(p).unwrap();
                    let v = frame.inputs[idx].ok_or_else(|| RuntimeError::StreamingExtent {
                        node: node.name.clone(),
                        param: p.clone(),
                    })?;
                    match v.as_i64() {
                        Some(n) if (1..=u32::MAX as i64).contains(&n) => Ok(n as u32),
                        _ => Err(RuntimeError::BadExtent {
                            node: node.name.clone(),
                            extent: p.clone(),
                            value: v.to_string(),
                        }),
                    }
                }
            })
            .collect()
    }

    /// Runs all instances of `child` within `frame`. Returns the output
    /// record of each instance.
    fn run_node(
        &self,
        frame: &Frame<'_>,
        child: NodeId,
        feeds: &[Feed<'_>],
        scope: &Mutex<Vec<BufferId>>,
        used: &Mutex<BTreeSet<DeviceId>>,
        parallel: bool,
    ) -> Result<Vec<Vec<Value>>, RuntimeError> {
        let grid = self.grid(frame, child)?;
        let mut path = frame.path.to_vec();
        path.push(child.0 as u64);
        match &self.exe.graph.get(child).kind {
            NodeKind::Leaf { .. } => self.run_leaf(frame, child, &grid, feeds, scope, used, &path),
            NodeKind::Internal { .. } => {
                let count = Level::from_linear(&grid, 0).count();
                let run_one = |i: u64| -> Result<Vec<Value>, RuntimeError> {
                    let mut levels = Vec::with_capacity(frame.levels.len() + 1);
                    levels.push(Level::from_linear(&grid, i));
                    levels.extend_from_slice(frame.levels);
                    let inputs: Vec<Option<Value>> = feeds.iter().map(|f| Some(f.get(i))).collect();
                    let mut p = path.clone();
                    p.push(i);
                    let inner = Frame {
                        node: child,
                        levels: &levels,
                        inputs: &inputs,
                        path: &p,
                    };
                    self.run_instance(&inner, scope, used, false)
                };
                let workers = self.config.workers.max(1).min(count as usize);
                if !parallel || workers <= 1 {
                    return (0..count).map(run_one).collect();
                }
                let next = AtomicUsize::new(0);
                let results: Vec<Slot> = (0..count).map(|_| Mutex::new(None)).collect();
                std::thread::scope(|s| {
                    for _ in 0..workers {
                        s.spawn(|| loop {
                            let i = next.fetch_add(1, Ordering::Relaxed);
                            if i >= count as usize {
                                break;
                            }
                            *results[i].lock().unwrap() = Some(run_one(i as u64));
                        });
                    }
                });
                results
                    .into_iter()
                    .map(|r| r.into_inner().unwrap().expect("every instance ran"))
                    .collect()
            }
        }
    }

    /// Executes the child graph of one internal-node instance and returns
    /// the instance's output record. Memory allocated inside and not
    /// returned is freed.
    fn run_instance(
        &self,
        frame: &Frame<'_>,
        outer_scope: &Mutex<Vec<BufferId>>,
        used: &Mutex<BTreeSet<DeviceId>>,
        parallel: bool,
    ) -> Result<Vec<Value>, RuntimeError> {
        let g = &self.exe.graph;
        let order = g.topo_order(frame.node).expect("verified graphs are acyclic");
        let scope = Mutex::new(Vec::new());
        let mut results: BTreeMap<NodeId, Vec<Vec<Value>>> = BTreeMap::new();
        let outcome = (|| {
            for &c in &order {
                let feeds = self.feeds(frame, c, &results)?;
                let out = self.run_node(frame, c, &feeds, &scope, used, parallel)?;
                results.insert(c, out);
            }
            self.bound_outputs(frame.node, &results)
        })();
        let allocated = scope.into_inner().unwrap();
        let keep: Vec<BufferId> = match &outcome {
            Ok(out) => out.iter().filter_map(|v| v.as_buffer()).collect(),
            Err(_) => Vec::new(),
        };
        let mut outer = outer_scope.lock().unwrap();
        for id in allocated {
            if keep.contains(&id) {
                outer.push(id);
            } else {
                let _ = self.store.free(id);
            }
        }
        outcome
    }

    fn feeds<'r>(
        &self,
        frame: &Frame<'_>,
        child: NodeId,
        results: &'r BTreeMap<NodeId, Vec<Vec<Value>>>,
    ) -> Result<Vec<Feed<'r>>, RuntimeError> {
        let g = &self.exe.graph;
        let node = g.get(child);
        let mut feeds: Vec<Option<Feed<'r>>> = (0..node.inputs.len()).map(|_| None).collect();
        for b in g.bindings_of(child).filter(|b| b.direction == BindDirection::Input) {
            if let Some(v) = frame.inputs[b.parent_port] {
                feeds[b.child_port] = Some(Feed::Value(v));
            }
        }
        for e in g.edges_into(child) {
            let Some(src) = results.get(&e.src) else { continue };
            feeds[e.dst_port] = Some(match e.replication {
                Replication::OneToOne => Feed::PerInstance {
                    outputs: src,
                    port: e.src_port,
                },
                Replication::AllToAll => Feed::Value(agreed(g, e.src, src, e.src_port)?),
            });
        }
        feeds
            .into_iter()
            .enumerate()
            .map(|(i, f)| {
                f.ok_or_else(|| RuntimeError::MissingInput {
                    node: node.name.clone(),
                    port: node.inputs[i].name.clone(),
                })
            })
            .collect()
    }

    fn bound_outputs(
        &self,
        node: NodeId,
        results: &BTreeMap<NodeId, Vec<Vec<Value>>>,
    ) -> Result<Vec<Value>, RuntimeError> {
        let g = &self.exe.graph;
        let mut out: Vec<Option<Value>> = vec![None; g.get(node).outputs.len()];
        for b in g.child_bindings(node).filter(|b| b.direction == BindDirection::Output) {
            if let Some(r) = results.get(&b.child) {
                out[b.parent_port] = Some(agreed(g, b.child, r, b.child_port)?);
            }
        }
        Ok(out.into_iter().map(|v| v.unwrap_or(Value::Bool(false))).collect())
    }

    #[allow(clippy::too_many_arguments)]
    fn run_leaf(
        &self,
        frame: &Frame<'_>,
        leaf: NodeId,
        grid: &[u32],
        feeds: &[Feed<'_>],
        scope: &Mutex<Vec<BufferId>>,
        used: &Mutex<BTreeSet<DeviceId>>,
        path: &[u64],
    ) -> Result<Vec<Vec<Value>>, RuntimeError> {
        let g = &self.exe.graph;
        let node = g.get(leaf);
        let kernel = &self.exe.kernels[&leaf];
        let device = self.exe.machine.device(self.exe.mapping.device_of(leaf));
        let count = Level::from_linear(grid, 0).count();
        let args = |i: u64| feeds.iter().map(|f| f.get(i)).collect::<Vec<Value>>();

        let mut modes: BTreeMap<BufferId, AccessMode> = BTreeMap::new();
        for (p, param) in kernel.params().iter().enumerate() {
            let (ValueKind::Buffer(_), Some(mode)) = (param.kind, param.mode) else {
                continue;
            };
            let ids: Vec<Value> = match &feeds[p] {
                Feed::Value(v) => vec![*v],
                f => (0..count).map(|i| f.get(i)).collect(),
            };
            for id in ids.iter().filter_map(|v| v.as_buffer()) {
                modes.entry(id).and_modify(|m| *m = m.join(mode)).or_insert(mode);
            }
        }
        for (&id, &mode) in &modes {
            match self.store.demand(id, mode, device.space)? {
                Demand::None => {}
                Demand::Elided => self.stats.record(|s| s.record_elided()),
                Demand::Copied { from, to, bytes } => {
                    let (from, to) = (self.exe.machine.space_name(from), self.exe.machine.space_name(to));
                    self.stats.record(|s| s.record_copy(&from, &to, bytes));
                }
            }
        }

        let opts = ScheduleOptions {
            seed: derive_seed(self.config.seed, path),
            widths: device.widths,
            trace: false,
            max_quantum: self.config.max_quantum,
        };
        let mem = SpaceMemory {
            store: self.store,
            space: device.space,
            scope,
        };
        let spec = GroupSpec {
            ancestors: frame.levels,
            extents: grid,
            args: &args,
        };
        let outcome = run_group(kernel, &spec, &mem, &opts).map_err(|error| RuntimeError::Kernel {
            node: node.name.clone(),
            error,
        })?;
        for (&id, &mode) in &modes {
            if mode.writes() {
                self.store.wrote(id, device.space)?;
            }
        }
        used.lock().unwrap().insert(device.id);
        self.stats.record(|s| s.record_group(&device.name, count));
        Ok(outcome.outputs)
    }

    /// Runs one child of the root with the given port values and counts one
    /// launch per device its leaves ran on.
    pub fn run_stage(
        &self,
        child: NodeId,
        root_inputs: &[Option<Value>],
        inputs: &[Value],
        token: u64,
        scope: &Mutex<Vec<BufferId>>,
    ) -> Result<Vec<Value>, RuntimeError> {
        let g = &self.exe.graph;
        let levels = [Level::single()];
        let path = [token];
        let frame = Frame {
            node: g.root(),
            levels: &levels,
            inputs: root_inputs,
            path: &path,
        };
        let feeds: Vec<Feed<'_>> = inputs.iter().map(|v| Feed::Value(*v)).collect();
        let used = Mutex::new(BTreeSet::new());
        let out = self.run_node(&frame, child, &feeds, scope, &used, true);
        self.count_launches(&used);
        let out = out?;
        (0..g.get(child).outputs.len())
            .map(|p| agreed(g, child, &out, p))
            .collect()
    }

    fn count_launches(&self, used: &Mutex<BTreeSet<DeviceId>>) {
        for d in used.lock().unwrap().iter() {
            let name = &self.exe.machine.device(*d).name;
            self.stats.record(|s| s.record_launch(name));
        }
    }

    /// Runs the whole graph once. Root children run in topological order.
    pub fn run_graph(&self, args: &[Value]) -> Result<Vec<Value>, RuntimeError> {
        let g = &self.exe.graph;
        let root = g.root();
        let inputs: Vec<Option<Value>> = args.iter().map(|v| Some(*v)).collect();
        let levels = [Level::single()];
        let frame = Frame {
            node: root,
            levels: &levels,
            inputs: &inputs,
            path: &[0],
        };
        let order = g.topo_order(root).expect("verified graphs are acyclic");
        let scope = Mutex::new(Vec::new());
        let mut results: BTreeMap<NodeId, Vec<Vec<Value>>> = BTreeMap::new();
        let outcome = (|| {
            for &c in &order {
                let feeds = self.feeds(&frame, c, &results)?;
                let used = Mutex::new(BTreeSet::new());
                let out = self.run_node(&frame, c, &feeds, &scope, &used, true);
                self.count_launches(&used);
                results.insert(c, out?);
            }
            self.bound_outputs(root, &results)
        })();
        let keep: Vec<BufferId> = match &outcome {
            Ok(out) => out.iter().filter_map(|v| v.as_buffer()).collect(),
            Err(_) => Vec::new(),
        };
        for id in scope.into_inner().unwrap() {
            if !keep.contains(&id) {
                let _ = self.store.free(id);
            }
        }
        outcome
    }
}
