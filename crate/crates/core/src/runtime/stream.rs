use std::collections::HashMap;
use std::sync::mpsc::{channel, sync_channel, Receiver, Sender, SyncSender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;

use super::exec::{Executable, RunCtx, StatsSink};
use super::store::BufferStore;
use super::{RuntimeConfig, RuntimeError};
use crate::graph::{BindDirection, NodeId};
use crate::kernel::Value;

/// Counting semaphore bounding how many stages fire at once.
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) {
        let mut n = self.free.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
    }

    fn release(&self) {
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

enum Out {
    Bounded(SyncSender<Value>),
    Unbounded(Sender<Value>),
}

impl Out {
    fn send(&self, v: Value) -> bool {
        match self {
            Out::Bounded(s) => s.send(v).is_ok(),
            Out::Unbounded(s) => s.send(v).is_ok(),
        }
    }
}

enum In {
    Const(Value),
    Chan(Receiver<Value>),
}

/// A launched pipeline: every child of the root that consumes a stream
/// is a persistent stage running on its own thread, connected to the
/// others by bounded channels.
pub(crate) struct Pipeline {
    exe: Arc<Executable>,
    inputs: Mutex<Option<Vec<Vec<SyncSender<Value>>>>>,
    outputs: Mutex<Vec<Receiver<Value>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    failure: Arc<Mutex<Option<RuntimeError>>>,
}

impl Pipeline {
    pub fn start(
        exe: Arc<Executable>,
        store: Arc<BufferStore>,
        config: RuntimeConfig,
        stats: StatsSink,
        args: &[Value],
    ) -> Result<Pipeline, RuntimeError> {
        let g = exe.graph();
        let root = g.root();
        let mut root_inputs: Vec<Option<Value>> = vec![None; g.root_node().inputs.len()];
        for (p, v) in exe.launch_inputs().into_iter().zip(args) {
            root_inputs[p] = Some(*v);
        }
        let order = g.topo_order(root).expect("verified graphs are acyclic");
        let streams_in = |c: NodeId| {
            g.edges_into(c).any(|e| e.streaming)
                || g.bindings_of(c)
                    .any(|b| b.direction == BindDirection::Input && b.streaming)
        };

        // stages that consume no stream fire once, now
        let ctx = RunCtx {
            exe: &exe,
            store: &store,
            config: &config,
            stats: &stats,
        };
        let mut once: HashMap<NodeId, Vec<Value>> = HashMap::new();
        for &c in order.iter().filter(|c| !streams_in(**c)) {
            let node = g.get(c);
            let mut inputs = vec![Value::Bool(false); node.inputs.len()];
            for b in g.bindings_of(c).filter(|b| b.direction == BindDirection::Input) {
                inputs[b.child_port] = root_inputs[b.parent_port].expect("bindings of one port agree on streaming");
            }
            for e in g.edges_into(c) {
                inputs[e.dst_port] = once[&e.src][e.src_port];
            }
            let scope = Mutex::new(Vec::new());
            let out = ctx.run_stage(c, &root_inputs, &inputs, 0, &scope)?;
            once.insert(c, out);
        }

        let mut ins: HashMap<NodeId, Vec<Option<In>>> = HashMap::new();
        let mut outs: HashMap<NodeId, Vec<Vec<Out>>> = HashMap::new();
        for &c in order.iter().filter(|c| streams_in(**c)) {
            let node = g.get(c);
            ins.insert(c, (0..node.inputs.len()).map(|_| None).collect());
            outs.insert(c, (0..node.outputs.len()).map(|_| Vec::new()).collect());
        }
        let capacity = config.stream_capacity.max(1);
        let mut push: Vec<Vec<SyncSender<Value>>> = exe.stream_inputs().iter().map(|_| Vec::new()).collect();
        let mut pop: Vec<Option<Receiver<Value>>> = exe.stream_outputs().iter().map(|_| None).collect();
        for e in g.child_edges(root).map(|(_, e)| e) {
            let Some(slots) = ins.get_mut(&e.dst) else { continue };
            if let Some(v) = once.get(&e.src) {
                slots[e.dst_port] = Some(In::Const(v[e.src_port]));
            } else {
                let (tx, rx) = sync_channel(capacity);
                slots[e.dst_port] = Some(In::Chan(rx));
                outs.get_mut(&e.src).unwrap()[e.src_port].push(Out::Bounded(tx));
            }
        }
        for b in g.child_bindings(root) {
            match b.direction {
                BindDirection::Input => {
                    let Some(slots) = ins.get_mut(&b.child) else { continue };
                    match exe.stream_inputs().iter().position(|p| *p == b.parent_port) {
                        Some(i) => {
                            let (tx, rx) = sync_channel(capacity);
                            push[i].push(tx);
                            slots[b.child_port] = Some(In::Chan(rx));
                        }
                        None => slots[b.child_port] = Some(In::Const(root_inputs[b.parent_port].unwrap())),
                    }
                }
                BindDirection::Output => {
                    let Some(slots) = outs.get_mut(&b.child) else { continue };
                    if let Some(i) = exe.stream_outputs().iter().position(|p| *p == b.parent_port) {
                        // the host may not pop before waiting, so the last hop never blocks
                        let (tx, rx) = channel();
                        slots[b.child_port].push(Out::Unbounded(tx));
                        pop[i] = Some(rx);
                    }
                }
            }
        }

        let permits = Arc::new(Permits {
            free: Mutex::new(config.workers.max(1)),
            cv: Condvar::new(),
        });
        let failure = Arc::new(Mutex::new(None));
        let root_inputs = Arc::new(root_inputs);
        let mut threads = Vec::new();
        for &c in order.iter().filter(|c| streams_in(**c)) {
            let inputs: Vec<In> = ins
                .remove(&c)
                .unwrap()
                .into_iter()
                .map(|i| i.expect("verified inputs are fed"))
                .collect();
            let outputs = outs.remove(&c).unwrap();
            let (exe, store, config, stats) = (exe.clone(), store.clone(), config.clone(), stats.clone());
            let (permits, failure, root_inputs) = (permits.clone(), failure.clone(), root_inputs.clone());
            threads.push(std::thread::spawn(move || {
                let ctx = RunCtx {
                    exe: &exe,
                    store: &store,
                    config: &config,
                    stats: &stats,
                };
                for token in 0.. {
                    let mut args = Vec::with_capacity(inputs.len());
                    for i in &inputs {
                        match i {
                            In::Const(v) => args.push(*v),
                            In::Chan(rx) => match rx.recv() {
                                Ok(v) => args.push(v),
                                Err(_) => return,
                            },
                        }
                    }
                    permits.acquire();
                    if let Some(d) = config.stage_delay {
                        std::thread::sleep(d);
                    }
                    let scope = Mutex::new(Vec::new());
                    let result = ctx.run_stage(c, &root_inputs, &args, token, &scope);
                    permits.release();
                    match result {
                        Ok(values) => {
                            for (port, targets) in outputs.iter().enumerate() {
                                for t in targets {
                                    t.send(values[port]);
                                }
                            }
                        }
                        Err(e) => {
                            failure.lock().unwrap().get_or_insert(e);
                            return;
                        }
                    }
                }
            }));
        }
        Ok(Pipeline {
            exe: exe.clone(),
            inputs: Mutex::new(Some(push)),
            outputs: Mutex::new(
                pop.into_iter()
                    .map(|r| r.expect("verified outputs are bound"))
                    .collect(),
            ),
            threads: Mutex::new(threads),
            failure,
        })
    }

    fn failure(&self) -> Option<RuntimeError> {
        self.failure.lock().unwrap().clone()
    }

    /// Feeds one token per streaming root input. Blocks while the first
    /// stage's buffer is full.
    pub fn push(&self, values: &[Value]) -> Result<(), RuntimeError> {
        self.exe.check_args(self.exe.stream_inputs(), values)?;
        let inputs = self.inputs.lock().unwrap();
        let Some(senders) = inputs.as_ref() else {
            return Err(RuntimeError::StreamClosed);
        };
        for (v, targets) in values.iter().zip(senders) {
            for t in targets {
                if t.send(*v).is_err() {
                    return Err(self.failure().unwrap_or(RuntimeError::StreamClosed));
                }
            }
        }
        Ok(())
    }

    /// Next output record, or `None` once the input is closed and drained.
    pub fn pop(&self) -> Result<Option<Vec<Value>>, RuntimeError> {
        let outputs = self.outputs.lock().unwrap();
        if outputs.is_empty() {
            return Ok(None);
        }
        let mut record = Vec::with_capacity(outputs.len());
        for rx in outputs.iter() {
            match rx.recv() {
                Ok(v) => record.push(v),
                Err(_) => {
                    return match self.failure() {
                        Some(e) => Err(e),
                        None => Ok(None),
                    }
                }
            }
        }
        Ok(Some(record))
    }

    pub fn close(&self) {
        self.inputs.lock().unwrap().take();
    }

    pub fn is_closed(&self) -> bool {
        self.inputs.lock().unwrap().is_none()
    }

    /// Waits for every stage to drain. The input must be closed.
    pub fn join(&self) -> Result<(), RuntimeError> {
        if !self.is_closed() {
            return Err(RuntimeError::StreamOpen);
        }
        let threads: Vec<_> = self.threads.lock().unwrap().drain(..).collect();
        for t in threads {
            if t.join().is_err() {
                self.failure.lock().unwrap().get_or_insert(RuntimeError::WorkerPanic);
            }
        }
        match self.failure() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}
