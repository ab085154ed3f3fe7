//! Static analyses over leaf kernels: memory uniformity, read-only buffers
//! and allocation nodes.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;

use crate::document::IrDocument;
use crate::graph::{BindDirection, DFGraph, NodeId};
use crate::kernel::{walk_stmts, AccessMode, Expr, Intrinsic, KernelProgram, Stmt};
use crate::transform::inline_aux;
use crate::verify::buffer_origins;

fn flat(k: &KernelProgram) -> Cow<'_, KernelProgram> {
    if k.aux.is_empty() {
        return Cow::Borrowed(k);
    }
    match inline_aux(k) {
        Ok(f) => Cow::Owned(f),
        Err(_) => Cow::Borrowed(k),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Uniformity {
    /// Every instance performs the same accesses.
    Uniform,
    InstanceDependent,
}

/// Classification of one buffer parameter of a kernel.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BufferUniformity {
    pub buffer: String,
    pub class: Uniformity,
    /// How the instance dependence arises, outermost step first. Empty for
    /// uniform buffers.
    pub trace: Vec<String>,
}

#[derive(Clone, Debug)]
enum Taint {
    Source(String),
    Var(String),
}

struct TaintState {
    vars: HashMap<String, Taint>,
}

impl TaintState {
    fn expr(&self, e: &Expr) -> Option<Taint> {
        let mut found = None;
        e.walk(&mut |e| {
            if found.is_some() {
                return;
            }
            found = match e {
                Expr::Intrinsic(Intrinsic::InstanceId { dim, depth }) => Some(Taint::Source(if *depth == 0 {
                    format!("instance_id({})", dim.name())
                } else {
                    format!("instance_id({}, {depth})", dim.name())
                })),
                Expr::Load { buffer, .. } => Some(Taint::Source(format!("load from `{}`", var_name(buffer)))),
                Expr::Intrinsic(Intrinsic::Atomic { op, buffer, .. }) => {
                    Some(Taint::Source(format!("{} on `{}`", op.name(), var_name(buffer))))
                }
                Expr::Var(v) if self.vars.contains_key(v) => Some(Taint::Var(v.clone())),
                _ => None,
            };
        });
        found
    }

    fn trace(&self, start: &Taint) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = start.clone();
        let mut seen = HashSet::new();
        loop {
            match cur {
                Taint::Source(s) => {
                    out.push(s);
                    return out;
                }
                Taint::Var(v) => {
                    if !seen.insert(v.clone()) {
                        return out;
                    }
                    out.push(format!("`{v}`"));
                    cur = self.vars[&v].clone();
                }
            }
        }
    }
}

fn var_name(e: &Expr) -> String {
    match e {
        Expr::Var(v) => v.clone(),
        _ => "?".into(),
    }
}

/// One pass over `body`; returns true if a new variable was tainted.
fn propagate(st: &mut TaintState, body: &[Stmt], control: Option<&Taint>) -> bool {
    let mut changed = false;
    for s in body {
        let mut mark = |st: &mut TaintState, name: &str, t: Option<Taint>| {
            if let Some(t) = t.or_else(|| control.cloned()) {
                if !st.vars.contains_key(name) {
                    st.vars.insert(name.to_string(), t);
                    changed = true;
                }
            }
        };
        match s {
            Stmt::Let { name, value, .. } | Stmt::Assign { name, value, .. } => {
                let t = st.expr(value);
                mark(st, name, t);
            }
            Stmt::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                let c = st.expr(cond).or_else(|| control.cloned());
                changed |= propagate(st, then_body, c.as_ref());
                changed |= propagate(st, else_body, c.as_ref());
            }
            Stmt::For {
                var, start, end, body, ..
            } => {
                let t = st.expr(start).or_else(|| st.expr(end));
                mark(st, var, t.clone());
                let c = t.or_else(|| control.cloned());
                changed |= propagate(st, body, c.as_ref());
            }
            Stmt::Call { dests, args, .. } => {
                let t = args.iter().find_map(|a| st.expr(a));
                for d in dests {
                    mark(st, d, t.clone());
                }
            }
            Stmt::Store { .. } | Stmt::Barrier { .. } | Stmt::Expr { .. } | Stmt::Return { .. } => {}
        }
    }
    changed
}

/// Every buffer access in `body` as (buffer variable, index, control taint).
fn accesses<'a>(
    st: &TaintState,
    body: &'a [Stmt],
    control: Option<Taint>,
    out: &mut Vec<(String, &'a Expr, Option<Taint>)>,
) {
    for s in body {
        if let Stmt::Store { buffer, index, .. } = s {
            out.push((var_name(buffer), index, control.clone()));
        }
        for e in s.exprs() {
            e.walk(&mut |e| match e {
                Expr::Load { buffer, index } | Expr::Intrinsic(Intrinsic::Atomic { buffer, index, .. }) => {
                    out.push((var_name(buffer), index, control.clone()))
                }
                _ => {}
            });
        }
        match s {
            Stmt::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                let c = st.expr(cond).or_else(|| control.clone());
                accesses(st, then_body, c.clone(), out);
                accesses(st, else_body, c, out);
            }
            Stmt::For { start, end, body, .. } => {
                let c = st.expr(start).or_else(|| st.expr(end)).or_else(|| control.clone());
                accesses(st, body, c, out);
            }
            _ => {}
        }
    }
}

/// Classifies every buffer parameter of `k`. A buffer is instance dependent
/// when an index used to access it, or a condition or loop bound the access
/// is nested in, depends on an instance id query or on a value read from
/// memory. The analysis is flow insensitive: a variable tainted by any of
/// its assignments is tainted everywhere.
pub fn kernel_uniformity(k: &KernelProgram) -> Vec<BufferUniformity> {
    let k = flat(k);
    let r = &k.entry;
    let mut st = TaintState { vars: HashMap::new() };
    while propagate(&mut st, &r.body, None) {}
    let mut acc = Vec::new();
    accesses(&st, &r.body, None, &mut acc);
    let origins = buffer_origins(&k, r);

    let mut first: HashMap<String, Vec<String>> = HashMap::new();
    for (var, index, control) in acc {
        let (t, what) = match (st.expr(index), control) {
            (Some(t), _) => (t, format!("index of access to `{var}`")),
            (None, Some(t)) => (t, format!("access to `{var}` is conditional")),
            (None, None) => continue,
        };
        for p in origins.get(&var).into_iter().flatten() {
            first.entry(p.clone()).or_insert_with(|| {
                let mut trace = vec![what.clone()];
                trace.extend(st.trace(&t));
                trace
            });
        }
    }
    r.params
        .iter()
        .filter(|p| p.kind.is_buffer())
        .map(|p| match first.remove(&p.name) {
            Some(trace) => BufferUniformity {
                buffer: p.name.clone(),
                class: Uniformity::InstanceDependent,
                trace,
            },
            None => BufferUniformity {
                buffer: p.name.clone(),
                class: Uniformity::Uniform,
                trace: Vec::new(),
            },
        })
        .collect()
}

/// Analysis results for one leaf node.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeafReport<T> {
    pub graph: String,
    pub node: String,
    pub kernel: String,
    pub buffers: Vec<T>,
}

pub type UniformityReport = Vec<LeafReport<BufferUniformity>>;

fn per_leaf<T>(doc: &IrDocument, f: impl Fn(&KernelProgram) -> Vec<T>) -> Vec<LeafReport<T>> {
    let mut out = Vec::new();
    for g in doc.graphs() {
        for n in g.leaves() {
            let k = n.kernel().unwrap();
            out.push(LeafReport {
                graph: g.name.clone(),
                node: n.name.clone(),
                kernel: k.name().to_string(),
                buffers: f(k),
            });
        }
    }
    out
}

/// [`kernel_uniformity`] for every leaf of every graph.
pub fn uniformity_analysis(doc: &IrDocument) -> UniformityReport {
    per_leaf(doc, kernel_uniformity)
}

/// How a kernel actually uses one buffer parameter.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BufferUsage {
    pub buffer: String,
    pub declared: Option<AccessMode>,
    pub read: bool,
    pub written: bool,
    /// Set when the declared mode promises more than the body does.
    pub suggestion: Option<String>,
}

pub fn kernel_buffer_usage(k: &KernelProgram) -> Vec<BufferUsage> {
    let k = flat(k);
    let r = &k.entry;
    let origins = buffer_origins(&k, r);
    let mut read: HashSet<String> = HashSet::new();
    let mut written: HashSet<String> = HashSet::new();
    let touch = |buffer: &Expr, set: &mut HashSet<String>| {
        if let Expr::Var(v) = buffer {
            set.extend(origins.get(v).into_iter().flatten().cloned());
        }
    };
    walk_stmts(&r.body, &mut |s| {
        if let Stmt::Store { buffer, .. } = s {
            touch(buffer, &mut written);
        }
        for e in s.exprs() {
            e.walk(&mut |e| match e {
                Expr::Load { buffer, .. } => touch(buffer, &mut read),
                Expr::Intrinsic(Intrinsic::Atomic { buffer, .. }) => {
                    touch(buffer, &mut read);
                    touch(buffer, &mut written);
                }
                _ => {}
            });
        }
    });
    r.params
        .iter()
        .filter(|p| p.kind.is_buffer())
        .map(|p| {
            let (rd, wr) = (read.contains(&p.name), written.contains(&p.name));
            let suggestion = match p.mode {
                Some(AccessMode::InOut) if !wr => Some("never stored to; declare it `in`".to_string()),
                _ => None,
            };
            BufferUsage {
                buffer: p.name.clone(),
                declared: p.mode,
                read: rd,
                written: wr,
                suggestion,
            }
        })
        .collect()
}

pub type ReadonlyReport = Vec<LeafReport<BufferUsage>>;

/// [`kernel_buffer_usage`] for every leaf of every graph.
pub fn readonly_analysis(doc: &IrDocument) -> ReadonlyReport {
    per_leaf(doc, kernel_buffer_usage)
}

/// Output positions of `k` that return memory obtained from `malloc`.
pub fn allocated_outputs(k: &KernelProgram) -> Vec<usize> {
    let k = flat(k);
    let r = &k.entry;
    let mut from_malloc: HashSet<String> = HashSet::new();
    loop {
        let before = from_malloc.len();
        walk_stmts(&r.body, &mut |s| {
            if let Stmt::Let { name, value, .. } | Stmt::Assign { name, value, .. } = s {
                match value {
                    Expr::Intrinsic(Intrinsic::Malloc { .. }) => {
                        from_malloc.insert(name.clone());
                    }
                    Expr::Var(v) if from_malloc.contains(v) => {
                        from_malloc.insert(name.clone());
                    }
                    _ => {}
                }
            }
        });
        if from_malloc.len() == before {
            break;
        }
    }
    let mut out = Vec::new();
    if let Some(Stmt::Return { values, .. }) = r.body.last() {
        for (i, v) in values.iter().enumerate() {
            let allocated = match v {
                Expr::Intrinsic(Intrinsic::Malloc { .. }) => true,
                Expr::Var(v) => from_malloc.contains(v),
                _ => false,
            };
            if allocated {
                out.push(i);
            }
        }
    }
    out
}

/// True if `id` is a leaf that allocates memory and hands it to another
/// node, through an edge or an output binding.
pub fn is_allocation_node(g: &DFGraph, id: NodeId) -> bool {
    let Some(k) = g.node(id).and_then(|n| n.kernel()) else {
        return false;
    };
    if !k.allocates() {
        return false;
    }
    allocated_outputs(k).into_iter().any(|port| {
        g.edges_from(id).any(|e| e.src_port == port)
            || g.bindings_of(id)
                .any(|b| b.direction == BindDirection::Output && b.child_port == port)
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NodeRef {
    pub graph: String,
    pub node: String,
}

pub fn allocation_node_detection(doc: &IrDocument) -> Vec<NodeRef> {
    let mut out = Vec::new();
    for g in doc.graphs() {
        for n in g.leaves() {
            if is_allocation_node(g, n.id) {
                out.push(NodeRef {
                    graph: g.name.clone(),
                    node: n.name.clone(),
                });
            }
        }
    }
    out
}

/// The three reports together, as printed by the command line tool.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub uniformity: UniformityReport,
    pub readonly: ReadonlyReport,
    pub allocation_nodes: Vec<NodeRef>,
}

pub fn analyze(doc: &IrDocument) -> AnalysisReport {
    AnalysisReport {
        uniformity: uniformity_analysis(doc),
        readonly: readonly_analysis(doc),
        allocation_nodes: allocation_node_detection(doc),
    }
}

/// Uniform buffers per leaf, as `graph -> node -> buffers`.
pub fn uniform_buffers(report: &UniformityReport) -> BTreeMap<(String, String), Vec<String>> {
    report
        .iter()
        .map(|l| {
            let names = l
                .buffers
                .iter()
                .filter(|b| b.class == Uniformity::Uniform)
                .map(|b| b.buffer.clone())
                .collect();
            ((l.graph.clone(), l.node.clone()), names)
        })
        .collect()
}
