//! Hierarchical dataflow graphs.
//!
//! A graph is a tree of nodes rooted at an internal node. Each internal node
//! owns a child graph: its children plus the edges between them and the
//! bindings that connect its own ports to ports of its children. Leaf nodes
//! carry a kernel. Every node has a static grid of 1 to 3 dimensions whose
//! extents are constants or names of the enclosing node's scalar inputs.
//!
//! The builder methods check structural rules as nodes and edges are added.
//! The `*_unchecked` variants exist for front ends that must represent
//! malformed input faithfully so the verifier can report on it.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{AccessMode, KernelProgram, Stmt, ValueKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// One grid extent.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Extent {
    Const(u32),
    /// Value of a scalar input of the enclosing internal node.
    Param(String),
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extent::Const(c) => write!(f, "{c}"),
            Extent::Param(p) => f.write_str(p),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replication {
    /// Instance `i` of the source feeds instance `i` of the destination.
    OneToOne,
    /// Every destination instance sees the (single) value produced upstream.
    AllToAll,
}

impl Replication {
    pub fn keyword(self) -> &'static str {
        match self {
            Replication::OneToOne => "one_to_one",
            Replication::AllToAll => "all_to_all",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetHint {
    Cpu,
    Gpu,
    Vector,
}

impl TargetHint {
    pub fn keyword(self) -> &'static str {
        match self {
            TargetHint::Cpu => "cpu",
            TargetHint::Gpu => "gpu",
            TargetHint::Vector => "vector",
        }
    }

    pub fn from_keyword(s: &str) -> Option<TargetHint> {
        Some(match s {
            "cpu" => TargetHint::Cpu,
            "gpu" => TargetHint::Gpu,
            "vector" => TargetHint::Vector,
            _ => return None,
        })
    }
}

/// An input port. Output ports are identified by position only.
#[derive(Clone, Debug, PartialEq)]
pub struct Port {
    pub name: String,
    pub kind: ValueKind,
    /// Present iff `kind` is a buffer.
    pub mode: Option<AccessMode>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum NodeKind {
    Leaf {
        kernel: Arc<KernelProgram>,
    },
    Internal {
        children: Vec<NodeId>,
        /// Statements written directly in an internal node's body. Internal
        /// nodes may not compute, so any entry here is reported by the
        /// verifier.
        stray_code: Vec<Stmt>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DFNode {
    pub id: NodeId,
    pub name: String,
    pub parent: Option<NodeId>,
    pub kind: NodeKind,
    pub grid: Vec<Extent>,
    pub inputs: Vec<Port>,
    pub outputs: Vec<ValueKind>,
    pub target: Option<TargetHint>,
    /// Marked as a candidate for the fusion pass.
    pub fuse: bool,
}

impl DFNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }

    pub fn kernel(&self) -> Option<&Arc<KernelProgram>> {
        match &self.kind {
            NodeKind::Leaf { kernel } => Some(kernel),
            NodeKind::Internal { .. } => None,
        }
    }

    pub fn children(&self) -> &[NodeId] {
        match &self.kind {
            NodeKind::Internal { children, .. } => children,
            NodeKind::Leaf { .. } => &[],
        }
    }

    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.inputs.iter().position(|p| p.name == name)
    }

    /// Ports of a leaf are the parameters of its kernel.
    pub fn ports_of_kernel(kernel: &KernelProgram) -> (Vec<Port>, Vec<ValueKind>) {
        let inputs = kernel
            .params()
            .iter()
            .map(|p| Port {
                name: p.name.clone(),
                kind: p.kind,
                mode: p.mode,
            })
            .collect();
        (inputs, kernel.outputs().to_vec())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DFEdge {
    pub src: NodeId,
    pub src_port: usize,
    pub dst: NodeId,
    pub dst_port: usize,
    pub replication: Replication,
    pub streaming: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BindDirection {
    /// Parent input port to child input port.
    Input,
    /// Child output port to parent output port.
    Output,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Binding {
    pub direction: BindDirection,
    pub child: NodeId,
    pub parent_port: usize,
    pub child_port: usize,
    pub streaming: bool,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GraphError {
    #[error("no node {0}")]
    UnknownNode(NodeId),
    #[error("`{0}` is not an internal node")]
    NotInternal(String),
    #[error("`{0}` is the root node")]
    IsRoot(String),
    #[error("a node named `{0}` already exists")]
    DuplicateName(String),
    #[error("invalid grid on `{node}`: {reason}")]
    BadGrid { node: String, reason: String },
    #[error("`{src}` and `{dst}` are not in the same child graph")]
    NotSiblings { src: String, dst: String },
    #[error("`{node}` has no {side} port {port}")]
    PortOutOfRange {
        node: String,
        side: &'static str,
        port: usize,
    },
    #[error("port kinds differ: {src} vs {dst}")]
    KindMismatch { src: ValueKind, dst: ValueKind },
    #[error("one-to-one edge between incompatible grids: {0}")]
    GridMismatch(String),
}

/// How two sibling grids compare for one-to-one replication.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GridRelation {
    /// Provably the same shape.
    Equal,
    /// Provably different.
    Incompatible(String),
    /// Depends on run-time values.
    Unknown(String),
}

/// Compares two grids of sibling nodes. Parameter extents name inputs of the
/// common parent, so equal names denote equal values.
pub fn grid_relation(a: &[Extent], b: &[Extent]) -> GridRelation {
    if a.len() != b.len() {
        return GridRelation::Incompatible(format!("{} dimension(s) vs {} dimension(s)", a.len(), b.len()));
    }
    let mut unknown = None;
    for (d, (x, y)) in a.iter().zip(b).enumerate() {
        match (x, y) {
            _ if x == y => {}
            (Extent::Const(p), Extent::Const(q)) => {
                return GridRelation::Incompatible(format!("extent {p} vs {q} in dimension {d}"));
            }
            _ => unknown = Some(format!("extent {x} vs {y} in dimension {d} is only known at run time")),
        }
    }
    match unknown {
        Some(m) => GridRelation::Unknown(m),
        None => GridRelation::Equal,
    }
}

/// A named hierarchical dataflow graph.
#[derive(Clone, Debug, PartialEq)]
pub struct DFGraph {
    pub name: String,
    nodes: BTreeMap<NodeId, DFNode>,
    edges: Vec<DFEdge>,
    bindings: Vec<Binding>,
    root: NodeId,
    next_id: u32,
}

impl DFGraph {
    /// Creates a graph whose root is an internal node with grid `[1]`.
    pub fn new(
        name: impl Into<String>,
        root_name: impl Into<String>,
        inputs: Vec<Port>,
        outputs: Vec<ValueKind>,
    ) -> Self {
        Self::with_root_grid(name, root_name, inputs, outputs, vec![Extent::Const(1)])
    }

    /// Like [`DFGraph::new`] but with an arbitrary root grid, which the
    /// verifier rejects unless it is `[1]`.
    pub fn with_root_grid(
        name: impl Into<String>,
        root_name: impl Into<String>,
        inputs: Vec<Port>,
        outputs: Vec<ValueKind>,
        grid: Vec<Extent>,
    ) -> Self {
        let root = NodeId(0);
        let mut nodes = BTreeMap::new();
        nodes.insert(
            root,
            DFNode {
                id: root,
                name: root_name.into(),
                parent: None,
                kind: NodeKind::Internal {
                    children: Vec::new(),
                    stray_code: Vec::new(),
                },
                grid,
                inputs,
                outputs,
                target: None,
                fuse: false,
            },
        );
        DFGraph {
            name: name.into(),
            nodes,
            edges: Vec::new(),
            bindings: Vec::new(),
            root,
            next_id: 1,
        }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn root_node(&self) -> &DFNode {
        &self.nodes[&self.root]
    }

    pub fn node(&self, id: NodeId) -> Option<&DFNode> {
        self.nodes.get(&id)
    }

    /// The node with `id`; panics if it does not exist.
    pub fn get(&self, id: NodeId) -> &DFNode {
        self.nodes
            .get(&id)
            .unwrap_or_else(|| panic!("no node {id} in graph `{}`", self.name))
    }

    pub fn node_mut(&mut self, id: NodeId) -> Option<&mut DFNode> {
        self.nodes.get_mut(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DFNode> {
        self.nodes.values()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn find(&self, name: &str) -> Option<NodeId> {
        self.nodes.values().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn edges(&self) -> &[DFEdge] {
        &self.edges
    }

    pub fn bindings(&self) -> &[Binding] {
        &self.bindings
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        self.node(id).map_or(&[], |n| n.children())
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.node(id).and_then(|n| n.parent)
    }

    /// Edges whose endpoints are both children of `parent`.
    pub fn child_edges(&self, parent: NodeId) -> impl Iterator<Item = (usize, &DFEdge)> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| self.parent(e.src) == Some(parent) && self.parent(e.dst) == Some(parent))
    }

    /// Bindings of children of `parent` to `parent`'s ports.
    pub fn child_bindings(&self, parent: NodeId) -> impl Iterator<Item = &Binding> + '_ {
        self.bindings
            .iter()
            .filter(move |b| self.parent(b.child) == Some(parent))
    }

    pub fn edges_into(&self, id: NodeId) -> impl Iterator<Item = &DFEdge> + '_ {
        self.edges.iter().filter(move |e| e.dst == id)
    }

    pub fn edges_from(&self, id: NodeId) -> impl Iterator<Item = &DFEdge> + '_ {
        self.edges.iter().filter(move |e| e.src == id)
    }

    pub fn bindings_of(&self, child: NodeId) -> impl Iterator<Item = &Binding> + '_ {
        self.bindings.iter().filter(move |b| b.child == child)
    }

    /// Every node below `id`, depth first, parents before children.
    pub fn descendants(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack: Vec<NodeId> = self.children(id).iter().rev().copied().collect();
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.children(n).iter().rev());
        }
        out
    }

    /// Number of internal ancestors between `id` and the root, inclusive of
    /// the root (the root has depth 0).
    pub fn depth(&self, id: NodeId) -> usize {
        let mut d = 0;
        let mut cur = self.parent(id);
        while let Some(p) = cur {
            d += 1;
            cur = self.parent(p);
        }
        d
    }

    fn fresh_id(&mut self) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        id
    }

    fn internal_parent(&self, parent: NodeId) -> Result<&DFNode, GraphError> {
        let p = self.node(parent).ok_or(GraphError::UnknownNode(parent))?;
        if p.is_leaf() {
            return Err(GraphError::NotInternal(p.name.clone()));
        }
        Ok(p)
    }

    fn check_new_node(&self, parent: NodeId, name: &str, grid: &[Extent]) -> Result<(), GraphError> {
        let p = self.internal_parent(parent)?;
        if self.find(name).is_some() {
            return Err(GraphError::DuplicateName(name.to_string()));
        }
        let bad = |reason: String| GraphError::BadGrid {
            node: name.to_string(),
            reason,
        };
        if grid.is_empty() || grid.len() > 3 {
            return Err(bad(format!("{} dimensions", grid.len())));
        }
        for e in grid {
            match e {
                Extent::Const(0) => return Err(bad("zero extent".into())),
                Extent::Const(_) => {}
                Extent::Param(name) => match p.inputs.iter().find(|port| &port.name == name) {
                    Some(port) if port.kind.is_int_scalar() => {}
                    Some(_) => return Err(bad(format!("`{name}` is not an integer scalar input of `{}`", p.name))),
                    None => return Err(bad(format!("`{}` has no input `{name}`", p.name))),
                },
            }
        }
        Ok(())
    }

    /// Adds a leaf whose ports are the kernel's parameters and outputs.
    pub fn add_leaf(
        &mut self,
        parent: NodeId,
        name: impl Into<String>,
        kernel: Arc<KernelProgram>,
        grid: Vec<Extent>,
    ) -> Result<NodeId, GraphError> {
        let name = name.into();
        self.check_new_node(parent, &name, &grid)?;
        let (inputs, outputs) = DFNode::ports_of_kernel(&kernel);
        Ok(self.insert_unchecked(parent, name, NodeKind::Leaf { kernel }, grid, inputs, outputs))
    }

    pub fn add_internal(
        &mut self,
        parent: NodeId,
        name: impl Into<String>,
        inputs: Vec<Port>,
        outputs: Vec<ValueKind>,
        grid: Vec<Extent>,
    ) -> Result<NodeId, GraphError> {
        let name = name.into();
        self.check_new_node(parent, &name, &grid)?;
        let kind = NodeKind::Internal {
            children: Vec::new(),
            stray_code: Vec::new(),
        };
        Ok(self.insert_unchecked(parent, name, kind, grid, inputs, outputs))
    }

    /// Inserts a node without any checks beyond the parent existing.
    pub fn insert_unchecked(
        &mut self,
        parent: NodeId,
        name: String,
        kind: NodeKind,
        grid: Vec<Extent>,
        inputs: Vec<Port>,
        outputs: Vec<ValueKind>,
    ) -> NodeId {
        let id = self.fresh_id();
        self.nodes.insert(
            id,
            DFNode {
                id,
                name,
                parent: Some(parent),
                kind,
                grid,
                inputs,
                outputs,
                target: None,
                fuse: false,
            },
        );
        if let Some(NodeKind::Internal { children, .. }) = self.nodes.get_mut(&parent).map(|p| &mut p.kind) {
            children.push(id);
        }
        id
    }

    /// Adds an edge between two children of the same internal node.
    pub fn add_edge(
        &mut self,
        src: NodeId,
        src_port: usize,
        dst: NodeId,
        dst_port: usize,
        replication: Replication,
        streaming: bool,
    ) -> Result<usize, GraphError> {
        let s = self.node(src).ok_or(GraphError::UnknownNode(src))?;
        let d = self.node(dst).ok_or(GraphError::UnknownNode(dst))?;
        if s.parent.is_none() || s.parent != d.parent {
            return Err(GraphError::NotSiblings {
                src: s.name.clone(),
                dst: d.name.clone(),
            });
        }
        let sk = *s.outputs.get(src_port).ok_or_else(|| GraphError::PortOutOfRange {
            node: s.name.clone(),
            side: "output",
            port: src_port,
        })?;
        let dk = d
            .inputs
            .get(dst_port)
            .ok_or_else(|| GraphError::PortOutOfRange {
                node: d.name.clone(),
                side: "input",
                port: dst_port,
            })?
            .kind;
        if sk != dk {
            return Err(GraphError::KindMismatch { src: sk, dst: dk });
        }
        if replication == Replication::OneToOne {
            if let GridRelation::Incompatible(m) = grid_relation(&s.grid, &d.grid) {
                return Err(GraphError::GridMismatch(m));
            }
        }
        Ok(self.add_edge_unchecked(DFEdge {
            src,
            src_port,
            dst,
            dst_port,
            replication,
            streaming,
        }))
    }

    pub fn add_edge_unchecked(&mut self, edge: DFEdge) -> usize {
        self.edges.push(edge);
        self.edges.len() - 1
    }

    /// Routes input `parent_port` of `child`'s parent to input `child_port`.
    pub fn bind_input(
        &mut self,
        child: NodeId,
        parent_port: usize,
        child_port: usize,
        streaming: bool,
    ) -> Result<(), GraphError> {
        self.check_binding(child, BindDirection::Input, parent_port, child_port)?;
        self.add_binding_unchecked(Binding {
            direction: BindDirection::Input,
            child,
            parent_port,
            child_port,
            streaming,
        });
        Ok(())
    }

    /// Routes output `child_port` of `child` to output `parent_port` of its
    /// parent.
    pub fn bind_output(
        &mut self,
        child: NodeId,
        child_port: usize,
        parent_port: usize,
        streaming: bool,
    ) -> Result<(), GraphError> {
        self.check_binding(child, BindDirection::Output, parent_port, child_port)?;
        self.add_binding_unchecked(Binding {
            direction: BindDirection::Output,
            child,
            parent_port,
            child_port,
            streaming,
        });
        Ok(())
    }

    fn check_binding(
        &self,
        child: NodeId,
        direction: BindDirection,
        parent_port: usize,
        child_port: usize,
    ) -> Result<(), GraphError> {
        let c = self.node(child).ok_or(GraphError::UnknownNode(child))?;
        let p = self.get(c.parent.ok_or_else(|| GraphError::IsRoot(c.name.clone()))?);
        let range = |node: &DFNode, side, port| GraphError::PortOutOfRange {
            node: node.name.clone(),
            side,
            port,
        };
        let (pk, ck) = match direction {
            BindDirection::Input => (
                p.inputs
                    .get(parent_port)
                    .ok_or_else(|| range(p, "input", parent_port))?
                    .kind,
                c.inputs
                    .get(child_port)
                    .ok_or_else(|| range(c, "input", child_port))?
                    .kind,
            ),
            BindDirection::Output => (
                *p.outputs
                    .get(parent_port)
                    .ok_or_else(|| range(p, "output", parent_port))?,
                *c.outputs
                    .get(child_port)
                    .ok_or_else(|| range(c, "output", child_port))?,
            ),
        };
        if pk != ck {
            return Err(GraphError::KindMismatch { src: pk, dst: ck });
        }
        Ok(())
    }

    pub fn add_binding_unchecked(&mut self, binding: Binding) {
        self.bindings.push(binding);
    }

    pub fn set_target(&mut self, id: NodeId, target: Option<TargetHint>) -> Result<(), GraphError> {
        self.node_mut(id).ok_or(GraphError::UnknownNode(id))?.target = target;
        Ok(())
    }

    pub fn set_fuse(&mut self, id: NodeId, fuse: bool) -> Result<(), GraphError> {
        self.node_mut(id).ok_or(GraphError::UnknownNode(id))?.fuse = fuse;
        Ok(())
    }

    /// Removes a node with its whole subtree and every edge and binding that
    /// touches any of them.
    pub fn remove_subtree(&mut self, id: NodeId) -> Result<(), GraphError> {
        let node = self.node(id).ok_or(GraphError::UnknownNode(id))?;
        let parent = node.parent.ok_or_else(|| GraphError::IsRoot(node.name.clone()))?;
        let mut gone: HashSet<NodeId> = self.descendants(id).into_iter().collect();
        gone.insert(id);
        self.edges.retain(|e| !gone.contains(&e.src) && !gone.contains(&e.dst));
        self.bindings.retain(|b| !gone.contains(&b.child));
        for n in &gone {
            self.nodes.remove(n);
        }
        if let Some(NodeKind::Internal { children, .. }) = self.nodes.get_mut(&parent).map(|p| &mut p.kind) {
            children.retain(|c| *c != id);
        }
        Ok(())
    }

    /// Moves `id` (with its subtree) under `new_parent`. Edges and bindings
    /// are left alone; the caller rewires them.
    pub fn reparent(&mut self, id: NodeId, new_parent: NodeId) -> Result<(), GraphError> {
        self.internal_parent(new_parent)?;
        let old = self
            .node(id)
            .ok_or(GraphError::UnknownNode(id))?
            .parent
            .ok_or_else(|| GraphError::IsRoot(self.get(id).name.clone()))?;
        if let NodeKind::Internal { children, .. } = &mut self.nodes.get_mut(&old).unwrap().kind {
            children.retain(|c| *c != id);
        }
        if let NodeKind::Internal { children, .. } = &mut self.nodes.get_mut(&new_parent).unwrap().kind {
            children.push(id);
        }
        self.nodes.get_mut(&id).unwrap().parent = Some(new_parent);
        Ok(())
    }

    pub fn edges_mut(&mut self) -> &mut Vec<DFEdge> {
        &mut self.edges
    }

    pub fn bindings_mut(&mut self) -> &mut Vec<Binding> {
        &mut self.bindings
    }

    /// True if a chain of edges leads from `from` to `to`.
    pub fn has_path(&self, from: NodeId, to: NodeId) -> bool {
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([from]);
        while let Some(n) = queue.pop_front() {
            for e in self.edges_from(n) {
                if e.dst == to {
                    return true;
                }
                if seen.insert(e.dst) {
                    queue.push_back(e.dst);
                }
            }
        }
        false
    }

    /// True if a path from `from` to `to` exists that does not consist of a
    /// single direct edge.
    pub fn has_indirect_path(&self, from: NodeId, to: NodeId) -> bool {
        let mut seen = HashSet::new();
        let mut queue: VecDeque<NodeId> = self.edges_from(from).map(|e| e.dst).filter(|d| *d != to).collect();
        while let Some(n) = queue.pop_front() {
            if n == to {
                return true;
            }
            if seen.insert(n) {
                queue.extend(self.edges_from(n).map(|e| e.dst));
            }
        }
        false
    }

    /// Children of `parent` in an order compatible with the edges among
    /// them, ties broken by child order. Returns the nodes left over on a
    /// cycle as the error.
    pub fn topo_order(&self, parent: NodeId) -> Result<Vec<NodeId>, Vec<NodeId>> {
        let children = self.children(parent);
        let mut indeg: BTreeMap<NodeId, usize> = children.iter().map(|c| (*c, 0)).collect();
        let pos: BTreeMap<NodeId, usize> = children.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        for (_, e) in self.child_edges(parent) {
            *indeg.get_mut(&e.dst).unwrap() += 1;
        }
        let mut ready: BTreeSet<(usize, NodeId)> = indeg
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(n, _)| (pos[n], *n))
            .collect();
        let mut out = Vec::with_capacity(children.len());
        while let Some(first) = ready.pop_first() {
            let n = first.1;
            out.push(n);
            for (_, e) in self.child_edges(parent).filter(|(_, e)| e.src == n) {
                let d = indeg.get_mut(&e.dst).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.insert((pos[&e.dst], e.dst));
                }
            }
        }
        if out.len() == children.len() {
            Ok(out)
        } else {
            Err(children.iter().filter(|c| !out.contains(c)).copied().collect())
        }
    }

    /// A node name not yet used in this graph, derived from `base`.
    pub fn unique_name(&self, base: &str) -> String {
        if self.find(base).is_none() {
            return base.to_string();
        }
        (2..)
            .map(|k| format!("{base}_{k}"))
            .find(|n| self.find(n).is_none())
            .unwrap()
    }

    /// Leaves in the whole graph, in id order.
    pub fn leaves(&self) -> impl Iterator<Item = &DFNode> {
        self.nodes.values().filter(|n| n.is_leaf())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{Param, Routine, ScalarType};

    fn ident_kernel(name: &str) -> Arc<KernelProgram> {
        Arc::new(KernelProgram::new(Routine {
            name: name.into(),
            params: vec![Param::scalar("x", ScalarType::I32)],
            outputs: vec![ValueKind::Scalar(ScalarType::I32)],
            body: vec![Stmt::Return {
                values: vec![crate::kernel::Expr::var("x")],
                span: Default::default(),
            }],
        }))
    }

    fn root_graph() -> DFGraph {
        let i32k = ValueKind::Scalar(ScalarType::I32);
        DFGraph::new(
            "G",
            "Root",
            vec![
                Port {
                    name: "x".into(),
                    kind: i32k,
                    mode: None,
                },
                Port {
                    name: "n".into(),
                    kind: i32k,
                    mode: None,
                },
            ],
            vec![i32k],
        )
    }

    #[test]
    fn cross_level_edge_is_rejected() {
        let mut g = root_graph();
        let k = ident_kernel("id");
        let a = g.add_leaf(g.root(), "A", k.clone(), vec![Extent::Const(1)]).unwrap();
        let inner = g
            .add_internal(g.root(), "I", vec![], vec![], vec![Extent::Const(1)])
            .unwrap();
        let b = g.add_leaf(inner, "B", k, vec![Extent::Const(1)]).unwrap();
        assert!(matches!(
            g.add_edge(a, 0, b, 0, Replication::AllToAll, false),
            Err(GraphError::NotSiblings { .. })
        ));
    }

    #[test]
    fn one_to_one_needs_matching_grids() {
        let mut g = root_graph();
        let k = ident_kernel("id");
        let a = g.add_leaf(g.root(), "A", k.clone(), vec![Extent::Const(4)]).unwrap();
        let b = g.add_leaf(g.root(), "B", k.clone(), vec![Extent::Const(8)]).unwrap();
        let c = g.add_leaf(g.root(), "C", k, vec![Extent::Param("n".into())]).unwrap();
        assert!(matches!(
            g.add_edge(a, 0, b, 0, Replication::OneToOne, false),
            Err(GraphError::GridMismatch(_))
        ));
        assert!(g.add_edge(a, 0, b, 0, Replication::AllToAll, false).is_ok());
        assert!(g.add_edge(a, 0, c, 0, Replication::OneToOne, false).is_ok());
    }

    #[test]
    fn grid_params_must_name_parent_inputs() {
        let mut g = root_graph();
        let err = g
            .add_leaf(g.root(), "A", ident_kernel("id"), vec![Extent::Param("w".into())])
            .unwrap_err();
        assert!(matches!(err, GraphError::BadGrid { .. }));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut g = root_graph();
        g.add_leaf(g.root(), "A", ident_kernel("id"), vec![Extent::Const(1)])
            .unwrap();
        assert_eq!(
            g.add_leaf(g.root(), "A", ident_kernel("id"), vec![Extent::Const(1)]),
            Err(GraphError::DuplicateName("A".into()))
        );
    }

    #[test]
    fn topo_order_and_paths() {
        let mut g = root_graph();
        let k = ident_kernel("id");
        let a = g.add_leaf(g.root(), "A", k.clone(), vec![Extent::Const(1)]).unwrap();
        let b = g.add_leaf(g.root(), "B", k.clone(), vec![Extent::Const(1)]).unwrap();
        let c = g.add_leaf(g.root(), "C", k, vec![Extent::Const(1)]).unwrap();
        g.add_edge(c, 0, b, 0, Replication::AllToAll, false).unwrap();
        g.add_edge(b, 0, a, 0, Replication::AllToAll, false).unwrap();
        assert_eq!(g.topo_order(g.root()), Ok(vec![c, b, a]));
        assert!(g.has_path(c, a));
        assert!(!g.has_path(a, c));
        assert!(g.has_indirect_path(c, a));
        assert!(!g.has_indirect_path(c, b));
        g.add_edge(a, 0, c, 0, Replication::AllToAll, false).unwrap();
        assert!(g.topo_order(g.root()).is_err());
    }

    #[test]
    fn remove_subtree_drops_edges() {
        let mut g = root_graph();
        let k = ident_kernel("id");
        let a = g.add_leaf(g.root(), "A", k.clone(), vec![Extent::Const(1)]).unwrap();
        let b = g.add_leaf(g.root(), "B", k, vec![Extent::Const(1)]).unwrap();
        g.add_edge(a, 0, b, 0, Replication::AllToAll, false).unwrap();
        g.bind_input(a, 0, 0, false).unwrap();
        g.remove_subtree(a).unwrap();
        assert!(g.edges().is_empty());
        assert!(g.bindings().is_empty());
        assert_eq!(g.children(g.root()), &[b]);
    }
}
