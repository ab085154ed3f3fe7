use std::collections::HashMap;
use std::sync::Arc;

use super::inline::rename_calls;
use super::TransformError;
use crate::analysis::is_allocation_node;
use crate::graph::{
    grid_relation, BindDirection, DFGraph, DFNode, Extent, GridRelation, NodeId, NodeKind, Port, Replication,
};
use crate::kernel::{Expr, KernelProgram, Param, Routine, Stmt};

/// Result of a successful merge: the rewritten graph and the new node.
#[derive(Clone, Debug)]
pub struct Merged {
    pub graph: DFGraph,
    pub node: NodeId,
}

fn leaf(g: &DFGraph, id: NodeId) -> Result<(&DFNode, &Arc<KernelProgram>), TransformError> {
    let n = g.node(id).ok_or(TransformError::UnknownNode(id))?;
    match n.kernel() {
        Some(k) => Ok((n, k)),
        None => Err(TransformError::NotLeaf(n.name.clone())),
    }
}

/// Checks what independent and dependent merges have in common.
fn common_checks(g: &DFGraph, a: &DFNode, b: &DFNode) -> Result<(), TransformError> {
    if a.id == b.id {
        return Err(TransformError::SameNode(a.name.clone()));
    }
    if a.parent.is_none() || a.parent != b.parent {
        return Err(TransformError::NotSiblings(a.name.clone(), b.name.clone()));
    }
    if a.target != b.target {
        return Err(TransformError::TargetMismatch(a.name.clone(), b.name.clone()));
    }
    match grid_relation(&a.grid, &b.grid) {
        GridRelation::Equal => {}
        GridRelation::Incompatible(m) | GridRelation::Unknown(m) => {
            return Err(TransformError::GridMismatch {
                a: a.name.clone(),
                b: b.name.clone(),
                detail: m,
            })
        }
    }
    let _ = g;
    Ok(())
}

/// Merges two sibling leaves that have no path between them into one leaf
/// whose kernel runs both bodies in sequence.
pub fn merge_independent(g: &DFGraph, n1: NodeId, n2: NodeId) -> Result<Merged, TransformError> {
    let (a, ka) = leaf(g, n1)?;
    let (b, kb) = leaf(g, n2)?;
    common_checks(g, a, b)?;
    if g.has_path(n1, n2) {
        return Err(TransformError::PathBetween(a.name.clone(), b.name.clone()));
    }
    if g.has_path(n2, n1) {
        return Err(TransformError::PathBetween(b.name.clone(), a.name.clone()));
    }
    let plan = FusionPlan {
        wired: HashMap::new(),
        kept_first_outputs: (0..a.outputs.len()).collect(),
        barrier: false,
    };
    Ok(splice(g, a, ka, b, kb, plan))
}

/// Merges a producer `n1` into its consumer `n2`. Every edge between them
/// must go from `n1` to `n2` and be one-to-one, and no other path may lead
/// from `n1` to `n2`. The consumer's inputs fed by `n1` become direct uses
/// of the producer's results; a barrier between the two bodies keeps all
/// producer instances ahead of all consumer instances.
pub fn merge_dependent(g: &DFGraph, n1: NodeId, n2: NodeId) -> Result<Merged, TransformError> {
    let (a, ka) = leaf(g, n1)?;
    let (b, kb) = leaf(g, n2)?;
    common_checks(g, a, b)?;
    if g.edges_from(n2).any(|e| e.dst == n1) {
        return Err(TransformError::ReverseEdge(b.name.clone(), a.name.clone()));
    }
    let direct: Vec<_> = g.edges_from(n1).filter(|e| e.dst == n2).collect();
    if direct.is_empty() {
        return Err(TransformError::NoDependence(a.name.clone(), b.name.clone()));
    }
    if direct
        .iter()
        .any(|e| e.replication != Replication::OneToOne || e.streaming)
    {
        return Err(TransformError::NotOneToOne(a.name.clone(), b.name.clone()));
    }
    if g.has_indirect_path(n1, n2) {
        return Err(TransformError::PathBetween(a.name.clone(), b.name.clone()));
    }
    let wired: HashMap<usize, usize> = direct.iter().map(|e| (e.dst_port, e.src_port)).collect();
    let consumed_elsewhere = |port: usize| {
        g.edges_from(n1).any(|e| e.src_port == port && e.dst != n2)
            || g.bindings_of(n1)
                .any(|bd| bd.direction == BindDirection::Output && bd.child_port == port)
    };
    let plan = FusionPlan {
        wired,
        kept_first_outputs: (0..a.outputs.len()).filter(|p| consumed_elsewhere(*p)).collect(),
        barrier: true,
    };
    Ok(splice(g, a, ka, b, kb, plan))
}

struct FusionPlan {
    /// Input port of the second node -> output port of the first feeding it.
    wired: HashMap<usize, usize>,
    /// Outputs of the first node that remain outputs of the merged node.
    kept_first_outputs: Vec<usize>,
    barrier: bool,
}

fn prefixed_routine(r: &Routine, name: &str, prefix: &str, aux_names: &[String]) -> Routine {
    let mut r = r.clone();
    r.name = name.to_string();
    rename_calls(&mut r.body, &|c| {
        aux_names.iter().any(|a| a == c).then(|| format!("{prefix}__{c}"))
    });
    r
}

/// The kernel of a merged node: the original entries become auxiliary
/// routines named after their nodes and the new entry calls them in order.
fn fused_kernel(
    name: &str,
    a: &DFNode,
    ka: &KernelProgram,
    b: &DFNode,
    kb: &KernelProgram,
    plan: &FusionPlan,
) -> KernelProgram {
    let mut aux = Vec::new();
    for (node, k) in [(a, ka), (b, kb)] {
        let names: Vec<String> = k.aux.iter().map(|r| r.name.clone()).collect();
        aux.push(prefixed_routine(&k.entry, &node.name, &node.name, &names));
        for r in &k.aux {
            aux.push(prefixed_routine(
                r,
                &format!("{}__{}", node.name, r.name),
                &node.name,
                &names,
            ));
        }
    }

    let param = |node: &DFNode, p: &Param| Param {
        name: format!("{}__{}", node.name, p.name),
        ..p.clone()
    };
    let result = |node: &DFNode, i: usize| format!("{}__{i}", node.name);

    let mut params: Vec<Param> = ka.params().iter().map(|p| param(a, p)).collect();
    params.extend(
        kb.params()
            .iter()
            .enumerate()
            .filter(|(i, _)| !plan.wired.contains_key(i))
            .map(|(_, p)| param(b, p)),
    );

    let call = |node: &DFNode, k: &KernelProgram, args: Vec<Expr>| Stmt::Call {
        dests: (0..k.outputs().len()).map(|i| result(node, i)).collect(),
        routine: node.name.clone(),
        args,
        span: Default::default(),
    };
    let mut body = vec![call(
        a,
        ka,
        ka.params().iter().map(|p| Expr::var(param(a, p).name)).collect(),
    )];
    if plan.barrier {
        body.push(Stmt::Barrier {
            span: Default::default(),
        });
    }
    let b_args = kb
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| match plan.wired.get(&i) {
            Some(src) => Expr::var(result(a, *src)),
            None => Expr::var(param(b, p).name),
        })
        .collect();
    body.push(call(b, kb, b_args));

    let mut outputs = Vec::new();
    let mut values = Vec::new();
    for &i in &plan.kept_first_outputs {
        outputs.push(ka.outputs()[i]);
        values.push(Expr::var(result(a, i)));
    }
    for (i, k) in kb.outputs().iter().enumerate() {
        outputs.push(*k);
        values.push(Expr::var(result(b, i)));
    }
    if !values.is_empty() {
        body.push(Stmt::Return {
            values,
            span: Default::default(),
        });
    }
    KernelProgram {
        entry: Routine {
            name: name.to_string(),
            params,
            outputs,
            body,
        },
        aux,
    }
}

/// Replaces leaves `a` and `b` with one leaf running the fused kernel and
/// rewires all of their connections.
fn splice(g: &DFGraph, a: &DFNode, ka: &KernelProgram, b: &DFNode, kb: &KernelProgram, plan: FusionPlan) -> Merged {
    let name = g.unique_name(&format!("{}_{}", a.name, b.name));
    let kernel = fused_kernel(&name, a, ka, b, kb, &plan);
    let (inputs, outputs) = DFNode::ports_of_kernel(&kernel);
    let parent = a.parent.unwrap();

    let mut in_map: HashMap<(NodeId, usize), usize> = HashMap::new();
    for i in 0..a.inputs.len() {
        in_map.insert((a.id, i), i);
    }
    let mut next = a.inputs.len();
    for i in 0..b.inputs.len() {
        if !plan.wired.contains_key(&i) {
            in_map.insert((b.id, i), next);
            next += 1;
        }
    }
    let mut out_map: HashMap<(NodeId, usize), usize> = HashMap::new();
    for (pos, &i) in plan.kept_first_outputs.iter().enumerate() {
        out_map.insert((a.id, i), pos);
    }
    for j in 0..b.outputs.len() {
        out_map.insert((b.id, j), plan.kept_first_outputs.len() + j);
    }

    let mut ng = g.clone();
    let id = ng.insert_unchecked(
        parent,
        name,
        NodeKind::Leaf {
            kernel: Arc::new(kernel),
        },
        a.grid.clone(),
        inputs,
        outputs,
    );
    {
        let n = ng.node_mut(id).unwrap();
        n.target = a.target;
        n.fuse = a.fuse && b.fuse;
    }
    let pair = [a.id, b.id];
    let mut edges = Vec::new();
    for e in ng.edges() {
        let mut e = e.clone();
        if pair.contains(&e.src) && pair.contains(&e.dst) {
            continue;
        }
        if pair.contains(&e.src) {
            e.src_port = out_map[&(e.src, e.src_port)];
            e.src = id;
        }
        if pair.contains(&e.dst) {
            e.dst_port = in_map[&(e.dst, e.dst_port)];
            e.dst = id;
        }
        edges.push(e);
    }
    *ng.edges_mut() = edges;
    for bd in ng.bindings_mut() {
        if pair.contains(&bd.child) {
            bd.child_port = match bd.direction {
                BindDirection::Input => in_map[&(bd.child, bd.child_port)],
                BindDirection::Output => out_map[&(bd.child, bd.child_port)],
            };
            bd.child = id;
        }
    }
    let position = g.children(parent).iter().position(|c| *c == a.id).unwrap();
    ng.remove_subtree(a.id).unwrap();
    ng.remove_subtree(b.id).unwrap();
    move_child(&mut ng, parent, id, position);
    Merged { graph: ng, node: id }
}

fn move_child(g: &mut DFGraph, parent: NodeId, child: NodeId, position: usize) {
    if let Some(NodeKind::Internal { children, .. }) = g.node_mut(parent).map(|p| &mut p.kind) {
        children.retain(|c| *c != child);
        children.insert(position.min(children.len()), child);
    }
}

/// Splits the children of an allocation/compute pair into the allocation
/// leaf and the other leaf.
fn alloc_compute_children(g: &DFGraph, n: &DFNode) -> Result<(NodeId, NodeId), TransformError> {
    let not_pair = || TransformError::NotAllocCompute(n.name.clone());
    let NodeKind::Internal { children, .. } = &n.kind else {
        return Err(not_pair());
    };
    if children.len() != 2 || !children.iter().all(|c| g.get(*c).is_leaf()) {
        return Err(not_pair());
    }
    let allocs: Vec<_> = children
        .iter()
        .filter(|c| is_allocation_node(g, **c))
        .copied()
        .collect();
    match allocs.as_slice() {
        [alloc] => {
            let compute = *children.iter().find(|c| *c != alloc).unwrap();
            Ok((*alloc, compute))
        }
        _ => Err(not_pair()),
    }
}

/// Where the value on an input port comes from.
#[derive(PartialEq)]
enum Feed {
    Parent(usize),
    Edge(NodeId, usize),
}

fn feed(g: &DFGraph, n: NodeId, port: usize) -> Option<Feed> {
    if let Some(b) = g
        .bindings_of(n)
        .find(|b| b.direction == BindDirection::Input && b.child_port == port)
    {
        return Some(Feed::Parent(b.parent_port));
    }
    g.edges_into(n)
        .find(|e| e.dst_port == port)
        .map(|e| Feed::Edge(e.src, e.src_port))
}

/// Merges two sibling internal nodes that each hold exactly one allocation
/// leaf and one compute leaf. The result is one internal node whose
/// allocation leaf returns the buffers of both originals and whose compute
/// leaf runs both computations. The two nodes must not be connected at all.
/// Inputs of the second node fed from the same place as an input of the
/// first are shared.
pub fn merge_alloc_compute(g: &DFGraph, n1: NodeId, n2: NodeId) -> Result<Merged, TransformError> {
    let a = g.node(n1).ok_or(TransformError::UnknownNode(n1))?;
    let b = g.node(n2).ok_or(TransformError::UnknownNode(n2))?;
    common_checks(g, a, b)?;
    let (alloc_a, comp_a) = alloc_compute_children(g, a)?;
    let (alloc_b, comp_b) = alloc_compute_children(g, b)?;
    if g.has_path(n1, n2) || g.has_path(n2, n1) {
        return Err(TransformError::Connected(a.name.clone(), b.name.clone()));
    }
    let parent = a.parent.unwrap();

    let rename_port = |node: &DFNode, p: &Port| Port {
        name: format!("{}__{}", node.name, p.name),
        ..p.clone()
    };
    let mut inputs: Vec<Port> = a.inputs.iter().map(|p| rename_port(a, p)).collect();
    // input of b -> (input of the merged node, shared with a)
    let mut b_in = Vec::with_capacity(b.inputs.len());
    for (i, p) in b.inputs.iter().enumerate() {
        let f = feed(g, n2, i);
        let shared = f.as_ref().and_then(|f| {
            (0..a.inputs.len()).find(|&j| {
                a.inputs[j].kind == p.kind && a.inputs[j].mode == p.mode && feed(g, n1, j).as_ref() == Some(f)
            })
        });
        match shared {
            Some(j) => b_in.push((j, true)),
            None => {
                b_in.push((inputs.len(), false));
                inputs.push(rename_port(b, p));
            }
        }
    }
    let outputs = [a.outputs.clone(), b.outputs.clone()].concat();
    let map_in = |n: NodeId, port: usize| if n == n1 { port } else { b_in[port].0 };
    let out_off = |n: NodeId| if n == n1 { 0 } else { a.outputs.len() };

    let mut ng = g.clone();
    let name = ng.unique_name(&format!("{}_{}", a.name, b.name));
    let kind = NodeKind::Internal {
        children: Vec::new(),
        stray_code: Vec::new(),
    };
    let id = ng.insert_unchecked(parent, name, kind, a.grid.clone(), inputs.clone(), outputs);
    {
        let n = ng.node_mut(id).unwrap();
        n.target = a.target;
        n.fuse = a.fuse && b.fuse;
    }
    let pair = [n1, n2];
    ng.edges_mut().retain(|e| !(e.dst == n2 && b_in[e.dst_port].1));
    for e in ng.edges_mut() {
        if pair.contains(&e.src) {
            e.src_port += out_off(e.src);
            e.src = id;
        }
        if pair.contains(&e.dst) {
            e.dst_port = map_in(e.dst, e.dst_port);
            e.dst = id;
        }
    }
    let children: Vec<NodeId> = [alloc_a, comp_a, alloc_b, comp_b].into();
    ng.bindings_mut()
        .retain(|bd| !(bd.child == n2 && bd.direction == BindDirection::Input && b_in[bd.child_port].1));
    for bd in ng.bindings_mut() {
        if pair.contains(&bd.child) {
            match bd.direction {
                BindDirection::Input => bd.child_port = map_in(bd.child, bd.child_port),
                BindDirection::Output => bd.child_port += out_off(bd.child),
            }
            bd.child = id;
        } else if children.contains(&bd.child) {
            let owner = g.parent(bd.child).unwrap();
            match bd.direction {
                BindDirection::Input => bd.parent_port = map_in(owner, bd.parent_port),
                BindDirection::Output => bd.parent_port += out_off(owner),
            }
        }
    }
    for &c in &children {
        let owner = g.get(g.parent(c).unwrap());
        let node = ng.node_mut(c).unwrap();
        for e in &mut node.grid {
            if let Extent::Param(p) = e {
                let i = owner.input_index(p).unwrap();
                *p = inputs[map_in(owner.id, i)].name.clone();
            }
        }
        ng.reparent(c, id).unwrap();
    }
    let position = g.children(parent).iter().position(|c| *c == n1).unwrap();
    ng.remove_subtree(n1).unwrap();
    ng.remove_subtree(n2).unwrap();
    move_child(&mut ng, parent, id, position);

    let m = merge_independent(&ng, alloc_a, alloc_b)?;
    let m = merge_independent(&m.graph, comp_a, comp_b)?;
    Ok(Merged {
        graph: m.graph,
        node: id,
    })
}
