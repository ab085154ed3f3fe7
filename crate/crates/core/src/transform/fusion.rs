use std::collections::HashSet;
use std::sync::Arc;

use serde::Serialize;

use super::{inline_aux, merge_alloc_compute, merge_dependent, merge_independent, Merged};
use crate::document::IrDocument;
use crate::graph::{DFGraph, NodeId, NodeKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeKind {
    Independent,
    Dependent,
    AllocCompute,
}

/// One merge performed by the fusion pass.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FusionStep {
    pub kind: MergeKind,
    pub first: String,
    pub second: String,
    pub result: String,
}

fn try_pair(g: &DFGraph, x: NodeId, y: NodeId) -> Option<(MergeKind, NodeId, NodeId, Merged)> {
    let (nx, ny) = (g.get(x), g.get(y));
    if nx.target != ny.target {
        return None;
    }
    match (nx.is_leaf(), ny.is_leaf()) {
        (true, true) => {
            if let Ok(m) = merge_dependent(g, x, y) {
                return Some((MergeKind::Dependent, x, y, m));
            }
            if let Ok(m) = merge_dependent(g, y, x) {
                return Some((MergeKind::Dependent, y, x, m));
            }
            merge_independent(g, x, y)
                .ok()
                .map(|m| (MergeKind::Independent, x, y, m))
        }
        (false, false) => merge_alloc_compute(g, x, y)
            .ok()
            .map(|m| (MergeKind::AllocCompute, x, y, m)),
        _ => None,
    }
}

fn step(g: &DFGraph) -> Option<(FusionStep, DFGraph)> {
    let parents: Vec<NodeId> = g.nodes().filter(|n| !n.is_leaf()).map(|n| n.id).collect();
    for p in parents {
        let mut cands: Vec<NodeId> = g.children(p).iter().copied().filter(|c| g.get(*c).fuse).collect();
        cands.sort();
        for (i, &x) in cands.iter().enumerate() {
            for &y in &cands[i + 1..] {
                if let Some((kind, first, second, m)) = try_pair(g, x, y) {
                    let record = FusionStep {
                        kind,
                        first: g.get(first).name.clone(),
                        second: g.get(second).name.clone(),
                        result: m.graph.get(m.node).name.clone(),
                    };
                    return Some((record, m.graph));
                }
            }
        }
    }
    None
}

/// Merges fuse-annotated sibling pairs with a common target until no pair
/// can be merged. Pairs are tried in node id order; for two leaves a
/// dependent merge is tried in both directions before an independent one.
/// Kernels of merged leaves are flattened afterwards.
pub fn fuse_graph(g: &DFGraph) -> (DFGraph, Vec<FusionStep>) {
    let mut cur = g.clone();
    let mut steps = Vec::new();
    while let Some((s, next)) = step(&cur) {
        steps.push(s);
        cur = next;
    }
    let fresh: Vec<NodeId> = cur.leaves().filter(|n| g.node(n.id).is_none()).map(|n| n.id).collect();
    for id in fresh {
        let node = cur.node_mut(id).unwrap();
        if let NodeKind::Leaf { kernel } = &mut node.kind {
            if !kernel.aux.is_empty() {
                if let Ok(flat) = inline_aux(kernel) {
                    *kernel = Arc::new(flat);
                }
            }
        }
    }
    (cur, steps)
}

/// Runs [`fuse_graph`] on every graph of the document. Kernels that only the
/// replaced leaves used are dropped and the fused kernels are registered.
pub fn fusion_pass(doc: &IrDocument) -> (IrDocument, Vec<FusionStep>) {
    let used = |d: &IrDocument| -> HashSet<String> {
        d.graphs()
            .iter()
            .flat_map(|g| g.leaves().map(|n| n.kernel().unwrap().name().to_string()))
            .collect()
    };
    let before = used(doc);
    let mut out = doc.clone();
    let mut steps = Vec::new();
    for g in doc.graphs() {
        let (mut fused, s) = fuse_graph(g);
        if s.is_empty() {
            continue;
        }
        out.sync_kernels(&mut fused);
        out.add_graph(fused);
        steps.extend(s);
    }
    if !steps.is_empty() {
        let after = used(&out);
        let dead: Vec<String> = before.difference(&after).cloned().collect();
        out.remove_kernels(&dead);
    }
    (out, steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_document;
    use crate::verify::{has_errors, verify_document};

    const SRC: &str = "
kernel dil(in a: buf<i32>, out b: buf<i32>) -> (buf<i32>) {
    let i = instance_id(x); b[i] = a[i] + 1; return (b);
}
kernel ero(in a: buf<i32>, out b: buf<i32>) -> (buf<i32>) {
    let i = instance_id(x); b[i] = a[i] - 1; return (b);
}
kernel lin(in d: buf<i32>, in e: buf<i32>, out o: buf<i32>) -> (buf<i32>) {
    let i = instance_id(x); o[i] = d[i] + e[i]; return (o);
}
graph G {
    internal R(in img: buf<i32>, out t1: buf<i32>, out t2: buf<i32>, out res: buf<i32>, n: i32) -> (buf<i32>) {
        leaf D = dil grid(n) FUSE_D;
        leaf E = ero grid(n) FUSE_E;
        leaf L = lin grid(n) FUSE_L;
        bind in img -> D.a; bind in t1 -> D.b;
        bind in img -> E.a; bind in t2 -> E.b;
        edge D.0 -> L.d one_to_one; edge E.0 -> L.e one_to_one;
        bind in res -> L.o; bind out L.0 -> 0;
    }
}";

    fn doc(d: bool, e: bool, l: bool) -> IrDocument {
        let f = |b: bool| if b { "fuse" } else { "" };
        let src = SRC
            .replace("FUSE_D", f(d))
            .replace("FUSE_E", f(e))
            .replace("FUSE_L", f(l));
        parse_document(&src).unwrap()
    }

    fn leaf_count(d: &IrDocument) -> usize {
        d.graphs()[0].leaves().count()
    }

    #[test]
    fn no_annotations_no_change() {
        let d = doc(false, false, false);
        let (out, steps) = fusion_pass(&d);
        assert!(steps.is_empty());
        assert_eq!(out, d);
    }

    #[test]
    fn two_independent_nodes() {
        let (out, steps) = fusion_pass(&doc(true, true, false));
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].kind, MergeKind::Independent);
        assert_eq!(leaf_count(&out), 2);
        assert!(!has_errors(&verify_document(&out)));
    }

    #[test]
    fn all_three_nodes() {
        let (out, steps) = fusion_pass(&doc(true, true, true));
        assert_eq!(steps.len(), 2);
        assert_eq!(steps[1].kind, MergeKind::Dependent);
        assert_eq!(leaf_count(&out), 1);
        let k = out.graphs()[0].leaves().next().unwrap().kernel().unwrap().clone();
        assert!(k.aux.is_empty());
        assert_eq!(out.kernels().len(), 1);
        assert!(!has_errors(&verify_document(&out)), "{:?}", verify_document(&out));
    }
}
