use std::fmt::Write;

use crate::graph::{DFGraph, NodeId, NodeKind};

/// Renders `g` in Graphviz DOT. Internal nodes become clusters, leaves
/// become boxes, and each edge is labeled with its replication; streaming
/// edges are dashed.
pub fn to_dot(g: &DFGraph) -> String {
    let mut out = String::new();
    writeln!(out, "digraph {} {{", quote(&g.name)).unwrap();
    out.push_str("    compound=true;\n");
    write_node(&mut out, g, g.root(), 1);
    for e in g.edges() {
        let mut attrs = vec![format!("label={}", quote(e.replication.keyword()))];
        if !g.get(e.src).is_leaf() {
            attrs.push(format!("ltail=cluster_{}", e.src.0));
        }
        if !g.get(e.dst).is_leaf() {
            attrs.push(format!("lhead=cluster_{}", e.dst.0));
        }
        if e.streaming {
            attrs.push("style=dashed".into());
        }
        writeln!(out, "    {} -> {} [{}];", e.src, e.dst, attrs.join(", ")).unwrap();
    }
    out.push_str("}\n");
    out
}

fn write_node(out: &mut String, g: &DFGraph, id: NodeId, depth: usize) {
    let pad = "    ".repeat(depth);
    let n = g.get(id);
    let grid: Vec<String> = n.grid.iter().map(|e| e.to_string()).collect();
    match &n.kind {
        NodeKind::Leaf { kernel } => {
            let label = format!("{}\\n{} [{}]", n.name, kernel.name(), grid.join(", "));
            writeln!(out, "{pad}{id} [shape=box, label={}];", quote(&label)).unwrap();
        }
        NodeKind::Internal { children, .. } => {
            writeln!(out, "{pad}subgraph cluster_{} {{", id.0).unwrap();
            writeln!(
                out,
                "{pad}    label={};",
                quote(&format!("{} [{}]", n.name, grid.join(", ")))
            )
            .unwrap();
            // anchor for edges that start or end at the cluster
            writeln!(out, "{pad}    {id} [shape=point, style=invis];").unwrap();
            for &c in children {
                write_node(out, g, c, depth + 1);
            }
            writeln!(out, "{pad}}}").unwrap();
        }
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\\\""))
}
