//! Static well-formedness checks for documents and graphs.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Serialize, Serializer};

use crate::document::IrDocument;
use crate::graph::{
    grid_relation, BindDirection, DFGraph, DFNode, Extent, GridRelation, NodeId, NodeKind, Replication,
};
use crate::kernel::{self, AccessMode, Expr, Intrinsic, KernelProgram, Routine, Stmt, ValueKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    RootGrid,
    Grid,
    DuplicateName,
    EmptyInternal,
    InternalCode,
    KernelType,
    LeafSignature,
    CrossLevelEdge,
    PortRange,
    KindMismatch,
    BindMode,
    OneToOneGrid,
    Cycle,
    UnfedInput,
    MultiFedInput,
    Arity,
    UnboundOutput,
    AccessMode,
    Streaming,
}

impl Rule {
    pub const ALL: [Rule; 19] = [
        Rule::RootGrid,
        Rule::Grid,
        Rule::DuplicateName,
        Rule::EmptyInternal,
        Rule::InternalCode,
        Rule::KernelType,
        Rule::LeafSignature,
        Rule::CrossLevelEdge,
        Rule::PortRange,
        Rule::KindMismatch,
        Rule::BindMode,
        Rule::OneToOneGrid,
        Rule::Cycle,
        Rule::UnfedInput,
        Rule::MultiFedInput,
        Rule::Arity,
        Rule::UnboundOutput,
        Rule::AccessMode,
        Rule::Streaming,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Rule::RootGrid => "root-grid",
            Rule::Grid => "grid",
            Rule::DuplicateName => "duplicate-name",
            Rule::EmptyInternal => "empty-internal",
            Rule::InternalCode => "internal-code",
            Rule::KernelType => "kernel-type",
            Rule::LeafSignature => "leaf-signature",
            Rule::CrossLevelEdge => "cross-level-edge",
            Rule::PortRange => "port-range",
            Rule::KindMismatch => "kind-mismatch",
            Rule::BindMode => "bind-mode",
            Rule::OneToOneGrid => "one-to-one-grid",
            Rule::Cycle => "cycle",
            Rule::UnfedInput => "unfed-input",
            Rule::MultiFedInput => "multi-fed-input",
            Rule::Arity => "arity",
            Rule::UnboundOutput => "unbound-output",
            Rule::AccessMode => "access-mode",
            Rule::Streaming => "streaming",
        }
    }

    pub fn from_id(id: &str) -> Option<Rule> {
        Rule::ALL.into_iter().find(|r| r.id() == id)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl Serialize for Rule {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub rule: Rule,
    /// Graph the finding is in; empty for document-level kernels.
    pub graph: String,
    pub node: Option<String>,
    /// Index into the graph's edge list.
    pub edge: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}[{}]", self.rule)?;
        if !self.graph.is_empty() {
            write!(f, " {}", self.graph)?;
        }
        if let Some(n) = &self.node {
            write!(f, "/{n}")?;
        }
        if let Some(e) = self.edge {
            write!(f, " edge #{e}")?;
        }
        write!(f, ": {}", self.message)
    }
}

pub fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Error)
}

/// Checks every kernel and graph of a document.
pub fn verify_document(doc: &IrDocument) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut checked = HashSet::new();
    for k in doc.kernels() {
        checked.insert(k.name().to_string());
        check_kernel(k, "", None, &mut out);
    }
    for g in doc.graphs() {
        out.extend(verify_graph_with(g, &mut checked));
    }
    out
}

/// Checks one graph, including the kernels of its leaves.
pub fn verify_graph(g: &DFGraph) -> Vec<Diagnostic> {
    verify_graph_with(g, &mut HashSet::new())
}

fn verify_graph_with(g: &DFGraph, kernels_checked: &mut HashSet<String>) -> Vec<Diagnostic> {
    let mut v = Verifier { g, out: Vec::new() };
    v.nodes(kernels_checked);
    v.edges();
    v.bindings();
    v.feeds();
    v.cycles();
    v.streaming();
    v.out
}

fn check_kernel(k: &KernelProgram, graph: &str, node: Option<&str>, out: &mut Vec<Diagnostic>) {
    let diag = |rule, message| Diagnostic {
        severity: Severity::Error,
        rule,
        graph: graph.to_string(),
        node: node.map(str::to_string),
        edge: None,
        message,
    };
    let warn = |rule, message| Diagnostic {
        severity: Severity::Warning,
        rule,
        graph: graph.to_string(),
        node: node.map(str::to_string),
        edge: None,
        message,
    };
    if let Err(e) = kernel::check(k) {
        out.push(diag(Rule::KernelType, e.to_string()));
        return;
    }
    for (sev, m) in access_mode_violations(k) {
        out.push(match sev {
            Severity::Error => diag(Rule::AccessMode, m),
            Severity::Warning => warn(Rule::AccessMode, m),
        });
    }
}

struct Verifier<'g> {
    g: &'g DFGraph,
    out: Vec<Diagnostic>,
}

impl<'g> Verifier<'g> {
    fn push(&mut self, severity: Severity, rule: Rule, node: Option<NodeId>, edge: Option<usize>, message: String) {
        self.out.push(Diagnostic {
            severity,
            rule,
            graph: self.g.name.clone(),
            node: node.and_then(|n| self.g.node(n)).map(|n| n.name.clone()),
            edge,
            message,
        });
    }

    fn error(&mut self, rule: Rule, node: Option<NodeId>, message: String) {
        self.push(Severity::Error, rule, node, None, message);
    }

    fn edge_error(&mut self, rule: Rule, edge: usize, message: String) {
        self.push(Severity::Error, rule, None, Some(edge), message);
    }

    fn nodes(&mut self, kernels_checked: &mut HashSet<String>) {
        let g = self.g;
        let root = g.root_node();
        if root.grid != [Extent::Const(1)] {
            self.error(
                Rule::RootGrid,
                Some(root.id),
                "the root node must have the one-element grid `grid(1)`".into(),
            );
        }
        let mut names: HashMap<&str, usize> = HashMap::new();
        for n in g.nodes() {
            *names.entry(n.name.as_str()).or_default() += 1;
        }
        for n in g.nodes() {
            if names[n.name.as_str()] > 1 {
                self.error(
                    Rule::DuplicateName,
                    Some(n.id),
                    format!("node name `{}` is not unique", n.name),
                );
            }
            if n.id != root.id {
                self.grid(n);
            }
            match &n.kind {
                NodeKind::Internal { children, stray_code } => {
                    if children.is_empty() {
                        self.error(Rule::EmptyInternal, Some(n.id), "internal node has no children".into());
                    }
                    if !stray_code.is_empty() {
                        self.error(
                            Rule::InternalCode,
                            Some(n.id),
                            format!(
                                "internal node contains {} statement(s); computation belongs in leaf kernels",
                                stray_code.len()
                            ),
                        );
                    }
                }
                NodeKind::Leaf { kernel } => {
                    let (inputs, outputs) = DFNode::ports_of_kernel(kernel);
                    if inputs != n.inputs || outputs != n.outputs {
                        self.error(
                            Rule::LeafSignature,
                            Some(n.id),
                            format!("ports do not match the signature of kernel `{}`", kernel.name()),
                        );
                    }
                    let shared = kernels_checked.contains(kernel.name());
                    if !shared {
                        kernels_checked.insert(kernel.name().to_string());
                        check_kernel(kernel, &g.name, Some(&n.name), &mut self.out);
                    }
                }
            }
        }
    }

    fn grid(&mut self, n: &DFNode) {
        if n.grid.is_empty() || n.grid.len() > 3 {
            self.error(
                Rule::Grid,
                Some(n.id),
                format!("grid has {} dimensions; 1 to 3 are allowed", n.grid.len()),
            );
        }
        let parent = n.parent.and_then(|p| self.g.node(p));
        for e in &n.grid {
            match e {
                Extent::Const(0) => self.error(Rule::Grid, Some(n.id), "grid extent is zero".into()),
                Extent::Const(_) => {}
                Extent::Param(name) => {
                    let port = parent.and_then(|p| p.inputs.iter().find(|port| &port.name == name));
                    if !port.is_some_and(|p| p.kind.is_int_scalar()) {
                        self.error(
                            Rule::Grid,
                            Some(n.id),
                            format!("grid extent `{name}` is not an integer scalar input of the parent"),
                        );
                    }
                }
            }
        }
    }

    fn edges(&mut self) {
        let g = self.g;
        for (i, e) in g.edges().iter().enumerate() {
            let (Some(s), Some(d)) = (g.node(e.src), g.node(e.dst)) else {
                self.edge_error(Rule::PortRange, i, "edge refers to a missing node".into());
                continue;
            };
            if s.parent.is_none() || s.parent != d.parent {
                self.edge_error(
                    Rule::CrossLevelEdge,
                    i,
                    format!(
                        "edge `{}` -> `{}` crosses hierarchy levels; route it through bindings",
                        s.name, d.name
                    ),
                );
            }
            let sk = s.outputs.get(e.src_port);
            let dk = d.inputs.get(e.dst_port).map(|p| p.kind);
            if sk.is_none() {
                self.edge_error(
                    Rule::Arity,
                    i,
                    format!(
                        "`{}` produces {} output field(s) but an edge reads field {}",
                        s.name,
                        s.outputs.len(),
                        e.src_port
                    ),
                );
            }
            if dk.is_none() {
                self.edge_error(
                    Rule::PortRange,
                    i,
                    format!("`{}` has {} input(s), no port {}", d.name, d.inputs.len(), e.dst_port),
                );
            }
            if let (Some(sk), Some(dk)) = (sk, dk) {
                if *sk != dk {
                    self.edge_error(
                        Rule::KindMismatch,
                        i,
                        format!(
                            "`{}.{}` is {sk} but `{}.{}` is {dk}",
                            s.name, e.src_port, d.name, e.dst_port
                        ),
                    );
                }
            }
            if e.replication == Replication::OneToOne {
                match grid_relation(&s.grid, &d.grid) {
                    GridRelation::Equal => {}
                    GridRelation::Incompatible(m) => self.edge_error(
                        Rule::OneToOneGrid,
                        i,
                        format!(
                            "one-to-one edge `{}` -> `{}` between different grids: {m}",
                            s.name, d.name
                        ),
                    ),
                    GridRelation::Unknown(m) => self.push(
                        Severity::Warning,
                        Rule::OneToOneGrid,
                        None,
                        Some(i),
                        format!("one-to-one edge `{}` -> `{}`: {m}", s.name, d.name),
                    ),
                }
            }
        }
    }

    fn bindings(&mut self) {
        let g = self.g;
        for b in g.bindings() {
            let Some(c) = g.node(b.child) else {
                self.error(Rule::PortRange, None, "binding refers to a missing node".into());
                continue;
            };
            let Some(p) = c.parent.and_then(|p| g.node(p)) else {
                self.error(
                    Rule::CrossLevelEdge,
                    Some(c.id),
                    "the root node cannot be bound to a parent".into(),
                );
                continue;
            };
            match b.direction {
                BindDirection::Input => {
                    let (pp, cp) = (p.inputs.get(b.parent_port), c.inputs.get(b.child_port));
                    let (Some(pp), Some(cp)) = (pp, cp) else {
                        self.error(
                            Rule::PortRange,
                            Some(c.id),
                            format!(
                                "input binding {} -> {} is out of range ({} and {} inputs)",
                                b.parent_port,
                                b.child_port,
                                p.inputs.len(),
                                c.inputs.len()
                            ),
                        );
                        continue;
                    };
                    if pp.kind != cp.kind {
                        self.error(
                            Rule::KindMismatch,
                            Some(c.id),
                            format!("binding of `{}` ({}) to `{}` ({})", pp.name, pp.kind, cp.name, cp.kind),
                        );
                    } else if let (Some(pm), Some(cm)) = (pp.mode, cp.mode) {
                        if (cm.reads() && !pm.reads()) || (cm.writes() && !pm.writes()) {
                            self.error(
                                Rule::BindMode,
                                Some(c.id),
                                format!(
                                    "`{}` is `{cm}` but is bound to `{}` which is only `{pm}`",
                                    cp.name, pp.name
                                ),
                            );
                        }
                    }
                }
                BindDirection::Output => {
                    let Some(ck) = c.outputs.get(b.child_port) else {
                        self.error(
                            Rule::Arity,
                            Some(c.id),
                            format!(
                                "`{}` produces {} output field(s) but a binding reads field {}",
                                c.name,
                                c.outputs.len(),
                                b.child_port
                            ),
                        );
                        continue;
                    };
                    let Some(pk) = p.outputs.get(b.parent_port) else {
                        self.error(
                            Rule::PortRange,
                            Some(c.id),
                            format!(
                                "`{}` has {} output(s), no port {}",
                                p.name,
                                p.outputs.len(),
                                b.parent_port
                            ),
                        );
                        continue;
                    };
                    if pk != ck {
                        self.error(
                            Rule::KindMismatch,
                            Some(c.id),
                            format!(
                                "output {} ({ck}) bound to parent output {} ({pk})",
                                b.child_port, b.parent_port
                            ),
                        );
                    }
                }
            }
        }
    }

    /// Every input port of a non-root node is fed exactly once; every
    /// output port of an internal node is bound exactly once.
    fn feeds(&mut self) {
        let g = self.g;
        let mut fed: BTreeMap<(NodeId, usize), usize> = BTreeMap::new();
        for e in g.edges() {
            *fed.entry((e.dst, e.dst_port)).or_default() += 1;
        }
        let mut bound_out: BTreeMap<(NodeId, usize), usize> = BTreeMap::new();
        for b in g.bindings() {
            match b.direction {
                BindDirection::Input => *fed.entry((b.child, b.child_port)).or_default() += 1,
                BindDirection::Output => {
                    if let Some(p) = g.parent(b.child) {
                        *bound_out.entry((p, b.parent_port)).or_default() += 1;
                    }
                }
            }
        }
        for n in g.nodes() {
            if n.parent.is_some() {
                for (i, port) in n.inputs.iter().enumerate() {
                    match fed.get(&(n.id, i)).copied().unwrap_or(0) {
                        0 => self.error(
                            Rule::UnfedInput,
                            Some(n.id),
                            format!("input `{}` is not fed", port.name),
                        ),
                        1 => {}
                        k => self.error(
                            Rule::MultiFedInput,
                            Some(n.id),
                            format!("input `{}` is fed {k} times", port.name),
                        ),
                    }
                }
            }
            if !n.is_leaf() {
                for i in 0..n.outputs.len() {
                    match bound_out.get(&(n.id, i)).copied().unwrap_or(0) {
                        0 => self.error(
                            Rule::UnboundOutput,
                            Some(n.id),
                            format!("output {i} is not produced by any child"),
                        ),
                        1 => {}
                        k => self.error(Rule::Arity, Some(n.id), format!("output {i} is bound {k} times")),
                    }
                }
            }
        }
    }

    fn cycles(&mut self) {
        let g = self.g;
        for n in g.nodes().filter(|n| !n.is_leaf()) {
            if let Err(stuck) = g.topo_order(n.id) {
                let names: Vec<&str> = stuck.iter().map(|s| g.get(*s).name.as_str()).collect();
                self.error(
                    Rule::Cycle,
                    Some(n.id),
                    format!("edges among {} form a cycle", names.join(", ")),
                );
            }
        }
    }

    fn streaming(&mut self) {
        let g = self.g;
        let root = g.root();
        for (i, e) in g.edges().iter().enumerate() {
            if e.streaming && g.parent(e.src) != Some(root) {
                self.edge_error(
                    Rule::Streaming,
                    i,
                    "streaming edges are only allowed between children of the root".into(),
                );
            }
        }
        for b in g.bindings() {
            if b.streaming && g.parent(b.child) != Some(root) {
                self.error(
                    Rule::Streaming,
                    Some(b.child),
                    "streaming bindings are only allowed on children of the root".into(),
                );
            }
        }
        for &c in g.children(root) {
            let name = &g.get(c).name;
            let stream_in = g.edges_into(c).any(|e| e.streaming)
                || g.bindings_of(c)
                    .any(|b| b.direction == BindDirection::Input && b.streaming);
            let outs: Vec<bool> = g
                .edges_from(c)
                .map(|e| e.streaming)
                .chain(
                    g.bindings_of(c)
                        .filter(|b| b.direction == BindDirection::Output)
                        .map(|b| b.streaming),
                )
                .collect();
            if stream_in && outs.iter().any(|s| !s) {
                self.error(
                    Rule::Streaming,
                    Some(c),
                    format!("`{name}` consumes a stream, so all of its outputs must be streams"),
                );
            }
            if !stream_in && outs.iter().any(|s| *s) {
                self.error(
                    Rule::Streaming,
                    Some(c),
                    format!("`{name}` produces a stream but consumes none"),
                );
            }
        }
        let mut per_port: BTreeMap<(BindDirection, usize), HashSet<bool>> = BTreeMap::new();
        for b in g.bindings().iter().filter(|b| g.parent(b.child) == Some(root)) {
            per_port
                .entry((b.direction, b.parent_port))
                .or_default()
                .insert(b.streaming);
        }
        for ((dir, port), kinds) in per_port {
            if kinds.len() > 1 {
                let side = if dir == BindDirection::Input { "input" } else { "output" };
                self.error(
                    Rule::Streaming,
                    Some(root),
                    format!("root {side} {port} has both streaming and non-streaming bindings"),
                );
            }
        }
    }
}

/// Buffer accesses that contradict declared parameter modes. Writes through
/// `in` buffers are errors. Reads through `out` buffers only get a warning,
/// since a kernel may read back what it wrote itself.
pub fn access_mode_violations(k: &KernelProgram) -> Vec<(Severity, String)> {
    let mut out = Vec::new();
    for r in k.routines() {
        let origins = buffer_origins(k, r);
        let mode_of = |var: &str| -> Vec<(String, AccessMode)> {
            origins
                .get(var)
                .into_iter()
                .flatten()
                .filter_map(|p| r.param(p).and_then(|(_, p)| p.mode.map(|m| (p.name.clone(), m))))
                .collect()
        };
        let mut visit = |buffer: &Expr, need_read: bool, need_write: bool, what: &str| {
            let Expr::Var(v) = buffer else { return };
            for (p, m) in mode_of(v) {
                if need_write && !m.writes() {
                    out.push((
                        Severity::Error,
                        format!("`{}`: {what} through `{p}`, which is declared `{m}`", r.name),
                    ));
                } else if need_read && !m.reads() {
                    out.push((
                        Severity::Warning,
                        format!("`{}`: {what} from `{p}`, which is declared `{m}`", r.name),
                    ));
                }
            }
        };
        kernel::walk_stmts(&r.body, &mut |s| {
            if let Stmt::Store { buffer, .. } = s {
                visit(buffer, false, true, "store");
            }
            for e in s.exprs() {
                e.walk(&mut |e| match e {
                    Expr::Load { buffer, .. } => visit(buffer, true, false, "load"),
                    Expr::Intrinsic(Intrinsic::Atomic { buffer, .. }) => visit(buffer, true, true, "atomic update"),
                    _ => {}
                });
            }
            if let Stmt::Call { routine, args, .. } = s {
                let Some(target) = k.aux_routine(routine) else { return };
                for (a, p) in args.iter().zip(&target.params) {
                    if let (Expr::Var(_), Some(want)) = (a, p.mode) {
                        visit(
                            a,
                            want.reads(),
                            want.writes(),
                            &format!("passing to `{routine}` as `{}`", p.name),
                        );
                    }
                }
            }
        });
    }
    out
}

/// For each buffer-typed variable of `r`, the parameters it may refer to.
pub(crate) fn buffer_origins(k: &KernelProgram, r: &Routine) -> HashMap<String, HashSet<String>> {
    let mut origins: HashMap<String, HashSet<String>> = HashMap::new();
    for p in r.params.iter().filter(|p| p.kind.is_buffer()) {
        origins.entry(p.name.clone()).or_default().insert(p.name.clone());
    }
    loop {
        let mut changed = false;
        let mut updates: Vec<(String, HashSet<String>)> = Vec::new();
        kernel::walk_stmts(&r.body, &mut |s| match s {
            Stmt::Let {
                name,
                value: Expr::Var(v),
                ..
            }
            | Stmt::Assign {
                name,
                value: Expr::Var(v),
                ..
            } => {
                if let Some(src) = origins.get(v) {
                    updates.push((name.clone(), src.clone()));
                }
            }
            Stmt::Call {
                dests, routine, args, ..
            } => {
                let Some(target) = k.aux_routine(routine) else { return };
                let mut all = HashSet::new();
                for a in args {
                    if let Expr::Var(v) = a {
                        all.extend(origins.get(v).cloned().unwrap_or_default());
                    }
                }
                for (d, kind) in dests.iter().zip(&target.outputs) {
                    if matches!(kind, ValueKind::Buffer(_)) {
                        updates.push((d.clone(), all.clone()));
                    }
                }
            }
            _ => {}
        });
        for (dst, src) in updates {
            let set = origins.entry(dst).or_default();
            let before = set.len();
            set.extend(src);
            changed |= set.len() != before;
        }
        if !changed {
            return origins;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_document;

    fn rules(src: &str) -> Vec<Rule> {
        let doc = parse_document(src).unwrap_or_else(|e| panic!("{e}"));
        verify_document(&doc)
            .into_iter()
            .filter(|d| d.severity == Severity::Error)
            .map(|d| d.rule)
            .collect()
    }

    const ID: &str = "kernel id(x: i32) -> (i32) { return (x); }\n";

    #[test]
    fn clean_graph_has_no_diagnostics() {
        let src = format!(
            "{ID}graph G {{ internal R(x: i32) -> (i32) grid(1) {{
                leaf A = id grid(1); leaf B = id grid(1);
                edge A.0 -> B.x all_to_all;
                bind in x -> A.x; bind out B.0 -> 0;
            }} }}"
        );
        assert_eq!(rules(&src), vec![]);
    }

    #[test]
    fn unfed_and_multifed() {
        let src = format!(
            "{ID}graph G {{ internal R(x: i32) -> (i32) {{
                leaf A = id grid(1); leaf B = id grid(1);
                bind in x -> B.x; edge A.0 -> B.x; bind out B.0 -> 0;
            }} }}"
        );
        let r = rules(&src);
        assert!(r.contains(&Rule::UnfedInput), "{r:?}");
        assert!(r.contains(&Rule::MultiFedInput), "{r:?}");
    }

    #[test]
    fn access_mode_through_alias() {
        let k = crate::text::parse_kernel("kernel k(in a: buf<i32>) { let b = a; b[0] = 1; }").unwrap();
        let v = access_mode_violations(&k);
        assert_eq!(v.len(), 1, "{v:?}");
    }

    #[test]
    fn aux_argument_needs_enough_access() {
        let k =
            crate::text::parse_kernel("kernel k(in a: buf<i32>) { aux w(out b: buf<i32>) { b[0] = 1; } call w(a); }")
                .unwrap();
        assert_eq!(access_mode_violations(&k).len(), 1);
    }

    #[test]
    fn reading_an_out_buffer_is_a_warning() {
        let k = crate::text::parse_kernel("kernel k(out a: buf<i32>) { a[0] = 1; a[1] = a[0]; }").unwrap();
        let v = access_mode_violations(&k);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].0, Severity::Warning);
    }

    #[test]
    fn rule_ids_round_trip() {
        for r in Rule::ALL {
            assert_eq!(Rule::from_id(r.id()), Some(r));
        }
    }
}
