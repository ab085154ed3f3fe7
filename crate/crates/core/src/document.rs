//! A translation unit: kernels plus the graphs that use them.

use std::sync::Arc;

use crate::graph::{DFGraph, NodeKind};
use crate::kernel::KernelProgram;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IrDocument {
    kernels: Vec<Arc<KernelProgram>>,
    graphs: Vec<DFGraph>,
}

impl IrDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn kernels(&self) -> &[Arc<KernelProgram>] {
        &self.kernels
    }

    pub fn graphs(&self) -> &[DFGraph] {
        &self.graphs
    }

    pub fn graphs_mut(&mut self) -> &mut [DFGraph] {
        &mut self.graphs
    }

    pub fn kernel(&self, name: &str) -> Option<&Arc<KernelProgram>> {
        self.kernels.iter().find(|k| k.name() == name)
    }

    pub fn graph(&self, name: &str) -> Option<&DFGraph> {
        self.graphs.iter().find(|g| g.name == name)
    }

    pub fn graph_mut(&mut self, name: &str) -> Option<&mut DFGraph> {
        self.graphs.iter_mut().find(|g| g.name == name)
    }

    /// Adds a kernel, replacing any kernel of the same name.
    pub fn add_kernel(&mut self, kernel: Arc<KernelProgram>) {
        match self.kernels.iter_mut().find(|k| k.name() == kernel.name()) {
            Some(slot) => *slot = kernel,
            None => self.kernels.push(kernel),
        }
    }

    /// Adds a graph, replacing any graph of the same name.
    pub fn add_graph(&mut self, graph: DFGraph) {
        match self.graphs.iter_mut().find(|g| g.name == graph.name) {
            Some(slot) => *slot = graph,
            None => self.graphs.push(graph),
        }
    }

    /// The graph named `name`, or the only graph when `name` is `None`.
    pub fn select_graph(&self, name: Option<&str>) -> Option<&DFGraph> {
        match name {
            Some(n) => self.graph(n),
            None if self.graphs.len() == 1 => self.graphs.first(),
            None => None,
        }
    }

    /// Registers every kernel used by leaves of `graph` that the document
    /// does not know yet. A leaf whose kernel shares its name with a
    /// different registered kernel gets a renamed copy so names stay unique.
    pub fn sync_kernels(&mut self, graph: &mut DFGraph) {
        let ids: Vec<_> = graph.leaves().map(|n| n.id).collect();
        for id in ids {
            let node = graph.node_mut(id).unwrap();
            let NodeKind::Leaf { kernel } = &mut node.kind else {
                continue;
            };
            match self.kernel(kernel.name()) {
                Some(k) if **k == **kernel => *kernel = k.clone(),
                Some(_) => {
                    let base = kernel.name().to_string();
                    let name = (2..)
                        .map(|i| format!("{base}_{i}"))
                        .find(|n| self.kernel(n).is_none_or(|k| **k == rename(kernel, n)))
                        .unwrap();
                    let renamed = Arc::new(rename(kernel, &name));
                    if self.kernel(&name).is_none() {
                        self.kernels.push(renamed.clone());
                    }
                    *kernel = self.kernel(&name).unwrap().clone();
                }
                None => self.kernels.push(kernel.clone()),
            }
        }
    }

    pub fn remove_kernels(&mut self, names: &[String]) {
        self.kernels.retain(|k| !names.iter().any(|n| n == k.name()));
    }

    /// Drops kernels that no leaf of any graph uses.
    pub fn prune_kernels(&mut self) {
        let used: Vec<String> = self
            .graphs
            .iter()
            .flat_map(|g| g.leaves().map(|n| n.kernel().unwrap().name().to_string()))
            .collect();
        self.kernels.retain(|k| used.iter().any(|u| u == k.name()));
    }
}

fn rename(kernel: &KernelProgram, name: &str) -> KernelProgram {
    let mut k = kernel.clone();
    k.entry.name = name.to_string();
    k
}
