use std::collections::BTreeMap;

use thiserror::Error;

use super::device::{DeviceId, Machine};
use crate::graph::{DFGraph, NodeId};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("override names unknown node `{0}`")]
    UnknownNode(String),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("no device serves the `{hint}` hint of `{node}`")]
    NoDeviceForHint { node: String, hint: &'static str },
}

/// Device assignment of every leaf of a graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Mapping {
    leaves: BTreeMap<NodeId, DeviceId>,
    pub warnings: Vec<String>,
}

impl Mapping {
    pub fn device_of(&self, leaf: NodeId) -> DeviceId {
        self.leaves[&leaf]
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, DeviceId)> + '_ {
        self.leaves.iter().map(|(n, d)| (*n, *d))
    }
}

/// Maps every leaf to a device. `overrides` pairs node names with device
/// names; an override on an internal node applies to its whole subtree.
/// For each leaf the nearest override on the path to the root wins, then
/// the nearest target hint, and leaves with neither run on the host. An
/// override that contradicts a hint produces a warning.
pub fn map_targets(g: &DFGraph, machine: &Machine, overrides: &[(String, String)]) -> Result<Mapping, MappingError> {
    let mut by_node: BTreeMap<NodeId, DeviceId> = BTreeMap::new();
    for (node, dev) in overrides {
        let n = g.find(node).ok_or_else(|| MappingError::UnknownNode(node.clone()))?;
        let d = machine
            .by_name(dev)
            .ok_or_else(|| MappingError::UnknownDevice(dev.clone()))?;
        by_node.insert(n, d.id);
    }
    let mut leaves = BTreeMap::new();
    let mut warnings = Vec::new();
    for leaf in g.leaves() {
        let path: Vec<NodeId> = std::iter::successors(Some(leaf.id), |n| g.parent(*n)).collect();
        let over = path.iter().find_map(|n| by_node.get(n).copied());
        let hinted = path.iter().find_map(|n| g.get(*n).target.map(|h| (*n, h)));
        let hint_dev = match hinted {
            Some((n, h)) => Some(
                machine
                    .for_hint(h)
                    .map(|d| d.id)
                    .ok_or_else(|| MappingError::NoDeviceForHint {
                        node: g.get(n).name.clone(),
                        hint: h.keyword(),
                    })?,
            ),
            None => None,
        };
        let dev = match (over, hint_dev) {
            (Some(o), Some(h)) if o != h => {
                warnings.push(format!(
                    "`{}` is hinted for {} but mapped to {} by override",
                    leaf.name,
                    machine.device(h).name,
                    machine.device(o).name
                ));
                o
            }
            (Some(o), _) => o,
            (None, Some(h)) => h,
            (None, None) => DeviceId::HOST,
        };
        leaves.insert(leaf.id, dev);
    }
    Ok(Mapping { leaves, warnings })
}

/// Every assignment of the given devices to the children of the root, as
/// override lists for [`map_targets`]. There are `devices^children` of them.
pub fn stage_mappings<'a>(g: &'a DFGraph, devices: &'a [&'a str]) -> impl Iterator<Item = Vec<(String, String)>> + 'a {
    let stages: Vec<String> = g.children(g.root()).iter().map(|c| g.get(*c).name.clone()).collect();
    let total = (devices.len() as u64)
        .checked_pow(stages.len() as u32)
        .unwrap_or(u64::MAX);
    (0..total).map(move |mut k| {
        stages
            .iter()
            .map(|s| {
                let d = devices[(k % devices.len() as u64) as usize];
                k /= devices.len() as u64;
                (s.clone(), d.to_string())
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::parse_document;

    const SRC: &str = "
kernel id(x: i32) -> (i32) { return (x); }
graph G {
    internal R(x: i32) -> (i32) {
        leaf A = id grid(1) target = gpu;
        internal I(x: i32) -> (i32) grid(1) target = vector {
            leaf B = id grid(1);
            leaf C = id grid(1) target = cpu;
            bind in x -> B.x; edge B.0 -> C.x; bind out C.0 -> 0;
        }
        leaf D = id grid(1);
        bind in x -> A.x; edge A.0 -> I.x; edge I.0 -> D.x; bind out D.0 -> 0;
    }
}";

    fn names(g: &DFGraph, m: &Mapping, machine: &Machine) -> Vec<(String, String)> {
        m.iter()
            .map(|(n, d)| (g.get(n).name.clone(), machine.device(d).name.clone()))
            .collect()
    }

    #[test]
    fn hints_and_inheritance() {
        let doc = parse_document(SRC).unwrap();
        let g = &doc.graphs()[0];
        let machine = Machine::default();
        let m = map_targets(g, &machine, &[]).unwrap();
        let got = names(g, &m, &machine);
        assert!(got.contains(&("A".into(), "gpu0".into())));
        assert!(got.contains(&("B".into(), "vec0".into())));
        assert!(got.contains(&("C".into(), "host".into())));
        assert!(got.contains(&("D".into(), "host".into())));
        assert!(m.warnings.is_empty());
    }

    #[test]
    fn overrides_win_with_a_warning() {
        let doc = parse_document(SRC).unwrap();
        let g = &doc.graphs()[0];
        let machine = Machine::default();
        let m = map_targets(g, &machine, &[("A".into(), "host".into()), ("I".into(), "gpu0".into())]).unwrap();
        let got = names(g, &m, &machine);
        assert!(got.contains(&("A".into(), "host".into())));
        assert!(got.contains(&("C".into(), "gpu0".into())));
        assert_eq!(m.warnings.len(), 3);
        assert_eq!(
            map_targets(g, &machine, &[("Z".into(), "host".into())]),
            Err(MappingError::UnknownNode("Z".into()))
        );
        assert_eq!(
            map_targets(g, &machine, &[("A".into(), "tpu".into())]),
            Err(MappingError::UnknownDevice("tpu".into()))
        );
        assert!(matches!(
            map_targets(g, &Machine::host_only(), &[]),
            Err(MappingError::NoDeviceForHint { .. })
        ));
    }

    #[test]
    fn stage_mapping_count() {
        let doc = parse_document(SRC).unwrap();
        let g = &doc.graphs()[0];
        let all: Vec<_> = stage_mappings(g, &["host", "gpu0", "vec0"]).collect();
        assert_eq!(all.len(), 27);
        let mut uniq = all.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 27);
    }
}
