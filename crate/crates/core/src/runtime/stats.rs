use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyCount {
    pub count: u64,
    pub bytes: u64,
}

/// Counters collected while running graphs.
///
/// A *demand* is a request for a current copy of a tracked buffer in some
/// address space: one per `in`/`inout` buffer argument of each leaf
/// execution and one per `request_mem`. Each demand is either served by a
/// copy or elided because the space already holds the latest version.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    /// Kernel launches per device. Every execution of a child of the root
    /// counts once for each device its leaves ran on.
    pub launches: BTreeMap<String, u64>,
    /// Leaf barrier groups executed per device.
    pub groups: BTreeMap<String, u64>,
    /// Leaf instances executed.
    pub instances: u64,
    /// Copies by direction, keyed `"from->to"` with device names.
    pub copies: BTreeMap<String, CopyCount>,
    pub demanded: u64,
    pub performed: u64,
    pub elided: u64,
}

impl RunStats {
    pub fn total_launches(&self) -> u64 {
        self.launches.values().sum()
    }

    pub fn copies_between(&self, from: &str, to: &str) -> CopyCount {
        self.copies.get(&format!("{from}->{to}")).copied().unwrap_or_default()
    }

    pub fn total_copies(&self) -> CopyCount {
        self.copies.values().fold(CopyCount::default(), |a, c| CopyCount {
            count: a.count + c.count,
            bytes: a.bytes + c.bytes,
        })
    }

    /// Every demand is accounted for exactly once.
    pub fn is_consistent(&self) -> bool {
        self.elided + self.performed == self.demanded && self.total_copies().count == self.performed
    }

    pub fn record_copy(&mut self, from: &str, to: &str, bytes: u64) {
        let c = self.copies.entry(format!("{from}->{to}")).or_default();
        c.count += 1;
        c.bytes += bytes;
        self.demanded += 1;
        self.performed += 1;
    }

    pub fn record_elided(&mut self) {
        self.demanded += 1;
        self.elided += 1;
    }

    pub fn record_launch(&mut self, device: &str) {
        *self.launches.entry(device.to_string()).or_default() += 1;
    }

    pub fn record_group(&mut self, device: &str, instances: u64) {
        *self.groups.entry(device.to_string()).or_default() += 1;
        self.instances += instances;
    }

    pub fn merge(&mut self, other: &RunStats) {
        for (k, v) in &other.launches {
            *self.launches.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.groups {
            *self.groups.entry(k.clone()).or_default() += v;
        }
        for (k, v) in &other.copies {
            let c = self.copies.entry(k.clone()).or_default();
            c.count += v.count;
            c.bytes += v.bytes;
        }
        self.instances += other.instances;
        self.demanded += other.demanded;
        self.performed += other.performed;
        self.elided += other.elided;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accounting() {
        let mut s = RunStats::default();
        s.record_copy("host", "gpu0", 64);
        s.record_copy("host", "gpu0", 16);
        s.record_elided();
        s.record_launch("gpu0");
        assert!(s.is_consistent());
        assert_eq!(s.copies_between("host", "gpu0"), CopyCount { count: 2, bytes: 80 });
        let mut t = RunStats::default();
        t.merge(&s);
        t.merge(&s);
        assert_eq!(t.demanded, 6);
        assert_eq!(t.total_launches(), 2);
        assert!(t.is_consistent());
    }
}
