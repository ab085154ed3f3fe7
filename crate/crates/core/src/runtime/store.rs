use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use super::device::SpaceId;
use crate::kernel::{malloc_len, AccessMode, BufferData, BufferId, ExecError, Memory, ScalarType, Storage};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum MemError {
    #[error("unknown buffer {0}")]
    UnknownBuffer(BufferId),
    #[error("{0} is already tracked")]
    AlreadyTracked(BufferId),
    #[error("{0} is not tracked")]
    NotTracked(BufferId),
    #[error("{id} holds {actual} bytes, not {given}")]
    SizeMismatch { id: BufferId, given: u64, actual: u64 },
    #[error("host copy of {0} is stale; request it first")]
    StaleHostCopy(BufferId),
    #[error("{id}: expected {expected} elements of {elem}, got {got}")]
    ShapeMismatch {
        id: BufferId,
        elem: ScalarType,
        expected: usize,
        got: usize,
    },
}

/// Tracker state of one buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TrackerEntry {
    pub size: u64,
    /// Address spaces holding the latest version.
    pub residency: BTreeSet<SpaceId>,
    /// Address space of the latest write; always resident.
    pub owner: SpaceId,
}

struct Entry {
    elem: ScalarType,
    len: usize,
    /// Untracked buffers have exactly one copy, reachable from any space.
    copies: HashMap<SpaceId, Arc<Storage>>,
    tracked: Option<TrackerEntry>,
}

impl Entry {
    fn bytes(&self) -> u64 {
        self.len as u64 * self.elem.size_bytes() as u64
    }

    fn only_copy(&self) -> Arc<Storage> {
        self.copies.values().next().unwrap().clone()
    }
}

/// Result of asking for a current copy of a buffer in some space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Demand {
    /// The buffer is untracked, or the demand does not need its contents.
    None,
    Elided,
    Copied {
        from: SpaceId,
        to: SpaceId,
        bytes: u64,
    },
}

#[derive(Default)]
struct Inner {
    entries: HashMap<BufferId, Entry>,
    next: u64,
}

/// All buffers of a runtime and the memory tracker over them.
///
/// Copies are whole-buffer. Buffers allocated by kernels are untracked and
/// live in a single copy.
pub struct BufferStore {
    inner: Mutex<Inner>,
    max_alloc_bytes: u64,
}

impl BufferStore {
    pub fn new(max_alloc_bytes: u64) -> Self {
        BufferStore {
            inner: Mutex::new(Inner {
                entries: HashMap::new(),
                next: 1,
            }),
            max_alloc_bytes,
        }
    }

    fn insert(&self, storage: Storage, space: SpaceId) -> BufferId {
        let mut inner = self.inner.lock().unwrap();
        let id = BufferId(inner.next);
        inner.next += 1;
        inner.entries.insert(
            id,
            Entry {
                elem: storage.elem(),
                len: storage.len(),
                copies: HashMap::from([(space, Arc::new(storage))]),
                tracked: None,
            },
        );
        id
    }

    /// A new untracked host buffer holding `data`.
    pub fn alloc_host(&self, data: &BufferData) -> BufferId {
        self.insert(Storage::from_data(data), SpaceId::HOST)
    }

    pub fn free(&self, id: BufferId) -> Result<(), MemError> {
        self.inner
            .lock()
            .unwrap()
            .entries
            .remove(&id)
            .map(|_| ())
            .ok_or(MemError::UnknownBuffer(id))
    }

    pub fn live(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn elem(&self, id: BufferId) -> Result<(ScalarType, usize), MemError> {
        let inner = self.inner.lock().unwrap();
        let e = inner.entries.get(&id).ok_or(MemError::UnknownBuffer(id))?;
        Ok((e.elem, e.len))
    }

    /// Starts tracking `id`; its current copy becomes the only resident one.
    pub fn track(&self, id: BufferId, size: u64) -> Result<(), MemError> {
        let mut inner = self.inner.lock().unwrap();
        let e = inner.entries.get_mut(&id).ok_or(MemError::UnknownBuffer(id))?;
        if e.tracked.is_some() {
            return Err(MemError::AlreadyTracked(id));
        }
        if size != e.bytes() {
            return Err(MemError::SizeMismatch {
                id,
                given: size,
                actual: e.bytes(),
            });
        }
        let home = *e.copies.keys().next().unwrap();
        e.tracked = Some(TrackerEntry {
            size,
            residency: BTreeSet::from([home]),
            owner: home,
        });
        Ok(())
    }

    /// Stops tracking `id`. Only the latest copy is kept.
    pub fn untrack(&self, id: BufferId) -> Result<(), MemError> {
        let mut inner = self.inner.lock().unwrap();
        let e = inner.entries.get_mut(&id).ok_or(MemError::UnknownBuffer(id))?;
        let t = e.tracked.take().ok_or(MemError::NotTracked(id))?;
        e.copies.retain(|s, _| *s == t.owner);
        Ok(())
    }

    pub fn tracker_entry(&self, id: BufferId) -> Option<TrackerEntry> {
        self.inner.lock().unwrap().entries.get(&id)?.tracked.clone()
    }

    /// Makes `space` hold the latest version of `id` if `mode` reads it,
    /// and makes sure a copy exists there if `mode` only writes it.
    pub fn demand(&self, id: BufferId, mode: AccessMode, space: SpaceId) -> Result<Demand, MemError> {
        let mut inner = self.inner.lock().unwrap();
        let e = inner.entries.get_mut(&id).ok_or(MemError::UnknownBuffer(id))?;
        let Some(t) = &mut e.tracked else {
            return Ok(Demand::None);
        };
        if !mode.reads() {
            if !e.copies.contains_key(&space) {
                e.copies.insert(space, Arc::new(Storage::zeroed(e.elem, e.len)));
            }
            return Ok(Demand::None);
        }
        if t.residency.contains(&space) {
            return Ok(Demand::Elided);
        }
        let from = t.owner;
        let fresh = e.copies[&from].duplicate();
        e.copies.insert(space, Arc::new(fresh));
        t.residency.insert(space);
        Ok(Demand::Copied {
            from,
            to: space,
            bytes: t.size,
        })
    }

    /// Records that `space` wrote `id`: it becomes the only resident space.
    pub fn wrote(&self, id: BufferId, space: SpaceId) -> Result<(), MemError> {
        let mut inner = self.inner.lock().unwrap();
        let e = inner.entries.get_mut(&id).ok_or(MemError::UnknownBuffer(id))?;
        if let Some(t) = &mut e.tracked {
            t.residency = BTreeSet::from([space]);
            t.owner = space;
            e.copies.retain(|s, _| *s == space);
        }
        Ok(())
    }

    /// Host contents of `id`. Tracked buffers must be resident on the host.
    pub fn read_host(&self, id: BufferId) -> Result<BufferData, MemError> {
        let inner = self.inner.lock().unwrap();
        let e = inner.entries.get(&id).ok_or(MemError::UnknownBuffer(id))?;
        let storage = match &e.tracked {
            Some(t) if !t.residency.contains(&SpaceId::HOST) => return Err(MemError::StaleHostCopy(id)),
            Some(_) => e.copies[&SpaceId::HOST].clone(),
            None => e.only_copy(),
        };
        Ok(storage.to_data())
    }

    /// Overwrites `id` from the host; the host becomes the owner.
    pub fn write_host(&self, id: BufferId, data: &BufferData) -> Result<(), MemError> {
        let mut inner = self.inner.lock().unwrap();
        let e = inner.entries.get_mut(&id).ok_or(MemError::UnknownBuffer(id))?;
        if data.elem_type() != e.elem || data.len() != e.len {
            return Err(MemError::ShapeMismatch {
                id,
                elem: e.elem,
                expected: e.len,
                got: data.len(),
            });
        }
        let fresh = Arc::new(Storage::from_data(data));
        match &mut e.tracked {
            Some(t) => {
                t.residency = BTreeSet::from([SpaceId::HOST]);
                t.owner = SpaceId::HOST;
                e.copies = HashMap::from([(SpaceId::HOST, fresh)]);
            }
            None => {
                let home = *e.copies.keys().next().unwrap();
                e.copies.insert(home, fresh);
            }
        }
        Ok(())
    }

    fn resolve(&self, id: BufferId, space: SpaceId) -> Result<Arc<Storage>, ExecError> {
        let inner = self.inner.lock().unwrap();
        let e = inner.entries.get(&id).ok_or(ExecError::UnknownBuffer(id))?;
        match &e.tracked {
            Some(_) => e.copies.get(&space).cloned().ok_or(ExecError::UnknownBuffer(id)),
            None => Ok(e.only_copy()),
        }
    }
}

/// The view of the store from a kernel running in one address space.
/// Allocations are recorded in `scope` so the executor can free them.
pub struct SpaceMemory<'a> {
    pub store: &'a BufferStore,
    pub space: SpaceId,
    pub scope: &'a Mutex<Vec<BufferId>>,
}

impl Memory for SpaceMemory<'_> {
    fn resolve(&self, id: BufferId) -> Result<Arc<Storage>, ExecError> {
        self.store.resolve(id, self.space)
    }

    fn malloc(&self, elem: ScalarType, bytes: u64) -> Result<(BufferId, Arc<Storage>), ExecError> {
        let len = malloc_len(elem, bytes, self.store.max_alloc_bytes)?;
        let storage = Storage::zeroed(elem, len);
        let id = self.store.insert(storage, self.space);
        self.scope.lock().unwrap().push(id);
        Ok((id, self.store.resolve(id, self.space)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GPU: SpaceId = SpaceId(1);

    #[test]
    fn copies_follow_the_latest_write() {
        let s = BufferStore::new(1 << 20);
        let a = s.alloc_host(&BufferData::I32(vec![1, 2, 3, 4]));
        assert_eq!(s.demand(a, AccessMode::In, GPU).unwrap(), Demand::None);
        s.track(a, 16).unwrap();
        assert_eq!(
            s.demand(a, AccessMode::In, GPU).unwrap(),
            Demand::Copied {
                from: SpaceId::HOST,
                to: GPU,
                bytes: 16
            }
        );
        assert_eq!(s.demand(a, AccessMode::InOut, GPU).unwrap(), Demand::Elided);
        let mem = SpaceMemory {
            store: &s,
            space: GPU,
            scope: &Mutex::new(Vec::new()),
        };
        mem.resolve(a).unwrap().store(0, crate::kernel::Value::I32(9));
        s.wrote(a, GPU).unwrap();
        assert_eq!(s.read_host(a), Err(MemError::StaleHostCopy(a)));
        assert!(matches!(
            s.demand(a, AccessMode::In, SpaceId::HOST).unwrap(),
            Demand::Copied { .. }
        ));
        assert_eq!(s.read_host(a).unwrap(), BufferData::I32(vec![9, 2, 3, 4]));
        assert_eq!(s.demand(a, AccessMode::In, SpaceId::HOST).unwrap(), Demand::Elided);
    }

    #[test]
    fn tracking_errors() {
        let s = BufferStore::new(1 << 20);
        let a = s.alloc_host(&BufferData::F32(vec![0.0; 3]));
        assert!(matches!(s.track(a, 4), Err(MemError::SizeMismatch { .. })));
        assert_eq!(s.untrack(a), Err(MemError::NotTracked(a)));
        s.track(a, 12).unwrap();
        assert_eq!(s.track(a, 12), Err(MemError::AlreadyTracked(a)));
        s.untrack(a).unwrap();
        assert_eq!(s.untrack(BufferId(99)), Err(MemError::UnknownBuffer(BufferId(99))));
    }

    #[test]
    fn out_only_allocates_without_copying() {
        let s = BufferStore::new(1 << 20);
        let a = s.alloc_host(&BufferData::I32(vec![5; 4]));
        s.track(a, 16).unwrap();
        assert_eq!(s.demand(a, AccessMode::Out, GPU).unwrap(), Demand::None);
        assert_eq!(s.tracker_entry(a).unwrap().residency, BTreeSet::from([SpaceId::HOST]));
    }
}
