//! Runtime values and buffer storage shared by the interpreter and the runtime.

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::ast::{AtomicOp, ScalarType, ValueKind};
use super::ExecError;

/// Identity of a memory object, independent of which address spaces hold
/// copies of it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BufferId(pub u64);

impl fmt::Display for BufferId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "buf#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
    Bool(bool),
    Buf(BufferId),
}

impl Value {
    /// Kind of a scalar value. Buffer references report `None` since their
    /// element type is not carried by the value.
    pub fn scalar_type(&self) -> Option<ScalarType> {
        Some(match self {
            Value::I32(_) => ScalarType::I32,
            Value::I64(_) => ScalarType::I64,
            Value::F32(_) => ScalarType::F32,
            Value::F64(_) => ScalarType::F64,
            Value::Bool(_) => ScalarType::Bool,
            Value::Buf(_) => return None,
        })
    }

    pub fn matches_kind(&self, kind: ValueKind) -> bool {
        match (self, kind) {
            (Value::Buf(_), ValueKind::Buffer(_)) => true,
            (v, ValueKind::Scalar(t)) => v.scalar_type() == Some(t),
            _ => false,
        }
    }

    /// Integer value widened to i64.
    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Value::I32(v) => Some(v as i64),
            Value::I64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Value::Bool(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_buffer(&self) -> Option<BufferId> {
        match *self {
            Value::Buf(b) => Some(b),
            _ => None,
        }
    }

    pub fn zero(ty: ScalarType) -> Value {
        match ty {
            ScalarType::I32 => Value::I32(0),
            ScalarType::I64 => Value::I64(0),
            ScalarType::F32 => Value::F32(0.0),
            ScalarType::F64 => Value::F64(0.0),
            ScalarType::Bool => Value::Bool(false),
        }
    }

    /// Bitwise identity; unlike `==` this treats equal NaN payloads as equal.
    pub fn bit_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::F32(a), Value::F32(b)) => a.to_bits() == b.to_bits(),
            (Value::F64(a), Value::F64(b)) => a.to_bits() == b.to_bits(),
            _ => self == other,
        }
    }

    fn to_bits(self) -> u64 {
        match self {
            Value::I32(v) => v as u32 as u64,
            Value::I64(v) => v as u64,
            Value::F32(v) => v.to_bits() as u64,
            Value::F64(v) => v.to_bits(),
            Value::Bool(b) => b as u64,
            Value::Buf(b) => b.0,
        }
    }

    fn from_bits(ty: ScalarType, bits: u64) -> Value {
        match ty {
            ScalarType::I32 => Value::I32(bits as u32 as i32),
            ScalarType::I64 => Value::I64(bits as i64),
            ScalarType::F32 => Value::F32(f32::from_bits(bits as u32)),
            ScalarType::F64 => Value::F64(f64::from_bits(bits)),
            ScalarType::Bool => Value::Bool(bits != 0),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::I32(v) => write!(f, "{v}"),
            Value::I64(v) => write!(f, "{v}i64"),
            Value::F32(v) => write!(f, "{v:?}"),
            Value::F64(v) => write!(f, "{v:?}f64"),
            Value::Bool(v) => write!(f, "{v}"),
            Value::Buf(b) => write!(f, "{b}"),
        }
    }
}

/// Host-side contents of a buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum BufferData {
    I32(Vec<i32>),
    I64(Vec<i64>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl BufferData {
    pub fn zeroed(elem: ScalarType, len: usize) -> BufferData {
        match elem {
            ScalarType::I32 | ScalarType::Bool => BufferData::I32(vec![0; len]),
            ScalarType::I64 => BufferData::I64(vec![0; len]),
            ScalarType::F32 => BufferData::F32(vec![0.0; len]),
            ScalarType::F64 => BufferData::F64(vec![0.0; len]),
        }
    }

    pub fn elem_type(&self) -> ScalarType {
        match self {
            BufferData::I32(_) => ScalarType::I32,
            BufferData::I64(_) => ScalarType::I64,
            BufferData::F32(_) => ScalarType::F32,
            BufferData::F64(_) => ScalarType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            BufferData::I32(v) => v.len(),
            BufferData::I64(v) => v.len(),
            BufferData::F32(v) => v.len(),
            BufferData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn byte_len(&self) -> u64 {
        self.len() as u64 * self.elem_type().size_bytes() as u64
    }

    pub fn get(&self, i: usize) -> Option<Value> {
        match self {
            BufferData::I32(v) => v.get(i).map(|x| Value::I32(*x)),
            BufferData::I64(v) => v.get(i).map(|x| Value::I64(*x)),
            BufferData::F32(v) => v.get(i).map(|x| Value::F32(*x)),
            BufferData::F64(v) => v.get(i).map(|x| Value::F64(*x)),
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match self {
            BufferData::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match self {
            BufferData::F32(v) => Some(v),
            _ => None,
        }
    }

    /// Decodes little-endian raw bytes.
    pub fn from_le_bytes(elem: ScalarType, bytes: &[u8]) -> Option<BufferData> {
        let size = elem.size_bytes() as usize;
        if !bytes.len().is_multiple_of(size) {
            return None;
        }
        let chunks = bytes.chunks_exact(size);
        Some(match elem {
            ScalarType::I32 => BufferData::I32(chunks.map(|c| i32::from_le_bytes(c.try_into().unwrap())).collect()),
            ScalarType::I64 => BufferData::I64(chunks.map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
            ScalarType::F32 => BufferData::F32(chunks.map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            ScalarType::F64 => BufferData::F64(chunks.map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            ScalarType::Bool => return None,
        })
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            BufferData::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            BufferData::I64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            BufferData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            BufferData::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

/// One copy of a buffer in one address space.
///
/// Elements are kept as atomic 64-bit cells so that instances running on
/// different workers can share a copy without locks; plain loads and stores
/// use relaxed ordering, read-modify-write intrinsics are sequentially
/// consistent.
pub struct Storage {
    elem: ScalarType,
    cells: Box<[AtomicU64]>,
}

impl fmt::Debug for Storage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Storage")
            .field("elem", &self.elem)
            .field("len", &self.cells.len())
            .finish()
    }
}

impl Storage {
    pub fn zeroed(elem: ScalarType, len: usize) -> Storage {
        let zero = Value::zero(elem).to_bits();
        Storage {
            elem,
            cells: (0..len).map(|_| AtomicU64::new(zero)).collect(),
        }
    }

    pub fn from_data(data: &BufferData) -> Storage {
        let elem = data.elem_type();
        let cells = (0..data.len())
            .map(|i| AtomicU64::new(data.get(i).unwrap().to_bits()))
            .collect();
        Storage { elem, cells }
    }

    pub fn elem(&self) -> ScalarType {
        self.elem
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn byte_len(&self) -> u64 {
        self.len() as u64 * self.elem.size_bytes() as u64
    }

    pub fn load(&self, index: usize) -> Option<Value> {
        self.cells
            .get(index)
            .map(|c| Value::from_bits(self.elem, c.load(Ordering::Relaxed)))
    }

    /// Stores `value`; the caller guarantees it has the element type.
    pub fn store(&self, index: usize, value: Value) -> Option<()> {
        self.cells
            .get(index)
            .map(|c| c.store(value.to_bits(), Ordering::Relaxed))
    }

    /// Atomic read-modify-write on an integer element; returns the prior value.
    pub fn atomic(&self, op: AtomicOp, index: usize, operand: Value) -> Option<Value> {
        let cell = self.cells.get(index)?;
        let elem = self.elem;
        let prev = cell
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |bits| {
                let old = Value::from_bits(elem, bits);
                Some(atomic_apply(op, old, operand).to_bits())
            })
            .expect("update closure never fails");
        Some(Value::from_bits(elem, prev))
    }

    pub fn to_data(&self) -> BufferData {
        let mut data = BufferData::zeroed(self.elem, 0);
        match &mut data {
            BufferData::I32(v) => v.extend(self.cells.iter().map(|c| c.load(Ordering::Relaxed) as u32 as i32)),
            BufferData::I64(v) => v.extend(self.cells.iter().map(|c| c.load(Ordering::Relaxed) as i64)),
            BufferData::F32(v) => v.extend(
                self.cells
                    .iter()
                    .map(|c| f32::from_bits(c.load(Ordering::Relaxed) as u32)),
            ),
            BufferData::F64(v) => v.extend(self.cells.iter().map(|c| f64::from_bits(c.load(Ordering::Relaxed)))),
        }
        data
    }

    /// Fresh storage with the same contents.
    pub fn duplicate(&self) -> Storage {
        Storage {
            elem: self.elem,
            cells: self
                .cells
                .iter()
                .map(|c| AtomicU64::new(c.load(Ordering::Relaxed)))
                .collect(),
        }
    }
}

fn atomic_apply(op: AtomicOp, old: Value, operand: Value) -> Value {
    macro_rules! int_op {
        ($a:expr, $b:expr, $ctor:path) => {
            $ctor(match op {
                AtomicOp::Add => $a.wrapping_add($b),
                AtomicOp::Sub => $a.wrapping_sub($b),
                AtomicOp::Exchange => $b,
                AtomicOp::Min => $a.min($b),
                AtomicOp::Max => $a.max($b),
                AtomicOp::And => $a & $b,
                AtomicOp::Or => $a | $b,
                AtomicOp::Xor => $a ^ $b,
            })
        };
    }
    match (old, operand) {
        (Value::I32(a), Value::I32(b)) => int_op!(a, b, Value::I32),
        (Value::I64(a), Value::I64(b)) => int_op!(a, b, Value::I64),
        // rejected by the type checker
        _ => old,
    }
}

/// Resolves buffer identities to storage in the executing device's address
/// space and serves allocation requests from kernels.
pub trait Memory: Sync {
    fn resolve(&self, id: BufferId) -> Result<Arc<Storage>, ExecError>;

    fn malloc(&self, elem: ScalarType, bytes: u64) -> Result<(BufferId, Arc<Storage>), ExecError>;
}

/// Default cap on a single `malloc` request.
pub const DEFAULT_MAX_ALLOC_BYTES: u64 = 256 << 20;

/// Checks a `malloc` request and returns the element count.
pub fn malloc_len(elem: ScalarType, bytes: u64, cap: u64) -> Result<usize, ExecError> {
    if bytes == 0 {
        return Err(ExecError::ZeroAllocation);
    }
    if bytes > cap {
        return Err(ExecError::AllocationTooLarge { bytes, cap });
    }
    let size = elem.size_bytes() as u64;
    if !bytes.is_multiple_of(size) {
        return Err(ExecError::MisalignedAllocation { bytes, elem });
    }
    Ok((bytes / size) as usize)
}

/// A single flat address space; enough to run kernels outside a runtime.
pub struct SimpleMemory {
    buffers: Mutex<HashMap<BufferId, Arc<Storage>>>,
    next: Mutex<u64>,
    max_alloc_bytes: u64,
}

impl Default for SimpleMemory {
    fn default() -> Self {
        SimpleMemory {
            buffers: Mutex::new(HashMap::new()),
            next: Mutex::new(1),
            max_alloc_bytes: DEFAULT_MAX_ALLOC_BYTES,
        }
    }
}

impl SimpleMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_max_alloc(max_alloc_bytes: u64) -> Self {
        SimpleMemory {
            max_alloc_bytes,
            ..Self::default()
        }
    }

    pub fn insert(&self, data: &BufferData) -> BufferId {
        let id = self.fresh_id();
        self.buffers
            .lock()
            .unwrap()
            .insert(id, Arc::new(Storage::from_data(data)));
        id
    }

    pub fn read(&self, id: BufferId) -> Option<BufferData> {
        self.buffers.lock().unwrap().get(&id).map(|s| s.to_data())
    }

    pub fn buffer_count(&self) -> usize {
        self.buffers.lock().unwrap().len()
    }

    fn fresh_id(&self) -> BufferId {
        let mut next = self.next.lock().unwrap();
        let id = BufferId(*next);
        *next += 1;
        id
    }
}

impl Memory for SimpleMemory {
    fn resolve(&self, id: BufferId) -> Result<Arc<Storage>, ExecError> {
        self.buffers
            .lock()
            .unwrap()
            .get(&id)
            .cloned()
            .ok_or(ExecError::UnknownBuffer(id))
    }

    fn malloc(&self, elem: ScalarType, bytes: u64) -> Result<(BufferId, Arc<Storage>), ExecError> {
        let len = malloc_len(elem, bytes, self.max_alloc_bytes)?;
        let id = self.fresh_id();
        let storage = Arc::new(Storage::zeroed(elem, len));
        self.buffers.lock().unwrap().insert(id, storage.clone());
        Ok((id, storage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn storage_round_trips_data() {
        let data = BufferData::F32(vec![1.5, -2.0, f32::MAX]);
        let s = Storage::from_data(&data);
        assert_eq!(s.to_data(), data);
        assert_eq!(s.byte_len(), 12);
    }

    #[test]
    fn atomic_exchange_returns_prior_value() {
        let s = Storage::from_data(&BufferData::I32(vec![3]));
        let old = s.atomic(AtomicOp::Exchange, 0, Value::I32(7)).unwrap();
        assert_eq!(old, Value::I32(3));
        assert_eq!(s.load(0), Some(Value::I32(7)));
    }

    #[test]
    fn atomic_add_wraps() {
        let s = Storage::from_data(&BufferData::I32(vec![i32::MAX]));
        s.atomic(AtomicOp::Add, 0, Value::I32(1)).unwrap();
        assert_eq!(s.load(0), Some(Value::I32(i32::MIN)));
    }

    #[test]
    fn malloc_rejects_zero_and_oversized() {
        let mem = SimpleMemory::with_max_alloc(64);
        assert!(matches!(mem.malloc(ScalarType::F32, 0), Err(ExecError::ZeroAllocation)));
        assert!(matches!(
            mem.malloc(ScalarType::F32, 128),
            Err(ExecError::AllocationTooLarge { .. })
        ));
        let (id, s) = mem.malloc(ScalarType::F32, 16).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(mem.read(id), Some(BufferData::F32(vec![0.0; 4])));
    }

    #[test]
    fn le_bytes_round_trip() {
        let data = BufferData::I64(vec![1, -2, i64::MIN]);
        let bytes = data.to_le_bytes();
        assert_eq!(BufferData::from_le_bytes(ScalarType::I64, &bytes), Some(data));
        assert_eq!(BufferData::from_le_bytes(ScalarType::I32, &[1, 2, 3]), None);
    }
}
